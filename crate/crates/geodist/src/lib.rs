//! geodist — represent a 3D surface as a *geometry distribution*.
//!
//! A single mesh is encoded by training a small denoiser network on
//! ever-fresh samples of its surface. Solving the probability-flow ODE of
//! that denoiser maps Gaussian noise to surface points (forward sampling),
//! and the same trajectory run backwards maps surface points to noise
//! (inverse sampling). Because the model captures the *distribution* of
//! surface points rather than any fixed point cloud, arbitrarily many points
//! can be drawn at any resolution.
//!
//! The crate is organized around one currency type, [`geometry::PointSet`],
//! that every stage consumes and produces:
//!
//! * [`geometry`] — OBJ ingestion, normalization, area-weighted surface
//!   sampling, point-to-mesh distances, PLY/XYZ export.
//! * [`autodiff`] — dense-matrix substrate with reverse-mode
//!   differentiation and Adam.
//! * [`denoiser`] — the magnitude-preserving denoiser network.
//! * [`training`] — denoising score-matching loop with per-epoch resampling.
//! * [`sampler`] — noise schedules, Euler/Heun forward sampling, inversion.
//! * [`metrics`] — exact KD-tree nearest neighbor, Chamfer distance,
//!   evaluation reports.
//! * [`baseline_vf`] — the vector-field baseline for comparison.
//! * [`checkpoint`] / [`config`] / [`commands`] — persistent formats and the
//!   operations behind the `geodist` CLI.

pub mod autodiff;
pub mod baseline_vf;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod denoiser;
pub mod geometry;
pub mod metrics;
pub mod sampler;
pub mod training;
pub mod error;
pub mod seeding;

pub use error::{GeodistError, Result};
