//! The operations behind the CLI subcommands.
//!
//! Each command is an ordinary library function so tests can drive the whole
//! pipeline without spawning processes. File outputs carry a provenance line
//! (tool version + hash of the resolved settings).

use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::baseline_vf::{sample_vf, train_vf};
use crate::checkpoint::{self, LoadedModel};
use crate::config::{hash_of, RunConfig};
use crate::denoiser::DenoiserModel;
use crate::error::{GeodistError, Result};
use crate::geometry::io::{self, Provenance};
use crate::geometry::{load_mesh, normalize_mesh, sample_surface, Mesh, NormTransform, PointSet};
use crate::metrics::{self, compression_ratio_for_params};
use crate::sampler::{self, InitKind, NoiseSchedule, Solver, Trajectory};
use crate::training::{self, TrainReport, TrainSink};

fn require_diffusion(path: &Path) -> Result<(DenoiserModel<f32>, NormTransform)> {
    match checkpoint::load_model(path)? {
        LoadedModel::Diffusion(m, t) => Ok((m, t)),
        LoadedModel::VectorField(..) => Err(GeodistError::Checkpoint(format!(
            "{} holds a vector-field model; use the vf-* commands",
            path.display()
        ))),
    }
}

fn write_points(path: &Path, points: &PointSet, prov: &Provenance) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("xyz") | Some("txt") => io::write_xyz(path, points, prov),
        _ => io::write_ply(path, points, None, prov),
    }
}

fn export_trajectory(
    dir: &Path,
    traj: &Trajectory,
    transform: &NormTransform,
    prov: &Provenance,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| GeodistError::io(dir, e))?;
    for frame in &traj.frames {
        let mut pts = frame.points.clone();
        transform.denormalize_points(&mut pts);
        let path = dir.join(format!("frame_{:03}.ply", frame.index));
        io::write_ply(&path, &pts, None, prov)?;
    }
    Ok(())
}

/// Outputs of a training run.
#[derive(Debug)]
pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub report_csv: PathBuf,
    pub transform_json: PathBuf,
    pub report: TrainReport,
}

/// Load the mesh named by the config, normalize it, train, and write the
/// checkpoint plus reports under `out_dir`.
pub fn cmd_train(config: &RunConfig, out_dir: &Path) -> Result<TrainOutputs> {
    config.validate()?;
    let mesh_path = config
        .mesh
        .path
        .as_ref()
        .ok_or_else(|| GeodistError::Config("mesh.path is required for train".into()))?;
    let mesh = load_mesh(mesh_path)?;
    if mesh.dropped_faces > 0 {
        eprintln!(
            "warning: dropped {} degenerate face(s) from {}",
            mesh.dropped_faces,
            mesh_path.display()
        );
    }
    let (normalized, transform) =
        normalize_mesh(&mesh, config.mesh.n_norm_samples, config.mesh.seed)?;

    std::fs::create_dir_all(out_dir).map_err(|e| GeodistError::io(out_dir, e))?;
    let prov = Provenance::new(config.hash());

    let transform_json = out_dir.join("normalization.json");
    #[derive(Serialize)]
    struct TransformFile<'a> {
        provenance: String,
        shift: [f64; 3],
        scale: f64,
        mesh: &'a Path,
    }
    let tf = serde_json::to_string_pretty(&TransformFile {
        provenance: format!("geodist {} config={}", prov.version, prov.config_hash),
        shift: transform.shift,
        scale: transform.scale,
        mesh: mesh_path,
    })?;
    std::fs::write(&transform_json, tf).map_err(|e| GeodistError::io(&transform_json, e))?;

    let sink = TrainSink {
        dir: out_dir.to_path_buf(),
        transform,
    };
    let (model, report) = training::train(&normalized, config.denoiser, &config.training, Some(&sink))?;

    let ckpt = sink.latest_path();
    checkpoint::save_denoiser(&ckpt, &model, transform)?;
    let report_csv = out_dir.join("train_report.csv");
    report.write_csv(&report_csv, &prov)?;
    Ok(TrainOutputs {
        checkpoint: ckpt,
        report_csv,
        transform_json,
        report,
    })
}

/// Settings for `cmd_sample`, hashed into output provenance.
#[derive(Debug, Clone, Serialize)]
pub struct SampleArgs {
    pub n: usize,
    pub steps: usize,
    pub solver: String,
    pub init: String,
    pub seed: u64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    /// Snapshot indices exported as trajectory frames.
    pub record: Vec<usize>,
}

impl Default for SampleArgs {
    fn default() -> Self {
        SampleArgs {
            n: 100_000,
            steps: 64,
            solver: "heun".into(),
            init: "gaussian".into(),
            seed: 0,
            sigma_min: 0.002,
            sigma_max: 80.0,
            rho: 7.0,
            record: Vec::new(),
        }
    }
}

/// Generate points from a trained model and write them (denormalized back to
/// the original mesh coordinates).
pub fn cmd_sample(
    ckpt_path: &Path,
    args: &SampleArgs,
    out: &Path,
    record_dir: Option<&Path>,
) -> Result<()> {
    let (model, transform) = require_diffusion(ckpt_path)?;
    let solver: Solver = args.solver.parse::<crate::config::SolverKind>()?.into();
    let init: InitKind = args.init.parse::<crate::config::InitKindCfg>()?.into();
    let schedule = NoiseSchedule::karras(args.steps, args.sigma_min, args.sigma_max, args.rho)?;
    let frozen = model.frozen();
    let noise = sampler::initial_noise(args.n, model.config.d_in, init, args.seed)?;
    let (points, traj) = sampler::sample_forward(&frozen, &schedule, solver, &noise, &args.record)?;

    let prov = Provenance::new(hash_of(args));
    let mut out_points = points;
    transform.denormalize_points(&mut out_points);
    write_points(out, &out_points, &prov)?;
    if let Some(dir) = record_dir {
        export_trajectory(dir, &traj, &transform, &prov)?;
    }
    Ok(())
}

/// Settings for `cmd_invert`.
#[derive(Debug, Clone, Serialize)]
pub struct InvertArgs {
    pub steps: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub record: Vec<usize>,
}

impl Default for InvertArgs {
    fn default() -> Self {
        InvertArgs {
            steps: 64,
            sigma_min: 0.002,
            sigma_max: 80.0,
            rho: 7.0,
            record: Vec::new(),
        }
    }
}

/// Map surface points back to noise space. Writes the noise point set plus a
/// per-point correspondence CSV (input order preserved).
pub fn cmd_invert(
    ckpt_path: &Path,
    points_path: &Path,
    args: &InvertArgs,
    out: &Path,
    csv_out: Option<&Path>,
    record_dir: Option<&Path>,
) -> Result<()> {
    let (model, transform) = require_diffusion(ckpt_path)?;
    let raw = io::read_points(points_path)?;
    if raw.channels() != model.config.d_in {
        return Err(GeodistError::ShapeMismatch {
            op: "invert",
            details: format!(
                "points have {} channels, model expects {}",
                raw.channels(),
                model.config.d_in
            ),
        });
    }
    let mut pts = raw.clone();
    transform.normalize_points(&mut pts);
    let schedule =
        NoiseSchedule::karras_inverse(args.steps, args.sigma_min, args.sigma_max, args.rho)?;
    let frozen = model.frozen();
    let (noise, traj) = sampler::sample_inverse(&frozen, &pts, &schedule, &args.record)?;

    let prov = Provenance::new(hash_of(args));
    // noise lives in noise space; no denormalization
    write_points(out, &noise, &prov)?;
    if let Some(csv) = csv_out {
        let mut f = std::fs::File::create(csv).map_err(|e| GeodistError::io(csv, e))?;
        writeln!(f, "# geodist {} config={}", prov.version, prov.config_hash)
            .map_err(|e| GeodistError::io(csv, e))?;
        writeln!(f, "index,x,y,z,noise_x,noise_y,noise_z").map_err(|e| GeodistError::io(csv, e))?;
        for i in 0..raw.len() {
            let p = raw.pos(i);
            let n = noise.pos(i);
            writeln!(
                f,
                "{i},{},{},{},{},{},{}",
                p[0], p[1], p[2], n[0], n[1], n[2]
            )
            .map_err(|e| GeodistError::io(csv, e))?;
        }
    }
    if let Some(dir) = record_dir {
        // inversion trajectories stay in normalized space
        export_trajectory(dir, &traj, &NormTransform::identity(), &prov)?;
    }
    Ok(())
}

/// Settings for `cmd_eval`.
#[derive(Debug, Clone, Serialize)]
pub struct EvalArgs {
    pub n: usize,
    pub steps: usize,
    pub seed: u64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
}

impl Default for EvalArgs {
    fn default() -> Self {
        EvalArgs {
            n: 1_000_000,
            steps: 64,
            seed: 0,
            sigma_min: 0.002,
            sigma_max: 80.0,
            rho: 7.0,
        }
    }
}

/// Evaluate a trained model against its mesh: Chamfer distance, per-point
/// surface-error percentiles, parameter count, and compression ratios.
/// Distances are in normalized units.
pub fn cmd_eval(
    ckpt_path: &Path,
    mesh_path: &Path,
    args: &EvalArgs,
    out_csv: &Path,
    error_ply: Option<&Path>,
) -> Result<metrics::EvalReport> {
    let (model, transform) = require_diffusion(ckpt_path)?;
    let mesh = load_mesh(mesh_path)?;
    let normalized = mesh.transformed(transform.shift, transform.scale);
    let frozen = model.frozen();
    let report = metrics::eval_model(
        &frozen,
        model.param_count(),
        &normalized,
        args.n,
        args.steps,
        (args.sigma_min, args.sigma_max, args.rho),
        InitKind::Gaussian,
        args.seed,
    )?;

    let prov = Provenance::new(hash_of(args));
    let comp_1e6 = compression_ratio_for_params(report.param_count, 1_000_000);
    let comp_1e9 = compression_ratio_for_params(report.param_count, 1_000_000_000);
    let mut f = std::fs::File::create(out_csv).map_err(|e| GeodistError::io(out_csv, e))?;
    writeln!(f, "# geodist {} config={}", prov.version, prov.config_hash)
        .map_err(|e| GeodistError::io(out_csv, e))?;
    writeln!(f, "metric,value").map_err(|e| GeodistError::io(out_csv, e))?;
    let rows = [
        ("n_points", report.n_points as f64),
        ("n_steps", report.n_steps as f64),
        ("chamfer", report.chamfer),
        ("chamfer_squared", report.chamfer_squared),
        ("error_p50", report.error_p50),
        ("error_p90", report.error_p90),
        ("error_p99", report.error_p99),
        ("error_max", report.error_max),
        ("param_count", report.param_count as f64),
        ("compression_ratio_1e6_points", comp_1e6),
        ("compression_ratio_1e9_points", comp_1e9),
    ];
    for (k, v) in rows {
        writeln!(f, "{k},{v}").map_err(|e| GeodistError::io(out_csv, e))?;
    }

    if let Some(ply) = error_ply {
        let mut pts = report.generated.clone();
        transform.denormalize_points(&mut pts);
        io::write_ply(ply, &pts, Some(("error", &report.errors)), &prov)?;
    }
    Ok(report)
}

/// Train the vector-field baseline and checkpoint it.
pub fn cmd_vf_train(config: &RunConfig, out_dir: &Path) -> Result<PathBuf> {
    config.validate()?;
    let mesh_path = config
        .mesh
        .path
        .as_ref()
        .ok_or_else(|| GeodistError::Config("mesh.path is required for vf-train".into()))?;
    let mesh = load_mesh(mesh_path)?;
    let (normalized, transform) =
        normalize_mesh(&mesh, config.mesh.n_norm_samples, config.mesh.seed)?;
    std::fs::create_dir_all(out_dir).map_err(|e| GeodistError::io(out_dir, e))?;
    let (model, losses) = train_vf(&normalized, &config.baseline)?;
    let ckpt = out_dir.join("vf_checkpoint.ckpt");
    checkpoint::save_vf(&ckpt, &model, transform)?;
    let prov = Provenance::new(config.hash());
    let csv = out_dir.join("vf_losses.csv");
    let mut f = std::fs::File::create(&csv).map_err(|e| GeodistError::io(&csv, e))?;
    writeln!(f, "# geodist {} config={}", prov.version, prov.config_hash)
        .map_err(|e| GeodistError::io(&csv, e))?;
    writeln!(f, "epoch,loss").map_err(|e| GeodistError::io(&csv, e))?;
    for (i, l) in losses.iter().enumerate() {
        writeln!(f, "{i},{l}").map_err(|e| GeodistError::io(&csv, e))?;
    }
    Ok(ckpt)
}

/// Sample the vector-field baseline.
pub fn cmd_vf_sample(
    ckpt_path: &Path,
    n: usize,
    seed: u64,
    applications: usize,
    out: &Path,
) -> Result<()> {
    let (model, transform) = match checkpoint::load_model(ckpt_path)? {
        LoadedModel::VectorField(m, t) => (m, t),
        LoadedModel::Diffusion(..) => {
            return Err(GeodistError::Checkpoint(format!(
                "{} holds a diffusion model; use `sample`",
                ckpt_path.display()
            )))
        }
    };
    let mut pts = sample_vf(&model, n, seed, applications)?;
    transform.denormalize_points(&mut pts);
    #[derive(Serialize)]
    struct VfSampleArgs {
        n: usize,
        seed: u64,
        applications: usize,
    }
    let prov = Provenance::new(hash_of(&VfSampleArgs {
        n,
        seed,
        applications,
    }));
    write_points(out, &pts, &prov)
}

/// Settings for `cmd_roundtrip`.
#[derive(Debug, Clone, Serialize)]
pub struct RoundtripArgs {
    pub steps: Vec<usize>,
    pub n: usize,
    pub seed: u64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
}

impl Default for RoundtripArgs {
    fn default() -> Self {
        RoundtripArgs {
            steps: vec![4, 8, 16, 64],
            n: 10_000,
            seed: 0,
            sigma_min: 0.002,
            sigma_max: 80.0,
            rho: 7.0,
        }
    }
}

/// Round-trip MSE (invert then forward) over a list of step counts.
/// Points come from a file or are sampled fresh from a mesh; MSE is in
/// normalized units.
pub fn cmd_roundtrip(
    ckpt_path: &Path,
    points_path: Option<&Path>,
    mesh_path: Option<&Path>,
    args: &RoundtripArgs,
    out_csv: &Path,
) -> Result<Vec<(usize, f64)>> {
    let (model, transform) = require_diffusion(ckpt_path)?;
    let pts = match (points_path, mesh_path) {
        (Some(p), _) => {
            let mut pts = io::read_points(p)?;
            transform.normalize_points(&mut pts);
            pts
        }
        (None, Some(m)) => {
            let mesh = load_mesh(m)?.transformed(transform.shift, transform.scale);
            sample_surface(&mesh, args.n, args.seed)?
        }
        (None, None) => {
            return Err(GeodistError::Config(
                "roundtrip needs --points or --mesh".into(),
            ))
        }
    };
    if pts.is_empty() {
        return Err(GeodistError::EmptyPointSet);
    }
    let frozen = model.frozen();
    let mut results = Vec::with_capacity(args.steps.len());
    for &steps in &args.steps {
        let mse = sampler::roundtrip_mse(
            &frozen,
            &pts,
            steps,
            args.sigma_min,
            args.sigma_max,
            args.rho,
        )?;
        results.push((steps, mse));
    }
    let prov = Provenance::new(hash_of(args));
    let mut f = std::fs::File::create(out_csv).map_err(|e| GeodistError::io(out_csv, e))?;
    writeln!(f, "# geodist {} config={}", prov.version, prov.config_hash)
        .map_err(|e| GeodistError::io(out_csv, e))?;
    writeln!(f, "steps,mse").map_err(|e| GeodistError::io(out_csv, e))?;
    for (s, m) in &results {
        writeln!(f, "{s},{m}").map_err(|e| GeodistError::io(out_csv, e))?;
    }
    Ok(results)
}

/// Exit code for an error, per the CLI contract:
/// 1 = configuration, 2 = i/o or malformed data, 3 = divergence, 4 = other.
pub fn exit_code(err: &GeodistError) -> i32 {
    match err {
        GeodistError::Config(_) => 1,
        GeodistError::Io { .. }
        | GeodistError::ObjParse { .. }
        | GeodistError::PointParse { .. }
        | GeodistError::PlyParse(_)
        | GeodistError::Json(_)
        | GeodistError::Checkpoint(_)
        | GeodistError::EmptyMesh
        | GeodistError::DegenerateMesh => 2,
        GeodistError::Divergence { .. } => 3,
        _ => 4,
    }
}

/// Helper shared by tests and the acceptance suite: write a mesh to an OBJ
/// file under `dir` and return its path.
pub fn write_mesh_obj(dir: &Path, name: &str, mesh: &Mesh) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, crate::geometry::shapes::to_obj(mesh))
        .map_err(|e| GeodistError::io(&path, e))?;
    Ok(path)
}
