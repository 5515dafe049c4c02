//! Scratch diagnostics for sphere training quality.

use geodist::autodiff::Tensor2;
use geodist::denoiser::DenoiserConfig;
use geodist::geometry::{normalize_mesh, sample_surface, shapes};
use geodist::metrics::chamfer;
use geodist::sampler::{sample_forward_heun, InitKind, NoiseSchedule};
use geodist::seeding::{self, Purpose};
use geodist::training::{train, TrainConfig};
use rand::Rng;
use rand_distr::StandardNormal;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-2);

    let mesh = shapes::icosphere(4);
    let (normed, _) = normalize_mesh(&mesh, 500_000, 0).unwrap();

    let dcfg = DenoiserConfig {
        channels: 64,
        n_blocks: 4,
        d_in: 3,
        fourier_bands: 8,
        sigma_data: 1.0,
    };
    let tcfg = TrainConfig {
        epochs,
        lr,
        ..Default::default()
    };
    let (model, report) = train(&normed, dcfg, &tcfg, None).unwrap();
    println!(
        "losses: first {:.4} last {:.4}",
        report.epochs.first().map(|r| r.mean_loss).unwrap_or(0.0),
        report.epochs.last().map(|r| r.mean_loss).unwrap_or(0.0)
    );

    // learned gains
    for g in ["emb_gain", "final_emb_gain", "final_out_gain"] {
        println!("{g} = {}", model.segment(g).unwrap()[0]);
    }

    // denoising accuracy vs sigma: relative radial error of D(x + s n, s)
    let surf = sample_surface(&normed, 4096, 33).unwrap();
    let mut rng = seeding::rng(44, Purpose::Eval, 0);
    for sigma in [0.05, 0.1, 0.3, 1.0, 2.0, 5.0, 10.0, 20.0, 40.0, 80.0] {
        let n = surf.len();
        let mut y = Tensor2::<f32>::zeros(n, 3);
        for i in 0..n {
            for j in 0..3 {
                let z: f64 = rng.sample(StandardNormal);
                y.set(i, j, (surf.row(i)[j] + sigma * z) as f32);
            }
        }
        let d = model.denoise(&y, &vec![sigma as f32; n]).unwrap();
        // distance from prediction to the sphere of radius sqrt(3)
        let target_r = 3.0f64.sqrt();
        let mut err = 0.0;
        let mut dnorm = 0.0;
        for i in 0..n {
            let r = (0..3)
                .map(|j| (d.get(i, j) as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            err += (r - target_r).abs();
            dnorm += r;
        }
        println!(
            "sigma {sigma:>6.2}: mean |r - sqrt3| = {:.4}, mean |D| = {:.4}",
            err / n as f64,
            dnorm / n as f64
        );
    }

    // chamfer when the ODE starts at lower sigma_max
    let frozen = model.frozen();
    for smax in [2.0, 5.0, 20.0, 80.0] {
        let schedule = NoiseSchedule::karras(32, 0.002, smax, 7.0).unwrap();
        let (gen, _) =
            sample_forward_heun(&frozen, 20_000, &schedule, InitKind::Gaussian, 7, &[]).unwrap();
        let reference = sample_surface(&normed, 20_000, 8).unwrap();
        println!(
            "sigma_max {smax:>5.1}: chamfer = {:.5}",
            chamfer(&reference, &gen).unwrap()
        );
    }
}
