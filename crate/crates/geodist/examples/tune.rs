//! Scratch: end-state quality diagnostics for training schedule tuning.

use geodist::denoiser::DenoiserConfig;
use geodist::geometry::{normalize_mesh, point_mesh_distance, sample_surface, shapes};
use geodist::metrics::chamfer;
use geodist::sampler::{sample_forward, initial_noise, InitKind, NoiseSchedule, Solver};
use geodist::training::{train, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(150);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-2);
    let decay: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.995);
    let channels: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(64);

    let mesh = shapes::icosphere(5);
    let (normed, _) = normalize_mesh(&mesh, 1_000_000, 0).unwrap();

    let dcfg = DenoiserConfig {
        channels,
        n_blocks: 4,
        d_in: 3,
        fourier_bands: 8,
        sigma_data: 1.0,
    };
    let iters: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(64);
    let tcfg = TrainConfig {
        epochs,
        lr,
        lr_decay: decay,
        iters_per_epoch: iters,
        ..Default::default()
    };
    let t0 = std::time::Instant::now();
    let (model, report) = train(&normed, dcfg, &tcfg, None).unwrap();
    println!(
        "trained {epochs} epochs (lr {lr} decay {decay}) in {:?}; last loss {:.4}",
        t0.elapsed(),
        report.epochs.last().map(|r| r.mean_loss).unwrap_or(0.0)
    );

    checkpoint_path().map(|p| {
        geodist::checkpoint::save_denoiser(&p, &model, geodist::geometry::NormTransform::identity())
            .unwrap();
        println!("saved checkpoint to {}", p.display());
    });

    let frozen = model.frozen();
    let reference = sample_surface(&normed, 100_000, 88).unwrap();

    for (solver, steps) in [(Solver::Heun, 32), (Solver::Euler, 64)] {
        let schedule = NoiseSchedule::karras(steps, 0.002, 80.0, 7.0).unwrap();
        let noise = initial_noise(100_000, 3, InitKind::Gaussian, 77).unwrap();
        let (gen, _) = sample_forward(&frozen, &schedule, solver, &noise, &[]).unwrap();
        let ch = chamfer(&reference, &gen).unwrap();
        // directional breakdown
        let tree_gen = geodist::metrics::KdTree3::build(&gen).unwrap();
        let tree_ref = geodist::metrics::KdTree3::build(&reference).unwrap();
        let ref_to_gen: f64 = (0..reference.len())
            .map(|i| tree_gen.nearest(reference.pos(i)).1)
            .sum::<f64>()
            / reference.len() as f64;
        let gen_to_ref: f64 = (0..gen.len())
            .map(|i| tree_ref.nearest(gen.pos(i)).1)
            .sum::<f64>()
            / gen.len() as f64;
        let mut errs = point_mesh_distance(&gen, &normed).unwrap();
        let outliers_01 = errs.iter().filter(|&&e| e > 0.1).count();
        let outlier_mass: f64 = errs.iter().filter(|&&e| e > 0.1).sum::<f64>() / gen.len() as f64;
        errs.sort_by(f64::total_cmp);
        let pct = |q: f64| errs[((errs.len() - 1) as f64 * q) as usize];
        println!(
            "{solver:?}-{steps:>3}: chamfer {ch:.5} (ref->gen {ref_to_gen:.5}, gen->ref {gen_to_ref:.5})"
        );
        println!(
            "   surf-err p50 {:.5} p90 {:.5} p99 {:.5} max {:.3}; outliers>0.1: {} (mass {:.6})",
            pct(0.5),
            pct(0.9),
            pct(0.99),
            errs.last().unwrap(),
            outliers_01,
            outlier_mass
        );
    }

    // floor for comparison
    let a = sample_surface(&normed, 100_000, 1).unwrap();
    let b = sample_surface(&normed, 100_000, 2).unwrap();
    println!("floor(1e5): {:.5}", chamfer(&a, &b).unwrap());
}

fn checkpoint_path() -> Option<std::path::PathBuf> {
    std::env::var("TUNE_CKPT").ok().map(Into::into)
}
