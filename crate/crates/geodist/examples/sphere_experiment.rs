//! Scratch experiment: desk-scale sphere training diagnostics.

use geodist::denoiser::DenoiserConfig;
use geodist::geometry::{normalize_mesh, sample_surface, shapes};
use geodist::metrics::chamfer;
use geodist::sampler::{sample_forward_heun, InitKind, NoiseSchedule};
use geodist::training::{train, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let channels: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(64);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1e-2);

    let mesh = shapes::icosphere(5);
    println!("icosphere(5): {} faces", mesh.faces().len());
    let t0 = std::time::Instant::now();
    let (normed, tf) = normalize_mesh(&mesh, 1_000_000, 0).unwrap();
    println!("normalize: {:?} shift {:?} scale {:.4}", t0.elapsed(), tf.shift, tf.scale);

    // two-draw chamfer floor at 1e5 and 1e6
    for n in [100_000usize, 1_000_000] {
        let a = sample_surface(&normed, n, 11).unwrap();
        let b = sample_surface(&normed, n, 22).unwrap();
        let floor = chamfer(&a, &b).unwrap();
        println!("two-draw floor at {n}: {floor:.6}");
    }

    let dcfg = DenoiserConfig {
        channels,
        n_blocks: 4,
        d_in: 3,
        fourier_bands: 8,
        sigma_data: 1.0,
    };
    let tcfg = TrainConfig {
        epochs,
        lr,
        eval_every: 5,
        eval_points: 16384,
        eval_steps: 32,
        ..Default::default()
    };
    println!("training C={channels} blocks=4 epochs={epochs} lr={lr}");
    let t1 = std::time::Instant::now();
    let (model, report) = train(&normed, dcfg, &tcfg, None).unwrap();
    println!("training took {:?}", t1.elapsed());
    for r in &report.epochs {
        println!(
            "epoch {:>3}  loss {:.5}  chamfer {}  {:.1}s",
            r.epoch,
            r.mean_loss,
            r.chamfer.map(|c| format!("{c:.5}")).unwrap_or_else(|| "-".into()),
            r.seconds
        );
    }

    // final chamfer at the acceptance operating point
    let t2 = std::time::Instant::now();
    let schedule = NoiseSchedule::karras(32, 0.002, 80.0, 7.0).unwrap();
    let frozen = model.frozen();
    let (gen, _) = sample_forward_heun(&frozen, 100_000, &schedule, InitKind::Gaussian, 77, &[]).unwrap();
    let reference = sample_surface(&normed, 100_000, 88).unwrap();
    println!("sampling 1e5 heun-32 took {:?}", t2.elapsed());
    println!("final chamfer(1e5): {:.6}", chamfer(&reference, &gen).unwrap());
}
