//! Scratch: can the denoiser fit a single fixed noise level at all?

use geodist::autodiff::{adam_step, AdamParams, AdamState, Tensor2};
use geodist::denoiser::{DenoiserConfig, DenoiserModel};
use geodist::geometry::{normalize_mesh, sample_surface, shapes};
use geodist::seeding::{self, Purpose};
use geodist::training::training_loss;
use rand::Rng;
use rand_distr::StandardNormal;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3e-3);
    let sigma_fixed: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.3);
    let channels: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(64);

    let mesh = shapes::icosphere(4);
    let (normed, _) = normalize_mesh(&mesh, 200_000, 0).unwrap();
    let data = sample_surface(&normed, 1 << 16, 1).unwrap();

    let dcfg = DenoiserConfig {
        channels,
        n_blocks: 4,
        d_in: 3,
        fourier_bands: 8,
        sigma_data: 1.0,
    };
    let mut model = DenoiserModel::<f32>::init(dcfg, 3).unwrap();
    let mut adam = AdamState::new(
        model.param_count(),
        AdamParams {
            lr,
            beta2: 0.99,
            ..AdamParams::default()
        },
    );
    let mut rng = seeding::rng(5, Purpose::TrainingNoise, 0);
    let batch = 1024;
    for step in 0..steps {
        let mut xb = Vec::with_capacity(batch * 3);
        for _ in 0..batch {
            let i = rng.random_range(0..data.len());
            xb.extend(data.row(i).iter().map(|&v| v as f32));
        }
        let x = Tensor2::from_vec(batch, 3, xb).unwrap();
        let sigma = vec![sigma_fixed as f32; batch];
        let noise = Tensor2::from_fn(batch, 3, |_, _| rng.sample::<f64, _>(StandardNormal) as f32);
        let (loss, grads) = training_loss(&model, &x, &sigma, &noise, 512).unwrap();
        adam_step(&mut adam, model.params_mut(), &grads).unwrap();
        model.renormalize_weights();
        if step % (steps / 20).max(1) == 0 || step + 1 == steps {
            println!(
                "step {step:>5}  loss {loss:.4}  gains {:.3}/{:.3}/{:.3}",
                model.segment("emb_gain").unwrap()[0],
                model.segment("final_emb_gain").unwrap()[0],
                model.segment("final_out_gain").unwrap()[0]
            );
        }
    }
}
