//! Train a small conditional diffusion model to translate T1 volumes into
//! FA volumes, then compare its imputations against the blank baseline.
//!
//! Run with: `cargo run --release --example translate_modalities`
//! (takes a few minutes on CPU)

use neuroimpute::diffusion::{
    evaluate_translation, evaluate_translation_with, scaled_linear_schedule, train_ddpm,
    DdpmTrainConfig, DenoiserSpec,
};
use neuroimpute::manifest::Diagnosis;
use neuroimpute::phantom::{generate_subject, PhantomSpec};
use neuroimpute::rng::mix_seed;
use neuroimpute::volume::Volume3D;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn paired_volumes(spec: &PhantomSpec, n: usize, salt: u64) -> Vec<(Volume3D, Volume3D)> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(salt, i as u64));
            let dx = Diagnosis::ALL[i % 3];
            let (t1, fa, _) = generate_subject(spec, dx, &mut rng).unwrap();
            (t1, fa)
        })
        .collect()
}

fn main() -> neuroimpute::Result<()> {
    let phantom = PhantomSpec::desk(16, 11);
    let train = paired_volumes(&phantom, 32, 100);
    let test = paired_volumes(&phantom, 6, 200);

    // Desk-scale denoiser: the paper-scale widths divided by 8.
    let denoiser = DenoiserSpec::with_width_scale(8);
    let schedule = scaled_linear_schedule(100, 2e-3, 0.12)?;
    let cfg = DdpmTrainConfig { epochs: 40, learning_rate: 8e-4, batch_size: 8, seed: 7 };

    println!("training on {} pairs ({} epochs)...", train.len(), cfg.epochs);
    let (ckpt, stats) = train_ddpm::<f32>(&train, &cfg, &denoiser, &schedule)?;
    println!(
        "noise-prediction loss: {:.4} (first epoch) -> {:.4} (last)",
        stats.epoch_losses[0],
        stats.epoch_losses.last().unwrap()
    );

    println!("sampling {} held-out subjects...", test.len());
    let ddpm = evaluate_translation(&ckpt, &test, 99)?;
    let blank = evaluate_translation_with(|t1, _| Volume3D::zeros(t1.dims()), &test)?;

    println!("\n              mse      l1      ssim3d   psnr");
    println!("  ddpm     {:7.5}  {:6.4}  {:7.4}  {:5.2}", ddpm.mse, ddpm.l1, ddpm.ssim3d, ddpm.psnr_db);
    println!("  blank    {:7.5}  {:6.4}  {:7.4}  {:5.2}", blank.mse, blank.l1, blank.ssim3d, blank.psnr_db);
    println!(
        "\ndiffusion beats blank on mse: {}, on ssim: {}",
        ddpm.mse < blank.mse,
        ddpm.ssim3d > blank.ssim3d
    );
    Ok(())
}
