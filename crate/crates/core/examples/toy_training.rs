//! Trains the toy network on synthetic data and compares it with the untrained
//! network and the anchor-only baseline.
//!
//! cargo run --release -p cropforge-core --example toy_training

use std::time::Instant;

use cropforge_core::eval::{evaluate_with, AnchorOnlyPredictor, EvalSample, ModelPredictor};
use cropforge_core::model::{Architecture, CropSettings, HeadConfig};
use cropforge_core::synth::generate_synthetic;
use cropforge_core::train::{train_with_progress, TrainOptions, TrainingSample};
use cropforge_core::unet::UNetConfig;

fn main() -> cropforge_core::Result<()> {
    let size = 64;
    let arch = Architecture {
        unet: UNetConfig { depth: 3, base_channels: 8, input_channels: 3, seed: 0 },
        head: HeadConfig::default(),
    };
    let settings = CropSettings { target_side: size, ..Default::default() };
    let train_set: Vec<TrainingSample> = generate_synthetic(200, size, 1)?.into_iter().map(Into::into).collect();
    let test_set: Vec<EvalSample> = generate_synthetic(50, size, 2)?
        .into_iter()
        .map(|s| EvalSample { id: s.id, image: s.image, gt_crop: s.gt_crop, gt_saliency: Some(s.gt_saliency) })
        .collect();

    let untrained = arch.build()?;
    let mut params = untrained.clone();
    let opts = TrainOptions { settings, shuffle_seed: 1, ..Default::default() };
    let start = Instant::now();
    train_with_progress(&arch, &mut params, &train_set, &opts, |e| {
        println!(
            "stage {} epoch {}: Ls={:.3} Lr={:.4} total={:.3} ({:.0}s)",
            e.stage,
            e.epoch,
            e.mean_saliency_loss,
            e.mean_offset_loss,
            e.mean_total,
            start.elapsed().as_secs_f64()
        );
    })?;

    let before = evaluate_with(&ModelPredictor { arch, params: &untrained, settings }, &test_set)?;
    let after = evaluate_with(&ModelPredictor { arch, params: &params, settings }, &test_set)?;
    let anchor = evaluate_with(&AnchorOnlyPredictor { arch, params: &params, settings }, &test_set)?;
    println!("untrained   iou={:.4} bde={:.4}", before.mean_iou, before.mean_bde);
    println!("anchor-only iou={:.4} bde={:.4}", anchor.mean_iou, anchor.mean_bde);
    println!("trained     iou={:.4} bde={:.4}", after.mean_iou, after.mean_bde);
    Ok(())
}
