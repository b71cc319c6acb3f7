//! Acceptance suite: one PASS/FAIL line per criterion and a summary line.
//!
//! Runs as a plain binary (`harness = false`) so the report is always printed:
//! `cargo test -p cropforge-core --test acceptance`. Set
//! `CROPFORGE_ACCEPTANCE_STRICT=1` to exit non-zero when any criterion fails.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cropforge_core::checkpoint;
use cropforge_core::crop::{anchor_region, compute_moments, AnchorParams};
use cropforge_core::dataset::{load_dataset, write_synthetic};
use cropforge_core::eval::{evaluate_with, AnchorOnlyPredictor, EvalSample, ModelPredictor};
use cropforge_core::gradcheck::{run_gradcheck, GradcheckOptions};
use cropforge_core::imaging::Image;
use cropforge_core::metrics::{bde, iou};
use cropforge_core::model::{predict_crop, Architecture, CropSettings, HeadConfig, PassCounts};
use cropforge_core::offsets::{decode_rect, decode_unclamped, encode_offsets, OffsetCoefficients};
use cropforge_core::synth::generate_synthetic;
use cropforge_core::train::{train, EpochLog, TrainOptions, TrainingSample};
use cropforge_core::unet::UNetConfig;
use cropforge_core::{Rect, SaliencyMap};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

type Criterion = fn() -> Outcome;

fn gradient_fidelity() -> Outcome {
    let opts = GradcheckOptions { trials: 10, eps: 1e-5, tolerance: 1e-4, seed: 0, mutate_anchor: false };
    let start = Instant::now();
    let report = match run_gradcheck(&opts) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let secs = start.elapsed().as_secs_f64();
    let worst = report.rows.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).unwrap();
    let ops: Vec<&str> = report.rows.iter().map(|r| r.op).collect();
    let covered = ["soft_binarize", "anchor_region", "conv2d", "conv_transpose2d", "maxpool2d", "upsample_nearest"]
        .iter()
        .chain(&["concat_channels", "linear", "sigmoid", "relu", "roi_pool", "bce_with_logits"])
        .all(|op| ops.contains(op));
    outcome(
        report.passed() && covered && secs < 60.0,
        format!(
            "{} ops x 10 trials, max rel error {:.2e} ({}), eps 1e-5, {:.1}s",
            report.rows.len(),
            worst.max_rel_error,
            worst.op,
            secs
        ),
    )
}

fn moments_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut mismatches = 0;
    for _ in 0..100 {
        let (w, h) = (rng.random_range(1..=64), rng.random_range(1..=64));
        let values: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.0..=1.0)).collect();
        let map = SaliencyMap::new(w, h, values).unwrap();
        let m = compute_moments(&map);
        let mut b = [0.0f64; 5];
        for j in 0..h {
            for i in 0..w {
                let s = map.get(i, j);
                let (x, y) = (i as f64, j as f64);
                b[0] += s;
                b[1] += x * s;
                b[2] += y * s;
                b[3] += x * x * s;
                b[4] += y * y * s;
            }
        }
        if [m.m00, m.m10, m.m01, m.m20, m.m02].map(f64::to_bits) != b.map(f64::to_bits) {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("100 random maps up to 64x64, {mismatches} bitwise mismatches"))
}

fn energy_99() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let params = AnchorParams::default();
    let mut worst = f64::INFINITY;
    for _ in 0..20 {
        let s: f64 = rng.random_range(3.0..=8.0);
        let margin = 3.0 * s + 1.0;
        let cx = rng.random_range(margin..=64.0 - margin);
        let cy = rng.random_range(margin..=64.0 - margin);
        let mut map = SaliencyMap::zeros(64, 64);
        for j in 0..64 {
            for i in 0..64 {
                let d2 = (i as f64 - cx).powi(2) + (j as f64 - cy).powi(2);
                map.set(i, j, (-d2 / (2.0 * s * s)).exp());
            }
        }
        let a = anchor_region(&map, &params).rect;
        let mut inside = 0.0;
        for j in 0..64 {
            for i in 0..64 {
                let (x, y) = (i as f64, j as f64);
                if a.x_min <= x && x <= a.x_max && a.y_min <= y && y <= a.y_max {
                    inside += map.get(i, j);
                }
            }
        }
        worst = worst.min(inside / map.mass());
    }
    outcome(worst >= 0.985, format!("20 blobs, sigma in [3,8], min mass fraction inside {worst:.5} (>= 0.985)"))
}

fn offset_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let bounds = Rect::full(1000.0, 1000.0);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    while n < 1000 {
        let mut r = || {
            let (x0, y0) = (rng.random_range(0.0..900.0), rng.random_range(0.0..900.0));
            Rect::new(x0, y0, x0 + rng.random_range(1.0..100.0), y0 + rng.random_range(1.0..100.0))
        };
        let (anchor, crop) = (r(), r());
        let c = encode_offsets(&anchor, &crop).unwrap();
        if 1.0 - c.alpha_t - c.alpha_b < 0.05 || 1.0 - c.beta_t - c.beta_b < 0.05 {
            continue;
        }
        let back = decode_unclamped(&anchor, &c).unwrap();
        for (p, q) in back.corners().iter().zip(crop.corners()) {
            worst = worst.max((p - q).abs());
        }
        n += 1;
    }
    let anchor = Rect::new(12.5, 40.25, 80.0, 99.0);
    let identity = decode_rect(&anchor, &OffsetCoefficients::ZERO, &bounds).unwrap() == anchor;
    outcome(
        worst <= 1e-9 && identity,
        format!("1000 pairs, max corner error {worst:.2e}; zero coefficients decode to anchor: {identity}"),
    )
}

fn metric_identities() -> Outcome {
    let a = Rect::new(0.0, 0.0, 100.0, 100.0);
    let third = iou(&a, &Rect::new(50.0, 0.0, 150.0, 100.0));
    let edge = bde(&a, &Rect::new(0.0, 0.0, 110.0, 100.0), 100, 100).unwrap();
    let half = bde(&a, &Rect::new(25.0, 25.0, 75.0, 75.0), 100, 100).unwrap();
    let checks = [
        iou(&a, &a) == 1.0,
        iou(&a, &Rect::new(200.0, 0.0, 300.0, 100.0)) == 0.0,
        (third - 1.0 / 3.0).abs() <= 1e-12,
        bde(&a, &a, 100, 100).unwrap() == 0.0,
        (edge - 0.025).abs() <= 1e-12,
        half == 0.25,
    ];
    outcome(
        checks.iter().all(|&c| c),
        format!("iou 1/3 case {third:.15}, bde single-edge {edge:.15}, bde half-size {half}"),
    )
}

fn toy_arch() -> Architecture {
    Architecture {
        unet: UNetConfig { depth: 3, base_channels: 8, input_channels: 3, seed: 0 },
        head: HeadConfig::default(),
    }
}

fn toy_training() -> Outcome {
    let size = 64;
    let arch = toy_arch();
    let settings = CropSettings { target_side: size, ..Default::default() };
    let train_set: Vec<TrainingSample> =
        generate_synthetic(200, size, 1).unwrap().into_iter().map(Into::into).collect();
    let test_set: Vec<EvalSample> = generate_synthetic(50, size, 2)
        .unwrap()
        .into_iter()
        .map(|s| EvalSample { id: s.id, image: s.image, gt_crop: s.gt_crop, gt_saliency: Some(s.gt_saliency) })
        .collect();
    let untrained = arch.build().unwrap();
    let mut params = untrained.clone();
    let opts = TrainOptions { settings, shuffle_seed: 1, ..Default::default() };
    let start = Instant::now();
    let log = match train(&arch, &mut params, &train_set, &opts) {
        Ok(l) => l,
        Err(e) => return outcome(false, e.to_string()),
    };
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    let stage1: Vec<&EpochLog> = log.iter().filter(|e| e.stage == 1).collect();
    let (first, last) = (stage1[0].mean_saliency_loss, stage1[stage1.len() - 1].mean_saliency_loss);
    let score = |p: &dyn cropforge_core::eval::CropPredictor| evaluate_with(p, &test_set).unwrap().mean_iou;
    let before = score(&ModelPredictor { arch, params: &untrained, settings });
    let trained = score(&ModelPredictor { arch, params: &params, settings });
    let anchor = score(&AnchorOnlyPredictor { arch, params: &params, settings });
    outcome(
        minutes < 15.0 && last < first && trained >= before + 0.05 && trained >= anchor + 0.05,
        format!(
            "{} epochs in {minutes:.1} min; stage-1 L_s {first:.1} -> {last:.1}; test IoU trained {trained:.3}, \
             untrained {before:.3}, anchor-only {anchor:.3}",
            log.len()
        ),
    )
}

fn single_pass() -> Outcome {
    let arch = toy_arch();
    let params = arch.build().unwrap();
    let settings = CropSettings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let data = (0..3 * 224 * 224).map(|_| rng.random_range(0.0..1.0)).collect();
    let img = Image::new(3, 224, 224, data).unwrap();
    predict_crop(&arch, &params, &img, &settings).unwrap();
    let mut worst: f64 = 0.0;
    let mut passes_ok = true;
    for _ in 0..3 {
        let start = Instant::now();
        let pred = predict_crop(&arch, &params, &img, &settings).unwrap();
        worst = worst.max(start.elapsed().as_secs_f64() * 1e3);
        passes_ok &= pred.passes == PassCounts { saliency: 1, regression: 1 };
    }
    outcome(
        passes_ok && worst < 500.0,
        format!("saliency and regression passes = 1 each: {passes_ok}; 224x224 inference {worst:.0} ms (< 500)"),
    )
}

fn fallback() -> Outcome {
    let params = AnchorParams::default();
    let a = anchor_region(&SaliencyMap::zeros(100, 100), &params);
    let expected = 0.70f64.sqrt();
    let r = a.rect;
    let ratio_err = (r.width() / 100.0 - expected).abs().max((r.height() / 100.0 - expected).abs());
    let centered = ((r.x_min + r.x_max) / 2.0 - 50.0).abs() < 1e-12 && ((r.y_min + r.y_max) / 2.0 - 50.0).abs() < 1e-12;

    // end to end: a saliency net whose output is pinned near zero
    let arch = Architecture {
        unet: UNetConfig { depth: 2, base_channels: 2, input_channels: 3, seed: 4 },
        head: HeadConfig { roi_grid: 2, fc1: 8, fc2: 8 },
    };
    let mut model = arch.build().unwrap();
    model.get_mut("saliency.out.weight").unwrap().data_mut().fill(0.0);
    model.get_mut("saliency.out.bias").unwrap().data_mut().fill(-60.0);
    let img = Image::filled(3, 48, 64, 0.5);
    let settings = CropSettings { target_side: 48, ..Default::default() };
    let pred = predict_crop(&arch, &model, &img, &settings).unwrap();
    let side = pred.anchor.width() / 64.0;
    let valid = pred.anchor_is_fallback && pred.crop.is_valid() && img.bounds().contains_rect(&pred.crop);
    outcome(
        a.is_fallback() && centered && ratio_err <= 1e-9 && valid && (side - expected).abs() <= 1e-9,
        format!("side ratio error {ratio_err:.1e}, centered {centered}; predict_crop fallback crop valid {valid}"),
    )
}

fn synth_and_train(dir: &Path) -> (Vec<u8>, String) {
    let samples = generate_synthetic(12, 32, 21).unwrap();
    write_synthetic(dir, &samples).unwrap();
    let loaded = load_dataset(dir, 3).unwrap().entries;
    let data: Vec<TrainingSample> = loaded
        .into_iter()
        .map(|e| TrainingSample::prepare(e.id, &e.image, &e.saliency.unwrap(), e.crop, 32, 4).unwrap())
        .collect();
    let arch = Architecture {
        unet: UNetConfig { depth: 2, base_channels: 4, input_channels: 3, seed: 21 },
        head: HeadConfig { roi_grid: 2, fc1: 32, fc2: 16 },
    };
    let mut params = arch.build().unwrap();
    let opts = TrainOptions {
        settings: CropSettings { target_side: 32, ..Default::default() },
        shuffle_seed: 21,
        ..Default::default()
    };
    let log = train(&arch, &mut params, &data, &opts).unwrap();
    let ckpt = dir.join("model.ckpt");
    checkpoint::save(&params, &ckpt).unwrap();
    let text: String = log
        .iter()
        .map(|e| format!("{},{},{},{},{}\n", e.stage, e.epoch, e.mean_saliency_loss, e.mean_offset_loss, e.mean_total))
        .collect();
    (fs::read(ckpt).unwrap(), text)
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ca, la) = synth_and_train(a.path());
    let (cb, lb) = synth_and_train(b.path());
    outcome(
        ca == cb && la == lb,
        format!(
            "two synth+train runs (12 samples, 3 stages, {} epochs): checkpoints identical {}, logs identical {}",
            la.lines().count(),
            ca == cb,
            la == lb
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 9] = [
        ("gradient fidelity", gradient_fidelity),
        ("moments oracle", moments_oracle),
        ("99% energy", energy_99),
        ("offset round trip", offset_round_trip),
        ("metric identities", metric_identities),
        ("single-pass efficiency", single_pass),
        ("fallback path", fallback),
        ("determinism", determinism),
        ("toy end-to-end training", toy_training),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        println!(
            "[{}] {name}: {} ({:.1}s)",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.passed {
            failed += 1;
        }
    }
    if failed == 0 {
        println!("all criteria passed");
        return ExitCode::SUCCESS;
    }
    println!("{failed} criteria failed");
    if std::env::var_os("CROPFORGE_ACCEPTANCE_STRICT").is_some_and(|v| v != "0") {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
