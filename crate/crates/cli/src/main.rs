mod config;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use cropforge_core::checkpoint;
use cropforge_core::dataset::{load_dataset, write_synthetic};
use cropforge_core::eval::{
    evaluate_with, AnchorOnlyPredictor, CropPredictor, EvalReport, EvalSample, FullImagePredictor, ModelPredictor,
    SaliencyAnchorPredictor,
};
use cropforge_core::gradcheck::{run_gradcheck, GradcheckOptions};
use cropforge_core::imaging::{save_saliency, Image};
use cropforge_core::model::{predict_crop, Architecture};
use cropforge_core::synth::generate_synthetic;
use cropforge_core::train::{train_with_progress, TrainingSample};
use cropforge_core::{Error as CoreError, Rect, SaliencyMap};

use config::{ConfigArgs, GtModeArg, RunConfig};

const EXIT_USAGE: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_GRADCHECK: u8 = 4;

#[derive(Parser)]
#[command(name = "cropforge", version, about = "Saliency-guided automatic image cropping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic dataset.
    Synth {
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        count: u64,
        /// Square image side in pixels.
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, env = "CROPFORGE_SEED", default_value_t = 0)]
        seed: u64,
        /// Network depth the images must suit; the side must be a multiple of 2^depth.
        #[arg(long, default_value_t = 3)]
        depth: u32,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Run the three-stage training schedule.
    Train {
        /// Dataset directory (or `data` in the config file).
        data: Option<PathBuf>,
        /// Checkpoint to write (or `checkpoint` in the config file).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Loss log CSV; defaults to the checkpoint path with a `.csv` extension.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Comma-separated subset of stages to run.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        stages: Vec<u8>,
        #[arg(long, value_enum)]
        gt_mode: Option<GtModeArg>,
        /// Seed the anchor from the ground-truth saliency in stages 2 and 3.
        #[arg(long)]
        teacher_forcing: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Crop one image with a trained checkpoint.
    Crop {
        checkpoint: PathBuf,
        image: PathBuf,
        /// Cropped image to write.
        #[arg(long)]
        out: PathBuf,
        /// Also write the saliency map, resized to the input, next to the output.
        #[arg(long)]
        emit_saliency: bool,
        /// Also write the input annotated with the anchor and crop rectangles.
        #[arg(long)]
        emit_anchor: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score a checkpoint (or a baseline) on an annotated dataset.
    Eval {
        /// Checkpoint (or `checkpoint` in the config file); unused by the
        /// full-image and saliency-anchor baselines.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset directory (or `data` in the config file).
        data: Option<PathBuf>,
        /// Per-sample CSV report.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Predictor::Model)]
        predictor: Predictor,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Compare analytical gradients with central differences for every op.
    Gradcheck {
        #[arg(long, env = "CROPFORGE_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, hide = true)]
        mutate: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Predictor {
    /// The trained network.
    Model,
    /// The network's anchor window without regression.
    Anchor,
    /// The anchor computed from the dataset's saliency maps.
    SaliencyAnchor,
    /// The whole image.
    FullImage,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<CoreError>() {
            Some(CoreError::Divergence { .. }) => EXIT_DIVERGED,
            Some(CoreError::Numeric(_) | CoreError::TrainingState(_)) => 1,
            _ => EXIT_USAGE,
        };
        Self { code, error }
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { count, size, seed, depth, out } => cmd_synth(count as usize, size, seed, depth, &out),
        Command::Train { data, out, log, stages, gt_mode, teacher_forcing, config } => {
            cmd_train(data, out, log, stages, gt_mode, teacher_forcing, &config)
        }
        Command::Crop { checkpoint, image, out, emit_saliency, emit_anchor, config } => {
            cmd_crop(&checkpoint, &image, &out, emit_saliency, emit_anchor, &config)
        }
        Command::Eval { checkpoint, data, out, predictor, config } => {
            cmd_eval(checkpoint, data, out, predictor, &config)
        }
        Command::Gradcheck { seed, trials, mutate } => cmd_gradcheck(seed, trials, mutate),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, error: anyhow!(msg.into()) }
}

/// SHA-256 over every file's relative path and contents, in path order.
fn manifest_digest(root: &Path, files: &[PathBuf]) -> Result<String> {
    let mut rel: Vec<(String, &PathBuf)> = files
        .iter()
        .map(|p| {
            let r = p.strip_prefix(root).unwrap_or(p);
            let name = r.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            (name, p)
        })
        .collect();
    rel.sort();
    let mut h = Sha256::new();
    for (name, path) in rel {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

fn cmd_synth(count: usize, size: usize, seed: u64, depth: u32, out: &Path) -> Result<(), Failure> {
    let stride = 1usize.checked_shl(depth).filter(|&s| s > 0).ok_or_else(|| usage("depth is too large"))?;
    if size == 0 || !size.is_multiple_of(stride) {
        return Err(usage(format!("--size {size} must be a positive multiple of {stride} (2^depth)")));
    }
    let samples = generate_synthetic(count, size, seed)?;
    let files = write_synthetic(out, &samples)?;
    let digest = manifest_digest(out, &files)?;
    println!("wrote {} samples to {}", samples.len(), out.display());
    println!("manifest sha256={digest}");
    Ok(())
}

fn require(path: Option<PathBuf>, what: &str, key: &str) -> Result<PathBuf, Failure> {
    path.ok_or_else(|| usage(format!("no {what} given; pass it on the command line or set `{key}` in --config")))
}

fn cmd_train(
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    log: Option<PathBuf>,
    stages: Vec<u8>,
    gt_mode: Option<GtModeArg>,
    teacher_forcing: bool,
    args: &ConfigArgs,
) -> Result<(), Failure> {
    let mut cfg = args.resolve()?;
    if let Some(m) = gt_mode {
        cfg.gt_mode = m;
    }
    cfg.teacher_forcing |= teacher_forcing;
    let data = require(data.or(cfg.data.clone()), "dataset directory", "data")?;
    let out = require(out.or(cfg.checkpoint.clone()), "output checkpoint (--out)", "checkpoint")?;
    let log_path = log.unwrap_or_else(|| out.with_extension("csv"));
    if let Some(s) = stages.iter().find(|s| !(1..=3).contains(*s)) {
        return Err(usage(format!("--stages: unknown stage {s}")));
    }

    let arch = cfg.architecture();
    let stride = arch.unet.stride();
    let loaded = load_dataset(&data, 3)?;
    for id in &loaded.missing {
        eprintln!("warning: {id} has no row in crops.csv; skipped");
    }
    let samples = loaded
        .entries
        .into_iter()
        .map(|e| {
            let map = e
                .saliency
                .ok_or_else(|| anyhow!("{}: training needs a saliency map", e.id))?;
            Ok(TrainingSample::prepare(e.id, &e.image, &map, e.crop, cfg.target_side, stride)?)
        })
        .collect::<Result<Vec<_>>>()?;
    if samples.is_empty() {
        return Err(usage(format!("no usable samples in {}", data.display())));
    }

    let mut params = arch.build()?;
    let opts = cfg.train_options(stages);
    let mut csv = String::from("stage,epoch,mean_Ls,mean_Lr,total\n");
    train_with_progress(&arch, &mut params, &samples, &opts, |e| {
        eprintln!(
            "stage {} epoch {}: L_s={:.6} L_r={:.6} total={:.6}",
            e.stage, e.epoch, e.mean_saliency_loss, e.mean_offset_loss, e.mean_total
        );
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            e.stage, e.epoch, e.mean_saliency_loss, e.mean_offset_loss, e.mean_total
        ));
    })
    ?;
    checkpoint::save(&params, &out)?;
    fs::write(&log_path, csv).with_context(|| format!("writing {}", log_path.display()))?;
    println!("checkpoint {}", out.display());
    println!("loss log {}", log_path.display());
    Ok(())
}

fn load_model(path: &Path, cfg: &RunConfig) -> Result<(Architecture, cropforge_core::ModelParams)> {
    let params = checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let mut arch = Architecture::infer(&params)?;
    arch.unet.seed = cfg.seed;
    Ok((arch, params))
}

#[derive(Serialize)]
struct RectJson {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl From<Rect> for RectJson {
    fn from(r: Rect) -> Self {
        Self { x_min: r.x_min, y_min: r.y_min, x_max: r.x_max, y_max: r.y_max }
    }
}

#[derive(Serialize)]
struct Sidecar {
    schema: u32,
    image: String,
    image_width: usize,
    image_height: usize,
    rect: RectJson,
    anchor: RectJson,
    anchor_is_fallback: bool,
    offsets: OffsetsJson,
    timing_ms: TimingJson,
    saliency_passes: usize,
    regression_passes: usize,
}

#[derive(Serialize)]
struct OffsetsJson {
    alpha_t: f64,
    alpha_b: f64,
    beta_t: f64,
    beta_b: f64,
}

#[derive(Serialize)]
struct TimingJson {
    resize: f64,
    saliency: f64,
    anchor: f64,
    regression: f64,
    total: f64,
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}{suffix}"))
}

fn cmd_crop(
    ckpt: &Path,
    image_path: &Path,
    out: &Path,
    emit_saliency: bool,
    emit_anchor: bool,
    args: &ConfigArgs,
) -> Result<(), Failure> {
    let cfg = args.resolve()?;
    let (arch, params) = load_model(ckpt, &cfg)?;
    let image = Image::load(image_path, 3)?;
    let pred = predict_crop(&arch, &params, &image, &cfg.crop_settings())?;
    image.crop(&pred.crop).and_then(|c| c.save_png(out))?;

    if emit_saliency {
        let full = Image::from(&pred.saliency)
            .resize_bilinear(image.height(), image.width())
            ?;
        let values = full.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let map = SaliencyMap::new(image.width(), image.height(), values)?;
        let p = sibling(out, ".saliency.png");
        save_saliency(&map, &p)?;
        println!("saliency {}", p.display());
    }
    if emit_anchor {
        let mut annotated = image.clone();
        annotated.draw_rect(&pred.anchor, &[1.0, 0.8, 0.0]);
        annotated.draw_rect(&pred.crop, &[0.0, 1.0, 0.2]);
        let p = sibling(out, ".anchor.png");
        annotated.save_png(&p)?;
        println!("anchor {}", p.display());
    }

    let o = pred.offsets;
    let t = pred.timings;
    let sidecar = Sidecar {
        schema: 1,
        image: image_path.display().to_string(),
        image_width: image.width(),
        image_height: image.height(),
        rect: pred.crop.into(),
        anchor: pred.anchor.into(),
        anchor_is_fallback: pred.anchor_is_fallback,
        offsets: OffsetsJson { alpha_t: o.alpha_t, alpha_b: o.alpha_b, beta_t: o.beta_t, beta_b: o.beta_b },
        timing_ms: TimingJson {
            resize: t.resize_ms,
            saliency: t.saliency_ms,
            anchor: t.anchor_ms,
            regression: t.regression_ms,
            total: t.total_ms,
        },
        saliency_passes: pred.passes.saliency,
        regression_passes: pred.passes.regression,
    };
    let json_path = out.with_extension("json");
    let json = serde_json::to_string_pretty(&sidecar).context("serializing sidecar")?;
    fs::write(&json_path, json + "\n").with_context(|| format!("writing {}", json_path.display()))?;
    let r = pred.crop;
    println!("crop {} {} {} {} -> {}", r.x_min, r.y_min, r.x_max, r.y_max, out.display());
    println!("sidecar {}", json_path.display());
    Ok(())
}

fn report_csv(report: &EvalReport) -> String {
    let mut s = String::from("id,iou,bde,pred_x_min,pred_y_min,pred_x_max,pred_y_max,gt_x_min,gt_y_min,gt_x_max,gt_y_max,ms\n");
    for r in &report.records {
        let (p, g) = (r.predicted, r.ground_truth);
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{:.3}\n",
            r.id, r.iou, r.bde, p.x_min, p.y_min, p.x_max, p.y_max, g.x_min, g.y_min, g.x_max, g.y_max, r.elapsed_ms
        ));
    }
    s
}

fn cmd_eval(
    ckpt: Option<PathBuf>,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    predictor: Predictor,
    args: &ConfigArgs,
) -> Result<(), Failure> {
    let cfg = args.resolve()?;
    let settings = cfg.crop_settings();
    let data = require(data.or(cfg.data.clone()), "dataset directory", "data")?;
    let loaded = load_dataset(&data, 3)?;
    for id in &loaded.missing {
        eprintln!("warning: {id} has no row in crops.csv; skipped");
    }
    if loaded.entries.is_empty() {
        return Err(usage(format!("no image in {} has a ground-truth crop", data.display())));
    }
    let samples: Vec<EvalSample> = loaded.entries.into_iter().map(|e| e.into_eval()).collect();

    let model = match predictor {
        Predictor::Model | Predictor::Anchor => {
            let ckpt = require(ckpt.or(cfg.checkpoint.clone()), "checkpoint", "checkpoint")?;
            Some(load_model(&ckpt, &cfg)?)
        }
        _ => None,
    };
    let boxed: Box<dyn CropPredictor> = match (predictor, &model) {
        (Predictor::Model, Some((arch, params))) => Box::new(ModelPredictor { arch: *arch, params, settings }),
        (Predictor::Anchor, Some((arch, params))) => Box::new(AnchorOnlyPredictor { arch: *arch, params, settings }),
        (Predictor::SaliencyAnchor, _) => Box::new(SaliencyAnchorPredictor { settings }),
        (Predictor::FullImage, _) => Box::new(FullImagePredictor),
        _ => unreachable!("model predictors always load a checkpoint"),
    };
    let report = evaluate_with(boxed.as_ref(), &samples)?;
    let csv = report_csv(&report);
    match &out {
        Some(p) => fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    println!("mean_iou={:.6} mean_bde={:.6} mean_ms={:.3}", report.mean_iou, report.mean_bde, report.mean_ms);
    std::io::stdout().flush().ok();
    Ok(())
}

fn cmd_gradcheck(seed: u64, trials: usize, mutate: bool) -> Result<(), Failure> {
    if trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    let opts = GradcheckOptions { trials, seed, mutate_anchor: mutate, ..Default::default() };
    let report = run_gradcheck(&opts)?;
    println!("{:<18} {:>6} {:>14}  result", "op", "trials", "max_rel_error");
    for r in &report.rows {
        println!(
            "{:<18} {:>6} {:>14.3e}  {}",
            r.op,
            r.trials,
            r.max_rel_error,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
    println!("tolerance {:.0e}, {:.0} ms", opts.tolerance, report.elapsed_ms);
    let failed: Vec<&str> = report.rows.iter().filter(|r| !r.passed).map(|r| r.op).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure { code: EXIT_GRADCHECK, error: anyhow!("gradient check failed for: {}", failed.join(", ")) })
    }
}
