//! Three-stage training: the saliency net alone, then the regression head on a
//! frozen saliency net, then everything jointly with `L_s + lambda * L_r`.
//!
//! One image per SGD step; sample order is reshuffled every epoch from a seed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{Rect, SaliencyMap};
use crate::imaging::{resize_shorter_side, Image};
use crate::losses::{total_loss, LossReport};
use crate::model::{anchor_for, head_forward, working_anchor, Architecture, CropSettings};
use crate::offsets::encode_offsets;
use crate::params::{sgd_step, GroupMask, ModelParams, ParamGroup};
use crate::synth::SyntheticSample;
use crate::tape::Tape;
use crate::unet::unet_forward;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageSpec {
    pub learning_rate: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingSchedule {
    /// Saliency net only.
    pub stage1: StageSpec,
    /// Regression head, saliency net frozen.
    pub stage2: StageSpec,
    /// Joint fine-tuning.
    pub stage3: StageSpec,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        Self {
            stage1: StageSpec { learning_rate: 1e-4, epochs: 4 },
            stage2: StageSpec { learning_rate: 1e-4, epochs: 6 },
            stage3: StageSpec { learning_rate: 1e-5, epochs: 2 },
        }
    }
}

impl TrainingSchedule {
    pub fn stage(&self, stage: u8) -> StageSpec {
        match stage {
            1 => self.stage1,
            2 => self.stage2,
            _ => self.stage3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in [self.stage1, self.stage2, self.stage3].iter().enumerate() {
            if !(s.learning_rate >= 0.0 && s.learning_rate.is_finite()) {
                return Err(Error::Parameter(format!(
                    "stage {} learning rate must be non-negative, got {}",
                    i + 1,
                    s.learning_rate
                )));
            }
        }
        Ok(())
    }
}

/// Which saliency map seeds the anchor during stages 2 and 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AnchorInput {
    /// The network's own prediction.
    #[default]
    Predicted,
    /// The ground-truth mask (teacher forcing).
    GroundTruth,
}

/// Which rectangle the offset targets are measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GtMode {
    /// The annotated crop box.
    #[default]
    CropBox,
    /// The whole image, for datasets of already well-composed photos.
    FullImage,
}

/// Default ceiling on the gradient norm of one step.
pub const DEFAULT_MAX_GRAD_NORM: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub schedule: TrainingSchedule,
    pub settings: CropSettings,
    pub lambda: f64,
    /// Stages to run, in order; any subset of `1..=3`.
    pub stages: Vec<u8>,
    pub anchor_source: AnchorInput,
    pub gt_mode: GtMode,
    pub shuffle_seed: u64,
    /// Rescale each step's gradient to at most this Euclidean norm; `None`
    /// applies raw gradients.
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            schedule: TrainingSchedule::default(),
            settings: CropSettings::default(),
            lambda: 1.0,
            stages: vec![1, 2, 3],
            anchor_source: AnchorInput::default(),
            gt_mode: GtMode::default(),
            shuffle_seed: 0,
            max_grad_norm: Some(DEFAULT_MAX_GRAD_NORM),
        }
    }
}

/// A training example at network resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub id: String,
    pub image: Image,
    pub gt_saliency: SaliencyMap,
    pub gt_crop: Rect,
}

impl From<SyntheticSample> for TrainingSample {
    fn from(s: SyntheticSample) -> Self {
        Self {
            id: s.id,
            image: s.image,
            gt_saliency: s.gt_saliency,
            gt_crop: s.gt_crop,
        }
    }
}

impl TrainingSample {
    /// Resizes image, mask and crop so the shorter side is `target_side` and
    /// both sides are multiples of `multiple`.
    pub fn prepare(
        id: String,
        image: &Image,
        saliency: &SaliencyMap,
        crop: Rect,
        target_side: usize,
        multiple: usize,
    ) -> Result<Self> {
        if (saliency.width(), saliency.height()) != (image.width(), image.height()) {
            return Err(Error::Input(format!(
                "sample {id}: saliency map is {}x{} but image is {}x{}",
                saliency.width(),
                saliency.height(),
                image.width(),
                image.height()
            )));
        }
        let (img, scale) = resize_shorter_side(image, target_side, multiple)?;
        let (mask, _) = resize_shorter_side(&Image::from(saliency), target_side, multiple)?;
        let values = mask.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Self {
            gt_saliency: SaliencyMap::new(img.width(), img.height(), values)?,
            gt_crop: crop.scale(scale.scale_x, scale.scale_y).clamp_to(&img.bounds()),
            image: img,
            id,
        })
    }
}

/// Mean losses over one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub stage: u8,
    pub epoch: usize,
    pub mean_saliency_loss: f64,
    pub mean_offset_loss: f64,
    pub mean_total: f64,
}

fn stage_mask(stage: u8) -> GroupMask {
    match stage {
        1 => GroupMask::SALIENCY,
        2 => GroupMask::REGRESSION,
        _ => GroupMask::ALL,
    }
}

/// Forward, backward and SGD update for one sample.
pub fn train_step(
    arch: &Architecture,
    params: &mut ModelParams,
    sample: &TrainingSample,
    stage: u8,
    learning_rate: f64,
    opts: &TrainOptions,
) -> Result<LossReport> {
    let mask = stage_mask(stage);
    let diverged = |detail: String| Error::Divergence { stage, sample_id: sample.id.clone(), detail };
    let (vars, grads, report) = {
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, mask);
        let x = tape.leaf(sample.image.to_tensor(), false);
        let net = unet_forward(&mut tape, &vars, &arch.unet, x).map_err(|e| match e {
            Error::Numeric(m) => diverged(m),
            other => other,
        })?;
        let ls = tape.bce_with_logits(net.logits, sample.gt_saliency.values())?;
        let ls_value = tape.value(ls).data()[0];
        let (root, lr_value) = if stage == 1 {
            (ls, 0.0)
        } else {
            let predicted;
            let map = match opts.anchor_source {
                AnchorInput::Predicted => {
                    predicted = SaliencyMap::from_tensor(tape.value(net.map))?;
                    &predicted
                }
                AnchorInput::GroundTruth => &sample.gt_saliency,
            };
            let bounds = sample.image.bounds();
            let anchor = working_anchor(&anchor_for(map, &opts.settings)?, &bounds);
            let aesthetic = match opts.gt_mode {
                GtMode::CropBox => sample.gt_crop,
                GtMode::FullImage => bounds,
            };
            let target = encode_offsets(&anchor, &aesthetic)?.to_array();
            let coeffs = head_forward(&mut tape, &vars, arch, net.bottleneck, &anchor)
                .map_err(|e| match e {
                    Error::Numeric(m) => diverged(m),
                    other => other,
                })?;
            let lr = tape.squared_error(coeffs, &target)?;
            let lr_value = tape.value(lr).data()[0];
            if stage == 2 {
                (lr, lr_value)
            } else {
                (tape.add_scaled(ls, lr, opts.lambda)?, lr_value)
            }
        };
        let report = total_loss(ls_value, lr_value, opts.lambda)?;
        if !report.total.is_finite() {
            return Err(diverged(format!("loss = {}", report.total)));
        }
        let grads = tape.backward(root).map_err(|e| diverged(e.to_string()))?;
        (vars, grads, report)
    };
    params.accumulate(&vars, &grads)?;
    if let Some(max) = opts.max_grad_norm {
        let norm = params.grad_norm(mask);
        if norm > max {
            params.scale_grads(mask, max / norm);
        }
    }
    sgd_step(params, learning_rate, mask)?;
    Ok(report)
}

/// Runs the selected stages over `data` and returns per-epoch mean losses.
pub fn train(
    arch: &Architecture,
    params: &mut ModelParams,
    data: &[TrainingSample],
    opts: &TrainOptions,
) -> Result<Vec<EpochLog>> {
    train_with_progress(arch, params, data, opts, |_| {})
}

pub fn train_with_progress(
    arch: &Architecture,
    params: &mut ModelParams,
    data: &[TrainingSample],
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    if data.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    opts.schedule.validate()?;
    if let Some(s) = opts.stages.iter().find(|s| !(1..=3).contains(*s)) {
        return Err(Error::Parameter(format!("unknown training stage {s}")));
    }
    if let Some(m) = opts.max_grad_norm.filter(|m| m.is_nan() || *m <= 0.0) {
        return Err(Error::Parameter(format!("gradient norm ceiling must be positive, got {m}")));
    }
    let mut log = Vec::new();
    for &stage in &opts.stages {
        let spec = opts.schedule.stage(stage);
        params.set_frozen(ParamGroup::Saliency, stage == 2);
        for epoch in 1..=spec.epochs {
            let mut order: Vec<usize> = (0..data.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(opts.shuffle_seed);
            rng.set_stream(u64::from(stage) << 32 | epoch as u64);
            order.shuffle(&mut rng);
            let (mut ls, mut lr, mut tot) = (0.0, 0.0, 0.0);
            for &i in &order {
                let r = train_step(arch, params, &data[i], stage, spec.learning_rate, opts)?;
                ls += r.saliency_loss;
                lr += r.offset_loss;
                tot += r.total;
            }
            let n = data.len() as f64;
            let entry = EpochLog {
                stage,
                epoch,
                mean_saliency_loss: ls / n,
                mean_offset_loss: lr / n,
                mean_total: tot / n,
            };
            on_epoch(&entry);
            log.push(entry);
        }
        params.set_frozen(ParamGroup::Saliency, false);
    }
    Ok(log)
}
