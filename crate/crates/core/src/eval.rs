//! Scoring crop predictors against annotated crops with IoU and BDE.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Rect, SaliencyMap};
use crate::imaging::{resize_shorter_side, Image};
use crate::metrics::{bde, iou};
use crate::model::{anchor_for, predict_crop, working_anchor, Architecture, CropSettings};
use crate::params::ModelParams;

/// One annotated evaluation image.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSample {
    pub id: String,
    pub image: Image,
    pub gt_crop: Rect,
    /// Reference saliency, used only by saliency-driven baselines.
    pub gt_saliency: Option<SaliencyMap>,
}

pub trait CropPredictor: Sync {
    /// Crop rectangle in the pixel frame of `sample.image`.
    fn predict(&self, sample: &EvalSample) -> Result<Rect>;
}

/// The trained network.
pub struct ModelPredictor<'a> {
    pub arch: Architecture,
    pub params: &'a ModelParams,
    pub settings: CropSettings,
}

impl CropPredictor for ModelPredictor<'_> {
    fn predict(&self, sample: &EvalSample) -> Result<Rect> {
        Ok(predict_crop(&self.arch, self.params, &sample.image, &self.settings)?.crop)
    }
}

/// The network's anchor window with no regression applied.
pub struct AnchorOnlyPredictor<'a> {
    pub arch: Architecture,
    pub params: &'a ModelParams,
    pub settings: CropSettings,
}

impl CropPredictor for AnchorOnlyPredictor<'_> {
    fn predict(&self, sample: &EvalSample) -> Result<Rect> {
        Ok(predict_crop(&self.arch, self.params, &sample.image, &self.settings)?.anchor)
    }
}

/// Anchor window computed from the reference saliency map.
pub struct SaliencyAnchorPredictor {
    pub settings: CropSettings,
}

impl CropPredictor for SaliencyAnchorPredictor {
    fn predict(&self, sample: &EvalSample) -> Result<Rect> {
        let map = sample
            .gt_saliency
            .as_ref()
            .ok_or_else(|| Error::Input(format!("sample {} has no saliency map", sample.id)))?;
        let (img, scale) = resize_shorter_side(&Image::from(map), self.settings.target_side, 1)?;
        let map = SaliencyMap::new(img.width(), img.height(), img.data().to_vec())?;
        let anchor = working_anchor(&anchor_for(&map, &self.settings)?, &map.bounds());
        Ok(scale.to_original(&anchor).clamp_to(&sample.image.bounds()))
    }
}

/// The whole image.
pub struct FullImagePredictor;

impl CropPredictor for FullImagePredictor {
    fn predict(&self, sample: &EvalSample) -> Result<Rect> {
        Ok(sample.image.bounds())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub id: String,
    pub predicted: Rect,
    pub ground_truth: Rect,
    pub iou: f64,
    pub bde: f64,
    /// Wall-clock time of the prediction.
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Sorted by id.
    pub records: Vec<EvalRecord>,
    pub mean_iou: f64,
    pub mean_bde: f64,
    pub mean_ms: f64,
}

pub fn evaluate_with(predictor: &dyn CropPredictor, samples: &[EvalSample]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Input("evaluation set is empty".into()));
    }
    let mut records = samples
        .par_iter()
        .map(|s| {
            let start = Instant::now();
            let predicted = predictor.predict(s)?;
            let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
            Ok(EvalRecord {
                id: s.id.clone(),
                predicted,
                ground_truth: s.gt_crop,
                iou: iou(&predicted, &s.gt_crop),
                bde: bde(&predicted, &s.gt_crop, s.image.width(), s.image.height())?,
                elapsed_ms,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| a.id.cmp(&b.id));
    let n = records.len() as f64;
    Ok(EvalReport {
        mean_iou: records.iter().map(|r| r.iou).sum::<f64>() / n,
        mean_bde: records.iter().map(|r| r.bde).sum::<f64>() / n,
        mean_ms: records.iter().map(|r| r.elapsed_ms).sum::<f64>() / n,
        records,
    })
}

/// Evaluates the trained network.
pub fn evaluate(
    arch: &Architecture,
    params: &ModelParams,
    settings: &CropSettings,
    samples: &[EvalSample],
) -> Result<EvalReport> {
    evaluate_with(&ModelPredictor { arch: *arch, params, settings: *settings }, samples)
}
