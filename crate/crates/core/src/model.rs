//! The end-to-end cropping network: saliency net, soft binarization, anchor
//! window, RoI pooling over the bottleneck and a three-layer regression head
//! predicting offset coefficients.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::crop::{anchor_region, soft_binarize, Anchor, AnchorParams};
use crate::error::{Error, Result};
use crate::geometry::{Rect, SaliencyMap};
use crate::imaging::{resize_shorter_side, Image, Resized};
use crate::offsets::{decode_rect, OffsetCoefficients};
use crate::params::{GroupMask, ModelParams, ParamVars};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::unet::{build_unet, unet_forward, UNetConfig};

/// Fully connected head on top of RoI-pooled bottleneck features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadConfig {
    /// RoI output is `grid x grid` per channel.
    pub roi_grid: usize,
    pub fc1: usize,
    pub fc2: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            roi_grid: 4,
            fc1: 2048,
            fc2: 1024,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Architecture {
    pub unet: UNetConfig,
    pub head: HeadConfig,
}

/// Inference-time knobs shared by training and prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropSettings {
    /// Soft binarization scale.
    pub sigma: f64,
    pub anchor: AnchorParams,
    /// Shorter image side fed to the network.
    pub target_side: usize,
}

impl Default for CropSettings {
    fn default() -> Self {
        Self {
            sigma: 0.01,
            anchor: AnchorParams::default(),
            target_side: 224,
        }
    }
}

impl Architecture {
    pub fn head_inputs(&self) -> usize {
        self.unet.bottleneck_channels() * self.head.roi_grid * self.head.roi_grid
    }

    /// Fresh parameters for both groups, seeded by `unet.seed`.
    pub fn build(&self) -> Result<ModelParams> {
        if self.head.roi_grid == 0 || self.head.fc1 == 0 || self.head.fc2 == 0 {
            return Err(Error::Parameter(format!("invalid head config {:?}", self.head)));
        }
        let mut params = build_unet(&self.unet)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.unet.seed ^ 0x005e_ed0f_4ead);
        let layers = [
            ("regression.fc1", self.head_inputs(), self.head.fc1),
            ("regression.fc2", self.head.fc1, self.head.fc2),
            ("regression.fc3", self.head.fc2, 4),
        ];
        for (name, n_in, n_out) in layers {
            params.insert_glorot(format!("{name}.weight"), &[n_out, n_in], n_in, n_out, &mut rng)?;
            params.insert(format!("{name}.bias"), Tensor::zeros([n_out]))?;
        }
        Ok(params)
    }

    /// Recovers the architecture from a parameter set (e.g. a loaded checkpoint).
    pub fn infer(params: &ModelParams) -> Result<Self> {
        let unet = UNetConfig::infer(params)?;
        let shape = |name: &str| {
            params
                .get(name)
                .map(|t| t.shape().to_vec())
                .ok_or_else(|| Error::Checkpoint(format!("missing {name}")))
        };
        let fc1 = shape("regression.fc1.weight")?;
        let fc2 = shape("regression.fc2.weight")?;
        let cells = fc1[1] / unet.bottleneck_channels();
        let grid = (cells as f64).sqrt().round() as usize;
        if grid * grid * unet.bottleneck_channels() != fc1[1] {
            return Err(Error::Checkpoint(format!(
                "fc1 takes {} inputs, not a square grid over {} channels",
                fc1[1],
                unet.bottleneck_channels()
            )));
        }
        Ok(Self {
            unet,
            head: HeadConfig {
                roi_grid: grid,
                fc1: fc1[0],
                fc2: fc2[0],
            },
        })
    }
}

/// RoI-pool `features` under `region` and run the three dense layers; returns
/// the 4 predicted coefficients `[alpha_t, alpha_b, beta_t, beta_b]`.
pub fn head_forward(
    tape: &mut Tape<'_>,
    vars: &ParamVars,
    arch: &Architecture,
    features: Var,
    region: &Rect,
) -> Result<Var> {
    let pooled = tape.roi_pool(features, region, arch.unet.stride() as f64, arch.head.roi_grid)?;
    let mut h = pooled;
    for (i, name) in ["regression.fc1", "regression.fc2", "regression.fc3"].iter().enumerate() {
        let w = vars.get(&format!("{name}.weight"))?;
        let b = vars.get(&format!("{name}.bias"))?;
        h = tape.linear(h, w, b)?;
        if i < 2 {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

/// Soft-binarizes `map` and derives the anchor window from it.
pub fn anchor_for(map: &SaliencyMap, settings: &CropSettings) -> Result<Anchor> {
    let enhanced = soft_binarize(map, settings.sigma)?;
    Ok(anchor_region(&enhanced, &settings.anchor))
}

/// Anchor rectangle used for pooling and offset coding: at least one pixel
/// wide in each direction so that offsets stay decodable.
pub fn working_anchor(anchor: &Anchor, bounds: &Rect) -> Rect {
    anchor.rect.with_min_side(1.0, bounds)
}

/// Number of network passes made by one prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PassCounts {
    pub saliency: usize,
    pub regression: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageTimings {
    pub resize_ms: f64,
    pub saliency_ms: f64,
    pub anchor_ms: f64,
    pub regression_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Crop in original-image pixels.
    pub crop: Rect,
    /// Anchor in original-image pixels.
    pub anchor: Rect,
    pub anchor_is_fallback: bool,
    pub offsets: OffsetCoefficients,
    /// Predicted saliency map at network resolution.
    pub saliency: SaliencyMap,
    pub resized: Resized,
    pub timings: StageTimings,
    pub passes: PassCounts,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// One pass through the whole pipeline; no candidate windows are enumerated.
pub fn predict_crop(
    arch: &Architecture,
    params: &ModelParams,
    image: &Image,
    settings: &CropSettings,
) -> Result<Prediction> {
    let start = Instant::now();
    let mut passes = PassCounts::default();
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let input = image.with_channels(arch.unet.input_channels)?;
    let (input, resized) = resize_shorter_side(&input, settings.target_side, arch.unet.stride())?;
    timings.resize_ms = ms_since(t);

    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, GroupMask::NONE);
    let t = Instant::now();
    let x = tape.leaf(input.to_tensor(), false);
    let net = unet_forward(&mut tape, &vars, &arch.unet, x)?;
    passes.saliency += 1;
    let saliency = SaliencyMap::from_tensor(tape.value(net.map))?;
    timings.saliency_ms = ms_since(t);

    let t = Instant::now();
    let bounds = input.bounds();
    let anchor = anchor_for(&saliency, settings)?;
    let region = working_anchor(&anchor, &bounds);
    timings.anchor_ms = ms_since(t);

    let t = Instant::now();
    let coeffs = head_forward(&mut tape, &vars, arch, net.bottleneck, &region)?;
    passes.regression += 1;
    let offsets = OffsetCoefficients::from_slice(tape.value(coeffs).data())?;
    let crop = decode_rect(&region, &offsets, &bounds)?;
    timings.regression_ms = ms_since(t);

    let original = image.bounds();
    let crop = resized.to_original(&crop).clamp_to(&original);
    let anchor_rect = resized.to_original(&region).clamp_to(&original);
    timings.total_ms = ms_since(start);
    Ok(Prediction {
        crop,
        anchor: anchor_rect,
        anchor_is_fallback: anchor.is_fallback(),
        offsets,
        saliency,
        resized,
        timings,
        passes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Architecture {
        Architecture {
            unet: UNetConfig { depth: 2, base_channels: 2, input_channels: 3, seed: 3 },
            head: HeadConfig { roi_grid: 2, fc1: 8, fc2: 6 },
        }
    }

    fn noisy(h: usize, w: usize) -> Image {
        let data = (0..3 * h * w).map(|i| ((i * 2654435761usize) % 1009) as f64 / 1009.0).collect();
        Image::new(3, h, w, data).unwrap()
    }

    #[test]
    fn infer_round_trips() {
        let arch = tiny();
        let p = arch.build().unwrap();
        let mut inferred = Architecture::infer(&p).unwrap();
        inferred.unet.seed = arch.unet.seed;
        assert_eq!(inferred, arch);
    }

    #[test]
    fn single_pass_and_bounds() {
        let arch = tiny();
        let p = arch.build().unwrap();
        let settings = CropSettings { target_side: 32, ..Default::default() };
        let img = noisy(48, 80);
        let pred = predict_crop(&arch, &p, &img, &settings).unwrap();
        assert_eq!(pred.passes, PassCounts { saliency: 1, regression: 1 });
        assert!(img.bounds().contains_rect(&pred.crop));
        assert!(img.bounds().contains_rect(&pred.anchor));
        assert_eq!((pred.saliency.height(), pred.saliency.width()), (32, 52));
        assert!(pred.timings.total_ms > 0.0);
    }

    #[test]
    fn zero_head_output_returns_anchor() {
        let arch = tiny();
        let mut p = arch.build().unwrap();
        for name in ["regression.fc3.weight", "regression.fc3.bias"] {
            p.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let settings = CropSettings { target_side: 32, ..Default::default() };
        let pred = predict_crop(&arch, &p, &noisy(32, 32), &settings).unwrap();
        assert_eq!(pred.offsets, OffsetCoefficients::ZERO);
        assert_eq!(pred.crop, pred.anchor);
    }
}
