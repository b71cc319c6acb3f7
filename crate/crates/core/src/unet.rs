//! U-shaped encoder/decoder producing a same-resolution saliency map.
//!
//! Encoder block `b`: two 3x3 convs with ReLU, then 2x2 max pooling; widths
//! double per block starting at `base_channels`. The bottleneck is two more
//! convs. Decoder block `b`: nearest 2x upsampling, concatenation with the
//! encoder block `b` output, then two 3x3 stride-1 transposed convs with ReLU.
//! A 1x1 conv and a sigmoid produce the map.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::SaliencyMap;
use crate::imaging::Image;
use crate::params::{GroupMask, ModelParams, ParamVars};
use crate::tape::{Padding, Tape, Var};
use crate::tensor::Tensor;

const KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UNetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub input_channels: usize,
    pub seed: u64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            base_channels: 8,
            input_channels: 3,
            seed: 0,
        }
    }
}

/// Saliency map plus the bottleneck features used for RoI pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyOutput {
    pub map: SaliencyMap,
    pub bottleneck: Tensor,
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct UNetVars {
    pub logits: Var,
    pub map: Var,
    pub bottleneck: Var,
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 {
            return Err(Error::Parameter(format!(
                "u-net needs depth >= 1 and base_channels >= 1, got {} and {}",
                self.depth, self.base_channels
            )));
        }
        if !matches!(self.input_channels, 1 | 3) {
            return Err(Error::Parameter(format!(
                "input_channels must be 1 or 3, got {}",
                self.input_channels
            )));
        }
        Ok(())
    }

    /// Total downsampling factor `2^depth`.
    pub fn stride(&self) -> usize {
        1 << self.depth
    }

    /// Output width of encoder/decoder level `level`; `level == depth` is the bottleneck.
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.channels(self.depth)
    }

    /// Recovers the architecture from parameter names and shapes.
    pub fn infer(params: &ModelParams) -> Result<Self> {
        let first = params
            .get("saliency.enc0.conv1.weight")
            .ok_or_else(|| Error::Checkpoint("missing saliency.enc0.conv1.weight".into()))?;
        let depth = (0..)
            .take_while(|b| params.get(&format!("saliency.enc{b}.conv1.weight")).is_some())
            .count();
        let cfg = Self {
            depth,
            base_channels: first.shape()[0],
            input_channels: first.shape()[1],
            seed: 0,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn add_conv(
    params: &mut ModelParams,
    prefix: &str,
    c_in: usize,
    c_out: usize,
    k: usize,
    transposed: bool,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let shape = if transposed { [c_in, c_out, k, k] } else { [c_out, c_in, k, k] };
    params.insert_glorot(format!("{prefix}.weight"), &shape, c_in * k * k, c_out * k * k, rng)?;
    params.insert(format!("{prefix}.bias"), Tensor::zeros([c_out]))
}

/// Builds the saliency-group parameters for `config`.
pub fn build_unet(config: &UNetConfig) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut p = ModelParams::new();
    let d = config.depth;
    for b in 0..d {
        let c_in = if b == 0 { config.input_channels } else { config.channels(b - 1) };
        let c = config.channels(b);
        add_conv(&mut p, &format!("saliency.enc{b}.conv1"), c_in, c, KERNEL, false, &mut rng)?;
        add_conv(&mut p, &format!("saliency.enc{b}.conv2"), c, c, KERNEL, false, &mut rng)?;
    }
    let cm = config.bottleneck_channels();
    add_conv(&mut p, "saliency.mid.conv1", config.channels(d - 1), cm, KERNEL, false, &mut rng)?;
    add_conv(&mut p, "saliency.mid.conv2", cm, cm, KERNEL, false, &mut rng)?;
    for b in (0..d).rev() {
        let c = config.channels(b);
        let c_in = config.channels(b + 1) + c;
        add_conv(&mut p, &format!("saliency.dec{b}.deconv1"), c_in, c, KERNEL, true, &mut rng)?;
        add_conv(&mut p, &format!("saliency.dec{b}.deconv2"), c, c, KERNEL, true, &mut rng)?;
    }
    add_conv(&mut p, "saliency.out", config.channels(0), 1, 1, false, &mut rng)?;
    Ok(p)
}

fn conv_relu(tape: &mut Tape<'_>, vars: &ParamVars, prefix: &str, x: Var) -> Result<Var> {
    let w = vars.get(&format!("{prefix}.weight"))?;
    let b = vars.get(&format!("{prefix}.bias"))?;
    let y = tape.conv2d(x, w, b, Padding::Same)?;
    tape.relu(y)
}

fn deconv_relu(tape: &mut Tape<'_>, vars: &ParamVars, prefix: &str, x: Var) -> Result<Var> {
    let w = vars.get(&format!("{prefix}.weight"))?;
    let b = vars.get(&format!("{prefix}.bias"))?;
    let y = tape.conv_transpose2d(x, w, b)?;
    tape.relu(y)
}

/// Checks that a `[C, H, W]` input fits the network.
pub fn check_input(config: &UNetConfig, shape: &[usize]) -> Result<()> {
    let &[c, h, w] = shape else {
        return Err(Error::shape(format!("network input must be [C, H, W], got {shape:?}")));
    };
    if c != config.input_channels {
        return Err(Error::shape(format!(
            "network expects {} input channels, image has {c}",
            config.input_channels
        )));
    }
    let s = config.stride();
    if h == 0 || w == 0 || h % s != 0 || w % s != 0 {
        return Err(Error::shape(format!(
            "image is {h}x{w} but both sides must be positive multiples of {s}; \
             resize it first (e.g. with resize_shorter_side)"
        )));
    }
    Ok(())
}

/// Records the network on `tape` for the `[C, H, W]` input `x`.
pub fn unet_forward(tape: &mut Tape<'_>, vars: &ParamVars, config: &UNetConfig, x: Var) -> Result<UNetVars> {
    check_input(config, tape.value(x).shape())?;
    let mut skips = Vec::with_capacity(config.depth);
    let mut h = x;
    for b in 0..config.depth {
        h = conv_relu(tape, vars, &format!("saliency.enc{b}.conv1"), h)?;
        h = conv_relu(tape, vars, &format!("saliency.enc{b}.conv2"), h)?;
        skips.push(h);
        h = tape.maxpool2d(h)?;
    }
    h = conv_relu(tape, vars, "saliency.mid.conv1", h)?;
    h = conv_relu(tape, vars, "saliency.mid.conv2", h)?;
    let bottleneck = h;
    for b in (0..config.depth).rev() {
        let up = tape.upsample_nearest(h)?;
        let cat = tape.concat_channels(&[up, skips[b]])?;
        h = deconv_relu(tape, vars, &format!("saliency.dec{b}.deconv1"), cat)?;
        h = deconv_relu(tape, vars, &format!("saliency.dec{b}.deconv2"), h)?;
    }
    let w = vars.get("saliency.out.weight")?;
    let b = vars.get("saliency.out.bias")?;
    let logits = tape.conv2d(h, w, b, Padding::Same)?;
    let map = tape.sigmoid(logits)?;
    Ok(UNetVars { logits, map, bottleneck })
}

/// Inference-only pass returning the map and bottleneck features.
pub fn forward_saliency(params: &ModelParams, config: &UNetConfig, image: &Image) -> Result<SaliencyOutput> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, GroupMask::NONE);
    let x = tape.leaf(image.to_tensor(), false);
    let out = unet_forward(&mut tape, &vars, config, x)?;
    Ok(SaliencyOutput {
        map: SaliencyMap::from_tensor(tape.value(out.map))?,
        bottleneck: tape.value(out.bottleneck).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_layers(p: &ModelParams) -> usize {
        p.names().filter(|n| n.ends_with(".weight")).count()
    }

    #[test]
    fn census_depth_one() {
        let cfg = UNetConfig { depth: 1, base_channels: 1, input_channels: 1, seed: 0 };
        let p = build_unet(&cfg).unwrap();
        assert_eq!(conv_layers(&p), 7);
        assert_eq!(p.len(), 14);
    }

    #[test]
    fn census_depth_four() {
        let cfg = UNetConfig { depth: 4, base_channels: 2, input_channels: 3, seed: 0 };
        let p = build_unet(&cfg).unwrap();
        assert_eq!(conv_layers(&p), 4 * 2 + 2 + 4 * 2 + 1);
        assert_eq!(UNetConfig::infer(&p).unwrap(), cfg);
    }

    #[test]
    fn decoder_input_is_upsampled_plus_skip() {
        let cfg = UNetConfig { depth: 3, base_channels: 4, input_channels: 3, seed: 0 };
        let p = build_unet(&cfg).unwrap();
        // transposed weights are [C_in, C_out, k, k]
        assert_eq!(p.get("saliency.dec2.deconv1.weight").unwrap().shape(), &[32 + 16, 16, 3, 3]);
        assert_eq!(p.get("saliency.dec0.deconv1.weight").unwrap().shape(), &[8 + 4, 4, 3, 3]);
        assert_eq!(p.get("saliency.out.weight").unwrap().shape(), &[1, 4, 1, 1]);
    }

    #[test]
    fn shapes_and_range() {
        let cfg = UNetConfig { depth: 3, base_channels: 2, input_channels: 3, seed: 5 };
        let p = build_unet(&cfg).unwrap();
        let data = (0..3 * 64 * 64).map(|i| ((i * 7919) % 1000) as f64 / 1000.0).collect();
        let img = Image::new(3, 64, 64, data).unwrap();
        let out = forward_saliency(&p, &cfg, &img).unwrap();
        assert_eq!((out.map.width(), out.map.height()), (64, 64));
        assert_eq!(out.bottleneck.shape(), &[16, 8, 8]);
        assert!(out.map.values().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn indivisible_input_is_rejected() {
        let cfg = UNetConfig { depth: 2, base_channels: 1, input_channels: 1, seed: 0 };
        let p = build_unet(&cfg).unwrap();
        let img = Image::filled(1, 10, 12, 0.5);
        let err = forward_saliency(&p, &cfg, &img).unwrap_err();
        assert!(matches!(err, Error::Shape(ref m) if m.contains("resize")));
    }

    #[test]
    fn invalid_config() {
        assert!(build_unet(&UNetConfig { depth: 0, ..Default::default() }).is_err());
        assert!(build_unet(&UNetConfig { base_channels: 0, ..Default::default() }).is_err());
        assert!(build_unet(&UNetConfig { input_channels: 2, ..Default::default() }).is_err());
    }
}
