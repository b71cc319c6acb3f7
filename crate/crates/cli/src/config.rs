//! Run configuration: defaults, `key = value` files and flag overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};
use cropforge_core::crop::AnchorParams;
use cropforge_core::model::{Architecture, CropSettings, HeadConfig};
use cropforge_core::train::{AnchorInput, GtMode, TrainOptions, TrainingSchedule, DEFAULT_MAX_GRAD_NORM};
use cropforge_core::unet::UNetConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GtModeArg {
    CropBox,
    FullImage,
}

impl From<GtModeArg> for GtMode {
    fn from(m: GtModeArg) -> Self {
        match m {
            GtModeArg::CropBox => GtMode::CropBox,
            GtModeArg::FullImage => GtMode::FullImage,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sigma: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub target_side: usize,
    pub depth: usize,
    pub base_channels: usize,
    pub roi_grid: usize,
    pub fc1: usize,
    pub fc2: usize,
    pub seed: u64,
    pub schedule: TrainingSchedule,
    pub gt_mode: GtModeArg,
    pub teacher_forcing: bool,
    /// Zero disables clipping.
    pub max_grad_norm: f64,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let settings = CropSettings::default();
        let unet = UNetConfig::default();
        let head = HeadConfig::default();
        Self {
            sigma: settings.sigma,
            gamma: settings.anchor.gamma,
            lambda: 1.0,
            target_side: settings.target_side,
            depth: unet.depth,
            base_channels: unet.base_channels,
            roi_grid: head.roi_grid,
            fc1: head.fc1,
            fc2: head.fc2,
            seed: 0,
            schedule: TrainingSchedule::default(),
            gt_mode: GtModeArg::CropBox,
            teacher_forcing: false,
            max_grad_norm: DEFAULT_MAX_GRAD_NORM,
            data: None,
            checkpoint: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| anyhow!("invalid value {value:?} for {key}: {e}"))
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "sigma" => self.sigma = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "target_side" => self.target_side = parse(key, value)?,
            "depth" => self.depth = parse(key, value)?,
            "base_channels" => self.base_channels = parse(key, value)?,
            "roi_grid" => self.roi_grid = parse(key, value)?,
            "fc1" => self.fc1 = parse(key, value)?,
            "fc2" => self.fc2 = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "gt_mode" => {
                self.gt_mode = GtModeArg::from_str(value, false).map_err(|e| anyhow!("gt_mode: {e}"))?
            }
            "teacher_forcing" => self.teacher_forcing = parse(key, value)?,
            "max_grad_norm" => {
                let v: f64 = parse(key, value)?;
                if !(v >= 0.0 && v.is_finite()) {
                    bail!("max_grad_norm must be a finite non-negative number, got {value:?}");
                }
                self.max_grad_norm = v;
            }
            "data" => self.data = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            _ => {
                let (n, field) = key
                    .strip_prefix("stage")
                    .and_then(|rest| rest.split_once('_'))
                    .and_then(|(n, f)| n.parse::<u8>().ok().filter(|n| (1..=3).contains(n)).map(|n| (n, f)))
                    .ok_or_else(|| anyhow!("unknown config key {key:?}"))?;
                let spec = match n {
                    1 => &mut self.schedule.stage1,
                    2 => &mut self.schedule.stage2,
                    _ => &mut self.schedule.stage3,
                };
                match field {
                    "lr" => spec.learning_rate = parse(key, value)?,
                    "epochs" => spec.epochs = parse(key, value)?,
                    _ => bail!("unknown config key {key:?}"),
                }
            }
        }
        Ok(())
    }

    /// Parses a `key = value` document on top of the defaults. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", n + 1))?;
            cfg.set(k.trim(), v.trim()).with_context(|| format!("line {}", n + 1))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse_str(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            unet: UNetConfig {
                depth: self.depth,
                base_channels: self.base_channels,
                input_channels: 3,
                seed: self.seed,
            },
            head: HeadConfig { roi_grid: self.roi_grid, fc1: self.fc1, fc2: self.fc2 },
        }
    }

    pub fn crop_settings(&self) -> CropSettings {
        CropSettings {
            sigma: self.sigma,
            anchor: AnchorParams::with_gamma(self.gamma),
            target_side: self.target_side,
        }
    }

    pub fn train_options(&self, stages: Vec<u8>) -> TrainOptions {
        TrainOptions {
            schedule: self.schedule,
            settings: self.crop_settings(),
            lambda: self.lambda,
            stages,
            anchor_source: if self.teacher_forcing { AnchorInput::GroundTruth } else { AnchorInput::Predicted },
            gt_mode: self.gt_mode.into(),
            shuffle_seed: self.seed,
            max_grad_norm: (self.max_grad_norm > 0.0).then_some(self.max_grad_norm),
        }
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "sigma = {}", self.sigma)?;
        writeln!(f, "gamma = {}", self.gamma)?;
        writeln!(f, "lambda = {}", self.lambda)?;
        writeln!(f, "target_side = {}", self.target_side)?;
        writeln!(f, "depth = {}", self.depth)?;
        writeln!(f, "base_channels = {}", self.base_channels)?;
        writeln!(f, "roi_grid = {}", self.roi_grid)?;
        writeln!(f, "fc1 = {}", self.fc1)?;
        writeln!(f, "fc2 = {}", self.fc2)?;
        writeln!(f, "seed = {}", self.seed)?;
        for (n, s) in [self.schedule.stage1, self.schedule.stage2, self.schedule.stage3].iter().enumerate() {
            writeln!(f, "stage{}_lr = {}", n + 1, s.learning_rate)?;
            writeln!(f, "stage{}_epochs = {}", n + 1, s.epochs)?;
        }
        let mode = self.gt_mode.to_possible_value().expect("not skipped");
        writeln!(f, "gt_mode = {}", mode.get_name())?;
        writeln!(f, "teacher_forcing = {}", self.teacher_forcing)?;
        writeln!(f, "max_grad_norm = {}", self.max_grad_norm)?;
        if let Some(p) = &self.data {
            writeln!(f, "data = {}", p.display())?;
        }
        if let Some(p) = &self.checkpoint {
            writeln!(f, "checkpoint = {}", p.display())?;
        }
        Ok(())
    }
}

/// Flags shared by the model-running subcommands. Each overrides the value
/// from `--config`, which overrides the built-in default.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Soft binarization scale.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Anchor spread in standard deviations.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Weight of the offset loss in joint training.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Shorter image side fed to the network.
    #[arg(long)]
    pub target_side: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub base_channels: Option<usize>,
    #[arg(long)]
    pub roi_grid: Option<usize>,
    #[arg(long)]
    pub fc1: Option<usize>,
    #[arg(long)]
    pub fc2: Option<usize>,
    #[arg(long, env = "CROPFORGE_SEED")]
    pub seed: Option<u64>,
    /// Per-stage overrides such as `stage1_epochs=2` or `stage3_lr=1e-6`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv.split_once('=').ok_or_else(|| anyhow!("--set expects KEY=VALUE, got {kv:?}"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            )*};
        }
        take!(sigma, gamma, lambda, target_side, depth, base_channels, roi_grid, fc1, fc2, seed);
        Ok(cfg)
    }
}
