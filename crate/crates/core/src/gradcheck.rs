//! Finite-difference verification of the analytical gradients on the tape.
//!
//! Each op output is reduced to a scalar with fixed random weights; the
//! analytical gradient of that scalar is compared with central differences.
//! The error of one element is `|a - n| / max(|a|, |n|, floor)` where the floor
//! is `1e-3` times the largest numerical gradient magnitude of the trial, so
//! entries that are zero up to rounding do not dominate.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::crop::{AnchorGradient, AnchorParams};
use crate::error::{Error, Result};
use crate::geometry::Rect;
use crate::tape::{Padding, Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
const FLOOR_FRACTION: f64 = 1e-3;

/// Builds an op's output from its input leaves.
pub type OpBuilder<'f> = dyn Fn(&mut Tape<'_>, &[Var]) -> Result<Var> + 'f;

/// Largest relative error between analytical and central-difference gradients
/// of `sum(weights * f(inputs))` over every input element.
pub fn gradient_check(inputs: &[Tensor], eps: f64, weight_seed: u64, f: &OpBuilder<'_>) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("finite-difference step must be positive, got {eps}")));
    }
    let weights = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let out = f(&mut tape, &vars)?;
        let mut rng = ChaCha8Rng::seed_from_u64(weight_seed);
        (0..tape.value(out).numel()).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>()
    };
    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let out = f(&mut tape, &vars)?;
        let s = tape.weighted_sum(out, &weights)?;
        Ok(tape.value(s).data()[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let root = tape.weighted_sum(out, &weights)?;
    let grads = tape.backward(root)?;

    let mut pairs = Vec::new();
    let mut probe = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let zeros;
        let analytic = match grads.get(*var) {
            Some(g) => g,
            None => {
                zeros = vec![0.0; inputs[k].numel()];
                &zeros
            }
        };
        for idx in 0..inputs[k].numel() {
            let x = inputs[k].data()[idx];
            probe[k].data_mut()[idx] = x + eps;
            let up = eval(&probe)?;
            probe[k].data_mut()[idx] = x - eps;
            let down = eval(&probe)?;
            probe[k].data_mut()[idx] = x;
            pairs.push((analytic[idx], (up - down) / (2.0 * eps)));
        }
    }
    let scale = pairs.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    let floor = (FLOOR_FRACTION * scale).max(1e-12);
    Ok(pairs
        .iter()
        .map(|&(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    pub trials: usize,
    pub eps: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Check the anchor op against a deliberately wrong gradient.
    pub mutate_anchor: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            trials: 10,
            eps: DEFAULT_EPS,
            tolerance: DEFAULT_TOLERANCE,
            seed: 0,
            mutate_anchor: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckRow {
    pub op: &'static str,
    pub trials: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub rows: Vec<GradcheckRow>,
    pub elapsed_ms: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn max_error(&self) -> f64 {
        self.rows.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(0.1..0.9)).collect()).expect("shape")
}

/// Magnitudes in `[0.1, 0.9]` with random signs, away from the ReLU kink.
fn signed(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = uniform(rng, shape);
    for v in t.data_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

struct Case {
    op: &'static str,
    inputs: fn(&mut ChaCha8Rng) -> Vec<Tensor>,
    build: Box<OpBuilder<'static>>,
}

/// Anchor spread factor used by the check: small enough that random maps do
/// not push any corner against the frame, where the gradient is cut to zero.
const CHECK_GAMMA: f64 = 1.0;

fn cases(mutate_anchor: bool) -> Vec<Case> {
    let variant = if mutate_anchor { AnchorGradient::FlippedCentroidTerm } else { AnchorGradient::Exact };
    vec![
        Case {
            op: "soft_binarize",
            inputs: |r| vec![uniform(r, &[1, 6, 6])],
            build: Box::new(|t, v| t.soft_binarize(v[0], 0.01)),
        },
        Case {
            op: "anchor_region",
            inputs: |r| vec![uniform(r, &[1, 16, 16])],
            build: Box::new(move |t, v| {
                Ok(t.anchor_corners_with(v[0], &AnchorParams::with_gamma(CHECK_GAMMA), variant)?.0)
            }),
        },
        Case {
            op: "conv2d",
            inputs: |r| vec![uniform(r, &[2, 5, 5]), uniform(r, &[3, 2, 3, 3]), uniform(r, &[3])],
            build: Box::new(|t, v| t.conv2d(v[0], v[1], v[2], Padding::Same)),
        },
        Case {
            op: "conv_transpose2d",
            inputs: |r| vec![uniform(r, &[2, 5, 5]), uniform(r, &[2, 3, 3, 3]), uniform(r, &[3])],
            build: Box::new(|t, v| t.conv_transpose2d(v[0], v[1], v[2])),
        },
        Case {
            op: "maxpool2d",
            inputs: |r| vec![uniform(r, &[2, 6, 6])],
            build: Box::new(|t, v| t.maxpool2d(v[0])),
        },
        Case {
            op: "upsample_nearest",
            inputs: |r| vec![uniform(r, &[2, 3, 3])],
            build: Box::new(|t, v| t.upsample_nearest(v[0])),
        },
        Case {
            op: "concat_channels",
            inputs: |r| vec![uniform(r, &[1, 3, 3]), uniform(r, &[2, 3, 3])],
            build: Box::new(|t, v| t.concat_channels(&[v[0], v[1]])),
        },
        Case {
            op: "linear",
            inputs: |r| vec![uniform(r, &[6]), uniform(r, &[4, 6]), uniform(r, &[4])],
            build: Box::new(|t, v| t.linear(v[0], v[1], v[2])),
        },
        Case {
            op: "sigmoid",
            inputs: |r| vec![signed(r, &[10])],
            build: Box::new(|t, v| t.sigmoid(v[0])),
        },
        Case {
            op: "relu",
            inputs: |r| vec![signed(r, &[10])],
            build: Box::new(|t, v| t.relu(v[0])),
        },
        Case {
            op: "roi_pool",
            inputs: |r| vec![uniform(r, &[2, 8, 8])],
            build: Box::new(|t, v| t.roi_pool(v[0], &Rect::new(4.0, 2.0, 28.0, 30.0), 4.0, 3)),
        },
        Case {
            op: "bce_with_logits",
            inputs: |r| vec![signed(r, &[12])],
            build: Box::new(|t, v| {
                let target: Vec<f64> = (0..12).map(|i| (i % 4) as f64 / 3.0).collect();
                t.bce_with_logits(v[0], &target)
            }),
        },
    ]
}

/// Runs every op through `opts.trials` seeded trials.
pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let start = Instant::now();
    let mut rows = Vec::new();
    for (c, case) in cases(opts.mutate_anchor).into_iter().enumerate() {
        let mut worst: f64 = 0.0;
        for trial in 0..opts.trials {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream((c as u64) << 32 | trial as u64);
            let inputs = (case.inputs)(&mut rng);
            let err = gradient_check(&inputs, opts.eps, rng.random(), case.build.as_ref())?;
            worst = worst.max(err);
        }
        rows.push(GradcheckRow {
            op: case.op,
            trials: opts.trials,
            max_rel_error: worst,
            passed: worst < opts.tolerance,
        });
    }
    Ok(GradcheckReport { rows, elapsed_ms: start.elapsed().as_secs_f64() * 1e3 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ops_pass() {
        let report = run_gradcheck(&GradcheckOptions { trials: 2, ..Default::default() }).unwrap();
        for row in &report.rows {
            assert!(row.passed, "{row:?}");
        }
        assert_eq!(report.rows.len(), 12);
    }

    #[test]
    fn mutation_is_caught() {
        let report = run_gradcheck(&GradcheckOptions { trials: 2, mutate_anchor: true, ..Default::default() }).unwrap();
        let anchor = report.rows.iter().find(|r| r.op == "anchor_region").unwrap();
        assert!(!anchor.passed, "{anchor:?}");
        assert!(report.rows.iter().filter(|r| r.op != "anchor_region").all(|r| r.passed));
    }

    #[test]
    fn direct_check_and_bad_step() {
        let x = Tensor::from_vec(vec![-0.5, 0.5]);
        let err = gradient_check(&[x], 1e-6, 1, &|t, v| t.relu(v[0])).unwrap();
        assert!(err < 1e-8);
        assert!(gradient_check(&[Tensor::scalar(1.0)], 0.0, 1, &|t, v| t.relu(v[0])).is_err());
    }
}
