//! Named trainable parameters, their saliency/regression grouping and the SGD step.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamGroup {
    /// Weights of the saliency network.
    Saliency,
    /// Weights of the crop regression head.
    Regression,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 2] = [ParamGroup::Saliency, ParamGroup::Regression];

    pub fn prefix(self) -> &'static str {
        match self {
            ParamGroup::Saliency => "saliency.",
            ParamGroup::Regression => "regression.",
        }
    }

    /// Group implied by a parameter name's prefix.
    pub fn of(name: &str) -> Option<ParamGroup> {
        Self::ALL.into_iter().find(|g| name.starts_with(g.prefix()))
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamGroup::Saliency => "saliency",
            ParamGroup::Regression => "regression",
        })
    }
}

/// Set of groups an operation applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupMask {
    pub saliency: bool,
    pub regression: bool,
}

impl GroupMask {
    pub const ALL: GroupMask = GroupMask { saliency: true, regression: true };
    pub const NONE: GroupMask = GroupMask { saliency: false, regression: false };
    pub const SALIENCY: GroupMask = GroupMask { saliency: true, regression: false };
    pub const REGRESSION: GroupMask = GroupMask { saliency: false, regression: true };

    pub fn contains(&self, group: ParamGroup) -> bool {
        match group {
            ParamGroup::Saliency => self.saliency,
            ParamGroup::Regression => self.regression,
        }
    }
}

/// All trainable tensors, keyed by a name whose prefix fixes the group.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
    frozen: BTreeSet<ParamGroup>,
}

/// Tape handles for a bound parameter set.
#[derive(Debug, Clone, Default)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::TrainingState(format!("parameter `{name}` is not bound")))
    }
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if ParamGroup::of(&name).is_none() {
            return Err(Error::Parameter(format!(
                "parameter `{name}` must start with `saliency.` or `regression.`"
            )));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    /// Glorot-uniform weights `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn insert_glorot(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-a..=a)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn group_len(&self, group: ParamGroup) -> usize {
        self.names().filter(|n| ParamGroup::of(n) == Some(group)).count()
    }

    pub fn set_frozen(&mut self, group: ParamGroup, frozen: bool) {
        if frozen {
            self.frozen.insert(group);
        } else {
            self.frozen.remove(&group);
        }
    }

    pub fn is_frozen(&self, group: ParamGroup) -> bool {
        self.frozen.contains(&group)
    }

    /// Groups in `mask` that are not frozen.
    pub fn trainable(&self, mask: GroupMask) -> GroupMask {
        GroupMask {
            saliency: mask.saliency && !self.is_frozen(ParamGroup::Saliency),
            regression: mask.regression && !self.is_frozen(ParamGroup::Regression),
        }
    }

    /// Puts every parameter on the tape by reference. Parameters outside
    /// `trainable` become constants and receive no gradient.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, trainable: GroupMask) -> ParamVars {
        let trainable = self.trainable(trainable);
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let group = ParamGroup::of(name).expect("names are validated on insert");
                (name.clone(), tape.leaf_ref(t, trainable.contains(group)))
            })
            .collect();
        ParamVars { vars }
    }

    /// Adds the gradients of every bound parameter into its tensor.
    pub fn accumulate(&mut self, vars: &ParamVars, grads: &Gradients) -> Result<()> {
        for (name, var) in &vars.vars {
            if let Some(g) = grads.get(*var) {
                self.tensors
                    .get_mut(name)
                    .ok_or_else(|| Error::TrainingState(format!("unknown parameter `{name}`")))?
                    .accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    /// Euclidean norm of the accumulated gradients of the live groups in `mask`.
    pub fn grad_norm(&self, mask: GroupMask) -> f64 {
        let live = self.trainable(mask);
        self.iter()
            .filter(|(n, _)| live.contains(ParamGroup::of(n).expect("validated")))
            .filter_map(|(_, t)| t.grad())
            .flatten()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Multiplies the accumulated gradients of the live groups in `mask` by `factor`.
    pub fn scale_grads(&mut self, mask: GroupMask, factor: f64) {
        let live = self.trainable(mask);
        for (name, t) in self.tensors.iter_mut() {
            if live.contains(ParamGroup::of(name).expect("validated")) {
                if let Some(g) = t.grad_mut() {
                    g.iter_mut().for_each(|g| *g *= factor);
                }
            }
        }
    }

    pub fn clear_grads(&mut self) {
        self.tensors.values_mut().for_each(Tensor::clear_grad);
    }

    /// FNV-1a over the exact bit patterns of one group's values.
    pub fn fingerprint(&self, group: ParamGroup) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |b: u8| {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for (name, t) in self.iter().filter(|(n, _)| ParamGroup::of(n) == Some(group)) {
            name.bytes().for_each(&mut eat);
            for v in t.data() {
                v.to_bits().to_le_bytes().into_iter().for_each(&mut eat);
            }
        }
        h
    }
}

/// `p <- p - lr * grad` for every parameter of an unfrozen group in `mask`;
/// all accumulated gradients are cleared afterwards.
pub fn sgd_step(params: &mut ModelParams, learning_rate: f64, mask: GroupMask) -> Result<()> {
    if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
        return Err(Error::Parameter(format!(
            "learning rate must be a non-negative finite number, got {learning_rate}"
        )));
    }
    let live = params.trainable(mask);
    if let Some(name) = params
        .tensors
        .iter()
        .find(|(n, t)| live.contains(ParamGroup::of(n).expect("validated")) && t.grad().is_none())
        .map(|(n, _)| n.clone())
    {
        return Err(Error::TrainingState(format!(
            "no accumulated gradient for trainable parameter `{name}`"
        )));
    }
    for (name, t) in params.tensors.iter_mut() {
        if !live.contains(ParamGroup::of(name).expect("validated")) {
            continue;
        }
        let g = t.grad().expect("checked above").to_vec();
        t.data_mut()
            .iter_mut()
            .zip(&g)
            .for_each(|(p, g)| *p -= learning_rate * g);
    }
    params.clear_grads();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_group_params() -> ModelParams {
        let mut p = ModelParams::new();
        p.insert("saliency.w", Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        p.insert("regression.w", Tensor::from_vec(vec![1.0])).unwrap();
        p
    }

    fn give_grads(p: &mut ModelParams) {
        p.get_mut("saliency.w").unwrap().accumulate_grad(&[0.5, 0.5]).unwrap();
        p.get_mut("regression.w").unwrap().accumulate_grad(&[0.5]).unwrap();
    }

    #[test]
    fn names_must_carry_a_group() {
        let mut p = ModelParams::new();
        assert!(p.insert("other.w", Tensor::zeros([1])).is_err());
    }

    #[test]
    fn step_definition() {
        let mut p = two_group_params();
        give_grads(&mut p);
        sgd_step(&mut p, 1e-4, GroupMask::ALL).unwrap();
        assert_eq!(p.get("regression.w").unwrap().data(), &[0.99995]);
        assert!(p.get("regression.w").unwrap().grad().is_none());
    }

    #[test]
    fn zero_rate_is_identity() {
        let mut p = two_group_params();
        let before = p.clone();
        give_grads(&mut p);
        sgd_step(&mut p, 0.0, GroupMask::ALL).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn frozen_group_is_bit_identical() {
        let mut p = two_group_params();
        p.set_frozen(ParamGroup::Saliency, true);
        let fp = p.fingerprint(ParamGroup::Saliency);
        for _ in 0..5 {
            give_grads(&mut p);
            sgd_step(&mut p, 0.1, GroupMask::ALL).unwrap();
        }
        assert_eq!(p.fingerprint(ParamGroup::Saliency), fp);
        assert_ne!(p.get("regression.w").unwrap().data(), &[1.0]);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut p = two_group_params();
        p.get_mut("saliency.w").unwrap().accumulate_grad(&[1.0, 1.0]).unwrap();
        assert!(matches!(sgd_step(&mut p, 0.1, GroupMask::ALL), Err(Error::TrainingState(_))));
        // masked-out groups need no gradient
        p.get_mut("saliency.w").unwrap().accumulate_grad(&[1.0, 1.0]).unwrap();
        assert!(sgd_step(&mut p, 0.1, GroupMask::SALIENCY).is_ok());
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ModelParams::new();
        p.insert_glorot("saliency.k", &[8, 4, 3, 3], 36, 72, &mut rng).unwrap();
        let a = (6.0f64 / 108.0).sqrt();
        assert!(p.get("saliency.k").unwrap().data().iter().all(|v| v.abs() <= a));
    }
}
