//! Named parameter storage and the SGD and Adam optimizers.

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

/// Parameters keyed by unique name, iterated in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: IndexMap<String, Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: IndexMap::new() }
    }

    /// Adds a parameter; returns its index.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<usize> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(invalid(format!("duplicate parameter name {name:?}")));
        }
        let (idx, _) = self.entries.insert_full(name, Param { value, grad: None });
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.get_index_of(name)
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.entries.get_mut(name)
    }

    pub fn by_index(&self, idx: usize) -> &Param<T> {
        &self.entries[idx]
    }

    pub fn by_index_mut(&mut self, idx: usize) -> &mut Param<T> {
        &mut self.entries[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total element count.
    pub fn numel(&self) -> usize {
        self.entries.values().map(|p| p.value.numel()).sum()
    }

    /// Element count over parameters whose name satisfies `pred`.
    pub fn numel_where(&self, pred: impl Fn(&str) -> bool) -> usize {
        self.entries.iter().filter(|(k, _)| pred(k)).map(|(_, p)| p.value.numel()).sum()
    }

    /// Records every parameter as a leaf on `tape`, in store order.
    pub fn attach(&self, tape: &mut Tape<T>, requires_grad: bool) -> Vec<Var> {
        self.entries.values().map(|p| tape.leaf(p.value.clone(), requires_grad)).collect()
    }

    /// Adds the gradients `tape` holds for `vars` (from [`attach`](Self::attach)).
    pub fn accumulate_grads(&mut self, tape: &Tape<T>, vars: &[Var]) {
        for (param, &var) in self.entries.values_mut().zip(vars) {
            if let Some(g) = tape.grad(var) {
                match &mut param.grad {
                    Some(acc) => acc.add_assign(g),
                    None => param.grad = Some(g.clone()),
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            match &mut p.grad {
                Some(g) => g.data_mut().fill(T::zero()),
                None => p.grad = Some(Tensor::zeros(p.value.shape())),
            }
        }
    }

    /// Multiplies every gradient by `k` (e.g. to average over a batch).
    pub fn scale_grads(&mut self, k: T) {
        for p in self.entries.values_mut() {
            if let Some(g) = &mut p.grad {
                g.data_mut().iter_mut().for_each(|v| *v *= k);
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| (k.clone(), Param { value: p.value.cast(), grad: p.grad.as_ref().map(Tensor::cast) }))
                .collect(),
        }
    }
}

/// Kaiming-uniform (fan-in) weights for a `[out, in, kh, kw]` kernel.
pub fn kaiming_uniform<T: Scalar, R: Rng + ?Sized>(shape: Shape4, rng: &mut R) -> Tensor<T> {
    let fan_in = (shape.c * shape.h * shape.w) as f64;
    let bound = (6.0 / fan_in).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}

/// SGD with heavy-ball momentum: `v = m v + g + d w; w -= lr v`, where the
/// decay `d` applies to weights only (biases are left undecayed).
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd<T> {
    pub momentum: T,
    pub weight_decay: T,
    velocity: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: T) -> Result<Self> {
        if !(momentum >= T::zero() && momentum < T::one()) {
            return Err(invalid(format!("momentum {momentum} outside [0, 1)")));
        }
        Ok(Self { momentum, weight_decay: T::zero(), velocity: IndexMap::new() })
    }

    pub fn with_weight_decay(mut self, decay: T) -> Result<Self> {
        if !(decay >= T::zero() && decay.is_finite()) {
            return Err(invalid(format!("weight decay {decay} must be finite and non-negative")));
        }
        self.weight_decay = decay;
        Ok(self)
    }

    pub fn velocity(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.velocity.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn set_velocity(&mut self, name: impl Into<String>, v: Tensor<T>) {
        self.velocity.insert(name.into(), v);
    }

    /// Applies one update and zeroes the gradients.
    pub fn step(&mut self, params: &mut ParamStore<T>, lr: T) -> Result<()> {
        check_grads(params, lr)?;
        for (name, p) in params.iter_mut() {
            let grad = p.grad.as_mut().expect("checked above");
            let v = self
                .velocity
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(p.value.shape()));
            let decay = if name.ends_with("bias") { T::zero() } else { self.weight_decay };
            for ((w, vv), g) in p.value.data_mut().iter_mut().zip(v.data_mut()).zip(grad.data_mut()) {
                *vv = self.momentum * *vv + *g + decay * *w;
                *w -= lr * *vv;
                *g = T::zero();
            }
            if !p.value.all_finite() {
                return Err(Error::NonFinite(format!("sgd update of {name}")));
            }
        }
        Ok(())
    }
}

fn check_grads<T: Scalar>(params: &ParamStore<T>, lr: T) -> Result<()> {
    if !(lr > T::zero()) {
        return Err(invalid(format!("learning rate {lr} must be positive")));
    }
    if let Some((name, _)) = params.iter().find(|(_, p)| p.grad.is_none()) {
        return Err(invalid(format!("parameter {name:?} has no gradient")));
    }
    Ok(())
}

/// Adam with bias correction; weight decay is added to the gradient of
/// weights (not biases) before the moment updates.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub weight_decay: T,
    steps: u64,
    first: IndexMap<String, Tensor<T>>,
    second: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(weight_decay: T) -> Result<Self> {
        if !(weight_decay >= T::zero() && weight_decay.is_finite()) {
            return Err(invalid(format!("weight decay {weight_decay} must be finite and non-negative")));
        }
        Ok(Self {
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            weight_decay,
            steps: 0,
            first: IndexMap::new(),
            second: IndexMap::new(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, lr: T) -> Result<()> {
        check_grads(params, lr)?;
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = T::one() - self.beta1.powi(t);
        let c2 = T::one() - self.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let grad = p.grad.as_mut().expect("checked above");
            let shape = p.value.shape();
            let m = self.first.entry(name.to_string()).or_insert_with(|| Tensor::zeros(shape));
            let v = self.second.entry(name.to_string()).or_insert_with(|| Tensor::zeros(shape));
            let decay = if name.ends_with("bias") { T::zero() } else { self.weight_decay };
            let w = p.value.data_mut();
            for (((w, m), v), g) in w.iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(grad.data_mut()) {
                let g2 = *g + decay * *w;
                *m = self.beta1 * *m + (T::one() - self.beta1) * g2;
                *v = self.beta2 * *v + (T::one() - self.beta2) * g2 * g2;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                *g = T::zero();
            }
            if !p.value.all_finite() {
                return Err(Error::NonFinite(format!("adam update of {name}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        })
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            _ => Err(invalid(format!("unknown optimizer {s:?} (expected sgd or adam)"))),
        }
    }
}

const STEPS_KEY: &str = "adam.steps";
const FIRST_PREFIX: &str = "adam.m:";
const SECOND_PREFIX: &str = "adam.v:";
const VELOCITY_PREFIX: &str = "velocity:";

/// Either optimizer, with its state flattened to named tensors for
/// checkpointing.
#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer<T> {
    Sgd(Sgd<T>),
    Adam(Adam<T>),
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, momentum: f64, weight_decay: f64) -> Result<Self> {
        Ok(match kind {
            OptimizerKind::Sgd => Self::Sgd(Sgd::new(T::of(momentum))?.with_weight_decay(T::of(weight_decay))?),
            OptimizerKind::Adam => Self::Adam(Adam::new(T::of(weight_decay))?),
        })
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, lr: T) -> Result<()> {
        match self {
            Self::Sgd(o) => o.step(params, lr),
            Self::Adam(o) => o.step(params, lr),
        }
    }

    /// Named state tensors; parameter names follow a kind-specific prefix.
    pub fn state(&self) -> Vec<(String, Tensor<T>)> {
        match self {
            Self::Sgd(o) => o.velocity().map(|(n, v)| (format!("{VELOCITY_PREFIX}{n}"), v.clone())).collect(),
            Self::Adam(o) => {
                // exact in f32 up to 2^24 steps
                let mut out = vec![(STEPS_KEY.to_string(), Tensor::scalar(T::of(o.steps as f64)))];
                out.extend(o.first.iter().map(|(n, t)| (format!("{FIRST_PREFIX}{n}"), t.clone())));
                out.extend(o.second.iter().map(|(n, t)| (format!("{SECOND_PREFIX}{n}"), t.clone())));
                out
            }
        }
    }

    pub fn is_state_key(key: &str) -> bool {
        key == STEPS_KEY || [VELOCITY_PREFIX, FIRST_PREFIX, SECOND_PREFIX].iter().any(|p| key.starts_with(p))
    }

    /// Restores one entry produced by [`Optimizer::state`], checking it
    /// against the parameter it belongs to.
    pub fn restore(&mut self, key: &str, value: Tensor<T>, params: &ParamStore<T>) -> Result<()> {
        let target = |prefix: &str| -> Result<String> {
            let name = &key[prefix.len()..];
            let p = params
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("optimizer state for unknown parameter {name}")))?;
            if p.value.shape() != value.shape() {
                return Err(Error::Checkpoint(format!("optimizer state shape mismatch for {name}")));
            }
            Ok(name.to_string())
        };
        match self {
            Self::Sgd(o) if key.starts_with(VELOCITY_PREFIX) => {
                let name = target(VELOCITY_PREFIX)?;
                o.set_velocity(name, value);
            }
            Self::Adam(o) if key == STEPS_KEY => o.steps = value.item().as_f64() as u64,
            Self::Adam(o) if key.starts_with(FIRST_PREFIX) => {
                let name = target(FIRST_PREFIX)?;
                o.first.insert(name, value);
            }
            Self::Adam(o) if key.starts_with(SECOND_PREFIX) => {
                let name = target(SECOND_PREFIX)?;
                o.second.insert(name, value);
            }
            _ => return Err(Error::Checkpoint(format!("state entry {key} does not fit this optimizer"))),
        }
        Ok(())
    }
}
