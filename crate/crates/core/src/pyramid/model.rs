use crate::autograd::{Tape, Var};
use crate::error::{invalid, Result};
use crate::params::{kaiming_uniform, ParamStore};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor};

use super::config::{ModelConfig, ANCHORS_PER_CELL};
use super::ops::{front_sources, sfb_pass, sfb_wiring, synthesize_front, tiny_backbone, ConvUnit, FeatureLevel};
use super::schedule::ScaleSchedule;

/// Objectness offset within one anchor slot of the head output.
const OBJ_CHANNEL: usize = 4;

/// Head weights start at this fraction of the Kaiming bound.
pub const HEAD_INIT_SCALE: f64 = 0.1;
/// Initial objectness probability encoded in the head bias.
pub const OBJ_PRIOR: f64 = 0.01;

/// Store indices of one convolution's weight and bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSlot {
    pub weight: usize,
    pub bias: usize,
}

/// One SFM in the network: which levels it reads and which it writes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SfmNode {
    pub inputs: Vec<usize>,
    pub output: usize,
    pub conv: ConvSlot,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Wiring {
    /// SFMs creating the synthetic levels.
    pub front: Vec<SfmNode>,
    /// Per block, SFMs in execution order.
    pub blocks: Vec<Vec<SfmNode>>,
}

impl Wiring {
    pub fn sfm_count(&self) -> usize {
        self.front.len() + self.blocks.iter().map(Vec::len).sum::<usize>()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamScope {
    Backbone,
    Neck,
    Head,
    Total,
}

impl ParamScope {
    pub fn contains(self, name: &str) -> bool {
        match self {
            ParamScope::Backbone => name.starts_with("backbone."),
            ParamScope::Neck => name.starts_with("neck."),
            ParamScope::Head => name.starts_with("head."),
            ParamScope::Total => true,
        }
    }
}

/// A configured pyramid detector and its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SfpnModel<T> {
    config: ModelConfig,
    schedule: ScaleSchedule,
    params: ParamStore<T>,
    wiring: Wiring,
    stages: Vec<ConvSlot>,
    laterals: Vec<ConvSlot>,
    head: ConvSlot,
}

/// A tape with every model parameter recorded as a leaf.
pub struct Session<T> {
    pub tape: Tape<T>,
    pub vars: Vec<Var>,
}

impl<T: Scalar> Session<T> {
    pub fn unit(&self, slot: ConvSlot) -> ConvUnit {
        ConvUnit { weight: self.vars[slot.weight], bias: self.vars[slot.bias] }
    }
}

struct Builder<'a, T> {
    params: ParamStore<T>,
    rng: &'a mut SplitMix64,
}

impl<T: Scalar> Builder<'_, T> {
    fn conv(&mut self, name: &str, out_c: usize, in_c: usize, k: usize) -> Result<ConvSlot> {
        let w = kaiming_uniform(Shape4::new(out_c, in_c, k, k), self.rng);
        let weight = self.params.insert(format!("{name}.weight"), w)?;
        let bias = self.params.insert(format!("{name}.bias"), Tensor::zeros(Shape4::new(out_c, 1, 1, 1)))?;
        Ok(ConvSlot { weight, bias })
    }
}

impl<T: Scalar> SfpnModel<T> {
    /// Instantiates the architecture with seeded Kaiming-uniform weights and
    /// zero biases, except the head: its weights are scaled down by
    /// [`HEAD_INIT_SCALE`] and its objectness biases start at logit([`OBJ_PRIOR`]).
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let schedule = config.schedule()?;
        let mut rng = SplitMix64::new(config.seed);
        let mut b = Builder { params: ParamStore::new(), rng: &mut rng };
        let neck = config.neck_channels;

        let mut stages = Vec::new();
        let mut in_c = 3;
        for (i, &w) in config.backbone_widths.iter().enumerate() {
            stages.push(b.conv(&format!("backbone.stage{i}"), w, in_c, 3)?);
            in_c = w;
        }
        let mut laterals = Vec::new();
        for (j, &w) in config.backbone_widths[2..].iter().enumerate() {
            laterals.push(b.conv(&format!("backbone.lateral{j}"), neck, w, 3)?);
        }

        let mut front = Vec::new();
        for (target, pair) in front_sources(&schedule) {
            let conv = b.conv(&format!("neck.front.l{target}"), neck, neck, 3)?;
            front.push(SfmNode { inputs: pair.to_vec(), output: target, conv });
        }
        let mut blocks = Vec::new();
        for blk in 0..config.sfb_count {
            let mut nodes = Vec::new();
            for (target, inputs) in sfb_wiring(schedule.len()) {
                let conv = b.conv(&format!("neck.sfb{blk}.l{target}"), neck, neck, 3)?;
                nodes.push(SfmNode { inputs, output: target, conv });
            }
            blocks.push(nodes);
        }
        let head = b.conv("head", config.head_channels(), neck, 1)?;
        let mut params = b.params;
        let scale = T::of(HEAD_INIT_SCALE);
        params.by_index_mut(head.weight).value.data_mut().iter_mut().for_each(|w| *w *= scale);
        let prior = T::of((OBJ_PRIOR / (1.0 - OBJ_PRIOR)).ln());
        let pred_len = config.prediction_len();
        let bias = params.by_index_mut(head.bias).value.data_mut();
        for slot in 0..ANCHORS_PER_CELL {
            bias[slot * pred_len + OBJ_CHANNEL] = prior;
        }
        Ok(Self { config, schedule, params, wiring: Wiring { front, blocks }, stages, laterals, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn schedule(&self) -> &ScaleSchedule {
        &self.schedule
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn wiring(&self) -> &Wiring {
        &self.wiring
    }

    pub fn head_slot(&self) -> ConvSlot {
        self.head
    }

    pub fn count_params(&self, scope: ParamScope) -> usize {
        self.params.numel_where(|n| scope.contains(n))
    }

    /// Sets every parameter in `scope` to zero.
    pub fn zero_params(&mut self, scope: ParamScope) {
        for (name, p) in self.params.iter_mut() {
            if scope.contains(name) {
                p.value.data_mut().fill(T::zero());
            }
        }
    }

    pub fn session(&self, requires_grad: bool) -> Session<T> {
        let mut tape = Tape::new();
        let vars = self.params.attach(&mut tape, requires_grad);
        Session { tape, vars }
    }

    /// Adds the session's parameter gradients into the store.
    pub fn absorb_grads(&mut self, session: &Session<T>) {
        self.params.accumulate_grads(&session.tape, &session.vars);
    }

    /// Backbone, front synthesis and the SFB stack; returns all levels
    /// ordered by stride.
    pub fn forward(&self, s: &mut Session<T>, image: Var) -> Result<Vec<FeatureLevel>> {
        let shape = s.tape.shape(image);
        if shape.h != self.config.input_size || shape.w != self.config.input_size {
            return Err(invalid(format!(
                "image is {}x{}, model expects {}",
                shape.h, shape.w, self.config.input_size
            )));
        }
        let stages: Vec<ConvUnit> = self.stages.iter().map(|&c| s.unit(c)).collect();
        let laterals: Vec<ConvUnit> = self.laterals.iter().map(|&c| s.unit(c)).collect();
        let originals = tiny_backbone(&mut s.tape, image, &stages, &laterals)?;
        let front: Vec<ConvUnit> = self.wiring.front.iter().map(|n| s.unit(n.conv)).collect();
        let mut levels =
            synthesize_front(&mut s.tape, &originals, &self.schedule, &front, self.config.input_size)?;
        for block in &self.wiring.blocks {
            // units indexed by the level they rewrite
            let mut units = vec![None; levels.len()];
            for node in block {
                units[node.output] = Some(s.unit(node.conv));
            }
            let units: Vec<ConvUnit> = units.into_iter().map(|u| u.expect("one SFM per level")).collect();
            levels = sfb_pass(&mut s.tape, &levels, &units, self.config.input_size)?;
        }
        Ok(levels)
    }

    /// Forward pass on a plain image; returns the level tensors.
    pub fn forward_maps(&self, image: &Tensor<T>) -> Result<Vec<(usize, Tensor<T>)>> {
        let mut s = self.session(false);
        let x = s.tape.leaf(image.clone(), false);
        let levels = self.forward(&mut s, x)?;
        Ok(levels.iter().map(|l| (l.stride, s.tape.value(l.map).clone())).collect())
    }

    /// Multiply-accumulate count of one inference forward pass at batch 1,
    /// excluding the head.
    pub fn forward_macs(&self) -> usize {
        let s = self.config.input_size;
        let neck = self.config.neck_channels;
        let mut macs = 0;
        let mut in_c = 3;
        let mut side = s;
        for (i, &w) in self.config.backbone_widths.iter().enumerate() {
            side = side.div_ceil(2);
            macs += side * side * w * in_c * 9;
            if i >= 2 {
                macs += side * side * neck * w * 9;
            }
            in_c = w;
        }
        let sfm = |level: usize| {
            let side = self.schedule.map_size(level, s);
            side * side * neck * neck * 9
        };
        macs += self.wiring.front.iter().map(|n| sfm(n.output)).sum::<usize>();
        macs += self.wiring.blocks.iter().flatten().map(|n| sfm(n.output)).sum::<usize>();
        macs
    }
}
