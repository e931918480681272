//! Mini-batch SGD training on a detection dataset.

use std::f64::consts::PI;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{decode, encode, restore, save_params};
use crate::data::DatasetRecord;
use crate::detect::{
    assign_targets, detection_loss, head_outputs, model_anchors, predict, Anchor, Detection, GroundTruthBox,
    PredictSettings,
};
use crate::error::{invalid, Error, Result};
use crate::eval::{coco_map, EvalResult};
use crate::params::{Optimizer, OptimizerKind};
use crate::pyramid::SfpnModel;
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LOG_FILE: &str = "train_log.csv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const STATE_FILE: &str = "state.ckpt";
pub const STATE_META: &str = "state.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Cosine decay floor, reached on the last step.
    pub lr_min: f64,
    /// Epochs of linear learning-rate ramp before the cosine decay.
    pub warmup_epochs: usize,
    pub optimizer: OptimizerKind,
    /// SGD only.
    pub momentum: f64,
    /// L2 decay on conv weights (not biases).
    pub weight_decay: f64,
    pub seed: u64,
    pub flip_prob: f64,
    /// Train the head on every level, as in SOL inference.
    pub sol: bool,
    pub eval: PredictSettings,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 8,
            lr: 1e-3,
            lr_min: 1e-5,
            warmup_epochs: 1,
            optimizer: OptimizerKind::Adam,
            momentum: 0.9,
            weight_decay: 0.0,
            seed: 0,
            flip_prob: 0.5,
            sol: false,
            eval: PredictSettings::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(invalid("epochs and batch size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr_min > 0.0 && self.lr_min <= self.lr) {
            return Err(invalid(format!("bad learning rates {} -> {}", self.lr, self.lr_min)));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(invalid("flip probability must be in [0, 1]"));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_images: usize) -> usize {
        n_images.div_ceil(self.batch_size)
    }

    /// Linear warmup over the first `warmup` steps, then cosine from `lr`
    /// to `lr_min` at `total - 1`.
    pub fn lr_at(&self, step: usize, total: usize, warmup: usize) -> f64 {
        if step < warmup {
            return self.lr * (step + 1) as f64 / warmup as f64;
        }
        if total <= warmup + 1 {
            return self.lr;
        }
        let t = (step - warmup).min(total - warmup - 1) as f64 / (total - warmup - 1) as f64;
        self.lr_min + 0.5 * (self.lr - self.lr_min) * (1.0 + (PI * t).cos())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_ap50: f64,
    pub lr: f64,
}

/// Everything besides the weights needed to continue a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    /// Epochs completed.
    pub epoch: usize,
    pub best_ap50: f64,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochLog>,
}

/// Sample order and flip decisions for one epoch.
pub fn epoch_plan(seed: u64, epoch: usize, n: usize, flip_prob: f64) -> Vec<(usize, bool)> {
    let mut rng = SplitMix64::for_index(seed, epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order.into_iter().map(|i| (i, rng.gen::<f64>() < flip_prob)).collect()
}

pub fn flip_sample<T: Scalar>(image: &Tensor<T>, gts: &[GroundTruthBox]) -> (Tensor<T>, Vec<GroundTruthBox>) {
    let width = image.shape().w as f64;
    let gts = gts.iter().map(|g| GroundTruthBox { bbox: g.bbox.flip_horizontal(width), class_id: g.class_id }).collect();
    (image.flip_horizontal(), gts)
}

/// Loss of one image; gradients are added to the model's parameter store.
pub fn accumulate_image<T: Scalar>(
    model: &mut SfpnModel<T>,
    anchors: &[Anchor],
    image: &Tensor<T>,
    gts: &[GroundTruthBox],
    sol: bool,
) -> Result<f64> {
    let mut s = model.session(true);
    let x = s.tape.leaf(image.clone(), false);
    let out = head_outputs(model, &mut s, x, sol)?;
    let assignment = assign_targets(gts, anchors);
    let loss = detection_loss(&mut s.tape, &out.raw, anchors, &assignment, gts, model.config().num_classes)?;
    let value = s.tape.value(loss).item().as_f64();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("training loss is {value}")));
    }
    s.tape.backward(loss)?;
    model.absorb_grads(&s);
    Ok(value)
}

/// One optimizer step on the mean loss of a batch; returns that mean.
pub fn train_step<T: Scalar>(
    model: &mut SfpnModel<T>,
    opt: &mut Optimizer<T>,
    anchors: &[Anchor],
    batch: &[(Tensor<T>, Vec<GroundTruthBox>)],
    lr: f64,
    sol: bool,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    model.params_mut().zero_grads();
    let mut total = 0.0;
    for (image, gts) in batch {
        total += accumulate_image(model, anchors, image, gts, sol)?;
    }
    model.params_mut().scale_grads(T::of(1.0 / batch.len() as f64));
    opt.step(model.params_mut(), T::of(lr))?;
    Ok(total / batch.len() as f64)
}

/// Predictions over a record set, tagged with image ids.
pub fn predict_all<T: Scalar>(
    model: &SfpnModel<T>,
    records: &[DatasetRecord<T>],
    sol: bool,
    settings: &PredictSettings,
) -> Result<Vec<(u64, Detection)>> {
    let mut out = Vec::new();
    for r in records {
        let p = predict(model, &r.image, sol, settings)?;
        out.extend(p.detections.into_iter().map(|d| (r.image_id, d)));
    }
    Ok(out)
}

pub fn evaluate<T: Scalar>(
    model: &SfpnModel<T>,
    records: &[DatasetRecord<T>],
    sol: bool,
    settings: &PredictSettings,
) -> Result<EvalResult> {
    let dets = predict_all(model, records, sol, settings)?;
    let gts: Vec<(u64, GroundTruthBox)> =
        records.iter().flat_map(|r| r.gts.iter().map(move |g| (r.image_id, *g))).collect();
    Ok(coco_map(&dets, &gts))
}

pub struct Trainer<T> {
    pub model: SfpnModel<T>,
    pub config: TrainConfig,
    pub opt: Optimizer<T>,
    pub meta: RunMeta,
    anchors: Vec<Anchor>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: SfpnModel<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let opt = Optimizer::new(config.optimizer, config.momentum, config.weight_decay)?;
        let anchors = model_anchors(&model, config.sol);
        let meta = RunMeta { epoch: 0, best_ap50: f64::NEG_INFINITY, best_epoch: None, history: Vec::new() };
        Ok(Self { model, config, opt, meta, anchors })
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    /// Runs the next epoch over `train`; returns the mean batch loss.
    pub fn run_epoch(&mut self, train: &[DatasetRecord<T>]) -> Result<(f64, f64)> {
        if train.is_empty() {
            return Err(invalid("training set is empty"));
        }
        let cfg = &self.config;
        let per_epoch = cfg.steps_per_epoch(train.len());
        let total = per_epoch * cfg.epochs;
        let warmup = (per_epoch * cfg.warmup_epochs).min(total);
        let plan = epoch_plan(cfg.seed, self.meta.epoch, train.len(), cfg.flip_prob);
        let (mut loss_sum, mut lr) = (0.0, cfg.lr);
        for (b, chunk) in plan.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(Tensor<T>, Vec<GroundTruthBox>)> = chunk
                .iter()
                .map(|&(i, flip)| {
                    let r = &train[i];
                    if flip {
                        flip_sample(&r.image, &r.gts)
                    } else {
                        (r.image.clone(), r.gts.clone())
                    }
                })
                .collect();
            lr = self.config.lr_at(self.meta.epoch * per_epoch + b, total, warmup);
            loss_sum += train_step(&mut self.model, &mut self.opt, &self.anchors, &batch, lr, self.config.sol)?;
        }
        self.meta.epoch += 1;
        Ok((loss_sum / per_epoch as f64, lr))
    }

    /// Trains until `config.epochs`, evaluating AP50 on `val` after every
    /// epoch. With `out_dir`, writes the CSV log, the best and last
    /// checkpoints, and a resumable state after each epoch.
    pub fn fit(
        &mut self,
        train: &[DatasetRecord<T>],
        val: &[DatasetRecord<T>],
        out_dir: Option<&Path>,
        on_epoch: impl FnMut(&EpochLog),
    ) -> Result<RunMeta> {
        self.fit_until(self.config.epochs, train, val, out_dir, on_epoch)
    }

    /// [`Trainer::fit`] that stops once `stop` epochs are complete; the
    /// learning-rate schedule still spans `config.epochs`.
    pub fn fit_until(
        &mut self,
        stop: usize,
        train: &[DatasetRecord<T>],
        val: &[DatasetRecord<T>],
        out_dir: Option<&Path>,
        mut on_epoch: impl FnMut(&EpochLog),
    ) -> Result<RunMeta> {
        if let Some(dir) = out_dir {
            fs::create_dir_all(dir)?;
        }
        while self.meta.epoch < stop.min(self.config.epochs) {
            let (loss, lr) = self.run_epoch(train)?;
            let val_ap50 = if val.is_empty() {
                0.0
            } else {
                evaluate(&self.model, val, false, &self.config.eval)?.ap50
            };
            let log = EpochLog { epoch: self.meta.epoch - 1, loss, val_ap50, lr };
            let improved = val_ap50 > self.meta.best_ap50;
            if improved {
                self.meta.best_ap50 = val_ap50;
                self.meta.best_epoch = Some(log.epoch);
            }
            self.meta.history.push(log.clone());
            if let Some(dir) = out_dir {
                if improved {
                    save_params(self.model.params(), &dir.join(BEST_CHECKPOINT))?;
                }
                save_params(self.model.params(), &dir.join(LAST_CHECKPOINT))?;
                self.save_state(dir)?;
                write_log(&dir.join(LOG_FILE), &self.meta.history)?;
            }
            on_epoch(&log);
        }
        Ok(self.meta.clone())
    }

    /// Parameters, optimizer state and run metadata.
    pub fn save_state(&self, dir: &Path) -> Result<()> {
        let state = self.opt.state();
        let entries = self
            .model
            .params()
            .iter()
            .map(|(n, p)| (n, &p.value))
            .chain(state.iter().map(|(n, t)| (n.as_str(), t)));
        fs::write(dir.join(STATE_FILE), encode(entries)?)?;
        fs::write(dir.join(STATE_META), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn load_state(&mut self, dir: &Path) -> Result<()> {
        let entries = decode::<T>(&fs::read(dir.join(STATE_FILE))?)?;
        let (state, params): (Vec<_>, Vec<_>) =
            entries.into_iter().partition(|(n, _)| Optimizer::<T>::is_state_key(n));
        restore(self.model.params_mut(), params.iter().map(|(n, t)| (n.as_str(), t)))?;
        let mut opt = Optimizer::new(self.config.optimizer, self.config.momentum, self.config.weight_decay)?;
        for (key, value) in state {
            opt.restore(&key, value, self.model.params())?;
        }
        self.opt = opt;
        self.meta = serde_json::from_str(&fs::read_to_string(dir.join(STATE_META))?)?;
        Ok(())
    }
}

pub fn write_log(path: &Path, history: &[EpochLog]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "epoch,loss,val_ap50,lr")?;
    for e in history {
        writeln!(f, "{},{:.6},{:.6},{:.6e}", e.epoch, e.loss, e.val_ap50, e.lr)?;
    }
    Ok(())
}
