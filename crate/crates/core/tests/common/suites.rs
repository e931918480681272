//! Randomized check suites. Each returns per-check summaries so the
//! test harness can assert and the acceptance runner can report.

use rand::Rng;
use sfpn_core::detect::{
    assign_targets, detection_loss, gen_anchors, head_outputs, model_anchors, nms, BBox, Detection,
    GroundTruthBox,
};
use sfpn_core::eval::coco_map;
use sfpn_core::pyramid::{sfm_fuse, ConvUnit, FeatureLevel, ModelConfig, ScaleSchedule, Variant, DEFAULT_BASE_STRIDES};
use sfpn_core::{PointLoss, SfpnModel, Shape4, Tape, Tensor, Var};

use super::*;

#[derive(Debug, Clone)]
pub struct CheckSummary {
    pub name: &'static str,
    pub trials: usize,
    /// Worst relative error for gradient checks; mismatch count for
    /// exact oracles.
    pub worst: f64,
}

impl CheckSummary {
    pub fn passed_grad(&self) -> bool {
        self.worst <= GRAD_TOL
    }
}

pub const GRAD_TRIALS: usize = 20;

fn run_grad(name: &'static str, mut trial: impl FnMut(&mut Rng64) -> f64) -> CheckSummary {
    let mut r = rng(0x6AD0 ^ name.len() as u64 ^ (name.as_bytes()[0] as u64) << 8);
    let worst = (0..GRAD_TRIALS).map(|_| trial(&mut r)).fold(0.0, f64::max);
    CheckSummary { name, trials: GRAD_TRIALS, worst }
}

fn seed(r: &mut Rng64) -> u64 {
    r.gen()
}

/// Values bounded away from zero, for ops with a kink there.
fn away_from_zero(shape: Shape4, r: &mut Rng64) -> Tensor<f64> {
    let data = (0..shape.numel())
        .map(|_| {
            let m = r.gen_range(0.05..1.5);
            if r.gen::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn small_shape(r: &mut Rng64) -> Shape4 {
    Shape4::new(r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=5), r.gen_range(1..=5))
}

pub fn conv_trial(r: &mut Rng64) -> f64 {
    let k = if r.gen::<bool>() { 3 } else { 1 };
    let stride = r.gen_range(1..=2);
    let pad = if k == 3 { r.gen_range(0..=1) } else { 0 };
    let (n, c, o) = (r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=3));
    let h = r.gen_range(k..=k + 4);
    let w = r.gen_range(k..=k + 4);
    let inputs = vec![
        uniform(Shape4::new(n, c, h, w), -1.0, 1.0, r),
        uniform(Shape4::new(o, c, k, k), -1.0, 1.0, r),
        uniform(Shape4::new(o, 1, 1, 1), -1.0, 1.0, r),
    ];
    let s = seed(r);
    let f = move |t: &mut Tape<f64>, v: &[Var]| {
        let y = t.conv2d(v[0], v[1], v[2], stride, pad).unwrap();
        project(t, y, s)
    };
    grad_check(&f, &inputs, 200, r)
}

pub fn resize_trial(r: &mut Rng64) -> f64 {
    let s = small_shape(r);
    let (oh, ow) = (r.gen_range(1..=8), r.gen_range(1..=8));
    let inputs = vec![uniform(s, -2.0, 2.0, r)];
    let sd = seed(r);
    let f = move |t: &mut Tape<f64>, v: &[Var]| {
        let y = t.resize_bilinear(v[0], oh, ow).unwrap();
        project(t, y, sd)
    };
    grad_check(&f, &inputs, 200, r)
}

fn unary_trial(r: &mut Rng64, op: fn(&mut Tape<f64>, Var) -> Var, input: Tensor<f64>) -> f64 {
    let sd = seed(r);
    let f = move |t: &mut Tape<f64>, v: &[Var]| {
        let y = op(t, v[0]);
        project(t, y, sd)
    };
    grad_check(&f, &[input], 200, r)
}

pub fn add_trial(r: &mut Rng64) -> f64 {
    let s = small_shape(r);
    let inputs = vec![uniform(s, -2.0, 2.0, r), uniform(s, -2.0, 2.0, r)];
    let sd = seed(r);
    let f = move |t: &mut Tape<f64>, v: &[Var]| {
        let y = t.add(v[0], v[1]).unwrap();
        project(t, y, sd)
    };
    grad_check(&f, &inputs, 200, r)
}

pub fn relu_trial(r: &mut Rng64) -> f64 {
    let x = away_from_zero(small_shape(r), r);
    unary_trial(r, |t, v| t.relu(v).unwrap(), x)
}

pub fn sigmoid_trial(r: &mut Rng64) -> f64 {
    let x = uniform(small_shape(r), -4.0, 4.0, r);
    unary_trial(r, |t, v| t.sigmoid(v).unwrap(), x)
}

pub fn exp_trial(r: &mut Rng64) -> f64 {
    let x = uniform(small_shape(r), -2.0, 2.0, r);
    unary_trial(r, |t, v| t.exp(v).unwrap(), x)
}

pub fn mul_scalar_trial(r: &mut Rng64) -> f64 {
    let x = uniform(small_shape(r), -2.0, 2.0, r);
    let k = r.gen_range(-3.0..3.0);
    let sd = seed(r);
    let f = move |t: &mut Tape<f64>, v: &[Var]| {
        let y = t.mul_scalar(v[0], k).unwrap();
        project(t, y, sd)
    };
    grad_check(&f, &[x], 200, r)
}

pub fn sum_trial(r: &mut Rng64) -> f64 {
    let x = uniform(small_shape(r), -2.0, 2.0, r);
    let sd = seed(r);
    let f = move |t: &mut Tape<f64>, v: &[Var]| {
        // sum feeds a non-trivial upstream gradient through the projection
        let y = t.sum(v[0]).unwrap();
        project(t, y, sd)
    };
    grad_check(&f, &[x], 200, r)
}

pub fn bce_trial(r: &mut Rng64) -> f64 {
    let s = small_shape(r);
    let x = uniform(s, -6.0, 6.0, r);
    let targets: Vec<f64> = (0..s.numel()).map(|_| if r.gen::<bool>() { r.gen() } else { r.gen_range(0..=1) as f64 }).collect();
    let weights: Vec<f64> = (0..s.numel()).map(|_| r.gen_range(0.0..2.0)).collect();
    let f = move |t: &mut Tape<f64>, v: &[Var]| {
        t.weighted_loss(v[0], PointLoss::BceWithLogits, targets.clone(), weights.clone()).unwrap()
    };
    grad_check(&f, &[x], 200, r)
}

pub fn smooth_l1_trial(r: &mut Rng64) -> f64 {
    let s = small_shape(r);
    let targets: Vec<f64> = (0..s.numel()).map(|_| r.gen_range(-2.0..2.0)).collect();
    // residuals kept clear of the kinks at 0 (none) and |d| = 1
    let x: Vec<f64> = targets
        .iter()
        .map(|t| {
            let d = loop {
                let d: f64 = r.gen_range(-3.0..3.0);
                if (d.abs() - 1.0).abs() > 0.01 {
                    break d;
                }
            };
            t + d
        })
        .collect();
    let weights: Vec<f64> = (0..s.numel()).map(|_| r.gen_range(0.0..2.0)).collect();
    let f = move |t: &mut Tape<f64>, v: &[Var]| {
        t.weighted_loss(v[0], PointLoss::SmoothL1, targets.clone(), weights.clone()).unwrap()
    };
    grad_check(&f, &[Tensor::from_vec(s, x).unwrap()], 200, r)
}

/// One SFM unit fusing three levels of different sizes onto a middle grid.
pub fn sfm_trial(r: &mut Rng64) -> f64 {
    let c = r.gen_range(1..=3);
    let input_size = 48;
    let strides = [8usize, 12, 16];
    let target = strides[r.gen_range(0..3)];
    let mut inputs: Vec<Tensor<f64>> =
        strides.iter().map(|s| uniform(Shape4::new(1, c, input_size / s, input_size / s), -1.0, 1.0, r)).collect();
    inputs.push(uniform(Shape4::new(c, c, 3, 3), -0.5, 0.5, r));
    inputs.push(uniform(Shape4::new(c, 1, 1, 1), 0.1, 0.5, r));
    let sd = seed(r);
    let f = move |t: &mut Tape<f64>, v: &[Var]| {
        let levels: Vec<FeatureLevel> =
            strides.iter().zip(v).map(|(&s, &map)| FeatureLevel { stride: s, synthetic: false, map }).collect();
        let unit = ConvUnit { weight: v[3], bias: v[4] };
        let out = sfm_fuse(t, &levels, target, true, input_size, unit).unwrap();
        project(t, out.map, sd)
    };
    grad_check(&f, &inputs, 200, r)
}

pub fn tiny_config(variant: Variant, seed: u64) -> ModelConfig {
    ModelConfig::new(variant, 2)
        .with_input_size(32)
        .with_neck_channels(3)
        .with_backbone_widths(vec![2, 3, 3, 3, 3])
        .with_seed(seed)
}

fn random_gts(r: &mut Rng64, size: f64, max: usize) -> Vec<GroundTruthBox> {
    (0..r.gen_range(0..=max))
        .map(|_| {
            let w = r.gen_range(3.0..size * 0.8);
            let h = r.gen_range(3.0..size * 0.8);
            let x = r.gen_range(0.0..size - w);
            let y = r.gen_range(0.0..size - h);
            GroundTruthBox { bbox: BBox::new(x, y, x + w, y + h), class_id: r.gen_range(0..2) }
        })
        .collect()
}

fn model_loss(model: &SfpnModel<f64>, image: &Tensor<f64>, gts: &[GroundTruthBox], sol: bool) -> f64 {
    let mut s = model.session(false);
    let x = s.tape.leaf(image.clone(), false);
    let out = head_outputs(model, &mut s, x, sol).unwrap();
    let anchors = model_anchors(model, sol);
    let asg = assign_targets(gts, &anchors);
    let l = detection_loss(&mut s.tape, &out.raw, &anchors, &asg, gts, 2).unwrap();
    s.tape.value(l).item()
}

/// Full detection loss of a small SFPN-5 with respect to sampled model
/// parameters, head included.
pub fn full_loss_trial(r: &mut Rng64) -> f64 {
    let sol = r.gen::<bool>();
    let mut model = SfpnModel::<f64>::build(tiny_config(Variant::Sfpn5, r.gen())).unwrap();
    // random head and biases so every loss term is active
    for (_, p) in model.params_mut().iter_mut() {
        if p.value.shape().c == 1 && p.value.shape().h == 1 {
            p.value = uniform(p.value.shape(), -0.3, 0.3, r);
        }
    }
    let image = uniform(Shape4::new(1, 3, 32, 32), 0.0, 1.0, r);
    let gts = random_gts(r, 32.0, 3);

    let mut s = model.session(true);
    let x = s.tape.leaf(image.clone(), false);
    let out = head_outputs(&model, &mut s, x, sol).unwrap();
    let anchors = model_anchors(&model, sol);
    let asg = assign_targets(&gts, &anchors);
    let l = detection_loss(&mut s.tape, &out.raw, &anchors, &asg, &gts, 2).unwrap();
    s.tape.backward(l).unwrap();
    model.params_mut().zero_grads();
    model.absorb_grads(&s);

    let sizes: Vec<usize> = model.params().iter().map(|(_, p)| p.value.numel()).collect();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for _ in 0..60 {
        let pi = r.gen_range(0..sizes.len());
        let e = r.gen_range(0..sizes[pi]);
        analytic.push(model.params().by_index(pi).grad.as_ref().unwrap().data()[e]);
        let orig = model.params().by_index(pi).value.data()[e];
        model.params_mut().by_index_mut(pi).value.data_mut()[e] = orig + FD_STEP;
        let lp = model_loss(&model, &image, &gts, sol);
        model.params_mut().by_index_mut(pi).value.data_mut()[e] = orig - FD_STEP;
        let lm = model_loss(&model, &image, &gts, sol);
        model.params_mut().by_index_mut(pi).value.data_mut()[e] = orig;
        numeric.push((lp - lm) / (2.0 * FD_STEP));
    }
    rel_error(&analytic, &numeric)
}

pub fn gradient_suite() -> Vec<CheckSummary> {
    vec![
        run_grad("conv2d", conv_trial),
        run_grad("resize_bilinear", resize_trial),
        run_grad("add", add_trial),
        run_grad("relu", relu_trial),
        run_grad("sigmoid", sigmoid_trial),
        run_grad("exp", exp_trial),
        run_grad("mul_scalar", mul_scalar_trial),
        run_grad("sum", sum_trial),
        run_grad("bce_with_logits", bce_trial),
        run_grad("smooth_l1", smooth_l1_trial),
        run_grad("sfm_fuse", sfm_trial),
        run_grad("detection_loss", full_loss_trial),
    ]
}

// ---------------------------------------------------------------- exact oracles

/// Integer-valued conv against the loop oracle; returns mismatching cases.
pub fn conv_oracle(cases: usize) -> CheckSummary {
    let mut r = rng(0xC0411);
    let mut bad = 0;
    for _ in 0..cases {
        let k = [1, 2, 3, 5][r.gen_range(0..4)];
        let stride = r.gen_range(1..=3);
        let pad = r.gen_range(0..=k / 2 + 1);
        let (n, c, o) = (r.gen_range(1..=2), r.gen_range(1..=4), r.gen_range(1..=4));
        let h = r.gen_range(k.max(1)..=k + 6);
        let w = r.gen_range(k.max(1)..=k + 6);
        let x = integer_tensor(Shape4::new(n, c, h, w), 5, &mut r);
        let wt = integer_tensor(Shape4::new(o, c, k, k), 5, &mut r);
        let b = integer_tensor(Shape4::new(o, 1, 1, 1), 5, &mut r);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.leaf(x.clone(), false), tape.leaf(wt.clone(), false), tape.leaf(b.clone(), false));
        let y = tape.conv2d(xv, wv, bv, stride, pad).unwrap();
        if *tape.value(y) != naive_conv2d(&x, &wt, b.data(), stride, pad) {
            bad += 1;
        }
    }
    CheckSummary { name: "conv2d_vs_loops", trials: cases, worst: bad as f64 }
}

pub fn random_detections(r: &mut Rng64, n: usize, classes: usize, extent: f64) -> Vec<Detection> {
    (0..n)
        .map(|_| {
            // coarse scores and grid coordinates force ties and equal IoUs
            let score = (r.gen_range(0..8) as f64 + 1.0) / 10.0;
            Detection { bbox: random_box(r, extent, Some(2.0)), score, class_id: r.gen_range(0..classes) }
        })
        .collect()
}

pub fn nms_oracle(cases: usize) -> CheckSummary {
    let mut r = rng(0x1135);
    let mut bad = 0;
    for _ in 0..cases {
        let n = r.gen_range(0..=20);
        let classes = r.gen_range(1..=3);
        let dets = random_detections(&mut r, n, classes, 20.0);
        let thr = [0.3, 0.5, 0.7][r.gen_range(0..3)];
        let max_out = r.gen_range(1..=25);
        if nms(&dets, thr, max_out) != brute_nms(&dets, thr, max_out) {
            bad += 1;
        }
    }
    CheckSummary { name: "nms_vs_brute_force", trials: cases, worst: bad as f64 }
}

pub fn random_eval_instance(r: &mut Rng64) -> (Vec<(u64, Detection)>, Vec<(u64, GroundTruthBox)>) {
    let images = r.gen_range(1..=3u64);
    let classes = r.gen_range(1..=3);
    let gts: Vec<(u64, GroundTruthBox)> = (0..r.gen_range(0..=5))
        .map(|_| {
            (r.gen_range(0..images), GroundTruthBox { bbox: random_box(r, 20.0, Some(1.0)), class_id: r.gen_range(0..classes) })
        })
        .collect();
    let mut dets: Vec<(u64, Detection)> = Vec::new();
    for _ in 0..r.gen_range(0..=10) {
        // half the detections are perturbed copies of ground truths
        let d = if !gts.is_empty() && r.gen::<bool>() {
            let (img, g) = gts[r.gen_range(0..gts.len())];
            let j = |r: &mut Rng64| r.gen_range(-2..=2) as f64;
            let b = BBox::new(g.bbox.x1 + j(r), g.bbox.y1 + j(r), g.bbox.x2 + j(r), g.bbox.y2 + j(r));
            let b = if b.is_valid() { b } else { g.bbox };
            let class_id = if r.gen_range(0..4) == 0 { r.gen_range(0..classes) } else { g.class_id };
            (img, Detection { bbox: b, score: r.gen_range(1..10) as f64 / 10.0, class_id })
        } else {
            let det = random_detections(r, 1, classes, 20.0)[0];
            (r.gen_range(0..images), det)
        };
        dets.push(d);
    }
    (dets, gts)
}

pub fn coco_oracle(cases: usize) -> CheckSummary {
    let mut r = rng(0xC0C0);
    let mut bad = 0;
    for _ in 0..cases {
        let (dets, gts) = random_eval_instance(&mut r);
        let got = coco_map(&dets, &gts);
        if (got.ap, got.ap50, got.ap75) != reference_map(&dets, &gts) {
            bad += 1;
        }
    }
    CheckSummary { name: "coco_map_vs_reference", trials: cases, worst: bad as f64 }
}

pub fn assign_oracle(cases: usize) -> CheckSummary {
    let mut r = rng(0xA551);
    let mut bad = 0;
    for case in 0..cases {
        let variant = Variant::ALL[case % 3];
        let size = [64, 96][r.gen_range(0..2)];
        let schedule = ScaleSchedule::build(variant, DEFAULT_BASE_STRIDES).unwrap();
        let anchors = gen_anchors(&schedule, size);
        let mut gts = random_gts(&mut r, size as f64, 5);
        if r.gen_range(0..4) == 0 && !gts.is_empty() {
            // an exact duplicate and an anchor-aligned box exercise ties
            gts.push(gts[0]);
            let a = anchors[r.gen_range(0..anchors.len())];
            gts.push(GroundTruthBox { bbox: a.bbox().clamp(size as f64, size as f64), class_id: 0 });
        }
        if assign_targets(&gts, &anchors).states != brute_assign(&gts, &anchors) {
            bad += 1;
        }
    }
    CheckSummary { name: "assign_vs_exhaustive", trials: cases, worst: bad as f64 }
}
