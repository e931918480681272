//! Independent reference implementations shared by the oracle tests and
//! the acceptance runner. Nothing here calls the library code it checks.

#![allow(dead_code)]

use rand::Rng;
use sfpn_core::detect::{iou, Anchor, AnchorState, BBox, Detection, GroundTruthBox};
use sfpn_core::rng::SplitMix64;
use sfpn_core::{Shape4, Tape, Tensor, Var};

pub type Rng64 = SplitMix64;

pub fn rng(seed: u64) -> Rng64 {
    SplitMix64::new(seed)
}

pub fn uniform(shape: Shape4, lo: f64, hi: f64, rng: &mut Rng64) -> Tensor<f64> {
    Tensor::uniform(shape, lo, hi, rng)
}

/// Integer-valued tensor in `[-k, k]`; sums of products stay exact in f64.
pub fn integer_tensor(shape: Shape4, k: i64, rng: &mut Rng64) -> Tensor<f64> {
    let data = (0..shape.numel()).map(|_| rng.gen_range(-k..=k) as f64).collect();
    Tensor::from_vec(shape, data).unwrap()
}

// ---------------------------------------------------------------- conv

/// Cross-correlation by six nested loops (plus batch).
pub fn naive_conv2d(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &[f64],
    stride: usize,
    pad: usize,
) -> Tensor<f64> {
    let xs = x.shape();
    let ws = w.shape();
    let oh = (xs.h + 2 * pad - ws.h) / stride + 1;
    let ow = (xs.w + 2 * pad - ws.w) / stride + 1;
    let mut out = Tensor::zeros(Shape4::new(xs.n, ws.n, oh, ow));
    for n in 0..xs.n {
        for o in 0..ws.n {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = b[o];
                    for c in 0..xs.c {
                        for ky in 0..ws.h {
                            for kx in 0..ws.w {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xo * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= xs.h as isize || ix >= xs.w as isize {
                                    continue;
                                }
                                acc += x.at(n, c, iy as usize, ix as usize) * w.at(o, c, ky, kx);
                            }
                        }
                    }
                    out.set(n, o, y, xo, acc);
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------- resize

fn source_coord(d: usize, src: usize, dst: usize) -> (usize, usize, f64) {
    let s = ((d as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
    let lo = s.floor() as usize;
    let hi = (lo + 1).min(src - 1);
    (lo, hi, s - lo as f64)
}

/// Half-pixel bilinear resize evaluated pixel by pixel.
pub fn naive_resize(x: &Tensor<f64>, oh: usize, ow: usize) -> Tensor<f64> {
    let s = x.shape();
    let mut out = Tensor::zeros(Shape4::new(s.n, s.c, oh, ow));
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..oh {
                let (y0, y1, fy) = source_coord(y, s.h, oh);
                for xo in 0..ow {
                    let (x0, x1, fx) = source_coord(xo, s.w, ow);
                    let top = x.at(n, c, y0, x0) * (1.0 - fx) + x.at(n, c, y0, x1) * fx;
                    let bot = x.at(n, c, y1, x0) * (1.0 - fx) + x.at(n, c, y1, x1) * fx;
                    out.set(n, c, y, xo, top * (1.0 - fy) + bot * fy);
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------- gradients

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|)` over whole vectors; zero when both vanish.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb: f64 = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Builds a scalar from leaves `inputs` on a fresh tape.
pub type GraphFn<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> Var + 'a;

/// Analytic gradients of the scalar graph with respect to every input.
pub fn analytic_grads(f: &GraphFn<'_>, inputs: &[Tensor<f64>]) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars);
    let value = tape.value(out).item();
    tape.backward(out).unwrap();
    let grads = vars.iter().map(|&v| tape.grad(v).unwrap().data().to_vec()).collect();
    (value, grads)
}

pub fn eval_scalar(f: &GraphFn<'_>, inputs: &[Tensor<f64>]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let out = f(&mut tape, &vars);
    tape.value(out).item()
}

/// Central differences at the given (input, element) coordinates.
pub fn numeric_grads(f: &GraphFn<'_>, inputs: &[Tensor<f64>], coords: &[(usize, usize)]) -> Vec<f64> {
    coords
        .iter()
        .map(|&(i, e)| {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[e] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[e] -= FD_STEP;
            (eval_scalar(f, &plus) - eval_scalar(f, &minus)) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Relative error between analytic and numeric gradients over every
/// element of every input, or `max_coords` sampled elements when larger.
pub fn grad_check(f: &GraphFn<'_>, inputs: &[Tensor<f64>], max_coords: usize, rng: &mut Rng64) -> f64 {
    let (_, grads) = analytic_grads(f, inputs);
    let all: Vec<(usize, usize)> =
        inputs.iter().enumerate().flat_map(|(i, t)| (0..t.numel()).map(move |e| (i, e))).collect();
    let coords: Vec<(usize, usize)> = if all.len() <= max_coords {
        all
    } else {
        (0..max_coords).map(|_| all[rng.gen_range(0..all.len())]).collect()
    };
    let analytic: Vec<f64> = coords.iter().map(|&(i, e)| grads[i][e]).collect();
    rel_error(&analytic, &numeric_grads(f, inputs, &coords))
}

/// Random smooth scalar projection of a tensor: weighted BCE against
/// random targets, so upstream gradients differ per element.
pub fn project(tape: &mut Tape<f64>, v: Var, seed: u64) -> Var {
    let n = tape.value(v).numel();
    let mut r = rng(seed);
    let targets = (0..n).map(|_| r.gen::<f64>()).collect();
    let weights = (0..n).map(|_| r.gen_range(0.5..2.0)).collect();
    tape.weighted_loss(v, sfpn_core::PointLoss::BceWithLogits, targets, weights).unwrap()
}

// ---------------------------------------------------------------- nms

fn outranks(a: &Detection, b: &Detection) -> bool {
    if a.score != b.score {
        return a.score > b.score;
    }
    if a.bbox.x1 != b.bbox.x1 {
        return a.bbox.x1 < b.bbox.x1;
    }
    a.bbox.y1 < b.bbox.y1
}

/// Greedy suppression by repeated arg-max over the survivors.
pub fn brute_nms(dets: &[Detection], thr: f64, max_out: usize) -> Vec<Detection> {
    let mut alive: Vec<bool> = vec![true; dets.len()];
    let mut kept = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..dets.len() {
            if alive[i] && best.is_none_or(|b| outranks(&dets[i], &dets[b])) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        alive[b] = false;
        kept.push(dets[b]);
        for i in 0..dets.len() {
            if alive[i] && dets[i].class_id == dets[b].class_id && iou(&dets[i].bbox, &dets[b].bbox) > thr {
                alive[i] = false;
            }
        }
    }
    kept.truncate(max_out);
    kept
}

// ---------------------------------------------------------------- AP

/// AP for one class at one threshold: detections visited by repeated
/// arg-max of score (first index wins ties), each matched to the
/// highest-IoU unused ground truth of its image, 101 recall points each
/// taking the best precision at any recall at or above the point.
pub fn reference_ap(dets: &[(u64, Detection)], gts: &[(u64, BBox)], thr: f64) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let mut visited = vec![false; dets.len()];
    let mut used = vec![false; gts.len()];
    let mut points: Vec<(f64, f64)> = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for _ in 0..dets.len() {
        let mut pick: Option<usize> = None;
        for i in 0..dets.len() {
            if !visited[i] && pick.is_none_or(|p| dets[i].1.score > dets[p].1.score) {
                pick = Some(i);
            }
        }
        let i = pick.unwrap();
        visited[i] = true;
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if used[j] || g.0 != dets[i].0 {
                continue;
            }
            let v = iou(&dets[i].1.bbox, &g.1);
            if v >= thr && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            used[j] = true;
            tp += 1;
        } else {
            fp += 1;
        }
        points.push((tp as f64 / gts.len() as f64, tp as f64 / (tp + fp) as f64));
    }
    let mut total = 0.0;
    for r in 0..101 {
        let level = r as f64 / 100.0;
        let p = points.iter().filter(|(rec, _)| *rec >= level).map(|(_, p)| *p).fold(0.0, f64::max);
        total += p;
    }
    total / 101.0
}

/// (AP, AP50, AP75) averaged over classes seen in either input.
pub fn reference_map(dets: &[(u64, Detection)], gts: &[(u64, GroundTruthBox)]) -> (f64, f64, f64) {
    let mut classes: Vec<usize> = gts.iter().map(|g| g.1.class_id).chain(dets.iter().map(|d| d.1.class_id)).collect();
    classes.sort();
    classes.dedup();
    let mut per_thr = Vec::new();
    for t in 0..10 {
        let thr = (50 + 5 * t) as f64 / 100.0;
        let mut sum = 0.0;
        for &c in &classes {
            let cd: Vec<_> = dets.iter().filter(|d| d.1.class_id == c).copied().collect();
            let cg: Vec<_> = gts.iter().filter(|g| g.1.class_id == c).map(|g| (g.0, g.1.bbox)).collect();
            sum += reference_ap(&cd, &cg, thr);
        }
        per_thr.push(sum / classes.len().max(1) as f64);
    }
    (per_thr.iter().sum::<f64>() / 10.0, per_thr[0], per_thr[5])
}

// ---------------------------------------------------------------- assignment

fn center_dist2(a: &Anchor, b: &BBox) -> f64 {
    let (cx, cy) = ((b.x1 + b.x2) / 2.0, (b.y1 + b.y2) / 2.0);
    (a.cx - cx).powi(2) + (a.cy - cy).powi(2)
}

/// Exhaustive assignment: for each ground truth in order, sort every free
/// anchor by (IoU desc, stride, center distance, index) and take the first.
pub fn brute_assign(gts: &[GroundTruthBox], anchors: &[Anchor]) -> Vec<AnchorState> {
    let mut states = vec![AnchorState::Negative; anchors.len()];
    for (g, gt) in gts.iter().enumerate() {
        let mut cands: Vec<(usize, f64, usize, f64)> = (0..anchors.len())
            .filter(|&i| !matches!(states[i], AnchorState::Positive(_)))
            .map(|i| (i, iou(&anchors[i].bbox(), &gt.bbox), anchors[i].stride, center_dist2(&anchors[i], &gt.bbox)))
            .collect();
        if cands.is_empty() {
            break;
        }
        if cands.iter().all(|c| c.1 <= 0.0) {
            cands.sort_by(|a, b| a.3.total_cmp(&b.3).then(a.2.cmp(&b.2)).then(a.0.cmp(&b.0)));
        } else {
            cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)).then(a.3.total_cmp(&b.3)).then(a.0.cmp(&b.0)));
        }
        states[cands[0].0] = AnchorState::Positive(g);
    }
    for (i, a) in anchors.iter().enumerate() {
        if states[i] == AnchorState::Negative && gts.iter().any(|g| iou(&a.bbox(), &g.bbox) > 0.5) {
            states[i] = AnchorState::Ignored;
        }
    }
    states
}

// ---------------------------------------------------------------- random inputs

pub fn random_box(rng: &mut Rng64, extent: f64, grid: Option<f64>) -> BBox {
    loop {
        let mut v: [f64; 4] = std::array::from_fn(|_| rng.gen_range(0.0..extent));
        if let Some(g) = grid {
            v.iter_mut().for_each(|x| *x = (*x / g).round() * g);
        }
        let b = BBox::new(v[0].min(v[2]), v[1].min(v[3]), v[0].max(v[2]), v[1].max(v[3]));
        if b.is_valid() {
            return b;
        }
    }
}
pub mod suites;
pub mod structure;
