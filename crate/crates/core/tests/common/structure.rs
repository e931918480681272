//! Structural checks on schedules, shapes, anchors and parameter counts.
//! Each returns labelled booleans so tests can assert and the acceptance
//! runner can report.

use sfpn_core::detect::{anchors_for_levels, gen_anchors, predict, PredictSettings};
use sfpn_core::pyramid::{ModelConfig, Origin, ParamScope, ScaleSchedule, Variant, DEFAULT_BASE_STRIDES};
use sfpn_core::{SfpnModel, Shape4, Tensor};

use super::*;

pub type Check = (String, bool);

pub const NECK: usize = 112;
pub const DELTA_3_5: usize = 904_064;
pub const DELTA_5_9: usize = 1_808_128;

/// Hand count of one SFM conv unit: 3x3 weights plus bias.
pub fn sfm_unit(c: usize) -> usize {
    9 * c * c + c
}

pub fn neck_params(variant: Variant, config: impl Fn(ModelConfig) -> ModelConfig) -> usize {
    let model = SfpnModel::<f32>::build(config(ModelConfig::new(variant, 80))).unwrap();
    model.count_params(ParamScope::Neck)
}

pub fn neck_deltas(config: impl Fn(ModelConfig) -> ModelConfig + Copy) -> (usize, usize) {
    let [a, b, c] = Variant::ALL.map(|v| neck_params(v, config));
    (b - a, c - b)
}

pub fn within(value: usize, target: f64, rel: f64) -> bool {
    (value as f64 - target).abs() <= rel * target
}

/// Neck deltas at the default width, their closed form, the rounded
/// published deltas at 20% and the exact 2:1 ratio, plus independence
/// from the backbone and the input size.
pub fn param_delta_checks() -> Vec<Check> {
    let (d35, d59) = neck_deltas(|c| c);
    let mut out = vec![
        (format!("neck delta 3->5 = {d35} (expect {DELTA_3_5})"), d35 == DELTA_3_5 && d35 == 8 * sfm_unit(NECK)),
        (format!("neck delta 5->9 = {d59} (expect {DELTA_5_9})"), d59 == DELTA_5_9 && d59 == 16 * sfm_unit(NECK)),
        ("deltas within 20% of 0.9M / 1.8M".into(), within(d35, 0.9e6, 0.2) && within(d59, 1.8e6, 0.2)),
        ("delta ratio is exactly 2".into(), d59 == 2 * d35),
    ];
    let other = neck_deltas(|c| c.with_backbone_widths(vec![8, 24, 40, 80, 96]));
    out.push(("deltas independent of backbone widths".into(), other == (d35, d59)));
    let big = neck_deltas(|c| c.with_input_size(320));
    out.push(("deltas unchanged at input size 320".into(), big == (d35, d59)));
    for v in Variant::ALL {
        let build = |size: usize| {
            SfpnModel::<f32>::build(ModelConfig::new(v, 80).with_input_size(size)).unwrap().count_params(ParamScope::Total)
        };
        out.push((format!("{v} total params equal at 224 and 320"), build(224) == build(320)));
    }
    out
}

/// Total parameters with and without SOL for every variant and scope.
pub fn sol_param_checks() -> Vec<Check> {
    let scopes = [ParamScope::Backbone, ParamScope::Neck, ParamScope::Head, ParamScope::Total];
    Variant::ALL
        .iter()
        .map(|&v| {
            let count = |sol: bool| {
                let m = SfpnModel::<f32>::build(ModelConfig::new(v, 80).with_sol(sol)).unwrap();
                scopes.map(|s| m.count_params(s))
            };
            let (base, sol) = (count(false), count(true));
            (format!("{v} params base {} = SOL {}", base[3], sol[3]), base == sol)
        })
        .collect()
}

/// Every schedule invariant for one schedule built from `base`.
pub fn schedule_ok(s: &ScaleSchedule, base: [usize; 3]) -> bool {
    let strides = s.strides();
    let increasing = strides.windows(2).all(|w| w[0] < w[1]);
    let originals: Vec<usize> = s.original_indices().iter().map(|&i| strides[i]).collect();
    let synthetic = s.synthetic_indices().len() == s.variant().synthetic_count();
    let expected_synthetic = match s.variant() {
        Variant::Sfpn3 => 0,
        Variant::Sfpn5 => 2,
        Variant::Sfpn9 => 6,
    };
    // every synthetic stride is 0.5x, 1.5x or 2x of another stride
    let related = s.synthetic_indices().iter().all(|&i| {
        let x = strides[i];
        strides.iter().enumerate().any(|(j, &p)| j != i && (2 * x == 3 * p || x == 2 * p || 2 * x == p))
    });
    let flags = s.origins().len() == strides.len()
        && s.origins().iter().filter(|&&o| o == Origin::Original).count() == 3;
    increasing && originals == base && synthetic && s.len() == s.variant().level_count() && flags && related
        && s.synthetic_indices().len() == expected_synthetic
}

/// Sides of every output level for `variant` at `size`, from a real
/// forward pass at a narrow neck.
pub fn forward_sides(variant: Variant, size: usize, neck: usize) -> Vec<(usize, usize, usize, usize)> {
    let cfg = ModelConfig::new(variant, 2).with_input_size(size).with_neck_channels(neck);
    let model = SfpnModel::<f32>::build(cfg).unwrap();
    let image = Tensor::<f32>::full(Shape4::new(1, 3, size, size), 0.5);
    let maps = model.forward_maps(&image).unwrap();
    maps.iter().map(|(stride, m)| (*stride, m.shape().h, m.shape().w, m.shape().c)).collect()
}

pub fn schedule_and_shape_checks() -> Vec<Check> {
    let mut out = Vec::new();
    for v in Variant::ALL {
        let s = ScaleSchedule::build(v, DEFAULT_BASE_STRIDES).unwrap();
        out.push((format!("{v} schedule invariants {:?}", s.strides()), schedule_ok(&s, DEFAULT_BASE_STRIDES)));
    }
    let expected: [(Variant, usize, &[usize]); 6] = [
        (Variant::Sfpn3, 224, &[28, 14, 7]),
        (Variant::Sfpn5, 224, &[28, 18, 14, 9, 7]),
        (Variant::Sfpn9, 224, &[56, 37, 28, 18, 14, 9, 7, 4, 3]),
        (Variant::Sfpn3, 320, &[40, 20, 10]),
        (Variant::Sfpn5, 320, &[40, 26, 20, 13, 10]),
        (Variant::Sfpn9, 320, &[80, 53, 40, 26, 20, 13, 10, 6, 5]),
    ];
    let neck = 16;
    for (v, size, sides) in expected {
        let schedule = ScaleSchedule::build(v, DEFAULT_BASE_STRIDES).unwrap();
        let got = forward_sides(v, size, neck);
        let ok = got.len() == sides.len()
            && got.iter().zip(sides).zip(schedule.strides()).all(|(((stride, h, w, c), &side), &s)| {
                *stride == s && *h == side && *w == side && *c == neck && side == size / s
            });
        out.push((format!("{v}@{size} forward sides {sides:?}"), ok));
    }
    for v in Variant::ALL {
        let s = ScaleSchedule::build(v, DEFAULT_BASE_STRIDES).unwrap();
        for size in [96, 224, 320] {
            let closed: usize = s.strides().iter().map(|&st| 3 * (size / st) * (size / st)).sum();
            let base_closed: usize =
                s.original_indices().iter().map(|&i| 3 * (size / s.strides()[i]).pow(2)).sum();
            let ok = gen_anchors(&s, size).len() == closed
                && anchors_for_levels(&s, &s.head_levels(true), size).len() == closed
                && anchors_for_levels(&s, &s.head_levels(false), size).len() == base_closed;
            out.push((format!("{v}@{size} anchor count {closed}"), ok));
        }
    }
    // 3 * (12^2 + 6^2 + 3^2), counted by hand
    let s3 = ScaleSchedule::build(Variant::Sfpn3, DEFAULT_BASE_STRIDES).unwrap();
    out.push(("SFPN-3@96 has 567 anchors".into(), gen_anchors(&s3, 96).len() == 567));
    out.extend(wiring_checks());
    out.push(("zero neck gives all-zero maps".into(), zero_neck_is_zero()));
    out
}

/// SFM counts per block and in front, and the neck closed form.
pub fn wiring_checks() -> Vec<Check> {
    Variant::ALL
        .iter()
        .map(|&v| {
            let cfg = ModelConfig::new(v, 2).with_input_size(96).with_neck_channels(8);
            let m = SfpnModel::<f32>::build(cfg).unwrap();
            let l = m.schedule().len();
            let w = m.wiring();
            let ok = w.blocks.len() == 3
                && w.blocks.iter().all(|b| b.len() == l)
                && w.front.len() == v.synthetic_count()
                && m.count_params(ParamScope::Neck) == w.sfm_count() * sfm_unit(8);
            (format!("{v} wiring: {} front + 3x{l} block SFMs", w.front.len()), ok)
        })
        .collect()
}

pub fn zero_neck_is_zero() -> bool {
    let mut r = rng(0x2E50);
    Variant::ALL.iter().all(|&v| {
        let cfg = ModelConfig::new(v, 2).with_input_size(64).with_neck_channels(4);
        let mut m = SfpnModel::<f64>::build(cfg).unwrap();
        m.zero_params(ParamScope::Neck);
        let image = uniform(Shape4::new(1, 3, 64, 64), 0.0, 1.0, &mut r);
        m.forward_maps(&image).unwrap().iter().all(|(_, t)| t.data().iter().all(|&x| x == 0.0))
    })
}

/// Head evaluations per image for base and SOL prediction.
pub fn head_evaluations(model: &SfpnModel<f32>, image: &Tensor<f32>) -> (usize, usize) {
    let s = PredictSettings::default();
    let base = predict(model, image, false, &s).unwrap().head_evaluations;
    let sol = predict(model, image, true, &s).unwrap().head_evaluations;
    (base, sol)
}
