//! Graph-building blocks of the pyramid: backbone, SFM, SFB and the
//! front synthesis stage. Each function records onto a [`Tape`].

use crate::autograd::{Tape, Var};
use crate::error::{invalid, shape_err, Result};
use crate::scalar::Scalar;

use super::schedule::ScaleSchedule;

/// Weight and bias of one convolution, as tape variables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvUnit {
    pub weight: Var,
    pub bias: Var,
}

/// A pyramid feature map tagged with its stride.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureLevel {
    pub stride: usize,
    pub synthetic: bool,
    pub map: Var,
}

/// Resizes each input to the target stride's grid, sums them in order,
/// then applies a 3x3 convolution and relu.
pub fn sfm_fuse<T: Scalar>(
    tape: &mut Tape<T>,
    inputs: &[FeatureLevel],
    target_stride: usize,
    synthetic: bool,
    input_size: usize,
    unit: ConvUnit,
) -> Result<FeatureLevel> {
    if inputs.is_empty() || inputs.len() > 3 {
        return Err(invalid(format!("SFM takes 1 to 3 inputs, got {}", inputs.len())));
    }
    let channels = tape.shape(inputs[0].map).c;
    if let Some(bad) = inputs.iter().find(|l| tape.shape(l.map).c != channels) {
        return Err(shape_err(format!(
            "SFM inputs disagree on channels: {} vs {}",
            channels,
            tape.shape(bad.map).c
        )));
    }
    let side = input_size / target_stride;
    if side == 0 {
        return Err(invalid(format!("stride {target_stride} exceeds input size {input_size}")));
    }
    let mut acc: Option<Var> = None;
    for level in inputs {
        let s = tape.shape(level.map);
        let resized = if s.h == side && s.w == side {
            level.map
        } else {
            tape.resize_bilinear(level.map, side, side)?
        };
        acc = Some(match acc {
            None => resized,
            Some(a) => tape.add(a, resized)?,
        });
    }
    let summed = acc.expect("non-empty inputs");
    let conv = tape.conv2d(summed, unit.weight, unit.bias, 1, 1)?;
    let map = tape.relu(conv)?;
    Ok(FeatureLevel { stride: target_stride, synthetic, map })
}

/// Input level indices of each SFM in one block, in execution order:
/// odd levels first (fed by their even neighbours), then even levels
/// (fed by the freshly updated odd neighbours). Each entry lists the
/// level itself followed by its lower and upper neighbours.
pub fn sfb_wiring(levels: usize) -> Vec<(usize, Vec<usize>)> {
    let neighbours = |i: usize| {
        let mut v = vec![i];
        if i > 0 {
            v.push(i - 1);
        }
        if i + 1 < levels {
            v.push(i + 1);
        }
        v
    };
    (1..levels)
        .step_by(2)
        .chain((0..levels).step_by(2))
        .map(|i| (i, neighbours(i)))
        .collect()
}

/// One synthetic fusion block. `units[i]` is the SFM that rewrites level `i`.
pub fn sfb_pass<T: Scalar>(
    tape: &mut Tape<T>,
    levels: &[FeatureLevel],
    units: &[ConvUnit],
    input_size: usize,
) -> Result<Vec<FeatureLevel>> {
    if levels.len() < 2 {
        return Err(invalid(format!("SFB needs at least 2 levels, got {}", levels.len())));
    }
    if units.len() != levels.len() {
        return Err(invalid(format!("SFB over {} levels given {} conv units", levels.len(), units.len())));
    }
    let mut current = levels.to_vec();
    for (target, sources) in sfb_wiring(levels.len()) {
        let inputs: Vec<FeatureLevel> = sources.iter().map(|&j| current[j]).collect();
        let lvl = current[target];
        current[target] = sfm_fuse(tape, &inputs, lvl.stride, lvl.synthetic, input_size, units[target])?;
    }
    Ok(current)
}

/// For each synthetic level, the two original levels nearest in log-stride
/// (ties go to the finer stride), returned finest first.
pub fn front_sources(schedule: &ScaleSchedule) -> Vec<(usize, [usize; 2])> {
    let originals = schedule.original_indices();
    let strides = schedule.strides();
    schedule
        .synthetic_indices()
        .into_iter()
        .map(|i| {
            let target = (strides[i] as f64).ln();
            let mut ranked = originals.clone();
            // stable sort keeps finer strides first on equal distance
            ranked.sort_by(|&a, &b| {
                let da = ((strides[a] as f64).ln() - target).abs();
                let db = ((strides[b] as f64).ln() - target).abs();
                da.total_cmp(&db)
            });
            let mut pair = [ranked[0], ranked[1]];
            pair.sort_unstable();
            (i, pair)
        })
        .collect()
}

/// Builds the full level list from the three originals; `units` holds one
/// SFM per synthetic level, in schedule order.
pub fn synthesize_front<T: Scalar>(
    tape: &mut Tape<T>,
    originals: &[FeatureLevel],
    schedule: &ScaleSchedule,
    units: &[ConvUnit],
    input_size: usize,
) -> Result<Vec<FeatureLevel>> {
    let orig_idx = schedule.original_indices();
    if originals.len() != orig_idx.len()
        || originals.iter().zip(&orig_idx).any(|(l, &i)| l.stride != schedule.strides()[i])
    {
        return Err(invalid(format!(
            "original levels {:?} do not match schedule {:?}",
            originals.iter().map(|l| l.stride).collect::<Vec<_>>(),
            schedule.strides()
        )));
    }
    let sources = front_sources(schedule);
    if units.len() != sources.len() {
        return Err(invalid(format!("front synthesis needs {} units, got {}", sources.len(), units.len())));
    }
    let mut out: Vec<Option<FeatureLevel>> = vec![None; schedule.len()];
    for (l, &i) in originals.iter().zip(&orig_idx) {
        out[i] = Some(*l);
    }
    for ((target, pair), &unit) in sources.iter().zip(units) {
        let inputs = [out[pair[0]].unwrap(), out[pair[1]].unwrap()];
        out[*target] = Some(sfm_fuse(tape, &inputs, schedule.strides()[*target], true, input_size, unit)?);
    }
    Ok(out.into_iter().map(|l| l.expect("every level filled")).collect())
}

/// Five stride-2 3x3 conv+relu stages; stages 3..5 (strides 8, 16, 32)
/// each get a lateral 3x3 conv+relu to the neck width.
pub fn tiny_backbone<T: Scalar>(
    tape: &mut Tape<T>,
    image: Var,
    stages: &[ConvUnit],
    laterals: &[ConvUnit],
) -> Result<Vec<FeatureLevel>> {
    let s = tape.shape(image);
    if s.c != 3 {
        return Err(shape_err(format!("backbone expects 3-channel images, got {}", s.c)));
    }
    if s.h != s.w || !s.h.is_multiple_of(32) {
        return Err(invalid(format!("image side {}x{} is not a square multiple of 32", s.h, s.w)));
    }
    if stages.len() != 5 || laterals.len() != 3 {
        return Err(invalid("backbone needs 5 stage units and 3 lateral units"));
    }
    let mut x = image;
    let mut levels = Vec::with_capacity(3);
    for (i, unit) in stages.iter().enumerate() {
        let c = tape.conv2d(x, unit.weight, unit.bias, 2, 1)?;
        x = tape.relu(c)?;
        if i >= 2 {
            let lat = laterals[i - 2];
            let c = tape.conv2d(x, lat.weight, lat.bias, 1, 1)?;
            let map = tape.relu(c)?;
            levels.push(FeatureLevel { stride: 1 << (i + 1), synthetic: false, map });
        }
    }
    Ok(levels)
}
