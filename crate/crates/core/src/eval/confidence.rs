//! Objectness confidence maps per pyramid level.

use crate::autograd::sigmoid;
use crate::detect::head::OBJ;
use crate::detect::head_outputs;
use crate::error::{invalid, Result};
use crate::kernels::ResizePlan;
use crate::pyramid::config::ANCHORS_PER_CELL;
use crate::pyramid::SfpnModel;
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor};

/// Per-cell maximum of σ(obj) over anchor slots on the `level_index`-th
/// head level of the mode, bilinearly resized to `1 x 1 x S x S`.
pub fn export_confidence<T: Scalar>(
    model: &SfpnModel<T>,
    image: &Tensor<T>,
    level_index: usize,
    sol: bool,
) -> Result<Tensor<T>> {
    let n_levels = model.schedule().head_levels(sol).len();
    if level_index >= n_levels {
        return Err(invalid(format!(
            "level index {level_index} out of range: {n_levels} head levels in this mode"
        )));
    }
    let mut s = model.session(false);
    let x = s.tape.leaf(image.clone(), false);
    let out = head_outputs(model, &mut s, x, sol)?;
    let raw = s.tape.value(out.raw[level_index]);
    let Shape4 { h, w, .. } = raw.shape();
    let pred_len = model.config().prediction_len();
    let mut cells = vec![T::zero(); h * w];
    for (i, cell) in cells.iter_mut().enumerate() {
        let (r, c) = (i / w, i % w);
        *cell = (0..ANCHORS_PER_CELL)
            .map(|slot| sigmoid(raw.at(0, slot * pred_len + OBJ, r, c)))
            .fold(T::zero(), T::max);
    }
    let size = model.config().input_size;
    let data = ResizePlan::new(h, w, size, size).forward(&cells, h, w);
    Tensor::from_vec(Shape4::new(1, 1, size, size), data)
}

/// Confidence maps for every head level of the mode, in schedule order.
pub fn export_all_confidence<T: Scalar>(model: &SfpnModel<T>, image: &Tensor<T>, sol: bool) -> Result<Vec<(usize, Tensor<T>)>> {
    let levels = model.schedule().head_levels(sol);
    levels
        .iter()
        .enumerate()
        .map(|(k, &lvl)| Ok((model.schedule().strides()[lvl], export_confidence(model, image, k, sol)?)))
        .collect()
}
