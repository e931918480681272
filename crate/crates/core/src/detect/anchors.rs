//! Square anchors of 1x, 2x and 4x the level stride at every cell center.

use crate::pyramid::{ScaleSchedule, ANCHORS_PER_CELL};

use super::boxes::BBox;

pub const ANCHOR_MULTIPLES: [usize; ANCHORS_PER_CELL] = [1, 2, 4];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anchor {
    pub cx: f64,
    pub cy: f64,
    pub side: f64,
    /// Index of the level in the schedule.
    pub level: usize,
    pub stride: usize,
    pub row: usize,
    pub col: usize,
    pub slot: usize,
}

impl Anchor {
    pub fn bbox(&self) -> BBox {
        BBox::from_center(self.cx, self.cy, self.side, self.side)
    }
}

/// Anchors on the given schedule levels, ordered by (level, row, col, slot).
pub fn anchors_for_levels(schedule: &ScaleSchedule, levels: &[usize], input_size: usize) -> Vec<Anchor> {
    let mut out = Vec::new();
    for &level in levels {
        let stride = schedule.strides()[level];
        let side = schedule.map_size(level, input_size);
        let s = stride as f64;
        for row in 0..side {
            for col in 0..side {
                for (slot, &m) in ANCHOR_MULTIPLES.iter().enumerate() {
                    out.push(Anchor {
                        cx: (col as f64 + 0.5) * s,
                        cy: (row as f64 + 0.5) * s,
                        side: (m * stride) as f64,
                        level,
                        stride,
                        row,
                        col,
                        slot,
                    });
                }
            }
        }
    }
    out
}

/// Anchors on every level of the schedule.
pub fn gen_anchors(schedule: &ScaleSchedule, input_size: usize) -> Vec<Anchor> {
    let all: Vec<usize> = (0..schedule.len()).collect();
    anchors_for_levels(schedule, &all, input_size)
}

/// Closed-form anchor count over `levels`.
pub fn anchor_count(schedule: &ScaleSchedule, levels: &[usize], input_size: usize) -> usize {
    levels
        .iter()
        .map(|&l| ANCHORS_PER_CELL * schedule.map_size(l, input_size).pow(2))
        .sum()
}
