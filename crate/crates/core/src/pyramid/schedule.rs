//! Stride schedules for the 3-, 5- and 9-level pyramids.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const DEFAULT_BASE_STRIDES: [usize; 3] = [8, 16, 32];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "SFPN-3")]
    Sfpn3,
    #[serde(rename = "SFPN-5")]
    Sfpn5,
    #[serde(rename = "SFPN-9")]
    Sfpn9,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Sfpn3, Variant::Sfpn5, Variant::Sfpn9];

    pub fn level_count(self) -> usize {
        match self {
            Variant::Sfpn3 => 3,
            Variant::Sfpn5 => 5,
            Variant::Sfpn9 => 9,
        }
    }

    pub fn synthetic_count(self) -> usize {
        self.level_count() - 3
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SFPN-{}", self.level_count())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('_', "-").as_str() {
            "SFPN-3" | "3" => Ok(Variant::Sfpn3),
            "SFPN-5" | "5" => Ok(Variant::Sfpn5),
            "SFPN-9" | "9" => Ok(Variant::Sfpn9),
            _ => Err(invalid(format!("unknown variant {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    Original,
    Synthetic,
}

/// Ordered pyramid strides with their origin flags.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScaleSchedule {
    variant: Variant,
    strides: Vec<usize>,
    origins: Vec<Origin>,
}

/// Exact `stride * num / den`, or an error when it is not an integer.
fn scaled(stride: usize, num: usize, den: usize) -> Result<usize> {
    if !(stride * num).is_multiple_of(den) {
        return Err(invalid(format!("stride {stride} * {num}/{den} is not an integer")));
    }
    Ok(stride * num / den)
}

impl ScaleSchedule {
    /// Builds the schedule for `variant` around three original strides.
    ///
    /// SFPN-5 inserts `1.5 p` above each of the two finer originals;
    /// SFPN-9 additionally extends the pattern below the finest
    /// (`p/2`, `3p/4`) and above the coarsest (`1.5 p`, `2 p`).
    pub fn build(variant: Variant, base: [usize; 3]) -> Result<Self> {
        if base[0] == 0 || !(base[0] < base[1] && base[1] < base[2]) {
            return Err(invalid(format!("base strides {base:?} must be positive and strictly increasing")));
        }
        use Origin::*;
        let [a, b, c] = base;
        let levels: Vec<(usize, Origin)> = match variant {
            Variant::Sfpn3 => vec![(a, Original), (b, Original), (c, Original)],
            Variant::Sfpn5 => vec![
                (a, Original),
                (scaled(a, 3, 2)?, Synthetic),
                (b, Original),
                (scaled(b, 3, 2)?, Synthetic),
                (c, Original),
            ],
            Variant::Sfpn9 => vec![
                (scaled(a, 1, 2)?, Synthetic),
                (scaled(a, 3, 4)?, Synthetic),
                (a, Original),
                (scaled(a, 3, 2)?, Synthetic),
                (b, Original),
                (scaled(b, 3, 2)?, Synthetic),
                (c, Original),
                (scaled(c, 3, 2)?, Synthetic),
                (c * 2, Synthetic),
            ],
        };
        if levels.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(invalid(format!("base strides {base:?} give a non-monotone {variant} schedule")));
        }
        let (strides, origins) = levels.into_iter().unzip();
        Ok(Self { variant, strides, origins })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn origins(&self) -> &[Origin] {
        &self.origins
    }

    pub fn len(&self) -> usize {
        self.strides.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strides.is_empty()
    }

    pub fn max_stride(&self) -> usize {
        *self.strides.last().expect("schedule is never empty")
    }

    pub fn is_synthetic(&self, level: usize) -> bool {
        self.origins[level] == Origin::Synthetic
    }

    /// Indices of the original levels, finest first.
    pub fn original_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.is_synthetic(i)).collect()
    }

    pub fn synthetic_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_synthetic(i)).collect()
    }

    /// Square feature-map side at `level` for a given input size.
    pub fn map_size(&self, level: usize, input_size: usize) -> usize {
        input_size / self.strides[level]
    }

    /// Level indices the detection head is applied to.
    pub fn head_levels(&self, sol: bool) -> Vec<usize> {
        if sol {
            (0..self.len()).collect()
        } else {
            self.original_indices()
        }
    }
}
