//! Prediction cleanup: clearing slabs at both ends of the z axis and dropping
//! near-empty predictions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::components::{label_components, Connectivity};
use crate::error::{Error, Result};
use crate::volume::BinaryMask;

pub const DEFAULT_MIN_VOXELS: usize = 10;

/// How many z-slices to clear at the low and high ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum BoundarySpec {
    Slices { lower: usize, upper: usize },
    /// Fractions of `nz` in `[0, 0.5]`, rounded down to whole slices.
    Percent { lower: f64, upper: f64 },
}

impl Default for BoundarySpec {
    fn default() -> Self {
        BoundarySpec::Slices { lower: 0, upper: 0 }
    }
}

impl BoundarySpec {
    pub fn validate(&self) -> Result<()> {
        if let BoundarySpec::Percent { lower, upper } = *self {
            for f in [lower, upper] {
                if !(0.0..=0.5).contains(&f) {
                    return Err(Error::InvalidArgument(format!(
                        "boundary fraction {f} outside [0, 0.5]"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Slices cleared at (low, high) end for a volume with `nz` slices.
    pub fn slice_counts(&self, nz: usize) -> (usize, usize) {
        match *self {
            BoundarySpec::Slices { lower, upper } => (lower, upper),
            BoundarySpec::Percent { lower, upper } => {
                // tiny epsilon keeps e.g. 0.12 * 100 from flooring to 11
                let n = |f: f64| (f * nz as f64 + 1e-9).floor() as usize;
                (n(lower), n(upper))
            }
        }
    }
}

/// Parses `slices:L,U` or `percent:F` (F in percent, applied to both ends).
impl FromStr for BoundarySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("boundary must be slices:L,U or percent:F, got {s:?}"));
        let (mode, rest) = s.trim().split_once(':').ok_or_else(bad)?;
        let spec = match mode {
            "slices" => {
                let (l, u) = rest.split_once(',').ok_or_else(bad)?;
                BoundarySpec::Slices {
                    lower: l.trim().parse().map_err(|_| bad())?,
                    upper: u.trim().parse().map_err(|_| bad())?,
                }
            }
            "percent" => {
                let f: f64 = rest.trim().trim_end_matches('%').parse().map_err(|_| bad())?;
                BoundarySpec::Percent {
                    lower: f / 100.0,
                    upper: f / 100.0,
                }
            }
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for BoundarySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundarySpec::Slices { lower, upper } => write!(f, "slices:{lower},{upper}"),
            BoundarySpec::Percent { lower, upper } if lower == upper => write!(f, "percent:{}", lower * 100.0),
            BoundarySpec::Percent { lower, upper } => {
                write!(f, "percent:{}/{}", lower * 100.0, upper * 100.0)
            }
        }
    }
}

/// Clears the lowest and highest z-slices named by `spec`. If the two slabs
/// together reach `nz`, the whole mask is cleared.
pub fn zero_z_boundaries(mask: &BinaryMask, spec: &BoundarySpec) -> Result<BinaryMask> {
    spec.validate()?;
    let d = mask.dims();
    let (lo, hi) = spec.slice_counts(d.nz);
    if lo + hi >= d.nz {
        log::warn!("boundary {spec} covers all {} slices; clearing the mask", d.nz);
        return BinaryMask::empty(d, mask.spacing());
    }
    let plane = d.nx * d.ny;
    let keep_from = lo * plane;
    let keep_to = (d.nz - hi) * plane;
    Ok(mask.retain(|i| i >= keep_from && i < keep_to))
}

/// Clears the whole prediction when it has fewer than `min_voxels` foreground voxels.
pub fn suppress_tiny_prediction(mask: &BinaryMask, min_voxels: usize) -> BinaryMask {
    if mask.count() < min_voxels {
        BinaryMask::empty(mask.dims(), mask.spacing()).expect("valid grid")
    } else {
        mask.clone()
    }
}

/// Per-component variant: drops each component smaller than `min_voxels`.
pub fn suppress_small_components(mask: &BinaryMask, min_voxels: usize, connectivity: Connectivity) -> BinaryMask {
    let cmap = label_components(mask, connectivity);
    let counts = cmap.counts();
    mask.retain(|i| {
        let l = cmap.label(i);
        l != 0 && counts[l as usize - 1] >= min_voxels
    })
}
