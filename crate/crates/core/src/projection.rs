//! Maximum intensity projections and brain-uptake removal.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::components::{label_components, Connectivity};
use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Dims, Spacing, Volume3D};

pub const DEFAULT_SUV_THRESHOLD: f32 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    /// The two remaining axes, ascending.
    fn others(self) -> (usize, usize) {
        match self {
            Axis::X => (1, 2),
            Axis::Y => (0, 2),
            Axis::Z => (0, 1),
        }
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "X" | "x" => Ok(Axis::X),
            "Y" | "y" => Ok(Axis::Y),
            "Z" | "z" => Ok(Axis::Z),
            other => Err(Error::InvalidArgument(format!("unknown axis {other:?}"))),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Axis::X => "X",
            Axis::Y => "Y",
            Axis::Z => "Z",
        };
        f.write_str(s)
    }
}

/// A 2D projection. Pixel `(i, j)` lives at `i + dims[0] * j`, where `i` runs
/// along the lower-numbered remaining axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Mip2D {
    pub axis: Axis,
    pub dims: [usize; 2],
    pub data: Vec<f32>,
    pub source_dims: Dims,
}

impl Mip2D {
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i + self.dims[0] * j]
    }

    /// Embeds the projection as an `(n1, n2, 1)` volume.
    pub fn to_volume(&self, spacing: Spacing) -> Result<Volume3D> {
        Volume3D::new(Dims::new(self.dims[0], self.dims[1], 1), spacing, self.data.clone())
    }
}

/// Projects `vol` along `axis`, keeping the maximum of each line.
pub fn mip(vol: &Volume3D, axis: Axis) -> Mip2D {
    let d = vol.dims().to_array();
    let (a, b) = axis.others();
    let (n1, n2) = (d[a], d[b]);
    let mut out = vec![f32::NEG_INFINITY; n1 * n2];
    for (i, &v) in vol.data().iter().enumerate() {
        let (x, y, z) = vol.dims().coords(i);
        let c = [x, y, z];
        let slot = &mut out[c[a] + n1 * c[b]];
        if v > *slot {
            *slot = v;
        }
    }
    Mip2D {
        axis,
        dims: [n1, n2],
        data: out,
        source_dims: vol.dims(),
    }
}

/// Zeroes the largest connected component of voxels above `suv_threshold`.
/// Ties go to the component met first in scan order; with no suprathreshold
/// voxel the volume is returned unchanged.
pub fn debrain(pet: &Volume3D, suv_threshold: f32, connectivity: Connectivity) -> Result<Volume3D> {
    if !(suv_threshold.is_finite() && suv_threshold > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "debrain threshold must be positive, got {suv_threshold}"
        )));
    }
    let hot = BinaryMask::from_predicate(pet, |v| v > suv_threshold);
    let cmap = label_components(&hot, connectivity);
    let Some(largest) = cmap.largest() else {
        return Ok(pet.clone());
    };
    let data = pet
        .data()
        .iter()
        .zip(cmap.labels())
        .map(|(&v, &l)| if l == largest { 0.0 } else { v })
        .collect();
    Volume3D::new(pet.dims(), pet.spacing(), data)
}
