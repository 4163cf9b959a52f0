//! Grid types shared by every stage of the pipeline.
//!
//! All volumes store `f32` scalars in x-fastest order, so the linear index of
//! voxel `(x, y, z)` is `x + nx * (y + ny * z)`. Masks and probability maps are
//! thin wrappers that enforce a value range on top of [`Volume3D`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voxel counts along x, y and z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Dims { nx, ny, nz }
    }

    pub fn from_array(a: [usize; 3]) -> Self {
        Dims::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn len(self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.nx && y < self.ny && z < self.nz);
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub fn coords(self, index: usize) -> (usize, usize, usize) {
        let x = index % self.nx;
        let rest = index / self.nx;
        (x, rest % self.ny, rest / self.ny)
    }

    /// Size along axis 0 (x), 1 (y) or 2 (z).
    pub fn axis(self, axis: usize) -> usize {
        self.to_array()[axis]
    }

    /// Total element count, or `None` on overflow.
    pub fn checked_len(self) -> Option<usize> {
        self.nx.checked_mul(self.ny)?.checked_mul(self.nz)
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

/// Physical voxel size in millimeters along x, y and z.
pub type Spacing = [f64; 3];

fn check_spacing(spacing: Spacing) -> Result<()> {
    if spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
        Ok(())
    } else {
        Err(Error::InvalidVolume(format!(
            "spacing must be finite and positive, got {spacing:?}"
        )))
    }
}

/// A 3D scalar grid with physical voxel spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: Dims,
    spacing: Spacing,
    data: Vec<f32>,
}

impl Volume3D {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<f32>) -> Result<Self> {
        if dims.nx == 0 || dims.ny == 0 || dims.nz == 0 {
            return Err(Error::InvalidVolume(format!("dims must be positive, got {dims}")));
        }
        let expected = dims
            .checked_len()
            .ok_or_else(|| Error::InvalidVolume(format!("dims {dims} overflow")))?;
        if data.len() != expected {
            return Err(Error::InvalidVolume(format!(
                "data length {} does not match dims {dims} ({expected})",
                data.len()
            )));
        }
        check_spacing(spacing)?;
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Volume3D { dims, spacing, data })
    }

    pub fn filled(dims: Dims, spacing: Spacing, value: f32) -> Result<Self> {
        Volume3D::new(dims, spacing, vec![value; dims.checked_len().unwrap_or(0)])
    }

    pub fn zeros(dims: Dims, spacing: Spacing) -> Result<Self> {
        Volume3D::filled(dims, spacing, 0.0)
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(
        dims: Dims,
        spacing: Spacing,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.checked_len().unwrap_or(0));
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Volume3D::new(dims, spacing, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.dims.index(x, y, z)]
    }

    /// Volume of one voxel in cubic millimeters.
    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// True when dims and spacing are identical.
    pub fn same_grid(&self, other: &Volume3D) -> bool {
        self.dims == other.dims && self.spacing == other.spacing
    }

    pub(crate) fn ensure_same_grid(&self, other: &Volume3D, what: &str) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{what}: {} @ {:?} vs {} @ {:?}",
                self.dims, self.spacing, other.dims, other.spacing
            )))
        }
    }

    /// Applies `f` voxelwise, keeping the grid.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Volume3D> {
        Volume3D::new(self.dims, self.spacing, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Copies the sub-box starting at `origin` with size `size`.
    pub fn extract(&self, origin: [usize; 3], size: Dims) -> Result<Volume3D> {
        for axis in 0..3 {
            if origin[axis] + size.axis(axis) > self.dims.axis(axis) {
                return Err(Error::InvalidArgument(format!(
                    "box at {origin:?} of size {size} exceeds volume {}",
                    self.dims
                )));
            }
        }
        let mut data = Vec::with_capacity(size.len());
        for z in 0..size.nz {
            for y in 0..size.ny {
                let start = self.dims.index(origin[0], origin[1] + y, origin[2] + z);
                data.extend_from_slice(&self.data[start..start + size.nx]);
            }
        }
        Volume3D::new(size, self.spacing, data)
    }

    /// Zero-pads to `target`, placing the current grid at `offset`.
    pub fn pad(&self, target: Dims, offset: [usize; 3]) -> Result<Volume3D> {
        for axis in 0..3 {
            if offset[axis] + self.dims.axis(axis) > target.axis(axis) {
                return Err(Error::InvalidArgument(format!(
                    "cannot place {} at {offset:?} inside {target}",
                    self.dims
                )));
            }
        }
        let mut data = vec![0.0f32; target.len()];
        let d = self.dims;
        for z in 0..d.nz {
            for y in 0..d.ny {
                let src = d.index(0, y, z);
                let dst = target.index(offset[0], offset[1] + y, offset[2] + z);
                data[dst..dst + d.nx].copy_from_slice(&self.data[src..src + d.nx]);
            }
        }
        Volume3D::new(target, self.spacing, data)
    }
}

/// A volume whose voxels are exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask(Volume3D);

impl BinaryMask {
    pub fn from_volume(volume: Volume3D) -> Result<Self> {
        if let Some(i) = volume.data().iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidVolume(format!(
                "mask voxel {i} has value {}, expected 0 or 1",
                volume.data()[i]
            )));
        }
        Ok(BinaryMask(volume))
    }

    pub fn from_bools(dims: Dims, spacing: Spacing, bits: impl IntoIterator<Item = bool>) -> Result<Self> {
        let data = bits.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect();
        Ok(BinaryMask(Volume3D::new(dims, spacing, data)?))
    }

    pub fn empty(dims: Dims, spacing: Spacing) -> Result<Self> {
        Ok(BinaryMask(Volume3D::zeros(dims, spacing)?))
    }

    /// Marks every voxel where `pred` holds.
    pub fn from_predicate(volume: &Volume3D, pred: impl Fn(f32) -> bool) -> Self {
        BinaryMask(
            volume
                .map(|v| if pred(v) { 1.0 } else { 0.0 })
                .expect("0/1 values on a valid grid"),
        )
    }

    pub fn dims(&self) -> Dims {
        self.0.dims()
    }

    pub fn spacing(&self) -> Spacing {
        self.0.spacing()
    }

    #[inline]
    pub fn is_set(&self, index: usize) -> bool {
        self.0.data()[index] != 0.0
    }

    #[inline]
    pub fn is_set_at(&self, x: usize, y: usize, z: usize) -> bool {
        self.0.get(x, y, z) != 0.0
    }

    pub fn count(&self) -> usize {
        self.0.data().iter().filter(|&&v| v != 0.0).count()
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        self.0.data().iter().map(|&v| v != 0.0)
    }

    pub fn as_volume(&self) -> &Volume3D {
        &self.0
    }

    pub fn into_volume(self) -> Volume3D {
        self.0
    }

    /// Returns a copy with every voxel for which `keep` is false cleared.
    pub fn retain(&self, mut keep: impl FnMut(usize) -> bool) -> BinaryMask {
        let data = self
            .0
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| if v != 0.0 && keep(i) { 1.0 } else { 0.0 })
            .collect();
        BinaryMask(Volume3D::new(self.dims(), self.spacing(), data).expect("same grid"))
    }

    pub(crate) fn ensure_same_grid(&self, other: &BinaryMask, what: &str) -> Result<()> {
        self.0.ensure_same_grid(&other.0, what)
    }
}

/// A volume of foreground probabilities, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVolume(Volume3D);

impl ProbabilityVolume {
    pub fn new(volume: Volume3D) -> Result<Self> {
        if let Some(i) = volume.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidVolume(format!(
                "probability voxel {i} has value {}, outside [0, 1]",
                volume.data()[i]
            )));
        }
        Ok(ProbabilityVolume(volume))
    }

    pub fn zeros(dims: Dims, spacing: Spacing) -> Result<Self> {
        Ok(ProbabilityVolume(Volume3D::zeros(dims, spacing)?))
    }

    pub fn dims(&self) -> Dims {
        self.0.dims()
    }

    pub fn spacing(&self) -> Spacing {
        self.0.spacing()
    }

    pub fn data(&self) -> &[f32] {
        self.0.data()
    }

    pub fn as_volume(&self) -> &Volume3D {
        &self.0
    }

    pub fn into_volume(self) -> Volume3D {
        self.0
    }
}
