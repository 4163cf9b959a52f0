//! Channel normalization, foreground cropping and lesion-biased patch sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Dims, Volume3D};

pub const DEFAULT_PERCENTILES: (f64, f64) = (0.5, 99.5);
pub const DEFAULT_CROP_THRESHOLD: f32 = 0.05;
pub const DEFAULT_PATCH: Dims = Dims::new(96, 96, 96);
pub const DEFAULT_P_LESION: f64 = 2.0 / 3.0;

/// Co-registered PET and CT volumes with an optional lesion label.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseBundle {
    pet: Volume3D,
    ct: Volume3D,
    label: Option<BinaryMask>,
}

impl CaseBundle {
    pub fn new(pet: Volume3D, ct: Volume3D, label: Option<BinaryMask>) -> Result<Self> {
        pet.ensure_same_grid(&ct, "pet vs ct")?;
        if let Some(l) = &label {
            pet.ensure_same_grid(l.as_volume(), "pet vs label")?;
        }
        Ok(CaseBundle { pet, ct, label })
    }

    pub fn pet(&self) -> &Volume3D {
        &self.pet
    }

    pub fn ct(&self) -> &Volume3D {
        &self.ct
    }

    pub fn label(&self) -> Option<&BinaryMask> {
        self.label.as_ref()
    }

    pub fn dims(&self) -> Dims {
        self.pet.dims()
    }

    pub fn into_parts(self) -> (Volume3D, Volume3D, Option<BinaryMask>) {
        (self.pet, self.ct, self.label)
    }

    fn map_all(&self, f: impl Fn(&Volume3D) -> Result<Volume3D>) -> Result<CaseBundle> {
        let label = match &self.label {
            Some(l) => Some(BinaryMask::from_volume(f(l.as_volume())?)?),
            None => None,
        };
        CaseBundle::new(f(&self.pet)?, f(&self.ct)?, label)
    }
}

/// Z-scores the volume with its own mean and population standard deviation.
/// A constant volume maps to all zeros.
pub fn suv_z_transform(pet: &Volume3D) -> Volume3D {
    let n = pet.len() as f64;
    let mean = pet.data().iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = pet
        .data()
        .iter()
        .map(|&v| {
            let d = f64::from(v) - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let sd = var.sqrt();
    if sd == 0.0 || !sd.is_finite() {
        return pet.map(|_| 0.0).expect("same grid");
    }
    pet.map(|v| ((f64::from(v) - mean) / sd) as f32).expect("finite z-scores")
}

/// Nearest-rank percentile of an ascending slice: element `ceil(p/100 * n) - 1`,
/// clamped to the valid range.
pub fn nearest_rank(sorted: &[f32], p: f64) -> f32 {
    let n = sorted.len();
    let rank = (p / 100.0 * n as f64).ceil() as i64 - 1;
    sorted[rank.clamp(0, n as i64 - 1) as usize]
}

/// Clips to the `[p_low, p_high]` nearest-rank percentiles and rescales that
/// range onto `[0, 1]`. A degenerate range yields all zeros.
pub fn ct_clip_scale(ct: &Volume3D, p_low: f64, p_high: f64) -> Result<Volume3D> {
    if !(0.0..=100.0).contains(&p_low) || !(0.0..=100.0).contains(&p_high) || p_low >= p_high {
        return Err(Error::InvalidArgument(format!(
            "percentiles must satisfy 0 <= low < high <= 100, got ({p_low}, {p_high})"
        )));
    }
    let mut sorted = ct.data().to_vec();
    sorted.sort_unstable_by(f32::total_cmp);
    let lo = nearest_rank(&sorted, p_low);
    let hi = nearest_rank(&sorted, p_high);
    if lo == hi {
        return ct.map(|_| 0.0);
    }
    let (lo, hi) = (f64::from(lo), f64::from(hi));
    ct.map(|v| ((f64::from(v).clamp(lo, hi) - lo) / (hi - lo)) as f32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Pet,
    Ct,
}

/// Half-open voxel ranges `[start, end)` along x, y and z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: (usize, usize),
    pub y: (usize, usize),
    pub z: (usize, usize),
}

impl BoundingBox {
    pub fn full(dims: Dims) -> Self {
        BoundingBox {
            x: (0, dims.nx),
            y: (0, dims.ny),
            z: (0, dims.nz),
        }
    }

    pub fn origin(&self) -> [usize; 3] {
        [self.x.0, self.y.0, self.z.0]
    }

    pub fn size(&self) -> Dims {
        Dims::new(self.x.1 - self.x.0, self.y.1 - self.y.0, self.z.1 - self.z.0)
    }
}

/// Crops every member of the bundle to the tight box around voxels of
/// `channel` strictly above `threshold`.
///
/// When nothing exceeds the threshold the bundle is returned whole with the
/// full-extent box.
pub fn foreground_crop(bundle: &CaseBundle, channel: Channel, threshold: f32) -> Result<(CaseBundle, BoundingBox)> {
    let src = match channel {
        Channel::Pet => bundle.pet(),
        Channel::Ct => bundle.ct(),
    };
    let dims = src.dims();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for (i, &v) in src.data().iter().enumerate() {
        if v > threshold {
            any = true;
            let (x, y, z) = dims.coords(i);
            for (axis, c) in [x, y, z].into_iter().enumerate() {
                lo[axis] = lo[axis].min(c);
                hi[axis] = hi[axis].max(c + 1);
            }
        }
    }
    if !any {
        log::warn!("no voxel above {threshold} in {channel:?}; skipping crop");
        return Ok((bundle.clone(), BoundingBox::full(dims)));
    }
    let bbox = BoundingBox {
        x: (lo[0], hi[0]),
        y: (lo[1], hi[1]),
        z: (lo[2], hi[2]),
    };
    let cropped = bundle.map_all(|v| v.extract(bbox.origin(), bbox.size()))?;
    Ok((cropped, bbox))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub patch_dims: Dims,
    pub p_lesion: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            patch_dims: DEFAULT_PATCH,
            p_lesion: DEFAULT_P_LESION,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_lesion) {
            return Err(Error::InvalidArgument(format!("p_lesion {} outside [0, 1]", self.p_lesion)));
        }
        if self.patch_dims.is_empty() {
            return Err(Error::InvalidArgument("patch dims must be >= 1".into()));
        }
        Ok(())
    }
}

/// One sampled training patch.
#[derive(Debug, Clone)]
pub struct PatchSample {
    pub patch: CaseBundle,
    /// The drawn center voxel, in the coordinates of the input bundle.
    pub center: (usize, usize, usize),
    /// Patch origin after clamping, in the (possibly padded) input grid.
    pub origin: [usize; 3],
    pub lesion_centered: bool,
    /// Set when lesion sampling was requested but no label voxels exist.
    pub fell_back_to_uniform: bool,
}

/// Seeded sampler of fixed-size patches centered on a lesion voxel with
/// probability `p_lesion`, otherwise on a uniformly drawn voxel.
///
/// Volumes smaller than the patch are zero-padded up to it (extra voxel on the
/// high side). Windows near the border are shifted inside the volume.
#[derive(Debug, Clone)]
pub struct PatchSampler {
    cfg: SamplerConfig,
    rng: ChaCha8Rng,
}

impl PatchSampler {
    pub fn new(cfg: SamplerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(PatchSampler {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        })
    }

    pub fn sample(&mut self, bundle: &CaseBundle) -> Result<PatchSample> {
        let dims = bundle.dims();
        let want_lesion = self.rng.gen_bool(self.cfg.p_lesion);
        let lesion_voxels: Vec<usize> = bundle
            .label()
            .map(|l| (0..dims.len()).filter(|&i| l.is_set(i)).collect())
            .unwrap_or_default();

        let fell_back = want_lesion && lesion_voxels.is_empty();
        if fell_back {
            log::warn!("lesion-centered patch requested but the label has no foreground");
        }
        let lesion_centered = want_lesion && !lesion_voxels.is_empty();
        let index = if lesion_centered {
            lesion_voxels[self.rng.gen_range(0..lesion_voxels.len())]
        } else {
            self.rng.gen_range(0..dims.len())
        };
        let center = dims.coords(index);

        let patch = self.cfg.patch_dims;
        let target = Dims::new(
            dims.nx.max(patch.nx),
            dims.ny.max(patch.ny),
            dims.nz.max(patch.nz),
        );
        let pad_low = [
            (target.nx - dims.nx) / 2,
            (target.ny - dims.ny) / 2,
            (target.nz - dims.nz) / 2,
        ];
        let padded = if target == dims {
            bundle.clone()
        } else {
            bundle.map_all(|v| v.pad(target, pad_low))?
        };
        let c = [center.0 + pad_low[0], center.1 + pad_low[1], center.2 + pad_low[2]];
        let mut origin = [0usize; 3];
        for axis in 0..3 {
            let p = patch.axis(axis);
            let start = c[axis].saturating_sub(p / 2);
            origin[axis] = start.min(target.axis(axis) - p);
        }
        let patch = padded.map_all(|v| v.extract(origin, patch))?;
        Ok(PatchSample {
            patch,
            center,
            origin,
            lesion_centered,
            fell_back_to_uniform: fell_back,
        })
    }
}
