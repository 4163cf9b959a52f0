//! Sliding-window inference over a patch model, late fusion of probability
//! maps and binarization.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::CaseBundle;
use crate::volume::{BinaryMask, Dims, ProbabilityVolume, Volume3D};

pub const DEFAULT_WINDOW: Dims = Dims::new(96, 96, 96);
pub const DEFAULT_OVERLAP: f64 = 0.25;
pub const DEFAULT_BINARIZE_THRESHOLD: f32 = 0.5;

/// Window origins covering a (possibly padded) volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub dims: Dims,
    pub window_dims: Dims,
    pub overlap: f64,
    pub padded_dims: Dims,
    /// Where the original grid sits inside the padded one.
    pub pad_low: [usize; 3],
    /// Window origins in padded coordinates, x varying fastest.
    pub starts: Vec<[usize; 3]>,
}

/// Per-axis window starts for one extent.
fn axis_starts(extent: usize, window: usize, overlap: f64) -> Vec<usize> {
    let stride = ((window as f64 * (1.0 - overlap)).round() as usize).max(1);
    let span = extent - window;
    let n = span.div_ceil(stride) + 1;
    let mut starts: Vec<usize> = (0..n - 1).map(|i| i * stride).collect();
    starts.push(span);
    starts
}

/// Lays out windows of `window_dims` with fractional `overlap`.
///
/// Per axis the stride is `max(1, round(window * (1 - overlap)))`, windows start
/// at multiples of the stride and the last one is pulled back to end flush with
/// the volume. Axes shorter than the window are zero-padded up to it, with the
/// odd voxel going to the high side.
pub fn plan_windows(dims: Dims, window_dims: Dims, overlap: f64) -> Result<WindowPlan> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidArgument(format!("overlap {overlap} outside [0, 1)")));
    }
    if window_dims.is_empty() || dims.is_empty() {
        return Err(Error::InvalidArgument("window and volume dims must be >= 1".into()));
    }
    let mut padded = [0usize; 3];
    let mut pad_low = [0usize; 3];
    let mut per_axis: Vec<Vec<usize>> = Vec::with_capacity(3);
    for axis in 0..3 {
        let (d, w) = (dims.axis(axis), window_dims.axis(axis));
        padded[axis] = d.max(w);
        pad_low[axis] = (padded[axis] - d) / 2;
        per_axis.push(axis_starts(padded[axis], w, overlap));
    }
    let mut starts = Vec::with_capacity(per_axis.iter().map(Vec::len).product());
    for &z in &per_axis[2] {
        for &y in &per_axis[1] {
            for &x in &per_axis[0] {
                starts.push([x, y, z]);
            }
        }
    }
    Ok(WindowPlan {
        dims,
        window_dims,
        overlap,
        padded_dims: Dims::from_array(padded),
        pad_low,
        starts,
    })
}

impl WindowPlan {
    /// How many windows cover each voxel of the padded grid.
    pub fn coverage(&self) -> Vec<u32> {
        let p = self.padded_dims;
        let w = self.window_dims;
        let mut cover = vec![0u32; p.len()];
        for s in &self.starts {
            for z in s[2]..s[2] + w.nz {
                for y in s[1]..s[1] + w.ny {
                    let row = p.index(s[0], y, z);
                    cover[row..row + w.nx].iter_mut().for_each(|c| *c += 1);
                }
            }
        }
        cover
    }
}

/// Averages overlapping window outputs with equal weight and crops the padding.
pub fn blend_windows(plan: &WindowPlan, outputs: &[Volume3D]) -> Result<ProbabilityVolume> {
    if outputs.len() != plan.starts.len() {
        return Err(Error::Contract(format!(
            "{} window outputs for a plan of {} windows",
            outputs.len(),
            plan.starts.len()
        )));
    }
    let p = plan.padded_dims;
    let w = plan.window_dims;
    let mut sum = vec![0.0f64; p.len()];
    let mut count = vec![0u32; p.len()];
    for (k, (s, out)) in plan.starts.iter().zip(outputs).enumerate() {
        check_patch(k, out, w)?;
        let data = out.data();
        for z in 0..w.nz {
            for y in 0..w.ny {
                let row = p.index(s[0], s[1] + y, s[2] + z);
                let src = w.index(0, y, z);
                for x in 0..w.nx {
                    sum[row + x] += f64::from(data[src + x]);
                    count[row + x] += 1;
                }
            }
        }
    }
    let d = plan.dims;
    let lo = plan.pad_low;
    let mut data = Vec::with_capacity(d.len());
    for z in 0..d.nz {
        for y in 0..d.ny {
            for x in 0..d.nx {
                let i = p.index(x + lo[0], y + lo[1], z + lo[2]);
                data.push((sum[i] / f64::from(count[i])) as f32);
            }
        }
    }
    let spacing = outputs.first().map(|o| o.spacing()).unwrap_or([1.0; 3]);
    ProbabilityVolume::new(Volume3D::new(d, spacing, data)?)
}

fn check_patch(window: usize, out: &Volume3D, expected: Dims) -> Result<()> {
    if out.dims() != expected {
        return Err(Error::Contract(format!(
            "window {window}: model returned {} for a {expected} patch",
            out.dims()
        )));
    }
    if let Some(v) = out.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Contract(format!(
            "window {window}: model output {v} outside [0, 1]"
        )));
    }
    Ok(())
}

/// A segmentation network seen through its input/output contract: PET and CT
/// patches in, a same-shaped foreground probability patch out.
pub trait PatchModel: Sync {
    fn predict(&self, pet: &Volume3D, ct: &Volume3D) -> Result<Volume3D>;
}

impl<F> PatchModel for F
where
    F: Fn(&Volume3D, &Volume3D) -> Result<Volume3D> + Sync,
{
    fn predict(&self, pet: &Volume3D, ct: &Volume3D) -> Result<Volume3D> {
        self(pet, ct)
    }
}

/// Runs `model` over every window of the plan (in parallel) and blends.
pub fn sliding_window_infer(
    bundle: &CaseBundle,
    model: &dyn PatchModel,
    window_dims: Dims,
    overlap: f64,
) -> Result<ProbabilityVolume> {
    let plan = plan_windows(bundle.dims(), window_dims, overlap)?;
    let (pet, ct) = if plan.padded_dims == plan.dims {
        (bundle.pet().clone(), bundle.ct().clone())
    } else {
        (
            bundle.pet().pad(plan.padded_dims, plan.pad_low)?,
            bundle.ct().pad(plan.padded_dims, plan.pad_low)?,
        )
    };
    let outputs = plan
        .starts
        .par_iter()
        .enumerate()
        .map(|(k, &s)| {
            let out = model.predict(&pet.extract(s, window_dims)?, &ct.extract(s, window_dims)?)?;
            check_patch(k, &out, window_dims)?;
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let blended = blend_windows(&plan, &outputs)?;
    ProbabilityVolume::new(Volume3D::new(
        blended.dims(),
        bundle.pet().spacing(),
        blended.into_volume().into_data(),
    )?)
}

/// Voxelwise weighted mean of aligned probability maps (equal weights by default).
///
/// Terms are summed in sorted order per voxel so the result does not depend on
/// the order of the inputs.
pub fn late_fuse(probs: &[ProbabilityVolume], weights: Option<&[f64]>) -> Result<ProbabilityVolume> {
    let first = probs
        .first()
        .ok_or_else(|| Error::InvalidArgument("late fusion needs at least one volume".into()))?;
    for (i, p) in probs.iter().enumerate().skip(1) {
        first
            .as_volume()
            .ensure_same_grid(p.as_volume(), &format!("fusion input 0 vs {i}"))?;
    }
    let weights: Vec<f64> = match weights {
        None => vec![1.0; probs.len()],
        Some(w) => {
            if w.len() != probs.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} fusion weights for {} volumes",
                    w.len(),
                    probs.len()
                )));
            }
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::InvalidArgument(format!("fusion weights must be non-negative: {w:?}")));
            }
            w.to_vec()
        }
    };
    let mut sorted_w = weights.clone();
    sorted_w.sort_by(f64::total_cmp);
    let total: f64 = sorted_w.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("fusion weights sum to zero".into()));
    }

    let mut terms = vec![0.0f64; probs.len()];
    let data = (0..first.data().len())
        .map(|i| {
            for (t, (p, w)) in terms.iter_mut().zip(probs.iter().zip(&weights)) {
                *t = w * f64::from(p.data()[i]);
            }
            terms.sort_by(f64::total_cmp);
            ((terms.iter().sum::<f64>() / total) as f32).clamp(0.0, 1.0)
        })
        .collect();
    ProbabilityVolume::new(Volume3D::new(first.dims(), first.spacing(), data)?)
}

/// Foreground where `p >= threshold`.
pub fn binarize(prob: &ProbabilityVolume, threshold: f32) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!("binarize threshold {threshold} outside [0, 1]")));
    }
    Ok(BinaryMask::from_predicate(prob.as_volume(), |p| p >= threshold))
}
