//! Independent reference implementations used to check the library.
//! They favor obviousness over speed and share no code with the crate.

#![allow(dead_code)]

use petfuse_core::{BinaryMask, Dims, Volume3D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn neighbor_offsets(connectivity: u8) -> Vec<(i64, i64, i64)> {
    let mut out = Vec::new();
    for dz in -1i64..=1 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let nonzero = (dx != 0) as u8 + (dy != 0) as u8 + (dz != 0) as u8;
                let keep = match connectivity {
                    6 => nonzero == 1,
                    18 => nonzero == 1 || nonzero == 2,
                    26 => nonzero >= 1,
                    _ => panic!("bad connectivity {connectivity}"),
                };
                if keep {
                    out.push((dx, dy, dz));
                }
            }
        }
    }
    out
}

fn idx(d: [usize; 3], x: usize, y: usize, z: usize) -> usize {
    x + d[0] * (y + d[1] * z)
}

fn fill(bits: &[bool], d: [usize; 3], offs: &[(i64, i64, i64)], labels: &mut [u32], at: [usize; 3], label: u32) {
    let i = idx(d, at[0], at[1], at[2]);
    if !bits[i] || labels[i] != 0 {
        return;
    }
    labels[i] = label;
    for &(dx, dy, dz) in offs {
        let n = [at[0] as i64 + dx, at[1] as i64 + dy, at[2] as i64 + dz];
        if (0..3).all(|a| n[a] >= 0 && (n[a] as usize) < d[a]) {
            fill(bits, d, offs, labels, [n[0] as usize, n[1] as usize, n[2] as usize], label);
        }
    }
}

/// Recursive flood fill over x-fastest voxels. Labels start at 1 in scan order.
pub fn flood_labels(bits: &[bool], d: [usize; 3], connectivity: u8) -> (Vec<u32>, u32) {
    let offs = neighbor_offsets(connectivity);
    let mut labels = vec![0u32; bits.len()];
    let mut next = 0;
    for z in 0..d[2] {
        for y in 0..d[1] {
            for x in 0..d[0] {
                let i = idx(d, x, y, z);
                if bits[i] && labels[i] == 0 {
                    next += 1;
                    fill(bits, d, &offs, &mut labels, [x, y, z], next);
                }
            }
        }
    }
    (labels, next)
}

/// True when the two labelings induce the same partition (label values may differ).
pub fn same_partition(a: &[u32], b: &[u32]) -> bool {
    use std::collections::HashMap;
    let mut ab: HashMap<u32, u32> = HashMap::new();
    let mut ba: HashMap<u32, u32> = HashMap::new();
    a.iter().zip(b).all(|(&x, &y)| {
        if (x == 0) != (y == 0) {
            return false;
        }
        *ab.entry(x).or_insert(y) == y && *ba.entry(y).or_insert(x) == x
    })
}

pub fn mask_bits(m: &BinaryMask) -> Vec<bool> {
    m.as_volume().data().iter().map(|&v| v != 0.0).collect()
}

pub struct OracleMetrics {
    pub dice: f64,
    pub fpv_ml: f64,
    pub fnv_ml: f64,
}

fn unmatched_voxels(src: &[bool], other: &[bool], d: [usize; 3], connectivity: u8) -> usize {
    let (labels, n) = flood_labels(src, d, connectivity);
    let mut size = vec![0usize; n as usize + 1];
    let mut hit = vec![false; n as usize + 1];
    for i in 0..src.len() {
        size[labels[i] as usize] += 1;
        if labels[i] != 0 && other[i] {
            hit[labels[i] as usize] = true;
        }
    }
    (1..=n as usize).filter(|&l| !hit[l]).map(|l| size[l]).sum()
}

pub fn oracle_metrics(pred: &[bool], gt: &[bool], d: [usize; 3], spacing: [f64; 3], connectivity: u8) -> OracleMetrics {
    let inter = pred.iter().zip(gt).filter(|(p, g)| **p && **g).count();
    let np = pred.iter().filter(|p| **p).count();
    let ng = gt.iter().filter(|g| **g).count();
    let dice = if np + ng == 0 { 1.0 } else { 2.0 * inter as f64 / (np + ng) as f64 };
    let voxel_ml = spacing[0] * spacing[1] * spacing[2] / 1000.0;
    OracleMetrics {
        dice,
        fpv_ml: unmatched_voxels(pred, gt, d, connectivity) as f64 * voxel_ml,
        fnv_ml: unmatched_voxels(gt, pred, d, connectivity) as f64 * voxel_ml,
    }
}

pub fn random_dims(rng: &mut ChaCha8Rng, max: usize) -> Dims {
    Dims::new(rng.gen_range(1..=max), rng.gen_range(1..=max), rng.gen_range(1..=max))
}

pub fn random_bits(rng: &mut ChaCha8Rng, n: usize, density: f64) -> Vec<bool> {
    (0..n).map(|_| rng.gen_bool(density)).collect()
}

pub fn mask_from_bits(d: Dims, spacing: [f64; 3], bits: &[bool]) -> BinaryMask {
    BinaryMask::from_bools(d, spacing, bits.iter().copied()).unwrap()
}

pub fn random_volume(rng: &mut ChaCha8Rng, d: Dims, lo: f32, hi: f32) -> Volume3D {
    let data = (0..d.len()).map(|_| rng.gen_range(lo..hi)).collect();
    Volume3D::new(d, [1.0; 3], data).unwrap()
}

/// MIP by explicit triple loop; output indexed `(i, j)` over the two
/// remaining axes in increasing order, first one fastest.
pub fn oracle_mip(v: &Volume3D, axis: usize) -> Vec<f32> {
    let d = v.dims().to_array();
    let rest: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
    let (ni, nj) = (d[rest[0]], d[rest[1]]);
    let mut out = vec![f32::NEG_INFINITY; ni * nj];
    for z in 0..d[2] {
        for y in 0..d[1] {
            for x in 0..d[0] {
                let c = [x, y, z];
                let o = c[rest[0]] + ni * c[rest[1]];
                out[o] = out[o].max(v.data()[idx(d, x, y, z)]);
            }
        }
    }
    out
}

/// Nearest-rank clip-and-scale computed the long way.
pub fn oracle_clip_scale(values: &[f32], p_low: f64, p_high: f64) -> Vec<f32> {
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len() as f64;
    let pick = |p: f64| {
        let r = ((p / 100.0) * n).ceil() - 1.0;
        s[r.max(0.0).min(n - 1.0) as usize]
    };
    let (lo, hi) = (pick(p_low) as f64, pick(p_high) as f64);
    values
        .iter()
        .map(|&v| {
            if hi == lo {
                0.0
            } else {
                ((v as f64).max(lo).min(hi) - lo) / (hi - lo)
            }
        })
        .map(|v| v as f32)
        .collect()
}

/// Sum/count blending of window outputs placed at `starts` in a padded grid,
/// then the `pad_low` offset and original dims are cut out.
pub fn oracle_blend(
    padded: [usize; 3],
    window: [usize; 3],
    starts: &[[usize; 3]],
    outputs: &[Vec<f32>],
    pad_low: [usize; 3],
    dims: [usize; 3],
) -> Vec<f32> {
    let n = padded[0] * padded[1] * padded[2];
    let mut acc = vec![0.0f64; n];
    let mut cnt = vec![0u32; n];
    for (s, out) in starts.iter().zip(outputs) {
        for z in 0..window[2] {
            for y in 0..window[1] {
                for x in 0..window[0] {
                    let g = idx(padded, s[0] + x, s[1] + y, s[2] + z);
                    acc[g] += f64::from(out[idx(window, x, y, z)]);
                    cnt[g] += 1;
                }
            }
        }
    }
    let mut res = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let g = idx(padded, x + pad_low[0], y + pad_low[1], z + pad_low[2]);
                res.push((acc[g] / f64::from(cnt[g])) as f32);
            }
        }
    }
    res
}

/// A roster shaped like the challenge cohort: 513 negative, 188 melanoma,
/// 168 lung cancer and 145 lymphoma studies. Some patients contribute two or
/// three studies; sex is drawn at random.
pub fn cohort_roster(seed: u64) -> Vec<petfuse_core::splits::StudyRecord> {
    use petfuse_core::splits::{Diagnosis, StudyRecord};
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut patient = 0usize;
    for (dx, total) in [
        (Diagnosis::Negative, 513usize),
        (Diagnosis::Melanoma, 188),
        (Diagnosis::LungCancer, 168),
        (Diagnosis::Lymphoma, 145),
    ] {
        let mut left = total;
        while left > 0 {
            let n = match rng.gen_range(0..10) {
                0 => 3,
                1 | 2 => 2,
                _ => 1,
            }
            .min(left);
            let sex = if rng.gen_bool(0.5) { "F" } else { "M" };
            let pid = format!("P{patient:04}");
            for s in 0..n {
                out.push(StudyRecord::new(&format!("{pid}-S{s}"), &pid, sex, dx));
            }
            patient += 1;
            left -= n;
        }
    }
    out
}

/// Central finite difference of `f` along each coordinate of `x`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut up = x.to_vec();
            let mut dn = x.to_vec();
            up[i] += eps;
            dn[i] -= eps;
            (f(&up) - f(&dn)) / (2.0 * eps)
        })
        .collect()
}

/// Minimal single-file NIfTI-1 image (little endian, `n+1`, data at 352).
pub fn nifti_bytes(dims: [i16; 3], pixdim: [f32; 3], datatype: i16, payload: &[u8]) -> Vec<u8> {
    let bitpix: i16 = match datatype {
        2 => 8,
        4 => 16,
        16 => 32,
        64 => 64,
        _ => 0,
    };
    let mut h = vec![0u8; 352];
    h[0..4].copy_from_slice(&348i32.to_le_bytes());
    let dim = [3i16, dims[0], dims[1], dims[2], 1, 1, 1, 1];
    for (k, v) in dim.iter().enumerate() {
        h[40 + 2 * k..42 + 2 * k].copy_from_slice(&v.to_le_bytes());
    }
    h[70..72].copy_from_slice(&datatype.to_le_bytes());
    h[72..74].copy_from_slice(&bitpix.to_le_bytes());
    let pd = [1.0f32, pixdim[0], pixdim[1], pixdim[2], 1.0, 0.0, 0.0, 0.0];
    for (k, v) in pd.iter().enumerate() {
        h[76 + 4 * k..80 + 4 * k].copy_from_slice(&v.to_le_bytes());
    }
    h[108..112].copy_from_slice(&352f32.to_le_bytes());
    h[123] = 2; // millimeters
    h[344..348].copy_from_slice(b"n+1\0");
    h.extend_from_slice(payload);
    h
}

/// Writes `<root>/<study>/` with a PET volume, optional ground truth and
/// constant-valued probability maps named `prob_<model>`.
pub fn write_case(
    root: &std::path::Path,
    study: &str,
    pet: &Volume3D,
    gt: Option<&BinaryMask>,
    probs: &[(&str, f32)],
) {
    use petfuse_core::io::{save_mask, save_volume};
    let dir = root.join(study);
    save_volume(pet, dir.join("pet")).unwrap();
    if let Some(g) = gt {
        save_mask(g, dir.join("gt")).unwrap();
    }
    for (name, p) in probs {
        let v = Volume3D::filled(pet.dims(), pet.spacing(), *p).unwrap();
        save_volume(&v, dir.join(format!("prob_{name}"))).unwrap();
    }
}

/// Score CSV giving every ensemble member probability `p` for each study.
pub fn write_scores(path: &std::path::Path, studies: &[(&str, f64)]) {
    use petfuse_core::gating::ClassifierId;
    let mut text = String::from("study_id,classifier_id,probability\n");
    for (study, p) in studies {
        for id in ClassifierId::all() {
            text.push_str(&format!("{study},{id},{p}\n"));
        }
    }
    std::fs::write(path, text).unwrap();
}
