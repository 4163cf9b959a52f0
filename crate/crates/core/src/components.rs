//! 3D connected-component labeling.
//!
//! Labels are numbered in the order their first voxel appears in an x-fastest
//! scan, so the output is fully determined by the mask and the connectivity.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Dims, Spacing};

/// Neighborhood used to decide adjacency between foreground voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    /// Face neighbors.
    Six,
    /// Face and edge neighbors.
    #[default]
    Eighteen,
    /// Face, edge and corner neighbors.
    TwentySix,
}

impl Connectivity {
    pub const ALL: [Connectivity; 3] = [Connectivity::Six, Connectivity::Eighteen, Connectivity::TwentySix];

    pub fn neighbors(self) -> u8 {
        match self {
            Connectivity::Six => 6,
            Connectivity::Eighteen => 18,
            Connectivity::TwentySix => 26,
        }
    }

    /// Largest number of non-zero coordinates in an admissible offset.
    fn max_nonzero(self) -> usize {
        match self {
            Connectivity::Six => 1,
            Connectivity::Eighteen => 2,
            Connectivity::TwentySix => 3,
        }
    }

    /// Whether the offset `(dx, dy, dz)` (each in -1..=1, not all zero) is a neighbor.
    pub fn admits(self, dx: i32, dy: i32, dz: i32) -> bool {
        let nonzero = [dx, dy, dz].iter().filter(|&&d| d != 0).count();
        nonzero >= 1 && nonzero <= self.max_nonzero()
    }

    /// Offsets that precede the current voxel in x-fastest scan order.
    fn backward_offsets(self) -> Vec<(i32, i32, i32)> {
        let mut out = Vec::new();
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let before = (dz, dy, dx) < (0, 0, 0);
                    if before && self.admits(dx, dy, dz) {
                        out.push((dx, dy, dz));
                    }
                }
            }
        }
        out
    }
}

impl TryFrom<u8> for Connectivity {
    type Error = Error;

    fn try_from(n: u8) -> Result<Self> {
        match n {
            6 => Ok(Connectivity::Six),
            18 => Ok(Connectivity::Eighteen),
            26 => Ok(Connectivity::TwentySix),
            other => Err(Error::InvalidArgument(format!(
                "connectivity must be 6, 18 or 26, got {other}"
            ))),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        c.neighbors()
    }
}

impl FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let n: u8 = s
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("connectivity must be 6, 18 or 26, got {s:?}")))?;
        Connectivity::try_from(n)
    }
}

impl fmt::Display for Connectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.neighbors())
    }
}

/// Per-voxel component labels with per-component voxel counts.
///
/// Label 0 is background; components are `1..=K` and `counts[k - 1]` is the
/// size of component `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentMap {
    dims: Dims,
    labels: Vec<u32>,
    counts: Vec<usize>,
    connectivity: Connectivity,
}

impl ComponentMap {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, index: usize) -> u32 {
        self.labels[index]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Number of components, `K`.
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn connectivity(&self) -> Connectivity {
        self.connectivity
    }

    /// Label of the largest component; ties go to the lowest label.
    pub fn largest(&self) -> Option<u32> {
        let mut best: Option<(usize, usize)> = None;
        for (i, &c) in self.counts.iter().enumerate() {
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((i, c));
            }
        }
        best.map(|(i, _)| i as u32 + 1)
    }

    /// For each component, whether any of its voxels is set in `other`.
    pub fn touches(&self, other: &BinaryMask) -> Vec<bool> {
        let mut hit = vec![false; self.counts.len()];
        for (i, &l) in self.labels.iter().enumerate() {
            if l != 0 && other.is_set(i) {
                hit[l as usize - 1] = true;
            }
        }
        hit
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        // slot 0 is unused so provisional labels start at 1
        DisjointSet { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) -> u32 {
        let (ra, rb) = (self.find(a), self.find(b));
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi as usize] = lo;
        lo
    }
}

/// Labels the foreground of `mask` with a two-pass union-find scan.
pub fn label_components(mask: &BinaryMask, connectivity: Connectivity) -> ComponentMap {
    let dims = mask.dims();
    let (nx, ny, nz) = (dims.nx as i64, dims.ny as i64, dims.nz as i64);
    let offsets = connectivity.backward_offsets();
    let mut provisional = vec![0u32; dims.len()];
    let mut sets = DisjointSet::new();

    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = dims.index(x as usize, y as usize, z as usize);
                if !mask.is_set(i) {
                    continue;
                }
                let mut current = 0u32;
                for &(dx, dy, dz) in &offsets {
                    let (qx, qy, qz) = (x + dx as i64, y + dy as i64, z + dz as i64);
                    if qx < 0 || qy < 0 || qz < 0 || qx >= nx || qy >= ny {
                        continue;
                    }
                    let l = provisional[dims.index(qx as usize, qy as usize, qz as usize)];
                    if l == 0 {
                        continue;
                    }
                    current = if current == 0 { l } else { sets.union(current, l) };
                }
                provisional[i] = if current == 0 { sets.make() } else { current };
            }
        }
    }

    // Relabel roots in first-encountered order.
    let mut final_of_root = vec![0u32; sets.parent.len()];
    let mut counts = Vec::new();
    let mut labels = provisional;
    for l in labels.iter_mut() {
        if *l == 0 {
            continue;
        }
        let root = sets.find(*l) as usize;
        if final_of_root[root] == 0 {
            counts.push(0);
            final_of_root[root] = counts.len() as u32;
        }
        let f = final_of_root[root];
        counts[f as usize - 1] += 1;
        *l = f;
    }

    ComponentMap {
        dims,
        labels,
        counts,
        connectivity,
    }
}

/// Volume of each component in milliliters, in label order.
pub fn component_volumes(cmap: &ComponentMap, spacing_mm: Spacing) -> Vec<f64> {
    let voxel_ml = spacing_mm.iter().product::<f64>() / 1000.0;
    cmap.counts.iter().map(|&c| c as f64 * voxel_ml).collect()
}
