//! Lesion segmentation metrics: foreground Dice, false positive volume (FPV)
//! and false negative volume (FNV), their per-case applicability, fold and
//! cross-validation aggregation, and weighted rank scoring.
//!
//! FPV sums the volume of predicted components that touch no ground-truth
//! voxel; FNV sums the volume of ground-truth components that touch no
//! predicted voxel. Cases with empty ground truth only contribute FPV.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::components::{label_components, Connectivity};
use crate::error::{Error, Result};
use crate::volume::BinaryMask;

pub const DISPLAY_DECIMALS: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum VolumeUnit {
    #[default]
    #[serde(rename = "ml")]
    Milliliters,
    #[serde(rename = "mm3")]
    CubicMillimeters,
}

impl VolumeUnit {
    pub fn from_mm3(self, mm3: f64) -> f64 {
        match self {
            VolumeUnit::Milliliters => mm3 / 1000.0,
            VolumeUnit::CubicMillimeters => mm3,
        }
    }
}

impl FromStr for VolumeUnit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ml" => Ok(VolumeUnit::Milliliters),
            "mm3" => Ok(VolumeUnit::CubicMillimeters),
            other => Err(Error::InvalidArgument(format!("unknown volume unit {other:?}, use ml or mm3"))),
        }
    }
}

impl fmt::Display for VolumeUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VolumeUnit::Milliliters => "ml",
            VolumeUnit::CubicMillimeters => "mm3",
        })
    }
}

/// Dice with its raw counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiceScore {
    pub intersection: usize,
    pub pred_count: usize,
    pub gt_count: usize,
}

impl DiceScore {
    /// `2|P∩G| / (|P| + |G|)`, defined as 1 when both masks are empty.
    pub fn value(&self) -> f64 {
        let denom = self.pred_count + self.gt_count;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.intersection as f64 / denom as f64
        }
    }

    pub fn both_empty(&self) -> bool {
        self.pred_count + self.gt_count == 0
    }
}

fn check_aligned(pred: &BinaryMask, gt: &BinaryMask) -> Result<()> {
    pred.ensure_same_grid(gt, "prediction vs ground truth")
}

pub fn dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<DiceScore> {
    check_aligned(pred, gt)?;
    let mut s = DiceScore {
        intersection: 0,
        pred_count: 0,
        gt_count: 0,
    };
    for (p, g) in pred.bits().zip(gt.bits()) {
        s.pred_count += p as usize;
        s.gt_count += g as usize;
        s.intersection += (p && g) as usize;
    }
    Ok(s)
}

/// Volume (mm³) of the components of `source` that share no voxel with `other`.
fn unmatched_volume_mm3(source: &BinaryMask, other: &BinaryMask, connectivity: Connectivity) -> f64 {
    let cmap = label_components(source, connectivity);
    let hit = cmap.touches(other);
    let voxels: usize = cmap
        .counts()
        .iter()
        .zip(&hit)
        .filter(|(_, &h)| !h)
        .map(|(&c, _)| c)
        .sum();
    voxels as f64 * source.as_volume().voxel_volume_mm3()
}

/// False positive volume in milliliters.
pub fn false_positive_volume(pred: &BinaryMask, gt: &BinaryMask, connectivity: Connectivity) -> Result<f64> {
    check_aligned(pred, gt)?;
    Ok(unmatched_volume_mm3(pred, gt, connectivity) / 1000.0)
}

/// False negative volume in milliliters.
pub fn false_negative_volume(pred: &BinaryMask, gt: &BinaryMask, connectivity: Connectivity) -> Result<f64> {
    check_aligned(pred, gt)?;
    Ok(unmatched_volume_mm3(gt, pred, connectivity) / 1000.0)
}

/// Metrics of one case. Volumes are in milliliters; `dice` and `fnv_ml` are
/// `None` for healthy ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub dice: Option<f64>,
    pub fpv_ml: f64,
    pub fnv_ml: Option<f64>,
    pub healthy_gt: bool,
    pub flags: Vec<String>,
}

pub fn evaluate_case(pred: &BinaryMask, gt: &BinaryMask, connectivity: Connectivity) -> Result<CaseMetrics> {
    let d = dice(pred, gt)?;
    let fpv = false_positive_volume(pred, gt, connectivity)?;
    let healthy = d.gt_count == 0;
    let mut flags = Vec::new();
    if healthy {
        flags.push("healthy_gt".to_string());
        if d.both_empty() {
            flags.push("dice_both_empty".to_string());
        }
    }
    let fnv = if healthy {
        None
    } else {
        Some(false_negative_volume(pred, gt, connectivity)?)
    };
    Ok(CaseMetrics {
        dice: (!healthy).then(|| d.value()),
        fpv_ml: fpv,
        fnv_ml: fnv,
        healthy_gt: healthy,
        flags,
    })
}

/// Mean metrics over a set of cases (or, for CV, over folds). Dice and FNV
/// are `None` when no contributing entry has them. Volumes carry whatever unit
/// their inputs had; [`mean_case_metrics`] yields milliliters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub dice: Option<f64>,
    pub fpv: f64,
    pub fnv: Option<f64>,
}

impl MetricMeans {
    pub fn rounded(&self) -> MetricMeans {
        MetricMeans {
            dice: self.dice.map(round_display),
            fpv: round_display(self.fpv),
            fnv: self.fnv.map(round_display),
        }
    }
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Means over cases; healthy cases contribute only to FPV.
pub fn mean_case_metrics(cases: &[CaseMetrics]) -> Result<MetricMeans> {
    if cases.is_empty() {
        return Err(Error::InvalidArgument("no cases to average".into()));
    }
    Ok(MetricMeans {
        dice: mean_of(cases.iter().filter_map(|c| c.dice)),
        fpv: mean_of(cases.iter().map(|c| c.fpv_ml)).expect("non-empty"),
        fnv: mean_of(cases.iter().filter_map(|c| c.fnv_ml)),
    })
}

/// Unweighted mean of per-fold values.
pub fn cv_mean(values: &[f64]) -> Result<f64> {
    mean_of(values.iter().copied()).ok_or_else(|| Error::InvalidArgument("no folds to aggregate".into()))
}

/// Cross-validation summary: unweighted mean of fold means, per metric.
pub fn aggregate_cv(per_fold: &[MetricMeans]) -> Result<MetricMeans> {
    if per_fold.is_empty() {
        return Err(Error::InvalidArgument("no folds to aggregate".into()));
    }
    Ok(MetricMeans {
        dice: mean_of(per_fold.iter().filter_map(|f| f.dice)),
        fpv: mean_of(per_fold.iter().map(|f| f.fpv)).expect("non-empty"),
        fnv: mean_of(per_fold.iter().filter_map(|f| f.fnv)),
    })
}

/// Rounds half away from zero to four decimals, as printed in result tables.
pub fn round_display(x: f64) -> f64 {
    let scale = 10f64.powi(DISPLAY_DECIMALS);
    (x * scale).round() / scale
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankWeights {
    pub dice: f64,
    pub fpv: f64,
    pub fnv: f64,
}

impl Default for RankWeights {
    fn default() -> Self {
        RankWeights {
            dice: 0.5,
            fpv: 0.25,
            fnv: 0.25,
        }
    }
}

impl RankWeights {
    pub fn new(dice: f64, fpv: f64, fnv: f64) -> Result<Self> {
        let w = RankWeights { dice, fpv, fnv };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ws = [self.dice, self.fpv, self.fnv];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) || (ws.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "rank weights must be non-negative and sum to 1, got {ws:?}"
            )));
        }
        Ok(())
    }
}

/// Weighted combination of per-metric ranks; lower is better.
pub fn weighted_rank(r_dice: f64, r_fpv: f64, r_fnv: f64, weights: &RankWeights) -> Result<f64> {
    weights.validate()?;
    if [r_dice, r_fpv, r_fnv].iter().any(|r| !(r.is_finite() && *r >= 1.0)) {
        return Err(Error::InvalidArgument(format!(
            "ranks must be >= 1, got ({r_dice}, {r_fpv}, {r_fnv})"
        )));
    }
    Ok(weights.dice * r_dice + weights.fpv * r_fpv + weights.fnv * r_fnv)
}

/// Competition ranks (1 = best, ties share the best rank) for a list of scores.
pub fn competition_ranks(scores: &[f64], higher_is_better: bool) -> Vec<f64> {
    scores
        .iter()
        .map(|&s| {
            let better = scores
                .iter()
                .filter(|&&o| if higher_is_better { o > s } else { o < s })
                .count();
            (better + 1) as f64
        })
        .collect()
}

/// Ranks entries on Dice (higher better), FPV and FNV (lower better) and
/// returns each entry's weighted rank score. Missing Dice or FNV ranks last.
pub fn rank_entries(entries: &[MetricMeans], weights: &RankWeights) -> Result<Vec<f64>> {
    let dice: Vec<f64> = entries.iter().map(|e| e.dice.unwrap_or(f64::NEG_INFINITY)).collect();
    let fpv: Vec<f64> = entries.iter().map(|e| e.fpv).collect();
    let fnv: Vec<f64> = entries.iter().map(|e| e.fnv.unwrap_or(f64::INFINITY)).collect();
    let (rd, rp, rn) = (
        competition_ranks(&dice, true),
        competition_ranks(&fpv, false),
        competition_ranks(&fnv, false),
    );
    (0..entries.len())
        .map(|i| weighted_rank(rd[i], rp[i], rn[i], weights))
        .collect()
}
