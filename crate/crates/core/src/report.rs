//! Evaluation report layout: per-case records, fold means and the
//! cross-validation summary. Every report carries the same key set; absent
//! values serialize as `null`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::components::Connectivity;
use crate::error::{Error, Result};
use crate::metrics::{aggregate_cv, mean_case_metrics, CaseMetrics, MetricMeans, VolumeUnit};

/// One evaluated case as it enters the report. Metrics are in milliliters.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseEntry {
    pub study_id: String,
    pub fold: Option<usize>,
    pub metrics: CaseMetrics,
}

/// Per-case line of the report, volumes in the report's unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub study_id: String,
    pub fold: Option<usize>,
    pub dice: Option<f64>,
    pub fpv: f64,
    pub fnv: Option<f64>,
    pub healthy_gt: bool,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeansRecord {
    pub raw: MetricMeans,
    pub display: MetricMeans,
}

impl MeansRecord {
    fn new(means: MetricMeans) -> Self {
        MeansRecord {
            raw: means,
            display: means.rounded(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub cases: usize,
    pub means: MeansRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub volume_unit: VolumeUnit,
    pub connectivity: Connectivity,
    pub cases: Vec<CaseRecord>,
    pub folds: Vec<FoldRecord>,
    pub overall: Option<MeansRecord>,
    pub cv: Option<MeansRecord>,
}

fn convert(means: MetricMeans, unit: VolumeUnit) -> MetricMeans {
    let c = |ml: f64| unit.from_mm3(ml * 1000.0);
    MetricMeans {
        dice: means.dice,
        fpv: c(means.fpv),
        fnv: means.fnv.map(c),
    }
}

/// Assembles the report in entry order. Fold means are computed over the
/// entries that carry a fold; the CV summary is the unweighted mean of the
/// fold means.
pub fn build_report(entries: &[CaseEntry], unit: VolumeUnit, connectivity: Connectivity) -> Result<EvaluationReport> {
    let mut seen = std::collections::BTreeSet::new();
    for e in entries {
        if !seen.insert(e.study_id.as_str()) {
            return Err(Error::Contract(format!("study {:?} evaluated twice", e.study_id)));
        }
    }
    let cases = entries
        .iter()
        .map(|e| {
            let c = |ml: f64| unit.from_mm3(ml * 1000.0);
            CaseRecord {
                study_id: e.study_id.clone(),
                fold: e.fold,
                dice: e.metrics.dice,
                fpv: c(e.metrics.fpv_ml),
                fnv: e.metrics.fnv_ml.map(c),
                healthy_gt: e.metrics.healthy_gt,
                flags: e.metrics.flags.clone(),
            }
        })
        .collect();

    let mut by_fold: BTreeMap<usize, Vec<CaseMetrics>> = BTreeMap::new();
    for e in entries {
        if let Some(f) = e.fold {
            by_fold.entry(f).or_default().push(e.metrics.clone());
        }
    }
    let mut folds = Vec::with_capacity(by_fold.len());
    let mut fold_means = Vec::with_capacity(by_fold.len());
    for (fold, metrics) in &by_fold {
        let m = mean_case_metrics(metrics)?;
        fold_means.push(m);
        folds.push(FoldRecord {
            fold: *fold,
            cases: metrics.len(),
            means: MeansRecord::new(convert(m, unit)),
        });
    }

    let overall = if entries.is_empty() {
        None
    } else {
        let all: Vec<CaseMetrics> = entries.iter().map(|e| e.metrics.clone()).collect();
        Some(MeansRecord::new(convert(mean_case_metrics(&all)?, unit)))
    };
    let cv = if fold_means.is_empty() {
        None
    } else {
        Some(MeansRecord::new(convert(aggregate_cv(&fold_means)?, unit)))
    };

    Ok(EvaluationReport {
        volume_unit: unit,
        connectivity,
        cases,
        folds,
        overall,
        cv,
    })
}
