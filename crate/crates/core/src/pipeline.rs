//! Batch runner: gate each case, fuse and clean up the model probabilities of
//! the diseased ones, write the masks and, where ground truth exists, score
//! them.
//!
//! Input layout, one directory per study under `input_dir`:
//!
//! ```text
//! <study>/pet.mvol.json      (or pet.nii)
//! <study>/gt.mvol.json       optional ground truth
//! <study>/prob_<model>.mvol.json
//! ```
//!
//! Outputs go to `output_dir/<study>/pred.mvol.{json,raw}` and
//! `output_dir/<study>/case.json`, plus `output_dir/report.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::components::Connectivity;
use crate::error::{Error, Result};
use crate::gating::{or_fuse, BaselineEnsemble, CaseMips, ClassifierId, Decision, GateConfig, ScoreTable};
use crate::inference::{binarize, late_fuse, DEFAULT_BINARIZE_THRESHOLD};
use crate::io::{load_any, load_mask, load_probability, read_header, save_mask, HEADER_SUFFIX};
use crate::metrics::{evaluate_case, CaseMetrics, VolumeUnit};
use crate::postprocess::{
    suppress_small_components, suppress_tiny_prediction, zero_z_boundaries, BoundarySpec, DEFAULT_MIN_VOXELS,
};
use crate::projection::DEFAULT_SUV_THRESHOLD;
use crate::report::{build_report, CaseEntry, EvaluationReport};
use crate::splits::{load_records, study_folds, SplitAssignment};
use crate::volume::BinaryMask;

pub const PROB_PREFIX: &str = "prob_";
pub const PRED_NAME: &str = "pred";
pub const GT_NAME: &str = "gt";
pub const PET_NAME: &str = "pet";
pub const REPORT_FILE: &str = "report.json";
pub const CASE_FILE: &str = "case.json";

/// Where the per-member classifier probabilities come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierSource {
    /// CSV with `study_id,classifier_id,probability`.
    ScoreFile(PathBuf),
    /// JSON map from classifier id to baseline weights.
    BaselineWeights(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Studies to process; every subdirectory of `input_dir` when absent.
    pub cases: Option<Vec<String>>,
    /// Segmentation models to fuse; every `prob_*` volume of the case when absent.
    pub models: Option<Vec<String>>,
    pub classifier: Option<ClassifierSource>,
    pub gate: GateConfig,
    pub debrain_threshold: f32,
    pub fusion_weights: Option<Vec<f64>>,
    pub binarize_threshold: f32,
    pub boundary: BoundarySpec,
    pub min_voxels: usize,
    /// Drop small components one by one instead of the whole-mask rule.
    pub per_component: bool,
    pub connectivity: Connectivity,
    pub volume_unit: VolumeUnit,
    /// Patient-level split (as written by the `split` command) and the
    /// roster mapping studies to patients; together they enable fold means.
    pub split_file: Option<PathBuf>,
    pub records_file: Option<PathBuf>,
    pub seed: u64,
    /// Worker threads; 0 lets the pool decide.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input_dir: PathBuf::from("."),
            output_dir: PathBuf::from("out"),
            cases: None,
            models: None,
            classifier: None,
            gate: GateConfig::default(),
            debrain_threshold: DEFAULT_SUV_THRESHOLD,
            fusion_weights: None,
            binarize_threshold: DEFAULT_BINARIZE_THRESHOLD,
            boundary: BoundarySpec::default(),
            min_voxels: DEFAULT_MIN_VOXELS,
            per_component: false,
            connectivity: Connectivity::default(),
            volume_unit: VolumeUnit::default(),
            split_file: None,
            records_file: None,
            seed: 0,
            workers: 0,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.gate.validate()?;
        self.boundary.validate()?;
        if !(self.debrain_threshold.is_finite() && self.debrain_threshold > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "debrain threshold must be positive, got {}",
                self.debrain_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.binarize_threshold) {
            return Err(Error::InvalidArgument(format!(
                "binarize threshold {} outside [0, 1]",
                self.binarize_threshold
            )));
        }
        if let Some(w) = &self.fusion_weights {
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::InvalidArgument(format!("invalid fusion weights {w:?}")));
            }
            if let Some(models) = &self.models {
                if models.len() != w.len() {
                    return Err(Error::InvalidArgument(format!(
                        "{} fusion weights for {} models",
                        w.len(),
                        models.len()
                    )));
                }
            }
        }
        if self.classifier.is_none() {
            return Err(Error::InvalidArgument(
                "no classifier configured (score_file or baseline_weights)".into(),
            ));
        }
        if self.split_file.is_some() != self.records_file.is_some() {
            return Err(Error::InvalidArgument(
                "split_file and records_file must be given together".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseStatus {
    Ok,
    Failed,
}

/// Per-case summary, also written to `<study>/case.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub study_id: String,
    pub status: CaseStatus,
    pub decision: Option<Decision>,
    pub gated: Option<bool>,
    pub classifier_probabilities: Option<BTreeMap<ClassifierId, f64>>,
    pub models: Vec<String>,
    pub predicted_voxels: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub gamma: f64,
    pub volume_unit: VolumeUnit,
    pub connectivity: Connectivity,
    pub cases: Vec<CaseSummary>,
    pub failed: usize,
    pub evaluation: Option<EvaluationReport>,
}

/// Loaded classifier source.
pub enum Scorer {
    Table(ScoreTable),
    Baseline(BaselineEnsemble),
}

impl Scorer {
    pub fn load(source: &ClassifierSource) -> Result<Self> {
        Ok(match source {
            ClassifierSource::ScoreFile(p) => Scorer::Table(ScoreTable::load(p)?),
            ClassifierSource::BaselineWeights(p) => Scorer::Baseline(BaselineEnsemble::load(p)?),
        })
    }

    /// Member probabilities for one study. The PET volume is only loaded
    /// when the baseline models need it.
    pub fn probabilities(
        &self,
        study: &str,
        pet_path: &Path,
        members: &[ClassifierId],
        debrain_threshold: f32,
        connectivity: Connectivity,
    ) -> Result<Vec<f64>> {
        match self {
            Scorer::Table(t) => t.probabilities(study, members),
            Scorer::Baseline(ens) => {
                let pet = load_any(pet_path)?;
                let mips = CaseMips::compute(&pet, debrain_threshold, connectivity)?;
                ens.probabilities(&mips, members)
            }
        }
    }
}

/// `dir/<stem>.mvol.json`, falling back to `dir/<stem>.nii`.
pub fn find_volume(dir: &Path, stem: &str) -> Option<PathBuf> {
    [format!("{stem}{HEADER_SUFFIX}"), format!("{stem}.nii")]
        .into_iter()
        .map(|n| dir.join(n))
        .find(|p| p.is_file())
}

/// Sorted names of the subdirectories of `dir`.
pub fn list_studies(dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.path().is_dir() {
            out.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    out.sort();
    Ok(out)
}

/// Model names with a `prob_<name>` volume in `dir`, sorted. Only the
/// directory listing is read.
pub fn discover_models(dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(model) = name.strip_prefix(PROB_PREFIX).and_then(|n| n.strip_suffix(HEADER_SUFFIX)) {
            out.push(model.to_string());
        }
    }
    out.sort();
    Ok(out)
}

/// Study → fold map from a patient-level split file and a study roster.
pub fn load_study_folds(split_file: &Path, records_file: &Path) -> Result<BTreeMap<String, usize>> {
    let text = fs::read_to_string(split_file).map_err(|e| Error::io(split_file, e))?;
    let split: SplitFile = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: split_file.to_path_buf(),
        source,
    })?;
    let records = load_records(records_file)?;
    Ok(study_folds(&split.assignment, &records))
}

/// On-disk form of a split: the assignment plus whatever report accompanies it.
#[derive(Debug, Deserialize)]
struct SplitFile {
    #[serde(flatten)]
    assignment: SplitAssignment,
}

/// Fuses, binarizes and cleans up the probability maps of a diseased case.
pub fn segment(
    probs: &[crate::volume::ProbabilityVolume],
    weights: Option<&[f64]>,
    cfg: &PipelineConfig,
) -> Result<BinaryMask> {
    let fused = late_fuse(probs, weights)?;
    let mask = binarize(&fused, cfg.binarize_threshold)?;
    let mask = zero_z_boundaries(&mask, &cfg.boundary)?;
    Ok(if cfg.per_component {
        suppress_small_components(&mask, cfg.min_voxels, cfg.connectivity)
    } else {
        suppress_tiny_prediction(&mask, cfg.min_voxels)
    })
}

struct CaseOutcome {
    summary: CaseSummary,
    metrics: Option<CaseMetrics>,
}

fn process_case(study: &str, cfg: &PipelineConfig, scorer: &Scorer) -> Result<(CaseSummary, Option<CaseMetrics>)> {
    let dir = cfg.input_dir.join(study);
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir));
    }
    let pet_path = find_volume(&dir, PET_NAME).ok_or_else(|| Error::MissingFile(dir.join(format!("{PET_NAME}{HEADER_SUFFIX}"))))?;
    let members = &cfg.gate.members;
    let probs = scorer.probabilities(study, &pet_path, members, cfg.debrain_threshold, cfg.connectivity)?;
    let decision = or_fuse(&probs, cfg.gate.gamma)?;

    let grid = if pet_path.extension().is_some_and(|e| e == "nii") {
        let pet = load_any(&pet_path)?;
        (pet.dims(), pet.spacing())
    } else {
        read_header(&pet_path)?
    };

    let (mask, models) = match decision {
        Decision::Healthy => {
            log::info!("{study}: gated healthy, skipping segmentation");
            (BinaryMask::empty(grid.0, grid.1)?, Vec::new())
        }
        Decision::Diseased => {
            let models = match &cfg.models {
                Some(m) => m.clone(),
                None => discover_models(&dir)?,
            };
            if models.is_empty() {
                return Err(Error::MissingFile(dir.join(format!("{PROB_PREFIX}*{HEADER_SUFFIX}"))));
            }
            if let Some(w) = &cfg.fusion_weights {
                if w.len() != models.len() {
                    return Err(Error::InvalidArgument(format!(
                        "{} fusion weights for {} models",
                        w.len(),
                        models.len()
                    )));
                }
            }
            let vols = models
                .iter()
                .map(|m| {
                    let p = load_probability(dir.join(format!("{PROB_PREFIX}{m}{HEADER_SUFFIX}")))?;
                    if p.dims() != grid.0 || p.spacing() != grid.1 {
                        return Err(Error::ShapeMismatch(format!(
                            "model {m}: probability grid {} does not match PET grid {}",
                            p.dims(),
                            grid.0
                        )));
                    }
                    Ok(p)
                })
                .collect::<Result<Vec<_>>>()?;
            (segment(&vols, cfg.fusion_weights.as_deref(), cfg)?, models)
        }
    };

    let out_dir = cfg.output_dir.join(study);
    save_mask(&mask, out_dir.join(PRED_NAME))?;

    let metrics = match find_volume(&dir, GT_NAME) {
        Some(gt_path) => {
            let gt = BinaryMask::from_volume(load_any(&gt_path)?)?;
            Some(evaluate_case(&mask, &gt, cfg.connectivity)?)
        }
        None => None,
    };

    let summary = CaseSummary {
        study_id: study.to_string(),
        status: CaseStatus::Ok,
        decision: Some(decision),
        gated: Some(decision == Decision::Healthy),
        classifier_probabilities: Some(members.iter().copied().zip(probs).collect()),
        models,
        predicted_voxels: Some(mask.count()),
        error: None,
    };
    write_json(&out_dir.join(CASE_FILE), &summary)?;
    Ok((summary, metrics))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs every case on a worker pool. A failing case is recorded in the
/// report and does not stop the others; configuration and classifier
/// loading errors abort the run.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport> {
    cfg.validate()?;
    let scorer = Scorer::load(cfg.classifier.as_ref().expect("validated"))?;
    let studies = match &cfg.cases {
        Some(c) => c.clone(),
        None => list_studies(&cfg.input_dir)?,
    };
    let folds = match (&cfg.split_file, &cfg.records_file) {
        (Some(s), Some(r)) => Some(load_study_folds(s, r)?),
        _ => None,
    };
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))?;
    let outcomes: Vec<CaseOutcome> = pool.install(|| {
        studies
            .par_iter()
            .map(|study| match process_case(study, cfg, &scorer) {
                Ok((summary, metrics)) => CaseOutcome { summary, metrics },
                Err(e) => {
                    log::error!("{study}: {e}");
                    CaseOutcome {
                        summary: CaseSummary {
                            study_id: study.clone(),
                            status: CaseStatus::Failed,
                            decision: None,
                            gated: None,
                            classifier_probabilities: None,
                            models: Vec::new(),
                            predicted_voxels: None,
                            error: Some(e.to_string()),
                        },
                        metrics: None,
                    }
                }
            })
            .collect()
    });

    let entries: Vec<CaseEntry> = outcomes
        .iter()
        .filter_map(|o| {
            o.metrics.as_ref().map(|m| CaseEntry {
                study_id: o.summary.study_id.clone(),
                fold: folds.as_ref().and_then(|f| f.get(&o.summary.study_id).copied()),
                metrics: m.clone(),
            })
        })
        .collect();
    let evaluation = if entries.is_empty() {
        None
    } else {
        Some(build_report(&entries, cfg.volume_unit, cfg.connectivity)?)
    };
    let failed = outcomes.iter().filter(|o| o.summary.status == CaseStatus::Failed).count();
    let report = RunReport {
        seed: cfg.seed,
        gamma: cfg.gate.gamma,
        volume_unit: cfg.volume_unit,
        connectivity: cfg.connectivity,
        cases: outcomes.into_iter().map(|o| o.summary).collect(),
        failed,
        evaluation,
    };
    write_json(&cfg.output_dir.join(REPORT_FILE), &report)?;
    Ok(report)
}

/// Scores `pred_dir/<study>/pred` against `gt_dir/<study>/gt` for every study
/// that has a prediction.
pub fn evaluate_dirs(
    gt_dir: &Path,
    pred_dir: &Path,
    connectivity: Connectivity,
    unit: VolumeUnit,
    folds: Option<&BTreeMap<String, usize>>,
) -> Result<EvaluationReport> {
    let mut entries = Vec::new();
    for study in list_studies(pred_dir)? {
        let Some(pred_path) = find_volume(&pred_dir.join(&study), PRED_NAME) else {
            continue;
        };
        let gt_path = find_volume(&gt_dir.join(&study), GT_NAME)
            .ok_or_else(|| Error::MissingFile(gt_dir.join(&study).join(format!("{GT_NAME}{HEADER_SUFFIX}"))))?;
        let pred = load_mask(&pred_path)?;
        let gt = BinaryMask::from_volume(load_any(&gt_path)?)?;
        entries.push(CaseEntry {
            fold: folds.and_then(|f| f.get(&study).copied()),
            metrics: evaluate_case(&pred, &gt, connectivity)?,
            study_id: study,
        });
    }
    build_report(&entries, unit, connectivity)
}

/// Serializes any report with a trailing newline.
pub fn save_report<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_json(path, value)
}
