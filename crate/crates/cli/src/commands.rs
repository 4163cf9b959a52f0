use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use petfuse_core::gating::{or_fuse, ClassifierId, Decision, GateConfig};
use petfuse_core::inference::{binarize, late_fuse};
use petfuse_core::io::{load_any, load_mask, load_probability, save_mask, save_volume};
use petfuse_core::pipeline::{
    evaluate_dirs, load_study_folds, run_pipeline, save_report, ClassifierSource, PipelineConfig, Scorer,
};
use petfuse_core::postprocess::{suppress_small_components, suppress_tiny_prediction, zero_z_boundaries};
use petfuse_core::preprocess::{ct_clip_scale, foreground_crop, suv_z_transform, BoundingBox, CaseBundle, Channel};
use petfuse_core::splits::{load_records, make_folds, validate_assignment, FoldReport, SplitAssignment};
use petfuse_core::{projection, BinaryMask, Error};
use serde::Serialize;

use crate::{
    ClassifierArgs, DebrainArgs, EvaluateArgs, FuseArgs, GateArgs, MipArgs, PostprocessArgs, PreprocessArgs, RunArgs,
    SplitArgs,
};

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>, Error> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad {what} {s:?}")))
        })
        .collect()
}

/// Writes pretty JSON to `path`, or to stdout.
fn emit<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => save_report(p, value)?,
        None => {
            let mut out = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut out, value)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct PreprocessSummary {
    bbox: BoundingBox,
    cropped_dims: [usize; 3],
}

pub fn preprocess(a: PreprocessArgs) -> Result<u8> {
    let p = parse_list(&a.percentiles, "percentiles")?;
    let [lo, hi] = p[..] else {
        return Err(Error::InvalidArgument("percentiles must be LOW,HIGH".into()).into());
    };
    let pet = suv_z_transform(&load_any(&a.pet)?);
    let ct = ct_clip_scale(&load_any(&a.ct)?, lo, hi)?;
    let label = a.label.as_ref().map(|l| load_any(l).and_then(BinaryMask::from_volume)).transpose()?;
    let bundle = CaseBundle::new(pet, ct, label)?;
    let (cropped, bbox) = foreground_crop(&bundle, Channel::Ct, a.crop_threshold)?;
    let (pet, ct, label) = cropped.into_parts();
    save_volume(&pet, a.output_dir.join("pet"))?;
    save_volume(&ct, a.output_dir.join("ct"))?;
    if let Some(l) = label {
        save_mask(&l, a.output_dir.join("label"))?;
    }
    emit(
        &PreprocessSummary {
            bbox,
            cropped_dims: pet.dims().to_array(),
        },
        None,
    )?;
    Ok(0)
}

pub fn mip(a: MipArgs) -> Result<u8> {
    let vol = load_any(&a.input)?;
    let m = projection::mip(&vol, a.axis);
    save_volume(&m.to_volume(vol.spacing())?, &a.output)?;
    Ok(0)
}

pub fn debrain(a: DebrainArgs) -> Result<u8> {
    let vol = load_any(&a.input)?;
    save_volume(&projection::debrain(&vol, a.debrain_threshold, a.connectivity)?, &a.output)?;
    Ok(0)
}

fn classifier_source(c: &ClassifierArgs) -> Option<ClassifierSource> {
    match (&c.scores, &c.weights) {
        (Some(s), _) => Some(ClassifierSource::ScoreFile(s.clone())),
        (None, Some(w)) => Some(ClassifierSource::BaselineWeights(w.clone())),
        (None, None) => None,
    }
}

#[derive(Serialize)]
struct GateSummary {
    study_id: String,
    decision: Decision,
    gamma: f64,
    probabilities: std::collections::BTreeMap<ClassifierId, f64>,
}

pub fn gate(a: GateArgs) -> Result<u8> {
    let source = classifier_source(&a.classifier)
        .ok_or_else(|| Error::InvalidArgument("gate needs --scores or --weights".into()))?;
    let cfg = GateConfig::new(a.gamma, ClassifierId::all().to_vec())?;
    let study = match a.study {
        Some(s) => s,
        None => a
            .pet
            .parent()
            .and_then(Path::file_name)
            .map(|n| n.to_string_lossy().into_owned())
            .ok_or_else(|| Error::InvalidArgument("cannot infer study id; pass --study".into()))?,
    };
    let scorer = Scorer::load(&source)?;
    let probs = scorer.probabilities(&study, &a.pet, &cfg.members, a.debrain_threshold, a.connectivity)?;
    let decision = or_fuse(&probs, cfg.gamma)?;
    emit(
        &GateSummary {
            study_id: study,
            decision,
            gamma: cfg.gamma,
            probabilities: cfg.members.iter().copied().zip(probs).collect(),
        },
        None,
    )?;
    Ok(0)
}

pub fn fuse(a: FuseArgs) -> Result<u8> {
    let weights = a.fusion_weights.as_deref().map(|w| parse_list(w, "fusion weights")).transpose()?;
    let probs = a
        .probs
        .iter()
        .map(|p| load_probability(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let fused = late_fuse(&probs, weights.as_deref())?;
    if let Some(p) = &a.prob_output {
        save_volume(fused.as_volume(), p)?;
    }
    save_mask(&binarize(&fused, a.binarize_threshold)?, &a.output)?;
    Ok(0)
}

pub fn postprocess(a: PostprocessArgs) -> Result<u8> {
    let mask = zero_z_boundaries(&load_mask(&a.input)?, &a.boundary)?;
    let mask = if a.per_component {
        suppress_small_components(&mask, a.min_voxels, a.connectivity)
    } else {
        suppress_tiny_prediction(&mask, a.min_voxels)
    };
    save_mask(&mask, &a.output)?;
    Ok(0)
}

pub fn evaluate(a: EvaluateArgs) -> Result<u8> {
    let folds = match (&a.split, &a.records) {
        (Some(s), Some(r)) => Some(load_study_folds(s, r)?),
        _ => None,
    };
    let pred_dir = a.pred_dir.as_deref().unwrap_or(&a.input_dir);
    let report = evaluate_dirs(&a.input_dir, pred_dir, a.connectivity, a.volume_unit, folds.as_ref())?;
    emit(&report, a.output.as_deref())?;
    Ok(0)
}

#[derive(Serialize)]
struct SplitOutput {
    #[serde(flatten)]
    assignment: SplitAssignment,
    report: FoldReport,
}

pub fn split(a: SplitArgs) -> Result<u8> {
    let records = load_records(&a.records)?;
    let assignment = make_folds(&records, a.folds, a.seed)?;
    let report = validate_assignment(&assignment, &records);
    if !report.grouping_violations.is_empty() {
        log::error!("grouping violations: {:?}", report.grouping_violations);
    }
    emit(&SplitOutput { assignment, report }, a.output.as_deref())?;
    Ok(0)
}

fn apply_overrides(cfg: &mut PipelineConfig, a: &RunArgs) -> Result<(), Error> {
    if let Some(v) = &a.input_dir {
        cfg.input_dir = v.clone();
    }
    if let Some(v) = &a.output_dir {
        cfg.output_dir = v.clone();
    }
    if let Some(src) = classifier_source(&a.classifier) {
        cfg.classifier = Some(src);
    }
    if let Some(v) = a.gamma {
        cfg.gate.gamma = v;
    }
    if let Some(v) = a.debrain_threshold {
        cfg.debrain_threshold = v;
    }
    if let Some(v) = a.connectivity {
        cfg.connectivity = v;
    }
    if let Some(v) = &a.fusion_weights {
        cfg.fusion_weights = Some(parse_list(v, "fusion weights")?);
    }
    if let Some(v) = a.binarize_threshold {
        cfg.binarize_threshold = v;
    }
    if let Some(v) = a.boundary {
        cfg.boundary = v;
    }
    if let Some(v) = a.min_voxels {
        cfg.min_voxels = v;
    }
    if let Some(v) = a.volume_unit {
        cfg.volume_unit = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.workers {
        cfg.workers = v;
    }
    Ok(())
}

/// Relative paths inside a config file are taken from the file's directory.
fn anchor_paths(cfg: &mut PipelineConfig, base: &Path) {
    let fix = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    fix(&mut cfg.input_dir);
    fix(&mut cfg.output_dir);
    match &mut cfg.classifier {
        Some(ClassifierSource::ScoreFile(p)) | Some(ClassifierSource::BaselineWeights(p)) => fix(p),
        None => {}
    }
    for p in [&mut cfg.split_file, &mut cfg.records_file].into_iter().flatten() {
        fix(p);
    }
}

pub fn run(a: RunArgs) -> Result<u8> {
    let mut cfg = match &a.config {
        Some(path) => {
            let mut cfg = PipelineConfig::load(path)?;
            if let Some(base) = path.parent() {
                anchor_paths(&mut cfg, base);
            }
            cfg
        }
        None => PipelineConfig::default(),
    };
    apply_overrides(&mut cfg, &a)?;
    let report = run_pipeline(&cfg)?;
    let ok = report.cases.len() - report.failed;
    eprintln!(
        "{ok} of {} cases processed, report in {}",
        report.cases.len(),
        cfg.output_dir.join(petfuse_core::pipeline::REPORT_FILE).display()
    );
    Ok(if report.failed > 0 { 1 } else { 0 })
}
