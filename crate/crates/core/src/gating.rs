//! Healthy/diseased gating from an ensemble of MIP classifiers.
//!
//! Eight classifiers (projection axis × brain kept or removed × two backbones)
//! each emit a lesion probability. A case is diseased as soon as one of them
//! reaches `gamma`; only when all eight stay below it is the case gated as
//! healthy and its segmentation replaced by an empty prediction.
//!
//! The image classifiers themselves are pluggable: a small logistic model over
//! MIP statistics ([`BaselineClassifier`]) ships here, and externally computed
//! scores can be supplied through a CSV score file ([`ScoreTable`]).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::components::Connectivity;
use crate::error::{Error, Result};
use crate::projection::{debrain, mip, Axis, Mip2D};
use crate::volume::{ProbabilityVolume, Volume3D};

pub const DEFAULT_GAMMA: f64 = 0.3;
pub const ENSEMBLE_SIZE: usize = 8;
pub const FEATURE_COUNT: usize = 6;
/// SUV levels whose exceedance fractions enter the baseline features.
pub const FEATURE_THRESHOLDS: [f32; 3] = [2.5, 5.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Brain {
    Kept,
    Removed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Backbone {
    A,
    B,
}

/// One ensemble slot, written `axis-brain-backbone`, e.g. `X-debrained-A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ClassifierId {
    pub axis: Axis,
    pub brain: Brain,
    pub backbone: Backbone,
}

impl ClassifierId {
    /// All eight members in a fixed order.
    pub fn all() -> [ClassifierId; ENSEMBLE_SIZE] {
        let mut out = [ClassifierId {
            axis: Axis::X,
            brain: Brain::Kept,
            backbone: Backbone::A,
        }; ENSEMBLE_SIZE];
        let mut i = 0;
        for axis in [Axis::X, Axis::Y] {
            for brain in [Brain::Kept, Brain::Removed] {
                for backbone in [Backbone::A, Backbone::B] {
                    out[i] = ClassifierId { axis, brain, backbone };
                    i += 1;
                }
            }
        }
        out
    }
}

impl fmt::Display for ClassifierId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let brain = match self.brain {
            Brain::Kept => "brain",
            Brain::Removed => "debrained",
        };
        let backbone = match self.backbone {
            Backbone::A => "A",
            Backbone::B => "B",
        };
        write!(f, "{}-{brain}-{backbone}", self.axis)
    }
}

impl FromStr for ClassifierId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad classifier id {s:?}, expected e.g. X-debrained-A"));
        let mut parts = s.trim().split('-');
        let (Some(a), Some(b), Some(c), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(bad());
        };
        let axis = match a {
            "X" => Axis::X,
            "Y" => Axis::Y,
            _ => return Err(bad()),
        };
        let brain = match b {
            "brain" => Brain::Kept,
            "debrained" => Brain::Removed,
            _ => return Err(bad()),
        };
        let backbone = match c {
            "A" => Backbone::A,
            "B" => Backbone::B,
            _ => return Err(bad()),
        };
        Ok(ClassifierId { axis, brain, backbone })
    }
}

impl TryFrom<String> for ClassifierId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ClassifierId> for String {
    fn from(id: ClassifierId) -> String {
        id.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Diseased,
    Healthy,
}

/// Decision threshold plus the ensemble roster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    pub gamma: f64,
    pub members: Vec<ClassifierId>,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            gamma: DEFAULT_GAMMA,
            members: ClassifierId::all().to_vec(),
        }
    }
}

impl GateConfig {
    pub fn new(gamma: f64, members: Vec<ClassifierId>) -> Result<Self> {
        let cfg = GateConfig { gamma, members };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Gamma must lie in `[0, 1]` and the members must be the eight ids, once each.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        let unique: BTreeSet<_> = self.members.iter().collect();
        if self.members.len() != ENSEMBLE_SIZE || unique.len() != ENSEMBLE_SIZE {
            return Err(Error::InvalidArgument(format!(
                "ensemble must list all {ENSEMBLE_SIZE} classifier ids exactly once, got [{}]",
                self.members.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(", ")
            )));
        }
        Ok(())
    }
}

/// OR-fusion of the member verdicts: diseased iff any probability `>= gamma`.
pub fn or_fuse(probabilities: &[f64], gamma: f64) -> Result<Decision> {
    if probabilities.len() != ENSEMBLE_SIZE {
        return Err(Error::Contract(format!(
            "expected {ENSEMBLE_SIZE} classifier probabilities, got {}",
            probabilities.len()
        )));
    }
    if gamma.is_nan() {
        return Err(Error::InvalidArgument("gamma is NaN".into()));
    }
    if let Some(p) = probabilities.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Contract(format!("classifier probability {p} outside [0, 1]")));
    }
    if probabilities.iter().any(|&p| p >= gamma) {
        Ok(Decision::Diseased)
    } else {
        Ok(Decision::Healthy)
    }
}

/// Replaces the prediction with zeros for healthy cases.
pub fn gate(decision: Decision, prob: &ProbabilityVolume) -> ProbabilityVolume {
    match decision {
        Decision::Diseased => prob.clone(),
        Decision::Healthy => ProbabilityVolume::zeros(prob.dims(), prob.spacing()).expect("valid grid"),
    }
}

/// `[max, mean, population sd, frac > 2.5, frac > 5, frac > 10]` of the pixels.
pub fn featurize_mip(m: &Mip2D) -> [f64; FEATURE_COUNT] {
    let n = m.data.len() as f64;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut above = [0usize; 3];
    for &v in &m.data {
        max = max.max(f64::from(v));
        sum += f64::from(v);
        for (k, t) in FEATURE_THRESHOLDS.iter().enumerate() {
            if v > *t {
                above[k] += 1;
            }
        }
    }
    let mean = sum / n;
    let var = m.data.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
    [
        max,
        mean,
        var.sqrt(),
        above[0] as f64 / n,
        above[1] as f64 / n,
        above[2] as f64 / n,
    ]
}

/// Anything that can score a single MIP.
pub trait MipClassifier {
    fn probability(&self, mip: &Mip2D) -> Result<f64>;
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Logistic regression over [`featurize_mip`] features.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BaselineClassifier {
    pub weights: [f64; FEATURE_COUNT],
    pub bias: f64,
}

impl BaselineClassifier {
    pub fn new(weights: [f64; FEATURE_COUNT], bias: f64) -> Result<Self> {
        if weights.iter().chain([&bias]).any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("classifier weights must be finite".into()));
        }
        Ok(BaselineClassifier { weights, bias })
    }

    fn logit(&self, f: &[f64; FEATURE_COUNT]) -> f64 {
        self.weights.iter().zip(f).map(|(w, x)| w * x).sum::<f64>() + self.bias
    }

    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        let f: [f64; FEATURE_COUNT] = features.try_into().map_err(|_| {
            Error::Contract(format!("expected {FEATURE_COUNT} features, got {}", features.len()))
        })?;
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("non-finite feature".into()));
        }
        Ok(sigmoid(self.logit(&f)))
    }

    /// Mean binary cross-entropy over the dataset.
    pub fn log_loss(&self, features: &[[f64; FEATURE_COUNT]], labels: &[bool]) -> f64 {
        let n = features.len() as f64;
        features
            .iter()
            .zip(labels)
            .map(|(f, &y)| {
                // log(1 + e^t) - y t, evaluated stably
                let t = self.logit(f);
                let softplus = if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
                softplus - if y { t } else { 0.0 }
            })
            .sum::<f64>()
            / n
    }

    /// Gradient of [`log_loss`](Self::log_loss) with respect to weights and bias.
    pub fn log_loss_gradient(
        &self,
        features: &[[f64; FEATURE_COUNT]],
        labels: &[bool],
    ) -> ([f64; FEATURE_COUNT], f64) {
        let n = features.len() as f64;
        let mut gw = [0.0; FEATURE_COUNT];
        let mut gb = 0.0;
        for (f, &y) in features.iter().zip(labels) {
            let r = sigmoid(self.logit(f)) - if y { 1.0 } else { 0.0 };
            for (g, x) in gw.iter_mut().zip(f) {
                *g += r * x;
            }
            gb += r;
        }
        gw.iter_mut().for_each(|g| *g /= n);
        (gw, gb / n)
    }
}

impl MipClassifier for BaselineClassifier {
    fn probability(&self, mip: &Mip2D) -> Result<f64> {
        self.predict(&featurize_mip(mip))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// `None` for full-batch descent; otherwise mini-batches drawn in a seeded order.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            epochs: 500,
            learning_rate: 0.5,
            batch_size: None,
            seed: 0,
        }
    }
}

/// Fits [`BaselineClassifier`] by gradient descent on the log-loss.
///
/// Descent runs on standardized features and the result is mapped back to raw
/// feature space, which keeps the loss surface well conditioned: with full
/// batches, any learning rate up to 8/7 makes the training loss non-increasing.
pub fn fit_baseline(
    features: &[[f64; FEATURE_COUNT]],
    labels: &[bool],
    cfg: &FitConfig,
) -> Result<BaselineClassifier> {
    fit_baseline_traced(features, labels, cfg).map(|(c, _)| c)
}

/// Like [`fit_baseline`], also returning the training loss after every epoch.
pub fn fit_baseline_traced(
    features: &[[f64; FEATURE_COUNT]],
    labels: &[bool],
    cfg: &FitConfig,
) -> Result<(BaselineClassifier, Vec<f64>)> {
    if features.is_empty() {
        return Err(Error::InvalidArgument("cannot fit on an empty dataset".into()));
    }
    if features.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} feature rows but {} labels",
            features.len(),
            labels.len()
        )));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite feature in training data".into()));
    }
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate {} must be positive", cfg.learning_rate)));
    }
    if cfg.batch_size == Some(0) {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }

    let n = features.len() as f64;
    let mut mean = [0.0; FEATURE_COUNT];
    let mut scale = [0.0; FEATURE_COUNT];
    for f in features {
        for j in 0..FEATURE_COUNT {
            mean[j] += f[j] / n;
        }
    }
    for f in features {
        for j in 0..FEATURE_COUNT {
            scale[j] += (f[j] - mean[j]).powi(2) / n;
        }
    }
    // constant columns become all-zero after centering
    let inv_sd: Vec<f64> = scale.iter().map(|v| if *v > 0.0 { 1.0 / v.sqrt() } else { 0.0 }).collect();
    let standardized: Vec<[f64; FEATURE_COUNT]> = features
        .iter()
        .map(|f| std::array::from_fn(|j| (f[j] - mean[j]) * inv_sd[j]))
        .collect();

    let mut model = BaselineClassifier::default();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let step = |model: &mut BaselineClassifier, rows: &[[f64; FEATURE_COUNT]], ys: &[bool]| {
        let (gw, gb) = model.log_loss_gradient(rows, ys);
        for (w, g) in model.weights.iter_mut().zip(gw) {
            *w -= cfg.learning_rate * g;
        }
        model.bias -= cfg.learning_rate * gb;
    };
    for _ in 0..cfg.epochs {
        match cfg.batch_size {
            None => step(&mut model, &standardized, labels),
            Some(b) => {
                order.shuffle(&mut rng);
                for chunk in order.chunks(b) {
                    let rows: Vec<_> = chunk.iter().map(|&i| standardized[i]).collect();
                    let ys: Vec<_> = chunk.iter().map(|&i| labels[i]).collect();
                    step(&mut model, &rows, &ys);
                }
            }
        }
        losses.push(model.log_loss(&standardized, labels));
    }

    let weights: [f64; FEATURE_COUNT] = std::array::from_fn(|j| model.weights[j] * inv_sd[j]);
    let bias = model.bias - (0..FEATURE_COUNT).map(|j| weights[j] * mean[j]).sum::<f64>();
    Ok((BaselineClassifier::new(weights, bias)?, losses))
}

/// Projections of one PET volume, with and without the brain.
#[derive(Debug, Clone)]
pub struct CaseMips {
    mips: BTreeMap<(Axis, Brain), Mip2D>,
}

impl CaseMips {
    pub fn compute(pet: &Volume3D, debrain_threshold: f32, connectivity: Connectivity) -> Result<Self> {
        let stripped = debrain(pet, debrain_threshold, connectivity)?;
        let mut mips = BTreeMap::new();
        for axis in [Axis::X, Axis::Y] {
            mips.insert((axis, Brain::Kept), mip(pet, axis));
            mips.insert((axis, Brain::Removed), mip(&stripped, axis));
        }
        Ok(CaseMips { mips })
    }

    pub fn for_member(&self, id: ClassifierId) -> &Mip2D {
        &self.mips[&(id.axis, id.brain)]
    }
}

/// Baseline classifier weights for every ensemble member, keyed by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BaselineEnsemble {
    pub members: BTreeMap<ClassifierId, BaselineClassifier>,
}

impl BaselineEnsemble {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ens: BaselineEnsemble = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(ens)
    }

    /// Scores the case's MIPs with each requested member, in roster order.
    pub fn probabilities(&self, mips: &CaseMips, members: &[ClassifierId]) -> Result<Vec<f64>> {
        members
            .iter()
            .map(|id| {
                let c = self
                    .members
                    .get(id)
                    .ok_or_else(|| Error::Contract(format!("no baseline weights for {id}")))?;
                c.probability(mips.for_member(*id))
            })
            .collect()
    }
}

#[derive(Debug, Deserialize)]
struct ScoreRow {
    study_id: String,
    classifier_id: String,
    probability: f64,
}

/// Externally computed classifier probabilities, per study and member.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    scores: BTreeMap<String, BTreeMap<ClassifierId, f64>>,
}

impl ScoreTable {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file).map_err(|e| match e {
            Error::Csv { source, .. } => Error::Csv {
                path: path.to_path_buf(),
                source,
            },
            other => other,
        })
    }

    /// Parses CSV with header `study_id,classifier_id,probability`.
    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|source| Error::Csv {
            path: "<score table>".into(),
            source,
        })?;
        if headers.iter().collect::<Vec<_>>() != ["study_id", "classifier_id", "probability"] {
            return Err(Error::Contract(format!(
                "score file header must be study_id,classifier_id,probability, got {:?}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut table = ScoreTable::default();
        for row in rdr.deserialize::<ScoreRow>() {
            let row = row.map_err(|source| Error::Csv {
                path: "<score table>".into(),
                source,
            })?;
            let id: ClassifierId = row.classifier_id.parse()?;
            if !(0.0..=1.0).contains(&row.probability) {
                return Err(Error::Contract(format!(
                    "probability {} for {}/{id} outside [0, 1]",
                    row.probability, row.study_id
                )));
            }
            let slot = table.scores.entry(row.study_id.clone()).or_default();
            if slot.insert(id, row.probability).is_some() {
                return Err(Error::Contract(format!("duplicate score for {}/{id}", row.study_id)));
            }
        }
        Ok(table)
    }

    pub fn insert(&mut self, study: &str, id: ClassifierId, probability: f64) {
        self.scores.entry(study.to_string()).or_default().insert(id, probability);
    }

    /// Member probabilities in roster order; any missing entry is an error.
    pub fn probabilities(&self, study: &str, members: &[ClassifierId]) -> Result<Vec<f64>> {
        let row = self
            .scores
            .get(study)
            .ok_or_else(|| Error::Contract(format!("no classifier scores for study {study:?}")))?;
        members
            .iter()
            .map(|id| {
                row.get(id)
                    .copied()
                    .ok_or_else(|| Error::Contract(format!("missing score for {study}/{id}")))
            })
            .collect()
    }
}
