//! Patient-grouped, sex × diagnosis stratified k-fold assignment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diagnosis {
    Negative,
    Melanoma,
    LungCancer,
    Lymphoma,
}

impl Diagnosis {
    pub const ALL: [Diagnosis; 4] = [
        Diagnosis::Negative,
        Diagnosis::Melanoma,
        Diagnosis::LungCancer,
        Diagnosis::Lymphoma,
    ];
}

impl FromStr for Diagnosis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        match norm.as_str() {
            "negative" => Ok(Diagnosis::Negative),
            "melanoma" => Ok(Diagnosis::Melanoma),
            "lung_cancer" => Ok(Diagnosis::LungCancer),
            "lymphoma" => Ok(Diagnosis::Lymphoma),
            _ => Err(Error::InvalidArgument(format!("unknown diagnosis {s:?}"))),
        }
    }
}

impl fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Diagnosis::Negative => "negative",
            Diagnosis::Melanoma => "melanoma",
            Diagnosis::LungCancer => "lung_cancer",
            Diagnosis::Lymphoma => "lymphoma",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub study_id: String,
    pub patient_id: String,
    pub sex: String,
    pub diagnosis: Diagnosis,
}

impl StudyRecord {
    pub fn new(study_id: &str, patient_id: &str, sex: &str, diagnosis: Diagnosis) -> Self {
        StudyRecord {
            study_id: study_id.to_string(),
            patient_id: patient_id.to_string(),
            sex: sex.to_string(),
            diagnosis,
        }
    }
}

#[derive(Deserialize)]
struct RawRecord {
    study_id: String,
    patient_id: String,
    sex: String,
    diagnosis: String,
}

/// Reads a roster CSV with header `study_id,patient_id,sex,diagnosis`.
pub fn read_records(reader: impl Read) -> Result<Vec<StudyRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize::<RawRecord>() {
        let row = row.map_err(|source| Error::Csv {
            path: "<records>".into(),
            source,
        })?;
        if row.study_id.is_empty() || row.patient_id.is_empty() {
            return Err(Error::InvalidArgument("study and patient ids must be non-empty".into()));
        }
        out.push(StudyRecord {
            study_id: row.study_id,
            patient_id: row.patient_id,
            sex: row.sex,
            diagnosis: row.diagnosis.parse()?,
        });
    }
    Ok(out)
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<StudyRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(file).map_err(|e| match e {
        Error::Csv { source, .. } => Error::Csv {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

/// Fold index per patient.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub k: usize,
    pub seed: u64,
    pub folds: BTreeMap<String, usize>,
}

impl SplitAssignment {
    pub fn fold_of(&self, patient_id: &str) -> Option<usize> {
        self.folds.get(patient_id).copied()
    }
}

type Stratum = (String, Diagnosis);

struct Patient {
    id: String,
    stratum: Stratum,
    studies: usize,
}

fn group_patients(records: &[StudyRecord]) -> Result<Vec<Patient>> {
    let mut by_id: BTreeMap<&str, Patient> = BTreeMap::new();
    for r in records {
        if r.patient_id.is_empty() || r.study_id.is_empty() {
            return Err(Error::InvalidArgument("study and patient ids must be non-empty".into()));
        }
        let stratum = (r.sex.clone(), r.diagnosis);
        let p = by_id.entry(&r.patient_id).or_insert_with(|| Patient {
            id: r.patient_id.clone(),
            stratum: stratum.clone(),
            studies: 0,
        });
        if p.stratum != stratum {
            return Err(Error::Metadata(format!(
                "patient {} has conflicting sex/diagnosis: {:?} vs {:?}",
                r.patient_id, p.stratum, stratum
            )));
        }
        p.studies += 1;
    }
    Ok(by_id.into_values().collect())
}

/// Greedy stratified assignment.
///
/// Strata are visited in sorted order. Within a stratum, patients are shuffled
/// with the seeded RNG, stably sorted by descending study count, and each goes
/// to the fold holding the fewest studies of that stratum (ties: fewest studies
/// overall, then lowest index).
pub fn make_folds(records: &[StudyRecord], k: usize, seed: u64) -> Result<SplitAssignment> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {k}")));
    }
    let patients = group_patients(records)?;
    if k > patients.len() {
        return Err(Error::InvalidArgument(format!(
            "{k} folds requested but only {} patients",
            patients.len()
        )));
    }
    let mut strata: BTreeMap<&Stratum, Vec<&Patient>> = BTreeMap::new();
    for p in &patients {
        strata.entry(&p.stratum).or_default().push(p);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = vec![0usize; k];
    let mut folds = BTreeMap::new();
    for members in strata.values_mut() {
        members.shuffle(&mut rng);
        members.sort_by_key(|m| std::cmp::Reverse(m.studies));
        let mut in_stratum = vec![0usize; k];
        for p in members.iter() {
            let fold = (0..k)
                .min_by_key(|&f| (in_stratum[f], total[f], f))
                .expect("k >= 2");
            in_stratum[fold] += p.studies;
            total[fold] += p.studies;
            folds.insert(p.id.clone(), fold);
        }
    }
    Ok(SplitAssignment { k, seed, folds })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumBalance {
    pub sex: String,
    pub diagnosis: Diagnosis,
    /// Studies of this stratum in each fold.
    pub per_fold: Vec<usize>,
    pub imbalance: usize,
    /// Most studies held by a single patient of this stratum.
    pub max_patient_studies: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldReport {
    pub studies_per_fold: Vec<usize>,
    pub strata: Vec<StratumBalance>,
    pub max_imbalance: usize,
    /// Patients whose studies appear in more than one fold, or in none.
    pub grouping_violations: Vec<String>,
}

/// Checks grouping and per-stratum balance of an assignment against its roster.
///
/// The input assignment is per study here so split patients can be detected;
/// use [`study_folds`] to expand a [`SplitAssignment`].
pub fn validate_folds(study_fold: &BTreeMap<String, usize>, k: usize, records: &[StudyRecord]) -> FoldReport {
    let mut folds_of_patient: BTreeMap<&str, BTreeSet<Option<usize>>> = BTreeMap::new();
    let mut per_stratum: BTreeMap<Stratum, Vec<usize>> = BTreeMap::new();
    let mut patient_studies: BTreeMap<(&Stratum, &str), usize> = BTreeMap::new();
    let mut studies_per_fold = vec![0usize; k];
    let mut strata_of: Vec<Stratum> = Vec::with_capacity(records.len());
    for r in records {
        strata_of.push((r.sex.clone(), r.diagnosis));
    }
    for (r, stratum) in records.iter().zip(&strata_of) {
        let fold = study_fold.get(&r.study_id).copied().filter(|&f| f < k);
        folds_of_patient.entry(&r.patient_id).or_default().insert(fold);
        *patient_studies.entry((stratum, &r.patient_id)).or_default() += 1;
        if let Some(f) = fold {
            studies_per_fold[f] += 1;
            per_stratum.entry(stratum.clone()).or_insert_with(|| vec![0; k])[f] += 1;
        }
    }
    let grouping_violations = folds_of_patient
        .into_iter()
        .filter(|(_, fs)| fs.len() > 1 || fs.contains(&None))
        .map(|(p, _)| p.to_string())
        .collect();
    let strata: Vec<StratumBalance> = per_stratum
        .into_iter()
        .map(|(stratum, per_fold)| {
            let max = per_fold.iter().max().copied().unwrap_or(0);
            let min = per_fold.iter().min().copied().unwrap_or(0);
            let max_patient_studies = patient_studies
                .iter()
                .filter(|((s, _), _)| **s == stratum)
                .map(|(_, &n)| n)
                .max()
                .unwrap_or(0);
            StratumBalance {
                sex: stratum.0,
                diagnosis: stratum.1,
                per_fold,
                imbalance: max - min,
                max_patient_studies,
            }
        })
        .collect();
    FoldReport {
        studies_per_fold,
        max_imbalance: strata.iter().map(|s| s.imbalance).max().unwrap_or(0),
        strata,
        grouping_violations,
    }
}

/// [`validate_folds`] for a patient-level assignment.
pub fn validate_assignment(assignment: &SplitAssignment, records: &[StudyRecord]) -> FoldReport {
    validate_folds(&study_folds(assignment, records), assignment.k, records)
}

/// Study → fold map implied by a patient-level assignment.
pub fn study_folds(assignment: &SplitAssignment, records: &[StudyRecord]) -> BTreeMap<String, usize> {
    records
        .iter()
        .filter_map(|r| assignment.fold_of(&r.patient_id).map(|f| (r.study_id.clone(), f)))
        .collect()
}
