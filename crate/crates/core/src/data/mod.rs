//! ECG records, downstream samples, splits, persistence and the synthetic
//! generator.

mod container;
mod metadata_csv;
mod synthetic;

pub use container::{
    inspect, load_downstream, load_noise_bank, load_pretrain, save_downstream, save_pretrain, ContainerKind,
    ContainerSummary, FORMAT_VERSION,
};
pub use metadata_csv::{read_metadata_csv, write_metadata_csv, write_scores_csv};
pub use synthetic::{downstream_latents, generate, generate_downstream, generate_pretrain, SyntheticConfig, NUM_LEADS};

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::stream;
use crate::risk::{impute, score2, ImputeOptions, MetadataRecord, RiskScore};

/// Environment variable naming the default directory for dataset files.
pub const DATA_ROOT_ENV: &str = "ECG_CONTRAST_DATA_ROOT";

/// Stream key separating imputation draws from other per-subject streams.
const IMPUTE_STREAM: u64 = 0x1a9c;

/// A multi-lead recording with its subject's metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub subject_id: u64,
    /// `leads[l]` holds lead `l + 1`.
    pub leads: Vec<Vec<f32>>,
    pub metadata: MetadataRecord,
}

impl EcgRecord {
    pub fn len(&self) -> usize {
        self.leads.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lead `lead` (1-based) as `f64`.
    pub fn lead(&self, lead: u8) -> Result<Vec<f64>> {
        let idx = (lead as usize).checked_sub(1).ok_or_else(|| Error::config("leads are numbered from 1"))?;
        let l = self.leads.get(idx).ok_or(Error::LeadCount { found: self.leads.len(), needed: lead as usize })?;
        Ok(l.iter().map(|&v| v as f64).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.leads.iter().any(|l| l.len() != n) {
            return Err(Error::Malformed(format!("subject {}: leads differ in length", self.subject_id)));
        }
        self.metadata.validate()
    }
}

/// Pretraining data: one record per subject, all at the same rate.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainSet {
    pub fs: f64,
    pub records: Vec<EcgRecord>,
}

impl PretrainSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> PretrainSet {
        PretrainSet { fs: self.fs, records: idx.iter().map(|&i| self.records[i].clone()).collect() }
    }

    /// SCORE2 risk per record. Imputation jitter is drawn from a stream keyed
    /// by `(seed, subject_id)`, so a subject always gets the same score.
    pub fn risk_scores(&self, seed: u64, opts: &ImputeOptions) -> Vec<RiskScore> {
        self.records.iter().map(|r| score_keyed(&r.metadata, r.subject_id, seed, opts)).collect()
    }
}

fn score_keyed(meta: &MetadataRecord, subject_id: u64, seed: u64, opts: &ImputeOptions) -> RiskScore {
    let mut rng = stream(seed, &[IMPUTE_STREAM, subject_id]);
    score2(&impute(meta, &mut rng, opts))
}

/// Validates and scores loose metadata rows, drawing imputation jitter the
/// same way as [`PretrainSet::risk_scores`] with `ids` as subject ids.
pub fn score_records(records: &[MetadataRecord], ids: &[u64], seed: u64, opts: &ImputeOptions) -> Result<Vec<RiskScore>> {
    if ids.len() != records.len() {
        return Err(Error::shape("score_records", format!("{} ids for {} records", ids.len(), records.len())));
    }
    records
        .iter()
        .zip(ids)
        .enumerate()
        .map(|(i, (m, &id))| {
            m.validate().map_err(|e| match e {
                Error::InvalidMetadata(msg) => Error::InvalidMetadata(format!("row {}: {msg}", i + 1)),
                other => other,
            })?;
            Ok(score_keyed(m, id, seed, opts))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "classes")]
pub enum TaskKind {
    Binary,
    Categorical(u16),
    Regression,
}

impl TaskKind {
    pub fn code(self) -> u8 {
        match self {
            TaskKind::Binary => 1,
            TaskKind::Categorical(_) => 2,
            TaskKind::Regression => 3,
        }
    }

    pub fn is_classification(self) -> bool {
        !matches!(self, TaskKind::Regression)
    }

    /// Width of the linear head.
    pub fn outputs(self) -> usize {
        match self {
            TaskKind::Binary | TaskKind::Regression => 1,
            TaskKind::Categorical(k) => k as usize,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::Binary => f.write_str("binary"),
            TaskKind::Categorical(k) => write!(f, "categorical:{k}"),
            TaskKind::Regression => f.write_str("regression"),
        }
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.split_once(':') {
            None if s == "binary" => Ok(TaskKind::Binary),
            None if s == "regression" => Ok(TaskKind::Regression),
            Some(("categorical", k)) => {
                let k: u16 = k.parse().map_err(|_| Error::config(format!("bad class count in {s:?}")))?;
                if k < 2 {
                    return Err(Error::config("categorical tasks need at least 2 classes"));
                }
                Ok(TaskKind::Categorical(k))
            }
            _ => Err(Error::config(format!("unknown task kind {s:?}"))),
        }
    }
}

/// Downstream label. Binary labels are 0/1, categorical labels are class
/// indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Label {
    Binary(bool),
    Class(u16),
    Real(f64),
}

impl Label {
    pub fn as_f64(self) -> f64 {
        match self {
            Label::Binary(b) => b as u8 as f64,
            Label::Class(c) => c as f64,
            Label::Real(v) => v,
        }
    }

    pub fn matches(self, task: TaskKind) -> bool {
        match (self, task) {
            (Label::Binary(_), TaskKind::Binary) | (Label::Real(_), TaskKind::Regression) => true,
            (Label::Class(c), TaskKind::Categorical(k)) => c < k,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DownstreamSample {
    pub subject_id: u64,
    pub signal: Vec<f32>,
    pub label: Label,
}

/// Labelled single-lead data; the lead is the same for every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DownstreamSet {
    pub fs: f64,
    pub lead: u8,
    pub task: TaskKind,
    pub samples: Vec<DownstreamSample>,
}

impl DownstreamSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> DownstreamSet {
        DownstreamSet {
            fs: self.fs,
            lead: self.lead,
            task: self.task,
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.samples {
            if !s.label.matches(self.task) {
                return Err(Error::LabelMismatch(format!(
                    "subject {} has label {:?} for a {} task",
                    s.subject_id, s.label, self.task
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    Sequential,
    BySubject,
}

impl FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(SplitMode::Sequential),
            "by-subject" | "by_subject" => Ok(SplitMode::BySubject),
            _ => Err(Error::config(format!("unknown split mode {s:?}"))),
        }
    }
}

/// Index sets of a three-way split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits `subject_ids.len()` items into train/val/test.
///
/// Target sizes are `round(f0 * n)` and `round(f1 * n)`, with the remainder
/// going to test. Sequential mode keeps the original order inside each part;
/// by-subject mode shuffles whole subjects with `seed` and never places one
/// subject in two parts (sizes then hold approximately).
pub fn split(subject_ids: &[u64], fractions: [f64; 3], mode: SplitMode, seed: u64) -> Result<Split> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split fractions must be in [0, 1] and sum to 1, got {fractions:?}")));
    }
    let n = subject_ids.len();
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    match mode {
        SplitMode::Sequential => Ok(Split {
            train: (0..n_train).collect(),
            val: (n_train..n_train + n_val).collect(),
            test: (n_train + n_val..n).collect(),
        }),
        SplitMode::BySubject => {
            let mut groups: Vec<(u64, Vec<usize>)> = Vec::new();
            let mut order: std::collections::BTreeMap<u64, usize> = Default::default();
            for (i, &s) in subject_ids.iter().enumerate() {
                let g = *order.entry(s).or_insert_with(|| {
                    groups.push((s, Vec::new()));
                    groups.len() - 1
                });
                groups[g].1.push(i);
            }
            groups.shuffle(&mut stream(seed, &[0x5b17]));
            let mut out = Split { train: Vec::new(), val: Vec::new(), test: Vec::new() };
            for (_, idx) in groups {
                let part = if out.train.len() < n_train {
                    &mut out.train
                } else if out.val.len() < n_val {
                    &mut out.val
                } else {
                    &mut out.test
                };
                part.extend(idx);
            }
            for part in [&mut out.train, &mut out.val, &mut out.test] {
                part.sort_unstable();
            }
            Ok(out)
        }
    }
}
