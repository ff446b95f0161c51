//! Split protocol, pooled "test-like" error and confusion reports.
//!
//! The test-like set `S*` is the held-out test trials plus `n'` vectors drawn
//! from the training set after one seeded shuffle. Those `n'` vectors stay in
//! the training set, so their share of the error is a resubstitution error:
//! the pooled estimate
//!
//! ```text
//! err(S*) = 1/(m + n') * sum_{(x, y) in S*} 1[psi(x) != y]
//! ```
//!
//! is a convex combination of the test error (weight `m/(m+n')`) and the
//! resubstitution error on the `n'` subset. It is not a held-out error.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dtsvm::{self, ClassCentroid, DtSvmError, DtSvmModel};
use crate::features::FeatureVector;
use crate::ingest::{N_TRIALS, VOWEL_NAMES};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("session subject {subject}, vowel {vowel} is missing trial(s) {missing:?}")]
    MissingTrials {
        subject: u32,
        vowel: u8,
        missing: Vec<u8>,
    },
    #[error("test trial {0} is also in the dropped set")]
    TestTrialDropped(u8),
    #[error("trial index {0} outside 1..=10")]
    TrialIndex(u8),
    #[error("n' = {n_prime} exceeds training set size {train}")]
    NPrimeTooLarge { n_prime: usize, train: usize },
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("label {label} outside 1..={n_classes}")]
    LabelRange { label: u8, n_classes: usize },
    #[error(transparent)]
    Model(#[from] DtSvmError),
}

/// Anything that maps a feature vector to a class label in `1..=K`.
pub trait Classifier {
    fn classify(&self, x: &[f64]) -> Result<u8, EvalError>;
}

impl Classifier for DtSvmModel {
    fn classify(&self, x: &[f64]) -> Result<u8, EvalError> {
        Ok(dtsvm::predict_dtsvm(self, x)?)
    }
}

impl<F: Fn(&[f64]) -> u8> Classifier for F {
    fn classify(&self, x: &[f64]) -> Result<u8, EvalError> {
        Ok(self(x))
    }
}

/// Nearest class mean under Euclidean distance; the linear reference point
/// for the tree SVM.
#[derive(Debug, Clone, PartialEq)]
pub struct NearestCentroid {
    pub centroids: Vec<ClassCentroid>,
}

impl NearestCentroid {
    pub fn fit(features: &[FeatureVector]) -> Result<Self, EvalError> {
        Ok(Self {
            centroids: dtsvm::class_centroids(features)?,
        })
    }
}

impl Classifier for NearestCentroid {
    fn classify(&self, x: &[f64]) -> Result<u8, EvalError> {
        let mut best = (f64::INFINITY, 0u8);
        for c in &self.centroids {
            if c.centroid.len() != x.len() {
                return Err(DtSvmError::DimensionMismatch {
                    expected: c.centroid.len(),
                    got: x.len(),
                }
                .into());
            }
            let d: f64 = c.centroid.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum();
            if d < best.0 {
                best = (d, c.class_id);
            }
        }
        Ok(best.1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub dropped_trials: Vec<u8>,
    pub test_trial: u8,
    pub n_prime: usize,
    pub shuffle_seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            dropped_trials: vec![1, 10],
            test_trial: 4,
            n_prime: 100,
            shuffle_seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        for &t in self.dropped_trials.iter().chain([&self.test_trial]) {
            if t == 0 || t as usize > N_TRIALS {
                return Err(EvalError::TrialIndex(t));
            }
        }
        if self.dropped_trials.contains(&self.test_trial) {
            return Err(EvalError::TestTrialDropped(self.test_trial));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    /// Training set `S_n`, in (subject, vowel, trial) order.
    pub train: Vec<FeatureVector>,
    /// Held-out set `S_t`.
    pub test: Vec<FeatureVector>,
    /// `S_t` followed by the `n'` resubstitution vectors.
    pub test_like: Vec<FeatureVector>,
    /// Positions in `train` of the resubstitution vectors.
    pub resubstitution: Vec<usize>,
}

impl Split {
    pub fn m(&self) -> usize {
        self.test.len()
    }

    pub fn n_prime(&self) -> usize {
        self.resubstitution.len()
    }
}

pub fn split_protocol(features: &[FeatureVector], spec: &SplitSpec) -> Result<Split, EvalError> {
    spec.validate()?;
    let mut present: BTreeMap<(u32, u8), BTreeSet<u8>> = BTreeMap::new();
    for f in features {
        if f.trial_index == 0 || f.trial_index as usize > N_TRIALS {
            return Err(EvalError::TrialIndex(f.trial_index));
        }
        present.entry((f.subject_id, f.label)).or_default().insert(f.trial_index);
    }
    for (&(subject, vowel), trials) in &present {
        let missing: Vec<u8> = (1..=N_TRIALS as u8).filter(|t| !trials.contains(t)).collect();
        if !missing.is_empty() {
            return Err(EvalError::MissingTrials {
                subject,
                vowel,
                missing,
            });
        }
    }

    let mut kept: Vec<&FeatureVector> = features
        .iter()
        .filter(|f| !spec.dropped_trials.contains(&f.trial_index))
        .collect();
    kept.sort_by_key(|f| (f.subject_id, f.label, f.trial_index));
    let (test, train): (Vec<FeatureVector>, Vec<FeatureVector>) = kept
        .into_iter()
        .cloned()
        .partition(|f| f.trial_index == spec.test_trial);

    if spec.n_prime > train.len() {
        return Err(EvalError::NPrimeTooLarge {
            n_prime: spec.n_prime,
            train: train.len(),
        });
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.shuffle_seed));
    let resubstitution: Vec<usize> = order[..spec.n_prime].to_vec();
    let test_like = test
        .iter()
        .cloned()
        .chain(resubstitution.iter().map(|&i| train[i].clone()))
        .collect();
    Ok(Split {
        train,
        test,
        test_like,
        resubstitution,
    })
}

pub fn predictions<C: Classifier + ?Sized>(
    model: &C,
    set: &[FeatureVector],
) -> Result<Vec<u8>, EvalError> {
    set.iter().map(|f| model.classify(&f.values)).collect()
}

/// Misclassification rate over `s_star`.
pub fn test_like_error<C: Classifier + ?Sized>(
    model: &C,
    s_star: &[FeatureVector],
) -> Result<f64, EvalError> {
    if s_star.is_empty() {
        return Err(EvalError::EmptyEvalSet);
    }
    let wrong = s_star
        .iter()
        .map(|f| model.classify(&f.values).map(|p| (p != f.label) as usize))
        .sum::<Result<usize, _>>()?;
    Ok(wrong as f64 / s_star.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_classes: usize,
    /// `confusion[i][j]`: share of class `i+1` samples predicted `j+1`.
    pub confusion: Vec<Vec<f64>>,
    /// Raw counts behind `confusion`.
    pub counts: Vec<Vec<usize>>,
    pub class_support: Vec<usize>,
    pub per_class_accuracy: Vec<f64>,
    pub per_class_error: Vec<f64>,
    pub overall_error: f64,
    pub m: usize,
    pub n_prime: usize,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        1.0 - self.overall_error
    }

    /// Per true class, the other classes it was mistaken for, most frequent
    /// first. Zero entries are omitted; ties keep label order.
    pub fn confusion_ranking(&self) -> Vec<Vec<(u8, f64)>> {
        self.confusion
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let mut off: Vec<(u8, f64)> = row
                    .iter()
                    .enumerate()
                    .filter(|&(j, &v)| j != i && v > 0.0)
                    .map(|(j, &v)| (j as u8 + 1, v))
                    .collect();
                off.sort_by(|a, b| b.1.total_cmp(&a.1));
                off
            })
            .collect()
    }

    /// `1 - sum_i w_i M[i][i]` with `w_i` the class share of the set.
    pub fn weighted_diagonal_error(&self) -> f64 {
        let total: usize = self.class_support.iter().sum();
        1.0 - self
            .confusion
            .iter()
            .enumerate()
            .map(|(i, row)| self.class_support[i] as f64 / total as f64 * row[i])
            .sum::<f64>()
    }
}

/// Confusion counts over `s_star` for labels `1..=n_classes`. `m` and
/// `n_prime` are recorded as given.
pub fn confusion_matrix<C: Classifier + ?Sized>(
    model: &C,
    s_star: &[FeatureVector],
    n_classes: usize,
    m: usize,
    n_prime: usize,
) -> Result<EvalReport, EvalError> {
    if s_star.is_empty() {
        return Err(EvalError::EmptyEvalSet);
    }
    let mut counts = vec![vec![0usize; n_classes]; n_classes];
    let mut wrong = 0usize;
    for f in s_star {
        let p = model.classify(&f.values)?;
        for label in [f.label, p] {
            if label == 0 || label as usize > n_classes {
                return Err(EvalError::LabelRange { label, n_classes });
            }
        }
        counts[f.label as usize - 1][p as usize - 1] += 1;
        wrong += (p != f.label) as usize;
    }
    let class_support: Vec<usize> = counts.iter().map(|r| r.iter().sum()).collect();
    let confusion: Vec<Vec<f64>> = counts
        .iter()
        .zip(&class_support)
        .map(|(row, &n)| {
            row.iter()
                .map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
                .collect()
        })
        .collect();
    let per_class_accuracy: Vec<f64> = (0..n_classes).map(|i| confusion[i][i]).collect();
    let per_class_error = per_class_accuracy.iter().map(|a| 1.0 - a).collect();
    Ok(EvalReport {
        n_classes,
        confusion,
        counts,
        class_support,
        per_class_accuracy,
        per_class_error,
        overall_error: wrong as f64 / s_star.len() as f64,
        m,
        n_prime,
    })
}

/// Header values written at the top of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub shuffle_seed: u64,
    pub metric: String,
    pub c_penalty: f64,
    /// Kernel width of each tree level.
    pub sigmas: Vec<f64>,
    pub dendrogram: String,
    pub train_size: usize,
}

impl ReportMeta {
    pub fn estimator(&self, report: &EvalReport) -> &'static str {
        if report.n_prime == 0 {
            "pure test"
        } else {
            "test-like (held-out test + resubstitution subset)"
        }
    }
}

fn class_name(i: usize) -> String {
    match VOWEL_NAMES.get(i) {
        Some(v) => format!("{}/{}/", i + 1, v),
        None => format!("{}", i + 1),
    }
}

/// Text form: `key = value` header, then `[confusion]` and `[per_class]`
/// blocks. Numbers use fixed precision so equal runs give equal bytes.
pub fn render_text(report: &EvalReport, meta: &ReportMeta) -> String {
    let mut s = String::new();
    let sigmas: Vec<String> = meta.sigmas.iter().map(|v| format!("{v:.6}")).collect();
    let _ = writeln!(s, "estimator = {}", meta.estimator(report));
    let _ = writeln!(s, "shuffle_seed = {}", meta.shuffle_seed);
    let _ = writeln!(s, "train_size = {}", meta.train_size);
    let _ = writeln!(s, "m = {}", report.m);
    let _ = writeln!(s, "n_prime = {}", report.n_prime);
    let _ = writeln!(s, "eval_size = {}", report.class_support.iter().sum::<usize>());
    let _ = writeln!(s, "metric = {}", meta.metric);
    let _ = writeln!(s, "c = {:.6}", meta.c_penalty);
    let _ = writeln!(s, "sigma = [{}]", sigmas.join(", "));
    let _ = writeln!(s, "dendrogram = {}", meta.dendrogram);
    let _ = writeln!(s, "overall_error = {:.6}", report.overall_error);
    let _ = writeln!(s, "overall_accuracy = {:.6}", report.accuracy());
    if report.n_prime > 0 {
        let _ = writeln!(
            s,
            "note = {} of the evaluated vectors are also training vectors",
            report.n_prime
        );
    }

    let _ = writeln!(s, "\n[confusion]");
    let _ = write!(s, "{:>8}", "y\\psi");
    for j in 0..report.n_classes {
        let _ = write!(s, " {:>8}", class_name(j));
    }
    s.push('\n');
    for (i, row) in report.confusion.iter().enumerate() {
        let _ = write!(s, "{:>8}", class_name(i));
        for v in row {
            let _ = write!(s, " {v:>8.4}");
        }
        s.push('\n');
    }

    let _ = writeln!(s, "\n[per_class]");
    let _ = writeln!(s, "{:>8} {:>8} {:>9} {:>9}  confused_with", "class", "support", "accuracy", "error");
    for (i, ranked) in report.confusion_ranking().iter().enumerate() {
        let others: Vec<String> = ranked
            .iter()
            .map(|(j, v)| format!("{}:{:.4}", class_name(*j as usize - 1), v))
            .collect();
        let _ = writeln!(
            s,
            "{:>8} {:>8} {:>9.4} {:>9.4}  {}",
            class_name(i),
            report.class_support[i],
            report.per_class_accuracy[i],
            report.per_class_error[i],
            others.join(" ")
        );
    }
    s
}

#[derive(Serialize)]
struct JsonReport<'a> {
    estimator: &'a str,
    meta: &'a ReportMeta,
    report: &'a EvalReport,
    confusion_ranking: Vec<Vec<(u8, f64)>>,
}

/// Single JSON object with the same content as [`render_text`].
pub fn render_json(report: &EvalReport, meta: &ReportMeta) -> String {
    serde_json::to_string_pretty(&JsonReport {
        estimator: meta.estimator(report),
        meta,
        report,
        confusion_ranking: report.confusion_ranking(),
    })
    .expect("report serializes")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}
