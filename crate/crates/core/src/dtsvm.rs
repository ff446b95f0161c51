//! Decision-tree multi-class SVM built on a class dendrogram.
//!
//! Classes are merged bottom-up by centroid linkage: at every step the two
//! current groups whose (count-weighted) mean vectors are closest are
//! joined. Each merge becomes one node of the decision tree, and one binary
//! SVM per node separates the two groups it joins. Prediction starts at the
//! final merge and follows the classifier signs down to a single class.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureVector, PcaModel};
use crate::svm::{self, BinarySvmModel, SvmConfig, SvmError};

#[derive(Debug, Error, PartialEq)]
pub enum DtSvmError {
    #[error("class {0} has no feature vectors")]
    MissingClass(u8),
    #[error("class {class} has {count} vectors, need at least {needed}")]
    TooFewVectors { class: u8, count: usize, needed: usize },
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cosine distance undefined for a zero vector")]
    ZeroVector,
    #[error("rank correlation undefined for a constant vector")]
    ConstantVector,
    #[error("standardized distance undefined: dimension {0} has zero variance")]
    ZeroVarianceDimension(usize),
    #[error("standardized distance needs a per-dimension scale vector")]
    MissingScale,
    #[error("unknown distance metric {0:?}")]
    UnknownMetric(String),
    #[error("invalid class label 0")]
    ZeroLabel,
    #[error("malformed model: {0}")]
    MalformedModel(String),
    #[error("no training data")]
    Empty,
    #[error(transparent)]
    Svm(#[from] SvmError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCentroid {
    pub class_id: u8,
    pub centroid: Vec<f64>,
    pub count: usize,
}

/// Mean vector per class `1..=K`, where `K` is the largest label present.
///
/// Each class is summed in a canonical row order so the result does not
/// depend on input order.
pub fn class_centroids(features: &[FeatureVector]) -> Result<Vec<ClassCentroid>, DtSvmError> {
    if features.is_empty() {
        return Err(DtSvmError::Empty);
    }
    let dim = features[0].values.len();
    if let Some(f) = features.iter().find(|f| f.values.len() != dim) {
        return Err(DtSvmError::DimensionMismatch {
            expected: dim,
            got: f.values.len(),
        });
    }
    if features.iter().any(|f| f.label == 0) {
        return Err(DtSvmError::ZeroLabel);
    }
    let k = features.iter().map(|f| f.label).max().unwrap_or(0);
    (1..=k)
        .map(|class_id| {
            let mut rows: Vec<&[f64]> = features
                .iter()
                .filter(|f| f.label == class_id)
                .map(|f| f.values.as_slice())
                .collect();
            if rows.is_empty() {
                return Err(DtSvmError::MissingClass(class_id));
            }
            rows.sort_by(|a, b| lex_cmp(a, b));
            let mut centroid = vec![0.0; dim];
            for r in &rows {
                for (c, v) in centroid.iter_mut().zip(*r) {
                    *c += v;
                }
            }
            let count = rows.len();
            centroid.iter_mut().for_each(|c| *c /= count as f64);
            Ok(ClassCentroid {
                class_id,
                centroid,
                count,
            })
        })
        .collect()
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    #[default]
    Euclidean,
    Seuclidean,
    Cosine,
    Spearman,
}

impl DistanceMetric {
    pub const ALL: [DistanceMetric; 4] = [
        DistanceMetric::Euclidean,
        DistanceMetric::Seuclidean,
        DistanceMetric::Cosine,
        DistanceMetric::Spearman,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DistanceMetric::Euclidean => "euclidean",
            DistanceMetric::Seuclidean => "seuclidean",
            DistanceMetric::Cosine => "cosine",
            DistanceMetric::Spearman => "spearman",
        }
    }
}

impl fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistanceMetric {
    type Err = DtSvmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DistanceMetric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| DtSvmError::UnknownMetric(s.to_string()))
    }
}

/// A metric together with whatever data it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Distance {
    Euclidean,
    /// Per-dimension standard deviations.
    Seuclidean(Vec<f64>),
    Cosine,
    Spearman,
}

impl Distance {
    /// Pooled standard deviations for `Seuclidean` come from `rows`.
    pub fn for_metric(metric: DistanceMetric, rows: &[Vec<f64>]) -> Result<Self, DtSvmError> {
        Ok(match metric {
            DistanceMetric::Euclidean => Distance::Euclidean,
            DistanceMetric::Cosine => Distance::Cosine,
            DistanceMetric::Spearman => Distance::Spearman,
            DistanceMetric::Seuclidean => Distance::Seuclidean(pooled_std(rows)?),
        })
    }

    pub fn metric(&self) -> DistanceMetric {
        match self {
            Distance::Euclidean => DistanceMetric::Euclidean,
            Distance::Seuclidean(_) => DistanceMetric::Seuclidean,
            Distance::Cosine => DistanceMetric::Cosine,
            Distance::Spearman => DistanceMetric::Spearman,
        }
    }
}

/// Sample standard deviation of every column.
pub fn pooled_std(rows: &[Vec<f64>]) -> Result<Vec<f64>, DtSvmError> {
    if rows.len() < 2 {
        return Err(DtSvmError::Empty);
    }
    let dim = rows[0].len();
    let n = rows.len() as f64;
    (0..dim)
        .map(|j| {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            if var > 0.0 {
                Ok(var.sqrt())
            } else {
                Err(DtSvmError::ZeroVarianceDimension(j))
            }
        })
        .collect()
}

/// Average ranks (1-based), ties share the mean of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && v[idx[end]] == v[idx[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

pub fn group_distance(a: &[f64], b: &[f64], distance: &Distance) -> Result<f64, DtSvmError> {
    if a.len() != b.len() {
        return Err(DtSvmError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    match distance {
        Distance::Euclidean => Ok(a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()),
        Distance::Seuclidean(scale) => {
            if scale.len() != a.len() {
                return Err(DtSvmError::MissingScale);
            }
            if let Some(j) = scale.iter().position(|s| !(*s > 0.0)) {
                return Err(DtSvmError::ZeroVarianceDimension(j));
            }
            Ok(a.iter()
                .zip(b)
                .zip(scale)
                .map(|((x, y), s)| ((x - y) / s).powi(2))
                .sum::<f64>()
                .sqrt())
        }
        Distance::Cosine => {
            let (na, nb) = (dot(a, a), dot(b, b));
            if na == 0.0 || nb == 0.0 {
                return Err(DtSvmError::ZeroVector);
            }
            Ok((1.0 - dot(a, b) / (na * nb).sqrt()).max(0.0))
        }
        Distance::Spearman => {
            let center = |v: &[f64]| {
                let r = average_ranks(v);
                let m = r.iter().sum::<f64>() / r.len() as f64;
                r.into_iter().map(|x| x - m).collect::<Vec<_>>()
            };
            let (ra, rb) = (center(a), center(b));
            let (va, vb) = (dot(&ra, &ra), dot(&rb, &rb));
            if va == 0.0 || vb == 0.0 {
                return Err(DtSvmError::ConstantVector);
            }
            Ok((1.0 - dot(&ra, &rb) / (va * vb).sqrt()).max(0.0))
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One dendrogram level: `group_a` joined with `group_b`. Groups hold
/// sorted class ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Merge {
    pub group_a: Vec<u8>,
    pub group_b: Vec<u8>,
}

impl Merge {
    pub fn union(&self) -> Vec<u8> {
        let mut u: Vec<u8> = self.group_a.iter().chain(&self.group_b).copied().collect();
        u.sort_unstable();
        u
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub merges: Vec<Merge>,
    pub n_classes: usize,
}

impl Dendrogram {
    /// Level whose merge produced exactly `group`.
    pub fn level_of(&self, group: &[u8]) -> Option<usize> {
        self.merges.iter().position(|m| m.union() == group)
    }
}

fn fmt_group(g: &[u8]) -> String {
    let ids: Vec<String> = g.iter().map(u8::to_string).collect();
    format!("{{{}}}", ids.join(","))
}

impl fmt::Display for Merge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", fmt_group(&self.group_a), fmt_group(&self.group_b))
    }
}

/// `[({4},{5}), ({2},{3}), ...]`
impl fmt::Display for Dendrogram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let merges: Vec<String> = self.merges.iter().map(Merge::to_string).collect();
        write!(f, "[{}]", merges.join(", "))
    }
}

/// Orientation of a merge: the larger group is `group_a`; between equal
/// sizes the one holding the smaller class id.
pub fn orient(x: Vec<u8>, y: Vec<u8>) -> Merge {
    let x_first = match x.len().cmp(&y.len()) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => x < y,
    };
    if x_first {
        Merge { group_a: x, group_b: y }
    } else {
        Merge { group_a: y, group_b: x }
    }
}

struct Group {
    members: Vec<u8>,
    mean: Vec<f64>,
}

/// Count-weighted mean of member centroids, members summed in id order.
fn group_mean(members: &[u8], centroids: &[ClassCentroid]) -> Vec<f64> {
    let dim = centroids[0].centroid.len();
    let mut sum = vec![0.0; dim];
    let mut total = 0usize;
    for &m in members {
        let c = &centroids[m as usize - 1];
        for (s, v) in sum.iter_mut().zip(&c.centroid) {
            *s += c.count as f64 * v;
        }
        total += c.count;
    }
    sum.iter_mut().for_each(|s| *s /= total as f64);
    sum
}

/// Agglomerative centroid linkage over class centroids.
///
/// Equal distances resolve to the pair whose (smaller, larger) sorted id
/// sets compare lexicographically smallest.
pub fn build_dendrogram(
    centroids: &[ClassCentroid],
    distance: &Distance,
) -> Result<Dendrogram, DtSvmError> {
    let k = centroids.len();
    if k < 2 {
        return Err(DtSvmError::TooFewClasses(k));
    }
    let mut sorted: Vec<ClassCentroid> = centroids.to_vec();
    sorted.sort_by_key(|c| c.class_id);
    for (i, c) in sorted.iter().enumerate() {
        if c.class_id as usize != i + 1 {
            return Err(DtSvmError::MissingClass(i as u8 + 1));
        }
    }

    let mut groups: Vec<Group> = sorted
        .iter()
        .map(|c| Group {
            members: vec![c.class_id],
            mean: c.centroid.clone(),
        })
        .collect();
    let mut merges = Vec::with_capacity(k - 1);
    while groups.len() > 1 {
        let mut best: Option<(f64, (&[u8], &[u8]), usize, usize)> = None;
        for p in 0..groups.len() {
            for q in p + 1..groups.len() {
                let d = group_distance(&groups[p].mean, &groups[q].mean, distance)?;
                let (gp, gq) = (&groups[p].members[..], &groups[q].members[..]);
                let key = if gp < gq { (gp, gq) } else { (gq, gp) };
                let better = match &best {
                    None => true,
                    Some((bd, bkey, _, _)) => d < *bd || (d == *bd && key < *bkey),
                };
                if better {
                    best = Some((d, key, p, q));
                }
            }
        }
        let (_, _, p, q) = best.expect("at least one pair");
        let gq = groups.remove(q);
        let gp = groups.remove(p);
        let merge = orient(gp.members, gq.members);
        let members = merge.union();
        let mean = group_mean(&members, &sorted);
        groups.push(Group { members, mean });
        groups.sort_by(|a, b| a.members.cmp(&b.members));
        merges.push(merge);
    }
    Ok(Dendrogram {
        merges,
        n_classes: k,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtSvmModel {
    pub dendrogram: Dendrogram,
    pub metric: DistanceMetric,
    /// One classifier per merge; `group_a` is the +1 side.
    pub classifiers: Vec<BinarySvmModel>,
    /// Per-channel projections used to build the feature vectors.
    pub pca_models: Vec<PcaModel>,
}

impl DtSvmModel {
    pub fn dim(&self) -> usize {
        self.classifiers.first().map_or(0, BinarySvmModel::dim)
    }

    pub fn n_classes(&self) -> usize {
        self.dendrogram.n_classes
    }

    pub fn all_converged(&self) -> bool {
        self.classifiers.iter().all(|c| c.converged)
    }

    /// Structural checks for models read from disk.
    pub fn validate(&self) -> Result<(), DtSvmError> {
        let d = &self.dendrogram;
        if d.n_classes < 2 || d.merges.len() != d.n_classes - 1 {
            return Err(DtSvmError::MalformedModel(format!(
                "{} merges for {} classes",
                d.merges.len(),
                d.n_classes
            )));
        }
        if self.classifiers.len() != d.merges.len() {
            return Err(DtSvmError::MalformedModel(format!(
                "{} classifiers for {} merges",
                self.classifiers.len(),
                d.merges.len()
            )));
        }
        let all: Vec<u8> = (1..=d.n_classes as u8).collect();
        if d.merges.last().map(Merge::union) != Some(all) {
            return Err(DtSvmError::MalformedModel("root does not cover all classes".into()));
        }
        for (i, m) in d.merges.iter().enumerate() {
            for g in [&m.group_a, &m.group_b] {
                if g.len() > 1 && d.merges[..i].iter().all(|e| &e.union() != g) {
                    return Err(DtSvmError::MalformedModel(format!(
                        "level {} joins a group never formed earlier",
                        i + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Classifier evaluation at one tree node.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionStep {
    /// 1-based dendrogram level.
    pub level: usize,
    pub decision_value: f64,
    pub sign: i8,
    /// Group the traversal descended into.
    pub chosen: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: u8,
    pub path: Vec<DecisionStep>,
}

pub fn train_dtsvm(
    features: &[FeatureVector],
    metric: DistanceMetric,
    config: &SvmConfig,
) -> Result<DtSvmModel, DtSvmError> {
    let centroids = class_centroids(features)?;
    if centroids.len() < 2 {
        return Err(DtSvmError::TooFewClasses(centroids.len()));
    }
    for c in &centroids {
        if c.count < 2 {
            return Err(DtSvmError::TooFewVectors {
                class: c.class_id,
                count: c.count,
                needed: 2,
            });
        }
    }
    let rows: Vec<Vec<f64>> = features.iter().map(|f| f.values.clone()).collect();
    let distance = Distance::for_metric(metric, &rows)?;
    let dendrogram = build_dendrogram(&centroids, &distance)?;

    let classifiers = dendrogram
        .merges
        .iter()
        .enumerate()
        .map(|(level, merge)| {
            let (x, y): (Vec<Vec<f64>>, Vec<i8>) = features
                .iter()
                .filter_map(|f| {
                    if merge.group_a.contains(&f.label) {
                        Some((f.values.clone(), 1))
                    } else if merge.group_b.contains(&f.label) {
                        Some((f.values.clone(), -1))
                    } else {
                        None
                    }
                })
                .unzip();
            let kernel = config.sigma.resolve(&x)?;
            let model = svm::smo_train(&x, &y, config.c, kernel, config.tol, config.max_iter)?;
            if !model.converged {
                warn!(
                    "level {} classifier {} stopped after {} iterations without meeting tol {}",
                    level + 1,
                    merge,
                    model.iterations,
                    config.tol
                );
            }
            Ok(model)
        })
        .collect::<Result<Vec<_>, DtSvmError>>()?;

    Ok(DtSvmModel {
        dendrogram,
        metric,
        classifiers,
        pca_models: Vec::new(),
    })
}

pub fn predict_dtsvm(model: &DtSvmModel, x: &[f64]) -> Result<u8, DtSvmError> {
    Ok(predict_with_trace(model, x)?.label)
}

/// Walk from the root merge down to a single class, recording every
/// classifier evaluated.
pub fn predict_with_trace(model: &DtSvmModel, x: &[f64]) -> Result<Prediction, DtSvmError> {
    if x.len() != model.dim() {
        return Err(DtSvmError::DimensionMismatch {
            expected: model.dim(),
            got: x.len(),
        });
    }
    let merges = &model.dendrogram.merges;
    let mut level = merges.len().checked_sub(1).ok_or(DtSvmError::Empty)?;
    let mut path = Vec::new();
    loop {
        let merge = &merges[level];
        let value = svm::svm_decision(&model.classifiers[level], x)?;
        let sign = svm::sign(value);
        let chosen = if sign > 0 { &merge.group_a } else { &merge.group_b };
        path.push(DecisionStep {
            level: level + 1,
            decision_value: value,
            sign,
            chosen: chosen.clone(),
        });
        if chosen.len() == 1 {
            return Ok(Prediction {
                label: chosen[0],
                path,
            });
        }
        level = model.dendrogram.level_of(chosen).ok_or_else(|| {
            DtSvmError::MalformedModel(format!("no level forms {}", fmt_group(chosen)))
        })?;
    }
}

/// Result of a cross-validated search over median-heuristic multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSearch {
    pub best_scale: f64,
    /// `(scale, mean held-out error)` per candidate.
    pub scores: Vec<(f64, f64)>,
}

/// Pick the `SigmaChoice::Median` multiplier with the lowest `folds`-fold
/// error on `features`. Fold assignment is a seeded shuffle; ties keep the
/// earlier candidate.
pub fn select_sigma_scale(
    features: &[FeatureVector],
    metric: DistanceMetric,
    base: &SvmConfig,
    scales: &[f64],
    folds: usize,
    seed: u64,
) -> Result<SigmaSearch, DtSvmError> {
    if scales.is_empty() || folds < 2 || features.len() < folds {
        return Err(DtSvmError::Empty);
    }
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; features.len()];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % folds;
    }

    let mut scores = Vec::with_capacity(scales.len());
    for &scale in scales {
        let config = SvmConfig {
            sigma: svm::SigmaChoice::Median { scale },
            ..*base
        };
        let mut wrong = 0usize;
        for fold in 0..folds {
            let (held, train): (Vec<&FeatureVector>, Vec<&FeatureVector>) =
                features.iter().enumerate().map(|(i, f)| (fold_of[i] == fold, f)).fold(
                    (Vec::new(), Vec::new()),
                    |(mut h, mut t), (is_held, f)| {
                        if is_held {
                            h.push(f)
                        } else {
                            t.push(f)
                        }
                        (h, t)
                    },
                );
            let train: Vec<FeatureVector> = train.into_iter().cloned().collect();
            let model = train_dtsvm(&train, metric, &config)?;
            for f in held {
                if predict_dtsvm(&model, &f.values)? != f.label {
                    wrong += 1;
                }
            }
        }
        scores.push((scale, wrong as f64 / features.len() as f64));
    }
    let best_scale = scores
        .iter()
        .fold(None::<(f64, f64)>, |best, &(s, e)| match best {
            Some((_, be)) if be <= e => best,
            _ => Some((s, e)),
        })
        .map(|(s, _)| s)
        .expect("non-empty");
    Ok(SigmaSearch { best_scale, scores })
}
