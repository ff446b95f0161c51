//! Binary soft-margin SVM with a Gaussian RBF kernel.
//!
//! Training solves the dual
//!
//! ```text
//! max  sum_i a_i - 1/2 sum_ij a_i a_j y_i y_j k(x_i, x_j)
//! s.t. 0 <= a_i <= C,  sum_i a_i y_i = 0
//! ```
//!
//! by sequential minimal optimization: each step picks the maximal violating
//! index `i` and the partner `j` with the largest second-order gain, then
//! solves the two-variable subproblem exactly. Iteration stops once the
//! violation gap `m(a) - M(a)` drops below `tol`, which bounds every KKT
//! residual `y_i f(x_i) - 1` by `tol`.
//!
//! Rows are put into a canonical order before solving, so the result does
//! not depend on the order the caller supplies them in.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Curvature floor for non-positive-definite two-variable subproblems.
const TAU: f64 = 1e-12;

/// Gram matrices up to this many rows are cached in full.
pub const FULL_GRAM_LIMIT: usize = 2000;

#[derive(Debug, Error, PartialEq)]
pub enum SvmError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("kernel width must be positive and finite, got {0}")]
    BadSigma(f64),
    #[error("penalty C must be positive and finite, got {0}")]
    BadPenalty(f64),
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("training needs both classes present")]
    SingleClass,
    #[error("training needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("labels must be -1 or +1, got {0}")]
    BadLabel(i8),
    #[error("row count {rows} does not match label count {labels}")]
    LabelCount { rows: usize, labels: usize },
    #[error("non-finite training input")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub sigma: f64,
}

impl KernelSpec {
    pub fn new(sigma: f64) -> Result<Self, SvmError> {
        if sigma.is_finite() && sigma > 0.0 {
            Ok(Self { sigma })
        } else {
            Err(SvmError::BadSigma(sigma))
        }
    }

    #[inline]
    fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        (-d2 / (2.0 * self.sigma * self.sigma)).exp()
    }
}

/// `exp(-|x - y|^2 / (2 sigma^2))`.
pub fn rbf_kernel(x: &[f64], y: &[f64], sigma: f64) -> Result<f64, SvmError> {
    if x.len() != y.len() {
        return Err(SvmError::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(KernelSpec::new(sigma)?.eval_unchecked(x, y))
}

/// Median of all pairwise Euclidean distances. Falls back to 1 when every
/// distance is zero.
pub fn median_pairwise_distance(rows: &[Vec<f64>]) -> f64 {
    let mut d: Vec<f64> = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let d2: f64 = rows[i]
                .iter()
                .zip(&rows[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d.push(d2.sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let m = if d.len() % 2 == 0 {
        0.5 * (d[mid - 1] + d[mid])
    } else {
        d[mid]
    };
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Kernel width selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaChoice {
    /// Median pairwise distance of the rows being trained on, times a factor.
    Median { scale: f64 },
    Fixed(f64),
}

impl Default for SigmaChoice {
    fn default() -> Self {
        SigmaChoice::Median { scale: 1.0 }
    }
}

impl SigmaChoice {
    pub fn resolve(&self, rows: &[Vec<f64>]) -> Result<KernelSpec, SvmError> {
        match *self {
            SigmaChoice::Median { scale } => KernelSpec::new(scale * median_pairwise_distance(rows)),
            SigmaChoice::Fixed(s) => KernelSpec::new(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    pub sigma: SigmaChoice,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            sigma: SigmaChoice::default(),
            tol: 1e-3,
            max_iter: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySvmModel {
    pub support_vectors: Vec<Vec<f64>>,
    /// `a_i * y_i` for each support vector.
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub kernel: KernelSpec,
    pub c_penalty: f64,
    /// Index of each support vector in the training input.
    pub support_indices: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
    /// Final dual objective value.
    pub objective: f64,
}

impl BinarySvmModel {
    pub fn dim(&self) -> usize {
        self.support_vectors.first().map_or(0, Vec::len)
    }

    /// Decision value without a dimension check.
    fn decision_unchecked(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.dual_coefs)
            .map(|(sv, c)| c * self.kernel.eval_unchecked(sv, x))
            .sum::<f64>()
            + self.bias
    }
}

/// `f(x) = sum_i coef_i k(sv_i, x) + b`.
pub fn svm_decision(model: &BinarySvmModel, x: &[f64]) -> Result<f64, SvmError> {
    if !model.support_vectors.is_empty() && x.len() != model.dim() {
        return Err(SvmError::DimensionMismatch {
            expected: model.dim(),
            got: x.len(),
        });
    }
    Ok(model.decision_unchecked(x))
}

/// Sign of the decision value; exactly zero maps to +1.
pub fn svm_predict(model: &BinarySvmModel, x: &[f64]) -> Result<i8, SvmError> {
    Ok(sign(svm_decision(model, x)?))
}

pub fn sign(f: f64) -> i8 {
    if f >= 0.0 {
        1
    } else {
        -1
    }
}

/// Kernel values between training rows, cached in full for small problems.
enum Gram<'a> {
    Full { n: usize, k: Vec<f64> },
    OnDemand { rows: Vec<&'a [f64]>, kernel: KernelSpec },
}

impl<'a> Gram<'a> {
    fn new(rows: Vec<&'a [f64]>, kernel: KernelSpec) -> Self {
        let n = rows.len();
        if n > FULL_GRAM_LIMIT {
            return Gram::OnDemand { rows, kernel };
        }
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            k[i * n + i] = 1.0;
            for j in i + 1..n {
                let v = kernel.eval_unchecked(rows[i], rows[j]);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        Gram::Full { n, k }
    }

    fn row(&self, i: usize, out: &mut Vec<f64>) {
        out.clear();
        match self {
            Gram::Full { n, k } => out.extend_from_slice(&k[i * n..(i + 1) * n]),
            Gram::OnDemand { rows, kernel } => {
                out.extend(rows.iter().map(|r| kernel.eval_unchecked(rows[i], r)))
            }
        }
    }
}

fn canonical_order(x: &[Vec<f64>], y: &[i8]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| {
        x[a].iter()
            .zip(&x[b])
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
            .then(y[a].cmp(&y[b]))
    });
    idx
}

/// Train on rows `x` with labels `y` in {-1, +1}.
///
/// Hitting `max_iter` is not an error: the model is returned with
/// `converged = false`.
pub fn smo_train(
    x: &[Vec<f64>],
    y: &[i8],
    c: f64,
    kernel: KernelSpec,
    tol: f64,
    max_iter: usize,
) -> Result<BinarySvmModel, SvmError> {
    if x.len() != y.len() {
        return Err(SvmError::LabelCount {
            rows: x.len(),
            labels: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(SvmError::TooFewRows(x.len()));
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(SvmError::BadPenalty(c));
    }
    if !(tol > 0.0) {
        return Err(SvmError::BadTolerance(tol));
    }
    KernelSpec::new(kernel.sigma)?;
    if let Some(&bad) = y.iter().find(|&&l| l != 1 && l != -1) {
        return Err(SvmError::BadLabel(bad));
    }
    if !(y.contains(&1) && y.contains(&-1)) {
        return Err(SvmError::SingleClass);
    }
    let dim = x[0].len();
    if let Some(r) = x.iter().find(|r| r.len() != dim) {
        return Err(SvmError::DimensionMismatch {
            expected: dim,
            got: r.len(),
        });
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(SvmError::NonFinite);
    }

    let order = canonical_order(x, y);
    let rows: Vec<&[f64]> = order.iter().map(|&i| x[i].as_slice()).collect();
    let labels: Vec<f64> = order.iter().map(|&i| y[i] as f64).collect();
    let solution = Solver::new(Gram::new(rows, kernel), &labels, c).solve(tol, max_iter);

    let mut support_vectors = Vec::new();
    let mut dual_coefs = Vec::new();
    let mut support_indices = Vec::new();
    for (pos, &a) in solution.alpha.iter().enumerate() {
        if a > 0.0 {
            let original = order[pos];
            support_vectors.push(x[original].clone());
            dual_coefs.push(a * labels[pos]);
            support_indices.push(original);
        }
    }
    Ok(BinarySvmModel {
        support_vectors,
        dual_coefs,
        bias: solution.bias,
        kernel,
        c_penalty: c,
        support_indices,
        converged: solution.converged,
        iterations: solution.iterations,
        objective: solution.objective,
    })
}

struct Solution {
    alpha: Vec<f64>,
    bias: f64,
    converged: bool,
    iterations: usize,
    objective: f64,
}

struct Solver<'a> {
    gram: Gram<'a>,
    y: &'a [f64],
    c: f64,
    alpha: Vec<f64>,
    /// Gradient of `1/2 a'Qa - e'a`.
    grad: Vec<f64>,
}

impl<'a> Solver<'a> {
    fn new(gram: Gram<'a>, y: &'a [f64], c: f64) -> Self {
        let n = y.len();
        Self {
            gram,
            y,
            c,
            alpha: vec![0.0; n],
            grad: vec![-1.0; n],
        }
    }

    fn in_up(&self, t: usize) -> bool {
        if self.y[t] > 0.0 {
            self.alpha[t] < self.c
        } else {
            self.alpha[t] > 0.0
        }
    }

    fn in_low(&self, t: usize) -> bool {
        if self.y[t] > 0.0 {
            self.alpha[t] > 0.0
        } else {
            self.alpha[t] < self.c
        }
    }

    /// Dual objective `e'a - 1/2 a'Qa`.
    fn objective(&self) -> f64 {
        // a'Qa = a'(g + e)
        let quad: f64 = self
            .alpha
            .iter()
            .zip(&self.grad)
            .map(|(a, g)| a * (g + 1.0))
            .sum();
        self.alpha.iter().sum::<f64>() - 0.5 * quad
    }

    /// Returns `(i, j)` or `None` when the gap is below `tol`.
    fn select(&self, tol: f64, row_i: &mut Vec<f64>) -> Option<(usize, usize)> {
        let n = self.y.len();
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if self.in_up(t) {
                let v = -self.y[t] * self.grad[t];
                if v > gmax {
                    gmax = v;
                    i = t;
                }
            }
        }
        if i == usize::MAX {
            return None;
        }
        self.gram.row(i, row_i);

        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !self.in_low(t) {
                continue;
            }
            let v = self.y[t] * self.grad[t];
            if v > gmax2 {
                gmax2 = v;
            }
            let diff = gmax + v;
            if diff > 0.0 {
                let quad = 1.0 + 1.0 - 2.0 * row_i[t];
                let quad = if quad > 0.0 { quad } else { TAU };
                let gain = -(diff * diff) / quad;
                if gain < best {
                    best = gain;
                    j = t;
                }
            }
        }
        if gmax + gmax2 < tol || j == usize::MAX {
            None
        } else {
            Some((i, j))
        }
    }

    fn solve(mut self, tol: f64, max_iter: usize) -> Solution {
        let n = self.y.len();
        let mut row_i = Vec::with_capacity(n);
        let mut row_j = Vec::with_capacity(n);
        let mut iterations = 0;
        let mut converged = false;
        let mut last_objective = 0.0_f64;
        while iterations < max_iter {
            let Some((i, j)) = self.select(tol, &mut row_i) else {
                converged = true;
                break;
            };
            self.gram.row(j, &mut row_j);
            iterations += 1;
            self.step(i, j, &row_i, &row_j);

            if cfg!(debug_assertions) {
                let obj = self.objective();
                debug_assert!(
                    obj >= last_objective - 1e-9 * (1.0 + last_objective.abs()),
                    "dual objective decreased: {last_objective} -> {obj}"
                );
                last_objective = obj;
            }
        }
        let bias = self.bias();
        let objective = self.objective();
        Solution {
            alpha: self.alpha,
            bias,
            converged,
            iterations,
            objective,
        }
    }

    /// Exact solution of the two-variable subproblem, clipped to the box.
    fn step(&mut self, i: usize, j: usize, k_i: &[f64], k_j: &[f64]) {
        let c = self.c;
        let (yi, yj) = (self.y[i], self.y[j]);
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        let quad = {
            let q = 2.0 - 2.0 * k_i[j];
            if q > 0.0 {
                q
            } else {
                TAU
            }
        };
        let (mut ai, mut aj) = (old_i, old_j);
        if yi != yj {
            let delta = (-self.grad[i] - self.grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let delta = (self.grad[i] - self.grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        self.alpha[i] = ai;
        self.alpha[j] = aj;

        let (di, dj) = (ai - old_i, aj - old_j);
        for t in 0..self.y.len() {
            let yt = self.y[t];
            self.grad[t] += yt * (yi * k_i[t] * di + yj * k_j[t] * dj);
        }
    }

    /// Average over free vectors, else the midpoint of the feasible range.
    fn bias(&self) -> f64 {
        let mut ub = f64::INFINITY;
        let mut lb = f64::NEG_INFINITY;
        let mut free = 0usize;
        let mut free_sum = 0.0;
        for t in 0..self.y.len() {
            let yg = self.y[t] * self.grad[t];
            let a = self.alpha[t];
            if a >= self.c {
                if self.y[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if a <= 0.0 {
                if self.y[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                free += 1;
                free_sum += yg;
            }
        }
        let rho = if free > 0 {
            free_sum / free as f64
        } else {
            (ub + lb) / 2.0
        };
        -rho
    }
}
