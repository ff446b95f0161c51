#![allow(dead_code)]

use std::f64::consts::PI;

use eeg_vowel::dtsvm::{ClassCentroid, Merge};
use eeg_vowel::svm::{self, BinarySvmModel};

/// One-sided periodogram by the direct O(N^2) Fourier sum.
pub fn dft_periodogram(x: &[f64], fs: f64) -> Vec<f64> {
    let n = x.len();
    let dt = 1.0 / fs;
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &v) in x.iter().enumerate() {
                let ang = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            let p = dt / n as f64 * (re * re + im * im);
            let nyquist = n % 2 == 0 && k == n / 2;
            if k == 0 || nyquist {
                p
            } else {
                2.0 * p
            }
        })
        .collect()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues descending and matching unit eigenvectors.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j] * m[i][j]).sum();
        let scale: f64 = (0..n).map(|i| m[i][i] * m[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j][j].total_cmp(&m[i][i]));
    let values = order.iter().map(|&i| m[i][i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|r| v[r][i]).collect()).collect();
    (values, vectors)
}

/// Sample covariance with the n-1 denominator.
pub fn covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len();
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut c = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                c[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    c.iter_mut().flatten().for_each(|v| *v /= (n - 1) as f64);
    c
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Agglomerative centroid linkage by full enumeration of group pairs at
/// every step. Group means are count-weighted over member classes, summed
/// in id order; singleton groups use their centroid as given.
pub fn dendrogram_oracle(centroids: &[ClassCentroid]) -> Vec<Merge> {
    let mut by_id = centroids.to_vec();
    by_id.sort_by_key(|c| c.class_id);
    let mean = |members: &[u8]| -> Vec<f64> {
        if members.len() == 1 {
            return by_id[members[0] as usize - 1].centroid.clone();
        }
        let d = by_id[0].centroid.len();
        let mut s = vec![0.0; d];
        let mut total = 0usize;
        for &m in members {
            let c = &by_id[m as usize - 1];
            for j in 0..d {
                s[j] += c.count as f64 * c.centroid[j];
            }
            total += c.count;
        }
        s.iter().map(|v| v / total as f64).collect()
    };
    let mut groups: Vec<Vec<u8>> = by_id.iter().map(|c| vec![c.class_id]).collect();
    let mut merges = Vec::new();
    while groups.len() > 1 {
        let mut candidates: Vec<(f64, Vec<u8>, Vec<u8>)> = Vec::new();
        for i in 0..groups.len() {
            for j in 0..groups.len() {
                if i == j {
                    continue;
                }
                let (a, b) = (&groups[i], &groups[j]);
                if a < b {
                    candidates.push((euclid(&mean(a), &mean(b)), a.clone(), b.clone()));
                }
            }
        }
        candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then_with(|| (&x.1, &x.2).cmp(&(&y.1, &y.2))));
        let (_, a, b) = candidates.swap_remove(0);
        let a_first = a.len() > b.len() || (a.len() == b.len() && a < b);
        let (ga, gb) = if a_first { (a, b) } else { (b, a) };
        groups.retain(|g| g != &ga && g != &gb);
        let mut u: Vec<u8> = ga.iter().chain(&gb).copied().collect();
        u.sort_unstable();
        groups.push(u);
        merges.push(Merge { group_a: ga, group_b: gb });
    }
    merges
}

/// Largest violation of the soft-margin KKT conditions over the training
/// set, with alpha recovered from the model's dual coefficients.
pub fn kkt_violation(model: &BinarySvmModel, x: &[Vec<f64>], y: &[i8]) -> f64 {
    let c = model.c_penalty;
    let mut alpha = vec![0.0; x.len()];
    for (&i, coef) in model.support_indices.iter().zip(&model.dual_coefs) {
        alpha[i] = coef.abs();
    }
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let yf = y[i] as f64 * svm::svm_decision(model, &x[i]).unwrap();
        let v = if alpha[i] <= 1e-12 * c {
            (1.0 - yf).max(0.0)
        } else if alpha[i] >= c * (1.0 - 1e-12) {
            (yf - 1.0).max(0.0)
        } else {
            (yf - 1.0).abs()
        };
        worst = worst.max(v);
    }
    worst
}

pub fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
