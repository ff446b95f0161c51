//! Per-channel PCA over periodograms and assembly of the feature vectors.
//!
//! Each channel gets its own PCA fitted across the training trials' spectra.
//! A trial's feature vector is the concatenation, in channel order, of the
//! first two principal-component scores of every channel.

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Trial;
use crate::spectral::{Periodogram, SpectralError};

/// Scores kept per channel.
pub const PCS_PER_CHANNEL: usize = 2;

/// Explained-variance level below which a channel fit is reported.
pub const EXPLAINED_VARIANCE_WARNING: f64 = 0.75;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("PCA needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("cannot keep {n_kept} components from {rows} rows of dimension {dim}")]
    TooManyComponents {
        n_kept: usize,
        rows: usize,
        dim: usize,
    },
    #[error("degenerate PCA input: all rows identical")]
    Degenerate,
    #[error("dimension mismatch: model expects {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("channel count mismatch: expected {expected}, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("non-finite value in PCA input")]
    NonFinite,
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Row `i` is the `i`-th principal axis, by descending eigenvalue.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_kept(&self) -> usize {
        self.components.len()
    }

    pub fn explained_total(&self) -> f64 {
        self.explained_variance_ratio.iter().sum()
    }

    /// Map scores back to input space.
    pub fn reconstruct(&self, scores: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (axis, &s) in self.components.iter().zip(scores) {
            for (o, a) in out.iter_mut().zip(axis) {
                *o += s * a;
            }
        }
        out
    }
}

/// Fit on the rows of `rows` (`n x dim`) keeping `n_kept` components.
///
/// Covariance uses the `n - 1` denominator. Each axis is signed so that its
/// largest-magnitude entry is positive.
pub fn pca_fit(rows: &Array2<f64>, n_kept: usize) -> Result<PcaModel, FeatureError> {
    let (n, dim) = rows.dim();
    if n < 2 {
        return Err(FeatureError::TooFewRows(n));
    }
    if n_kept == 0 || n_kept > n.min(dim) {
        return Err(FeatureError::TooManyComponents {
            n_kept,
            rows: n,
            dim,
        });
    }
    if rows.iter().any(|v| !v.is_finite()) {
        return Err(FeatureError::NonFinite);
    }

    let mean: Vec<f64> = (0..dim)
        .map(|j| rows.column(j).sum() / n as f64)
        .collect();
    let centered = DMatrix::from_fn(n, dim, |i, j| rows[[i, j]] - mean[j]);
    let cov = centered.tr_mul(&centered) / (n - 1) as f64;
    let total = cov.trace();
    if !(total > 0.0) {
        return Err(FeatureError::Degenerate);
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut components = Vec::with_capacity(n_kept);
    let mut explained_variance = Vec::with_capacity(n_kept);
    for &k in order.iter().take(n_kept) {
        let mut axis: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let pivot = axis
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |best, (i, v)| if v.abs() > best.1 { (i, v.abs()) } else { best })
            .0;
        if axis[pivot] < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(axis);
        explained_variance.push(eig.eigenvalues[k].max(0.0));
    }
    let explained_variance_ratio = explained_variance.iter().map(|v| v / total).collect();
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        explained_variance_ratio,
    })
}

pub fn pca_transform(model: &PcaModel, row: &[f64]) -> Result<Vec<f64>, FeatureError> {
    if row.len() != model.dim() {
        return Err(FeatureError::DimensionMismatch {
            expected: model.dim(),
            got: row.len(),
        });
    }
    Ok(model
        .components
        .iter()
        .map(|axis| {
            axis.iter()
                .zip(row.iter().zip(&model.mean))
                .map(|(a, (x, m))| a * (x - m))
                .sum()
        })
        .collect())
}

/// Per-channel periodograms of one preprocessed trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSpectra {
    pub subject_id: u32,
    pub vowel_label: u8,
    pub trial_index: u8,
    /// `channels[c]` is the power vector of channel `c`.
    pub channels: Vec<Vec<f64>>,
}

pub fn trial_spectra(trial: &Trial, periodogram: &Periodogram) -> Result<TrialSpectra, FeatureError> {
    let channels = (0..trial.active.ncols())
        .map(|c| periodogram.power(&trial.channel(c)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TrialSpectra {
        subject_id: trial.subject_id,
        vowel_label: trial.vowel_label,
        trial_index: trial.trial_index,
        channels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub label: u8,
    pub subject_id: u32,
    pub trial_index: u8,
}

/// How [`assemble_features`] obtains its per-channel projections.
#[derive(Debug, Clone, Copy)]
pub enum PcaMode<'a> {
    /// Fit one model per channel on the given trials.
    Fit,
    /// Project with previously fitted models; never refits.
    Reuse(&'a [PcaModel]),
}

/// Spectra of every trial, then per-channel PCA scores. Trials must already
/// be filtered and normalized.
pub fn assemble_features(
    trials: &[Trial],
    mode: PcaMode<'_>,
) -> Result<(Vec<FeatureVector>, Vec<PcaModel>), FeatureError> {
    let Some(first) = trials.first() else {
        return match mode {
            PcaMode::Fit => Err(FeatureError::TooFewRows(0)),
            PcaMode::Reuse(models) => Ok((Vec::new(), models.to_vec())),
        };
    };
    let periodogram = Periodogram::new(first.active.nrows(), crate::ingest::SAMPLE_RATE_HZ)?;
    let spectra = trials
        .iter()
        .map(|t| trial_spectra(t, &periodogram))
        .collect::<Result<Vec<_>, _>>()?;
    assemble_from_spectra(&spectra, mode)
}

pub fn assemble_from_spectra(
    spectra: &[TrialSpectra],
    mode: PcaMode<'_>,
) -> Result<(Vec<FeatureVector>, Vec<PcaModel>), FeatureError> {
    let n_channels = match (spectra.first(), mode) {
        (Some(s), _) => s.channels.len(),
        (None, PcaMode::Reuse(models)) => return Ok((Vec::new(), models.to_vec())),
        (None, PcaMode::Fit) => return Err(FeatureError::TooFewRows(0)),
    };
    if let Some(bad) = spectra.iter().find(|s| s.channels.len() != n_channels) {
        return Err(FeatureError::ChannelMismatch {
            expected: n_channels,
            got: bad.channels.len(),
        });
    }

    let models: Vec<PcaModel> = match mode {
        PcaMode::Reuse(models) => {
            if models.len() != n_channels {
                return Err(FeatureError::ChannelMismatch {
                    expected: models.len(),
                    got: n_channels,
                });
            }
            models.to_vec()
        }
        PcaMode::Fit => {
            if spectra.len() < 2 {
                return Err(FeatureError::TooFewRows(spectra.len()));
            }
            let models = (0..n_channels)
                .map(|c| pca_fit(&channel_matrix(spectra, c)?, PCS_PER_CHANNEL))
                .collect::<Result<Vec<_>, _>>()?;
            for (c, m) in models.iter().enumerate() {
                let total = m.explained_total();
                if total <= EXPLAINED_VARIANCE_WARNING {
                    warn!(
                        "channel {}: first {} PCs explain only {:.1}% of PSD variance",
                        c + 1,
                        PCS_PER_CHANNEL,
                        100.0 * total
                    );
                }
            }
            models
        }
    };

    let vectors = spectra
        .iter()
        .map(|s| {
            let mut values = Vec::with_capacity(PCS_PER_CHANNEL * n_channels);
            for (power, model) in s.channels.iter().zip(&models) {
                values.extend(pca_transform(model, power)?);
            }
            Ok(FeatureVector {
                values,
                label: s.vowel_label,
                subject_id: s.subject_id,
                trial_index: s.trial_index,
            })
        })
        .collect::<Result<Vec<_>, FeatureError>>()?;
    Ok((vectors, models))
}

fn channel_matrix(spectra: &[TrialSpectra], channel: usize) -> Result<Array2<f64>, FeatureError> {
    let dim = spectra[0].channels[channel].len();
    if let Some(bad) = spectra.iter().find(|s| s.channels[channel].len() != dim) {
        return Err(FeatureError::DimensionMismatch {
            expected: dim,
            got: bad.channels[channel].len(),
        });
    }
    Ok(Array2::from_shape_fn((spectra.len(), dim), |(i, j)| {
        spectra[i].channels[channel][j]
    }))
}
