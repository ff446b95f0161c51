//! One-sided rectangular-window periodogram.
//!
//! For a series `x_0 .. x_{N-1}` sampled every `dt` seconds (`T = N dt`):
//!
//! ```text
//! S(f_k) = (dt^2 / T) * | sum_n x_n exp(-i 2 pi f_k n dt) |^2,   f_k = k / T
//! ```
//!
//! for `k = 0 ..= N/2`, with interior bins doubled to fold in the negative
//! frequencies. With this scaling `sum_k S(f_k) df` equals the mean power
//! `sum_n x_n^2 / N` and the units are V^2/Hz.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("periodogram needs at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("non-finite input sample at index {0}")]
    NonFinite(usize),
    #[error("invalid sample rate {0}")]
    SampleRate(f64),
    #[error("series length {got} does not match planned length {planned}")]
    LengthMismatch { got: usize, planned: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Psd {
    pub frequencies_hz: Vec<f64>,
    pub power: Vec<f64>,
    pub delta_t_s: f64,
}

impl Psd {
    /// Bin spacing `1 / T`.
    pub fn resolution_hz(&self) -> f64 {
        1.0 / (self.delta_t_s * self.n_samples() as f64)
    }

    /// Length of the series the estimate came from.
    pub fn n_samples(&self) -> usize {
        // k runs to floor(N/2); recover N from the Nyquist bin
        let bins = self.frequencies_hz.len();
        let last = self.frequencies_hz[bins - 1];
        let nyquist = 0.5 / self.delta_t_s;
        if (last - nyquist).abs() < 1e-9 * nyquist {
            2 * (bins - 1)
        } else {
            2 * bins - 1
        }
    }

    pub fn total_power(&self) -> f64 {
        self.power.iter().sum::<f64>() * self.resolution_hz()
    }

    pub fn peak_frequency_hz(&self) -> f64 {
        let (k, _) = self
            .power
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, &p)| if p > best.1 { (k, p) } else { best });
        self.frequencies_hz[k]
    }
}

/// Reusable periodogram for a fixed series length.
#[derive(Clone)]
pub struct Periodogram {
    len: usize,
    sample_rate_hz: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Periodogram {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Periodogram")
            .field("len", &self.len)
            .field("sample_rate_hz", &self.sample_rate_hz)
            .finish()
    }
}

impl Periodogram {
    pub fn new(len: usize, sample_rate_hz: f64) -> Result<Self, SpectralError> {
        if len < 2 {
            return Err(SpectralError::TooShort(len));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(SpectralError::SampleRate(sample_rate_hz));
        }
        let fft = FftPlanner::new().plan_fft_forward(len);
        Ok(Self {
            len,
            sample_rate_hz,
            fft,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.len / 2 + 1
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let df = self.sample_rate_hz / self.len as f64;
        (0..self.n_bins()).map(|k| k as f64 * df).collect()
    }

    /// Power values only.
    pub fn power(&self, x: &[f64]) -> Result<Vec<f64>, SpectralError> {
        if x.len() != self.len {
            return Err(SpectralError::LengthMismatch {
                got: x.len(),
                planned: self.len,
            });
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(SpectralError::NonFinite(i));
        }
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft.process(&mut buf);

        let n = self.len;
        let dt = 1.0 / self.sample_rate_hz;
        let scale = dt / n as f64;
        Ok((0..self.n_bins())
            .map(|k| {
                let one_sided = if k == 0 || (n % 2 == 0 && k == n / 2) { 1.0 } else { 2.0 };
                one_sided * scale * buf[k].norm_sqr()
            })
            .collect())
    }

    pub fn estimate(&self, x: &[f64]) -> Result<Psd, SpectralError> {
        Ok(Psd {
            frequencies_hz: self.frequencies(),
            power: self.power(x)?,
            delta_t_s: 1.0 / self.sample_rate_hz,
        })
    }
}

pub fn periodogram_psd(x: &[f64], sample_rate_hz: f64) -> Result<Psd, SpectralError> {
    Periodogram::new(x.len(), sample_rate_hz)?.estimate(x)
}
