//! Band-pass filtering and per-trial normalization.
//!
//! The band-pass is a digital Butterworth design obtained from the analog
//! low-pass prototype by a low-pass to band-pass transform and the bilinear
//! transform with both band edges pre-warped. It is realized as a cascade of
//! second-order sections. `order` is the prototype order, so the realized
//! band-pass has `2 * order` poles.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("invalid band-pass spec: {0}")]
    InvalidSpec(String),
    #[error("high cutoff {high_hz} Hz is not below Nyquist {nyquist_hz} Hz")]
    Nyquist { high_hz: f64, nyquist_hz: f64 },
    #[error("filter order {0} must be a positive even integer")]
    OddOrder(usize),
    #[error("designed filter is unstable (pole radius {0})")]
    Unstable(f64),
    #[error("series of length {len} too short for edge padding of {padlen}")]
    TooShort { len: usize, padlen: usize },
    #[error("series needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("series contains non-finite values")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPassSpec {
    pub low_cut_hz: f64,
    pub high_cut_hz: f64,
    pub order: usize,
    pub sample_rate_hz: f64,
}

impl Default for BandPassSpec {
    fn default() -> Self {
        Self {
            low_cut_hz: 2.0,
            high_cut_hz: 50.0,
            order: 4,
            sample_rate_hz: 500.0,
        }
    }
}

impl BandPassSpec {
    pub fn validate(&self) -> Result<(), DspError> {
        let Self {
            low_cut_hz: lo,
            high_cut_hz: hi,
            order,
            sample_rate_hz: fs,
        } = *self;
        if !(fs.is_finite() && fs > 0.0) {
            return Err(DspError::InvalidSpec(format!("sample rate {fs}")));
        }
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
            return Err(DspError::InvalidSpec(format!(
                "need 0 < low ({lo}) < high ({hi})"
            )));
        }
        if hi >= fs / 2.0 {
            return Err(DspError::Nyquist {
                high_hz: hi,
                nyquist_hz: fs / 2.0,
            });
        }
        if order == 0 || order % 2 != 0 {
            return Err(DspError::OddOrder(order));
        }
        Ok(())
    }
}

/// One `b0 + b1 z^-1 + b2 z^-2 / 1 + a1 z^-1 + a2 z^-2` section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b: [f64; 3],
    /// `a[0]` is always 1.
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + z_inv * self.b[1] + z2 * self.b[2])
            / (self.a[0] + z_inv * self.a[1] + z2 * self.a[2])
    }

    /// Pole radius: both poles share it for a complex pair.
    fn pole_radius(&self) -> f64 {
        let (a1, a2) = (self.a[1], self.a[2]);
        let disc = a1 * a1 - 4.0 * a2;
        if disc < 0.0 {
            a2.sqrt()
        } else {
            let r = disc.sqrt();
            ((-a1 + r) / 2.0).abs().max(((-a1 - r) / 2.0).abs())
        }
    }

    /// Transposed direct-form II state that is steady for a unit step.
    fn step_state(&self) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        let y = (b0 + b1 + b2) / (1.0 + a1 + a2);
        [y - b0, b2 - a2 * y]
    }

    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }
}

/// Cascade of second-order sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterCoefficients {
    pub sections: Vec<Biquad>,
}

impl FilterCoefficients {
    /// Number of poles of the cascade.
    pub fn order(&self) -> usize {
        2 * self.sections.len()
    }

    /// Reflective edge padding applied on each side by [`apply_filter`].
    pub fn padlen(&self) -> usize {
        3 * self.order()
    }

    /// Complex response at `freq_hz`, evaluated on the unit circle.
    pub fn response(&self, freq_hz: f64, sample_rate_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / sample_rate_hz;
        let z_inv = Complex64::from_polar(1.0, -w);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    pub fn magnitude_db(&self, freq_hz: f64, sample_rate_hz: f64) -> f64 {
        20.0 * self.response(freq_hz, sample_rate_hz).norm().log10()
    }

    pub fn max_pole_radius(&self) -> f64 {
        self.sections
            .iter()
            .map(Biquad::pole_radius)
            .fold(0.0, f64::max)
    }

    /// Single forward pass with the given per-section initial state.
    fn run(&self, x: &mut [f64], state: &[[f64; 2]]) {
        for (section, init) in self.sections.iter().zip(state) {
            let [b0, b1, b2] = section.b;
            let [_, a1, a2] = section.a;
            let [mut z1, mut z2] = *init;
            for v in x.iter_mut() {
                let input = *v;
                let y = b0 * input + z1;
                z1 = b1 * input - a1 * y + z2;
                z2 = b2 * input - a2 * y;
                *v = y;
            }
        }
    }

    /// Per-section state for which a constant unit input passes through the
    /// cascade without a transient.
    fn steady_state(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let [z1, z2] = s.step_state();
                let out = [z1 * scale, z2 * scale];
                scale *= s.dc_gain();
                out
            })
            .collect()
    }

    /// Causal filtering from rest (zero initial state).
    pub fn filter_causal(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        self.run(&mut y, &vec![[0.0; 2]; self.sections.len()]);
        y
    }
}

pub fn design_bandpass(spec: &BandPassSpec) -> Result<FilterCoefficients, DspError> {
    spec.validate()?;
    let n = spec.order;
    let fs = spec.sample_rate_hz;
    let fs2 = 2.0 * fs;
    let warp = |f: f64| fs2 * (PI * f / fs).tan();
    let (w_lo, w_hi) = (warp(spec.low_cut_hz), warp(spec.high_cut_hz));
    let w0 = (w_lo * w_hi).sqrt();
    let bw = w_hi - w_lo;

    // Upper-half-plane prototype poles; n is even so none is real.
    let mut digital = Vec::with_capacity(n);
    for k in 0..n / 2 {
        let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
        let p = Complex64::from_polar(1.0, theta);
        let half = p * (bw / 2.0);
        let root = (half * half - w0 * w0).sqrt();
        for s in [half + root, half - root] {
            let z = (fs2 + s) / (fs2 - s);
            // keep one member of each conjugate pair
            digital.push(if z.im < 0.0 { z.conj() } else { z });
        }
    }
    digital.sort_by(|a, b| a.norm().total_cmp(&b.norm()).then(a.arg().total_cmp(&b.arg())));

    let mut sections: Vec<Biquad> = digital
        .iter()
        .map(|z| Biquad {
            // one zero at z = 1 (DC) and one at z = -1 (Nyquist) per section
            b: [1.0, 0.0, -1.0],
            a: [1.0, -2.0 * z.re, z.norm_sqr()],
        })
        .collect();

    // Unit gain at the warped geometric centre, where the analog band-pass
    // has |H| = 1 exactly.
    let center_hz = fs / PI * (w0 / fs2).atan();
    let unnormalized = FilterCoefficients {
        sections: sections.clone(),
    }
    .response(center_hz, fs)
    .norm();
    let per_section = unnormalized.powf(-1.0 / sections.len() as f64);
    for s in &mut sections {
        for b in &mut s.b {
            *b *= per_section;
        }
    }

    let coeffs = FilterCoefficients { sections };
    let radius = coeffs.max_pole_radius();
    if !(radius < 1.0) {
        return Err(DspError::Unstable(radius));
    }
    Ok(coeffs)
}

/// Zero-phase (forward-backward) filtering with odd reflective padding of
/// `coeffs.padlen()` samples per side and steady-state initial conditions.
pub fn apply_filter(coeffs: &FilterCoefficients, x: &[f64]) -> Result<Vec<f64>, DspError> {
    let padlen = coeffs.padlen();
    if x.len() <= padlen {
        return Err(DspError::TooShort {
            len: x.len(),
            padlen,
        });
    }
    let n = x.len();
    let first = x[0];
    let last = x[n - 1];
    let mut ext = Vec::with_capacity(n + 2 * padlen);
    ext.extend((1..=padlen).rev().map(|i| 2.0 * first - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=padlen).map(|i| 2.0 * last - x[n - 1 - i]));

    let zi = coeffs.steady_state();
    let scaled = |v: f64| zi.iter().map(|[a, b]| [a * v, b * v]).collect::<Vec<_>>();

    let z = scaled(ext[0]);
    coeffs.run(&mut ext, &z);
    ext.reverse();
    let z = scaled(ext[0]);
    coeffs.run(&mut ext, &z);
    ext.reverse();
    Ok(ext[padlen..padlen + n].to_vec())
}

/// Z-score with the sample (n - 1) standard deviation.
pub fn zscore_normalize(x: &[f64]) -> Result<Vec<f64>, DspError> {
    let n = x.len();
    if n < 2 {
        return Err(DspError::TooFewSamples(n));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(DspError::NonFinite);
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let scale = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if sd <= 4.0 * f64::EPSILON * scale || sd == 0.0 {
        return Err(DspError::ZeroVariance);
    }
    Ok(x.iter().map(|v| (v - mean) / sd).collect())
}
