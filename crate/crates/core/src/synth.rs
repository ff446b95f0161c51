//! Deterministic synthetic EEG corpus.
//!
//! Rest periods are white Gaussian noise. During imagination each channel
//! additionally carries the sinusoids of the session's class signature:
//! narrowband tones in the alpha/beta range on a class-specific subset of
//! channels. A tone is a small cluster of sinusoids spread over its
//! bandwidth. Per subject, tone frequencies are shifted and channel gains are
//! scaled according to `subject_variability`; per trial, every sinusoid gets
//! a fresh random phase.
//!
//! Every session draws from its own ChaCha stream keyed by (subject, vowel),
//! so output does not depend on generation order.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::sha256_hex;
use crate::ingest::{
    self, Session, N_CLASSES, N_FILE_CHANNELS, N_SIGNAL_CHANNELS, N_TRIALS, REST_LEN, SAMPLE_RATE_HZ,
    SESSION_LEN, TRIAL_LEN,
};
use crate::io::write_atomic;

/// Per-subject frequency shift, in Hz, per unit of `subject_variability`.
pub const FREQ_JITTER_HZ: f64 = 1.0;
/// Per-subject log channel-gain spread per unit of `subject_variability`.
pub const GAIN_JITTER: f64 = 0.3;
/// Sinusoids per tone of nonzero bandwidth.
pub const TONE_COMPONENTS: usize = 5;
/// Reference channel noise relative to `noise_sigma`.
pub const REFERENCE_LEVEL: f64 = 0.01;

const PASSBAND_HZ: (f64, f64) = (2.0, 50.0);

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("class {class} tone at {center_hz} Hz (bandwidth {bandwidth_hz} Hz) leaves the 2-50 Hz passband")]
    OutsidePassband {
        class: usize,
        center_hz: f64,
        bandwidth_hz: f64,
    },
    #[error("class {class}: channel {channel} outside 1..=20")]
    Channel { class: usize, channel: usize },
    #[error("expected {expected} class signatures, got {got}")]
    ClassCount { expected: usize, got: usize },
    #[error("classes {0} and {1} have identical signatures")]
    DuplicateSignature(usize, usize),
    #[error("invalid spec: {0}")]
    Invalid(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tone {
    pub center_hz: f64,
    pub bandwidth_hz: f64,
    pub amplitude: f64,
    /// 1-based signal channels carrying the tone.
    pub channels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSignature {
    pub tones: Vec<Tone>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_subjects: u32,
    pub noise_sigma: f64,
    pub subject_variability: f64,
    /// Share of subjects, rounded to a whole number, expressing every
    /// signature on the opposite hemisphere.
    pub mirror_fraction: f64,
    pub seed: u64,
    /// One entry per vowel, in label order.
    pub class_signatures: Vec<ClassSignature>,
}

fn tone(center_hz: f64, channels: std::ops::RangeInclusive<usize>) -> Tone {
    Tone {
        center_hz,
        bandwidth_hz: 2.0,
        amplitude: 1.0,
        channels: channels.collect(),
    }
}

/// Alpha/beta tones on blocks of five channels. Classes 1 and 2 (and 3
/// and 4) differ only in whether the second tone sits on the same
/// hemisphere as the first; class 5 spreads the tones of classes 1 and 2
/// over both hemispheres at half power. Under random mirroring these
/// groups share their mean pattern, so only a non-linear rule separates
/// them.
pub fn default_signatures() -> Vec<ClassSignature> {
    let sig = |a: f64, a_ch, b: f64, b_ch| ClassSignature {
        tones: vec![tone(a, a_ch), tone(b, b_ch)],
    };
    let half = std::f64::consts::FRAC_1_SQRT_2;
    let bilateral = ClassSignature {
        tones: [(10.0, 1..=5), (10.0, 11..=15), (20.0, 6..=10), (20.0, 16..=20)]
            .into_iter()
            .map(|(f, ch)| Tone {
                amplitude: half,
                ..tone(f, ch)
            })
            .collect(),
    };
    vec![
        sig(10.0, 1..=5, 20.0, 6..=10),
        sig(10.0, 1..=5, 20.0, 16..=20),
        sig(14.0, 1..=5, 26.0, 6..=10),
        sig(14.0, 1..=5, 26.0, 16..=20),
        bilateral,
    ]
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_subjects: 20,
            noise_sigma: 3.0,
            subject_variability: 0.5,
            mirror_fraction: 0.5,
            seed: 1,
            class_signatures: default_signatures(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_subjects == 0 {
            return Err(SynthError::Invalid("n_subjects must be >= 1".into()));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(SynthError::Invalid(format!("noise_sigma {}", self.noise_sigma)));
        }
        if !(self.subject_variability.is_finite() && self.subject_variability >= 0.0) {
            return Err(SynthError::Invalid(format!(
                "subject_variability {}",
                self.subject_variability
            )));
        }
        if !(0.0..=1.0).contains(&self.mirror_fraction) {
            return Err(SynthError::Invalid(format!(
                "mirror_fraction {} outside [0, 1]",
                self.mirror_fraction
            )));
        }
        if self.class_signatures.len() != N_CLASSES as usize {
            return Err(SynthError::ClassCount {
                expected: N_CLASSES as usize,
                got: self.class_signatures.len(),
            });
        }
        for (k, sig) in self.class_signatures.iter().enumerate() {
            let class = k + 1;
            if sig.tones.is_empty() {
                return Err(SynthError::Invalid(format!("class {class} has no tones")));
            }
            for t in &sig.tones {
                let half = t.bandwidth_hz / 2.0;
                if !(t.bandwidth_hz >= 0.0
                    && t.center_hz - half > PASSBAND_HZ.0
                    && t.center_hz + half < PASSBAND_HZ.1)
                {
                    return Err(SynthError::OutsidePassband {
                        class,
                        center_hz: t.center_hz,
                        bandwidth_hz: t.bandwidth_hz,
                    });
                }
                if !(t.amplitude.is_finite() && t.amplitude > 0.0) {
                    return Err(SynthError::Invalid(format!(
                        "class {class} tone amplitude {}",
                        t.amplitude
                    )));
                }
                if let Some(&c) = t.channels.iter().find(|&&c| c == 0 || c > N_SIGNAL_CHANNELS) {
                    return Err(SynthError::Channel { class, channel: c });
                }
            }
            if let Some(j) = self.class_signatures[..k].iter().position(|o| o == sig) {
                return Err(SynthError::DuplicateSignature(j + 1, class));
            }
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Per-subject frequency shift and channel gains.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectProfile {
    pub freq_offset_hz: f64,
    pub channel_gain: Vec<f64>,
    /// Signature channels swapped between hemispheres.
    pub mirrored: bool,
}

/// Channels 1..=10 and 11..=20 are treated as homologous hemispheres.
pub fn mirror_channel(ch: usize) -> usize {
    let half = N_SIGNAL_CHANNELS / 2;
    if ch <= half {
        ch + half
    } else {
        ch - half
    }
}

/// Seeded choice of `round(mirror_fraction * n_subjects)` subjects.
pub fn mirrored_subjects(spec: &SynthSpec) -> Vec<u32> {
    let mut ids: Vec<u32> = (1..=spec.n_subjects).collect();
    ids.shuffle(&mut spec.rng(u64::MAX));
    let k = (spec.mirror_fraction * spec.n_subjects as f64).round() as usize;
    ids.truncate(k);
    ids.sort_unstable();
    ids
}

pub fn subject_profile(spec: &SynthSpec, subject: u32) -> SubjectProfile {
    let mut rng = spec.rng(subject as u64);
    let v = spec.subject_variability;
    let freq_offset_hz = v * FREQ_JITTER_HZ * rng.sample::<f64, _>(StandardNormal);
    let channel_gain = (0..N_SIGNAL_CHANNELS)
        .map(|_| (v * GAIN_JITTER * rng.sample::<f64, _>(StandardNormal)).exp())
        .collect();
    let mirrored = mirrored_subjects(spec).contains(&subject);
    SubjectProfile {
        freq_offset_hz,
        channel_gain,
        mirrored,
    }
}

pub fn generate_session(spec: &SynthSpec, subject: u32, vowel: u8) -> Result<Session, SynthError> {
    spec.validate()?;
    if !(1..=N_CLASSES).contains(&vowel) || !(1..=spec.n_subjects).contains(&subject) {
        return Err(SynthError::Invalid(format!("subject {subject}, vowel {vowel}")));
    }
    let profile = subject_profile(spec, subject);
    let mut rng = spec.rng((1u64 << 32) | ((subject as u64) << 8) | vowel as u64);
    let dt = 1.0 / SAMPLE_RATE_HZ;
    let signature = &spec.class_signatures[vowel as usize - 1];

    let mut samples = Array2::<f64>::zeros((SESSION_LEN, N_FILE_CHANNELS));
    if spec.noise_sigma > 0.0 {
        for (i, v) in samples.iter_mut().enumerate() {
            let sigma = if i % N_FILE_CHANNELS == N_FILE_CHANNELS - 1 {
                REFERENCE_LEVEL * spec.noise_sigma
            } else {
                spec.noise_sigma
            };
            *v = sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    for trial in 0..N_TRIALS {
        let start = trial * TRIAL_LEN + REST_LEN;
        for t in &signature.tones {
            let components: Vec<(f64, f64, f64)> = tone_components(t)
                .into_iter()
                .map(|(f, w)| (f + profile.freq_offset_hz, w, rng.random_range(0.0..2.0 * PI)))
                .collect();
            for &ch in &t.channels {
                let ch = if profile.mirrored { mirror_channel(ch) } else { ch };
                let gain = profile.channel_gain[ch - 1];
                for n in 0..TRIAL_LEN - REST_LEN {
                    let time = n as f64 * dt;
                    let v: f64 = components
                        .iter()
                        .map(|&(f, w, phase)| w * (2.0 * PI * f * time + phase).sin())
                        .sum();
                    samples[[start + n, ch - 1]] += gain * v;
                }
            }
        }
    }
    Ok(Session::new(subject, vowel, samples)?)
}

/// Frequencies and amplitudes of the sinusoids realizing a tone: evenly
/// spaced across the band, weighted towards the center, with total power
/// `amplitude^2 / 2`.
pub fn tone_components(t: &Tone) -> Vec<(f64, f64)> {
    if t.bandwidth_hz == 0.0 {
        return vec![(t.center_hz, t.amplitude)];
    }
    let k = TONE_COMPONENTS;
    let raw: Vec<(f64, f64)> = (0..k)
        .map(|i| {
            let offset = t.bandwidth_hz * (i as f64 / (k - 1) as f64 - 0.5);
            (t.center_hz + offset, 1.0 - offset.abs() / t.bandwidth_hz)
        })
        .collect();
    let norm = raw.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    raw.into_iter().map(|(f, w)| (f, t.amplitude * w / norm)).collect()
}

/// Sessions in (subject, vowel) order.
pub fn generate_corpus(spec: &SynthSpec) -> Result<Vec<Session>, SynthError> {
    session_keys(spec)
        .map(|(s, v)| generate_session(spec, s, v))
        .collect()
}

pub fn session_keys(spec: &SynthSpec) -> impl Iterator<Item = (u32, u8)> {
    let n = spec.n_subjects;
    (1..=n).flat_map(|s| (1..=N_CLASSES).map(move |v| (s, v)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub subject: u32,
    pub vowel: u8,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub spec: SynthSpec,
    pub files: Vec<ManifestEntry>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Generate, write one session file at a time, then the manifest. Returns
/// the manifest path.
pub fn write_corpus(spec: &SynthSpec, dir: &Path) -> Result<(PathBuf, Manifest), SynthError> {
    spec.validate()?;
    let io_err = |path: &Path| {
        let path = path.display().to_string();
        move |source| SynthError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut files = Vec::new();
    for (subject, vowel) in session_keys(spec) {
        let session = generate_session(spec, subject, vowel)?;
        let text = ingest::session_to_csv(&session);
        let name = ingest::session_file_name(subject, vowel);
        let path = dir.join(&name);
        write_atomic(&path, text.as_bytes()).map_err(io_err(&path))?;
        files.push(ManifestEntry {
            file: name,
            subject,
            vowel,
            sha256: sha256_hex(text.as_bytes()),
        });
    }
    let manifest = Manifest {
        seed: spec.seed,
        spec: spec.clone(),
        files,
    };
    let path = dir.join(MANIFEST_NAME);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&path, json.as_bytes()).map_err(io_err(&path))?;
    Ok((path, manifest))
}
