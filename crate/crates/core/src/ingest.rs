//! Session files, trial segmentation and dataset assembly.
//!
//! A session is one subject imagining one vowel for ten consecutive trials.
//! Each trial is 3 s of rest followed by 3 s of imagination at 500 Hz. Only
//! the central 2 s of the imagination period is kept: the first and last
//! half second are treated as transitions and dropped.
//!
//! File layout (UTF-8 CSV):
//!
//! ```text
//! subject,7,vowel,3,rate,500
//! t,ch01,ch02,...,ch21
//! 0.000,1.2345,...
//! ```
//!
//! The 21st channel is the reference electrode and is dropped at
//! segmentation.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array2};
use thiserror::Error;

pub const SAMPLE_RATE_HZ: f64 = 500.0;
pub const N_TRIALS: usize = 10;
pub const N_FILE_CHANNELS: usize = 21;
pub const N_SIGNAL_CHANNELS: usize = 20;
pub const TRIAL_LEN: usize = 3000;
pub const REST_LEN: usize = 1500;
pub const TRANSITION_LEN: usize = 250;
pub const ACTIVE_LEN: usize = 1000;
pub const SESSION_LEN: usize = N_TRIALS * TRIAL_LEN;
pub const N_CLASSES: u8 = 5;

/// IPA-ish names for labels 1..=5.
pub const VOWEL_NAMES: [&str; 5] = ["a", "e", "i", "o", "u"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header at line {line}: {reason}")]
    MalformedHeader { line: usize, reason: String },
    #[error("wrong column count at row {row}: found {found}, expected {expected}")]
    ColumnCount {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("unparseable value {token:?} at row {row}, column {column}")]
    BadNumber {
        row: usize,
        column: String,
        token: String,
    },
    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: String },
    #[error("row count {found} does not match expected {expected}")]
    RowCount { found: usize, expected: usize },
    #[error("unsupported sample rate {0} Hz (expected 500)")]
    SampleRate(f64),
    #[error("vowel label {0} outside 1..=5")]
    VowelLabel(i64),
    #[error("subject id {0} must be >= 1")]
    SubjectId(i64),
    #[error("duplicate session for subject {subject}, vowel {vowel}")]
    DuplicateSession { subject: u32, vowel: u8 },
    #[error("empty session list")]
    NoSessions,
    #[error("session shape {rows}x{cols} violates {expected_rows}x{expected_cols}")]
    Shape {
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
}

/// One recording: a single subject imagining a single vowel.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub subject_id: u32,
    pub vowel_label: u8,
    pub sample_rate_hz: f64,
    /// `[SESSION_LEN x N_FILE_CHANNELS]`, reference channel last.
    pub samples: Array2<f64>,
}

impl Session {
    pub fn new(subject_id: u32, vowel_label: u8, samples: Array2<f64>) -> Result<Self, IngestError> {
        check_ids(subject_id as i64, vowel_label as i64)?;
        let (rows, cols) = samples.dim();
        if rows != SESSION_LEN || cols != N_FILE_CHANNELS {
            return Err(IngestError::Shape {
                rows,
                cols,
                expected_rows: SESSION_LEN,
                expected_cols: N_FILE_CHANNELS,
            });
        }
        if let Some(pos) = samples.iter().position(|v| !v.is_finite()) {
            return Err(IngestError::NonFinite {
                row: pos / cols + 1,
                column: channel_name(pos % cols),
            });
        }
        Ok(Self {
            subject_id,
            vowel_label,
            sample_rate_hz: SAMPLE_RATE_HZ,
            samples,
        })
    }

    pub fn n_trials(&self) -> usize {
        N_TRIALS
    }
}

/// Active window of one trial, reference channel removed.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub subject_id: u32,
    pub vowel_label: u8,
    /// 1-based.
    pub trial_index: u8,
    /// `[ACTIVE_LEN x N_SIGNAL_CHANNELS]`
    pub active: Array2<f64>,
}

impl Trial {
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.active.column(c).to_vec()
    }
}

fn check_ids(subject: i64, vowel: i64) -> Result<(), IngestError> {
    if subject < 1 {
        return Err(IngestError::SubjectId(subject));
    }
    if !(1..=N_CLASSES as i64).contains(&vowel) {
        return Err(IngestError::VowelLabel(vowel));
    }
    Ok(())
}

/// `ch01` .. `ch21`; index is 0-based.
pub fn channel_name(index: usize) -> String {
    format!("ch{:02}", index + 1)
}

/// Session-relative sample range of the kept active window of a 1-based trial.
pub fn active_range(trial_index: usize) -> std::ops::Range<usize> {
    let start = (trial_index - 1) * TRIAL_LEN + REST_LEN + TRANSITION_LEN;
    start..start + ACTIVE_LEN
}

pub fn parse_session(path: &Path) -> Result<Session, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_session_str(&text)
}

/// Parse the textual session format. Data rows are numbered from 1.
pub fn parse_session_str(text: &str) -> Result<Session, IngestError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| IngestError::MalformedHeader {
        line: 1,
        reason: "empty file".into(),
    })?;
    let (subject, vowel, rate) = parse_meta(header)?;

    let columns = lines.next().ok_or_else(|| IngestError::MalformedHeader {
        line: 2,
        reason: "missing column header".into(),
    })?;
    let names: Vec<&str> = columns.trim().split(',').map(str::trim).collect();
    let expected_cols = N_FILE_CHANNELS + 1;
    if names.len() != expected_cols {
        return Err(IngestError::MalformedHeader {
            line: 2,
            reason: format!("expected {expected_cols} columns, found {}", names.len()),
        });
    }
    if names[0] != "t" || (0..N_FILE_CHANNELS).any(|c| names[c + 1] != channel_name(c)) {
        return Err(IngestError::MalformedHeader {
            line: 2,
            reason: "expected `t,ch01,...,ch21`".into(),
        });
    }

    let mut data = Vec::with_capacity(SESSION_LEN * N_FILE_CHANNELS);
    let mut rows = 0usize;
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        rows += 1;
        let mut found = 0usize;
        for (col, token) in line.split(',').enumerate() {
            found += 1;
            if col >= expected_cols {
                continue;
            }
            let token = token.trim();
            let column = names[col];
            let value: f64 = token.parse().map_err(|_| IngestError::BadNumber {
                row: rows,
                column: column.to_string(),
                token: token.to_string(),
            })?;
            if !value.is_finite() {
                return Err(IngestError::NonFinite {
                    row: rows,
                    column: column.to_string(),
                });
            }
            if col > 0 {
                data.push(value);
            }
        }
        if found != expected_cols {
            return Err(IngestError::ColumnCount {
                row: rows,
                found,
                expected: expected_cols,
            });
        }
    }
    if rows != SESSION_LEN {
        return Err(IngestError::RowCount {
            found: rows,
            expected: SESSION_LEN,
        });
    }
    if rate != SAMPLE_RATE_HZ {
        return Err(IngestError::SampleRate(rate));
    }
    let samples = Array2::from_shape_vec((SESSION_LEN, N_FILE_CHANNELS), data)
        .expect("row and column counts checked");
    Session::new(subject, vowel, samples)
}

fn parse_meta(line: &str) -> Result<(u32, u8, f64), IngestError> {
    let bad = |reason: String| IngestError::MalformedHeader { line: 1, reason };
    let fields: Vec<&str> = line.trim().split(',').map(str::trim).collect();
    if fields.len() != 6 || fields[0] != "subject" || fields[2] != "vowel" || fields[4] != "rate" {
        return Err(bad(format!("expected `subject,<id>,vowel,<1-5>,rate,<hz>`, got {line:?}")));
    }
    let subject: i64 = fields[1]
        .parse()
        .map_err(|_| bad(format!("subject id {:?}", fields[1])))?;
    let vowel: i64 = fields[3]
        .parse()
        .map_err(|_| bad(format!("vowel {:?}", fields[3])))?;
    let rate: f64 = fields[5]
        .parse()
        .map_err(|_| bad(format!("rate {:?}", fields[5])))?;
    if !(rate.is_finite() && rate > 0.0) {
        return Err(bad(format!("rate {rate}")));
    }
    check_ids(subject, vowel)?;
    Ok((subject as u32, vowel as u8, rate))
}

/// Render a session in the file format. Channel values are written with
/// four decimals, time with three.
pub fn session_to_csv(session: &Session) -> String {
    let (rows, cols) = session.samples.dim();
    let mut out = String::with_capacity(rows * cols * 10);
    let _ = writeln!(
        out,
        "subject,{},vowel,{},rate,{}",
        session.subject_id, session.vowel_label, session.sample_rate_hz
    );
    out.push('t');
    for c in 0..cols {
        out.push(',');
        out.push_str(&channel_name(c));
    }
    out.push('\n');
    for (r, row) in session.samples.outer_iter().enumerate() {
        let _ = write!(out, "{:.3}", r as f64 / session.sample_rate_hz);
        for v in row {
            // avoid "-0.0000"
            let v = if v.abs() < 5e-5 { 0.0 } else { *v };
            let _ = write!(out, ",{v:.4}");
        }
        out.push('\n');
    }
    out
}

/// `s<subject>_v<vowel>.csv`
pub fn session_file_name(subject_id: u32, vowel_label: u8) -> String {
    format!("s{subject_id:02}_v{vowel_label}.csv")
}

/// Cut a session into its ten active windows.
pub fn segment_trials(session: &Session) -> Vec<Trial> {
    (1..=N_TRIALS)
        .map(|j| {
            let range = active_range(j);
            let active = session
                .samples
                .slice(s![range, ..N_SIGNAL_CHANNELS])
                .to_owned();
            Trial {
                subject_id: session.subject_id,
                vowel_label: session.vowel_label,
                trial_index: j as u8,
                active,
            }
        })
        .collect()
}

/// Segment every session, ordered by (subject, vowel, trial).
pub fn build_dataset(sessions: &[Session]) -> Result<Vec<Trial>, IngestError> {
    if sessions.is_empty() {
        return Err(IngestError::NoSessions);
    }
    let mut order: Vec<&Session> = sessions.iter().collect();
    order.sort_by_key(|s| (s.subject_id, s.vowel_label));
    check_unique(order.iter().map(|s| (s.subject_id, s.vowel_label)))?;
    Ok(order.into_iter().flat_map(segment_trials).collect())
}

/// Reject repeated (subject, vowel) keys.
pub fn check_unique(keys: impl IntoIterator<Item = (u32, u8)>) -> Result<(), IngestError> {
    let mut seen = BTreeSet::new();
    for (subject, vowel) in keys {
        if !seen.insert((subject, vowel)) {
            return Err(IngestError::DuplicateSession { subject, vowel });
        }
    }
    Ok(())
}
