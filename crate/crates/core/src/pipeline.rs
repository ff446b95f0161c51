//! End-to-end composition: sessions → preprocessed trials → spectra →
//! per-channel PCA → DT-SVM, plus the serialized model file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::dsp::{self, BandPassSpec, FilterCoefficients};
use crate::dtsvm::{self, DistanceMetric, DtSvmModel};
use crate::eval::{self, EvalReport, ReportMeta, Split, SplitSpec};
use crate::features::{self, FeatureVector, PcaMode, PcaModel, TrialSpectra};
use crate::ingest::{self, Session, Trial, ACTIVE_LEN, SAMPLE_RATE_HZ};
use crate::spectral::Periodogram;
use crate::svm::{self, SvmConfig};
use crate::Error;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Band-pass then z-score every channel of a trial.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    pub spec: BandPassSpec,
    coeffs: FilterCoefficients,
    periodogram: Periodogram,
}

impl Preprocessor {
    pub fn new(spec: BandPassSpec) -> Result<Self, Error> {
        let coeffs = dsp::design_bandpass(&spec)?;
        let periodogram = Periodogram::new(ACTIVE_LEN, SAMPLE_RATE_HZ)?;
        Ok(Self {
            spec,
            coeffs,
            periodogram,
        })
    }

    pub fn preprocess(&self, trial: &Trial) -> Result<Trial, Error> {
        let mut out = trial.clone();
        for (c, mut col) in out.active.columns_mut().into_iter().enumerate() {
            let x = trial.channel(c);
            let y = dsp::zscore_normalize(&dsp::apply_filter(&self.coeffs, &x)?)?;
            col.iter_mut().zip(y).for_each(|(d, v)| *d = v);
        }
        Ok(out)
    }

    pub fn spectra(&self, trial: &Trial) -> Result<TrialSpectra, Error> {
        Ok(features::trial_spectra(&self.preprocess(trial)?, &self.periodogram)?)
    }

    pub fn session_spectra(&self, session: &Session) -> Result<Vec<TrialSpectra>, Error> {
        ingest::segment_trials(session).iter().map(|t| self.spectra(t)).collect()
    }
}

/// `*.csv` files of a corpus directory in name order.
pub fn corpus_files(dir: &Path) -> Result<Vec<PathBuf>, Error> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "csv") && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::NoData(format!("no .csv session files in {}", dir.display())));
    }
    Ok(files)
}

/// Parse and reduce one session at a time so only spectra stay in memory.
pub fn load_spectra(dir: &Path, pre: &Preprocessor) -> Result<Vec<TrialSpectra>, Error> {
    let files = corpus_files(dir)?;
    let mut keys = Vec::with_capacity(files.len());
    let mut spectra = Vec::new();
    for path in &files {
        let session = ingest::parse_session(path)?;
        keys.push((session.subject_id, session.vowel_label));
        spectra.extend(pre.session_spectra(&session)?);
    }
    ingest::check_unique(keys)?;
    info!("loaded {} sessions from {}", files.len(), dir.display());
    Ok(spectra)
}

pub fn spectra_from_sessions(sessions: &[Session], pre: &Preprocessor) -> Result<Vec<TrialSpectra>, Error> {
    ingest::check_unique(sessions.iter().map(|s| (s.subject_id, s.vowel_label)))?;
    let mut out = Vec::with_capacity(sessions.len() * ingest::N_TRIALS);
    for s in sessions {
        out.extend(pre.session_spectra(s)?);
    }
    Ok(out)
}

/// Fit PCA on the training trials of `split`, project everything, and
/// partition into `S_n`, `S_t` and `S*`.
pub fn fit_features(spectra: &[TrialSpectra], split: &SplitSpec) -> Result<(Split, Vec<PcaModel>), Error> {
    split.validate()?;
    let train: Vec<TrialSpectra> = spectra
        .iter()
        .filter(|s| is_training_trial(split, s.trial_index))
        .cloned()
        .collect();
    let (_, models) = features::assemble_from_spectra(&train, PcaMode::Fit)?;
    let split = project_and_split(spectra, &models, split)?;
    Ok((split, models))
}

pub fn project_and_split(
    spectra: &[TrialSpectra],
    models: &[PcaModel],
    split: &SplitSpec,
) -> Result<Split, Error> {
    let (features, _) = features::assemble_from_spectra(spectra, PcaMode::Reuse(models))?;
    Ok(eval::split_protocol(&features, split)?)
}

fn is_training_trial(split: &SplitSpec, trial_index: u8) -> bool {
    trial_index != split.test_trial && !split.dropped_trials.contains(&trial_index)
}

/// Everything needed to classify a raw session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub bandpass: BandPassSpec,
    pub normalization: String,
    pub split: SplitSpec,
    pub svm: SvmConfig,
    pub train_size: usize,
    pub model: DtSvmModel,
}

impl ModelFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, Error> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Model(format!(
                "unsupported model format version {}",
                file.format_version
            )));
        }
        if file.normalization != "zscore" {
            return Err(Error::Model(format!("unknown normalization {:?}", file.normalization)));
        }
        file.model.validate()?;
        let expected = file.model.pca_models.len() * features::PCS_PER_CHANNEL;
        if file.model.dim() != expected {
            return Err(Error::Model(format!(
                "classifier dimension {} does not match {} PCA channels",
                file.model.dim(),
                file.model.pca_models.len()
            )));
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn preprocessor(&self) -> Result<Preprocessor, Error> {
        Preprocessor::new(self.bandpass)
    }

    /// Feature vectors of a session's trials under this model's projections.
    pub fn session_features(&self, session: &Session) -> Result<Vec<FeatureVector>, Error> {
        let spectra = self.preprocessor()?.session_spectra(session)?;
        let (features, _) = features::assemble_from_spectra(&spectra, PcaMode::Reuse(&self.model.pca_models))?;
        Ok(features)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelFile,
    pub split: Split,
    pub log: String,
}

pub fn train(
    spectra: &[TrialSpectra],
    bandpass: BandPassSpec,
    split_spec: &SplitSpec,
    metric: DistanceMetric,
    svm_config: &SvmConfig,
) -> Result<TrainOutcome, Error> {
    for vowel in 1..=ingest::N_CLASSES {
        if !spectra.iter().any(|s| s.vowel_label == vowel) {
            return Err(dtsvm::DtSvmError::MissingClass(vowel).into());
        }
    }
    let (split, pca_models) = fit_features(spectra, split_spec)?;
    let mut model = dtsvm::train_dtsvm(&split.train, metric, svm_config)?;
    model.pca_models = pca_models;
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        bandpass,
        normalization: "zscore".into(),
        split: split_spec.clone(),
        svm: *svm_config,
        train_size: split.train.len(),
        model,
    };
    let log = training_log(&file);
    Ok(TrainOutcome {
        model: file,
        split,
        log,
    })
}

pub fn training_log(file: &ModelFile) -> String {
    let m = &file.model;
    let mut s = String::new();
    let _ = writeln!(s, "metric = {}", m.metric);
    let _ = writeln!(s, "train_size = {}", file.train_size);
    let _ = writeln!(s, "L = {}", m.dendrogram);
    let _ = writeln!(s, "converged = {}", m.all_converged());
    let _ = writeln!(s, "\n[explained_variance]");
    for (c, p) in m.pca_models.iter().enumerate() {
        let ratios: Vec<String> = p.explained_variance_ratio.iter().map(|r| format!("{r:.4}")).collect();
        let _ = writeln!(
            s,
            "{} = {:.4} [{}]",
            ingest::channel_name(c),
            p.explained_total(),
            ratios.join(", ")
        );
    }
    let _ = writeln!(s, "\n[levels]");
    for (i, (merge, clf)) in m.dendrogram.merges.iter().zip(&m.classifiers).enumerate() {
        let _ = writeln!(
            s,
            "level {}: {} sigma={:.6} support_vectors={} iterations={} converged={}",
            i + 1,
            merge,
            clf.kernel.sigma,
            clf.support_vectors.len(),
            clf.iterations,
            clf.converged
        );
    }
    s
}

pub fn report_meta(file: &ModelFile, split: &SplitSpec) -> ReportMeta {
    ReportMeta {
        shuffle_seed: split.shuffle_seed,
        metric: file.model.metric.to_string(),
        c_penalty: file.svm.c,
        sigmas: file.model.classifiers.iter().map(|c| c.kernel.sigma).collect(),
        dendrogram: file.model.dendrogram.to_string(),
        train_size: file.train_size,
    }
}

/// Rebuild `S*` from spectra with the model's projections and score it.
pub fn evaluate(
    file: &ModelFile,
    spectra: &[TrialSpectra],
    split_spec: &SplitSpec,
) -> Result<(EvalReport, ReportMeta), Error> {
    let split = project_and_split(spectra, &file.model.pca_models, split_spec)?;
    let report = eval::confusion_matrix(
        &file.model,
        &split.test_like,
        file.model.n_classes(),
        split.m(),
        split.n_prime(),
    )?;
    Ok((report, report_meta(file, split_spec)))
}

/// Per-trial prediction with the decision path.
pub fn predict_session(file: &ModelFile, session: &Session) -> Result<Vec<(u8, dtsvm::Prediction)>, Error> {
    file.session_features(session)?
        .iter()
        .map(|f| Ok((f.trial_index, dtsvm::predict_with_trace(&file.model, &f.values)?)))
        .collect()
}

/// Median multipliers tried by the sigma search.
pub fn parse_sigma_grid(text: &str) -> Result<Vec<f64>, Error> {
    let grid = text
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v > 0.0)
                .ok_or_else(|| Error::Config(format!("bad sigma grid entry {t:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if grid.is_empty() {
        return Err(Error::Config("empty sigma grid".into()));
    }
    Ok(grid)
}

/// Choose the median multiplier by 5-fold cross-validation on `S_n`.
pub fn tune_sigma(
    spectra: &[TrialSpectra],
    split_spec: &SplitSpec,
    metric: DistanceMetric,
    base: &SvmConfig,
    grid: &[f64],
) -> Result<SvmConfig, Error> {
    let (split, _) = fit_features(spectra, split_spec)?;
    let search = dtsvm::select_sigma_scale(&split.train, metric, base, grid, 5, split_spec.shuffle_seed)?;
    for (scale, err) in &search.scores {
        info!("sigma scale {scale}: cv error {err:.4}");
    }
    Ok(SvmConfig {
        sigma: svm::SigmaChoice::Median {
            scale: search.best_scale,
        },
        ..*base
    })
}
