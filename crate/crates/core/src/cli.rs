//! Command-line front end and its TOML configuration.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dsp::BandPassSpec;
use crate::dtsvm::DistanceMetric;
use crate::eval::{self, SplitSpec};
use crate::features::TrialSpectra;
use crate::ingest::{self, SAMPLE_RATE_HZ, VOWEL_NAMES};
use crate::io::write_atomic;
use crate::pipeline::{self, ModelFile, Preprocessor};
use crate::svm::{SigmaChoice, SvmConfig};
use crate::synth::{self, SynthSpec};
use crate::Error;

/// Overrides the default seed when neither a flag nor a file sets one.
pub const SEED_ENV: &str = "EEG_VOWEL_SEED";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaSetting {
    /// Median pairwise distance times `sigma_scale`.
    Median,
    Fixed(f64),
}

impl Serialize for SigmaSetting {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            SigmaSetting::Median => s.serialize_str("median"),
            SigmaSetting::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for SigmaSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(SigmaSetting::Fixed(v)),
            Raw::Text(t) if t == "median" => Ok(SigmaSetting::Median),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "sigma must be \"median\" or a number, got {t:?}"
            ))),
        }
    }
}

/// Flat TOML configuration. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub metric: DistanceMetric,
    pub low_cut_hz: f64,
    pub high_cut_hz: f64,
    pub filter_order: usize,
    pub dropped_trials: Vec<u8>,
    pub test_trial: u8,
    pub n_prime: usize,
    pub c: f64,
    pub sigma: SigmaSetting,
    pub sigma_scale: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let bp = BandPassSpec::default();
        let split = SplitSpec::default();
        let svm = SvmConfig::default();
        Self {
            data_dir: "corpus".into(),
            output_dir: "out".into(),
            seed: None,
            metric: DistanceMetric::Euclidean,
            low_cut_hz: bp.low_cut_hz,
            high_cut_hz: bp.high_cut_hz,
            filter_order: bp.order,
            dropped_trials: split.dropped_trials,
            test_trial: split.test_trial,
            n_prime: split.n_prime,
            c: svm.c,
            sigma: SigmaSetting::Median,
            sigma_scale: 1.0,
            tol: svm.tol,
            max_iter: svm.max_iter,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(one_line(&e.to_string())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.bandpass().validate()?;
        self.split(0).validate()?;
        let svm = self.svm();
        if !(svm.c.is_finite() && svm.c > 0.0) {
            return Err(Error::Config(format!("c must be positive, got {}", svm.c)));
        }
        if !(svm.tol.is_finite() && svm.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", svm.tol)));
        }
        if !(self.sigma_scale.is_finite() && self.sigma_scale > 0.0) {
            return Err(Error::Config(format!("sigma_scale must be positive, got {}", self.sigma_scale)));
        }
        if let SigmaSetting::Fixed(s) = self.sigma {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Config(format!("sigma must be positive, got {s}")));
            }
        }
        Ok(())
    }

    pub fn bandpass(&self) -> BandPassSpec {
        BandPassSpec {
            low_cut_hz: self.low_cut_hz,
            high_cut_hz: self.high_cut_hz,
            order: self.filter_order,
            sample_rate_hz: SAMPLE_RATE_HZ,
        }
    }

    pub fn split(&self, shuffle_seed: u64) -> SplitSpec {
        SplitSpec {
            dropped_trials: self.dropped_trials.clone(),
            test_trial: self.test_trial,
            n_prime: self.n_prime,
            shuffle_seed,
        }
    }

    pub fn svm(&self) -> SvmConfig {
        SvmConfig {
            c: self.c,
            sigma: match self.sigma {
                SigmaSetting::Median => SigmaChoice::Median {
                    scale: self.sigma_scale,
                },
                SigmaSetting::Fixed(s) => SigmaChoice::Fixed(s),
            },
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

fn env_seed() -> Result<Option<u64>, Error> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Flag, then file, then environment, then `fallback`.
fn resolve_seed(flag: Option<u64>, file: Option<u64>, fallback: u64) -> Result<u64, Error> {
    Ok(match flag.or(file) {
        Some(s) => s,
        None => env_seed()?.unwrap_or(fallback),
    })
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Parser)]
#[command(name = "eeg-vowel", version, about = "EEG vowel-imagery recognition pipeline")]
pub struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus and its manifest.
    Synth(SynthArgs),
    /// Fit the feature projections and the DT-SVM on the training split.
    Train(TrainArgs),
    /// Score a trained model on the test-like set and write reports.
    Eval(EvalArgs),
    /// Predict the vowel of every trial in one session file.
    Predict(PredictArgs),
    /// Train and evaluate once per distance metric, one report each.
    Report(ReportArgs),
    /// Print the default configuration file.
    Config,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML synthesis spec; defaults are used for missing keys.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "corpus")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub subjects: Option<u32>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// TOML pipeline configuration; defaults are used when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Shuffle seed for the resubstitution subset.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl DataArgs {
    fn config(&self) -> Result<(PipelineConfig, u64), Error> {
        let mut config = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(d) = &self.data_dir {
            config.data_dir = d.clone();
        }
        if let Some(d) = &self.output_dir {
            config.output_dir = d.clone();
        }
        let seed = resolve_seed(self.seed, config.seed, 0)?;
        Ok((config, seed))
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_parser = parse_metric)]
    pub metric: Option<DistanceMetric>,
    /// Comma-separated median multipliers to choose sigma from by 5-fold CV.
    #[arg(long)]
    pub sigma_grid: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Number of training vectors added to the held-out set; 0 gives the pure test error.
    #[arg(long)]
    pub n_prime: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub session: PathBuf,
    /// Comma-separated 1-based trials to skip.
    #[arg(long, value_delimiter = ',')]
    pub drop_trials: Vec<u8>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated metrics; all four by default.
    #[arg(long, value_delimiter = ',', value_parser = parse_metric)]
    pub metrics: Vec<DistanceMetric>,
    #[arg(long)]
    pub n_prime: Option<usize>,
}

fn parse_metric(s: &str) -> Result<DistanceMetric, String> {
    s.parse().map_err(|e: crate::dtsvm::DtSvmError| e.to_string())
}

/// Parse `args`, run, print the single-line error on failure, and return
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[usage]: {}", first.trim_start_matches("error: "));
            return 2;
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(&cli.command) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), one_line(&error_chain(&e)));
            1
        }
    }
}

fn error_chain(e: &Error) -> String {
    let mut s = e.to_string();
    let mut src = std::error::Error::source(e);
    while let Some(inner) = src {
        let t = inner.to_string();
        if !s.contains(&t) {
            let _ = write!(s, ": {t}");
        }
        src = inner.source();
    }
    s
}

/// Run one command and return its stdout text.
pub fn execute(command: &Command) -> Result<String, Error> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Report(a) => cmd_report(a),
        Command::Config => Ok(PipelineConfig::default().to_toml()),
    }
}

fn load_synth_spec(path: Option<&Path>) -> Result<SynthSpec, Error> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            text.parse::<toml::Table>()
                .map_err(|e| Error::Config(one_line(&e.to_string())))?
        }
        None => toml::Table::new(),
    };
    if !table.contains_key("seed") {
        if let Some(seed) = env_seed()? {
            let seed = i64::try_from(seed).map_err(|_| Error::Config(format!("seed {seed} too large")))?;
            table.insert("seed".into(), toml::Value::Integer(seed));
        }
    }
    table
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(one_line(&e.to_string())))
}

pub fn cmd_synth(a: &SynthArgs) -> Result<String, Error> {
    let mut spec = load_synth_spec(a.spec.as_deref())?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(n) = a.noise_sigma {
        spec.noise_sigma = n;
    }
    if let Some(n) = a.subjects {
        spec.n_subjects = n;
    }
    let (path, manifest) = synth::write_corpus(&spec, &a.out)?;
    info!("wrote {} sessions to {}", manifest.files.len(), a.out.display());
    Ok(format!("{}\n", path.display()))
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<(), Error> {
    write_atomic(path, text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn load_corpus(config: &PipelineConfig) -> Result<Vec<TrialSpectra>, Error> {
    let pre = Preprocessor::new(config.bandpass())?;
    pipeline::load_spectra(&config.data_dir, &pre)
}

pub fn cmd_train(a: &TrainArgs) -> Result<String, Error> {
    let (mut config, seed) = a.data.config()?;
    if let Some(m) = a.metric {
        config.metric = m;
    }
    let split = config.split(seed);
    let spectra = load_corpus(&config)?;
    let mut svm = config.svm();
    if let Some(grid) = &a.sigma_grid {
        let grid = pipeline::parse_sigma_grid(grid)?;
        svm = pipeline::tune_sigma(&spectra, &split, config.metric, &svm, &grid)?;
    }
    let out = pipeline::train(&spectra, config.bandpass(), &split, config.metric, &svm)?;
    for line in out.log.lines().filter(|l| l.starts_with("L = ") || l.starts_with("converged")) {
        info!("{line}");
    }
    if !out.model.model.all_converged() {
        warn!("at least one classifier hit the iteration cap");
    }
    create_dir(&config.output_dir)?;
    let model_path = config.output_dir.join("model.json");
    let log_path = config.output_dir.join("train.log");
    write_file(&model_path, &out.model.to_json())?;
    write_file(&log_path, &out.log)?;
    Ok(format!(
        "L = {}\nmodel = {}\nlog = {}\n",
        out.model.model.dendrogram,
        model_path.display(),
        log_path.display()
    ))
}

fn check_split_matches(model: &ModelFile, split: &SplitSpec) {
    if model.split.test_trial != split.test_trial || model.split.dropped_trials != split.dropped_trials {
        warn!("evaluation split differs from the split the model was trained on; held-out trials may overlap training data");
    }
}

fn write_reports(
    dir: &Path,
    stem: &str,
    report: &eval::EvalReport,
    meta: &eval::ReportMeta,
) -> Result<(PathBuf, PathBuf), Error> {
    let txt = dir.join(format!("{stem}.txt"));
    let json = dir.join(format!("{stem}.json"));
    write_file(&txt, &eval::render_text(report, meta))?;
    write_file(&json, &eval::render_json(report, meta))?;
    Ok((txt, json))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<String, Error> {
    let (mut config, seed) = a.data.config()?;
    if let Some(n) = a.n_prime {
        config.n_prime = n;
    }
    let model = ModelFile::load(&a.model)?;
    let split = config.split(seed);
    check_split_matches(&model, &split);
    let pre = model.preprocessor()?;
    let spectra = pipeline::load_spectra(&config.data_dir, &pre)?;
    let (report, meta) = pipeline::evaluate(&model, &spectra, &split)?;
    create_dir(&config.output_dir)?;
    let (txt, json) = write_reports(&config.output_dir, "report", &report, &meta)?;
    Ok(format!(
        "estimator = {}\noverall_error = {:.6}\nreport = {}\nreport_json = {}\n",
        meta.estimator(&report),
        report.overall_error,
        txt.display(),
        json.display()
    ))
}

pub fn cmd_predict(a: &PredictArgs) -> Result<String, Error> {
    let model = ModelFile::load(&a.model)?;
    let session = ingest::parse_session(&a.session)?;
    let mut s = String::new();
    for (trial, pred) in pipeline::predict_session(&model, &session)? {
        if a.drop_trials.contains(&trial) {
            continue;
        }
        let name = VOWEL_NAMES[pred.label as usize - 1];
        let path: Vec<String> = pred
            .path
            .iter()
            .map(|step| {
                let merge = &model.model.dendrogram.merges[step.level - 1];
                format!("L{} {} f={:+.4} -> {}", step.level, merge, step.decision_value, fmt_set(&step.chosen))
            })
            .collect();
        let _ = writeln!(s, "trial {trial:>2}: {} /{name}/  {}", pred.label, path.join("; "));
    }
    Ok(s)
}

fn fmt_set(g: &[u8]) -> String {
    let items: Vec<String> = g.iter().map(u8::to_string).collect();
    format!("{{{}}}", items.join(","))
}

pub fn cmd_report(a: &ReportArgs) -> Result<String, Error> {
    let (mut config, seed) = a.data.config()?;
    if let Some(n) = a.n_prime {
        config.n_prime = n;
    }
    let metrics: Vec<DistanceMetric> = if a.metrics.is_empty() {
        DistanceMetric::ALL.to_vec()
    } else {
        a.metrics.clone()
    };
    let split = config.split(seed);
    let spectra = load_corpus(&config)?;
    create_dir(&config.output_dir)?;
    let mut s = String::new();
    let _ = writeln!(s, "{:<11} {:>13}  dendrogram", "metric", "overall_error");
    for metric in metrics {
        let out = pipeline::train(&spectra, config.bandpass(), &split, metric, &config.svm())?;
        let (report, meta) = pipeline::evaluate(&out.model, &spectra, &split)?;
        write_reports(&config.output_dir, &format!("report_{metric}"), &report, &meta)?;
        let _ = writeln!(
            s,
            "{:<11} {:>13.6}  {}",
            metric.to_string(),
            report.overall_error,
            out.model.model.dendrogram
        );
    }
    Ok(s)
}
