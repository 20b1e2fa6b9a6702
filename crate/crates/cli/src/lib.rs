//! Command-line front end: data synthesis, training, evaluation, rule
//! reports, explanations, gradient checks and the leakage comparison.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crl::data::{self, load_csv, load_csv_with_classes, ConceptDataset, DnfSpec, GeneratorSpec, LeakagePairSpec};
use crl::eval::{self, BaselineConfig, LeakageConfig};
use crl::gradcheck;
use crl::model::CrlModel;
use crl::rules::{self, ReportFormat, RuleSet};
use crl::train::{self, TrainConfig};
use crl::CrlError;

pub const RUN_CONFIG_FORMAT: &str = "crl_run_v1";
pub const PROVENANCE_FORMAT: &str = "crl_provenance_v1";
pub const THREADS_ENV: &str = "CRL_THREADS";

/// Process exit codes, one per failure category.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    /// Reserved by the argument parser for usage errors.
    pub const USAGE: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const FINGERPRINT: i32 = 4;
    pub const MISSING_FILE: i32 = 5;
    pub const DATA: i32 = 6;
    pub const CHECK_FAILED: i32 = 7;
    pub const TRAINING: i32 = 8;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Category {
    Config,
    Fingerprint,
    MissingFile,
    Data,
    CheckFailed,
    Training,
    Other,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Config => exit::CONFIG,
            Category::Fingerprint => exit::FINGERPRINT,
            Category::MissingFile => exit::MISSING_FILE,
            Category::Data => exit::DATA,
            Category::CheckFailed => exit::CHECK_FAILED,
            Category::Training => exit::TRAINING,
            Category::Other => exit::OTHER,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Category::Config => "config error",
            Category::Fingerprint => "fingerprint mismatch",
            Category::MissingFile => "missing file",
            Category::Data => "data error",
            Category::CheckFailed => "check failed",
            Category::Training => "training failed",
            Category::Other => "error",
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{}: {message}", category.label())]
pub struct CliError {
    pub category: Category,
    pub message: String,
}

impl CliError {
    pub fn new(category: Category, message: impl Into<String>) -> Self {
        CliError {
            category,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.category.exit_code()
    }
}

fn category_of(e: &CrlError) -> Category {
    match e {
        CrlError::InvalidConfig(_) => Category::Config,
        CrlError::FingerprintMismatch { .. } => Category::Fingerprint,
        CrlError::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => Category::MissingFile,
        CrlError::Io { .. } => Category::Other,
        CrlError::NonFiniteLoss { .. } | CrlError::NonFiniteGradient(_) => Category::Training,
        _ => Category::Data,
    }
}

impl From<CrlError> for CliError {
    fn from(e: CrlError) -> Self {
        CliError::new(category_of(&e), e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::from(CrlError::io(path, e)))
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::from(CrlError::io(dir, e)))?;
    }
    fs::write(path, contents).map_err(|e| CliError::from(CrlError::io(path, e)))
}

/// Parse a JSON document whose schema errors are configuration errors.
fn parse_config<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = read_file(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::new(Category::Config, format!("{}: {e}", path.display())))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckOptions {
    pub points: usize,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions { points: 1000, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeakageOptions {
    pub spec: LeakagePairSpec,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub baseline: BaselineConfig,
}

impl Default for LeakageOptions {
    fn default() -> Self {
        LeakageOptions {
            spec: LeakagePairSpec {
                base: DnfSpec {
                    concepts: 8,
                    terms: vec![vec![0, 1], vec![2, 3], vec![4]],
                    samples: 2000,
                    concept_noise: 0.0,
                    label_noise: 0.0,
                    seed: 0,
                },
                shift: 0.2,
            },
            train_fraction: 0.8,
            split_seed: 0,
            baseline: BaselineConfig::default(),
        }
    }
}

/// Everything a run needs besides command-line flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub format: String,
    pub train: TrainConfig,
    pub train_data: Option<PathBuf>,
    pub validation_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub leakage: LeakageOptions,
    pub gradcheck: GradcheckOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            format: RUN_CONFIG_FORMAT.to_string(),
            train: TrainConfig::default(),
            train_data: None,
            validation_data: None,
            test_data: None,
            out_dir: PathBuf::from("crl_out"),
            leakage: LeakageOptions::default(),
            gradcheck: GradcheckOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<RunConfig> {
        let cfg: RunConfig = parse_config(path)?;
        if cfg.format != RUN_CONFIG_FORMAT {
            return Err(CliError::new(
                Category::Config,
                format!("unsupported run config format {:?}, expected {RUN_CONFIG_FORMAT:?}", cfg.format),
            ));
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run config serializes")
    }

    /// Paths in the config are relative to the config file.
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.train_data, &mut self.validation_data, &mut self.test_data].into_iter().flatten() {
            fix(p);
        }
        fix(&mut self.out_dir);
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Text,
    Json,
}

#[derive(Parser, Debug)]
#[command(name = "crl", version, about = "Concept rule learner")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Configuration document (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the seed of the command.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset from a generator spec (--config).
    Synth(Common),
    /// Train a model; writes model.json, history.jsonl and run.json.
    Train(Common),
    /// Score a checkpoint on a dataset.
    Eval(Common),
    /// Extract the rules of a checkpoint.
    Rules(Common),
    /// Explain the prediction for one record.
    Explain {
        #[command(flatten)]
        common: Common,
        /// Record id to explain.
        #[arg(long)]
        id: String,
        /// Rule file to explain with; must belong to the checkpoint.
        #[arg(long)]
        rules: Option<PathBuf>,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck(Common),
    /// Train CRL and logistic baselines in-domain, score them in and out of domain.
    Leakage(Common),
}

/// Text printed on success.
pub type Output = String;

pub fn run(cli: Cli) -> CliResult<Output> {
    match cli.command {
        Command::Synth(c) => cmd_synth(&c),
        Command::Train(c) => cmd_train(&c),
        Command::Eval(c) => cmd_eval(&c),
        Command::Rules(c) => cmd_rules(&c),
        Command::Explain { common, id, rules } => cmd_explain(&common, &id, rules.as_deref()),
        Command::Gradcheck(c) => cmd_gradcheck(&c),
        Command::Leakage(c) => cmd_leakage(&c),
    }
}

/// Size the global thread pool from `CRL_THREADS` when set.
pub fn init_threads() -> CliResult<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::new(Category::Config, format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::new(Category::Other, e.to_string()))
}

fn require<'a>(opt: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    opt.as_deref()
        .ok_or_else(|| CliError::new(Category::Config, format!("{flag} is required")))
}

fn run_config(common: &Common) -> CliResult<RunConfig> {
    match &common.config {
        Some(path) => {
            let mut cfg = RunConfig::load(path)?;
            cfg.resolve(path.parent().unwrap_or(Path::new("")));
            Ok(cfg)
        }
        None => Ok(RunConfig::default()),
    }
}

fn emit<T: Serialize>(format: Format, value: &T, text: impl FnOnce() -> String) -> CliResult<Output> {
    Ok(match format {
        Format::Json => serde_json::to_string_pretty(value).map_err(|e| CliError::new(Category::Other, e.to_string()))? + "\n",
        Format::Text => text(),
    })
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct FileDigest {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Provenance {
    pub format: String,
    pub generator: GeneratorSpec,
    pub seed: u64,
    pub outputs: Vec<FileDigest>,
}

fn write_dataset(ds: &ConceptDataset, path: &Path) -> CliResult<FileDigest> {
    let mut buf = Vec::new();
    ds.write_csv_to(&mut buf)?;
    let text = String::from_utf8(buf).map_err(|e| CliError::new(Category::Other, e.to_string()))?;
    write_file(path, &text)?;
    Ok(FileDigest {
        file: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
        sha256: sha256_hex(text.as_bytes()),
    })
}

pub fn cmd_synth(c: &Common) -> CliResult<Output> {
    let spec_path = require(&c.config, "--config")?;
    let mut spec: GeneratorSpec = parse_config(spec_path)?;
    if let Some(seed) = c.seed {
        spec.set_seed(seed);
    }
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let stem = spec_path
        .file_stem()
        .map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned());
    let outputs = match &spec {
        GeneratorSpec::Dnf(s) => vec![write_dataset(&data::gen_dnf(s)?, &out.join(format!("{stem}.csv")))?],
        GeneratorSpec::LeakagePair(s) => {
            let (id, ood) = data::gen_leakage_pair(s)?;
            vec![
                write_dataset(&id, &out.join(format!("{stem}_id.csv")))?,
                write_dataset(&ood, &out.join(format!("{stem}_ood.csv")))?,
            ]
        }
    };
    let prov = Provenance {
        format: PROVENANCE_FORMAT.to_string(),
        seed: spec.seed(),
        generator: spec,
        outputs,
    };
    let json = serde_json::to_string_pretty(&prov).map_err(|e| CliError::new(Category::Other, e.to_string()))?;
    write_file(&out.join(format!("{stem}.provenance.json")), &(json + "\n"))?;
    emit(c.format, &prov, || {
        prov.outputs
            .iter()
            .map(|f| format!("wrote {} sha256={}\n", out.join(&f.file).display(), f.sha256))
            .collect()
    })
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct TrainSummary {
    pub format: String,
    pub config: TrainConfig,
    pub data: FileDigest,
    pub validation: Option<FileDigest>,
    pub best_epoch: usize,
    pub model_fingerprint: String,
    pub final_train_acc: f64,
    pub final_val_acc: Option<f64>,
}

fn digest_file(path: &Path) -> CliResult<FileDigest> {
    let bytes = fs::read(path).map_err(|e| CliError::from(CrlError::io(path, e)))?;
    Ok(FileDigest {
        file: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

pub fn cmd_train(c: &Common) -> CliResult<Output> {
    let mut cfg = run_config(c)?;
    if let Some(seed) = c.seed {
        cfg.train.seed = seed;
    }
    let data_path = c.data.clone().or(cfg.train_data.clone());
    let data_path = require(&data_path, "--data (or train_data in the config)")?;
    let out = c.out.clone().unwrap_or(cfg.out_dir.clone());
    let ds = load_csv(data_path)?;
    let val = match &cfg.validation_data {
        Some(p) => Some(load_csv_with_classes(p, Some(ds.class_count()))?),
        None => None,
    };
    let outcome = train::train(&cfg.train, &ds, val.as_ref())?;
    let model = outcome.best_model;
    fs::create_dir_all(&out).map_err(|e| CliError::from(CrlError::io(&out, e)))?;
    model.save(out.join("model.json"))?;
    write_file(&out.join("history.jsonl"), &train::history_jsonl(&outcome.history)?)?;
    let last = outcome.history.last();
    let summary = TrainSummary {
        format: "crl_train_summary_v1".to_string(),
        config: cfg.train.clone(),
        data: digest_file(data_path)?,
        validation: cfg.validation_data.as_deref().map(digest_file).transpose()?,
        best_epoch: outcome.best_epoch,
        model_fingerprint: model.fingerprint(),
        final_train_acc: last.map_or(0.0, |h| h.train_acc),
        final_val_acc: last.and_then(|h| h.val_acc),
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::new(Category::Other, e.to_string()))?;
    write_file(&out.join("run.json"), &(json + "\n"))?;
    emit(c.format, &summary, || {
        format!(
            "trained {} epochs; best epoch {} (val acc {})\nwrote {}\nfingerprint {}\n",
            cfg.train.epochs,
            summary.best_epoch,
            summary.final_val_acc.map_or("n/a".into(), |a| format!("{:.4}", a)),
            out.join("model.json").display(),
            summary.model_fingerprint
        )
    })
}

fn load_model(c: &Common) -> CliResult<CrlModel> {
    Ok(CrlModel::load(require(&c.checkpoint, "--checkpoint")?)?)
}

fn load_data_for(model: &CrlModel, path: &Path) -> CliResult<ConceptDataset> {
    let ds = load_csv_with_classes(path, Some(model.class_count()))?;
    if ds.concept_names != model.config().concept_names {
        return Err(CliError::new(
            Category::Data,
            format!("{}: concept columns do not match the checkpoint", path.display()),
        ));
    }
    Ok(ds)
}

pub fn cmd_eval(c: &Common) -> CliResult<Output> {
    let cfg = run_config(c)?;
    let model = load_model(c)?;
    let path = c.data.clone().or(cfg.test_data);
    let ds = load_data_for(&model, require(&path, "--data")?)?;
    let report = eval::evaluate(&model, &ds)?;
    if let Some(out) = &c.out {
        write_file(&out.join("metrics.json"), &(report.to_json()? + "\n"))?;
        write_file(&out.join("metrics.txt"), &report.render_text())?;
    }
    emit(c.format, &report, || report.render_text())
}

pub fn cmd_rules(c: &Common) -> CliResult<Output> {
    let model = load_model(c)?;
    let rs = rules::extract_rules(&model);
    let counts = match &c.data {
        Some(p) => {
            let ds = load_data_for(&model, p)?;
            let concepts: Vec<Vec<bool>> = eval::predict(&model, &ds)?.into_iter().map(|o| o.concepts).collect();
            Some((rules::fired_counts(&model, &concepts), ds.len()))
        }
        None => None,
    };
    let fired = counts.as_ref().map(|(c, n)| (c.as_slice(), *n));
    let json = rules::render_rules(&rs, ReportFormat::Json, fired)?;
    let text = rules::render_rules(&rs, ReportFormat::Text, fired)?;
    if let Some(out) = &c.out {
        write_file(&out.join("rules.json"), &(json.clone() + "\n"))?;
        write_file(&out.join("rules.txt"), &text)?;
    }
    Ok(match c.format {
        Format::Json => json + "\n",
        Format::Text => text,
    })
}

pub fn cmd_explain(c: &Common, id: &str, rules_path: Option<&Path>) -> CliResult<Output> {
    let model = load_model(c)?;
    let rs = match rules_path {
        Some(p) => {
            let report: rules::RuleReport = parse_config(p)?;
            report.to_rule_set()
        }
        None => rules::extract_rules(&model),
    };
    let ds = load_data_for(&model, require(&c.data, "--data")?)?;
    let record = ds
        .records
        .iter()
        .find(|r| r.id == id)
        .ok_or_else(|| CliError::new(Category::Data, format!("no record with id {id:?}")))?;
    let x = ds.model_input(record, model.predictor())?;
    let exp = explain_with(&model, &rs, id, &x)?;
    if let Some(out) = &c.out {
        let json = serde_json::to_string_pretty(&exp).map_err(|e| CliError::new(Category::Other, e.to_string()))?;
        write_file(&out.join(format!("explain_{id}.json")), &(json + "\n"))?;
    }
    emit(c.format, &exp, || exp.render_text())
}

fn explain_with(model: &CrlModel, rs: &RuleSet, id: &str, x: &[f64]) -> CliResult<rules::Explanation> {
    Ok(rules::explain(model, rs, id, x)?)
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct GradcheckSummary {
    pub passed: bool,
    pub checks: Vec<gradcheck::GradcheckReport>,
}

pub fn cmd_gradcheck(c: &Common) -> CliResult<Output> {
    let cfg = run_config(c)?;
    let seed = c.seed.unwrap_or(cfg.gradcheck.seed);
    let points = cfg.gradcheck.points;
    let checks = vec![gradcheck::check_layer(points, seed)?, gradcheck::check_model(points, seed)?];
    let summary = GradcheckSummary {
        passed: checks.iter().all(|r| r.passed),
        checks,
    };
    let out = emit(c.format, &summary, || {
        summary.checks.iter().map(|r| r.summary() + "\n").collect()
    })?;
    if summary.passed {
        Ok(out)
    } else {
        Err(CliError::new(Category::CheckFailed, out.trim_end().to_string()))
    }
}

pub fn cmd_leakage(c: &Common) -> CliResult<Output> {
    let cfg = run_config(c)?;
    let mut train = cfg.train.clone();
    if let Some(seed) = c.seed {
        train.seed = seed;
    }
    let report = eval::leakage_benchmark(&LeakageConfig {
        spec: cfg.leakage.spec.clone(),
        train_fraction: cfg.leakage.train_fraction,
        split_seed: cfg.leakage.split_seed,
        crl: train,
        baseline: cfg.leakage.baseline.clone(),
    })?;
    if let Some(out) = &c.out {
        write_file(&out.join("leakage.json"), &(report.to_json()? + "\n"))?;
        write_file(&out.join("leakage.txt"), &report.render_text())?;
    }
    emit(c.format, &report, || report.render_text())
}

/// Parse arguments, run, print, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
    };
    match init_threads().and_then(|()| run(cli)) {
        Ok(out) => {
            print!("{out}");
            exit::OK
        }
        Err(e) => {
            eprintln!("crl: {e}");
            e.exit_code()
        }
    }
}
