//! Command-line surface.
//!
//! Every subcommand accepts `--config FILE` (a JSON document, possibly
//! partial, layered over built-in defaults) and flat flags that override the
//! document. Failures print one diagnostic line and exit non-zero.

mod layered;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Precision, Real};
use crate::capacity::{
    curve_sweep, determination_ratio, geometric_grid, noise_fit_fraction, CapacityError, DeterminationInputs,
    TheoryParams,
};
use crate::data::DataError;
use crate::linear_oracle::{format_sweep, run_experiment, sweep_over_k, LinearExperimentConfig, OracleError};
use crate::sweep::{self, cross_section, desk, write_outputs, Axis, DatasetSpec, SweepError, SweepGrid, SweepRecord};
use crate::table::fmt_float;
use crate::trainer::{train, MetricsLog, TrainConfig, TrainError, METRICS_HEADER};
use crate::vit::{checkpoint, count_params, preset, ConfigError, ModelConfig, ModelError, VisionTransformer};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Requested help or version text; not a failure.
    #[error("{0}")]
    Help(String),
    #[error("{0}")]
    Usage(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Help(_) => 0,
            CliError::Runtime(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<CapacityError> for CliError {
    fn from(e: CapacityError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { .. } => CliError::Io(e.to_string()),
            DataError::Augmentation(_) | DataError::Synthetic(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(c) => c.into(),
            ModelError::Io(m) => CliError::Io(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::Geometry { .. } => CliError::Config(e.to_string()),
            TrainError::Data(d) => d.into(),
            TrainError::Model(m) => m.into(),
            TrainError::Log { .. } => CliError::Io(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Grid(_) => CliError::Config(e.to_string()),
            SweepError::Data(d) => d.into(),
            SweepError::Io { .. } => CliError::Io(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn write_err(e: std::io::Error) -> CliError {
    CliError::Io(format!("stdout: {e}"))
}

#[derive(Parser, Debug)]
#[command(
    name = "vitcap",
    version,
    about = "Capacity analysis and training harness for Vision Transformers"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-form parameter breakdown of a model config.
    Count(CountArgs),
    /// Determination ratio Q = M·K/P.
    Qratio(QratioArgs),
    /// Analytic train/test error curves over a Q grid.
    Theory(TheoryArgs),
    /// Monte Carlo least-squares experiment.
    Linsim(LinsimArgs),
    /// Train a single configuration.
    Train(TrainArgs),
    /// Train every (heads, encoders) grid point and emit cross-section tables.
    Sweep(SweepArgs),
    /// Re-emit cross-section tables from a records.json file.
    Emit(EmitArgs),
}

#[derive(Args, Debug, Default)]
struct ModelFlags {
    /// Named geometry (mnist, cifar100, birds, places, imagenet).
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    /// Sets d_model, d_key, d_value and d_ff together.
    #[arg(long)]
    dims: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    d_key: Option<usize>,
    #[arg(long)]
    d_value: Option<usize>,
    #[arg(long)]
    d_ff: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    encoders: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    /// Drop every bias vector.
    #[arg(long)]
    no_bias: bool,
}

impl ModelFlags {
    fn base(&self, fallback: ModelConfig) -> Result<ModelConfig, CliError> {
        match &self.preset {
            Some(name) => preset(name)
                .map(|p| p.model)
                .ok_or_else(|| CliError::Config(format!("unknown preset {name:?}"))),
            None => Ok(fallback),
        }
    }

    fn apply(&self, c: &mut ModelConfig) {
        let set = |slot: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        if let Some(d) = self.dims {
            c.d_model = d;
            c.d_key = d;
            c.d_value = d;
            c.d_ff = d;
        }
        set(&mut c.image_size, self.image_size);
        set(&mut c.patch_size, self.patch_size);
        set(&mut c.channels, self.channels);
        set(&mut c.d_model, self.d_model);
        set(&mut c.d_key, self.d_key);
        set(&mut c.d_value, self.d_value);
        set(&mut c.d_ff, self.d_ff);
        set(&mut c.heads, self.heads);
        set(&mut c.encoders, self.encoders);
        set(&mut c.classes, self.classes);
        if self.no_bias {
            c.use_bias = false;
        }
    }

    /// Preset (or `fallback`) < config document < flags.
    fn resolve(&self, config: Option<&Path>, fallback: ModelConfig) -> Result<ModelConfig, CliError> {
        let mut c = layered::load(&self.base(fallback)?, config)?;
        self.apply(&mut c);
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }
    }
}

#[derive(Args, Debug, Default)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
    /// Disable training-time augmentation.
    #[arg(long)]
    no_augment: bool,
    /// Parameter-name substrings exempt from weight decay (comma separated).
    #[arg(long, value_delimiter = ',')]
    decay_exclude: Option<Vec<String>>,
}

impl TrainFlags {
    fn apply(&self, t: &mut TrainConfig) {
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.lr {
            t.learning_rate = v;
        }
        if let Some(v) = self.weight_decay {
            t.weight_decay = v;
        }
        if let Some(p) = self.precision {
            t.precision = p.into();
        }
        if self.no_augment {
            t.augmentation.enabled = false;
        }
        if let Some(v) = &self.decay_exclude {
            t.decay_exclude = v.clone();
        }
    }
}

#[derive(Args, Debug, Default)]
struct DataFlags {
    /// Directory holding {train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz].
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    train_samples: Option<usize>,
    #[arg(long)]
    test_samples: Option<usize>,
}

impl DataFlags {
    /// Applies the flags and resizes IDX images to the model geometry.
    fn apply(&self, spec: &mut DatasetSpec, model: &ModelConfig) -> Result<(), CliError> {
        match spec {
            DatasetSpec::Mnist {
                dir,
                train_samples,
                test_samples,
                image_size,
            } => {
                if let Some(d) = &self.data_dir {
                    *dir = d.clone();
                }
                if let Some(n) = self.train_samples {
                    *train_samples = n;
                }
                if let Some(n) = self.test_samples {
                    *test_samples = n;
                }
                *image_size = model.image_size;
            }
            DatasetSpec::Synthetic(cfg) => {
                if self.data_dir.is_some() {
                    return Err(CliError::Config("--data-dir conflicts with a synthetic dataset".into()));
                }
                if let Some(n) = self.train_samples {
                    cfg.train_samples = n;
                }
                if let Some(n) = self.test_samples {
                    cfg.test_samples = n;
                }
            }
        }
        Ok(())
    }
}

const DEFAULT_DATA_DIR: &str = "data/mnist-desk";

#[derive(Args, Debug)]
struct CountArgs {
    /// Model config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
    /// Print the breakdown as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct QratioArgs {
    /// Output count; defaults to the model's class count.
    #[arg(long)]
    m: Option<u64>,
    /// Training-sample count; defaults to the preset's training-set size.
    #[arg(long)]
    k: Option<u64>,
    /// Parameter count; computed from the model config when absent.
    #[arg(long)]
    p: Option<u64>,
    /// Also print Q as an exact fraction.
    #[arg(long)]
    exact: bool,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TheoryFile {
    noise_variance: f64,
    c: f64,
    q_grid: Vec<f64>,
}

#[derive(Args, Debug)]
struct TheoryArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Noise variance σ².
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    /// Q grid (comma separated, ascending); default 1, 2, 4, …, 1024.
    #[arg(long, value_delimiter = ',')]
    q: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinsimFile {
    p: usize,
    m: usize,
    k_train: usize,
    k_test: usize,
    sigma: f64,
    trials: usize,
    seed: u64,
    k_list: Vec<usize>,
}

impl Default for LinsimFile {
    fn default() -> Self {
        Self {
            p: 20,
            m: 1,
            k_train: 100,
            k_test: crate::linear_oracle::DEFAULT_K_TEST,
            sigma: 1.0,
            trials: 500,
            seed: 0,
            k_list: Vec::new(),
        }
    }
}

#[derive(Args, Debug)]
struct LinsimArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    k_train: Option<usize>,
    #[arg(long)]
    k_test: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Sweep these training-set sizes (comma separated, ascending).
    #[arg(long, value_delimiter = ',')]
    k_list: Option<Vec<usize>>,
    /// Also print every trial of a single experiment.
    #[arg(long)]
    per_trial: bool,
    /// Print the full result as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    model: ModelConfig,
    train: TrainConfig,
    dataset: DatasetSpec,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// JSON with optional `model`, `train` and `dataset` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    data: DataFlags,
    #[arg(long)]
    seed: Option<u64>,
    /// Append-only metrics log.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Save the trained parameters here.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    grid: SweepGrid,
    dataset: DatasetSpec,
    out: PathBuf,
    prefix: String,
    /// Fixed value of the cross-section axes.
    fixed: usize,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// JSON with optional `grid`, `dataset`, `out`, `prefix`, `fixed`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "heads-list", value_delimiter = ',')]
    heads_list: Option<Vec<usize>>,
    #[arg(long = "encoders-list", value_delimiter = ',')]
    encoders_list: Option<Vec<usize>>,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    data: DataFlags,
    /// Grid seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Concurrent configurations (0 = one per core).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    prefix: Option<String>,
    #[arg(long)]
    fixed: Option<usize>,
}

#[derive(Args, Debug)]
struct EmitArgs {
    /// records.json written by `sweep`.
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "sweep")]
    prefix: String,
    #[arg(long, default_value_t = 4)]
    fixed: usize,
}

fn count(args: &CountArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = args.model.resolve(args.config.as_deref(), ModelConfig::default())?;
    let b = count_params(&cfg)?;
    if args.json {
        writeln!(
            out,
            "{}",
            serde_json::to_string_pretty(&b).expect("breakdown serializes")
        )
        .map_err(write_err)?;
        return Ok(());
    }
    let rows = [
        ("embedding", b.embedding),
        ("positional", b.positional),
        ("attention_per_encoder", b.attention_per_encoder),
        ("ffn_per_encoder", b.ffn_per_encoder),
        ("norm_per_encoder", b.norm_per_encoder),
        ("per_encoder", b.per_encoder()),
        ("encoders", b.encoders),
        ("classifier", b.classifier),
        ("total", b.total),
    ];
    for (name, v) in rows {
        writeln!(out, "{name} {v}").map_err(write_err)?;
    }
    Ok(())
}

fn qratio(args: &QratioArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let needs_model = args.p.is_none() || args.m.is_none();
    let model = if needs_model {
        Some(args.model.resolve(args.config.as_deref(), ModelConfig::default())?)
    } else {
        None
    };
    let m = match args.m {
        Some(m) => m,
        None => model.as_ref().expect("model resolved").classes as u64,
    };
    let p = match args.p {
        Some(p) => p,
        None => count_params(model.as_ref().expect("model resolved"))?.total,
    };
    let k = match (args.k, &args.model.preset) {
        (Some(k), _) => k,
        (None, Some(name)) => preset(name).map(|p| p.train_samples).expect("preset validated"),
        (None, None) => {
            return Err(CliError::Usage(
                "--k is required unless --preset names a dataset".into(),
            ))
        }
    };
    let q = determination_ratio(&DeterminationInputs { m, k, p })?;
    writeln!(out, "{q}").map_err(write_err)?;
    if args.exact {
        writeln!(out, "{}/{}", q.numer(), q.denom()).map_err(write_err)?;
    }
    Ok(())
}

fn theory(args: &TheoryArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let defaults = TheoryFile {
        noise_variance: 1.0,
        c: 1.0,
        q_grid: geometric_grid(1.0, 2.0, 11),
    };
    let mut doc = layered::load(&defaults, args.config.as_deref())?;
    if let Some(v) = args.sigma2 {
        doc.noise_variance = v;
    }
    if let Some(v) = args.c {
        doc.c = v;
    }
    if let Some(q) = &args.q {
        doc.q_grid = q.clone();
    }
    let params = TheoryParams {
        noise_variance: doc.noise_variance,
        c: doc.c,
    };
    let curve = curve_sweep(&doc.q_grid, &params)?;
    writeln!(out, "determination train_mse test_mse noise_fit_fraction").map_err(write_err)?;
    for p in curve {
        let fraction = noise_fit_fraction(p.q).unwrap_or(f64::NAN);
        writeln!(
            out,
            "{} {} {} {}",
            fmt_float(p.q),
            fmt_float(p.train),
            fmt_float(p.test),
            fmt_float(fraction)
        )
        .map_err(write_err)?;
    }
    Ok(())
}

fn linsim(args: &LinsimArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut doc = layered::load(&LinsimFile::default(), args.config.as_deref())?;
    macro_rules! over {
        ($($f:ident),*) => { $( if let Some(v) = args.$f { doc.$f = v; } )* };
    }
    over!(p, m, k_train, k_test, sigma, trials, seed);
    if let Some(k) = &args.k_list {
        doc.k_list = k.clone();
    }
    let cfg = LinearExperimentConfig {
        p: doc.p,
        m: doc.m,
        k_train: doc.k_train,
        k_test: doc.k_test,
        sigma: doc.sigma,
        trials: doc.trials,
        seed: doc.seed,
    };
    cfg.validate()?;
    if !doc.k_list.is_empty() {
        let points = sweep_over_k(&cfg, &doc.k_list)?;
        if args.json {
            writeln!(
                out,
                "{}",
                serde_json::to_string_pretty(&points).expect("points serialize")
            )
            .map_err(write_err)?;
        } else {
            write!(out, "{}", format_sweep(&points)).map_err(write_err)?;
        }
        return Ok(());
    }
    let result = run_experiment(&cfg)?;
    if args.json {
        writeln!(
            out,
            "{}",
            serde_json::to_string_pretty(&result).expect("result serializes")
        )
        .map_err(write_err)?;
        return Ok(());
    }
    let point = sweep_over_k(&cfg, &[cfg.k_train])?;
    write!(out, "{}", format_sweep(&point)).map_err(write_err)?;
    if args.per_trial {
        writeln!(out, "trial loss val_loss rank").map_err(write_err)?;
        for (i, t) in result.trials.iter().enumerate() {
            writeln!(
                out,
                "{i} {} {} {}",
                fmt_float(t.train_mse),
                fmt_float(t.test_mse),
                t.rank
            )
            .map_err(write_err)?;
        }
    }
    Ok(())
}

fn train_typed<T: Real>(doc: &TrainFile, args: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (train_set, test_set) = doc.dataset.load()?;
    let mut model = VisionTransformer::<T>::build(&doc.model, doc.train.seed)?;
    let mut log = args.log.as_deref().map(MetricsLog::create).transpose()?;
    let start = Instant::now();
    let history = train(&mut model, &train_set, &test_set, &doc.train, log.as_mut())?;
    writeln!(out, "{METRICS_HEADER}").map_err(write_err)?;
    for m in &history {
        writeln!(out, "{}", m.log_row()).map_err(write_err)?;
    }
    if let Some(path) = &args.checkpoint {
        checkpoint::save(&model, path)?;
    }
    let q = determination_ratio(&DeterminationInputs {
        m: doc.model.classes as u64,
        k: train_set.len() as u64,
        p: model.enumerate_params(),
    })?;
    eprintln!(
        "trained h={} t={} P={} Q={} in {:.1}s",
        doc.model.heads,
        doc.model.encoders,
        model.enumerate_params(),
        q,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn train_cmd(args: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let defaults = TrainFile {
        model: args.model.base(desk::model())?,
        train: desk::train_config(),
        dataset: desk::dataset(DEFAULT_DATA_DIR),
    };
    let mut doc = layered::load(&defaults, args.config.as_deref())?;
    args.model.apply(&mut doc.model);
    doc.model.validate()?;
    args.train.apply(&mut doc.train);
    if let Some(s) = args.seed {
        doc.train.seed = s;
    }
    doc.train.validate()?;
    args.data.apply(&mut doc.dataset, &doc.model)?;
    match doc.train.precision {
        Precision::F32 => train_typed::<f32>(&doc, args, out),
        Precision::F64 => train_typed::<f64>(&doc, args, out),
    }
}

fn print_records(records: &[SweepRecord], out: &mut dyn Write) -> Result<(), CliError> {
    writeln!(out, "heads encoders params determination loss val_loss").map_err(write_err)?;
    for r in records {
        let f = |v: Option<f64>| v.map_or_else(|| "failed".to_string(), fmt_float);
        writeln!(
            out,
            "{} {} {} {} {} {}",
            r.heads,
            r.encoders,
            r.params,
            fmt_float(r.q.value()),
            f(r.loss),
            f(r.val_loss)
        )
        .map_err(write_err)?;
    }
    Ok(())
}

fn sweep_cmd(args: &SweepArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut grid = desk::grid();
    grid.base = args.model.base(grid.base)?;
    let defaults = SweepFile {
        grid,
        dataset: desk::dataset(DEFAULT_DATA_DIR),
        out: PathBuf::from("sweep-out"),
        prefix: "mnist".into(),
        fixed: 4,
    };
    let mut doc = layered::load(&defaults, args.config.as_deref())?;
    if let Some(h) = &args.heads_list {
        doc.grid.heads = h.clone();
    }
    if let Some(t) = &args.encoders_list {
        doc.grid.encoders = t.clone();
    }
    args.model.apply(&mut doc.grid.base);
    doc.grid.base.validate()?;
    args.train.apply(&mut doc.grid.train);
    doc.grid.train.validate()?;
    if let Some(s) = args.seed {
        doc.grid.seed = s;
    }
    if let Some(w) = args.workers {
        doc.grid.workers = w;
    }
    if let Some(o) = &args.out {
        doc.out = o.clone();
    }
    if let Some(p) = &args.prefix {
        doc.prefix = p.clone();
    }
    if let Some(f) = args.fixed {
        doc.fixed = f;
    }
    args.data.apply(&mut doc.dataset, &doc.grid.base)?;
    doc.grid.validate()?;

    let (train_set, test_set) = doc.dataset.load()?;
    let start = Instant::now();
    let records = sweep::run_sweep(&doc.grid, &train_set, &test_set)?;
    let files = write_outputs(
        &doc.out,
        &doc.prefix,
        &doc.grid,
        &doc.dataset,
        train_set.len(),
        test_set.len(),
        &records,
        doc.fixed,
    )?;
    print_records(&records, out)?;
    let failed = records.iter().filter(|r| !r.ok()).count();
    eprintln!(
        "sweep of {} configs ({failed} failed) in {:.1}s; wrote {}",
        records.len(),
        start.elapsed().as_secs_f64(),
        files
            .sections
            .iter()
            .map(|(_, p)| p.display().to_string())
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(())
}

fn emit_cmd(args: &EmitArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.records).map_err(|e| CliError::io(&args.records, e))?;
    let records: Vec<SweepRecord> =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", args.records.display())))?;
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    for (axis, tag) in [(Axis::Encoders(args.fixed), "t"), (Axis::Heads(args.fixed), "h")] {
        let section = cross_section(&records, axis)?;
        let path = args.out.join(format!("{}_{tag}{}.data", args.prefix, args.fixed));
        sweep::emit_data_file(&section, &path)?;
        writeln!(out, "{}", path.display()).map_err(write_err)?;
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, S>(args: I, out: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| {
        use clap::error::ErrorKind::*;
        match e.kind() {
            DisplayHelp | DisplayVersion => CliError::Help(e.render().to_string()),
            DisplayHelpOnMissingArgumentOrSubcommand => CliError::Usage("a subcommand is required; see --help".into()),
            _ => {
                let rendered = e.render().to_string();
                let first = rendered.lines().next().unwrap_or("invalid arguments");
                CliError::Usage(first.trim_start_matches("error: ").to_string())
            }
        }
    })?;
    match &cli.command {
        Command::Count(a) => count(a, out),
        Command::Qratio(a) => qratio(a, out),
        Command::Theory(a) => theory(a, out),
        Command::Linsim(a) => linsim(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Sweep(a) => sweep_cmd(a, out),
        Command::Emit(a) => emit_cmd(a, out),
    }
}

/// Runs the CLI against the process arguments and returns the exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(args, &mut lock) {
        Ok(()) => 0,
        Err(CliError::Help(text)) => {
            let _ = write!(lock, "{text}");
            0
        }
        Err(e) => {
            eprintln!("vitcap: error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_ok(args: &[&str]) -> String {
        let mut out = Vec::new();
        let mut full = vec!["vitcap"];
        full.extend_from_slice(args);
        run(full, &mut out).unwrap_or_else(|e| panic!("{args:?}: {e}"));
        String::from_utf8(out).unwrap()
    }

    fn run_err(args: &[&str]) -> CliError {
        let mut full = vec!["vitcap"];
        full.extend_from_slice(args);
        run(full, &mut Vec::new()).unwrap_err()
    }

    #[test]
    fn qratio_paper_case() {
        assert_eq!(
            run_ok(&["qratio", "--m", "100", "--k", "50000", "--p", "5000000"]),
            "1.0\n"
        );
        assert_eq!(
            run_ok(&["qratio", "--m", "3", "--k", "2", "--p", "4", "--exact"]),
            "1.5\n3/2\n"
        );
    }

    #[test]
    fn qratio_from_model_and_preset() {
        let p = count_params(&ModelConfig::default()).unwrap().total;
        let expected = determination_ratio(&DeterminationInputs { m: 10, k: 60_000, p }).unwrap();
        assert_eq!(run_ok(&["qratio", "--preset", "mnist"]), format!("{expected}\n"));
        assert!(matches!(run_err(&["qratio"]), CliError::Usage(_)));
    }

    #[test]
    fn count_matches_enumeration() {
        let text = run_ok(&["count", "--preset", "mnist", "--heads", "2", "--encoders", "8"]);
        let total: u64 = text
            .lines()
            .last()
            .unwrap()
            .strip_prefix("total ")
            .unwrap()
            .parse()
            .unwrap();
        let cfg = ModelConfig::default().with_grid_point(2, 8);
        assert_eq!(
            total,
            VisionTransformer::<f32>::build(&cfg, 0).unwrap().enumerate_params()
        );
        let json = run_ok(&[
            "count",
            "--dims",
            "4",
            "--image-size",
            "4",
            "--patch-size",
            "2",
            "--heads",
            "1",
            "--encoders",
            "1",
            "--classes",
            "2",
            "--json",
        ]);
        assert!(json.contains("\"total\": 182"));
    }

    #[test]
    fn config_file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(&path, r#"{"image_size": 4, "patch_size": 2, "d_model": 4, "d_key": 4, "d_value": 4, "d_ff": 4, "classes": 2, "heads": 1, "encoders": 1}"#).unwrap();
        let p = path.to_str().unwrap();
        assert!(run_ok(&["count", "--config", p]).ends_with("total 182\n"));
        assert!(run_ok(&["count", "--config", p, "--encoders", "2"]).ends_with("total 318\n"));
        assert!(run_ok(&["count", "--config", p, "--no-bias"]).ends_with("total 152\n"));
    }

    #[test]
    fn theory_zero_c_is_flat() {
        let text = run_ok(&["theory", "--sigma2", "2.5", "--c", "0"]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "determination train_mse test_mse noise_fit_fraction");
        assert_eq!(lines.len(), 12);
        for l in &lines[1..] {
            assert_eq!(l.split(' ').nth(2), Some("2.5"));
        }
        assert!(run_ok(&["theory", "--q", "4"])
            .lines()
            .nth(1)
            .unwrap()
            .ends_with(" 0.25"));
    }

    #[test]
    fn linsim_tables() {
        let text = run_ok(&["linsim", "--trials", "3", "--k-test", "100", "--k-list", "40,100"]);
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().starts_with("2.0 "));
        let per = run_ok(&["linsim", "--trials", "2", "--k-test", "50", "--per-trial"]);
        assert_eq!(per.lines().nth(2), Some("trial loss val_loss rank"));
        assert_eq!(per.lines().count(), 5);
    }

    #[test]
    fn errors_are_distinct() {
        let unknown = run_err(&["count", "--bogus", "1"]);
        assert!(matches!(&unknown, CliError::Usage(m) if m.contains("--bogus") && !m.contains('\n')));
        assert_eq!(unknown.exit_code(), 2);
        let invalid = run_err(&["count", "--patch-size", "3"]);
        assert!(matches!(&invalid, CliError::Config(m) if m.contains("divide")));
        assert_eq!(invalid.exit_code(), 3);
        let missing = run_err(&["count", "--config", "/nonexistent/model.json"]);
        assert!(matches!(&missing, CliError::Io(m) if m.contains("/nonexistent/model.json")));
        assert_eq!(missing.exit_code(), 4);
        assert!(matches!(run_err(&["count", "--preset", "nope"]), CliError::Config(_)));
        assert!(matches!(run_err(&["theory", "--q", "2,1"]), CliError::Config(_)));
        assert!(matches!(run_err(&["linsim", "--trials", "0"]), CliError::Config(_)));
        let no_data = run_err(&["train", "--data-dir", "/nonexistent", "--epochs", "1"]);
        assert!(matches!(&no_data, CliError::Io(_)), "{no_data:?}");
    }

    #[test]
    fn train_and_sweep_on_synthetic_data() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("train.json");
        std::fs::write(
            &cfg,
            r#"{"model": {"image_size": 8, "patch_size": 4, "d_model": 4, "d_key": 4, "d_value": 4, "d_ff": 4, "heads": 1, "encoders": 1, "classes": 2},
                "train": {"epochs": 2, "batch_size": 8},
                "dataset": {"kind": "synthetic", "image_size": 8, "glyph_size": 3, "class_count": 2, "contextual": false,
                            "train_samples": 16, "test_samples": 8, "seed": 1}}"#,
        )
        .unwrap();
        let ckpt = dir.path().join("m.ckpt");
        let log = dir.path().join("m.log");
        let text = run_ok(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--log",
            log.to_str().unwrap(),
        ]);
        assert_eq!(text.lines().count(), 3);
        assert_eq!(std::fs::read_to_string(&log).unwrap(), text);
        assert_eq!(checkpoint::load::<f32>(&ckpt).unwrap().config().classes, 2);

        let sweep_cfg = dir.path().join("sweep.json");
        std::fs::write(
            &sweep_cfg,
            r#"{"grid": {"heads": [1, 2], "encoders": [1, 2], "base": {"image_size": 8, "patch_size": 4, "d_model": 4, "d_key": 4, "d_value": 4, "d_ff": 4, "classes": 2},
                         "train": {"epochs": 1, "batch_size": 8}},
                "dataset": {"kind": "synthetic", "image_size": 8, "glyph_size": 3, "class_count": 2, "contextual": true,
                            "train_samples": 16, "test_samples": 8, "seed": 1},
                "prefix": "glyph", "fixed": 2}"#,
        )
        .unwrap();
        let out_dir = dir.path().join("sweep");
        let table = run_ok(&[
            "sweep",
            "--config",
            sweep_cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(table.lines().count(), 5);
        for f in [
            "glyph_t2.data",
            "glyph_h2.data",
            "manifest.json",
            "records.json",
            "failures.log",
        ] {
            assert!(out_dir.join(f).exists(), "{f}");
        }
        let emitted = dir.path().join("emitted");
        run_ok(&[
            "emit",
            "--records",
            out_dir.join("records.json").to_str().unwrap(),
            "--out",
            emitted.to_str().unwrap(),
            "--prefix",
            "glyph",
            "--fixed",
            "2",
        ]);
        assert_eq!(
            std::fs::read(emitted.join("glyph_t2.data")).unwrap(),
            std::fs::read(out_dir.join("glyph_t2.data")).unwrap()
        );
    }
}
