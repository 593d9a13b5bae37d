//! Command-line front end. Each subcommand resolves its flags (and an optional TOML config) into
//! a [`plan::Plan`], executes it against a run directory and appends it to that directory's
//! manifest.

pub mod manifest;
pub mod plan;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::data::{AugmentationPolicy, TextureSpec};
use crate::error::{Error, Result};
use crate::inference::Connectivity;
use crate::model::{ModelConfig, Network};
use crate::nn::AdamConfig;
use crate::objectives::{ObjectiveConfig, Variant};
use crate::seed;
use crate::trainer::{parse_schedule, EarlyStopping, TrainConfig};
use manifest::{ManifestEntry, RunManifest};
use plan::{CalibratePlan, EvalPlan, InferPlan, Plan, PostSettings, RunConfig, SynthPlan, TrainPlan, FINAL_CHECKPOINT};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ssae", version, about = "Self-supervised autoencoder anomaly detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic texture dataset in the MVTec layout.
    Synth(SynthArgs),
    /// Train an autoencoder on the normal images of a category.
    Train(TrainArgs),
    /// Calibrate the anomaly threshold on held-out normal images.
    Calibrate(CalibrateArgs),
    /// Detect and localize anomalies in images.
    Infer(InferArgs),
    /// Compute detection and localization metrics on the test split.
    Eval(EvalArgs),
    /// Re-run every command recorded in a manifest into a new run directory.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Texture preset: stripes, checker, noise or low-contrast.
    #[arg(long)]
    pub spec: String,
    /// Category directory to create.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 128)]
    pub side: usize,
    #[arg(long, default_value_t = 50)]
    pub n_train: usize,
    #[arg(long, default_value_t = 20)]
    pub n_test: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replace an existing non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Category directory (MVTec layout).
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory for checkpoints, logs and the manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with `[train]` and `[model]` tables; explicit flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub objective: Option<Variant>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Progressive schedule as `side:steps,...`, e.g. `64:500,128:500`.
    #[arg(long)]
    pub schedule: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub base_width: Option<usize>,
    #[arg(long)]
    pub sdc_stacks: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub init_seed: Option<u64>,
    #[arg(long)]
    pub eval_every: Option<u64>,
    /// Early-stopping patience in validations.
    #[arg(long)]
    pub patience: Option<u32>,
    #[arg(long, conflicts_with = "patience")]
    pub no_early_stop: bool,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    /// Allowed rotations in degrees, e.g. `0,90,180,270`.
    #[arg(long, value_delimiter = ',')]
    pub rotations: Option<Vec<u16>>,
    #[arg(long)]
    pub hflip: bool,
    #[arg(long)]
    pub vflip: bool,
    #[arg(long)]
    pub force: bool,
    /// Print the resolved configuration and layer shapes, then exit without training.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args, Clone)]
pub struct PostArgs {
    /// Gaussian smoothing sigma in pixels (default scales with the input side).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Smallest component area flagged as anomalous.
    #[arg(long)]
    pub min_area: Option<usize>,
    #[arg(long, value_enum)]
    pub connectivity: Option<ConnectivityArg>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ConnectivityArg {
    Four,
    Eight,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub post: PostArgs,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Images or directories of images.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f32>,
    #[command(flatten)]
    pub post: PostArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub threshold: Option<f32>,
    #[command(flatten)]
    pub post: PostArgs,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Manifest file or run directory.
    pub manifest: PathBuf,
    /// New run directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

/// Optional settings file for `train`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    version: Option<u32>,
    #[serde(default)]
    train: Option<toml::Table>,
    #[serde(default)]
    model: Option<ModelOverrides>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelOverrides {
    base_width: Option<usize>,
    dilations: Option<Vec<usize>>,
    sdc_stacks: Option<usize>,
    init_seed: Option<u64>,
}

fn absolute(p: &Path) -> Result<PathBuf> {
    Ok(if p.is_absolute() { p.to_path_buf() } else { std::env::current_dir()?.join(p) })
}

fn seed_or_fresh(name: &str, given: Option<u64>, seeds: &mut BTreeMap<String, u64>) -> u64 {
    let s = given.unwrap_or_else(|| {
        let s = seed::fresh();
        eprintln!("{name}: {s} (generated)");
        s
    });
    seeds.insert(name.into(), s);
    s
}

/// Refuse to write into a non-empty directory unless forced, in which case it is cleared.
fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() && fs::read_dir(dir)?.next().is_some() {
        if !force {
            return Err(Error::Config(format!("{} exists and is not empty (use --force)", dir.display())));
        }
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn resolve_synth(a: &SynthArgs, seeds: &mut BTreeMap<String, u64>) -> Result<Plan> {
    let spec = TextureSpec::preset(&a.spec, a.side)?;
    spec.validate()?;
    let seed = seed_or_fresh("seed", a.seed, seeds);
    Ok(Plan::Synth(SynthPlan { spec, n_train: a.n_train, n_test: a.n_test, seed }))
}

fn resolve_train(a: &TrainArgs, seeds: &mut BTreeMap<String, u64>) -> Result<Plan> {
    let file: ConfigFile = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => ConfigFile::default(),
    };
    if file.version.is_some_and(|v| v != trainer_version()) {
        return Err(Error::Config(format!("unsupported config version {:?}", file.version)));
    }
    let table = file.train.unwrap_or_default();
    let has = |key: &str| table.contains_key(key);
    let variant = a.objective.unwrap_or_else(|| {
        table
            .get("objective")
            .and_then(|o| o.get("variant"))
            .and_then(|v| v.as_str())
            .and_then(|v| <Variant as clap::ValueEnum>::from_str(v, true).ok())
            .unwrap_or(Variant::V1)
    });
    // the objective's defaults first, then the file, then flags
    let base = toml::Table::try_from(TrainConfig::for_objective(ObjectiveConfig::new(variant)))
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut merged = base;
    merge_tables(&mut merged, table.clone());
    let mut cfg: TrainConfig =
        merged.try_into().map_err(|e: toml::de::Error| Error::Config(format!("[train]: {e}")))?;
    cfg.objective.variant = variant;
    if let Some(l) = a.lambda {
        cfg.objective.lambda = l;
    }
    if let Some(s) = &a.schedule {
        cfg.schedule = parse_schedule(s)?;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.optimizer = AdamConfig { learning_rate: lr, ..cfg.optimizer };
    }
    if let Some(e) = a.eval_every {
        cfg.eval_every = e;
    }
    if let Some(p) = a.patience {
        cfg.early_stopping = Some(EarlyStopping { patience: p });
    }
    if a.no_early_stop {
        cfg.early_stopping = None;
    }
    if let Some(f) = a.validation_fraction {
        cfg.validation_fraction = f;
    }
    if a.rotations.is_some() || a.hflip || a.vflip {
        let mut policy = if has("augmentation") { cfg.augmentation.clone() } else { AugmentationPolicy::identity() };
        if let Some(r) = &a.rotations {
            policy.rotations = r.clone();
        }
        policy.hflip |= a.hflip;
        policy.vflip |= a.vflip;
        cfg.augmentation = policy;
    }
    cfg.seed = seed_or_fresh("seed", a.seed.or(has("seed").then_some(cfg.seed)), seeds);
    if !has("validation_seed") {
        cfg.validation_seed = seed::derive(cfg.seed, &[1]);
    }
    seeds.insert("validation_seed".into(), cfg.validation_seed);
    cfg.validate()?;

    let m = file.model.unwrap_or_default();
    let defaults = ModelConfig::default();
    let model = ModelConfig {
        input_side: cfg.final_side(),
        base_width: a.base_width.or(m.base_width).unwrap_or(defaults.base_width),
        dilations: m.dilations.unwrap_or(defaults.dilations),
        sdc_stacks: a.sdc_stacks.or(m.sdc_stacks).unwrap_or(defaults.sdc_stacks),
        init_seed: a.init_seed.or(m.init_seed).unwrap_or_else(|| seed::derive(cfg.seed, &[2])),
    };
    model.validate()?;
    seeds.insert("init_seed".into(), model.init_seed);
    Ok(Plan::Train(TrainPlan { data: absolute(&a.data)?, config: RunConfig { model, train: cfg } }))
}

/// Overlay `top` on `base`, descending into tables present in both.
fn merge_tables(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge_tables(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn trainer_version() -> u32 {
    crate::trainer::CONFIG_VERSION
}

fn run_side(run: &Path) -> Result<usize> {
    let path = run.join(FINAL_CHECKPOINT);
    if !path.exists() {
        return Err(Error::Config(format!("no checkpoint at {}; run `ssae train` first", path.display())));
    }
    Ok(Network::load(&path)?.config().input_side)
}

fn resolve_post(run: &Path, a: &PostArgs) -> Result<PostSettings> {
    let mut post = PostSettings::defaults(run_side(run)?);
    if let Some(s) = a.sigma {
        post.sigma = s;
    }
    if let Some(m) = a.min_area {
        post.min_area = m;
    }
    if let Some(c) = a.connectivity {
        post.connectivity = match c {
            ConnectivityArg::Four => Connectivity::Four,
            ConnectivityArg::Eight => Connectivity::Eight,
        };
    }
    if !(post.sigma >= 0.0) || post.min_area == 0 {
        return Err(Error::Config("sigma must be >= 0 and min-area >= 1".into()));
    }
    Ok(post)
}

fn record(run_dir: &Path, plan: Plan, seeds: BTreeMap<String, u64>) -> Result<()> {
    let started = chrono::Utc::now().to_rfc3339();
    let artifacts = plan.execute(run_dir)?;
    let entry = ManifestEntry {
        plan,
        seeds,
        artifacts,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        started,
        finished: chrono::Utc::now().to_rfc3339(),
    };
    RunManifest::append(run_dir, entry)
}

fn print_plan(plan: &Plan) -> Result<()> {
    let Plan::Train(p) = plan else { return Ok(()) };
    print!("{}", toml::to_string(&p.config).map_err(|e| Error::Config(e.to_string()))?);
    let net = Network::build(&p.config.model)?;
    println!("\n# {:<16} {:>8} {:>6} {:>18}  activation", "layer", "filters", "kernel", "output");
    for layer in net.describe(p.config.model.input_side) {
        let (h, w, c) = layer.output;
        println!(
            "# {:<16} {:>8} {:>6} {:>18}  {:?}{}",
            layer.kind,
            layer.filters.map_or("-".into(), |f| f.to_string()),
            layer.kernel.map_or("-".into(), |k| format!("{k}x{k}")),
            format!("{h}x{w}x{c}"),
            layer.activation,
            if layer.batch_norm { " + bn" } else { "" }
        );
    }
    Ok(())
}

pub fn execute(command: Command) -> Result<()> {
    let mut seeds = BTreeMap::new();
    match command {
        Command::Synth(a) => {
            let plan = resolve_synth(&a, &mut seeds)?;
            prepare_dir(&a.out, a.force)?;
            record(&a.out, plan, seeds)
        }
        Command::Train(a) => {
            let plan = resolve_train(&a, &mut seeds)?;
            if a.dry_run {
                return print_plan(&plan);
            }
            prepare_dir(&a.out, a.force)?;
            record(&a.out, plan, seeds)
        }
        Command::Calibrate(a) => {
            let post = resolve_post(&a.run, &a.post)?;
            record(&a.run, Plan::Calibrate(CalibratePlan { data: absolute(&a.data)?, post }), seeds)
        }
        Command::Infer(a) => {
            let post = resolve_post(&a.run, &a.post)?;
            let inputs = a.inputs.iter().map(|p| absolute(p)).collect::<Result<Vec<_>>>()?;
            record(&a.run, Plan::Infer(InferPlan { inputs, post, threshold: a.threshold }), seeds)
        }
        Command::Eval(a) => {
            let post = resolve_post(&a.run, &a.post)?;
            record(&a.run, Plan::Eval(EvalPlan { data: absolute(&a.data)?, post, threshold: a.threshold }), seeds)
        }
        Command::Replay(a) => {
            let path = if a.manifest.is_dir() { RunManifest::path(&a.manifest) } else { a.manifest.clone() };
            let manifest = RunManifest::load(&path)?;
            prepare_dir(&a.out, a.force)?;
            for entry in manifest.entries {
                log::info!("replaying {}", entry.plan.name());
                record(&a.out, entry.plan, entry.seeds)?;
            }
            Ok(())
        }
    }
}

/// Parse `args`, run, and map the outcome to an exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => EXIT_USAGE,
                _ => EXIT_RUNTIME,
            }
        }
    }
}
