//! Command-line driver: `fit`, `generate`, `audit` and `compare`.
//!
//! Exit codes are 0 on success, 2 on a runtime failure and 64 on a usage
//! error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::audit::{compare, run_audit_full, AuditOptions, PredictorSource, DEFAULT_REPLICATES};
use crate::dataset::{encode_csv_filtered, load_schema, AttributeDomain, EncodedDatabase, RowFilter};
use crate::error::Error;
use crate::fairness::{PredicateSpec, PredictionVector};
use crate::model::{fit, TreeModel};
use crate::predictor::{load_predictions, train, Predictor, TrainConfig};
use crate::privacy::{epsilon_delta_to_rho, measure, AccountantReport, NoiseMode};
use crate::rng::StreamRng;
use crate::select::{build_plan_with, PlanOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "DPFAIR_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "dpfair-out";
/// δ used when a budget gives ε without δ.
pub const DEFAULT_DELTA: f64 = 1e-9;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuiltinPredictorConfig {
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub retrain_per_replicate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PredictionSourceConfig {
    Builtin(BuiltinPredictorConfig),
    /// CSV with a `prediction` column aligned with the data rows.
    External(PathBuf),
}

impl Default for PredictionSourceConfig {
    fn default() -> Self {
        PredictionSourceConfig::Builtin(BuiltinPredictorConfig::default())
    }
}

/// A pre-generated synthetic database for `compare`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticInput {
    pub data: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<PathBuf>,
}

/// The single JSON configuration shared by every subcommand. Relative paths
/// resolve against the directory holding the config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub schema: Option<PathBuf>,
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub filter: Vec<RowFilter>,
    pub protected: Option<PredicateSpec>,
    pub ground_truth: Option<PredicateSpec>,
    #[serde(default)]
    pub predictions: PredictionSourceConfig,
    pub budget: Option<BudgetConfig>,
    pub replicates: Option<usize>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub force_edge: Option<[String; 2]>,
    #[serde(default)]
    pub testing_mode: bool,
    pub synthetic_rows: Option<usize>,
    pub threshold: Option<f64>,
    #[serde(default)]
    pub synthetic: Vec<SyntheticInput>,
}

impl AuditConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .or_else(|e| usage(format!("cannot read config file {}: {e}", path.display())))?;
        let mut cfg: AuditConfig = serde_json::from_str(&text)
            .or_else(|e| usage(format!("invalid config file {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.schema.as_mut().map(fix);
        self.data.as_mut().map(fix);
        self.output_dir.as_mut().map(fix);
        if let PredictionSourceConfig::External(p) = &mut self.predictions {
            fix(p);
        }
        for s in &mut self.synthetic {
            fix(&mut s.data);
            s.predictions.as_mut().map(fix);
        }
    }

    /// Budget as a noise mode plus the (ε, δ) pair it came from, if any.
    pub fn noise(&self) -> CliResult<(NoiseMode, Option<(f64, f64)>)> {
        if self.testing_mode {
            return Ok((NoiseMode::Disabled, None));
        }
        let Some(b) = &self.budget else {
            return usage("a budget is required unless testing_mode is set");
        };
        match (b.rho, b.epsilon) {
            (Some(rho), None) => {
                if b.delta.is_some() {
                    return usage("delta only applies together with epsilon");
                }
                Ok((NoiseMode::Calibrated { rho }, None))
            }
            (None, Some(eps)) => {
                let delta = b.delta.unwrap_or(DEFAULT_DELTA);
                let rho = epsilon_delta_to_rho(eps, delta).map_err(|e| CliError::Usage(e.to_string()))?;
                Ok((NoiseMode::Calibrated { rho }, Some((eps, delta))))
            }
            _ => usage("the budget needs exactly one of rho or epsilon"),
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    fn schema(&self) -> CliResult<Vec<AttributeDomain>> {
        let Some(path) = &self.schema else {
            return usage("no schema path given");
        };
        if !path.is_file() {
            return usage(format!("schema file not found: {}", path.display()));
        }
        load_schema(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    fn database(&self, domains: &[AttributeDomain]) -> CliResult<EncodedDatabase> {
        let Some(path) = &self.data else {
            return usage("no data path given");
        };
        if !path.is_file() {
            return usage(format!("data file not found: {}", path.display()));
        }
        Ok(encode_csv_filtered(path, domains, &self.filter)?)
    }

    fn predicates(&self) -> CliResult<(PredicateSpec, PredicateSpec)> {
        match (&self.protected, &self.ground_truth) {
            (Some(s), Some(y)) => Ok((s.clone(), y.clone())),
            _ => usage("both protected and ground_truth predicates are required"),
        }
    }

    fn plan_options(&self, domains: &[AttributeDomain]) -> CliResult<PlanOptions> {
        let force_edge = match &self.force_edge {
            None => None,
            Some([a, b]) => {
                let idx = |n: &str| {
                    domains
                        .iter()
                        .position(|d| d.name() == n)
                        .ok_or_else(|| CliError::Usage(format!("force_edge names unknown attribute {n}")))
                };
                let (u, v) = (idx(a)?, idx(b)?);
                if u == v {
                    return usage("force_edge needs two distinct attributes");
                }
                Some((u.min(v), u.max(v)))
            }
        };
        Ok(PlanOptions {
            force_edge,
            selection_noise: None,
        })
    }
}

/// Overrides shared by the config-driven subcommands.
#[derive(Args, Debug, Default)]
pub struct ConfigArgs {
    /// JSON configuration file.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Total zCDP budget.
    #[arg(long, conflicts_with = "epsilon")]
    pub rho: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, requires = "epsilon")]
    pub delta: Option<f64>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Defaults to the config value, then $DPFAIR_OUT_DIR, then ./dpfair-out.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Measure marginals without noise. Not private.
    #[arg(long)]
    pub testing_mode: bool,
    #[arg(long)]
    pub synthetic_rows: Option<usize>,
    /// Annotate each difference as within or beyond this value.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Force an edge, given as `a,b`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub force_edge: Option<Vec<String>>,
    /// Retrain the built-in predictor on every replicate.
    #[arg(long)]
    pub retrain: bool,
    /// External predictions CSV for the original data.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> CliResult<AuditConfig> {
        let mut cfg = match &self.config {
            Some(path) => AuditConfig::load(path)?,
            None => AuditConfig::default(),
        };
        if let Some(p) = &self.schema {
            cfg.schema = Some(p.clone());
        }
        if let Some(p) = &self.data {
            cfg.data = Some(p.clone());
        }
        if self.rho.is_some() || self.epsilon.is_some() {
            cfg.budget = Some(BudgetConfig {
                rho: self.rho,
                epsilon: self.epsilon,
                delta: self.delta,
            });
        }
        cfg.replicates = self.replicates.or(cfg.replicates);
        cfg.seed = self.seed.or(cfg.seed);
        if let Some(p) = &self.output_dir {
            cfg.output_dir = Some(p.clone());
        }
        cfg.testing_mode |= self.testing_mode;
        cfg.synthetic_rows = self.synthetic_rows.or(cfg.synthetic_rows);
        cfg.threshold = self.threshold.or(cfg.threshold);
        if let Some(e) = &self.force_edge {
            cfg.force_edge = Some([e[0].clone(), e[1].clone()]);
        }
        if let Some(p) = &self.predictions {
            cfg.predictions = PredictionSourceConfig::External(p.clone());
        }
        if self.retrain {
            match &mut cfg.predictions {
                PredictionSourceConfig::Builtin(b) => b.retrain_per_replicate = true,
                PredictionSourceConfig::External(_) => return usage("--retrain needs the built-in predictor"),
            }
        }
        Ok(cfg)
    }
}

#[derive(Parser, Debug)]
#[command(name = "dpfair", version, about = "Fairness audits on differentially private synthetic data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Select, measure and fit; writes model.json, plan.json and accountant.json.
    Fit {
        #[command(flatten)]
        config: ConfigArgs,
        /// Re-read the written model and confirm the original data is no
        /// longer needed.
        #[arg(long)]
        discard: bool,
    },
    /// Sample a synthetic CSV from a fitted model.
    Generate {
        #[arg(long)]
        model: PathBuf,
        /// Row count; defaults to the row count recorded in the model.
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV; standard output when omitted.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Full audit; writes audit.json, audit.md, plan.json and accountant.json.
    Audit {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Audit against the pre-generated synthetic CSVs listed in the config.
    Compare {
        #[command(flatten)]
        config: ConfigArgs,
        /// Extra synthetic CSVs, scored with the built-in predictor.
        #[arg(long)]
        synthetic: Vec<PathBuf>,
    },
}

/// Parse `args` (program name first) and run. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Fit { config, discard } => cmd_fit(&config.resolve()?, discard),
        Command::Generate {
            model,
            rows,
            seed,
            output,
        } => cmd_generate(&model, rows, seed, output.as_deref()),
        Command::Audit { config } => cmd_audit(&config.resolve()?),
        Command::Compare { config, synthetic } => {
            let mut cfg = config.resolve()?;
            cfg.synthetic.extend(synthetic.into_iter().map(|data| SyntheticInput { data, predictions: None }));
            cmd_compare(&cfg)
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

pub fn cmd_fit(cfg: &AuditConfig, discard: bool) -> CliResult<()> {
    let domains = cfg.schema()?;
    let (noise, eps_delta) = cfg.noise()?;
    let options = cfg.plan_options(&domains)?;
    let db = cfg.database(&domains)?;
    let seed = cfg.seed.unwrap_or(0);
    let out = cfg.output_dir();
    create_dir(&out)?;

    let start = Instant::now();
    let plan = build_plan_with(&db, &options)?;
    let (measurements, alloc) = measure(&db, &plan, noise, seed)?;
    let mut model = fit(&measurements, &plan, db.domains())?;
    let elapsed = start.elapsed();
    model.rows = cfg.synthetic_rows.unwrap_or(db.row_count());

    let names: Vec<&str> = domains.iter().map(|d| d.name()).collect();
    let accountant = AccountantReport::build(&names, &plan, alloc.as_ref(), eps_delta)?;
    let model_path = out.join("model.json");
    model.save(&model_path)?;
    write_json(&out.join("plan.json"), &plan.to_json(&names))?;
    write_json(&out.join("accountant.json"), &accountant)?;
    println!(
        "fit {} rows, {} attributes in {:.3} s; wrote {}",
        db.row_count(),
        db.attribute_count(),
        elapsed.as_secs_f64(),
        out.display()
    );
    drop(db);
    if discard {
        let reloaded = TreeModel::load(&model_path)?;
        if reloaded != model {
            return Err(Error::Parse(format!("{} does not round-trip", model_path.display())).into());
        }
        let data = cfg.data.as_deref().unwrap_or(Path::new("?"));
        println!(
            "model {} verified; generate no longer needs {}",
            model_path.display(),
            data.display()
        );
    }
    Ok(())
}

pub fn cmd_generate(model: &Path, rows: Option<usize>, seed: u64, output: Option<&Path>) -> CliResult<()> {
    if rows == Some(0) {
        return usage("--rows must be positive");
    }
    if !model.is_file() {
        return usage(format!("model file not found: {}", model.display()));
    }
    let model = TreeModel::load(model)?;
    let n = rows.unwrap_or(model.rows);
    let mut rng = StreamRng::for_label(seed, "generate");
    let synth = model.sample(n, &mut rng)?;
    match output {
        Some(path) => {
            synth.save_csv(path)?;
            println!("wrote {n} rows to {}", path.display());
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            synth.write_csv(&mut lock)?;
            lock.flush().map_err(|e| Error::io("<stdout>", e))?;
            eprintln!("wrote {n} rows");
        }
    }
    Ok(())
}

pub fn cmd_audit(cfg: &AuditConfig) -> CliResult<()> {
    let domains = cfg.schema()?;
    let (noise, eps_delta) = cfg.noise()?;
    let (s, y) = cfg.predicates()?;
    let plan_opts = cfg.plan_options(&domains)?;
    let source = match &cfg.predictions {
        PredictionSourceConfig::Builtin(b) => PredictorSource::Train {
            config: b.train.clone(),
            retrain_per_replicate: b.retrain_per_replicate,
        },
        PredictionSourceConfig::External(_) => {
            return usage("external predictions cover only the original rows; use compare instead")
        }
    };
    let db = cfg.database(&domains)?;
    let out = cfg.output_dir();
    create_dir(&out)?;
    let options = AuditOptions {
        noise,
        replicates: cfg.replicates.unwrap_or(DEFAULT_REPLICATES),
        seed: cfg.seed.unwrap_or(0),
        plan: plan_opts,
        synthetic_rows: cfg.synthetic_rows,
        epsilon_delta: eps_delta,
    };
    let names: Vec<String> = domains.iter().map(|d| d.name().to_string()).collect();
    let start = Instant::now();
    let outcome = run_audit_full(db, &source, &s, &y, &options)?;
    let elapsed = start.elapsed();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();

    write_json(&out.join("audit.json"), &outcome.comparison.to_json(cfg.threshold))?;
    let table = outcome.comparison.render(cfg.threshold);
    fs::write(out.join("audit.md"), &table).map_err(|e| Error::io(out.join("audit.md"), e))?;
    write_json(&out.join("plan.json"), &outcome.plan.to_json(&names))?;
    write_json(&out.join("accountant.json"), &outcome.accountant)?;
    outcome.model.save(out.join("model.json"))?;
    print!("{table}");
    println!("audit finished in {:.3} s; wrote {}", elapsed.as_secs_f64(), out.display());
    Ok(())
}

pub fn cmd_compare(cfg: &AuditConfig) -> CliResult<()> {
    let domains = cfg.schema()?;
    let (s, y) = cfg.predicates()?;
    if cfg.synthetic.is_empty() {
        return usage("compare needs at least one synthetic CSV");
    }
    let db = cfg.database(&domains)?;
    let builtin: Option<Arc<dyn Predictor>> = match &cfg.predictions {
        PredictionSourceConfig::Builtin(b) => Some(Arc::new(train(&db, &y, &b.train)?)),
        PredictionSourceConfig::External(_) => None,
    };
    let original_pred = match (&cfg.predictions, &builtin) {
        (PredictionSourceConfig::External(p), _) => load_predictions(p, &db)?,
        (_, Some(m)) => m.predict(&db)?,
        _ => unreachable!(),
    };
    let synthetic = cfg
        .synthetic
        .iter()
        .map(|input| {
            if !input.data.is_file() {
                return usage(format!("synthetic file not found: {}", input.data.display()));
            }
            let sdb = encode_csv_filtered(&input.data, &domains, &[])?;
            let preds: PredictionVector = match (&input.predictions, &builtin) {
                (Some(p), _) => load_predictions(p, &sdb)?,
                (None, Some(m)) => m.predict(&sdb)?,
                (None, None) => {
                    return usage(format!("{} needs a predictions file", input.data.display()));
                }
            };
            Ok((sdb, preds))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let cmp = compare(&db, &original_pred, &synthetic, &s, &y)?;
    let out = cfg.output_dir();
    create_dir(&out)?;
    write_json(&out.join("compare.json"), &cmp.to_json(cfg.threshold))?;
    let table = cmp.render(cfg.threshold);
    fs::write(out.join("compare.md"), &table).map_err(|e| Error::io(out.join("compare.md"), e))?;
    print!("{table}");
    Ok(())
}
