//! Command-line front end: `oracle`, `estimate`, `simulate` and `placebo`.
//!
//! Reports are JSON documents holding a `schema_version`, a run manifest and
//! the result payload. Everything outside `manifest` is a deterministic
//! function of the arguments, input files and seed.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimator::{estimate, fit_method, synthesize_counterfactual, EstimationReport, EstimatorConfig, Method, MethodFit};
use crate::inference::{placebo_with_method, PlaceboOptions, PlaceboResult};
use crate::measures::PanelDataset;
use crate::ot::{cdf_l2_sq, w1_exact_1d, w1_exact_lp, w2_exact_1d, DEFAULT_MAX_ATOMS};
use crate::panel_io::{read_measure_path, read_panel_path, PanelSpec};
use crate::simlab::{run_monte_carlo, write_period_table, DgpSpec, McReport, MethodTiming, Scenario};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "distsynth", version, about = "Distributional synthetic controls by Wasserstein-1 minimization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact distance between two measures stored as CSV files.
    Oracle(OracleArgs),
    /// Fit synthetic control weights on a panel.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo study.
    Simulate(SimulateArgs),
    /// Placebo permutation test.
    Placebo(PlaceboArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    W1,
    W2,
    Cdfl2,
    /// W1 by the transport linear program (any dimension, small inputs).
    W1lp,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, value_enum)]
    pub metric: Metric,
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
}

#[derive(Debug, Args)]
pub struct PanelArgs {
    /// Long-format panel CSV with columns unit,period,v1[,v2,...].
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub treated: String,
    /// Last pre-treatment period (inclusive).
    #[arg(long)]
    pub cutoff: String,
    /// Explicit comma-separated period order.
    #[arg(long, value_delimiter = ',')]
    pub period_order: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[arg(long, default_value = "wgan")]
    pub method: Method,
    /// JSON file with estimator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: Scenario,
    #[arg(long, default_value_t = 1)]
    pub nsim: usize,
    #[arg(long)]
    pub seed: u64,
    /// Contamination rates; several values run a sweep.
    #[arg(long, value_delimiter = ',')]
    pub epsilon: Option<Vec<f64>>,
    /// Gap parameters; several values run a sweep.
    #[arg(long, value_delimiter = ',')]
    pub gamma: Option<Vec<f64>>,
    #[arg(long)]
    pub n_micro: Option<usize>,
    #[arg(long)]
    pub t0: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    /// JSON file with estimator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// JSON file with design settings; flags above override it.
    #[arg(long)]
    pub design: Option<PathBuf>,
    /// Worker threads for replications.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for per-period tables.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Directory for plot series.
    #[arg(long)]
    pub plot_data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlaceboArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[arg(long, default_value = "wgan")]
    pub method: Method,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Leave the treated unit out of the placebo donor pools.
    #[arg(long)]
    pub exclude_treated: bool,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

impl clap::builder::ValueParserFactory for Method {
    type Parser = clap::builder::ValueParser;

    fn value_parser() -> Self::Parser {
        clap::builder::ValueParser::new(|s: &str| s.parse::<Method>().map_err(|e| e.to_string()))
    }
}

impl clap::builder::ValueParserFactory for Scenario {
    type Parser = clap::builder::ValueParser;

    fn value_parser() -> Self::Parser {
        clap::builder::ValueParser::new(|s: &str| s.parse::<Scenario>().map_err(|e| e.to_string()))
    }
}

/// Provenance block embedded in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    /// Fully resolved settings, defaults included.
    pub config: serde_json::Value,
    /// SHA-256 of each input file, keyed by the path given on the command line.
    pub input_digests: Vec<(String, String)>,
    pub started_unix: f64,
    pub finished_unix: f64,
    /// Wall-clock per method run, when applicable.
    pub timing: Vec<MethodTiming>,
}

impl RunManifest {
    fn start(subcommand: &str, seed: Option<u64>) -> Self {
        Self {
            subcommand: subcommand.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config: serde_json::Value::Null,
            input_digests: Vec::new(),
            started_unix: now(),
            finished_unix: 0.0,
            timing: Vec::new(),
        }
    }

    fn digest(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        let hash = hex::encode(Sha256::digest(&bytes));
        self.input_digests.push((path.display().to_string(), hash));
        Ok(())
    }
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateOutput {
    pub schema_version: u32,
    pub manifest: RunManifest,
    pub method: Method,
    pub donors: Vec<String>,
    pub periods: Vec<String>,
    pub aggregated: Vec<f64>,
    pub per_period_weights: Vec<Vec<f64>>,
    /// Mean of the counterfactual mixture in each period, per coordinate.
    pub counterfactual_means: Vec<Vec<f64>>,
    /// Full optimizer report for the adversarial estimator.
    pub wgan: Option<EstimationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub epsilon: f64,
    pub gamma: f64,
    pub report: McReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateOutput {
    pub schema_version: u32,
    pub manifest: RunManifest,
    pub scenario: Scenario,
    pub sweep: Vec<SweepPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboOutput {
    pub schema_version: u32,
    pub manifest: RunManifest,
    pub method: Method,
    pub exclude_treated: bool,
    pub result: PlaceboResult,
}

/// Parses `argv`, runs the subcommand and returns the process exit code:
/// 0 on success, 2 for usage or input errors, 1 for runtime failures.
pub fn parse_and_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let mut stdout = std::io::stdout().lock();
    match run(cli, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                2
            } else {
                1
            }
        }
    }
}

/// Runs a parsed command, writing any console data to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Oracle(a) => run_oracle(&a, out),
        Command::Estimate(a) => run_estimate(&a),
        Command::Simulate(a) => run_simulate(&a),
        Command::Placebo(a) => run_placebo(&a),
    }
}

fn run_oracle(args: &OracleArgs, out: &mut dyn Write) -> Result<()> {
    let a = read_measure_path(&args.a)?;
    let b = read_measure_path(&args.b)?;
    let value = match args.metric {
        Metric::W1 => w1_exact_1d(&a, &b)?.value,
        Metric::W2 => w2_exact_1d(&a, &b)?.value,
        Metric::Cdfl2 => cdf_l2_sq(&a, &b)?,
        Metric::W1lp => w1_exact_lp(&a, &b, DEFAULT_MAX_ATOMS)?.value,
    };
    writeln!(out, "{value:.12}")?;
    Ok(())
}

fn load_config(path: Option<&Path>, seed: Option<u64>, manifest: &mut RunManifest) -> Result<EstimatorConfig> {
    let mut config = match path {
        None => EstimatorConfig::default(),
        Some(p) => {
            manifest.digest(p)?;
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?
        }
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

fn load_panel(args: &PanelArgs, manifest: &mut RunManifest) -> Result<PanelDataset> {
    manifest.digest(&args.data)?;
    read_panel_path(
        &args.data,
        &PanelSpec {
            treated: args.treated.clone(),
            cutoff: args.cutoff.clone(),
            period_order: args.period_order.clone(),
        },
    )
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = std::fs::File::create(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot write {}: {e}", path.display())))?;
    let mut w = std::io::BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn run_estimate(args: &EstimateArgs) -> Result<()> {
    let mut manifest = RunManifest::start("estimate", None);
    let config = load_config(args.config.as_deref(), args.seed, &mut manifest)?;
    let panel = load_panel(&args.panel, &mut manifest)?;
    manifest.seed = Some(config.seed);
    manifest.config = serde_json::json!({ "estimator": config, "method": args.method });

    let (fit, wgan) = if args.method == Method::Wgan {
        let report = estimate(&panel, &config)?;
        let fit = MethodFit {
            method: Method::Wgan,
            per_period_weights: report.per_period_weights.clone(),
            aggregated: report.aggregated.clone(),
        };
        (fit, Some(report))
    } else {
        (fit_method(&panel, args.method, &config)?, None)
    };
    let counterfactual_means = (0..panel.periods().len())
        .map(|t| synthesize_counterfactual(&panel, &fit.aggregated, t).map(|m| m.mean()))
        .collect::<Result<_>>()?;
    manifest.finished_unix = now();
    let output = EstimateOutput {
        schema_version: SCHEMA_VERSION,
        manifest,
        method: args.method,
        donors: panel.units()[1..].to_vec(),
        periods: panel.periods().to_vec(),
        aggregated: fit.aggregated.values().to_vec(),
        per_period_weights: fit.per_period_weights.iter().map(|w| w.values().to_vec()).collect(),
        counterfactual_means,
        wgan,
    };
    write_json(&args.out, &output)
}

fn run_placebo(args: &PlaceboArgs) -> Result<()> {
    let mut manifest = RunManifest::start("placebo", None);
    let config = load_config(args.config.as_deref(), args.seed, &mut manifest)?;
    let panel = load_panel(&args.panel, &mut manifest)?;
    let jobs = args.jobs.unwrap_or_else(crate::exec::default_jobs);
    manifest.seed = Some(config.seed);
    manifest.config = serde_json::json!({
        "estimator": config,
        "method": args.method,
        "exclude_treated": args.exclude_treated,
    });
    let result = placebo_with_method(
        &panel,
        args.method,
        &config,
        PlaceboOptions {
            exclude_treated_from_donors: args.exclude_treated,
            jobs,
        },
    )?;
    manifest.finished_unix = now();
    write_json(
        &args.out,
        &PlaceboOutput {
            schema_version: SCHEMA_VERSION,
            manifest,
            method: args.method,
            exclude_treated: args.exclude_treated,
            result,
        },
    )
}

fn run_simulate(args: &SimulateArgs) -> Result<()> {
    let mut manifest = RunManifest::start("simulate", Some(args.seed));
    let config = load_config(args.config.as_deref(), None, &mut manifest)?;
    let mut base = match &args.design {
        None => DgpSpec::new(args.scenario),
        Some(p) => {
            manifest.digest(p)?;
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?
        }
    };
    base.scenario = args.scenario;
    base.seed = args.seed;
    if let Some(n) = args.n_micro {
        base.n_micro = n;
    }
    if let Some(t0) = args.t0 {
        base.t0 = t0;
    }
    if base.scenario == Scenario::Contamination && args.epsilon.is_none() && args.design.is_none() {
        base.epsilon = 0.04;
    }
    if base.scenario == Scenario::SupportGap && args.gamma.is_none() && args.design.is_none() {
        base.gamma = 0.9;
    }
    let eps = args.epsilon.clone().unwrap_or_else(|| vec![base.epsilon]);
    let gammas = args.gamma.clone().unwrap_or_else(|| vec![base.gamma]);
    let methods = args.methods.clone().unwrap_or_else(|| args.scenario.default_methods());
    let jobs = args.jobs.unwrap_or_else(crate::exec::default_jobs);
    if args.nsim == 0 {
        return Err(Error::InvalidConfig("--nsim must be >= 1".into()));
    }
    manifest.config = serde_json::json!({
        "estimator": config,
        "design": base,
        "epsilon": eps,
        "gamma": gammas,
        "methods": methods,
        "nsim": args.nsim,
        "jobs": jobs,
    });

    let mut sweep = Vec::new();
    for &e in &eps {
        for &g in &gammas {
            let spec = DgpSpec {
                epsilon: e,
                gamma: g,
                ..base.clone()
            };
            spec.validate()?;
            let mut report = run_monte_carlo(&spec, &methods, args.nsim, &config, jobs)?;
            manifest.timing.extend(std::mem::take(&mut report.timing));
            sweep.push(SweepPoint {
                epsilon: e,
                gamma: g,
                report,
            });
        }
    }
    manifest.finished_unix = now();
    let output = SimulateOutput {
        schema_version: SCHEMA_VERSION,
        manifest,
        scenario: args.scenario,
        sweep,
    };
    if let Some(dir) = &args.csv {
        create_dir(dir)?;
        for p in &output.sweep {
            let name = format!("table_{}_eps{}_gamma{}.csv", args.scenario.name(), p.epsilon, p.gamma);
            let file = std::fs::File::create(dir.join(name))?;
            write_period_table(std::io::BufWriter::new(file), &p.report)?;
        }
    }
    if let Some(dir) = &args.plot_data {
        emit_plot_data(&output, dir)?;
    }
    write_json(&args.out, &output)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::InvalidConfig(format!("cannot create directory {}: {e}", dir.display())))
}

fn csv_writer(dir: &Path, name: &str) -> Result<csv::Writer<std::io::BufWriter<std::fs::File>>> {
    let path = dir.join(name);
    let file = std::fs::File::create(&path)
        .map_err(|e| Error::InvalidConfig(format!("cannot write {}: {e}", path.display())))?;
    Ok(csv::Writer::from_writer(std::io::BufWriter::new(file)))
}

/// Writes tidy plot series for a simulation report and returns the file
/// names written:
///
/// * `rmse_vs_eps.csv`: `x,y,series` = epsilon, weight RMSE, method
/// * `variance_vs_gamma.csv`: gamma, mean weight variance, method
/// * `weights_vs_gamma.csv`: `x,y,series,donor` = gamma, mean weight, method, donor index
/// * `pmf_overlay.csv`: `value,target_mass,wgan_mass,w2q_mass`
/// * `scatter.csv`: `x,y,series` sample points
pub fn emit_plot_data(output: &SimulateOutput, dir: &Path) -> Result<Vec<String>> {
    create_dir(dir)?;
    let mut written = Vec::new();
    let fmt = |v: f64| format!("{v:?}");

    if output.sweep.iter().any(|p| p.report.lambda_true.is_some()) {
        let mut w = csv_writer(dir, "rmse_vs_eps.csv")?;
        w.write_record(["x", "y", "series"])?;
        for p in &output.sweep {
            for s in &p.report.methods {
                if let Some(r) = s.rmse {
                    w.write_record([fmt(p.epsilon), fmt(r.rmse), s.method.name().into()])?;
                }
            }
        }
        w.flush()?;
        written.push("rmse_vs_eps.csv".to_string());
    }

    let mut var = csv_writer(dir, "variance_vs_gamma.csv")?;
    var.write_record(["x", "y", "series"])?;
    let mut wts = csv_writer(dir, "weights_vs_gamma.csv")?;
    wts.write_record(["x", "y", "series", "donor"])?;
    for p in &output.sweep {
        for s in &p.report.methods {
            if s.successes == 0 {
                continue;
            }
            var.write_record([fmt(p.gamma), fmt(s.average_variance), s.method.name().into()])?;
            for (j, m) in s.aggregate_row().mean.iter().enumerate() {
                wts.write_record([fmt(p.gamma), fmt(*m), s.method.name().into(), (j + 1).to_string()])?;
            }
        }
    }
    var.flush()?;
    wts.flush()?;
    written.push("variance_vs_gamma.csv".to_string());
    written.push("weights_vs_gamma.csv".to_string());

    if let Some(pmf) = output.sweep.iter().find_map(|p| p.report.pmf.as_ref()) {
        let mut w = csv_writer(dir, "pmf_overlay.csv")?;
        w.write_record(["value", "target_mass", "wgan_mass", "w2q_mass"])?;
        let opt = |v: Option<f64>| v.map(fmt).unwrap_or_default();
        for r in pmf {
            w.write_record([r.value.to_string(), fmt(r.target_mass), opt(r.wgan_mass), opt(r.w2q_mass)])?;
        }
        w.flush()?;
        written.push("pmf_overlay.csv".to_string());
    }

    if let Some(scatter) = output.sweep.iter().find_map(|p| p.report.scatter.as_ref()) {
        let mut w = csv_writer(dir, "scatter.csv")?;
        w.write_record(["x", "y", "series"])?;
        for r in scatter {
            w.write_record([fmt(r.x), fmt(r.y), r.series.clone()])?;
        }
        w.flush()?;
        written.push("scatter.csv".to_string());
    }
    Ok(written)
}
