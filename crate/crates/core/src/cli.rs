//! Command-line front end.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::backtest::{
    compare_models, expanding_schedule, grid_search, run_backtest, BacktestError, BacktestReport,
};
use crate::config::{ConfigError, RunConfig};
use crate::market_data::{daily_returns, DataError, PricePanel};
use crate::models::ModelError;
use crate::relation_graph::{build_relation_graph, GraphError};
use crate::report::{
    ma_prices_csv, manifest, panel_from_series, panel_summary_csv, read_series, Outputs,
};
use crate::synthetic::{lead_lag_panel, ohlcv_csv, to_series, SyntheticConfig};

pub const EXIT_OK: u8 = 0;
pub const EXIT_OTHER: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_TRAINING: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "hybridcast", version, about = "Hybrid LSTM + graph-convolution stock forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and align the price files; write panel summary and moving averages.
    Ingest(Common),
    /// Build the relation graph over the panel; write edges and rules.
    Graph(Common),
    /// Walk-forward backtest of one model or a comparison.
    Backtest(Common),
    /// Backtest every cell of the hyperparameter grid and rank them.
    Gridsearch(Common),
    /// Write a synthetic lead-lag market as price files plus a config for it.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Config file; the shipped defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Base seed (overrides `seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Price directory (overrides `data.dir`).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Any field by dotted path, e.g. `--set model.train.epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl Common {
    /// File, then `--set`, then the dedicated flags.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let quote = |p: &Path| toml::Value::String(p.display().to_string()).to_string();
        let mut overrides = self.set.clone();
        if let Some(out) = &self.out {
            overrides.push(format!("out_dir={}", quote(out)));
        }
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        if let Some(dir) = &self.data_dir {
            overrides.push(format!("data.dir={}", quote(dir)));
        }
        Ok(RunConfig::load(self.config.as_deref(), &overrides)?)
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory for the price files and `synth.toml`.
    #[arg(long, default_value = "data/synthetic")]
    pub dir: PathBuf,
    #[arg(long, default_value_t = 554)]
    pub days: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Backtest(#[from] BacktestError),
    #[error("every backtest step failed for: {0}")]
    AllStepsFailed(String),
    #[error("cannot write {path}: {reason}")]
    Output { path: PathBuf, reason: String },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) | CliError::Graph(_) => EXIT_DATA,
            CliError::Backtest(e) => match e {
                BacktestError::InvalidConfig { .. } => EXIT_CONFIG,
                BacktestError::Model(ModelError::InvalidConfig { .. }) => EXIT_CONFIG,
                BacktestError::InsufficientHistory { .. }
                | BacktestError::PlanMismatch(_)
                | BacktestError::Data(_)
                | BacktestError::Graph(_) => EXIT_DATA,
                BacktestError::Model(_) | BacktestError::LengthMismatch { .. } => EXIT_TRAINING,
            },
            CliError::AllStepsFailed(_) => EXIT_TRAINING,
            CliError::Output { .. } => EXIT_OTHER,
        }
    }
}

/// What a command produced.
#[derive(Debug)]
pub struct Finished {
    pub out_dir: PathBuf,
    pub outputs: Outputs,
    /// Short human-readable summary for stdout.
    pub summary: String,
    /// Set when outputs were written but the run still counts as failed.
    pub failure: Option<CliError>,
}

fn load(cfg: &RunConfig) -> Result<(PricePanel, BTreeMap<String, String>), CliError> {
    let series = read_series(&cfg.data)?;
    let panel = panel_from_series(&series, &cfg.data)?;
    let facts = panel_facts(&panel);
    Ok((panel, facts))
}

fn panel_facts(panel: &PricePanel) -> BTreeMap<String, String> {
    let mut facts = BTreeMap::new();
    facts.insert("panel_days".into(), panel.n_days().to_string());
    if let (Some(a), Some(b)) = (panel.dates.first(), panel.dates.last()) {
        facts.insert("panel_first".into(), a.to_string());
        facts.insert("panel_last".into(), b.to_string());
    }
    facts
}

pub fn cmd_ingest(cfg: &RunConfig) -> Result<Finished, CliError> {
    let series = read_series(&cfg.data)?;
    let panel = panel_from_series(&series, &cfg.data)?;
    let mut outputs = Outputs::new();
    outputs.add("panel_summary.csv", panel_summary_csv(&series, &panel));
    outputs.add("ma_prices.csv", ma_prices_csv(&panel));
    outputs.add("manifest.toml", manifest("ingest", cfg, &panel_facts(&panel)));
    let summary = format!(
        "{} tickers, {} aligned days",
        panel.n_tickers(),
        panel.n_days()
    );
    Ok(finished(cfg, outputs, summary))
}

/// The graph over every return of the (date-filtered) panel.
pub fn cmd_graph(cfg: &RunConfig) -> Result<Finished, CliError> {
    let (panel, facts) = load(cfg)?;
    let returns = daily_returns(&panel)?;
    let build = build_relation_graph(&returns, 0..returns.n_days(), &cfg.graph)?;
    let mut outputs = Outputs::new();
    outputs.add("graph_edges.csv", build.graph.edge_list_csv());
    outputs.add("assoc_rules.csv", build.rules_csv());
    outputs.add("manifest.toml", manifest("graph", cfg, &facts));
    let summary = format!(
        "{} edges ({} correlation pairs, {} rules)",
        build.graph.edges.len(),
        build.corr_edges.len(),
        build.rules.rules.len()
    );
    Ok(finished(cfg, outputs, summary))
}

pub fn cmd_backtest(cfg: &RunConfig) -> Result<Finished, CliError> {
    let (panel, facts) = load(cfg)?;
    let plan = expanding_schedule(&panel.dates, &cfg.plan)?;
    let specs = cfg.backtest_specs();
    let opts = cfg.backtest_options();
    let reports: Vec<BacktestReport> = if specs.len() == 1 {
        vec![run_backtest(&specs[0], &panel, &cfg.graph, &plan, &opts)?]
    } else {
        compare_models(&specs, &panel, &cfg.graph, &plan, &opts, cfg.backtest.execution)?.reports
    };
    let outputs = backtest_outputs(cfg, &reports, &facts);
    let mut summary = String::new();
    for r in &reports {
        let m = r.summary.map(|m| format!("{m:.6}")).unwrap_or_else(|| "failed".into());
        writeln!(summary, "{:<8} mean MSE {m} ({} failed steps)", r.model(), r.failed_steps)
            .expect("write to String");
    }
    let failed: Vec<&str> = reports.iter().filter(|r| r.summary.is_none()).map(|r| r.model()).collect();
    let mut done = finished(cfg, outputs, summary.trim_end().to_owned());
    if !failed.is_empty() {
        done.failure = Some(CliError::AllStepsFailed(failed.join(", ")));
    }
    Ok(done)
}

/// `per_day_mse.csv` holds the first model; with several models each also
/// gets `per_day_mse_<model>.csv`.
pub fn backtest_outputs(cfg: &RunConfig, reports: &[BacktestReport], facts: &BTreeMap<String, String>) -> Outputs {
    let mut outputs = Outputs::new();
    outputs.add("per_day_mse.csv", reports[0].per_day_csv());
    if reports.len() > 1 {
        for r in reports {
            outputs.add(format!("per_day_mse_{}.csv", r.model()), r.per_day_csv());
        }
    }
    let mut per_stock = String::from("ticker,model,mse\n");
    let mut comparison = String::from("model,mean_mse\n");
    let mut currency = String::from("model,mean_mse\n");
    for r in reports {
        per_stock.push_str(&r.per_stock_rows());
        let opt = |v: Option<f64>| v.map(|m| m.to_string()).unwrap_or_default();
        writeln!(comparison, "{},{}", r.model(), opt(r.summary)).expect("write to String");
        writeln!(currency, "{},{}", r.model(), opt(r.currency_summary)).expect("write to String");
    }
    outputs.add("per_stock_mse.csv", per_stock);
    outputs.add("model_comparison.csv", comparison);
    if cfg.backtest.currency_errors {
        outputs.add("model_comparison_currency.csv", currency);
    }
    outputs.add("manifest.toml", manifest("backtest", cfg, facts));
    outputs
}

pub fn cmd_gridsearch(cfg: &RunConfig) -> Result<Finished, CliError> {
    let (panel, facts) = load(cfg)?;
    let plan = expanding_schedule(&panel.dates, &cfg.plan)?;
    let report = grid_search(
        &cfg.grid,
        &cfg.resolved_model(),
        &panel,
        &cfg.graph,
        &plan,
        &cfg.backtest_options(),
        cfg.backtest.execution,
    )?;
    let mut outputs = Outputs::new();
    outputs.add("grid_results.csv", report.to_csv());
    outputs.add("manifest.toml", manifest("gridsearch", cfg, &facts));
    let summary = match report.best() {
        Some(b) => format!(
            "{} cells; best lr {} lookback {} epochs {} mean MSE {:.6}",
            report.cells.len(),
            b.learning_rate,
            b.lookback,
            b.epochs,
            b.mean_mse.unwrap_or(f64::NAN)
        ),
        None => format!("{} cells; all failed", report.cells.len()),
    };
    let mut done = finished(cfg, outputs, summary);
    if report.best().is_none() {
        done.failure = Some(CliError::AllStepsFailed("every grid cell".into()));
    }
    Ok(done)
}

/// Price files for a synthetic market plus `synth.toml`, a config that
/// points at them.
pub fn cmd_synth(args: &SynthArgs) -> Result<Finished, CliError> {
    let scfg = SyntheticConfig {
        days: args.days,
        ..Default::default()
    };
    if args.days < 2 {
        return Err(ConfigError::Invalid {
            field: "days".into(),
            reason: "need at least two days".into(),
        }
        .into());
    }
    let panel = lead_lag_panel(&scfg, args.seed);
    let mut outputs = Outputs::new();
    for s in to_series(&panel) {
        outputs.add(format!("{}.csv", s.ticker), ohlcv_csv(&s));
    }
    let mut cfg = RunConfig::default();
    cfg.data.dir = args.dir.clone();
    cfg.data.tickers = scfg.tickers();
    cfg.seed = args.seed;
    outputs.add("synth.toml", cfg.to_toml());
    let summary = format!(
        "{} assets x {} days; leaders {:?}; config {}",
        scfg.n_assets(),
        args.days,
        scfg.leaders().iter().map(|&i| &panel.tickers[i]).collect::<Vec<_>>(),
        args.dir.join("synth.toml").display()
    );
    Ok(Finished {
        out_dir: args.dir.clone(),
        outputs,
        summary,
        failure: None,
    })
}

fn finished(cfg: &RunConfig, outputs: Outputs, summary: String) -> Finished {
    Finished {
        out_dir: cfg.out_dir.clone(),
        outputs,
        summary,
        failure: None,
    }
}

pub fn execute(command: &Command) -> Result<Finished, CliError> {
    match command {
        Command::Ingest(c) => cmd_ingest(&c.resolve()?),
        Command::Graph(c) => cmd_graph(&c.resolve()?),
        Command::Backtest(c) => cmd_backtest(&c.resolve()?),
        Command::Gridsearch(c) => cmd_gridsearch(&c.resolve()?),
        Command::Synth(a) => cmd_synth(a),
    }
}

/// Runs a command, writes its outputs and reports; returns the exit code.
pub fn run(cli: &Cli) -> u8 {
    let done = match execute(&cli.command) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    if let Err(e) = done.outputs.write_to(&done.out_dir) {
        let e = CliError::Output {
            path: done.out_dir.clone(),
            reason: e.to_string(),
        };
        eprintln!("error: {e}");
        return e.exit_code();
    }
    println!("{}", done.summary);
    println!("wrote {}", done.out_dir.display());
    match done.failure {
        Some(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
        None => EXIT_OK,
    }
}
