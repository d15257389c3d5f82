//! Run configuration: one TOML file, every field defaulted.
//!
//! Values are layered: built-in defaults, then the file, then `key=value`
//! overrides addressed by dotted path (`model.train.learning_rate=0.01`).
//! The resolved result is what every output manifest records.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backtest::{BacktestOptions, GridSpace, PlanConfig};
use crate::market_data::DateInterval;
use crate::models::{ModelKind, ModelSpec};
use crate::par::Execution;
use crate::relation_graph::GraphConfig;

/// The shipped defaults, identical to `RunConfig::default()`.
pub const DEFAULT_TOML: &str = include_str!("../../../config/default.toml");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("bad override `{0}`: expected key=value")]
    Override(String),
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
}

pub type Result<T, E = ConfigError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory holding one `<TICKER>.csv` per ticker.
    pub dir: PathBuf,
    pub tickers: Vec<String>,
    /// Inclusive bounds on the panel calendar; absent means unbounded.
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data"),
            tickers: ["AAPL", "MSFT", "CMCSA", "COST", "QCOM", "ADBE", "SBUX", "INTU", "AMD", "INTC"]
                .map(String::from)
                .to_vec(),
            start: None,
            end: None,
        }
    }
}

impl DataConfig {
    pub fn range(&self) -> Option<DateInterval> {
        let start = self.start.unwrap_or(NaiveDate::MIN);
        let end = self.end.unwrap_or(NaiveDate::MAX);
        (self.start.is_some() || self.end.is_some()).then(|| DateInterval::new(start, end))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestConfig {
    /// Also score predictions mapped back to prices.
    pub currency_errors: bool,
    /// Start each step's training from the previous step's weights.
    pub warm_start: bool,
    pub execution: Execution,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            currency_errors: false,
            warm_start: false,
            execution: Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Base seed for every random stream of a run.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub graph: GraphConfig,
    /// The single spec, and the template for grid search and comparison.
    pub model: ModelSpec,
    /// Architectures for `backtest`; two or more run a comparison sharing
    /// `model`'s widths and training settings, one runs `model` alone.
    pub compare: Vec<ModelKind>,
    pub plan: PlanConfig,
    pub grid: GridSpace,
    pub backtest: BacktestConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            graph: GraphConfig::default(),
            model: ModelSpec::new(ModelKind::Hybrid),
            compare: vec![
                ModelKind::Hybrid,
                ModelKind::Lstm,
                ModelKind::Linreg,
                ModelKind::Dense,
                ModelKind::Cnn1d,
            ],
            plan: PlanConfig::default(),
            grid: GridSpace::default(),
            backtest: BacktestConfig::default(),
        }
    }
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

impl RunConfig {
    /// Parses TOML text, applies `overrides` and validates.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let file: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        let mut value: toml::Table = toml::from_str(&Self::default().to_toml()).expect("defaults parse");
        merge(&mut value, file);
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(value)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Syntax(e.message().to_owned()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The file at `path`, or the shipped defaults when `path` is `None`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Io {
                    path: p.to_owned(),
                    reason: e.to_string(),
                })?;
                Self::from_toml(&text, overrides)
            }
            None => Self::from_toml(DEFAULT_TOML, overrides),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.tickers.len() < 2 {
            return Err(invalid("data.tickers", "need at least two tickers"));
        }
        for (k, t) in d.tickers.iter().enumerate() {
            if t.is_empty() || t.contains(['/', '\\', ',']) {
                return Err(invalid("data.tickers", format!("bad ticker {t:?}")));
            }
            if d.tickers[..k].contains(t) {
                return Err(invalid("data.tickers", format!("{t} listed twice")));
            }
        }
        if let (Some(s), Some(e)) = (d.start, d.end) {
            if s > e {
                return Err(invalid("data.start", format!("{s} is after data.end {e}")));
            }
        }
        self.graph.validate().map_err(|e| match e {
            crate::relation_graph::GraphError::InvalidThreshold { name, value } => {
                invalid(format!("graph.{name}"), format!("out of range: {value}"))
            }
            other => invalid("graph", other.to_string()),
        })?;
        validate_spec("model", &self.model)?;
        for (k, kind) in self.compare.iter().enumerate() {
            if self.compare[..k].contains(kind) {
                return Err(invalid("compare", format!("{kind} listed twice")));
            }
            validate_spec("compare", &self.spec_for(*kind))?;
        }
        if self.plan.base_train_days == 0 {
            return Err(invalid("plan.base_train_days", "must be positive"));
        }
        if self.plan.test_days == 0 {
            return Err(invalid("plan.test_days", "must be positive"));
        }
        self.grid.cells(&self.model).map_err(|e| match e {
            crate::backtest::BacktestError::InvalidConfig { field, reason } => {
                invalid(format!("grid.{field}"), reason)
            }
            crate::backtest::BacktestError::Model(crate::models::ModelError::InvalidConfig {
                field,
                reason,
            }) => invalid(format!("grid: model.train.{field}"), reason),
            other => invalid("grid", other.to_string()),
        })?;
        Ok(())
    }

    /// `model` with its architecture swapped for `kind`.
    pub fn spec_for(&self, kind: ModelKind) -> ModelSpec {
        ModelSpec {
            kind,
            ..self.resolved_model()
        }
    }

    /// `model` with the run seed.
    pub fn resolved_model(&self) -> ModelSpec {
        let mut m = self.model.clone();
        m.train.seed = self.seed;
        m
    }

    /// Specs `backtest` runs: the comparison list, or `model` alone.
    pub fn backtest_specs(&self) -> Vec<ModelSpec> {
        if self.compare.len() >= 2 {
            self.compare.iter().map(|&k| self.spec_for(k)).collect()
        } else {
            vec![self.resolved_model()]
        }
    }

    pub fn backtest_options(&self) -> BacktestOptions {
        BacktestOptions {
            seed: self.seed,
            currency_errors: self.backtest.currency_errors,
            warm_start: self.backtest.warm_start,
        }
    }
}

fn validate_spec(prefix: &str, spec: &ModelSpec) -> Result<()> {
    spec.validate().map_err(|e| match e {
        crate::models::ModelError::InvalidConfig { field, reason } => {
            let section = if ArchFields::contains(field) { "arch" } else { "train" };
            invalid(format!("{prefix}.{section}.{field}"), format!("{reason} ({})", spec.kind))
        }
        other => invalid(prefix, other.to_string()),
    })
}

struct ArchFields;

impl ArchFields {
    const NAMES: [&'static str; 7] = [
        "lstm_hidden",
        "lstm_layers",
        "gcn_hidden",
        "gcn_out",
        "fusion_hidden",
        "dense_hidden",
        "cnn_channels",
    ];

    fn contains(field: &str) -> bool {
        Self::NAMES.contains(&field)
    }
}

/// Recursively overlays `top` on `base`; non-table values replace.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Sets a dotted key. The value is read as a TOML value when it parses as
/// one and as a bare string otherwise, so `data.dir=/tmp/x` works unquoted.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(assignment.to_owned()))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(ConfigError::Override(assignment.to_owned()));
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .map(|v| match v {
            toml::Value::Datetime(d) => toml::Value::String(d.to_string()),
            other => other,
        })
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut table = root;
    for p in parts {
        let entry = table
            .entry(p.to_owned())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| invalid(key, format!("`{p}` is not a table")))?;
    }
    table.insert(last.to_owned(), value);
    Ok(())
}
