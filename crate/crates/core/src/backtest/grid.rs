use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::run::{run_backtest, BacktestOptions, BacktestReport};
use super::{BacktestError, Result, WindowPlan};
use crate::market_data::PricePanel;
use crate::models::ModelSpec;
use crate::par::Execution;
use crate::relation_graph::GraphConfig;

/// Axes of the hyperparameter grid; other settings come from a template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpace {
    pub learning_rates: Vec<f64>,
    pub lookbacks: Vec<usize>,
    pub epochs: Vec<usize>,
}

impl Default for GridSpace {
    fn default() -> Self {
        Self {
            learning_rates: vec![0.001, 0.005, 0.01],
            lookbacks: vec![11, 21],
            epochs: vec![10, 20, 30, 40, 50],
        }
    }
}

impl GridSpace {
    /// Every cell as a spec, in `(lr, lookback, epochs)` lexicographic order.
    pub fn cells(&self, template: &ModelSpec) -> Result<Vec<ModelSpec>> {
        for (field, empty) in [
            ("learning_rates", self.learning_rates.is_empty()),
            ("lookbacks", self.lookbacks.is_empty()),
            ("epochs", self.epochs.is_empty()),
        ] {
            if empty {
                return Err(BacktestError::InvalidConfig {
                    field,
                    reason: "grid axis is empty".into(),
                });
            }
        }
        let mut out = Vec::new();
        for &lr in &self.learning_rates {
            for &lookback in &self.lookbacks {
                for &epochs in &self.epochs {
                    let mut spec = template.clone();
                    spec.train.learning_rate = lr;
                    spec.train.lookback = lookback;
                    spec.train.epochs = epochs;
                    spec.validate()?;
                    out.push(spec);
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub learning_rate: f64,
    pub lookback: usize,
    pub epochs: usize,
    /// `None` when the cell failed outright.
    pub mean_mse: Option<f64>,
    pub failed_steps: usize,
    pub error: Option<String>,
    /// 1-based; failed cells rank after every successful one.
    pub rank: usize,
}

impl GridCell {
    pub fn failed(&self) -> bool {
        self.mean_mse.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridReport {
    /// Cells in rank order.
    pub cells: Vec<GridCell>,
}

impl GridReport {
    pub fn best(&self) -> Option<&GridCell> {
        self.cells.first().filter(|c| !c.failed())
    }

    /// `lr,lookback,epochs,mean_mse,rank`; failed cells have an empty
    /// `mean_mse` and `failed` as their rank.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lr,lookback,epochs,mean_mse,rank\n");
        for c in &self.cells {
            match c.mean_mse {
                Some(m) => writeln!(out, "{},{},{},{m},{}", c.learning_rate, c.lookback, c.epochs, c.rank),
                None => writeln!(out, "{},{},{},,failed", c.learning_rate, c.lookback, c.epochs),
            }
            .expect("write to String");
        }
        out
    }
}

fn rank_order(a: &GridCell, b: &GridCell) -> Ordering {
    let by_mse = match (a.mean_mse, b.mean_mse) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    };
    by_mse
        .then(a.learning_rate.total_cmp(&b.learning_rate))
        .then(a.lookback.cmp(&b.lookback))
        .then(a.epochs.cmp(&b.epochs))
}

/// Backtests every cell of `space` and ranks them by mean MSE, ties broken
/// by learning rate, then lookback, then epochs (all ascending). Every cell
/// uses the same base seed.
pub fn grid_search(
    space: &GridSpace,
    template: &ModelSpec,
    panel: &PricePanel,
    graph: &GraphConfig,
    plan: &WindowPlan,
    opts: &BacktestOptions,
    exec: Execution,
) -> Result<GridReport> {
    let specs = space.cells(template)?;
    let mut cells: Vec<GridCell> = exec.map(specs, |spec| {
        let result = run_backtest(&spec, panel, graph, plan, opts);
        let (mean_mse, failed_steps, error) = match result {
            Ok(r) => {
                let err = r.summary.is_none().then(|| "every step failed".to_owned());
                (r.summary, r.failed_steps, err)
            }
            Err(e) => (None, plan.len(), Some(e.to_string())),
        };
        GridCell {
            learning_rate: spec.train.learning_rate,
            lookback: spec.train.lookback,
            epochs: spec.train.epochs,
            mean_mse,
            failed_steps,
            error,
            rank: 0,
        }
    });
    rank_cells(&mut cells);
    Ok(GridReport { cells })
}

/// Sorts by mean MSE (failed cells last), then learning rate, lookback and
/// epochs, and numbers the cells from 1.
pub fn rank_cells(cells: &mut [GridCell]) {
    cells.sort_by(rank_order);
    for (k, c) in cells.iter_mut().enumerate() {
        c.rank = k + 1;
    }
}

/// Backtests of several specs under one plan, scaler policy and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub reports: Vec<BacktestReport>,
}

impl Comparison {
    /// `(model, mean MSE)` in input order.
    pub fn table(&self) -> Vec<(String, Option<f64>)> {
        self.reports
            .iter()
            .map(|r| (r.model().to_owned(), r.summary))
            .collect()
    }

    /// `model,mean_mse`; a model whose every step failed has an empty value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,mean_mse\n");
        for (model, m) in self.table() {
            match m {
                Some(m) => writeln!(out, "{model},{m}"),
                None => writeln!(out, "{model},"),
            }
            .expect("write to String");
        }
        out
    }

    /// `ticker,model,mse` for every model.
    pub fn per_stock_csv(&self) -> String {
        let mut out = String::from("ticker,model,mse\n");
        for r in &self.reports {
            out.push_str(&r.per_stock_rows());
        }
        out
    }
}

pub fn compare_models(
    specs: &[ModelSpec],
    panel: &PricePanel,
    graph: &GraphConfig,
    plan: &WindowPlan,
    opts: &BacktestOptions,
    exec: Execution,
) -> Result<Comparison> {
    if specs.len() < 2 {
        return Err(BacktestError::InvalidConfig {
            field: "models",
            reason: format!("comparison needs at least two specs, got {}", specs.len()),
        });
    }
    for spec in specs {
        spec.validate()?;
    }
    let reports = exec
        .map(specs.to_vec(), |spec| run_backtest(&spec, panel, graph, plan, opts))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(Comparison { reports })
}
