use std::fmt::Write as _;

use chrono::NaiveDate;
use ndarray::{s, Array2, ArrayView2};
use serde::Serialize;

use super::{mse, BacktestError, PlanConfig, PlanStep, Result, WindowPlan};
use crate::market_data::{daily_returns, fit_scaler, make_windows, PricePanel, Scaler, WindowDataset};
use crate::models::{train_from, window_inputs, ModelError, ModelSpec, TrainedModel};
use crate::relation_graph::{build_relation_graph, GraphConfig, NormAdj};
use crate::rng::derive_seed;

const STEP_STREAM: u64 = 1 << 32;

/// Seed for step `step` of a backtest with base seed `base`.
pub fn step_seed(base: u64, step: usize) -> u64 {
    derive_seed(base, STEP_STREAM + step as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BacktestOptions {
    pub seed: u64,
    /// Also score predictions in price units.
    pub currency_errors: bool,
    /// Initialise each step from the previous step's trained model.
    pub warm_start: bool,
}

impl Default for BacktestOptions {
    fn default() -> Self {
        Self {
            seed: 42,
            currency_errors: false,
            warm_start: false,
        }
    }
}

/// Everything a forecaster may see at one step. Nothing here depends on the
/// test day or later.
pub struct StepContext<'a> {
    pub step: &'a PlanStep,
    pub seed: u64,
    pub scaler: &'a Scaler,
    pub train: &'a WindowDataset,
    pub adjacency: Option<&'a NormAdj>,
    /// `L x N` scaled closes of the `L` days before the test day.
    pub test_window: ArrayView2<'a, f64>,
    /// The previous step's model when warm-starting.
    pub previous: Option<&'a TrainedModel>,
}

pub struct StepForecast {
    /// Scaled next-day closes, one per ticker.
    pub predictions: Vec<f64>,
    pub epochs: usize,
    pub model: Option<TrainedModel>,
}

/// Anything that turns one step's training data into a one-day forecast.
pub trait Forecaster: Sync {
    fn name(&self) -> String;
    fn lookback(&self) -> usize;
    fn uses_graph(&self) -> bool;
    fn spec(&self) -> Option<&ModelSpec> {
        None
    }
    fn forecast(&self, ctx: &StepContext<'_>) -> std::result::Result<StepForecast, ModelError>;
}

impl Forecaster for ModelSpec {
    fn name(&self) -> String {
        self.kind.name().to_owned()
    }

    fn lookback(&self) -> usize {
        self.train.lookback
    }

    fn uses_graph(&self) -> bool {
        self.kind.uses_graph()
    }

    fn spec(&self) -> Option<&ModelSpec> {
        Some(self)
    }

    fn forecast(&self, ctx: &StepContext<'_>) -> std::result::Result<StepForecast, ModelError> {
        let mut spec = self.clone();
        spec.train.seed = ctx.seed;
        let out = train_from(&spec, ctx.train, ctx.adjacency, ctx.previous)?;
        let x = window_inputs(ctx.test_window);
        let y = out.model.predict(x.view(), ctx.adjacency)?;
        Ok(StepForecast {
            predictions: y.column(0).to_vec(),
            epochs: out.history.len(),
            model: Some(out.model),
        })
    }
}

/// Outcome of one walk-forward step.
#[derive(Debug, Clone, PartialEq)]
pub struct DayRecord {
    pub step: usize,
    pub date: NaiveDate,
    pub train_days: usize,
    pub train_end: NaiveDate,
    /// Every training window's target day precedes the test day.
    pub leakage_free: bool,
    /// `None` when the step failed.
    pub mse: Option<f64>,
    pub squared_errors: Vec<f64>,
    pub predictions: Vec<f64>,
    pub actuals: Vec<f64>,
    pub currency_mse: Option<f64>,
    pub epochs: usize,
    pub error: Option<String>,
}

/// Configuration echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportConfig {
    pub model: String,
    pub spec: Option<ModelSpec>,
    pub graph: GraphConfig,
    pub plan: PlanConfig,
    pub options: BacktestOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestReport {
    pub tickers: Vec<String>,
    pub per_day: Vec<DayRecord>,
    /// Mean squared error per ticker over the successful steps; empty when
    /// every step failed.
    pub per_stock: Vec<f64>,
    /// Mean of the successful steps' MSEs.
    pub summary: Option<f64>,
    pub currency_summary: Option<f64>,
    pub failed_steps: usize,
    pub config: ReportConfig,
}

impl BacktestReport {
    pub fn model(&self) -> &str {
        &self.config.model
    }

    /// `date,mse`; failed steps leave `mse` empty.
    pub fn per_day_csv(&self) -> String {
        let mut out = String::from("date,mse\n");
        for d in &self.per_day {
            match d.mse {
                Some(m) => writeln!(out, "{},{m}", d.date),
                None => writeln!(out, "{},", d.date),
            }
            .expect("write to String");
        }
        out
    }

    /// `ticker,model,mse` rows without a header.
    pub fn per_stock_rows(&self) -> String {
        let mut out = String::new();
        for (t, m) in self.tickers.iter().zip(&self.per_stock) {
            writeln!(out, "{t},{},{m}", self.model()).expect("write to String");
        }
        out
    }
}

struct StepResult {
    predictions: Vec<f64>,
    actuals: Vec<f64>,
    currency_mse: Option<f64>,
    epochs: usize,
    leakage_free: bool,
    model: Option<TrainedModel>,
}

fn run_step(
    f: &dyn Forecaster,
    panel: &PricePanel,
    graph: &GraphConfig,
    step: &PlanStep,
    opts: &BacktestOptions,
    previous: Option<&TrainedModel>,
) -> Result<StepResult> {
    let l = f.lookback();
    let train_panel = panel.slice(step.train.clone());
    let scaler = fit_scaler(&train_panel, step.train_interval)?;
    let dataset = make_windows(&scaler.scale_panel(&train_panel)?, l)?;
    let adjacency = if f.uses_graph() {
        let returns = daily_returns(&train_panel)?;
        let rows = 0..returns.n_days();
        Some(build_relation_graph(&returns, rows, graph)?.adjacency())
    } else {
        None
    };
    let window = scaler.scale(&panel.tickers, panel.close.slice(s![step.test - l..step.test, ..]))?;
    let actual_prices = panel.close.slice(s![step.test..step.test + 1, ..]);
    let actuals = scaler.scale(&panel.tickers, actual_prices)?.row(0).to_vec();
    let leakage_free = step.train_interval.end < step.test_date
        && dataset.samples.iter().all(|s| s.target_date < step.test_date);

    let ctx = StepContext {
        step,
        seed: step_seed(opts.seed, step.index),
        scaler: &scaler,
        train: &dataset,
        adjacency: adjacency.as_ref(),
        test_window: window.view(),
        previous,
    };
    let forecast = f.forecast(&ctx)?;
    if forecast.predictions.len() != actuals.len() {
        return Err(BacktestError::LengthMismatch {
            predictions: forecast.predictions.len(),
            actuals: actuals.len(),
        });
    }
    if let Some(bad) = forecast.predictions.iter().find(|p| !p.is_finite()) {
        return Err(ModelError::DivergedLoss {
            epoch: forecast.epochs,
            loss: *bad,
        }
        .into());
    }
    let currency_mse = if opts.currency_errors {
        let pred = Array2::from_shape_vec((1, actuals.len()), forecast.predictions.clone())
            .expect("one row");
        let prices = scaler.invert_scale(&panel.tickers, pred.view())?;
        Some(mse(prices.as_slice().expect("fresh array"), &actual_prices.iter().copied().collect::<Vec<f64>>())?)
    } else {
        None
    };
    Ok(StepResult {
        predictions: forecast.predictions,
        actuals,
        currency_mse,
        epochs: forecast.epochs,
        leakage_free,
        model: forecast.model,
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Walks `plan` over `panel` with a model spec. The spec's own seed is
/// replaced by per-step seeds derived from `opts.seed`.
pub fn run_backtest(
    spec: &ModelSpec,
    panel: &PricePanel,
    graph: &GraphConfig,
    plan: &WindowPlan,
    opts: &BacktestOptions,
) -> Result<BacktestReport> {
    spec.validate()?;
    run_forecaster(spec, panel, graph, plan, opts)
}

/// Walks `plan` over `panel` with any forecaster. Steps that fail are
/// recorded with their error and left out of every average.
pub fn run_forecaster(
    f: &dyn Forecaster,
    panel: &PricePanel,
    graph: &GraphConfig,
    plan: &WindowPlan,
    opts: &BacktestOptions,
) -> Result<BacktestReport> {
    plan.check_against(&panel.dates)?;
    graph.validate()?;
    let n = panel.n_tickers();
    let mut per_day = Vec::with_capacity(plan.len());
    let mut previous: Option<TrainedModel> = None;
    for step in &plan.steps {
        let warm = if opts.warm_start { previous.as_ref() } else { None };
        let mut record = DayRecord {
            step: step.index,
            date: step.test_date,
            train_days: step.train.len(),
            train_end: step.train_interval.end,
            leakage_free: step.train_interval.end < step.test_date,
            mse: None,
            squared_errors: Vec::new(),
            predictions: Vec::new(),
            actuals: Vec::new(),
            currency_mse: None,
            epochs: 0,
            error: None,
        };
        match run_step(f, panel, graph, step, opts, warm) {
            Ok(r) => {
                record.squared_errors = r
                    .predictions
                    .iter()
                    .zip(&r.actuals)
                    .map(|(p, a)| (p - a) * (p - a))
                    .collect();
                record.mse = Some(mse(&r.predictions, &r.actuals)?);
                record.leakage_free = r.leakage_free;
                record.predictions = r.predictions;
                record.actuals = r.actuals;
                record.currency_mse = r.currency_mse;
                record.epochs = r.epochs;
                if opts.warm_start {
                    previous = r.model;
                }
            }
            Err(e) => record.error = Some(e.to_string()),
        }
        per_day.push(record);
    }

    let ok: Vec<&DayRecord> = per_day.iter().filter(|d| d.mse.is_some()).collect();
    let summary = mean(ok.iter().filter_map(|d| d.mse));
    let per_stock = if ok.is_empty() {
        Vec::new()
    } else {
        (0..n)
            .map(|i| mean(ok.iter().map(|d| d.squared_errors[i])).expect("nonempty"))
            .collect()
    };
    let currency_summary = mean(ok.iter().filter_map(|d| d.currency_mse));
    Ok(BacktestReport {
        tickers: panel.tickers.clone(),
        failed_steps: per_day.len() - ok.len(),
        per_day,
        per_stock,
        summary,
        currency_summary,
        config: ReportConfig {
            model: f.name(),
            spec: f.spec().cloned(),
            graph: *graph,
            plan: plan.config,
            options: *opts,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backtest::expanding_schedule;
    use crate::models::{ArchConfig, ModelKind};
    use crate::synthetic::{lead_lag_panel, SyntheticConfig};

    fn small_panel(days: usize, seed: u64) -> PricePanel {
        let cfg = SyntheticConfig {
            days,
            ..SyntheticConfig::default()
        };
        lead_lag_panel(&cfg, seed)
    }

    fn plan(panel: &PricePanel, base: usize, test: usize) -> WindowPlan {
        let cfg = PlanConfig {
            base_train_days: base,
            test_days: test,
            test_end: None,
        };
        expanding_schedule(&panel.dates, &cfg).unwrap()
    }

    /// Knows the future: reads the true scaled close off the panel.
    struct Oracle<'a>(&'a PricePanel);

    impl Forecaster for Oracle<'_> {
        fn name(&self) -> String {
            "oracle".into()
        }
        fn lookback(&self) -> usize {
            5
        }
        fn uses_graph(&self) -> bool {
            false
        }
        fn forecast(&self, ctx: &StepContext<'_>) -> std::result::Result<StepForecast, ModelError> {
            let row = self.0.close.row(ctx.step.test);
            Ok(StepForecast {
                predictions: (0..row.len()).map(|i| ctx.scaler.scale_value(i, row[i])).collect(),
                epochs: 0,
                model: None,
            })
        }
    }

    /// Predicts the last seen scaled close; fails on a chosen step.
    struct Persistence {
        fail_at: Option<usize>,
    }

    impl Forecaster for Persistence {
        fn name(&self) -> String {
            "persistence".into()
        }
        fn lookback(&self) -> usize {
            3
        }
        fn uses_graph(&self) -> bool {
            true
        }
        fn forecast(&self, ctx: &StepContext<'_>) -> std::result::Result<StepForecast, ModelError> {
            if Some(ctx.step.index) == self.fail_at {
                return Err(ModelError::DivergedLoss {
                    epoch: 3,
                    loss: f64::NAN,
                });
            }
            assert!(ctx.adjacency.is_some());
            let w = ctx.test_window;
            Ok(StepForecast {
                predictions: w.row(w.nrows() - 1).to_vec(),
                epochs: 1,
                model: None,
            })
        }
    }

    #[test]
    fn oracle_scores_zero() {
        let panel = small_panel(140, 1);
        let plan = plan(&panel, 100, 20);
        let r = run_forecaster(&Oracle(&panel), &panel, &GraphConfig::default(), &plan, &Default::default())
            .unwrap();
        assert_eq!(r.per_day.len(), 20);
        assert!(r.per_day.iter().all(|d| d.mse == Some(0.0) && d.leakage_free));
        assert_eq!(r.summary, Some(0.0));
        assert_eq!(r.per_stock.len(), 10);
    }

    #[test]
    fn failed_step_is_flagged_and_excluded() {
        let panel = small_panel(140, 2);
        let plan = plan(&panel, 100, 10);
        let opts = BacktestOptions {
            currency_errors: true,
            ..Default::default()
        };
        let f = Persistence { fail_at: Some(4) };
        let r = run_forecaster(&f, &panel, &GraphConfig::default(), &plan, &opts).unwrap();
        assert_eq!(r.failed_steps, 1);
        assert!(r.per_day[4].mse.is_none() && r.per_day[4].error.is_some());
        let ok: Vec<f64> = r.per_day.iter().filter_map(|d| d.mse).collect();
        assert_eq!(ok.len(), 9);
        let mean_ok = ok.iter().sum::<f64>() / 9.0;
        assert!((r.summary.unwrap() - mean_ok).abs() < 1e-12);
        let mean_stock = r.per_stock.iter().sum::<f64>() / r.per_stock.len() as f64;
        assert!((mean_stock - mean_ok).abs() < 1e-12);
        assert!(r.currency_summary.unwrap() > 0.0);
        assert!(r.per_day_csv().lines().nth(5).unwrap().ends_with(','));
    }

    #[test]
    fn future_prices_do_not_change_results() {
        let panel = small_panel(140, 3);
        let plan = plan(&panel, 100, 10);
        let f = Persistence { fail_at: None };
        let base = run_forecaster(&f, &panel, &GraphConfig::default(), &plan, &Default::default()).unwrap();
        let mut shocked = panel.clone();
        shocked.close.slice_mut(s![135.., ..]).mapv_inplace(|p| p * 3.0);
        let r = run_forecaster(&f, &shocked, &GraphConfig::default(), &plan, &Default::default()).unwrap();
        // steps 0..=5 test rows 130..=135 and never see a shocked input
        for k in 0..=5 {
            assert_eq!(base.per_day[k].predictions, r.per_day[k].predictions, "step {k}");
        }
        for k in 0..5 {
            assert_eq!(base.per_day[k].mse, r.per_day[k].mse);
        }
        assert_ne!(base.per_day[5].mse, r.per_day[5].mse);
    }

    #[test]
    fn spec_backtest_is_deterministic() {
        let panel = small_panel(90, 4);
        let plan = plan(&panel, 70, 3);
        let mut spec = ModelSpec::new(ModelKind::Hybrid);
        spec.arch = ArchConfig {
            lstm_hidden: 4,
            lstm_layers: 1,
            gcn_hidden: 4,
            gcn_out: 2,
            fusion_hidden: 4,
            ..Default::default()
        };
        spec.train.epochs = 10;
        spec.train.lookback = 5;
        let opts = BacktestOptions::default();
        let a = run_backtest(&spec, &panel, &GraphConfig::default(), &plan, &opts).unwrap();
        let b = run_backtest(&spec, &panel, &GraphConfig::default(), &plan, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.failed_steps, 0, "{:?}", a.per_day[0].error);
        assert_eq!(a.per_day_csv(), b.per_day_csv());
        let warm = BacktestOptions {
            warm_start: true,
            ..opts
        };
        let c = run_backtest(&spec, &panel, &GraphConfig::default(), &plan, &warm).unwrap();
        assert_eq!(c.per_day[0], a.per_day[0]);
        assert_eq!(c.failed_steps, 0);
    }

    #[test]
    fn invalid_spec_rejected_before_any_step() {
        let panel = small_panel(90, 5);
        let plan = plan(&panel, 70, 3);
        let mut spec = ModelSpec::new(ModelKind::Lstm);
        spec.train.learning_rate = 0.0;
        assert!(matches!(
            run_backtest(&spec, &panel, &GraphConfig::default(), &plan, &Default::default()),
            Err(BacktestError::Model(ModelError::InvalidConfig {
                field: "learning_rate",
                ..
            }))
        ));
    }
}
