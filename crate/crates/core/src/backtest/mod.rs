//! Expanding-window walk-forward evaluation.
//!
//! A [`WindowPlan`] fixes which panel day each step tests and which days it
//! may learn from. [`run_backtest`] refits the scaler, rebuilds the relation
//! graph and retrains the model for every step using only that step's
//! training days, then scores the one-day-ahead prediction. Grid search and
//! model comparison are independent backtests run side by side.

mod grid;
mod run;

use std::ops::Range;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::{DataError, DateInterval};
use crate::models::ModelError;
use crate::relation_graph::GraphError;

pub use grid::{compare_models, grid_search, rank_cells, Comparison, GridCell, GridReport, GridSpace};
pub use run::{
    run_backtest, run_forecaster, step_seed, BacktestOptions, BacktestReport, DayRecord,
    Forecaster, ReportConfig, StepContext, StepForecast,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BacktestError {
    #[error("panel has {available} days, plan needs {needed}")]
    InsufficientHistory { needed: usize, available: usize },
    #[error("predictions ({predictions}) and actuals ({actuals}) differ in length")]
    LengthMismatch { predictions: usize, actuals: usize },
    #[error("invalid {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("plan does not fit the panel: {0}")]
    PlanMismatch(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = BacktestError> = std::result::Result<T, E>;

/// Shape of the walk-forward schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanConfig {
    /// Trading days before the first test day.
    pub base_train_days: usize,
    pub test_days: usize,
    /// Last test day; the latest panel day on or before it. `None` means the
    /// final panel day.
    pub test_end: Option<NaiveDate>,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            base_train_days: 504,
            test_days: 50,
            test_end: None,
        }
    }
}

/// One walk-forward step: learn from panel rows `train`, predict row `test`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanStep {
    pub index: usize,
    pub train: Range<usize>,
    pub test: usize,
    pub train_interval: DateInterval,
    pub test_date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowPlan {
    pub config: PlanConfig,
    pub base_train: DateInterval,
    pub test_dates: Vec<NaiveDate>,
    pub steps: Vec<PlanStep>,
}

impl WindowPlan {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Checks the plan against a panel calendar.
    pub fn check_against(&self, dates: &[NaiveDate]) -> Result<()> {
        for step in &self.steps {
            let fits = step.train.start < step.train.end
                && step.train.end == step.test
                && step.test < dates.len()
                && dates[step.test] == step.test_date
                && dates[step.train.start] == step.train_interval.start
                && dates[step.train.end - 1] == step.train_interval.end;
            if !fits {
                return Err(BacktestError::PlanMismatch(format!(
                    "step {} (test {}) does not match the panel calendar",
                    step.index, step.test_date
                )));
            }
        }
        Ok(())
    }
}

/// Expanding-window schedule over an ascending calendar. Test days are the
/// `test_days` panel days ending at `test_end` (default: the last day);
/// step 0 trains on the `base_train_days` days before the first of them and
/// every later step adds the previous step's test day.
pub fn expanding_schedule(dates: &[NaiveDate], config: &PlanConfig) -> Result<WindowPlan> {
    if config.test_days == 0 {
        return Err(BacktestError::InvalidConfig {
            field: "test_days",
            reason: "must be positive".into(),
        });
    }
    if config.base_train_days == 0 {
        return Err(BacktestError::InvalidConfig {
            field: "base_train_days",
            reason: "must be positive".into(),
        });
    }
    let needed = config.base_train_days + config.test_days;
    let end = match config.test_end {
        Some(last) => dates.partition_point(|d| *d <= last),
        None => dates.len(),
    };
    if end < needed {
        return Err(BacktestError::InsufficientHistory {
            needed,
            available: end,
        });
    }
    let first_test = end - config.test_days;
    let start = first_test - config.base_train_days;
    let steps: Vec<PlanStep> = (first_test..end)
        .enumerate()
        .map(|(index, test)| PlanStep {
            index,
            train: start..test,
            test,
            train_interval: DateInterval::new(dates[start], dates[test - 1]),
            test_date: dates[test],
        })
        .collect();
    Ok(WindowPlan {
        config: *config,
        base_train: steps[0].train_interval,
        test_dates: dates[first_test..end].to_vec(),
        steps,
    })
}

/// Mean squared error over paired values.
pub fn mse(predictions: &[f64], actuals: &[f64]) -> Result<f64> {
    if predictions.len() != actuals.len() || predictions.is_empty() {
        return Err(BacktestError::LengthMismatch {
            predictions: predictions.len(),
            actuals: actuals.len(),
        });
    }
    let sum: f64 = predictions
        .iter()
        .zip(actuals)
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    Ok(sum / predictions.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn calendar(n: usize) -> Vec<NaiveDate> {
        let d0 = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        (0..n).map(|k| d0 + chrono::Days::new(k as u64)).collect()
    }

    #[test]
    fn default_plan_on_554_days() {
        let dates = calendar(554);
        let plan = expanding_schedule(&dates, &PlanConfig::default()).unwrap();
        assert_eq!(plan.len(), 50);
        assert_eq!(plan.steps[0].train, 0..504);
        assert_eq!(plan.steps[0].test, 504);
        assert_eq!(plan.steps[49].train, 0..553);
        assert_eq!(plan.steps[49].test, 553);
        assert_eq!(plan.test_dates.len(), 50);
        assert!(plan.check_against(&dates).is_ok());
    }

    #[test]
    fn longer_panels_start_later() {
        let plan = expanding_schedule(&calendar(600), &PlanConfig::default()).unwrap();
        assert_eq!(plan.steps[0].train, 46..550);
    }

    #[test]
    fn test_end_moves_the_window() {
        let dates = calendar(600);
        let config = PlanConfig {
            test_end: Some(dates[570]),
            ..Default::default()
        };
        let plan = expanding_schedule(&dates, &config).unwrap();
        assert_eq!(plan.steps.last().unwrap().test, 570);
        assert_eq!(plan.steps[0].train, 17..521);
    }

    #[test]
    fn short_panel_rejected() {
        assert_eq!(
            expanding_schedule(&calendar(100), &PlanConfig::default()),
            Err(BacktestError::InsufficientHistory {
                needed: 554,
                available: 100
            })
        );
    }

    #[test]
    fn plan_on_other_calendar_is_rejected() {
        let plan = expanding_schedule(&calendar(554), &PlanConfig::default()).unwrap();
        assert!(plan.check_against(&calendar(554)).is_ok());
        assert!(plan.check_against(&calendar(553)).is_err());
        let shifted = calendar(555)[1..].to_vec();
        assert!(plan.check_against(&shifted).is_err());
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
        assert_eq!(mse(&[1.0, 3.0], &[0.0, 0.0]).unwrap(), 5.0);
        assert!((mse(&[0.02], &[0.0]).unwrap() - 4e-4).abs() < 1e-18);
        assert!(matches!(
            mse(&[1.0], &[1.0, 2.0]),
            Err(BacktestError::LengthMismatch { .. })
        ));
    }
}
