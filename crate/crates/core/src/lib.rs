//! Hybrid LSTM + graph-convolution forecasting of daily closing prices.
//!
//! The pipeline, in module order:
//!
//! * [`market_data`]: CSV ingestion, calendar alignment, min-max scaling,
//!   returns, lookback windows.
//! * [`relation_graph`]: correlation and association edges, normalised
//!   adjacency.
//! * [`grad`]: a small reverse-mode differentiation engine with Adam.
//! * [`models`]: LSTM, GCN, hybrid and baseline forecasters plus training.
//! * [`backtest`]: expanding-window evaluation, grid search, model comparison.
//! * [`report`], [`config`] and [`cli`]: output files, run configuration and
//!   the command-line front end.

pub mod backtest;
pub mod cli;
pub mod config;
pub mod grad;
pub mod market_data;
pub mod models;
pub mod par;
pub mod relation_graph;
pub mod report;
pub mod rng;
pub mod synthetic;
