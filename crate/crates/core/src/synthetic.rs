//! Synthetic lead-lag market for tests, benches and the CLI `synth` command.
//!
//! Assets form clusters driven by a cluster factor `f`. Asset 0 of each
//! cluster is its leader and moves with today's factor; the other members
//! move with today's factor and, more weakly, yesterday's:
//!
//! ```text
//! leader:   r_t = m_t + f_t + e_t
//! follower: r_t = m_t + a f_t + b f_{t-1} + e_t
//! ```
//!
//! `m` is a market factor shared by every cluster. The leader's return
//! today therefore carries part of each follower's return tomorrow, which
//! only a model that looks across stocks can use.

use std::fmt::Write as _;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use ndarray::Array2;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::market_data::{Bar, PricePanel, RawSeries};
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub clusters: usize,
    pub cluster_size: usize,
    /// Trading days generated.
    pub days: usize,
    /// First trading day; weekends are skipped.
    pub start: NaiveDate,
    pub initial_price: f64,
    pub market_vol: f64,
    pub factor_vol: f64,
    pub noise_vol: f64,
    /// `a`, the followers' same-day factor loading.
    pub same_day_loading: f64,
    /// `b`, the followers' previous-day factor loading.
    pub lag_loading: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            clusters: 2,
            cluster_size: 5,
            days: 554,
            start: NaiveDate::from_ymd_opt(2021, 1, 4).expect("valid date"),
            initial_price: 100.0,
            market_vol: 0.004,
            factor_vol: 0.015,
            noise_vol: 0.004,
            same_day_loading: 1.0,
            lag_loading: 0.8,
        }
    }
}

impl SyntheticConfig {
    pub fn n_assets(&self) -> usize {
        self.clusters * self.cluster_size
    }

    /// `A0..A4, B0..B4, ...`; index 0 of each cluster is its leader.
    pub fn tickers(&self) -> Vec<String> {
        (0..self.clusters)
            .flat_map(|c| {
                let letter = (b'A' + (c % 26) as u8) as char;
                (0..self.cluster_size).map(move |k| format!("{letter}{k}"))
            })
            .collect()
    }

    pub fn leaders(&self) -> Vec<usize> {
        (0..self.clusters).map(|c| c * self.cluster_size).collect()
    }
}

fn trading_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

/// Closing prices of one draw of the market.
pub fn lead_lag_panel(cfg: &SyntheticConfig, seed: u64) -> PricePanel {
    assert!(cfg.clusters > 0 && cfg.cluster_size > 0 && cfg.days > 0, "empty market");
    let n = cfg.n_assets();
    let mut rng = seeded(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut draw = |sd: f64| sd * std_normal.sample(&mut rng);

    let mut close = Array2::zeros((cfg.days, n));
    let mut prices = vec![cfg.initial_price; n];
    let mut prev_factor: Vec<f64> = (0..cfg.clusters).map(|_| draw(cfg.factor_vol)).collect();
    for t in 0..cfg.days {
        if t > 0 {
            let market = draw(cfg.market_vol);
            let factor: Vec<f64> = (0..cfg.clusters).map(|_| draw(cfg.factor_vol)).collect();
            for (i, p) in prices.iter_mut().enumerate() {
                let c = i / cfg.cluster_size;
                let signal = if i % cfg.cluster_size == 0 {
                    factor[c]
                } else {
                    cfg.same_day_loading * factor[c] + cfg.lag_loading * prev_factor[c]
                };
                let r = market + signal + draw(cfg.noise_vol);
                *p *= (1.0 + r).max(0.05);
            }
            prev_factor = factor;
        }
        for (i, p) in prices.iter().enumerate() {
            close[[t, i]] = *p;
        }
    }
    PricePanel::new(cfg.tickers(), trading_days(cfg.start, cfg.days), close)
}

/// The panel as per-ticker OHLCV series. Open is the previous close, high
/// and low bracket open and close, volume is constant.
pub fn to_series(panel: &PricePanel) -> Vec<RawSeries> {
    (0..panel.n_tickers())
        .map(|i| {
            let bars = panel
                .dates
                .iter()
                .enumerate()
                .map(|(t, &date)| {
                    let close = panel.close[[t, i]];
                    let open = if t == 0 { close } else { panel.close[[t - 1, i]] };
                    Bar {
                        date,
                        open,
                        high: open.max(close),
                        low: open.min(close),
                        close,
                        adj_close: close,
                        volume: 1_000_000.0,
                    }
                })
                .collect();
            RawSeries {
                ticker: panel.tickers[i].clone(),
                bars,
            }
        })
        .collect()
}

/// `Date,Open,High,Low,Close,Adj Close,Volume`, the layout of common
/// market-data exports.
pub fn ohlcv_csv(series: &RawSeries) -> String {
    let mut out = String::from("Date,Open,High,Low,Close,Adj Close,Volume\n");
    for b in &series.bars {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            b.date, b.open, b.high, b.low, b.close, b.adj_close, b.volume
        )
        .expect("write to String");
    }
    out
}
