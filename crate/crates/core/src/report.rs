//! Output files: panel summaries, moving averages, graph dumps, backtest
//! tables and the run manifest.
//!
//! Commands collect file contents in an [`Outputs`] set and write it once at
//! the end, so a failed command leaves no partial output behind.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{DataConfig, RunConfig};
use crate::market_data::{
    align_panel, moving_average, parse_ohlcv_csv, resolve_interval, DataError, PricePanel, RawSeries,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Reads `<dir>/<TICKER>.csv` for every configured ticker.
pub fn read_series(data: &DataConfig) -> Result<Vec<RawSeries>, DataError> {
    data.tickers
        .iter()
        .map(|t| {
            let path = data.dir.join(format!("{t}.csv"));
            let bytes = std::fs::read(&path).map_err(|e| DataError::Unreadable {
                ticker: t.clone(),
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
            parse_ohlcv_csv(&bytes, t)
        })
        .collect()
}

/// Aligned panel restricted to the configured date range.
pub fn panel_from_series(series: &[RawSeries], data: &DataConfig) -> Result<PricePanel, DataError> {
    let panel = align_panel(series)?;
    match data.range() {
        Some(range) => {
            let rows = resolve_interval(&panel.dates, range)?;
            Ok(panel.slice(rows))
        }
        None => Ok(panel),
    }
}

pub fn load_panel(data: &DataConfig) -> Result<PricePanel, DataError> {
    panel_from_series(&read_series(data)?, data)
}

/// `ticker,rows,first_date,last_date,aligned_rows,aligned_first,aligned_last`.
pub fn panel_summary_csv(series: &[RawSeries], panel: &PricePanel) -> String {
    let mut out = String::from("ticker,rows,first_date,last_date,aligned_rows,aligned_first,aligned_last\n");
    let (first, last) = (panel.dates.first(), panel.dates.last());
    for s in series {
        let dates: Vec<_> = s.dates().collect();
        let opt = |d: Option<&chrono::NaiveDate>| d.map(|d| d.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.ticker,
            s.bars.len(),
            opt(dates.iter().min()),
            opt(dates.iter().max()),
            panel.n_days(),
            opt(first),
            opt(last)
        )
        .expect("write to String");
    }
    out
}

/// `date,ticker,norm_close,ma50,ma200`. `norm_close` is the close min-max
/// scaled over the whole panel (display only); the averages are taken over
/// `norm_close` and are empty until enough days exist.
pub fn ma_prices_csv(panel: &PricePanel) -> String {
    let w50 = NonZeroUsize::new(50).expect("non-zero");
    let w200 = NonZeroUsize::new(200).expect("non-zero");
    let cols: Vec<(Vec<f64>, Vec<Option<f64>>, Vec<Option<f64>>)> = (0..panel.n_tickers())
        .map(|i| {
            let closes = panel.column(i);
            let lo = closes.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = closes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = hi - lo;
            let norm: Vec<f64> = closes
                .iter()
                .map(|&c| if span > 0.0 { (c - lo) / span } else { 0.0 })
                .collect();
            let ma50 = moving_average(&norm, w50);
            let ma200 = moving_average(&norm, w200);
            (norm, ma50, ma200)
        })
        .collect();
    let field = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from("date,ticker,norm_close,ma50,ma200\n");
    for (t, date) in panel.dates.iter().enumerate() {
        for (i, ticker) in panel.tickers.iter().enumerate() {
            let (norm, ma50, ma200) = &cols[i];
            writeln!(out, "{date},{ticker},{},{},{}", norm[t], field(ma50[t]), field(ma200[t]))
                .expect("write to String");
        }
    }
    out
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    /// Extra facts about the run, e.g. the resolved panel span.
    facts: &'a BTreeMap<String, String>,
    config: &'a RunConfig,
}

/// TOML manifest: version, command, seed and the resolved config. Its
/// `config` table is itself a valid config file for rerunning.
pub fn manifest(command: &str, config: &RunConfig, facts: &BTreeMap<String, String>) -> String {
    let m = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: VERSION,
        command,
        seed: config.seed,
        facts,
        config,
    };
    toml::to_string(&m).expect("manifest serialises")
}

/// Named file contents, written together.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Outputs {
    files: BTreeMap<String, String>,
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, contents: String) {
        self.files.insert(name.into(), contents);
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.files.get(name).map(String::as_str)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(String::as_str)
    }

    /// Creates `dir` and writes every file, replacing existing ones.
    pub fn write_to(&self, dir: &Path) -> io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        self.files
            .iter()
            .map(|(name, contents)| {
                let path = dir.join(name);
                std::fs::write(&path, contents)?;
                Ok(path)
            })
            .collect()
    }
}
