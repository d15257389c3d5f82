//! Daily OHLCV ingestion, calendar alignment, min-max scaling, returns and
//! lookback windows.
//!
//! Everything here is a pure value transformation. Prices live in `T x N`
//! matrices (rows are trading days, columns are tickers) so the rest of the
//! crate can slice by date range without copying per-ticker vectors around.

use std::collections::{BTreeMap, BTreeSet};
use std::num::NonZeroUsize;
use std::ops::Range;

use chrono::NaiveDate;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("{ticker}: malformed row {line}: {reason}")]
    MalformedRow {
        ticker: String,
        line: usize,
        reason: String,
    },
    #[error("{ticker}: cannot read {path}: {reason}")]
    Unreadable {
        ticker: String,
        path: String,
        reason: String,
    },
    #[error("{ticker}: duplicate date {date}")]
    DuplicateDate { ticker: String, date: NaiveDate },
    #[error("{ticker}: non-positive price on {date}")]
    NonPositivePrice { ticker: String, date: NaiveDate },
    #[error("{ticker}: missing column `{column}` in header")]
    MissingColumn { ticker: String, column: String },
    #[error("need at least {needed} series, got {got}")]
    TooFewSeries { needed: usize, got: usize },
    #[error("ticker {0} supplied twice")]
    DuplicateTicker(String),
    #[error("series share no common trading day")]
    EmptyIntersection,
    #[error("panel has {days} days, need at least {needed}")]
    PanelTooShort { days: usize, needed: usize },
    #[error("date range {start}..={end} selects no panel days")]
    EmptyRange { start: NaiveDate, end: NaiveDate },
    #[error("{ticker}: constant price over the fit range, cannot min-max scale")]
    DegenerateSeries { ticker: String },
    #[error("ticker mismatch: scaler fitted on {expected:?}, got {got:?}")]
    TickerMismatch {
        expected: Vec<String>,
        got: Vec<String>,
    },
    #[error("slice of {days} days is too short for lookback {lookback}")]
    SliceTooShort { days: usize, lookback: usize },
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// One daily bar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub adj_close: f64,
    pub volume: f64,
}

/// Daily bars of one ticker, ascending by date.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub ticker: String,
    pub bars: Vec<Bar>,
}

impl RawSeries {
    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.bars.iter().map(|b| b.date)
    }
}

const COLUMNS: [&str; 7] = [
    "date",
    "open",
    "high",
    "low",
    "close",
    "adj_close",
    "volume",
];

fn normalize_header(h: &str) -> String {
    h.trim().to_ascii_lowercase().replace([' ', '-'], "_")
}

/// Parses a `date,open,high,low,close,adj_close,volume` export.
///
/// Header names are matched case-insensitively (`Adj Close` is accepted for
/// `adj_close`), so column order does not matter. Rows come back sorted.
pub fn parse_ohlcv_csv(bytes: &[u8], ticker: &str) -> Result<RawSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);

    let headers = reader.headers().map_err(|e| DataError::MalformedRow {
        ticker: ticker.to_string(),
        line: 1,
        reason: e.to_string(),
    })?;
    let names: Vec<String> = headers.iter().map(normalize_header).collect();
    let mut index = [0usize; 7];
    for (slot, col) in index.iter_mut().zip(COLUMNS) {
        *slot = names
            .iter()
            .position(|n| n == col)
            .ok_or_else(|| DataError::MissingColumn {
                ticker: ticker.to_string(),
                column: col.to_string(),
            })?;
    }

    let mut bars = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let malformed = |reason: String| DataError::MalformedRow {
            ticker: ticker.to_string(),
            line,
            reason,
        };
        let record = record.map_err(|e| malformed(e.to_string()))?;
        let field = |k: usize| record.get(index[k]).unwrap_or("");
        let date = NaiveDate::parse_from_str(field(0), "%Y-%m-%d")
            .map_err(|e| malformed(format!("date `{}`: {e}", field(0))))?;
        let mut values = [0.0f64; 6];
        for (k, v) in values.iter_mut().enumerate() {
            let raw = field(k + 1);
            *v = raw
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| malformed(format!("{} `{raw}`", COLUMNS[k + 1])))?;
        }
        let [open, high, low, close, adj_close, volume] = values;
        if [open, high, low, close, adj_close].iter().any(|&p| p <= 0.0) {
            return Err(DataError::NonPositivePrice {
                ticker: ticker.to_string(),
                date,
            });
        }
        if volume < 0.0 {
            return Err(malformed(format!("negative volume {volume}")));
        }
        bars.push(Bar {
            date,
            open,
            high,
            low,
            close,
            adj_close,
            volume,
        });
    }

    bars.sort_by_key(|b| b.date);
    if let Some(w) = bars.windows(2).find(|w| w[0].date == w[1].date) {
        return Err(DataError::DuplicateDate {
            ticker: ticker.to_string(),
            date: w[0].date,
        });
    }
    Ok(RawSeries {
        ticker: ticker.to_string(),
        bars,
    })
}

/// Inclusive calendar interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DateInterval {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateInterval {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }
}

/// Index range of `dates` (ascending) covered by `interval`.
pub fn resolve_interval(dates: &[NaiveDate], interval: DateInterval) -> Result<Range<usize>> {
    let lo = dates.partition_point(|d| *d < interval.start);
    let hi = dates.partition_point(|d| *d <= interval.end);
    if lo >= hi {
        return Err(DataError::EmptyRange {
            start: interval.start,
            end: interval.end,
        });
    }
    Ok(lo..hi)
}

/// Aligned closing prices: `close[[t, i]]` is ticker `i` on `dates[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    pub tickers: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub close: Array2<f64>,
}

impl PricePanel {
    pub fn new(tickers: Vec<String>, dates: Vec<NaiveDate>, close: Array2<f64>) -> Self {
        assert_eq!(close.dim(), (dates.len(), tickers.len()), "panel shape");
        debug_assert!(dates.windows(2).all(|w| w[0] < w[1]));
        Self {
            tickers,
            dates,
            close,
        }
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn n_tickers(&self) -> usize {
        self.tickers.len()
    }

    /// Rows `range` as a new panel.
    pub fn slice(&self, range: Range<usize>) -> PricePanel {
        PricePanel {
            tickers: self.tickers.clone(),
            dates: self.dates[range.clone()].to_vec(),
            close: self.close.slice(s![range, ..]).to_owned(),
        }
    }

    pub fn interval(&self, range: Range<usize>) -> DateInterval {
        DateInterval::new(self.dates[range.start], self.dates[range.end - 1])
    }

    pub fn column(&self, ticker: usize) -> Vec<f64> {
        self.close.column(ticker).to_vec()
    }
}

/// Intersects the calendars of `series` and gathers closing prices.
///
/// Tickers keep the order they were supplied in.
pub fn align_panel(series: &[RawSeries]) -> Result<PricePanel> {
    if series.len() < 2 {
        return Err(DataError::TooFewSeries {
            needed: 2,
            got: series.len(),
        });
    }
    let mut seen = BTreeSet::new();
    for s in series {
        if !seen.insert(s.ticker.as_str()) {
            return Err(DataError::DuplicateTicker(s.ticker.clone()));
        }
    }

    let mut common: BTreeSet<NaiveDate> = series[0].dates().collect();
    for s in &series[1..] {
        let other: BTreeSet<NaiveDate> = s.dates().collect();
        common.retain(|d| other.contains(d));
    }
    if common.is_empty() {
        return Err(DataError::EmptyIntersection);
    }
    let dates: Vec<NaiveDate> = common.into_iter().collect();

    let mut close = Array2::zeros((dates.len(), series.len()));
    for (i, s) in series.iter().enumerate() {
        let by_date: BTreeMap<NaiveDate, f64> = s.bars.iter().map(|b| (b.date, b.close)).collect();
        for (t, d) in dates.iter().enumerate() {
            close[[t, i]] = by_date[d];
        }
    }
    Ok(PricePanel::new(
        series.iter().map(|s| s.ticker.clone()).collect(),
        dates,
        close,
    ))
}

/// Simple daily returns; `dates[t]` is the later day of each pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    pub tickers: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub returns: Array2<f64>,
}

impl ReturnPanel {
    pub fn n_days(&self) -> usize {
        self.dates.len()
    }
}

pub fn daily_returns(panel: &PricePanel) -> Result<ReturnPanel> {
    let t = panel.n_days();
    if t < 2 {
        return Err(DataError::PanelTooShort { days: t, needed: 2 });
    }
    let mut returns = Array2::zeros((t - 1, panel.n_tickers()));
    for ((row, i), r) in returns.indexed_iter_mut() {
        let prev = panel.close[[row, i]];
        *r = (panel.close[[row + 1, i]] - prev) / prev;
    }
    Ok(ReturnPanel {
        tickers: panel.tickers.clone(),
        dates: panel.dates[1..].to_vec(),
        returns,
    })
}

/// Per-ticker min-max scaler.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub tickers: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub fit_range: DateInterval,
}

pub fn fit_scaler(panel: &PricePanel, fit_range: DateInterval) -> Result<Scaler> {
    let rows = resolve_interval(&panel.dates, fit_range)?;
    let view = panel.close.slice(s![rows, ..]);
    let mut min = Vec::with_capacity(panel.n_tickers());
    let mut max = Vec::with_capacity(panel.n_tickers());
    for (i, col) in view.axis_iter(Axis(1)).enumerate() {
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            return Err(DataError::DegenerateSeries {
                ticker: panel.tickers[i].clone(),
            });
        }
        min.push(lo);
        max.push(hi);
    }
    Ok(Scaler {
        tickers: panel.tickers.clone(),
        min,
        max,
        fit_range,
    })
}

impl Scaler {
    fn check(&self, tickers: &[String]) -> Result<()> {
        if tickers != self.tickers.as_slice() {
            return Err(DataError::TickerMismatch {
                expected: self.tickers.clone(),
                got: tickers.to_vec(),
            });
        }
        Ok(())
    }

    pub fn scale_value(&self, ticker: usize, x: f64) -> f64 {
        (x - self.min[ticker]) / (self.max[ticker] - self.min[ticker])
    }

    pub fn invert_value(&self, ticker: usize, x: f64) -> f64 {
        x * (self.max[ticker] - self.min[ticker]) + self.min[ticker]
    }

    /// Scales a `days x tickers` matrix whose columns are `tickers`.
    pub fn scale(&self, tickers: &[String], prices: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(tickers)?;
        let mut out = prices.to_owned();
        for (i, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|x| self.scale_value(i, x));
        }
        Ok(out)
    }

    pub fn invert_scale(&self, tickers: &[String], scaled: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(tickers)?;
        let mut out = scaled.to_owned();
        for (i, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|x| self.invert_value(i, x));
        }
        Ok(out)
    }

    pub fn scale_panel(&self, panel: &PricePanel) -> Result<ScaledPanel> {
        Ok(ScaledPanel {
            tickers: panel.tickers.clone(),
            dates: panel.dates.clone(),
            values: self.scale(&panel.tickers, panel.close.view())?,
        })
    }
}

/// Min-max scaled closes with their calendar.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledPanel {
    pub tickers: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub values: Array2<f64>,
}

/// One supervised example: `input` holds the `lookback` days strictly before
/// `target_date`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub input: Array2<f64>,
    pub target: Array1<f64>,
    pub input_last_date: NaiveDate,
    pub target_date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowDataset {
    pub lookback: usize,
    pub tickers: Vec<String>,
    pub samples: Vec<WindowSample>,
}

impl WindowDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_tickers(&self) -> usize {
        self.tickers.len()
    }

    /// Sub-dataset with the samples at `range`, order preserved.
    pub fn subset(&self, range: Range<usize>) -> WindowDataset {
        WindowDataset {
            lookback: self.lookback,
            tickers: self.tickers.clone(),
            samples: self.samples[range].to_vec(),
        }
    }
}

pub fn make_windows(panel: &ScaledPanel, lookback: usize) -> Result<WindowDataset> {
    let days = panel.dates.len();
    if lookback == 0 || days <= lookback {
        return Err(DataError::SliceTooShort { days, lookback });
    }
    let samples = (lookback..days)
        .map(|t| WindowSample {
            input: panel.values.slice(s![t - lookback..t, ..]).to_owned(),
            target: panel.values.row(t).to_owned(),
            input_last_date: panel.dates[t - 1],
            target_date: panel.dates[t],
        })
        .collect();
    Ok(WindowDataset {
        lookback,
        tickers: panel.tickers.clone(),
        samples,
    })
}

/// Trailing mean over `window` days; the first `window - 1` entries are `None`.
pub fn moving_average(closes: &[f64], window: NonZeroUsize) -> Vec<Option<f64>> {
    let w = window.get();
    (0..closes.len())
        .map(|t| {
            if t + 1 < w {
                None
            } else {
                let slice = &closes[t + 1 - w..=t];
                Some(slice.iter().sum::<f64>() / w as f64)
            }
        })
        .collect()
}
