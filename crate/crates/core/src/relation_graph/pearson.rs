use std::ops::Range;

use ndarray::{s, Array2, Axis};

use super::{GraphError, Result};
use crate::market_data::ReturnPanel;

/// Pairwise Pearson coefficients of daily returns.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrMatrix {
    pub tickers: Vec<String>,
    pub rho: Array2<f64>,
}

/// Correlation of every ticker pair over the return rows in `rows`.
///
/// Two passes: centre each column on its mean, then take normalised inner
/// products. The diagonal is pinned to 1 and off-diagonal values are clamped
/// into `[-1, 1]` against rounding.
pub fn pearson_matrix(returns: &ReturnPanel, rows: Range<usize>) -> Result<CorrMatrix> {
    let days = rows.len();
    if days < 3 {
        return Err(GraphError::TooFewDays { days, needed: 3 });
    }
    let view = returns.returns.slice(s![rows, ..]);
    for (i, col) in view.axis_iter(Axis(1)).enumerate() {
        if col.iter().all(|&v| v == col[0]) {
            return Err(GraphError::ZeroVariance {
                ticker: returns.tickers[i].clone(),
            });
        }
    }
    let means = view.mean_axis(Axis(0)).expect("non-empty range");
    let centred = &view - &means;
    let n = returns.tickers.len();

    let norms: Vec<f64> = centred
        .axis_iter(Axis(1))
        .map(|c| c.dot(&c).sqrt())
        .collect();

    let mut rho = Array2::eye(n);
    for i in 0..n {
        for j in i + 1..n {
            let cov = centred.column(i).dot(&centred.column(j));
            let r = (cov / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            rho[[i, j]] = r;
            rho[[j, i]] = r;
        }
    }
    Ok(CorrMatrix {
        tickers: returns.tickers.clone(),
        rho,
    })
}

/// A strong-correlation edge `a < b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrEdge {
    pub a: usize,
    pub b: usize,
    pub rho: f64,
}

impl CorrEdge {
    pub fn weight(&self) -> f64 {
        self.rho.abs()
    }
}

/// Pairs with `|rho| > tau` (strict).
pub fn correlation_edges(corr: &CorrMatrix, tau: f64) -> Vec<CorrEdge> {
    let n = corr.tickers.len();
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let rho = corr.rho[[a, b]];
            if rho.abs() > tau {
                edges.push(CorrEdge { a, b, rho });
            }
        }
    }
    edges
}
