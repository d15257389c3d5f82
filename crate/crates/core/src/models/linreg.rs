use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView2};

use super::{ModelError, Result};
use crate::market_data::WindowDataset;

/// Diagonal loading applied when the plain normal equations are singular.
pub const RIDGE_LAMBDA: f64 = 1e-8;

/// Per-stock autoregression on the stock's own lags:
/// `y = c_0 + sum_k c_k * x_k`, with `x_1` the oldest day of the window.
#[derive(Debug, Clone, PartialEq)]
pub struct LinRegModel {
    pub lookback: usize,
    /// `N x (L + 1)`; column 0 is the intercept.
    pub coefficients: Array2<f64>,
}

impl LinRegModel {
    /// `(B * N) x L` sample-major inputs to `(B * N) x 1` predictions.
    pub fn predict(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let n = self.coefficients.nrows();
        if inputs.ncols() != self.lookback || inputs.nrows() % n != 0 {
            return Err(ModelError::ShapeMismatch(format!(
                "inputs {:?} do not fit {n} stocks with lookback {}",
                inputs.dim(),
                self.lookback
            )));
        }
        let mut out = Array2::zeros((inputs.nrows(), 1));
        for (r, row) in inputs.rows().into_iter().enumerate() {
            let c = self.coefficients.row(r % n);
            out[[r, 0]] = c[0] + row.dot(&c.slice(ndarray::s![1..]));
        }
        Ok(out)
    }
}

/// Solves `min ||y - [1, x] b||` by normal equations, retrying with
/// `RIDGE_LAMBDA` on the diagonal when the Gram matrix is not positive
/// definite. Returns `[intercept, slopes...]`.
pub fn linreg_fit_design(x: ArrayView2<f64>, y: &[f64]) -> Option<Array1<f64>> {
    let (m, k) = x.dim();
    assert_eq!(m, y.len(), "design rows and targets differ");
    let design = DMatrix::from_fn(m, k + 1, |r, c| if c == 0 { 1.0 } else { x[[r, c - 1]] });
    let target = DVector::from_column_slice(y);
    let gram = design.transpose() * &design;
    let rhs = design.transpose() * target;
    let solve = |a: DMatrix<f64>| a.cholesky().map(|ch| ch.solve(&rhs));
    let beta = solve(gram.clone())
        .or_else(|| solve(gram + DMatrix::identity(k + 1, k + 1) * RIDGE_LAMBDA))?;
    beta.iter()
        .all(|v| v.is_finite())
        .then(|| Array1::from_iter(beta.iter().copied()))
}

/// Fits one regression per stock on the dataset's windows.
pub fn linreg_fit(ds: &WindowDataset) -> Result<LinRegModel> {
    let l = ds.lookback;
    if ds.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if ds.len() <= l + 1 {
        return Err(ModelError::TooFewSamples {
            needed: l + 1,
            got: ds.len(),
        });
    }
    let n = ds.n_tickers();
    let mut coefficients = Array2::zeros((n, l + 1));
    for stock in 0..n {
        let x = Array2::from_shape_fn((ds.len(), l), |(s, k)| ds.samples[s].input[[k, stock]]);
        let y: Vec<f64> = ds.samples.iter().map(|s| s.target[stock]).collect();
        let beta = linreg_fit_design(x.view(), &y).ok_or(ModelError::SingularSystem { stock })?;
        coefficients.row_mut(stock).assign(&beta);
    }
    Ok(LinRegModel {
        lookback: l,
        coefficients,
    })
}
