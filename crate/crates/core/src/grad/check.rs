//! Central finite-difference verification of analytic gradients.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Result, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    /// Perturbation for `(f(x + h) - f(x - h)) / 2h`.
    pub h: f64,
    /// Coordinates checked per parameter; `None` checks all of them.
    pub max_coords: Option<usize>,
    /// Seed for coordinate sampling.
    pub seed: u64,
    /// Smallest denominator of the relative error. Central differences in
    /// f64 carry absolute noise near 1e-11, so gradients below this scale
    /// are effectively compared in absolute terms.
    pub floor: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            max_coords: None,
            seed: 0,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, flat coordinate)` of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

fn loss_at<F>(params: &[Array2<f64>], build: &F) -> Result<f64>
where
    F: Fn(&Graph, &[Var]) -> Result<Var>,
{
    let g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = build(&g, &vars)?;
    Ok(g.scalar(loss))
}

/// Compares reverse-mode gradients of `build` against central differences.
///
/// `build` must be deterministic: it receives a fresh graph and the
/// parameters as tracked leaves, and returns a `1 x 1` loss. The error per
/// coordinate is `|a - n| / max(|a|, |n|, floor)`.
pub fn gradient_check<F>(params: &[Array2<f64>], opts: &CheckOptions, build: F) -> Result<CheckReport>
where
    F: Fn(&Graph, &[Var]) -> Result<Var>,
{
    let g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = build(&g, &vars)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Array2<f64>> = grads
        .collect(&vars)
        .into_iter()
        .map(|a| a.as_standard_layout().into_owned())
        .collect();
    drop(g);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = CheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: 0,
    };
    let mut work: Vec<Array2<f64>> = params
        .iter()
        .map(|p| p.as_standard_layout().into_owned())
        .collect();
    for pi in 0..params.len() {
        let n = work[pi].len();
        let coords: Vec<usize> = match opts.max_coords {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for flat in coords {
            let orig = work[pi].as_slice().expect("standard layout")[flat];
            work[pi].as_slice_mut().expect("standard layout")[flat] = orig + opts.h;
            let up = loss_at(&work, &build)?;
            work[pi].as_slice_mut().expect("standard layout")[flat] = orig - opts.h;
            let down = loss_at(&work, &build)?;
            work[pi].as_slice_mut().expect("standard layout")[flat] = orig;

            let numeric = (up - down) / (2.0 * opts.h);
            let a = analytic[pi].as_slice().expect("standard layout")[flat];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((pi, flat));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
