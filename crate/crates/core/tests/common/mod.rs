//! Independent reference implementations shared by the property suites and
//! the acceptance run. None of them call into the crate's algorithms.

#![allow(dead_code)]

use std::collections::BTreeMap;

use hybridcast::relation_graph::{Item, NormAdj};
use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};

/// Every itemset over the distinct items of `transactions` whose count
/// reaches `min_support * n`, by enumerating all subsets.
pub fn brute_force_itemsets(transactions: &[Vec<Item>], min_support: f64) -> BTreeMap<Vec<Item>, usize> {
    let mut universe: Vec<Item> = transactions.iter().flatten().copied().collect();
    universe.sort_unstable();
    universe.dedup();
    assert!(universe.len() <= 16, "oracle is exponential");
    let n = transactions.len();
    let mut out = BTreeMap::new();
    for mask in 1u32..(1 << universe.len()) {
        let set: Vec<Item> = (0..universe.len()).filter(|&k| mask & (1 << k) != 0).map(|k| universe[k]).collect();
        let count = transactions
            .iter()
            .filter(|t| set.iter().all(|x| t.contains(x)))
            .count();
        if count > 0 && count as f64 / n as f64 >= min_support {
            out.insert(set, count);
        }
    }
    out
}

/// `(antecedent, consequent, support, confidence, lift)` for every split of
/// every frequent set, keeping `confidence >= min_conf` and `lift > min_lift`.
pub fn brute_force_rules(
    sets: &BTreeMap<Vec<Item>, usize>,
    n: usize,
    min_conf: f64,
    min_lift: f64,
) -> Vec<(Vec<Item>, Vec<Item>, f64, f64, f64)> {
    let mut out = Vec::new();
    for (set, &count) in sets.iter().filter(|(s, _)| s.len() >= 2) {
        for mask in 1u32..(1 << set.len()) - 1 {
            let a: Vec<Item> = (0..set.len()).filter(|&k| mask & (1 << k) != 0).map(|k| set[k]).collect();
            let b: Vec<Item> = (0..set.len()).filter(|&k| mask & (1 << k) == 0).map(|k| set[k]).collect();
            let (ca, cb) = (sets[&a], sets[&b]);
            let support = count as f64 / n as f64;
            let confidence = count as f64 / ca as f64;
            let lift = (count * n) as f64 / (ca * cb) as f64;
            if confidence >= min_conf && lift > min_lift {
                out.push((a, b, support, confidence, lift));
            }
        }
    }
    out.sort_by(|x, y| (&x.0, &x.1).cmp(&(&y.0, &y.1)));
    out
}

/// Pearson coefficient written out term by term.
pub fn pearson_direct(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

/// Eigenvalues of a symmetric matrix by a dense solver.
pub fn symmetric_eigenvalues(m: ArrayView2<f64>) -> Vec<f64> {
    let n = m.nrows();
    let d = DMatrix::from_fn(n, n, |i, j| m[[i, j]]);
    d.symmetric_eigen().eigenvalues.iter().copied().collect()
}

/// `D^-1/2 (W + I) D^-1/2` computed directly from a weight matrix.
pub fn normalized_direct(w: &Array2<f64>) -> Array2<f64> {
    let n = w.nrows();
    let a = w + &Array2::<f64>::eye(n);
    let deg: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    Array2::from_shape_fn((n, n), |(i, j)| a[[i, j]] / (deg[i] * deg[j]).sqrt())
}

pub fn max_abs_diff(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn adjacency_spectrum(adj: &NormAdj) -> Vec<f64> {
    symmetric_eigenvalues(adj.a_hat.view())
}
