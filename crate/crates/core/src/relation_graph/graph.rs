use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::Array2;

use super::apriori::RuleSet;
use super::pearson::CorrEdge;
use super::{GraphError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Provenance {
    pub correlation: bool,
    pub association: bool,
}

impl Provenance {
    pub fn label(self) -> &'static str {
        match (self.correlation, self.association) {
            (true, true) => "both",
            (true, false) => "corr",
            (false, true) => "assoc",
            (false, false) => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub weight: f64,
    pub provenance: Provenance,
}

/// Weighted undirected graph over tickers. Keys are `(a, b)` with `a < b`.
#[derive(Debug, Clone, PartialEq)]
pub struct StockGraph {
    pub tickers: Vec<String>,
    pub edges: BTreeMap<(usize, usize), Edge>,
}

impl StockGraph {
    pub fn empty(tickers: Vec<String>) -> Self {
        Self {
            tickers,
            edges: BTreeMap::new(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.tickers.len()
    }

    pub fn edge(&self, a: usize, b: usize) -> Option<&Edge> {
        self.edges.get(&(a.min(b), a.max(b)))
    }

    /// Adds or merges an edge; merged weight is the max, flags are unioned.
    /// Self-loops are ignored.
    pub fn merge_edge(&mut self, a: usize, b: usize, weight: f64, provenance: Provenance) {
        if a == b {
            return;
        }
        let key = (a.min(b), a.max(b));
        self.edges
            .entry(key)
            .and_modify(|e| {
                e.weight = e.weight.max(weight);
                e.provenance.correlation |= provenance.correlation;
                e.provenance.association |= provenance.association;
            })
            .or_insert(Edge { weight, provenance });
    }

    /// Dense symmetric weight matrix with a zero diagonal.
    pub fn weight_matrix(&self) -> Array2<f64> {
        let n = self.n_nodes();
        let mut w = Array2::zeros((n, n));
        for (&(a, b), e) in &self.edges {
            w[[a, b]] = e.weight;
            w[[b, a]] = e.weight;
        }
        w
    }

    /// `ticker_a,ticker_b,weight,provenance` lines, names in lexicographic
    /// order within each line and lines sorted.
    pub fn edge_list_csv(&self) -> String {
        let mut lines: Vec<(String, String, f64, &'static str)> = self
            .edges
            .iter()
            .map(|(&(a, b), e)| {
                let (x, y) = (&self.tickers[a], &self.tickers[b]);
                let (x, y) = if x <= y { (x, y) } else { (y, x) };
                (x.clone(), y.clone(), e.weight, e.provenance.label())
            })
            .collect();
        lines.sort_by(|p, q| (&p.0, &p.1).cmp(&(&q.0, &q.1)));
        let mut out = String::from("ticker_a,ticker_b,weight,provenance\n");
        for (a, b, w, p) in lines {
            writeln!(out, "{a},{b},{w},{p}").expect("write to String");
        }
        out
    }
}

/// Union of correlation edges (weight `|rho|`) and association edges
/// (weight `min(1, lift / lift_cap)` for every cross-ticker pair of a rule).
pub fn assemble_graph(
    tickers: &[String],
    corr_edges: &[CorrEdge],
    rules: &RuleSet,
    lift_cap: f64,
) -> Result<StockGraph> {
    let n = tickers.len();
    let mut graph = StockGraph::empty(tickers.to_vec());
    for e in corr_edges {
        if e.a >= n || e.b >= n {
            return Err(GraphError::UnknownTicker(e.a.max(e.b)));
        }
        graph.merge_edge(
            e.a,
            e.b,
            e.weight(),
            Provenance {
                correlation: true,
                association: false,
            },
        );
    }
    for rule in &rules.rules {
        if let Some(bad) = rule
            .antecedent
            .iter()
            .chain(&rule.consequent)
            .find(|i| i.ticker() >= n)
        {
            return Err(GraphError::UnknownTicker(bad.ticker()));
        }
        let weight = (rule.lift / lift_cap).min(1.0);
        for a in &rule.antecedent {
            for b in &rule.consequent {
                graph.merge_edge(
                    a.ticker(),
                    b.ticker(),
                    weight,
                    Provenance {
                        correlation: false,
                        association: true,
                    },
                );
            }
        }
    }
    Ok(graph)
}

/// Symmetric degree-normalised adjacency with self-loops,
/// `D^-1/2 (W + I) D^-1/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormAdj {
    pub a_hat: Array2<f64>,
}

impl NormAdj {
    pub fn n_nodes(&self) -> usize {
        self.a_hat.nrows()
    }

    /// The edgeless operator (`A_hat = I`).
    pub fn identity(n: usize) -> Self {
        Self {
            a_hat: Array2::eye(n),
        }
    }
}

pub fn normalized_adjacency(graph: &StockGraph) -> NormAdj {
    let n = graph.n_nodes();
    let mut w = graph.weight_matrix();
    for i in 0..n {
        w[[i, i]] += 1.0;
    }
    let degree: Vec<f64> = w.rows().into_iter().map(|r| r.sum()).collect();
    let a_hat = Array2::from_shape_fn((n, n), |(i, j)| w[[i, j]] / (degree[i] * degree[j]).sqrt());
    NormAdj { a_hat }
}
