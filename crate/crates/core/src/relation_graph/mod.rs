//! Stock relation graph: Pearson-thresholded edges plus Apriori association
//! edges, merged into one weighted undirected graph and normalised for
//! graph convolution.

mod apriori;
mod graph;
mod pearson;

use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use apriori::{
    apriori_frequent, co_movement_transactions, mine_rules, Direction, FrequentItemsets, Item,
    Itemset, Rule, RuleSet, TransactionDb,
};
pub use graph::{assemble_graph, normalized_adjacency, Edge, NormAdj, Provenance, StockGraph};
pub use pearson::{correlation_edges, pearson_matrix, CorrEdge, CorrMatrix};

use crate::market_data::ReturnPanel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("need at least {needed} return days, got {days}")]
    TooFewDays { days: usize, needed: usize },
    #[error("{ticker}: zero return variance over the range")]
    ZeroVariance { ticker: String },
    #[error("transaction database is empty")]
    EmptyDatabase,
    #[error("rule references unknown ticker index {0}")]
    UnknownTicker(usize),
    #[error("invalid {name}: {value}")]
    InvalidThreshold { name: &'static str, value: f64 },
}

pub type Result<T, E = GraphError> = std::result::Result<T, E>;

/// Thresholds for both edge sources.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    pub corr_threshold: f64,
    pub min_support: f64,
    pub min_confidence: f64,
    pub min_lift: f64,
    pub move_threshold: f64,
    pub lift_cap: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            corr_threshold: 0.7,
            min_support: 0.30,
            min_confidence: 0.60,
            min_lift: 1.7,
            move_threshold: 0.001,
            lift_cap: 3.0,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        let checks: [(&'static str, f64, bool); 6] = [
            (
                "corr_threshold",
                self.corr_threshold,
                self.corr_threshold > 0.0 && self.corr_threshold < 1.0,
            ),
            (
                "min_support",
                self.min_support,
                self.min_support > 0.0 && self.min_support <= 1.0,
            ),
            (
                "min_confidence",
                self.min_confidence,
                (0.0..=1.0).contains(&self.min_confidence),
            ),
            ("min_lift", self.min_lift, self.min_lift > 0.0 && self.min_lift.is_finite()),
            (
                "move_threshold",
                self.move_threshold,
                self.move_threshold >= 0.0 && self.move_threshold.is_finite(),
            ),
            ("lift_cap", self.lift_cap, self.lift_cap > 0.0 && self.lift_cap.is_finite()),
        ];
        match checks.iter().find(|c| !c.2) {
            Some(&(name, value, _)) => Err(GraphError::InvalidThreshold { name, value }),
            None => Ok(()),
        }
    }
}

/// Everything produced while building one graph, kept for reporting.
#[derive(Debug, Clone)]
pub struct GraphBuild {
    pub corr: CorrMatrix,
    pub corr_edges: Vec<CorrEdge>,
    pub transactions: TransactionDb,
    pub rules: RuleSet,
    pub graph: StockGraph,
}

impl GraphBuild {
    pub fn adjacency(&self) -> NormAdj {
        normalized_adjacency(&self.graph)
    }

    /// `antecedent,consequent,support,confidence,lift`; itemsets are
    /// `TICKER:DIR` joined by `;`.
    pub fn rules_csv(&self) -> String {
        let label = |set: &[Item]| {
            set.iter()
                .map(|&i| self.transactions.label(i))
                .collect::<Vec<_>>()
                .join(";")
        };
        let mut out = String::from("antecedent,consequent,support,confidence,lift\n");
        for r in &self.rules.rules {
            writeln!(
                out,
                "{},{},{},{},{}",
                label(&r.antecedent),
                label(&r.consequent),
                r.support,
                r.confidence,
                r.lift
            )
            .expect("write to String");
        }
        out
    }
}

/// Runs the whole pipeline over return rows `rows`.
pub fn build_relation_graph(
    returns: &ReturnPanel,
    rows: Range<usize>,
    config: &GraphConfig,
) -> Result<GraphBuild> {
    config.validate()?;
    let corr = pearson_matrix(returns, rows.clone())?;
    let corr_edges = correlation_edges(&corr, config.corr_threshold);
    let transactions = co_movement_transactions(returns, rows, config.move_threshold)?;
    let frequent = apriori_frequent(&transactions, config.min_support)?;
    let rules = mine_rules(&frequent, config.min_confidence, config.min_lift);
    let graph = assemble_graph(&returns.tickers, &corr_edges, &rules, config.lift_cap)?;
    Ok(GraphBuild {
        corr,
        corr_edges,
        transactions,
        rules,
        graph,
    })
}
