mod common;

use chrono::{Days, NaiveDate};
use hybridcast::market_data::ReturnPanel;
use hybridcast::relation_graph::{
    apriori_frequent, build_relation_graph, mine_rules, normalized_adjacency, pearson_matrix, GraphConfig,
    Item, Provenance, StockGraph, TransactionDb,
};
use ndarray::Array2;
use proptest::prelude::*;

fn returns_strategy() -> impl Strategy<Value = ReturnPanel> {
    (4usize..40, 2usize..6).prop_flat_map(|(t, n)| {
        prop::collection::vec(-0.1f64..0.1, t * n).prop_map(move |v| {
            let d0 = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
            ReturnPanel {
                tickers: (0..n).map(|i| format!("R{i}")).collect(),
                dates: (0..t).map(|k| d0 + Days::new(k as u64)).collect(),
                returns: Array2::from_shape_vec((t, n), v).unwrap(),
            }
        })
    })
}

fn db_strategy() -> impl Strategy<Value = Vec<Vec<Item>>> {
    prop::collection::vec(prop::collection::vec(0usize..6, 0..6), 1..50)
        .prop_map(|ts| ts.into_iter().map(|t| t.into_iter().map(Item).collect()).collect())
}

fn graph_strategy() -> impl Strategy<Value = StockGraph> {
    (1usize..=10).prop_flat_map(|n| {
        prop::collection::vec((0..n, 0..n, 0.01f64..=1.0), 0..25).prop_map(move |edges| {
            let mut g = StockGraph::empty((0..n).map(|i| format!("N{i}")).collect());
            for (a, b, w) in edges {
                if a != b {
                    g.merge_edge(a, b, w, Provenance { correlation: true, association: false });
                }
            }
            g
        })
    })
}

proptest! {
    #[test]
    fn correlation_matrix_invariants(r in returns_strategy()) {
        let Ok(c) = pearson_matrix(&r, 0..r.n_days()) else { return Ok(()) };
        let n = r.tickers.len();
        for i in 0..n {
            prop_assert!((c.rho[[i, i]] - 1.0).abs() < 1e-12);
            for j in 0..n {
                prop_assert_eq!(c.rho[[i, j]], c.rho[[j, i]]);
                prop_assert!((-1.0..=1.0).contains(&c.rho[[i, j]]));
                let x: Vec<f64> = r.returns.column(i).to_vec();
                let y: Vec<f64> = r.returns.column(j).to_vec();
                prop_assert!((c.rho[[i, j]] - common::pearson_direct(&x, &y)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn correlation_is_affine_invariant(r in returns_strategy(), a in 0.1f64..10.0, b in -1.0f64..1.0) {
        let Ok(c) = pearson_matrix(&r, 0..r.n_days()) else { return Ok(()) };
        let mut shifted = r.clone();
        shifted.returns.column_mut(0).mapv_inplace(|x| a * x + b);
        let c2 = pearson_matrix(&shifted, 0..r.n_days()).unwrap();
        for (x, y) in c.rho.iter().zip(c2.rho.iter()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn apriori_matches_enumeration(ts in db_strategy(), min_support in 0.05f64..0.9) {
        let db = TransactionDb::from_raw(vec![], ts.clone());
        let got = apriori_frequent(&db, min_support).unwrap();
        let deduped: Vec<Vec<Item>> = db.transactions.clone();
        prop_assert_eq!(&got.counts, &common::brute_force_itemsets(&deduped, min_support));
        // anti-monotone support
        for (s, &c) in &got.counts {
            for (t, &d) in &got.counts {
                if s.len() < t.len() && s.iter().all(|x| t.contains(x)) {
                    prop_assert!(c >= d);
                }
            }
        }
    }

    #[test]
    fn rules_match_enumeration(ts in db_strategy(), conf in 0.1f64..1.0, lift in 0.5f64..2.5) {
        let db = TransactionDb::from_raw(vec![], ts);
        let freq = apriori_frequent(&db, 0.1).unwrap();
        let mut got: Vec<_> = mine_rules(&freq, conf, lift)
            .rules
            .into_iter()
            .map(|r| (r.antecedent, r.consequent, r.support, r.confidence, r.lift))
            .collect();
        got.sort_by(|x, y| (&x.0, &x.1).cmp(&(&y.0, &y.1)));
        let want = common::brute_force_rules(&freq.counts, freq.n_transactions, conf, lift);
        prop_assert_eq!(got, want);
    }

    #[test]
    fn built_graph_is_simple_and_weighted(r in returns_strategy()) {
        let Ok(build) = build_relation_graph(&r, 0..r.n_days(), &GraphConfig::default()) else { return Ok(()) };
        let n = r.tickers.len();
        let w = build.graph.weight_matrix();
        for i in 0..n {
            prop_assert_eq!(w[[i, i]], 0.0);
            for j in 0..n {
                prop_assert_eq!(w[[i, j]], w[[j, i]]);
            }
        }
        for (&(a, b), e) in &build.graph.edges {
            prop_assert!(a < b);
            prop_assert!(e.weight > 0.0 && e.weight <= 1.0);
        }
        for rule in &build.rules.rules {
            prop_assert!(rule.lift > 1.7);
        }
    }

    #[test]
    fn normalized_adjacency_is_symmetric_and_contractive(g in graph_strategy()) {
        let adj = normalized_adjacency(&g);
        let direct = common::normalized_direct(&g.weight_matrix());
        prop_assert!(common::max_abs_diff(adj.a_hat.view(), direct.view()) < 1e-12);
        prop_assert!(common::max_abs_diff(adj.a_hat.view(), adj.a_hat.t()) == 0.0);
        for ev in common::adjacency_spectrum(&adj) {
            prop_assert!(ev.abs() <= 1.0 + 1e-9, "eigenvalue {}", ev);
        }
    }
}
