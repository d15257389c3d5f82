//! Co-movement transactions and level-wise Apriori mining.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;

use super::{GraphError, Result};
use crate::market_data::ReturnPanel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    Up,
    Down,
}

/// `(ticker index, direction)`, packed so that items order by ticker first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Item(pub usize);

impl Item {
    pub fn new(ticker: usize, dir: Direction) -> Self {
        Item(ticker * 2 + usize::from(dir == Direction::Down))
    }

    pub fn ticker(self) -> usize {
        self.0 / 2
    }

    pub fn direction(self) -> Direction {
        if self.0 % 2 == 0 {
            Direction::Up
        } else {
            Direction::Down
        }
    }
}

/// Sorted, duplicate-free list of items.
pub type Itemset = Vec<Item>;

/// One transaction per trading day.
#[derive(Debug, Clone, PartialEq)]
pub struct TransactionDb {
    pub tickers: Vec<String>,
    pub move_threshold: f64,
    pub transactions: Vec<Itemset>,
}

impl TransactionDb {
    /// Database over arbitrary items, for callers that are not building
    /// ticker co-movement transactions. Each transaction is sorted and deduped.
    pub fn from_raw(tickers: Vec<String>, transactions: Vec<Vec<Item>>) -> Self {
        let transactions = transactions
            .into_iter()
            .map(|mut t| {
                t.sort_unstable();
                t.dedup();
                t
            })
            .collect();
        Self {
            tickers,
            move_threshold: 0.0,
            transactions,
        }
    }

    pub fn label(&self, item: Item) -> String {
        let dir = match item.direction() {
            Direction::Up => "UP",
            Direction::Down => "DOWN",
        };
        match self.tickers.get(item.ticker()) {
            Some(t) => format!("{t}:{dir}"),
            None => format!("#{}:{dir}", item.ticker()),
        }
    }
}

/// Items `(i, UP)` for `r > delta` and `(i, DOWN)` for `r < -delta`.
pub fn co_movement_transactions(
    returns: &ReturnPanel,
    rows: Range<usize>,
    delta: f64,
) -> Result<TransactionDb> {
    if !(delta >= 0.0) {
        return Err(GraphError::InvalidThreshold {
            name: "move_threshold",
            value: delta,
        });
    }
    let transactions = rows
        .map(|t| {
            returns
                .returns
                .row(t)
                .iter()
                .enumerate()
                .filter_map(|(i, &r)| {
                    if r > delta {
                        Some(Item::new(i, Direction::Up))
                    } else if r < -delta {
                        Some(Item::new(i, Direction::Down))
                    } else {
                        None
                    }
                })
                .collect()
        })
        .collect();
    Ok(TransactionDb {
        tickers: returns.tickers.clone(),
        move_threshold: delta,
        transactions,
    })
}

/// Frequent itemsets with their absolute counts.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequentItemsets {
    pub n_transactions: usize,
    pub min_support: f64,
    pub counts: BTreeMap<Itemset, usize>,
}

impl FrequentItemsets {
    pub fn support(&self, set: &[Item]) -> Option<f64> {
        self.counts
            .get(set)
            .map(|&c| c as f64 / self.n_transactions as f64)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

fn is_subset(small: &[Item], big: &[Item]) -> bool {
    let mut it = big.iter();
    small.iter().all(|x| it.any(|y| y == x))
}

fn frequent(count: usize, n: usize, min_support: f64) -> bool {
    count as f64 / n as f64 >= min_support
}

/// Level-wise Apriori: candidates of size `k` are joins of frequent
/// `(k-1)`-sets sharing a `(k-2)`-prefix, pruned unless every
/// `(k-1)`-subset is frequent, then counted in one pass.
pub fn apriori_frequent(db: &TransactionDb, min_support: f64) -> Result<FrequentItemsets> {
    if !(min_support > 0.0 && min_support <= 1.0) {
        return Err(GraphError::InvalidThreshold {
            name: "min_support",
            value: min_support,
        });
    }
    let n = db.transactions.len();
    if n == 0 {
        return Err(GraphError::EmptyDatabase);
    }

    let mut singles: BTreeMap<Item, usize> = BTreeMap::new();
    for t in &db.transactions {
        for &item in t {
            *singles.entry(item).or_default() += 1;
        }
    }
    let mut level: Vec<Itemset> = singles
        .iter()
        .filter(|(_, &c)| frequent(c, n, min_support))
        .map(|(&i, _)| vec![i])
        .collect();
    let mut counts: BTreeMap<Itemset, usize> = level
        .iter()
        .map(|s| (s.clone(), singles[&s[0]]))
        .collect();

    while level.len() > 1 {
        let known: BTreeSet<&Itemset> = level.iter().collect();
        let mut candidates = Vec::new();
        for (a_idx, a) in level.iter().enumerate() {
            let k = a.len();
            for b in &level[a_idx + 1..] {
                if a[..k - 1] != b[..k - 1] {
                    // level is sorted lexicographically, so no later b shares the prefix
                    break;
                }
                let mut cand = a.clone();
                cand.push(b[k - 1]);
                let all_subsets_frequent = (0..cand.len()).all(|skip| {
                    let sub: Itemset = cand
                        .iter()
                        .enumerate()
                        .filter(|&(i, _)| i != skip)
                        .map(|(_, &x)| x)
                        .collect();
                    known.contains(&sub)
                });
                if all_subsets_frequent {
                    candidates.push(cand);
                }
            }
        }

        let mut cand_counts = vec![0usize; candidates.len()];
        for t in &db.transactions {
            for (c, cand) in cand_counts.iter_mut().zip(&candidates) {
                if cand.len() <= t.len() && is_subset(cand, t) {
                    *c += 1;
                }
            }
        }
        level = candidates
            .into_iter()
            .zip(cand_counts)
            .filter(|&(_, c)| frequent(c, n, min_support))
            .map(|(s, c)| {
                counts.insert(s.clone(), c);
                s
            })
            .collect();
    }

    Ok(FrequentItemsets {
        n_transactions: n,
        min_support,
        counts,
    })
}

/// `antecedent -> consequent` with its interest measures.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub antecedent: Itemset,
    pub consequent: Itemset,
    pub support: f64,
    pub confidence: f64,
    pub lift: f64,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?} -> {:?} (s={}, c={}, l={})",
            self.antecedent, self.consequent, self.support, self.confidence, self.lift
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleSet {
    pub rules: Vec<Rule>,
    pub min_support: f64,
    pub min_confidence: f64,
    pub min_lift: f64,
}

/// Every rule `A -> S \ A` over frequent `S`, kept when
/// `confidence >= min_confidence` and `lift > min_lift`.
///
/// Measures are computed from integer counts (`lift = |S| n / (|A| |B|)`)
/// so threshold comparisons are not disturbed by intermediate rounding.
pub fn mine_rules(freq: &FrequentItemsets, min_confidence: f64, min_lift: f64) -> RuleSet {
    let n = freq.n_transactions as f64;
    let mut rules = Vec::new();
    for (set, &count) in freq.counts.iter().filter(|(s, _)| s.len() >= 2) {
        let k = set.len();
        // proper non-empty subsets as bitmasks over positions in `set`
        for mask in 1..(1u64 << k) - 1 {
            let (antecedent, consequent): (Vec<_>, Vec<_>) = set
                .iter()
                .enumerate()
                .partition(|&(i, _)| mask & (1 << i) != 0);
            let antecedent: Itemset = antecedent.into_iter().map(|(_, &x)| x).collect();
            let consequent: Itemset = consequent.into_iter().map(|(_, &x)| x).collect();
            let (Some(&ca), Some(&cb)) = (freq.counts.get(&antecedent), freq.counts.get(&consequent))
            else {
                // only possible if `freq` is not downward closed
                continue;
            };
            let confidence = count as f64 / ca as f64;
            let lift = (count as f64 * n) / (ca as f64 * cb as f64);
            if confidence >= min_confidence && lift > min_lift {
                rules.push(Rule {
                    antecedent,
                    consequent,
                    support: count as f64 / n,
                    confidence,
                    lift,
                });
            }
        }
    }
    RuleSet {
        rules,
        min_support: freq.min_support,
        min_confidence,
        min_lift,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use ndarray::Array2;

    const A: Item = Item(0);
    const B: Item = Item(2);
    const C: Item = Item(4);
    const D: Item = Item(6);

    fn db(txs: &[&[Item]]) -> TransactionDb {
        TransactionDb::from_raw(
            vec!["A".into(), "B".into(), "C".into(), "D".into()],
            txs.iter().map(|t| t.to_vec()).collect(),
        )
    }

    fn returns(rows: &[&[f64]]) -> ReturnPanel {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        ReturnPanel {
            tickers: (0..rows[0].len()).map(|i| format!("S{}", i + 1)).collect(),
            dates: (0..rows.len()).map(|k| start + chrono::Days::new(k as u64)).collect(),
            returns: Array2::from_shape_fn((rows.len(), rows[0].len()), |(r, c)| rows[r][c]),
        }
    }

    #[test]
    fn item_packing() {
        let up = Item::new(3, Direction::Up);
        let down = Item::new(3, Direction::Down);
        assert_eq!((up.ticker(), up.direction()), (3, Direction::Up));
        assert_eq!((down.ticker(), down.direction()), (3, Direction::Down));
        assert!(up < down && down < Item::new(4, Direction::Up));
    }

    #[test]
    fn transactions_follow_threshold() {
        let r = returns(&[&[0.01, 0.02, -0.01], &[0.0005, -0.0002, 0.0]]);
        let tx = co_movement_transactions(&r, 0..2, 0.001).unwrap();
        assert_eq!(
            tx.transactions[0],
            vec![
                Item::new(0, Direction::Up),
                Item::new(1, Direction::Up),
                Item::new(2, Direction::Down)
            ]
        );
        assert!(tx.transactions[1].is_empty());
        let tx = co_movement_transactions(&r, 0..2, 0.0).unwrap();
        assert_eq!(tx.transactions[1].len(), 2);
        assert!(co_movement_transactions(&r, 0..2, -1.0).is_err());
    }

    #[test]
    fn pair_support_by_count() {
        let d = db(&[&[A, B], &[A, B, C], &[A], &[C]]);
        let f = apriori_frequent(&d, 0.25).unwrap();
        assert_eq!(f.support(&[A, B]), Some(0.5));
        assert_eq!(f.support(&[A, B, C]), Some(0.25));
        assert_eq!(f.support(&[A, C]), Some(0.25));
        assert!(f.support(&[D]).is_none());
    }

    #[test]
    fn full_support_excludes_partial_items() {
        let d = db(&[&[A, B], &[A], &[A, B]]);
        let f = apriori_frequent(&d, 1.0).unwrap();
        assert_eq!(f.counts.keys().cloned().collect::<Vec<_>>(), vec![vec![A]]);
    }

    #[test]
    fn empty_db_and_bad_support() {
        assert_eq!(
            apriori_frequent(&db(&[]), 0.5),
            Err(GraphError::EmptyDatabase)
        );
        assert!(apriori_frequent(&db(&[&[A]]), 0.0).is_err());
        assert!(apriori_frequent(&db(&[&[A]]), 1.5).is_err());
    }

    #[test]
    fn rule_measures_from_counts() {
        // supp(A)=0.5, supp(B)=0.4, supp(AB)=0.4 over ten days
        let mut txs: Vec<&[Item]> = vec![&[A, B]; 4];
        txs.push(&[A]);
        txs.extend(std::iter::repeat(&[C][..]).take(5));
        let f = apriori_frequent(&db(&txs), 0.1).unwrap();
        let rules = mine_rules(&f, 0.0, 1.7);
        let ab = rules
            .rules
            .iter()
            .find(|r| r.antecedent == vec![A] && r.consequent == vec![B])
            .unwrap();
        assert_eq!(ab.confidence, 0.8);
        assert_eq!(ab.lift, 2.0);
        assert_eq!(ab.support, 0.4);
    }

    #[test]
    fn lift_exactly_at_threshold_is_rejected() {
        // n=100, |A|=50, |B|=20, |AB|=17 -> lift = 1700/1000 = 1.7
        let mut txs: Vec<Vec<Item>> = Vec::new();
        txs.extend(std::iter::repeat(vec![A, B]).take(17));
        txs.extend(std::iter::repeat(vec![A]).take(33));
        txs.extend(std::iter::repeat(vec![B]).take(3));
        txs.extend(std::iter::repeat(vec![C]).take(47));
        let d = TransactionDb::from_raw(vec![], txs);
        let f = apriori_frequent(&d, 0.01).unwrap();
        let kept = mine_rules(&f, 0.0, 1.7);
        assert!(kept
            .rules
            .iter()
            .all(|r| !(r.antecedent == vec![A] && r.consequent == vec![B])));
        let looser = mine_rules(&f, 0.0, 1.69);
        let ab = looser
            .rules
            .iter()
            .find(|r| r.antecedent == vec![A] && r.consequent == vec![B])
            .unwrap();
        assert_eq!(ab.lift, 1.7);
    }

    #[test]
    fn independent_items_are_rejected() {
        // A and B independent: each in half the days, together in a quarter
        let d = db(&[&[A, B], &[A], &[B], &[]]);
        let f = apriori_frequent(&d, 0.1).unwrap();
        let rules = mine_rules(&f, 0.0, 1.7);
        assert!(rules.rules.is_empty());
        let all = mine_rules(&f, 0.0, 0.0);
        assert!(all.rules.iter().all(|r| r.lift == 1.0));
    }
}
