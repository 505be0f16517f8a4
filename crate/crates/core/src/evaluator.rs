//! Micro precision/recall/F1, precision-recall curves, inflation-grouped F1,
//! and their CSV reports.
//!
//! A [`Fact`] is an extracted `(doc, head, tail, relation)` triple. NA is not
//! representable as a fact, so it never counts as a positive.

use std::collections::{BTreeMap, BTreeSet};
use std::io;

use serde::Serialize;
use thiserror::Error;

use crate::model::PairKey;
use crate::synth_data::LabeledExample;
use crate::types::{DocId, EntityId, RelationId, Source, Task};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("relation {0} has no group")]
    Ungrouped(RelationId),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fact {
    pub doc: DocId,
    pub head: EntityId,
    pub tail: EntityId,
    pub relation: RelationId,
}

impl Fact {
    pub fn new(key: PairKey, relation: RelationId) -> Self {
        Self {
            doc: key.doc,
            head: key.head,
            tail: key.tail,
            relation,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalResult {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl EvalResult {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }
}

pub fn micro_f1(predictions: &BTreeSet<Fact>, gold: &BTreeSet<Fact>) -> EvalResult {
    let tp = predictions.intersection(gold).count();
    EvalResult::from_counts(tp, predictions.len() - tp, gold.len() - tp)
}

/// Gold facts from HA examples.
pub fn gold_facts(examples: &[LabeledExample]) -> BTreeSet<Fact> {
    examples
        .iter()
        .filter(|e| e.source == Source::Human)
        .flat_map(|e| {
            e.target.relations().into_iter().map(move |r| Fact {
                doc: e.doc,
                head: e.head,
                tail: e.tail,
                relation: r,
            })
        })
        .collect()
}

/// One `(fact, score)` per real relation of each scored pair. For the
/// sentence task the NA column (index 0) is dropped and relation `r` reads
/// column `r + 1`.
pub fn scored_facts(scores: &[(PairKey, Vec<f64>)], task: Task) -> Vec<(Fact, f64)> {
    let offset = usize::from(task == Task::Sentence);
    scores
        .iter()
        .flat_map(|(k, s)| {
            s[offset..]
                .iter()
                .enumerate()
                .map(move |(r, &p)| (Fact::new(*k, RelationId(r as u32)), p))
        })
        .collect()
}

/// Document task: every relation with `p >= threshold`.
pub fn threshold_predictions(scores: &[(PairKey, Vec<f64>)], threshold: f64) -> BTreeSet<Fact> {
    scored_facts(scores, Task::Document)
        .into_iter()
        .filter(|(_, p)| *p >= threshold)
        .map(|(f, _)| f)
        .collect()
}

/// Sentence task: the argmax class of each pair, skipped when it is NA.
/// Ties go to the lowest class index.
pub fn argmax_predictions(scores: &[(PairKey, Vec<f64>)]) -> BTreeSet<Fact> {
    scores
        .iter()
        .filter_map(|(k, s)| {
            let best = s
                .iter()
                .enumerate()
                .fold(0, |b, (i, p)| if *p > s[b] { i } else { b });
            (best > 0).then(|| Fact::new(*k, RelationId(best as u32 - 1)))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PrPoint {
    pub rank: usize,
    pub score: f64,
    pub recall: f64,
    pub precision: f64,
}

/// One point per prefix of the predictions sorted by descending score
/// (stable for ties).
pub fn pr_curve(scored: &[(Fact, f64)], gold: &BTreeSet<Fact>) -> Vec<PrPoint> {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].1.total_cmp(&scored[a].1));
    let mut tp = 0;
    order
        .into_iter()
        .enumerate()
        .map(|(i, j)| {
            if gold.contains(&scored[j].0) {
                tp += 1;
            }
            PrPoint {
                rank: i + 1,
                score: scored[j].1,
                recall: if gold.is_empty() { 0.0 } else { tp as f64 / gold.len() as f64 },
                precision: tp as f64 / (i + 1) as f64,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupResult {
    pub group: usize,
    pub relations: Vec<RelationId>,
    pub result: EvalResult,
    /// No gold and no predictions fell into the group.
    pub empty: bool,
}

/// Micro F1 restricted to each group's relations. Groups are numbered
/// `0..n_groups`; every relation seen in the inputs must be grouped.
pub fn f1_by_group(
    predictions: &BTreeSet<Fact>,
    gold: &BTreeSet<Fact>,
    groups: &BTreeMap<RelationId, usize>,
) -> Result<Vec<GroupResult>, EvalError> {
    let n_groups = groups.values().max().map_or(0, |m| m + 1);
    for f in predictions.iter().chain(gold) {
        if !groups.contains_key(&f.relation) {
            return Err(EvalError::Ungrouped(f.relation));
        }
    }
    Ok((0..n_groups)
        .map(|g| {
            let keep = |set: &BTreeSet<Fact>| -> BTreeSet<Fact> {
                set.iter().filter(|f| groups[&f.relation] == g).copied().collect()
            };
            let (p, y) = (keep(predictions), keep(gold));
            GroupResult {
                group: g,
                relations: groups.iter().filter(|(_, v)| **v == g).map(|(r, _)| *r).collect(),
                empty: p.is_empty() && y.is_empty(),
                result: micro_f1(&p, &y),
            }
        })
        .collect())
}

#[derive(Serialize)]
struct MetricsRow<'a> {
    mode: &'a str,
    seed: u64,
    split: &'a str,
    precision: f64,
    recall: f64,
    f1: f64,
    threshold: Option<f64>,
}

/// Metrics CSV: `mode, seed, split, precision, recall, f1, threshold`.
pub fn write_metrics_csv<W: io::Write>(
    w: W,
    rows: &[(&str, u64, &str, EvalResult, Option<f64>)],
) -> Result<(), EvalError> {
    let mut wr = csv::Writer::from_writer(w);
    for &(mode, seed, split, r, threshold) in rows {
        wr.serialize(MetricsRow {
            mode,
            seed,
            split,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
            threshold,
        })?;
    }
    wr.flush()?;
    Ok(())
}

/// PR-curve CSV: `rank, score, recall, precision`.
pub fn write_pr_csv<W: io::Write>(w: W, points: &[PrPoint]) -> Result<(), EvalError> {
    let mut wr = csv::Writer::from_writer(w);
    for p in points {
        wr.serialize(p)?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct GroupRow {
    group: usize,
    inflation_range: String,
    n_relations: usize,
    f1: f64,
}

/// Group CSV: `group, inflation_range, n_relations, f1`. `ranges[g]` is the
/// `(min, max)` inflation of group `g`.
pub fn write_group_csv<W: io::Write>(
    w: W,
    results: &[GroupResult],
    ranges: &[(f64, f64)],
) -> Result<(), EvalError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in results {
        let range = ranges
            .get(r.group)
            .map(|(lo, hi)| format!("{lo:.3}-{hi:.3}"))
            .unwrap_or_default();
        wr.serialize(GroupRow {
            group: r.group,
            inflation_range: range,
            n_relations: r.relations.len(),
            f1: r.result.f1,
        })?;
    }
    wr.flush()?;
    Ok(())
}
