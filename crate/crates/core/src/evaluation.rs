//! Ranking metrics: average precision, MAP and precision-recall curves
//! over Hamming rankings, with label-overlap relevance.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::retrieval::{rank_for, CodeTable, HammingIndex};
use crate::types::{labels_intersect, LabelSet};

/// Retrieval quality of one query set against one database.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub map: f64,
    pub average_precisions: Vec<f64>,
    /// `(recall, precision)` at every cutoff `1..=n_db`, macro-averaged.
    pub pr_curve: Vec<(f64, f64)>,
    pub n_queries: usize,
    pub n_db: usize,
    pub bits: usize,
    /// Ranking depth used for AP, `None` for the full ranking.
    pub cutoff: Option<usize>,
}

impl EvalReport {
    /// Header line `map n_queries n_db b`, then one `recall precision`
    /// line per curve point.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {} {} {}", self.map, self.n_queries, self.n_db, self.bits);
        for (r, p) in &self.pr_curve {
            let _ = writeln!(s, "{r} {p}");
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// 1 iff the two items share a category.
pub fn relevance(query: &[u32], item: &[u32]) -> bool {
    labels_intersect(query, item)
}

/// Mean of precision@p over the relevant positions `p`; 0 when nothing is
/// relevant.
pub fn average_precision(flags: &[bool]) -> f64 {
    average_precision_at(flags, None)
}

/// AP over the first `cutoff` positions, normalized by the relevant items
/// retrieved within that depth.
pub fn average_precision_at(flags: &[bool], cutoff: Option<usize>) -> f64 {
    let depth = cutoff.map_or(flags.len(), |c| c.min(flags.len()));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (p, _) in flags[..depth].iter().enumerate().filter(|(_, &f)| f) {
        hits += 1;
        sum += hits as f64 / (p + 1) as f64;
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

fn check_inputs(
    queries: &CodeTable,
    query_labels: &[LabelSet],
    index: &HammingIndex,
    db_labels: &[LabelSet],
) -> Result<()> {
    if queries.is_empty() {
        return Err(Error::Empty("evaluation: query set"));
    }
    if queries.bits() != index.bits() {
        return Err(Error::Length {
            op: "evaluation (query bits vs database bits)",
            left: queries.bits(),
            right: index.bits(),
        });
    }
    if query_labels.len() != queries.len() {
        return Err(Error::Length {
            op: "evaluation (query labels vs query codes)",
            left: query_labels.len(),
            right: queries.len(),
        });
    }
    if db_labels.len() != index.len() {
        return Err(Error::Length {
            op: "evaluation (database labels vs database codes)",
            left: db_labels.len(),
            right: index.len(),
        });
    }
    Ok(())
}

/// Relevance flags of every query's full ranking.
fn ranked_relevance(
    queries: &CodeTable,
    query_labels: &[LabelSet],
    index: &HammingIndex,
    db_labels: &[LabelSet],
) -> Result<Vec<Vec<bool>>> {
    check_inputs(queries, query_labels, index, db_labels)?;
    (0..queries.len())
        .map(|qi| {
            let ranked = rank_for(queries, qi, index)?;
            ranked
                .into_iter()
                .map(|(id, _)| {
                    db_labels
                        .get(id)
                        .map(|l| relevance(&query_labels[qi], l))
                        .ok_or_else(|| Error::invalid(format!("database id {id} has no labels")))
                })
                .collect()
        })
        .collect()
}

fn curve(rankings: &[Vec<bool>], n_db: usize) -> Vec<(f64, f64)> {
    let nq = rankings.len() as f64;
    let mut recall = vec![0.0; n_db];
    let mut precision = vec![0.0; n_db];
    for flags in rankings {
        let total = flags.iter().filter(|&&f| f).count();
        let mut hits = 0usize;
        for (r, &f) in flags.iter().enumerate() {
            hits += usize::from(f);
            precision[r] += hits as f64 / (r + 1) as f64;
            if total > 0 {
                recall[r] += hits as f64 / total as f64;
            }
        }
    }
    recall.into_iter().zip(precision).map(|(r, p)| (r / nq, p / nq)).collect()
}

/// MAP of `queries` against `index`, plus the precision-recall curve.
/// Queries without any relevant item count with AP 0.
pub fn mean_average_precision(
    queries: &CodeTable,
    query_labels: &[LabelSet],
    index: &HammingIndex,
    db_labels: &[LabelSet],
    cutoff: Option<usize>,
) -> Result<EvalReport> {
    let rankings = ranked_relevance(queries, query_labels, index, db_labels)?;
    let aps: Vec<f64> = rankings.iter().map(|f| average_precision_at(f, cutoff)).collect();
    let map = aps.iter().sum::<f64>() / aps.len() as f64;
    Ok(EvalReport {
        map,
        average_precisions: aps,
        pr_curve: curve(&rankings, index.len()),
        n_queries: queries.len(),
        n_db: index.len(),
        bits: queries.bits(),
        cutoff,
    })
}

/// Macro-averaged `(recall@r, precision@r)` for `r = 1..=n_db`.
pub fn precision_recall_curve(
    queries: &CodeTable,
    query_labels: &[LabelSet],
    index: &HammingIndex,
    db_labels: &[LabelSet],
) -> Result<Vec<(f64, f64)>> {
    let rankings = ranked_relevance(queries, query_labels, index, db_labels)?;
    Ok(curve(&rankings, index.len()))
}
