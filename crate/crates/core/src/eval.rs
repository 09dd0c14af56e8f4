//! Filtered link-prediction evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{Category, EntityId, RelationCategory, RelationId, Split, TripleStore};
use crate::model::AnyModel;
use crate::scalar::Scalar;

/// Which side of a triple is predicted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// `(h, r, ?)`
    Tail,
    /// `(?, r, t)`, asked as `(t, r⁻¹, ?)`.
    Head,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Tail => "tail",
            Direction::Head => "head",
        }
    }
}

/// Filtered rank of `target` among `scores`, higher is better. Other known
/// answers are skipped; ties with the target count half, so a block of `n`
/// equal scores yields the mean of the ranks it spans.
pub fn filtered_rank<T: Scalar>(scores: &[T], target: EntityId, known: &[EntityId]) -> Result<f64> {
    let st = *scores.get(target).ok_or(Error::Lookup {
        kind: "entity",
        id: target,
        size: scores.len(),
    })?;
    if !st.is_finite() {
        return Err(Error::NonFinite(format!("score of target entity {target}")));
    }
    let (mut above, mut ties) = (0usize, 0usize);
    for (e, &s) in scores.iter().enumerate() {
        if e == target || known.binary_search(&e).is_ok() {
            continue;
        }
        if s > st {
            above += 1;
        } else if s == st {
            ties += 1;
        }
    }
    Ok(1.0 + above as f64 + ties as f64 / 2.0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n_queries: usize,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
}

impl Metrics {
    pub fn from_ranks(ranks: impl IntoIterator<Item = f64>) -> Self {
        let (mut n, mut rr, mut h1, mut h3, mut h10) = (0usize, 0.0, 0.0, 0.0, 0.0);
        for r in ranks {
            n += 1;
            rr += 1.0 / r;
            h1 += (r <= 1.0) as u8 as f64;
            h3 += (r <= 3.0) as u8 as f64;
            h10 += (r <= 10.0) as u8 as f64;
        }
        let d = n.max(1) as f64;
        Metrics {
            n_queries: n,
            mrr: rr / d,
            hits1: h1 / d,
            hits3: h3 / d,
            hits10: h10 / d,
        }
    }
}

/// One evaluated query.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedQuery {
    pub entity: EntityId,
    pub relation: RelationId,
    pub target: EntityId,
    pub direction: Direction,
    pub rank: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub split: Split,
    pub overall: Metrics,
    pub by_direction: BTreeMap<Direction, Metrics>,
    /// Per relation category with both directions pooled; empty unless
    /// categories were given. Every category is present, possibly with zero
    /// queries.
    pub by_category: BTreeMap<Category, Metrics>,
    pub ranks: Vec<RankedQuery>,
}

impl EvalReport {
    pub fn num_queries(&self) -> usize {
        self.overall.n_queries
    }

    fn rows(&self) -> Vec<(String, String, Metrics)> {
        let mut rows = vec![("all".to_string(), "all".to_string(), self.overall)];
        for (d, m) in &self.by_direction {
            rows.push((d.as_str().into(), "all".into(), *m));
        }
        for (c, m) in &self.by_category {
            rows.push(("all".into(), c.label().into(), *m));
        }
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("split,direction,category,n_queries,MRR,H1,H3,H10\n");
        for (d, c, m) in self.rows() {
            let _ = writeln!(
                s,
                "{},{d},{c},{},{:.6},{:.6},{:.6},{:.6}",
                self.split, m.n_queries, m.mrr, m.hits1, m.hits3, m.hits10
            );
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<6} {:<9} {:<8} {:>9} {:>7} {:>7} {:>7} {:>7}\n",
            "split", "direction", "category", "n_queries", "MRR", "H@1", "H@3", "H@10"
        );
        for (d, c, m) in self.rows() {
            let _ = writeln!(
                s,
                "{:<6} {:<9} {:<8} {:>9} {:>7.4} {:>7.4} {:>7.4} {:>7.4}",
                self.split.as_str(),
                d,
                c,
                m.n_queries,
                m.mrr,
                m.hits1,
                m.hits3,
                m.hits10
            );
        }
        s
    }
}

/// Category table: one row per category with the number of split triples
/// (half the pooled query count) followed by MRR and H@10 of each model.
/// Empty categories show `-` for their metrics.
pub fn report_by_category(reports: &[(&str, &EvalReport)]) -> String {
    let mut s = format!("{:<8} {:>9}", "category", "#triples");
    for (name, _) in reports {
        let _ = write!(s, " {:>12} {:>12}", format!("{name} MRR"), format!("{name} H@10"));
    }
    s.push('\n');
    for c in Category::ALL {
        let triples = reports
            .first()
            .and_then(|(_, r)| r.by_category.get(&c))
            .map_or(0, |m| m.n_queries / 2);
        let _ = write!(s, "{:<8} {:>9}", c.label(), triples);
        for (_, r) in reports {
            match r.by_category.get(&c).filter(|m| m.n_queries > 0) {
                Some(m) => {
                    let _ = write!(s, " {:>12.4} {:>12.4}", m.mrr, m.hits10);
                }
                None => {
                    let _ = write!(s, " {:>12} {:>12}", "-", "-");
                }
            }
        }
        s.push('\n');
    }
    s
}

/// Both query directions of every triple in `split`, tail query first.
pub fn split_queries(store: &TripleStore, split: Split) -> Vec<(EntityId, RelationId, EntityId, Direction)> {
    store
        .split(split)
        .iter()
        .flat_map(|t| {
            [
                (t.head, t.relation, t.tail, Direction::Tail),
                (t.tail, store.reverse(t.relation), t.head, Direction::Head),
            ]
        })
        .collect()
}

/// Ranks every query of `split` against all entities with the filtered
/// protocol. Scores are compared as logits, which order entities the same
/// way as probabilities without saturating.
pub fn evaluate<T: Scalar>(
    model: &AnyModel<T>,
    store: &TripleStore,
    split: Split,
    batch_size: usize,
    categories: Option<&BTreeMap<RelationId, RelationCategory>>,
) -> Result<EvalReport> {
    if model.num_entities() != store.num_entities() || model.num_relation_ids() != store.num_relation_ids() {
        return Err(Error::Mismatch(format!(
            "model has {} entities / {} relation ids, dataset has {} / {}",
            model.num_entities(),
            model.num_relation_ids(),
            store.num_entities(),
            store.num_relation_ids()
        )));
    }
    let queries = split_queries(store, split);
    let chunks: Vec<Vec<RankedQuery>> = queries
        .par_chunks(batch_size.max(1))
        .map(|chunk| -> Result<Vec<RankedQuery>> {
            let heads: Vec<_> = chunk.iter().map(|q| q.0).collect();
            let rels: Vec<_> = chunk.iter().map(|q| q.1).collect();
            let logits = model.score_logits(&heads, &rels)?;
            let n = model.num_entities();
            chunk
                .iter()
                .enumerate()
                .map(|(i, &(e, r, target, direction))| {
                    let row = &logits.data()[i * n..(i + 1) * n];
                    let rank = filtered_rank(row, target, store.known_answers(e, r))?;
                    Ok(RankedQuery {
                        entity: e,
                        relation: r,
                        target,
                        direction,
                        rank,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let ranks: Vec<RankedQuery> = chunks.into_iter().flatten().collect();
    Ok(summarize(store, split, ranks, categories))
}

/// Aggregates per-query ranks into a report.
pub fn summarize(
    store: &TripleStore,
    split: Split,
    ranks: Vec<RankedQuery>,
    categories: Option<&BTreeMap<RelationId, RelationCategory>>,
) -> EvalReport {
    let overall = Metrics::from_ranks(ranks.iter().map(|q| q.rank));
    let by_direction = [Direction::Tail, Direction::Head]
        .into_iter()
        .map(|d| (d, Metrics::from_ranks(ranks.iter().filter(|q| q.direction == d).map(|q| q.rank))))
        .collect();
    let mut by_category = BTreeMap::new();
    if let Some(cats) = categories {
        let mut groups: BTreeMap<Category, Vec<f64>> = Category::ALL.iter().map(|&c| (c, Vec::new())).collect();
        for q in &ranks {
            if let Some(c) = cats.get(&store.base_relation(q.relation)) {
                groups.entry(c.category).or_default().push(q.rank);
            }
        }
        by_category = groups
            .into_iter()
            .map(|(k, v)| (k, Metrics::from_ranks(v)))
            .collect();
    }
    EvalReport {
        split,
        overall,
        by_direction,
        by_category,
        ranks,
    }
}
