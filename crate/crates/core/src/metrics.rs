//! Explainer evaluation metrics over a collection of explanations.
//!
//! * relevance: mean similarity between each explanandum and its members;
//! * popularity: share of explanations containing a training example;
//! * active domain: number of distinct training examples ever used;
//! * overlap: mean pairwise Jaccard similarity of member sets.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, ExampleId};
use crate::error::{Error, Result};
use crate::explainers::{Explanation, Method};
use crate::model::{bce_from_logit, ModelParams};
use crate::{linalg, par, seed};

/// Pair count above which overlap is estimated from a sample.
pub const OVERLAP_EXACT_LIMIT: u64 = 1_000_000;
pub const OVERLAP_SAMPLE_PAIRS: usize = 1_000_000;

/// Cosine similarity clamped at zero. Two zero vectors (or one) score 0.
pub fn similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::arg(format!(
            "similarity of vectors with dimensions {} and {}",
            a.len(),
            b.len()
        )));
    }
    let denom = linalg::norm(a) * linalg::norm(b);
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((linalg::dot(a, b) / denom).clamp(0.0, 1.0))
}

fn non_empty(explanations: &[Explanation]) -> Result<()> {
    if explanations.is_empty() {
        return Err(Error::arg("no explanations to evaluate"));
    }
    Ok(())
}

fn resolve(train: &Dataset, id: ExampleId) -> Result<&[f64]> {
    train.get(id).map(|e| e.x.as_slice()).ok_or(Error::Reference(id))
}

pub fn relevance(
    explanations: &[Explanation],
    train: &Dataset,
    explananda: &HashMap<ExampleId, Vec<f64>>,
) -> Result<f64> {
    non_empty(explanations)?;
    let mut total = 0.0;
    for e in explanations {
        let t = explananda
            .get(&e.explanandum_id)
            .ok_or(Error::Reference(e.explanandum_id))?;
        if e.members.is_empty() {
            return Err(Error::arg(format!(
                "explanation of {} has no members",
                e.explanandum_id
            )));
        }
        let mut s = 0.0;
        for m in &e.members {
            s += similarity(t, resolve(train, m.id)?)?;
        }
        total += s / e.members.len() as f64;
    }
    Ok(total / explanations.len() as f64)
}

/// Every training ID maps to the fraction of explanations containing it
/// (zero for IDs never used).
pub fn popularity(explanations: &[Explanation], train: &Dataset) -> Result<BTreeMap<ExampleId, f64>> {
    non_empty(explanations)?;
    let mut counts: BTreeMap<ExampleId, usize> = train.ids().map(|id| (id, 0)).collect();
    for e in explanations {
        for id in e.ids() {
            *counts.get_mut(&id).ok_or(Error::Reference(id))? += 1;
        }
    }
    let n = explanations.len() as f64;
    Ok(counts
        .into_iter()
        .map(|(id, c)| (id, c as f64 / n))
        .collect())
}

/// Distinct training examples used across the explanations, as a count and
/// as a share of the training set.
pub fn active_domain(explanations: &[Explanation], train: &Dataset) -> Result<(usize, f64)> {
    non_empty(explanations)?;
    let mut used = std::collections::BTreeSet::new();
    for e in explanations {
        for id in e.ids() {
            if train.get(id).is_none() {
                return Err(Error::Reference(id));
            }
            used.insert(id);
        }
    }
    Ok((used.len(), used.len() as f64 / train.len() as f64))
}

fn sorted_ids(e: &Explanation) -> Vec<ExampleId> {
    let mut v: Vec<_> = e.ids().collect();
    v.sort_unstable();
    v
}

/// Jaccard similarity of two sorted ID lists; two empty sets score 1.
pub fn jaccard(a: &[ExampleId], b: &[ExampleId]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub value: f64,
    pub sampled: bool,
    pub pairs: u64,
}

/// Mean Jaccard similarity over unordered pairs of distinct explanations.
/// Exact when there are at most [`OVERLAP_EXACT_LIMIT`] pairs, otherwise a
/// seeded uniform sample of [`OVERLAP_SAMPLE_PAIRS`] pairs.
pub fn overlap(explanations: &[Explanation], seed: u64) -> Result<Overlap> {
    let k = explanations.len();
    if k < 2 {
        return Err(Error::arg("overlap needs at least two explanations"));
    }
    let sets: Vec<Vec<ExampleId>> = explanations.iter().map(sorted_ids).collect();
    let pairs = (k as u64) * (k as u64 - 1) / 2;
    if pairs <= OVERLAP_EXACT_LIMIT {
        // Row sums in parallel, reduced in row order.
        let rows = par::map_indexed(k, |i| {
            sets[i + 1..]
                .iter()
                .map(|s| jaccard(&sets[i], s))
                .sum::<f64>()
        });
        let total: f64 = rows.iter().sum();
        Ok(Overlap {
            value: total / pairs as f64,
            sampled: false,
            pairs,
        })
    } else {
        let mut rng = seed::rng(seed);
        let mut total = 0.0;
        for _ in 0..OVERLAP_SAMPLE_PAIRS {
            let i = rng.random_range(0..k);
            let mut j = rng.random_range(0..k - 1);
            if j >= i {
                j += 1;
            }
            total += jaccard(&sets[i], &sets[j]);
        }
        Ok(Overlap {
            value: total / OVERLAP_SAMPLE_PAIRS as f64,
            sampled: true,
            pairs: OVERLAP_SAMPLE_PAIRS as u64,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopularityLoss {
    pub id: ExampleId,
    pub popularity: f64,
    pub loss: f64,
}

/// Joins popularity with the unregularized per-example loss of the trained
/// model, sorted by ID.
pub fn popularity_vs_loss(
    popularity: &BTreeMap<ExampleId, f64>,
    model: &ModelParams,
    train: &Dataset,
) -> Result<Vec<PopularityLoss>> {
    let mut out = Vec::with_capacity(train.len());
    for e in train {
        let loss = bce_from_logit(model.logit(&e.x)?, e.y);
        out.push(PopularityLoss {
            id: e.id,
            popularity: popularity.get(&e.id).copied().unwrap_or(0.0),
            loss,
        });
    }
    out.sort_by_key(|r| r.id);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricToggles {
    pub relevance: bool,
    pub distinguishability: bool,
}

impl Default for MetricToggles {
    fn default() -> Self {
        Self {
            relevance: true,
            distinguishability: true,
        }
    }
}

/// All metric values for one explainer at one explanation size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: Option<Method>,
    #[serde(rename = "N")]
    pub n: usize,
    pub n_explananda: usize,
    pub similarity: String,
    pub relevance: Option<f64>,
    pub active_domain: Option<usize>,
    pub active_domain_normalized: Option<f64>,
    pub overlap: Option<f64>,
    pub overlap_sampled: Option<bool>,
    pub popularity: Option<BTreeMap<ExampleId, f64>>,
}

pub const SIMILARITY_NAME: &str = "cosine clamped at 0";

pub fn evaluate(
    method: Option<Method>,
    n: usize,
    explanations: &[Explanation],
    train: &Dataset,
    explananda: &HashMap<ExampleId, Vec<f64>>,
    toggles: MetricToggles,
    overlap_seed: u64,
) -> Result<MetricReport> {
    non_empty(explanations)?;
    let mut report = MetricReport {
        method,
        n,
        n_explananda: explanations.len(),
        similarity: SIMILARITY_NAME.to_string(),
        relevance: None,
        active_domain: None,
        active_domain_normalized: None,
        overlap: None,
        overlap_sampled: None,
        popularity: None,
    };
    if toggles.relevance {
        report.relevance = Some(relevance(explanations, train, explananda)?);
    }
    if toggles.distinguishability {
        let (count, norm) = active_domain(explanations, train)?;
        report.active_domain = Some(count);
        report.active_domain_normalized = Some(norm);
        if explanations.len() >= 2 {
            let o = overlap(explanations, overlap_seed)?;
            report.overlap = Some(o.value);
            report.overlap_sampled = Some(o.sampled);
        }
        report.popularity = Some(popularity(explanations, train)?);
    }
    Ok(report)
}

pub fn write_popularity_csv<W: Write>(mut w: W, popularity: &BTreeMap<ExampleId, f64>) -> std::io::Result<()> {
    writeln!(w, "id,pop")?;
    for (id, p) in popularity {
        writeln!(w, "{id},{p}")?;
    }
    Ok(())
}

pub fn write_popularity_loss_csv<W: Write>(mut w: W, rows: &[PopularityLoss]) -> std::io::Result<()> {
    writeln!(w, "id,pop,loss")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.id, r.popularity, r.loss)?;
    }
    Ok(())
}
