//! Labeling rules `c(x) ⇒ y = forced_label`: injection into a dataset,
//! checks that a retrained model picked the rule up, and the correctness
//! metric (share of condition-satisfying members in explanations of
//! condition-satisfying explananda).

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::{share, Dataset, ExampleId, LabeledExample};
use crate::error::{Error, Result};
use crate::explainers::Explanation;
use crate::model::{bce_from_logit, ModelParams};
use crate::seed;

/// One test inside a rule condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Clause {
    /// `wᵀx ≥ b`
    HalfSpace { w: Vec<f64>, b: f64 },
    /// `lo ≤ x[coord] ≤ hi`; a missing bound is unbounded.
    Interval {
        coord: usize,
        lo: Option<f64>,
        hi: Option<f64>,
    },
}

impl Clause {
    pub fn holds(&self, x: &[f64]) -> bool {
        match self {
            Clause::HalfSpace { w, b } => crate::linalg::dot(w, x) >= *b,
            Clause::Interval { coord, lo, hi } => {
                let v = x[*coord];
                lo.is_none_or(|lo| v >= lo) && hi.is_none_or(|hi| v <= hi)
            }
        }
    }

    fn check(&self, dim: usize) -> Result<()> {
        match self {
            Clause::HalfSpace { w, b } => {
                if w.len() != dim {
                    return Err(Error::arg(format!(
                        "half-space normal has dimension {}, data has {dim}",
                        w.len()
                    )));
                }
                if !b.is_finite() || w.iter().any(|v| !v.is_finite()) {
                    return Err(Error::arg("half-space parameters must be finite"));
                }
            }
            Clause::Interval { coord, lo, hi } => {
                if *coord >= dim {
                    return Err(Error::arg(format!(
                        "interval on coordinate {coord}, data has dimension {dim}"
                    )));
                }
                if let (Some(lo), Some(hi)) = (lo, hi) {
                    if lo > hi {
                        return Err(Error::arg(format!("empty interval [{lo}, {hi}]")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Conjunction of clauses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub clauses: Vec<Clause>,
}

impl Condition {
    pub fn half_space(w: Vec<f64>, b: f64) -> Self {
        Self {
            clauses: vec![Clause::HalfSpace { w, b }],
        }
    }

    /// A box over a few coordinates: `(coord, lo, hi)` triples.
    pub fn boxed(bounds: &[(usize, Option<f64>, Option<f64>)]) -> Self {
        Self {
            clauses: bounds
                .iter()
                .map(|&(coord, lo, hi)| Clause::Interval { coord, lo, hi })
                .collect(),
        }
    }

    pub fn holds(&self, x: &[f64]) -> bool {
        self.clauses.iter().all(|c| c.holds(x))
    }

    pub fn check(&self, dim: usize) -> Result<()> {
        if self.clauses.is_empty() {
            return Err(Error::arg("rule condition has no clauses"));
        }
        self.clauses.iter().try_for_each(|c| c.check(dim))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub condition: Condition,
    pub forced_label: u8,
    pub breaker_fraction: f64,
}

impl Rule {
    pub fn validate(&self, dim: usize) -> Result<()> {
        self.condition.check(dim)?;
        if self.forced_label > 1 {
            return Err(Error::arg("forced label must be 0 or 1"));
        }
        if !(0.0..=0.5).contains(&self.breaker_fraction) {
            return Err(Error::arg("breaker fraction must lie in [0, 0.5]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RuleApplication {
    pub data: Dataset,
    pub followers: BTreeSet<ExampleId>,
    pub breakers: BTreeSet<ExampleId>,
    pub untouched: BTreeSet<ExampleId>,
}

impl RuleApplication {
    /// Followers and breakers together.
    pub fn intervened(&self) -> BTreeSet<ExampleId> {
        self.followers.union(&self.breakers).copied().collect()
    }
}

/// Relabels every condition-satisfying example: a random
/// `⌊breaker_fraction·k⌋` of them get the opposite of the forced label,
/// the rest the forced label. Features, order and IDs are unchanged.
pub fn apply_rule(data: &Dataset, rule: &Rule, seed: u64) -> Result<RuleApplication> {
    rule.validate(data.dim())?;
    let satisfying: Vec<usize> = data
        .iter()
        .enumerate()
        .filter(|(_, e)| rule.condition.holds(&e.x))
        .map(|(i, _)| i)
        .collect();
    if satisfying.is_empty() {
        return Err(Error::RuleNotApplicable);
    }
    let n_breakers = share(rule.breaker_fraction, satisfying.len());
    let mut rng = seed::rng(seed);
    let breaker_pos: BTreeSet<usize> = index::sample(&mut rng, satisfying.len(), n_breakers)
        .into_iter()
        .map(|j| satisfying[j])
        .collect();
    let satisfying: BTreeSet<usize> = satisfying.into_iter().collect();

    let mut followers = BTreeSet::new();
    let mut breakers = BTreeSet::new();
    let mut untouched = BTreeSet::new();
    let mut examples = data.examples().to_vec();
    for (pos, e) in examples.iter_mut().enumerate() {
        if breaker_pos.contains(&pos) {
            e.y = 1 - rule.forced_label;
            breakers.insert(e.id);
        } else if satisfying.contains(&pos) {
            e.y = rule.forced_label;
            followers.insert(e.id);
        } else {
            untouched.insert(e.id);
        }
    }
    Ok(RuleApplication {
        data: Dataset::new(examples)?,
        followers,
        breakers,
        untouched,
    })
}

/// Held-out rule test set: the candidates satisfying the condition,
/// labeled with the forced label.
pub fn rule_test_set(candidates: &Dataset, rule: &Rule) -> Result<Dataset> {
    let examples: Vec<LabeledExample> = candidates
        .iter()
        .filter(|e| rule.condition.holds(&e.x))
        .map(|e| LabeledExample {
            id: e.id,
            x: e.x.clone(),
            y: rule.forced_label,
        })
        .collect();
    if examples.is_empty() {
        return Err(Error::RuleNotApplicable);
    }
    Dataset::new(examples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleVerification {
    pub accuracy_on_rule: f64,
    pub ll_intervened_before: f64,
    pub ll_intervened_after: f64,
    pub ll_untouched_before: f64,
    pub ll_untouched_after: f64,
    /// Percentage of intervened points whose predicted label changed.
    pub ps_intervened: f64,
    pub ps_untouched: f64,
}

impl RuleVerification {
    pub const CSV_HEADER: &'static str =
        "acc,ll_i_before,ll_i_after,ll_u_before,ll_u_after,ps_i,ps_u";

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            self.accuracy_on_rule,
            self.ll_intervened_before,
            self.ll_intervened_after,
            self.ll_untouched_before,
            self.ll_untouched_after,
            self.ps_intervened,
            self.ps_untouched
        )
    }
}

fn subset<'a>(data: &'a Dataset, ids: &BTreeSet<ExampleId>) -> Result<Vec<&'a LabeledExample>> {
    ids.iter()
        .map(|&id| data.get(id).ok_or(Error::Reference(id)))
        .collect()
}

fn mean_log_likelihood(model: &ModelParams, points: &[&LabeledExample]) -> Result<f64> {
    let mut total = 0.0;
    for e in points {
        total -= bce_from_logit(model.logit(&e.x)?, e.y);
    }
    Ok(total / points.len() as f64)
}

fn percent_changed(before: &ModelParams, after: &ModelParams, points: &[&LabeledExample]) -> Result<f64> {
    let mut changed = 0usize;
    for e in points {
        if before.predict(&e.x)? != after.predict(&e.x)? {
            changed += 1;
        }
    }
    Ok(100.0 * changed as f64 / points.len() as f64)
}

/// Accuracy on held-out rule examples, log-likelihood of post-rule labels
/// under both models and the share of flipped predictions, split into
/// intervened and untouched training points.
pub fn verify_rule_learning(
    model_before: &ModelParams,
    model_after: &ModelParams,
    data_after: &Dataset,
    rule_test: &Dataset,
    intervened: &BTreeSet<ExampleId>,
    untouched: &BTreeSet<ExampleId>,
) -> Result<RuleVerification> {
    if intervened.is_empty() || untouched.is_empty() {
        return Err(Error::arg("intervened and untouched sets must be non-empty"));
    }
    if rule_test.is_empty() {
        return Err(Error::arg("rule test set is empty"));
    }
    let inter = subset(data_after, intervened)?;
    let unt = subset(data_after, untouched)?;
    Ok(RuleVerification {
        accuracy_on_rule: model_after.accuracy(rule_test)?,
        ll_intervened_before: mean_log_likelihood(model_before, &inter)?,
        ll_intervened_after: mean_log_likelihood(model_after, &inter)?,
        ll_untouched_before: mean_log_likelihood(model_before, &unt)?,
        ll_untouched_after: mean_log_likelihood(model_after, &unt)?,
        ps_intervened: percent_changed(model_before, model_after, &inter)?,
        ps_untouched: percent_changed(model_before, model_after, &unt)?,
    })
}

/// Mean share of explanation members satisfying the rule condition, over
/// explanations whose explananda satisfy it.
pub fn correctness(
    explanations: &[Explanation],
    train: &Dataset,
    rule: &Rule,
    explananda: &HashMap<ExampleId, Vec<f64>>,
) -> Result<f64> {
    if explanations.is_empty() {
        return Err(Error::arg("no explanations to evaluate"));
    }
    let mut total = 0.0;
    for e in explanations {
        let t = explananda
            .get(&e.explanandum_id)
            .ok_or(Error::Reference(e.explanandum_id))?;
        if !rule.condition.holds(t) {
            return Err(Error::Contract(format!(
                "explanandum {} does not satisfy the rule condition",
                e.explanandum_id
            )));
        }
        if e.members.is_empty() {
            return Err(Error::arg(format!(
                "explanation of {} has no members",
                e.explanandum_id
            )));
        }
        let mut hits = 0usize;
        for id in e.ids() {
            let z = train.get(id).ok_or(Error::Reference(id))?;
            if rule.condition.holds(&z.x) {
                hits += 1;
            }
        }
        total += hits as f64 / e.members.len() as f64;
    }
    Ok(total / explanations.len() as f64)
}
