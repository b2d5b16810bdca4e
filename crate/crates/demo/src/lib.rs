//! Browser demo: small two-cluster experiments run entirely in wasm.
//!
//! Each exported function takes plain numbers, runs a seeded experiment and
//! returns a JSON string for the page to draw. The experiment logic lives in
//! ordinary Rust functions so it is testable natively.

use std::collections::{BTreeSet, HashMap};

use exemplar_core::dataset::{generate_two_cluster, inject_outliers, train_test_split};
use exemplar_core::explainers::{
    explain, explain_all, Explainer, InfluenceConfig, InfluenceExplainer, TraceInExplainer,
};
use exemplar_core::metrics::{active_domain, overlap, popularity, popularity_vs_loss, relevance};
use exemplar_core::model::{train, Trained};
use exemplar_core::rules::{apply_rule, correctness, verify_rule_learning, RuleVerification};
use exemplar_core::seed::derive;
use exemplar_core::{
    Arch, Condition, Dataset, Error, ExampleId, Explanandum, LabeledExample, Member,
    Method, OutlierSpec, Result, Rule, TrainConfig,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const N_PER_CLASS: usize = 100;
const SEPARATION: f64 = 4.0;
const TEST_FRACTION: f64 = 0.25;
const RULE_TEST_SIZE: usize = 50;

#[derive(Debug, Clone, Serialize)]
pub struct Point {
    pub id: ExampleId,
    pub x: [f64; 2],
    pub label: u8,
    /// "outlier", "follower", "breaker" or empty.
    pub role: &'static str,
    pub loss: f64,
}

#[derive(Debug, Serialize)]
pub struct MethodSummary {
    pub method: &'static str,
    pub relevance: f64,
    pub active_domain: usize,
    pub overlap: f64,
    pub max_popularity: f64,
    /// `(id, popularity)` for every training example with non-zero popularity.
    pub popular: Vec<(ExampleId, f64)>,
    pub correctness: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct OutlierResult {
    pub train: Vec<Point>,
    pub test: Vec<Point>,
    pub test_accuracy: f64,
    pub methods: Vec<MethodSummary>,
}

#[derive(Debug, Serialize)]
pub struct RuleResult {
    pub train: Vec<Point>,
    pub rule_test: Vec<Point>,
    pub followers: usize,
    pub breakers: usize,
    pub verification: RuleVerification,
    pub methods: Vec<MethodSummary>,
}

#[derive(Debug, Serialize)]
pub struct PointExplanation {
    pub method: &'static str,
    pub predicted_label: u8,
    pub probability: f64,
    pub members: Vec<Member>,
}

struct World {
    train: Dataset,
    test: Dataset,
    outliers: BTreeSet<ExampleId>,
    trained: Trained,
    config: TrainConfig,
}

fn arch() -> Arch {
    Arch::Logreg { dim: 2 }
}

fn world(seed: u64, flip_fraction: f64) -> Result<World> {
    let full = generate_two_cluster(N_PER_CLASS, 2, SEPARATION, derive(seed, "dataset"))?;
    let (full, outliers) = if flip_fraction > 0.0 {
        inject_outliers(&full, &OutlierSpec::label_flip(flip_fraction), derive(seed, "outliers"))?
    } else {
        (full, BTreeSet::new())
    };
    let (train_set, test) = train_test_split(&full, TEST_FRACTION, derive(seed, "split"))?;
    let mut config = TrainConfig {
        seed: derive(seed, "train"),
        ..TrainConfig::default()
    };
    config.checkpoint_every = config.steps_per_epoch(train_set.len());
    let trained = train(arch(), &train_set, &config)?;
    Ok(World {
        train: train_set,
        test,
        outliers,
        trained,
        config,
    })
}

fn points(data: &Dataset, trained: &Trained, role: impl Fn(ExampleId) -> &'static str) -> Result<Vec<Point>> {
    data.iter()
        .map(|e| {
            Ok(Point {
                id: e.id,
                x: [e.x[0], e.x[1]],
                label: e.y,
                role: role(e.id),
                loss: trained.params.loss(e, 0.0)?,
            })
        })
        .collect()
}

fn explainer(method: Method, trained: &Trained, data: &Dataset, l2_reg: f64) -> Result<Box<dyn Explainer>> {
    let icfg = InfluenceConfig {
        l2_reg,
        ..InfluenceConfig::default()
    };
    Ok(match method {
        Method::If => Box::new(InfluenceExplainer::new(trained.params.clone(), data.clone(), icfg, false)?),
        Method::Rif => Box::new(InfluenceExplainer::new(trained.params.clone(), data.clone(), icfg, true)?),
        Method::TraceIn => Box::new(TraceInExplainer::new(trained.params.clone(), data.clone(), &trained.checkpoints)?),
        Method::DataModels => return Err(Error::Argument("DataModels is too slow for the demo".into())),
    })
}

fn explananda(data: &Dataset) -> Vec<Explanandum> {
    data.iter().map(|e| Explanandum { id: e.id, x: e.x.clone() }).collect()
}

fn summarize(
    method: Method,
    exps: &[exemplar_core::Explanation],
    train_set: &Dataset,
    targets: &HashMap<ExampleId, Vec<f64>>,
    seed: u64,
) -> Result<MethodSummary> {
    let pop = popularity(exps, train_set)?;
    Ok(MethodSummary {
        method: method.as_str(),
        relevance: relevance(exps, train_set, targets)?,
        active_domain: active_domain(exps, train_set)?.0,
        overlap: if exps.len() >= 2 { overlap(exps, seed)?.value } else { 0.0 },
        max_popularity: pop.values().copied().fold(0.0, f64::max),
        popular: pop.into_iter().filter(|(_, p)| *p > 0.0).collect(),
        correctness: None,
    })
}

/// Label-flip outliers, explained by IF and RIF on the test split.
pub fn run_outliers(seed: u64, flip_fraction: f64, n: usize) -> Result<OutlierResult> {
    let w = world(seed, flip_fraction)?;
    let targets: HashMap<_, _> = w.test.iter().map(|e| (e.id, e.x.clone())).collect();
    let ts = explananda(&w.test);
    let mut methods = Vec::new();
    for method in [Method::If, Method::Rif] {
        let ex = explainer(method, &w.trained, &w.train, w.config.l2_reg)?;
        let exps = explain_all(ex.as_ref(), &ts, &[n])?.remove(&n).unwrap_or_default();
        methods.push(summarize(method, &exps, &w.train, &targets, derive(seed, "overlap"))?);
    }
    let role = |id| if w.outliers.contains(&id) { "outlier" } else { "" };
    Ok(OutlierResult {
        train: points(&w.train, &w.trained, role)?,
        test: points(&w.test, &w.trained, role)?,
        test_accuracy: w.trained.params.accuracy(&w.test)?,
        methods,
    })
}

/// Plants "x0 in [lo, hi] => label 1", retrains, and measures how much of
/// each explanation of rule-region points falls inside the region.
pub fn run_rule(seed: u64, lo: f64, hi: f64, breaker_fraction: f64, n: usize) -> Result<RuleResult> {
    let w = world(seed, 0.0)?;
    let rule = Rule {
        condition: Condition::boxed(&[(0, Some(lo), Some(hi))]),
        forced_label: 1,
        breaker_fraction,
    };
    let app = apply_rule(&w.train, &rule, derive(seed, "rule1/apply"))?;
    let after = train(arch(), &app.data, &w.config)?;

    let first_id = w.train.ids().chain(w.test.ids()).max().map_or(0, |m| m + 1);
    let mut picked = Vec::new();
    for batch in 0..20 {
        if picked.len() >= RULE_TEST_SIZE {
            break;
        }
        let fresh = generate_two_cluster(N_PER_CLASS, 2, SEPARATION, derive(seed, &format!("rule1/test/{batch}")))?;
        for e in fresh.iter().filter(|e| rule.condition.holds(&e.x)).take(RULE_TEST_SIZE - picked.len()) {
            picked.push(LabeledExample {
                id: first_id + picked.len() as u64,
                x: e.x.clone(),
                y: 1,
            });
        }
    }
    if picked.is_empty() {
        return Err(Error::RuleNotApplicable);
    }
    let rule_test = Dataset::new(picked)?;
    let verification = verify_rule_learning(
        &w.trained.params,
        &after.params,
        &app.data,
        &rule_test,
        &app.intervened(),
        &app.untouched,
    )?;

    let targets: HashMap<_, _> = rule_test.iter().map(|e| (e.id, e.x.clone())).collect();
    let ts = explananda(&rule_test);
    let mut methods = Vec::new();
    for method in [Method::If, Method::Rif] {
        let ex = explainer(method, &after, &app.data, w.config.l2_reg)?;
        let exps = explain_all(ex.as_ref(), &ts, &[n])?.remove(&n).unwrap_or_default();
        let mut s = summarize(method, &exps, &app.data, &targets, derive(seed, "overlap"))?;
        s.correctness = Some(correctness(&exps, &app.data, &rule, &targets)?);
        methods.push(s);
    }
    let role = |id| {
        if app.breakers.contains(&id) {
            "breaker"
        } else if app.followers.contains(&id) {
            "follower"
        } else {
            ""
        }
    };
    Ok(RuleResult {
        train: points(&app.data, &after, role)?,
        rule_test: points(&rule_test, &after, |_| "")?,
        followers: app.followers.len(),
        breakers: app.breakers.len(),
        verification,
        methods,
    })
}

/// Explains the model's prediction at an arbitrary point.
pub fn explain_at(seed: u64, flip_fraction: f64, x: [f64; 2], method: &str, n: usize) -> Result<PointExplanation> {
    let method: Method = method.parse()?;
    let w = world(seed, flip_fraction)?;
    let ex = explainer(method, &w.trained, &w.train, w.config.l2_reg)?;
    let t = Explanandum { id: u64::MAX, x: x.to_vec() };
    let e = explain(ex.as_ref(), &t, n)?;
    let z = w.trained.params.logit(&t.x)?;
    Ok(PointExplanation {
        method: method.as_str(),
        predicted_label: e.predicted_label,
        probability: 1.0 / (1.0 + (-z).exp()),
        members: e.members,
    })
}

/// Training loss of every example next to its IF popularity, sorted by ID.
pub fn popularity_loss_rows(seed: u64, flip_fraction: f64, n: usize) -> Result<Vec<(ExampleId, f64, f64)>> {
    let w = world(seed, flip_fraction)?;
    let ex = explainer(Method::If, &w.trained, &w.train, w.config.l2_reg)?;
    let exps = explain_all(ex.as_ref(), &explananda(&w.test), &[n])?.remove(&n).unwrap_or_default();
    let pop = popularity(&exps, &w.train)?;
    Ok(popularity_vs_loss(&pop, &w.trained.params, &w.train)?
        .into_iter()
        .map(|r| (r.id, r.popularity, r.loss))
        .collect())
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsValue> {
    let v = r.map_err(|e| JsValue::from_str(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = outlierExperiment)]
pub fn outlier_experiment(seed: u32, flip_fraction: f64, n: u32) -> std::result::Result<String, JsValue> {
    to_js(run_outliers(seed.into(), flip_fraction, n as usize))
}

#[wasm_bindgen(js_name = ruleExperiment)]
pub fn rule_experiment(seed: u32, lo: f64, hi: f64, breaker_fraction: f64, n: u32) -> std::result::Result<String, JsValue> {
    to_js(run_rule(seed.into(), lo, hi, breaker_fraction, n as usize))
}

#[wasm_bindgen(js_name = explainPoint)]
pub fn explain_point(seed: u32, flip_fraction: f64, x0: f64, x1: f64, method: &str, n: u32) -> std::result::Result<String, JsValue> {
    to_js(explain_at(seed.into(), flip_fraction, [x0, x1], method, n as usize))
}
