//! Example-based explainers. Each one scores every training example against
//! an explanandum; an [`Explanation`] keeps the top `N` by score.
//!
//! * IF: `−∇ℓ(t)ᵀ (H + λI)⁻¹ ∇ℓ(z)`, the derivative of the loss at `t`
//!   when `z` is upweighted.
//! * RIF: the IF score divided by `sqrt(self_influence(z) + 1e−8)`.
//! * TraceIn: `Σ_c η_c ∇ℓ(θ_c, z)·∇ℓ(θ_c, t)` over recorded checkpoints.
//! * DataModels: ridge coefficients of a linear map from training-subset
//!   indicators to the explanandum's margin under models trained on those
//!   subsets.
//!
//! Gradients at `t` use the label the model predicts for `t`. All gradients
//! are of the data term only; the l2 penalty enters through the Hessian.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, ExampleId, LabeledExample};
use crate::error::{Error, Result};
use crate::linalg::{dot, Cholesky};
use crate::model::{self, Arch, Checkpoint, HessianOperator, ModelParams, TrainConfig};
use crate::{par, seed};

pub const RIF_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    If,
    Rif,
    TraceIn,
    DataModels,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::If, Method::Rif, Method::TraceIn, Method::DataModels];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::If => "if",
            Method::Rif => "rif",
            Method::TraceIn => "tracein",
            Method::DataModels => "datamodels",
        }
    }

    pub fn display_name(&self) -> &'static str {
        match self {
            Method::If => "IF",
            Method::Rif => "RIF",
            Method::TraceIn => "TraceIn",
            Method::DataModels => "DM",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "if" | "influence" => Ok(Method::If),
            "rif" | "relatif" => Ok(Method::Rif),
            "tracein" | "tracin" => Ok(Method::TraceIn),
            "datamodels" | "dm" => Ok(Method::DataModels),
            other => Err(Error::arg(format!("unknown explainer {other:?}"))),
        }
    }
}

/// An instance to explain: an identifier and its features. Labels are not
/// needed; explanations explain the model's own outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanandum {
    pub id: ExampleId,
    pub x: Vec<f64>,
}

impl From<&LabeledExample> for Explanandum {
    fn from(e: &LabeledExample) -> Self {
        Self {
            id: e.id,
            x: e.x.clone(),
        }
    }
}

pub fn explananda_of(data: &Dataset) -> Vec<Explanandum> {
    data.iter().map(Explanandum::from).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub id: ExampleId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub explanandum_id: ExampleId,
    pub predicted_label: u8,
    pub members: Vec<Member>,
}

impl Explanation {
    pub fn ids(&self) -> impl Iterator<Item = ExampleId> + '_ {
        self.members.iter().map(|m| m.id)
    }
}

/// Top `n` training examples by score, descending, ties by ascending ID.
pub fn top_n(train: &Dataset, scores: &[f64], n: usize) -> Result<Vec<Member>> {
    if scores.len() != train.len() {
        return Err(Error::arg(format!(
            "{} scores for {} training examples",
            scores.len(),
            train.len()
        )));
    }
    if let Some(pos) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::arg(format!(
            "non-finite score for training example {}",
            train.examples()[pos].id
        )));
    }
    let mut members: Vec<Member> = train
        .iter()
        .zip(scores)
        .map(|(e, &score)| Member { id: e.id, score })
        .collect();
    members.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    members.truncate(n);
    Ok(members)
}

/// Common interface over the four methods.
pub trait Explainer: Sync {
    fn method(&self) -> Method;

    fn train_set(&self) -> &Dataset;

    fn predicted_label(&self, t: &Explanandum) -> Result<u8>;

    /// One score per training example, in training-set order.
    fn scores(&self, t: &Explanandum) -> Result<Vec<f64>>;
}

pub fn explain(explainer: &dyn Explainer, t: &Explanandum, n: usize) -> Result<Explanation> {
    if n == 0 {
        return Err(Error::arg("explanation size N must be at least 1"));
    }
    let scores = explainer.scores(t)?;
    Ok(Explanation {
        explanandum_id: t.id,
        predicted_label: explainer.predicted_label(t)?,
        members: top_n(explainer.train_set(), &scores, n)?,
    })
}

/// Explains every explanandum once per requested size, scoring each
/// explanandum only once. Results are keyed by `N` and follow the order of
/// `explananda`.
pub fn explain_all(
    explainer: &dyn Explainer,
    explananda: &[Explanandum],
    sizes: &[usize],
) -> Result<BTreeMap<usize, Vec<Explanation>>> {
    if sizes.contains(&0) {
        return Err(Error::arg("explanation size N must be at least 1"));
    }
    let max_n = sizes.iter().copied().max().unwrap_or(0);
    let ranked: Vec<Result<(u8, Vec<Member>)>> = par::map_indexed(explananda.len(), |i| {
        let t = &explananda[i];
        let scores = explainer.scores(t)?;
        Ok((
            explainer.predicted_label(t)?,
            top_n(explainer.train_set(), &scores, max_n)?,
        ))
    });
    let ranked: Vec<(u8, Vec<Member>)> = ranked.into_iter().collect::<Result<_>>()?;
    let mut out = BTreeMap::new();
    for &n in sizes {
        let exps = explananda
            .iter()
            .zip(&ranked)
            .map(|(t, (label, members))| Explanation {
                explanandum_id: t.id,
                predicted_label: *label,
                members: members.iter().take(n).copied().collect(),
            })
            .collect();
        out.insert(n, exps);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Influence functions

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfluenceConfig {
    pub damping: f64,
    pub cg_tol: f64,
    pub max_iter: usize,
    /// The l2 penalty of the training objective; part of the Hessian.
    pub l2_reg: f64,
}

impl Default for InfluenceConfig {
    fn default() -> Self {
        Self {
            damping: 0.01,
            cg_tol: 1e-8,
            max_iter: 1000,
            l2_reg: 0.01,
        }
    }
}

fn t_gradient(model: &ModelParams, t: &Explanandum) -> Result<(u8, Vec<f64>)> {
    let label = model.predict(&t.x)?;
    Ok((label, model.grad_loss_xy(&t.x, label, 0.0)?))
}

fn check_damping(cfg: &InfluenceConfig) -> Result<()> {
    if !(cfg.damping > 0.0) {
        return Err(Error::arg("influence damping must be positive"));
    }
    Ok(())
}

/// `−∇ℓ(t)ᵀ (H + λI)⁻¹ ∇ℓ(z)` computed from scratch.
pub fn if_score(
    model: &ModelParams,
    train: &Dataset,
    z: &LabeledExample,
    t: &Explanandum,
    cfg: &InfluenceConfig,
) -> Result<f64> {
    check_damping(cfg)?;
    let (_, gt) = t_gradient(model, t)?;
    let gz = model.grad_loss(z, 0.0)?;
    let op = HessianOperator::new(model, train, cfg.l2_reg, cfg.damping)?;
    let s = op.solve(&gt, cfg.cg_tol, cfg.max_iter)?.x;
    Ok(-dot(&s, &gz))
}

/// `∇ℓ(z)ᵀ (H + λI)⁻¹ ∇ℓ(z)`, clamped at zero against round-off.
pub fn self_influence(
    model: &ModelParams,
    train: &Dataset,
    z: &LabeledExample,
    cfg: &InfluenceConfig,
) -> Result<f64> {
    check_damping(cfg)?;
    let gz = model.grad_loss(z, 0.0)?;
    let op = HessianOperator::new(model, train, cfg.l2_reg, cfg.damping)?;
    let s = op.solve(&gz, cfg.cg_tol, cfg.max_iter)?.x;
    Ok(dot(&s, &gz).max(0.0))
}

pub fn rif_score(
    model: &ModelParams,
    train: &Dataset,
    z: &LabeledExample,
    t: &Explanandum,
    cfg: &InfluenceConfig,
) -> Result<f64> {
    Ok(if_score(model, train, z, t, cfg)? / (self_influence(model, train, z, cfg)? + RIF_EPS).sqrt())
}

/// IF or RIF with training gradients (and, for RIF, self-influences)
/// cached at construction. One inverse-HVP per explanandum.
pub struct InfluenceExplainer {
    model: ModelParams,
    train: Dataset,
    cfg: InfluenceConfig,
    train_grads: Vec<Vec<f64>>,
    self_influence: Option<Vec<f64>>,
}

impl InfluenceExplainer {
    pub fn new(model: ModelParams, train: Dataset, cfg: InfluenceConfig, relative: bool) -> Result<Self> {
        check_damping(&cfg)?;
        let train_grads = train
            .iter()
            .map(|z| model.grad_loss(z, 0.0))
            .collect::<Result<Vec<_>>>()?;
        let mut this = Self {
            model,
            train,
            cfg,
            train_grads,
            self_influence: None,
        };
        if relative {
            this.self_influence = Some(this.compute_self_influence()?);
        }
        Ok(this)
    }

    fn operator(&self) -> Result<HessianOperator<'_>> {
        HessianOperator::new(&self.model, &self.train, self.cfg.l2_reg, self.cfg.damping)
    }

    fn compute_self_influence(&self) -> Result<Vec<f64>> {
        let op = self.operator()?;
        par::map_indexed(self.train_grads.len(), |i| {
            let g = &self.train_grads[i];
            let s = op.solve(g, self.cfg.cg_tol, self.cfg.max_iter)?.x;
            Ok(dot(&s, g).max(0.0))
        })
        .into_iter()
        .collect()
    }

    /// Self-influence of every training example, in training order.
    pub fn self_influences(&self) -> Result<Vec<f64>> {
        match &self.self_influence {
            Some(v) => Ok(v.clone()),
            None => self.compute_self_influence(),
        }
    }

    pub fn model(&self) -> &ModelParams {
        &self.model
    }
}

impl Explainer for InfluenceExplainer {
    fn method(&self) -> Method {
        if self.self_influence.is_some() {
            Method::Rif
        } else {
            Method::If
        }
    }

    fn train_set(&self) -> &Dataset {
        &self.train
    }

    fn predicted_label(&self, t: &Explanandum) -> Result<u8> {
        self.model.predict(&t.x)
    }

    fn scores(&self, t: &Explanandum) -> Result<Vec<f64>> {
        let (_, gt) = t_gradient(&self.model, t)?;
        let s = self
            .operator()?
            .solve(&gt, self.cfg.cg_tol, self.cfg.max_iter)?
            .x;
        let raw = self.train_grads.iter().map(|gz| -dot(&s, gz));
        Ok(match &self.self_influence {
            Some(si) => raw
                .zip(si)
                .map(|(score, si)| score / (si + RIF_EPS).sqrt())
                .collect(),
            None => raw.collect(),
        })
    }
}

// ---------------------------------------------------------------------------
// TraceIn

/// `Σ_c η_c ∇ℓ(θ_c, z)·∇ℓ(θ_c, t)` with `t` labeled by `label`.
pub fn tracein_score(
    arch: Arch,
    checkpoints: &[Checkpoint],
    z: &LabeledExample,
    t: &Explanandum,
    label: u8,
) -> Result<f64> {
    if checkpoints.is_empty() {
        return Err(Error::arg("TraceIn needs at least one checkpoint"));
    }
    let mut total = 0.0;
    for c in checkpoints {
        let m = ModelParams::new(arch, c.theta.clone())?;
        let gz = m.grad_loss(z, 0.0)?;
        let gt = m.grad_loss_xy(&t.x, label, 0.0)?;
        total += c.learning_rate * dot(&gz, &gt);
    }
    Ok(total)
}

/// Picks the checkpoints whose step is listed, or all of them.
pub fn select_checkpoints(all: &[Checkpoint], steps: Option<&[usize]>) -> Result<Vec<Checkpoint>> {
    let selected: Vec<Checkpoint> = match steps {
        None => all.to_vec(),
        Some(steps) => {
            let by_step: HashMap<usize, &Checkpoint> = all.iter().map(|c| (c.step, c)).collect();
            steps
                .iter()
                .map(|s| {
                    by_step
                        .get(s)
                        .map(|c| (*c).clone())
                        .ok_or_else(|| Error::arg(format!("no checkpoint at step {s}")))
                })
                .collect::<Result<_>>()?
        }
    };
    if selected.is_empty() {
        return Err(Error::arg("empty checkpoint selection"));
    }
    Ok(selected)
}

pub struct TraceInExplainer {
    model: ModelParams,
    train: Dataset,
    checkpoints: Vec<(f64, ModelParams)>,
    /// `train_grads[c][i]`: gradient of training example `i` at checkpoint `c`.
    train_grads: Vec<Vec<Vec<f64>>>,
}

impl TraceInExplainer {
    /// `model` supplies the predicted labels; `checkpoints` the trajectory.
    pub fn new(model: ModelParams, train: Dataset, checkpoints: &[Checkpoint]) -> Result<Self> {
        if checkpoints.is_empty() {
            return Err(Error::arg("TraceIn needs at least one checkpoint"));
        }
        let checkpoints = checkpoints
            .iter()
            .map(|c| Ok((c.learning_rate, ModelParams::new(model.arch, c.theta.clone())?)))
            .collect::<Result<Vec<_>>>()?;
        let train_grads = checkpoints
            .iter()
            .map(|(_, m)| train.iter().map(|z| m.grad_loss(z, 0.0)).collect())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model,
            train,
            checkpoints,
            train_grads,
        })
    }
}

impl Explainer for TraceInExplainer {
    fn method(&self) -> Method {
        Method::TraceIn
    }

    fn train_set(&self) -> &Dataset {
        &self.train
    }

    fn predicted_label(&self, t: &Explanandum) -> Result<u8> {
        self.model.predict(&t.x)
    }

    fn scores(&self, t: &Explanandum) -> Result<Vec<f64>> {
        let label = self.model.predict(&t.x)?;
        let mut scores = vec![0.0; self.train.len()];
        for ((lr, m), grads) in self.checkpoints.iter().zip(&self.train_grads) {
            let gt = m.grad_loss_xy(&t.x, label, 0.0)?;
            for (s, gz) in scores.iter_mut().zip(grads) {
                *s += lr * dot(gz, &gt);
            }
        }
        Ok(scores)
    }
}

// ---------------------------------------------------------------------------
// DataModels

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataModelsConfig {
    pub num_subsets: usize,
    pub subset_fraction: f64,
    /// Ridge penalty; `None` means `1e−3 · num_subsets`.
    pub ridge: Option<f64>,
    pub base_seed: u64,
    /// Training settings for every subset model (its seed is replaced by
    /// `base_seed + subset_index`).
    pub train: TrainConfig,
}

impl DataModelsConfig {
    pub fn ridge_penalty(&self) -> f64 {
        self.ridge.unwrap_or(1e-3 * self.num_subsets as f64)
    }
}

/// Subset indicator vectors: each training example is included with
/// probability `alpha`; a draw missing a class is redrawn.
pub fn sample_subsets(train: &Dataset, m: usize, alpha: f64, seed: u64) -> Result<Vec<Vec<bool>>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::arg("subset fraction must lie in (0, 1]"));
    }
    if !train.has_both_classes() {
        return Err(Error::arg("training data must contain both classes"));
    }
    let mut rng = seed::rng(seed);
    let mut out = Vec::with_capacity(m);
    for j in 0..m {
        let mut attempts = 0;
        loop {
            let mask: Vec<bool> = (0..train.len()).map(|_| rng.random_bool(alpha)).collect();
            let mut seen = [false; 2];
            for (e, &inc) in train.iter().zip(&mask) {
                if inc {
                    seen[e.y as usize] = true;
                }
            }
            if seen[0] && seen[1] {
                out.push(mask);
                break;
            }
            attempts += 1;
            if attempts > 10_000 {
                return Err(Error::arg(format!(
                    "could not draw a two-class subset for index {j}"
                )));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearDatamodels {
    /// `coefficients[k][i]`: weight of training example `i` for target `k`.
    pub coefficients: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

/// Ridge regression with intercept (via centering) from indicator rows to
/// one target column per explanandum. All targets share the factorization.
pub fn fit_linear_datamodels(
    indicators: &[Vec<bool>],
    targets: &[Vec<f64>],
    ridge: f64,
) -> Result<LinearDatamodels> {
    let m = indicators.len();
    if m == 0 {
        return Err(Error::arg("no subsets"));
    }
    if !(ridge > 0.0) {
        return Err(Error::arg("ridge penalty must be positive"));
    }
    let n = indicators[0].len();
    if indicators.iter().any(|r| r.len() != n) {
        return Err(Error::arg("indicator rows differ in length"));
    }
    if targets.iter().any(|t| t.len() != m) {
        return Err(Error::arg("every target needs one value per subset"));
    }
    let mut warnings = Vec::new();
    if m < n {
        warnings.push(format!(
            "{m} subsets for {n} training examples: regression is under-determined"
        ));
    }
    let means: Vec<f64> = (0..n)
        .map(|i| indicators.iter().filter(|r| r[i]).count() as f64 / m as f64)
        .collect();
    let constant = means.iter().filter(|&&p| p == 0.0 || p == 1.0).count();
    if constant == n {
        warnings.push("no indicator variance: every subset is identical".into());
    } else if constant > 0 {
        warnings.push(format!("{constant} training examples have constant inclusion"));
    }
    let centered: Vec<Vec<f64>> = indicators
        .iter()
        .map(|r| {
            r.iter()
                .zip(&means)
                .map(|(&b, mu)| f64::from(u8::from(b)) - mu)
                .collect()
        })
        .collect();
    let mut gram = vec![0.0; n * n];
    for row in &centered {
        for i in 0..n {
            if row[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                gram[i * n + j] += row[i] * row[j];
            }
        }
    }
    for i in 0..n {
        gram[i * n + i] += ridge;
    }
    let chol = Cholesky::factor(&gram, n)?;
    let coefficients = targets
        .iter()
        .map(|y| {
            let mean = y.iter().sum::<f64>() / m as f64;
            let mut rhs = vec![0.0; n];
            for (row, yk) in centered.iter().zip(y) {
                let c = yk - mean;
                for (r, xi) in rhs.iter_mut().zip(row) {
                    *r += xi * c;
                }
            }
            chol.solve(&rhs)
        })
        .collect();
    Ok(LinearDatamodels {
        coefficients,
        warnings,
    })
}

/// Trains one model per sampled subset and regresses each explanandum's
/// margin (the logit of its predicted class) on subset membership.
/// Returns one score column per explanandum.
pub fn datamodels_fit(
    arch: Arch,
    train: &Dataset,
    points: &[Explanandum],
    labels: &[u8],
    cfg: &DataModelsConfig,
) -> Result<LinearDatamodels> {
    if points.len() != labels.len() {
        return Err(Error::arg("one predicted label per explanandum required"));
    }
    if cfg.num_subsets < 10 {
        return Err(Error::arg("DataModels needs at least 10 subsets"));
    }
    for t in points {
        if t.x.len() != arch.dim() {
            return Err(Error::arg(format!("explanandum {} has wrong dimension", t.id)));
        }
    }
    let subsets = sample_subsets(
        train,
        cfg.num_subsets,
        cfg.subset_fraction,
        seed::derive(cfg.base_seed, "datamodels/subsets"),
    )?;
    let margins: Vec<Result<Vec<f64>>> = par::map_indexed(subsets.len(), |j| {
        let mask = &subsets[j];
        let subset = train.filter_positions(|i| mask[i])?;
        let mut tc = cfg.train.clone();
        tc.seed = cfg.base_seed.wrapping_add(j as u64);
        let trained = model::train(arch, &subset, &tc).map_err(|e| match e {
            Error::Training { step, message } => Error::Training {
                step,
                message: format!("subset {j}: {message}"),
            },
            other => other,
        })?;
        points
            .iter()
            .zip(labels)
            .map(|(t, &label)| {
                let z = trained.params.logit(&t.x)?;
                Ok(if label == 1 { z } else { -z })
            })
            .collect()
    });
    let margins: Vec<Vec<f64>> = margins.into_iter().collect::<Result<_>>()?;
    // Transpose to one target column per explanandum.
    let targets: Vec<Vec<f64>> = (0..points.len())
        .map(|k| margins.iter().map(|row| row[k]).collect())
        .collect();
    fit_linear_datamodels(&subsets, &targets, cfg.ridge_penalty())
}

pub struct DataModelsExplainer {
    model: ModelParams,
    train: Dataset,
    columns: HashMap<ExampleId, Vec<f64>>,
    warnings: Vec<String>,
}

impl DataModelsExplainer {
    /// Fits datamodels for exactly the given explananda; only those can be
    /// explained afterwards.
    pub fn fit(
        model: ModelParams,
        train: Dataset,
        explananda: &[Explanandum],
        cfg: &DataModelsConfig,
    ) -> Result<Self> {
        let labels = explananda
            .iter()
            .map(|t| model.predict(&t.x))
            .collect::<Result<Vec<_>>>()?;
        let fit = datamodels_fit(model.arch, &train, explananda, &labels, cfg)?;
        let columns = explananda
            .iter()
            .map(|t| t.id)
            .zip(fit.coefficients)
            .collect();
        Ok(Self {
            model,
            train,
            columns,
            warnings: fit.warnings,
        })
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }
}

impl Explainer for DataModelsExplainer {
    fn method(&self) -> Method {
        Method::DataModels
    }

    fn train_set(&self) -> &Dataset {
        &self.train
    }

    fn predicted_label(&self, t: &Explanandum) -> Result<u8> {
        self.model.predict(&t.x)
    }

    fn scores(&self, t: &Explanandum) -> Result<Vec<f64>> {
        self.columns
            .get(&t.id)
            .cloned()
            .ok_or(Error::Reference(t.id))
    }
}

// ---------------------------------------------------------------------------
// JSON lines

pub fn write_jsonl<W: Write>(mut w: W, explanations: &[Explanation]) -> Result<()> {
    for e in explanations {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n").map_err(|e| Error::io("<explanations>", e))?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<Explanation>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i as u64 + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let e: Explanation = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i as u64 + 1,
            message: e.to_string(),
        })?;
        let mut ids: Vec<_> = e.ids().collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Parse {
                line: i as u64 + 1,
                message: "duplicate member id".into(),
            });
        }
        out.push(e);
    }
    Ok(out)
}
