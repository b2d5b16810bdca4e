//! Small differentiable binary classifiers.
//!
//! Two architectures share one flat parameter vector `theta`:
//!
//! * `Logreg { dim }`: `theta = (w_1..w_d, b)`, logit `wᵀx + b`.
//! * `Mlp { dim, hidden }`: one tanh hidden layer and a scalar output,
//!   `theta = (W_1 row-major (h×d), b_1 (h), w_2 (h), b_2)`.
//!
//! The loss is binary cross-entropy on the sigmoid of the logit plus an
//! optional `(l2/2)·‖θ‖²` term. Gradients are analytic. The Hessian-vector
//! product is exact for logistic regression and a central difference of
//! analytic gradients for the MLP.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, LabeledExample};
use crate::error::{Error, Result};
use crate::linalg::{self, axpy, dot, norm, CgSolution, Cholesky};
use crate::seed;

/// Probabilities are clamped to `[EPS, 1 − EPS]` inside the loss.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Arch {
    Logreg { dim: usize },
    Mlp { dim: usize, hidden: usize },
}

impl Arch {
    pub fn dim(&self) -> usize {
        match *self {
            Arch::Logreg { dim } | Arch::Mlp { dim, .. } => dim,
        }
    }

    pub fn n_params(&self) -> usize {
        match *self {
            Arch::Logreg { dim } => dim + 1,
            Arch::Mlp { dim, hidden } => hidden * (dim + 1) + hidden + 1,
        }
    }

    pub fn is_convex(&self) -> bool {
        matches!(self, Arch::Logreg { .. })
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Cross-entropy of a logit against a binary label, with the probability of
/// the true label clamped away from 0 and 1.
#[inline]
pub fn bce_from_logit(z: f64, y: u8) -> f64 {
    let p_true = if y == 1 { sigmoid(z) } else { sigmoid(-z) };
    -p_true.clamp(PROB_EPS, 1.0 - PROB_EPS).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: Arch,
    pub theta: Vec<f64>,
}

impl ModelParams {
    pub fn new(arch: Arch, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != arch.n_params() {
            return Err(Error::arg(format!(
                "theta has {} entries, architecture needs {}",
                theta.len(),
                arch.n_params()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("theta has non-finite entries"));
        }
        Ok(Self { arch, theta })
    }

    pub fn zeros(arch: Arch) -> Self {
        Self {
            arch,
            theta: vec![0.0; arch.n_params()],
        }
    }

    /// Logistic regression starts at zero; the MLP at `N(0, 0.01²)` so that
    /// hidden units are not symmetric.
    pub fn initialize(arch: Arch, rng: &mut impl Rng) -> Self {
        match arch {
            Arch::Logreg { .. } => Self::zeros(arch),
            Arch::Mlp { .. } => Self {
                arch,
                theta: (0..arch.n_params())
                    .map(|_| 0.01 * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            },
        }
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.dim() {
            return Err(Error::arg(format!(
                "feature vector has dimension {}, model expects {}",
                x.len(),
                self.arch.dim()
            )));
        }
        Ok(())
    }

    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.logit_unchecked(x))
    }

    fn logit_unchecked(&self, x: &[f64]) -> f64 {
        let t = &self.theta;
        match self.arch {
            Arch::Logreg { dim } => dot(&t[..dim], x) + t[dim],
            Arch::Mlp { dim, hidden } => {
                let (w1, rest) = t.split_at(hidden * dim);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(hidden);
                let mut z = b2[0];
                for j in 0..hidden {
                    let a = dot(&w1[j * dim..(j + 1) * dim], x) + b1[j];
                    z += w2[j] * a.tanh();
                }
                z
            }
        }
    }

    /// Logit and its gradient with respect to theta.
    fn logit_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let t = &self.theta;
        match self.arch {
            Arch::Logreg { dim } => {
                let mut g = Vec::with_capacity(dim + 1);
                g.extend_from_slice(x);
                g.push(1.0);
                (dot(&t[..dim], x) + t[dim], g)
            }
            Arch::Mlp { dim, hidden } => {
                let off_b1 = hidden * dim;
                let off_w2 = off_b1 + hidden;
                let off_b2 = off_w2 + hidden;
                let mut g = vec![0.0; t.len()];
                let mut z = t[off_b2];
                for j in 0..hidden {
                    let a = dot(&t[j * dim..(j + 1) * dim], x) + t[off_b1 + j];
                    let h = a.tanh();
                    let w2 = t[off_w2 + j];
                    z += w2 * h;
                    let da = w2 * (1.0 - h * h);
                    for k in 0..dim {
                        g[j * dim + k] = da * x[k];
                    }
                    g[off_b1 + j] = da;
                    g[off_w2 + j] = h;
                }
                g[off_b2] = 1.0;
                (z, g)
            }
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.logit(x)?))
    }

    /// Hard label: 1 iff the probability is at least 0.5.
    pub fn predict(&self, x: &[f64]) -> Result<u8> {
        Ok(u8::from(self.logit(x)? >= 0.0))
    }

    fn l2_term(&self, l2_reg: f64) -> f64 {
        if l2_reg == 0.0 {
            0.0
        } else {
            0.5 * l2_reg * dot(&self.theta, &self.theta)
        }
    }

    /// Cross-entropy of `example` plus `(l2_reg/2)·‖θ‖²`.
    pub fn loss(&self, example: &LabeledExample, l2_reg: f64) -> Result<f64> {
        Ok(bce_from_logit(self.logit(&example.x)?, example.y) + self.l2_term(l2_reg))
    }

    /// Gradient of a feature vector's loss under an arbitrary label.
    pub fn grad_loss_xy(&self, x: &[f64], y: u8, l2_reg: f64) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let (z, mut g) = self.logit_and_grad(x);
        let residual = sigmoid(z) - f64::from(y);
        for gi in g.iter_mut() {
            *gi *= residual;
        }
        if l2_reg != 0.0 {
            axpy(l2_reg, &self.theta, &mut g);
        }
        Ok(g)
    }

    pub fn grad_loss(&self, example: &LabeledExample, l2_reg: f64) -> Result<Vec<f64>> {
        self.grad_loss_xy(&example.x, example.y, l2_reg)
    }

    pub fn mean_loss(&self, data: &Dataset, l2_reg: f64) -> Result<f64> {
        self.check_dim_data(data)?;
        let sum: f64 = data
            .iter()
            .map(|e| bce_from_logit(self.logit_unchecked(&e.x), e.y))
            .sum();
        Ok(sum / data.len() as f64 + self.l2_term(l2_reg))
    }

    pub fn mean_grad(&self, data: &Dataset, l2_reg: f64) -> Result<Vec<f64>> {
        self.check_dim_data(data)?;
        let mut g = vec![0.0; self.n_params()];
        for e in data {
            let (z, dz) = self.logit_and_grad(&e.x);
            axpy(sigmoid(z) - f64::from(e.y), &dz, &mut g);
        }
        let inv_n = 1.0 / data.len() as f64;
        for gi in g.iter_mut() {
            *gi *= inv_n;
        }
        if l2_reg != 0.0 {
            axpy(l2_reg, &self.theta, &mut g);
        }
        Ok(g)
    }

    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        self.check_dim_data(data)?;
        let correct = data
            .iter()
            .filter(|e| u8::from(self.logit_unchecked(&e.x) >= 0.0) == e.y)
            .count();
        Ok(correct as f64 / data.len() as f64)
    }

    fn check_dim_data(&self, data: &Dataset) -> Result<()> {
        if data.dim() != self.arch.dim() {
            return Err(Error::arg(format!(
                "dataset has dimension {}, model expects {}",
                data.dim(),
                self.arch.dim()
            )));
        }
        Ok(())
    }

    /// `(H + damping·I)·v` for the Hessian of the mean training loss.
    pub fn hvp(&self, train: &Dataset, v: &[f64], l2_reg: f64, damping: f64) -> Result<Vec<f64>> {
        HessianOperator::new(self, train, l2_reg, damping)?.apply(v)
    }

    /// Solves `(H + damping·I)·s = v` by conjugate gradient.
    pub fn inverse_hvp(
        &self,
        train: &Dataset,
        v: &[f64],
        l2_reg: f64,
        damping: f64,
        tol: f64,
        max_iter: usize,
    ) -> Result<Vec<f64>> {
        Ok(HessianOperator::new(self, train, l2_reg, damping)?
            .solve(v, tol, max_iter)?
            .x)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: ModelParams = serde_json::from_str(&text)?;
        ModelParams::new(p.arch, p.theta)
    }
}

/// The damped Hessian of the mean training loss as a linear operator.
/// For logistic regression the per-example curvature weights `p(1−p)` are
/// cached at construction.
pub struct HessianOperator<'a> {
    params: &'a ModelParams,
    train: &'a Dataset,
    l2_reg: f64,
    damping: f64,
    logreg_weights: Option<Vec<f64>>,
}

impl<'a> HessianOperator<'a> {
    pub fn new(
        params: &'a ModelParams,
        train: &'a Dataset,
        l2_reg: f64,
        damping: f64,
    ) -> Result<Self> {
        params.check_dim_data(train)?;
        if damping < 0.0 || !damping.is_finite() {
            return Err(Error::arg("damping must be a finite non-negative number"));
        }
        let logreg_weights = match params.arch {
            Arch::Logreg { .. } => Some(
                train
                    .iter()
                    .map(|e| {
                        let p = sigmoid(params.logit_unchecked(&e.x));
                        p * (1.0 - p)
                    })
                    .collect(),
            ),
            Arch::Mlp { .. } => None,
        };
        Ok(Self {
            params,
            train,
            l2_reg,
            damping,
            logreg_weights,
        })
    }

    pub fn dim(&self) -> usize {
        self.params.n_params()
    }

    pub fn damping(&self) -> f64 {
        self.damping
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let n_params = self.params.n_params();
        if v.len() != n_params {
            return Err(Error::arg(format!(
                "vector has {} entries, model has {n_params} parameters",
                v.len()
            )));
        }
        let mut out = match &self.logreg_weights {
            Some(weights) => {
                let dim = n_params - 1;
                let mut out = vec![0.0; n_params];
                for (e, &w) in self.train.iter().zip(weights) {
                    let zv = dot(&e.x, &v[..dim]) + v[dim];
                    let c = w * zv;
                    axpy(c, &e.x, &mut out[..dim]);
                    out[dim] += c;
                }
                let inv_n = 1.0 / self.train.len() as f64;
                for (o, vi) in out.iter_mut().zip(v) {
                    *o = *o * inv_n + self.l2_reg * vi;
                }
                out
            }
            None => self.mlp_fd(v)?,
        };
        if self.damping != 0.0 {
            axpy(self.damping, v, &mut out);
        }
        Ok(out)
    }

    fn mlp_fd(&self, v: &[f64]) -> Result<Vec<f64>> {
        let v_norm = norm(v);
        if v_norm == 0.0 {
            return Ok(vec![0.0; v.len()]);
        }
        let eps = 1e-4 * (1.0 + norm(&self.params.theta)) / (v_norm + 1e-12);
        let shifted = |sign: f64| {
            let mut p = self.params.clone();
            axpy(sign * eps, v, &mut p.theta);
            p.mean_grad(self.train, self.l2_reg)
        };
        let plus = shifted(1.0)?;
        let minus = shifted(-1.0)?;
        Ok(plus
            .iter()
            .zip(&minus)
            .map(|(a, b)| (a - b) / (2.0 * eps))
            .collect())
    }

    pub fn solve(&self, v: &[f64], tol: f64, max_iter: usize) -> Result<CgSolution> {
        if v.len() != self.dim() {
            return Err(Error::arg(format!(
                "vector has {} entries, model has {} parameters",
                v.len(),
                self.dim()
            )));
        }
        if !(tol > 0.0) {
            return Err(Error::arg("tolerance must be positive"));
        }
        linalg::conjugate_gradient(|p| self.apply(p), v, tol, max_iter)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    pub learning_rate: f64,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2_reg: f64,
    /// Record a checkpoint every this many SGD steps (and always at the end).
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.1,
            l2_reg: 0.01,
            checkpoint_every: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.checkpoint_every == 0 {
            return Err(Error::arg(
                "epochs, batch_size and checkpoint_every must be at least 1",
            ));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::arg("learning_rate must be positive and finite"));
        }
        if !(self.l2_reg >= 0.0) || !self.l2_reg.is_finite() {
            return Err(Error::arg("l2_reg must be non-negative and finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub params: ModelParams,
    pub checkpoints: Vec<Checkpoint>,
    /// Mean training loss (data term plus l2) after each epoch.
    pub history: Vec<f64>,
}

/// Mini-batch SGD with a fixed learning rate. The shuffle order of every
/// epoch comes from `config.seed`, so runs are reproducible bit for bit.
pub fn train(arch: Arch, data: &Dataset, config: &TrainConfig) -> Result<Trained> {
    config.validate()?;
    if data.dim() != arch.dim() {
        return Err(Error::arg(format!(
            "dataset has dimension {}, architecture expects {}",
            data.dim(),
            arch.dim()
        )));
    }
    if !data.has_both_classes() {
        return Err(Error::arg("training data must contain both classes"));
    }
    let mut rng = seed::rng(config.seed);
    let mut params = ModelParams::initialize(arch, &mut rng);
    let n = data.len();
    let total_steps = config.epochs * config.steps_per_epoch(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut checkpoints = Vec::new();
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0;
    let mut grad = vec![0.0; params.n_params()];

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let e = &data.examples()[i];
                let (z, dz) = params.logit_and_grad(&e.x);
                axpy(sigmoid(z) - f64::from(e.y), &dz, &mut grad);
            }
            let inv_b = 1.0 / batch.len() as f64;
            for (g, t) in grad.iter_mut().zip(&params.theta) {
                *g = *g * inv_b + config.l2_reg * t;
            }
            axpy(-config.learning_rate, &grad, &mut params.theta);
            step += 1;
            if params.theta.iter().any(|v| !v.is_finite()) {
                return Err(Error::Training {
                    step,
                    message: "parameters became non-finite".into(),
                });
            }
            if step % config.checkpoint_every == 0 || step == total_steps {
                checkpoints.push(Checkpoint {
                    step,
                    learning_rate: config.learning_rate,
                    theta: params.theta.clone(),
                });
            }
        }
        let loss = params.mean_loss(data, config.l2_reg)?;
        if !loss.is_finite() {
            return Err(Error::Training {
                step,
                message: "loss became non-finite".into(),
            });
        }
        history.push(loss);
    }
    Ok(Trained {
        params,
        checkpoints,
        history,
    })
}

/// Deterministic full-batch fit of regularized logistic regression by
/// damped Newton iterations with backtracking, run until the gradient norm
/// of the mean objective drops below `tol`.
pub fn fit_logreg_full_batch(
    data: &Dataset,
    l2_reg: f64,
    tol: f64,
    max_iter: usize,
) -> Result<ModelParams> {
    let arch = Arch::Logreg { dim: data.dim() };
    let p = arch.n_params();
    let mut params = ModelParams::zeros(arch);
    let mut objective = params.mean_loss(data, l2_reg)?;
    for iter in 0..max_iter {
        let g = params.mean_grad(data, l2_reg)?;
        if norm(&g) <= tol {
            return Ok(params);
        }
        // Dense Hessian; a tiny ridge keeps unregularized fits solvable.
        let op = HessianOperator::new(&params, data, l2_reg, 1e-12)?;
        let mut h = vec![0.0; p * p];
        let mut unit = vec![0.0; p];
        for j in 0..p {
            unit[j] = 1.0;
            let col = op.apply(&unit)?;
            unit[j] = 0.0;
            for i in 0..p {
                h[i * p + j] = col[i];
            }
        }
        let dir = Cholesky::factor(&h, p)?.solve(&g);
        let gnorm = norm(&g);
        let mut step = 1.0;
        loop {
            let mut cand = params.clone();
            axpy(-step, &dir, &mut cand.theta);
            let obj = cand.mean_loss(data, l2_reg)?;
            let armijo = obj <= objective - 1e-4 * step * dot(&g, &dir);
            // Close to the optimum the predicted decrease drops below the
            // rounding error of the objective; judge by the gradient instead.
            let flat = (obj - objective).abs() <= 1e-14 * objective.abs().max(1.0)
                && norm(&cand.mean_grad(data, l2_reg)?) < gnorm;
            if armijo || flat || step < 1e-10 {
                params = cand;
                objective = obj;
                break;
            }
            step *= 0.5;
        }
        if !objective.is_finite() {
            return Err(Error::Training {
                step: iter + 1,
                message: "objective became non-finite".into(),
            });
        }
    }
    let g = params.mean_grad(data, l2_reg)?;
    if norm(&g) <= tol {
        Ok(params)
    } else {
        Err(Error::Training {
            step: max_iter,
            message: format!("gradient norm {:e} above tolerance {tol:e}", norm(&g)),
        })
    }
}

fn checkpoint_file_name(step: usize) -> String {
    format!("ckpt_{step:08}.json")
}

/// Writes one `{step, learning_rate, theta}` JSON file per checkpoint.
pub fn save_checkpoints(dir: impl AsRef<Path>, checkpoints: &[Checkpoint]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for c in checkpoints {
        let path = dir.join(checkpoint_file_name(c.step));
        fs::write(&path, serde_json::to_string(c)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn load_checkpoints(dir: impl AsRef<Path>) -> Result<Vec<Checkpoint>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|s| s.to_str()) != Some("json") {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        out.push(serde_json::from_str::<Checkpoint>(&text)?);
    }
    out.sort_by_key(|c| c.step);
    if out.windows(2).any(|w| w[0].step == w[1].step) {
        return Err(Error::arg("duplicate checkpoint steps"));
    }
    if out.iter().any(|c| !(c.learning_rate > 0.0)) {
        return Err(Error::arg("checkpoint learning rate must be positive"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_two_cluster;

    fn ex(x: Vec<f64>, y: u8) -> LabeledExample {
        LabeledExample { id: 0, x, y }
    }

    #[test]
    fn n_params_per_arch() {
        assert_eq!(Arch::Logreg { dim: 4 }.n_params(), 5);
        assert_eq!(Arch::Mlp { dim: 3, hidden: 5 }.n_params(), 5 * 4 + 6);
    }

    #[test]
    fn zero_logreg_predicts_half() {
        let m = ModelParams::zeros(Arch::Logreg { dim: 2 });
        assert_eq!(m.predict_proba(&[3.0, -1.0]).unwrap(), 0.5);
        let m = ModelParams::new(Arch::Logreg { dim: 2 }, vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(m.predict_proba(&[0.0, 0.0]).unwrap(), 0.5);
        assert!(m.predict_proba(&[1e3, 0.0]).unwrap() > 1.0 - 1e-12);
        assert!(m.predict_proba(&[1.0]).is_err());
    }

    #[test]
    fn loss_values() {
        let m = ModelParams::zeros(Arch::Logreg { dim: 2 });
        let l = m.loss(&ex(vec![1.0, 2.0], 1), 0.0).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        // ‖θ‖² = 2 with zero logit at x = 0.
        let m = ModelParams::new(Arch::Logreg { dim: 1 }, vec![1.0, 1.0]).unwrap();
        let l = m.loss(&ex(vec![-1.0], 0), 1.0).unwrap();
        assert!((l - (std::f64::consts::LN_2 + 1.0)).abs() < 1e-15);
        let m = ModelParams::new(Arch::Logreg { dim: 1 }, vec![100.0, 0.0]).unwrap();
        assert!(m.loss(&ex(vec![1.0], 1), 0.0).unwrap() <= 1.0001e-12);
        // Clamped on the wrong side.
        let bad = m.loss(&ex(vec![10.0], 0), 0.0).unwrap();
        assert!((bad - (-PROB_EPS.ln())).abs() < 1e-9);
    }

    #[test]
    fn logistic_gradient_at_zero() {
        let m = ModelParams::zeros(Arch::Logreg { dim: 2 });
        let g = m.grad_loss(&ex(vec![1.0, 0.0], 1), 0.0).unwrap();
        assert_eq!(g, vec![-0.5, 0.0, -0.5]);
    }

    #[test]
    fn zero_residual_bias_gradient() {
        // p = 1/2 at zero logit; the mean gradient over a 1/1 label pair at
        // the same point vanishes in the bias coordinate.
        let m = ModelParams::zeros(Arch::Logreg { dim: 1 });
        let g1 = m.grad_loss(&ex(vec![2.0], 1), 0.0).unwrap();
        let g0 = m.grad_loss(&ex(vec![2.0], 0), 0.0).unwrap();
        assert_eq!(g1[1] + g0[1], 0.0);
    }

    #[test]
    fn hvp_of_zero_is_zero() {
        let d = generate_two_cluster(5, 2, 3.0, 0).unwrap();
        for arch in [Arch::Logreg { dim: 2 }, Arch::Mlp { dim: 2, hidden: 3 }] {
            let m = ModelParams::initialize(arch, &mut seed::rng(1));
            let out = m.hvp(&d, &vec![0.0; arch.n_params()], 0.1, 0.5).unwrap();
            assert!(out.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn inverse_hvp_of_zero() {
        let d = generate_two_cluster(5, 2, 3.0, 0).unwrap();
        let m = ModelParams::zeros(Arch::Logreg { dim: 2 });
        let s = m.inverse_hvp(&d, &[0.0; 3], 0.0, 0.01, 1e-8, 0).unwrap();
        assert_eq!(s, vec![0.0; 3]);
    }

    #[test]
    fn single_checkpoint_when_every_is_total() {
        let d = generate_two_cluster(10, 2, 6.0, 0).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            checkpoint_every: 9,
            ..Default::default()
        };
        let t = train(Arch::Logreg { dim: 2 }, &d, &cfg).unwrap();
        assert_eq!(t.checkpoints.len(), 1);
        assert_eq!(t.checkpoints[0].step, 9);
        assert_eq!(t.checkpoints[0].theta, t.params.theta);
    }

    #[test]
    fn train_rejects_single_class() {
        let d = Dataset::from_rows(vec![vec![1.0], vec![2.0]], vec![1, 1]).unwrap();
        assert!(train(Arch::Logreg { dim: 1 }, &d, &TrainConfig::default()).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let d = generate_two_cluster(20, 2, 1.0, 0).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e308,
            ..Default::default()
        };
        let err = train(Arch::Mlp { dim: 2, hidden: 3 }, &d, &cfg).unwrap_err();
        assert!(matches!(err, Error::Training { .. }), "{err}");
    }

    #[test]
    fn newton_fit_reaches_stationarity() {
        let d = generate_two_cluster(15, 3, 1.0, 5).unwrap();
        let m = fit_logreg_full_batch(&d, 0.01, 1e-10, 100).unwrap();
        assert!(norm(&m.mean_grad(&d, 0.01).unwrap()) <= 1e-10);
    }

    #[test]
    fn checkpoint_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cps = vec![
            Checkpoint {
                step: 3,
                learning_rate: 0.1,
                theta: vec![0.25, -1.5],
            },
            Checkpoint {
                step: 12,
                learning_rate: 0.1,
                theta: vec![1.0 / 3.0, 2.0],
            },
        ];
        save_checkpoints(dir.path(), &cps).unwrap();
        assert_eq!(load_checkpoints(dir.path()).unwrap(), cps);
    }
}
