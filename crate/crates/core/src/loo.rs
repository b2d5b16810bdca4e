//! Leave-one-out retraining: the exact quantity influence functions
//! approximate. Each fold refits logistic regression without one training
//! example using a deterministic full-batch optimizer, so the deltas carry
//! no SGD noise.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, ExampleId};
use crate::error::{Error, Result};
use crate::explainers::Explanandum;
use crate::model::{bce_from_logit, fit_logreg_full_batch, Arch, ModelParams, TrainConfig};
use crate::par;

/// Largest training set the oracle accepts.
pub const MAX_TRAIN_SIZE: usize = 200;
/// Gradient-norm tolerance of every fold's fit.
pub const FIT_TOL: f64 = 1e-10;
const FIT_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LooResult {
    pub removed_id: ExampleId,
    /// Probe loss after retraining without the example minus the loss with it.
    pub loss_delta: f64,
}

fn probe_loss(model: &ModelParams, probe: &Explanandum, label: u8) -> Result<f64> {
    Ok(bce_from_logit(model.logit(&probe.x)?, label))
}

fn fit(train: &Dataset, l2_reg: f64, fold: Option<ExampleId>) -> Result<ModelParams> {
    fit_logreg_full_batch(train, l2_reg, FIT_TOL, FIT_MAX_ITER).map_err(|e| match (e, fold) {
        (Error::Training { step, message }, Some(id)) => Error::Training {
            step,
            message: format!("fold without example {id}: {message}"),
        },
        (e, _) => e,
    })
}

/// Loss change on `probe` (labeled by the full model's prediction) from
/// removing each training example in turn, ordered by removed ID. Only the
/// l2 penalty of `config` is used; the optimizer is deterministic.
pub fn loo_deltas(
    arch: Arch,
    train: &Dataset,
    probe: &Explanandum,
    config: &TrainConfig,
) -> Result<Vec<LooResult>> {
    if !matches!(arch, Arch::Logreg { .. }) {
        return Err(Error::arg("leave-one-out oracle supports logistic regression only"));
    }
    if arch.dim() != train.dim() {
        return Err(Error::arg("architecture and dataset dimensions differ"));
    }
    if train.len() > MAX_TRAIN_SIZE {
        return Err(Error::arg(format!(
            "leave-one-out on {} examples exceeds the limit of {MAX_TRAIN_SIZE}",
            train.len()
        )));
    }
    let full = fit(train, config.l2_reg, None)?;
    let label = full.predict(&probe.x)?;
    let base = probe_loss(&full, probe, label)?;
    let folds: Vec<Result<LooResult>> = par::map_indexed(train.len(), |i| {
        let id = train.examples()[i].id;
        let reduced = train.filter_positions(|j| j != i)?;
        let m = fit(&reduced, config.l2_reg, Some(id))?;
        Ok(LooResult {
            removed_id: id,
            loss_delta: probe_loss(&m, probe, label)? - base,
        })
    });
    let mut out: Vec<LooResult> = folds.into_iter().collect::<Result<_>>()?;
    out.sort_by_key(|r| r.removed_id);
    Ok(out)
}

pub fn write_csv<W: Write>(mut w: W, results: &[LooResult]) -> std::io::Result<()> {
    writeln!(w, "removed_id,loss_delta")?;
    for r in results {
        writeln!(w, "{},{}", r.removed_id, r.loss_delta)?;
    }
    Ok(())
}
