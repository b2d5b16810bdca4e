//! Metrics over explanations produced outside this crate.

use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use super::config::RunConfig;
use super::run::{overlap_seed, split};
use crate::dataset::load_dataset_with;
use crate::error::{Error, Result};
use crate::explainers::{read_jsonl, Method};
use crate::metrics::{evaluate, MetricReport};

/// Reads explanations (one JSON object per line) and scores them against
/// `dataset`, split into train and test exactly as a run with `config`
/// would split it. Explananda may be any example of the dataset; members
/// must be training examples. `N` is the largest explanation size present.
pub fn explain_file(
    explanations: impl AsRef<Path>,
    dataset: impl AsRef<Path>,
    config: &RunConfig,
    method: Option<Method>,
) -> Result<MetricReport> {
    let dataset = dataset.as_ref();
    let format = config
        .dataset
        .format
        .or_else(|| crate::dataset::DataFormat::from_path(dataset))
        .ok_or_else(|| Error::arg(format!("cannot infer the format of {}", dataset.display())))?;
    let full = load_dataset_with(dataset, format, config.dataset.header)?;
    let (train, _) = split(config, &full)?;

    let path = explanations.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let exps = read_jsonl(BufReader::new(file))?;
    let n = exps.iter().map(|e| e.members.len()).max().unwrap_or(0);
    let targets: HashMap<_, _> = full.iter().map(|e| (e.id, e.x.clone())).collect();
    evaluate(
        method,
        n,
        &exps,
        &train,
        &targets,
        config.evaluation.toggles(),
        overlap_seed(config),
    )
}
