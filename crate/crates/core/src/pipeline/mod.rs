//! Config-driven end-to-end runs.
//!
//! A run generates or loads data, optionally injects class outliers, trains
//! the model, explains every test example with each configured explainer at
//! each explanation size, scores the explanations and, for every configured
//! rule, retrains on relabeled data to measure correctness. All randomness
//! comes from one global seed through [`crate::seed::derive`], so equal
//! configs give byte-identical outputs regardless of thread count; only the
//! manifest carries a timestamp.
//!
//! Output layout:
//!
//! ```text
//! dataset.csv, split.json, model.json, checkpoints/, train_losses.csv
//! explanations/{method}_N{n}.jsonl
//! reports/{method}_N{n}.json
//! summary.json, summary.csv
//! rules/rule{k}/{model_after.json, rule_test.csv, report.json, verification.csv, explanations/}
//! MANIFEST.json
//! ```

pub mod config;
mod external;
mod output;
mod plots;
mod run;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub use config::RunConfig;
pub use external::explain_file;
pub use output::{sha256_hex, FileEntry, Manifest, Materialized, RunStatus, MANIFEST_FILE};
pub use plots::{export_plots, top_popular};
pub use run::{
    run, CorrectnessEntry, RuleReport, RuleTestSource, RunOutcome, Split, Summary, SummaryCell,
    SummaryRow,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Data,
    Train,
    Explain,
    Evaluate,
    Rules,
    Write,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Data => "data",
            Stage::Train => "train",
            Stage::Explain => "explain",
            Stage::Evaluate => "evaluate",
            Stage::Rules => "rules",
            Stage::Write => "write",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

pub(crate) trait StageExt<T> {
    fn at(self, stage: Stage) -> Result<T, StageError>;
}

impl<T> StageExt<T> for Result<T, Error> {
    fn at(self, stage: Stage) -> Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}
