//! Run configuration, read from a TOML file.
//!
//! ```toml
//! seed = 7
//!
//! [dataset]
//! source = "two_cluster"      # or "file" with `path`
//! n_per_class = 100
//! dim = 2
//! separation = 4.0
//! test_fraction = 0.25
//! outliers = { mode = "label_flip", fraction = 0.1 }
//!
//! [model]
//! arch = "logreg"             # or "mlp" with `hidden`
//! epochs = 30
//!
//! [explainers]
//! methods = ["if", "rif", "tracein", "datamodels"]
//!
//! [evaluation]
//! n_values = [2, 5, 10]
//!
//! [[rules]]
//! type = "box"
//! intervals = [{ coord = 0, lo = 0.0, hi = 3.0 }]
//! forced_label = 1
//! breaker_fraction = 0.1
//!
//! [output]
//! dir = "out"
//! ```
//!
//! Every key is optional. Relative paths resolve against the directory of
//! the config file.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{DataFormat, OutlierSpec};
use crate::error::{Error, Result};
use crate::explainers::Method;
use crate::metrics::MetricToggles;
use crate::model::Arch;
use crate::rules::{Condition, Rule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    TwoCluster,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSection {
    pub source: DatasetSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Inferred from the file extension when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<DataFormat>,
    pub header: bool,
    pub n_per_class: usize,
    pub dim: usize,
    pub separation: f64,
    pub test_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outliers: Option<OutlierSpec>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            source: DatasetSource::TwoCluster,
            path: None,
            format: None,
            header: false,
            n_per_class: 100,
            dim: 2,
            separation: 4.0,
            test_fraction: 0.25,
            outliers: None,
        }
    }
}

impl DatasetSection {
    pub fn file_format(&self) -> Option<DataFormat> {
        self.format
            .or_else(|| self.path.as_deref().and_then(DataFormat::from_path))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Logreg,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub arch: ArchKind,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2_reg: f64,
    /// SGD steps between checkpoints; once per epoch when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            arch: ArchKind::Logreg,
            hidden: 16,
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.1,
            l2_reg: 0.01,
            checkpoint_every: None,
        }
    }
}

impl ModelSection {
    pub fn arch(&self, dim: usize) -> Arch {
        match self.arch {
            ArchKind::Logreg => Arch::Logreg { dim },
            ArchKind::Mlp => Arch::Mlp {
                dim,
                hidden: self.hidden,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainersSection {
    pub methods: Vec<Method>,
    pub damping: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    /// Checkpoint steps TraceIn sums over; all recorded ones when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tracein_checkpoints: Option<Vec<usize>>,
    /// Five times the training-set size when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dm_num_subsets: Option<usize>,
    pub dm_subset_fraction: f64,
    /// `1e-3 · dm_num_subsets` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dm_ridge: Option<f64>,
}

impl Default for ExplainersSection {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            damping: 0.01,
            cg_tol: 1e-8,
            cg_max_iter: 1000,
            tracein_checkpoints: None,
            dm_num_subsets: None,
            dm_subset_fraction: 0.5,
            dm_ridge: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationSection {
    pub n_values: Vec<usize>,
    pub relevance: bool,
    pub distinguishability: bool,
    /// Size of the most-popular lists written by plot export.
    pub top_k: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            n_values: vec![2, 5, 10],
            relevance: true,
            distinguishability: true,
            top_k: 2,
        }
    }
}

impl EvaluationSection {
    pub fn toggles(&self) -> MetricToggles {
        MetricToggles {
            relevance: self.relevance,
            distinguishability: self.distinguishability,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleKind {
    Box,
    Halfspace,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalSpec {
    pub coord: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSection {
    #[serde(rename = "type")]
    pub kind: RuleKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub intervals: Vec<IntervalSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default = "RuleSection::default_label")]
    pub forced_label: u8,
    #[serde(default = "RuleSection::default_breakers")]
    pub breaker_fraction: f64,
    /// Number of held-out rule examples (and correctness explananda).
    #[serde(default = "RuleSection::default_test_size")]
    pub test_size: usize,
}

impl RuleSection {
    fn default_label() -> u8 {
        1
    }

    fn default_breakers() -> f64 {
        0.1
    }

    fn default_test_size() -> usize {
        50
    }

    pub fn to_rule(&self) -> Rule {
        let condition = match self.kind {
            RuleKind::Box => Condition::boxed(
                &self
                    .intervals
                    .iter()
                    .map(|i| (i.coord, i.lo, i.hi))
                    .collect::<Vec<_>>(),
            ),
            RuleKind::Halfspace => Condition::half_space(
                self.w.clone().unwrap_or_default(),
                self.b.unwrap_or(0.0),
            ),
        };
        Rule {
            condition,
            forced_label: self.forced_label,
            breaker_fraction: self.breaker_fraction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Formats of the report tables; explanations, models and plot inputs
    /// are always written.
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            formats: vec![OutputFormat::Json, OutputFormat::Csv],
        }
    }
}

impl OutputSection {
    pub fn wants(&self, f: OutputFormat) -> bool {
        self.formats.contains(&f)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub explainers: ExplainersSection,
    pub evaluation: EvaluationSection,
    pub output: OutputSection,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub rules: Vec<RuleSection>,
}

impl RunConfig {
    /// Parses and validates config text. Unknown keys and range problems are
    /// collected and reported together. `base` anchors relative paths.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
        let mut problems = Vec::new();
        let parsed: std::result::Result<RunConfig, _> =
            serde_ignored::deserialize(toml::Value::Table(table), |path| {
                problems.push(format!("unknown key `{path}`"));
            });
        let mut cfg = match parsed {
            Ok(cfg) => cfg,
            Err(e) => {
                problems.push(e.to_string());
                return Err(Error::Config(problems));
            }
        };
        cfg.resolve_paths(base);
        problems.extend(cfg.problems());
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let Some(p) = &self.dataset.path {
            if p.is_relative() {
                self.dataset.path = Some(base.join(p));
            }
        }
        if self.output.dir.is_relative() {
            self.output.dir = base.join(&self.output.dir);
        }
    }

    /// The effective config as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config always serializes")
    }

    /// Every validation problem, in section order.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let d = &self.dataset;
        match d.source {
            DatasetSource::TwoCluster => {
                if d.path.is_some() {
                    p.push("dataset.path is only valid with source = \"file\"".into());
                }
                if d.n_per_class < 2 {
                    p.push("dataset.n_per_class must be at least 2".into());
                }
                if d.dim == 0 {
                    p.push("dataset.dim must be at least 1".into());
                }
                if !(d.separation > 0.0 && d.separation.is_finite()) {
                    p.push("dataset.separation must be positive".into());
                }
            }
            DatasetSource::File => match &d.path {
                None => p.push("dataset.path is required with source = \"file\"".into()),
                Some(path) => {
                    if !path.is_file() {
                        p.push(format!("dataset.path {} does not exist", path.display()));
                    }
                    if d.file_format().is_none() {
                        p.push("dataset.format must be given when the extension is not .csv or .jsonl".into());
                    }
                }
            },
        }
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            p.push("dataset.test_fraction must lie in (0, 1)".into());
        }
        if let Some(o) = &d.outliers {
            if let Err(e) = o.validate() {
                p.push(format!("dataset.outliers: {e}"));
            }
        }

        let m = &self.model;
        if m.arch == ArchKind::Mlp && m.hidden == 0 {
            p.push("model.hidden must be at least 1".into());
        }
        if m.epochs == 0 {
            p.push("model.epochs must be at least 1".into());
        }
        if m.batch_size == 0 {
            p.push("model.batch_size must be at least 1".into());
        }
        if !(m.learning_rate > 0.0 && m.learning_rate.is_finite()) {
            p.push("model.learning_rate must be positive".into());
        }
        if !(m.l2_reg >= 0.0 && m.l2_reg.is_finite()) {
            p.push("model.l2_reg must be non-negative".into());
        }
        if m.checkpoint_every == Some(0) {
            p.push("model.checkpoint_every must be at least 1".into());
        }

        let e = &self.explainers;
        if e.methods.is_empty() {
            p.push("explainers.methods must name at least one method".into());
        }
        if e.methods.iter().collect::<BTreeSet<_>>().len() != e.methods.len() {
            p.push("explainers.methods contains duplicates".into());
        }
        if !(e.damping > 0.0 && e.damping.is_finite()) {
            p.push("explainers.damping must be positive".into());
        }
        if !(e.cg_tol > 0.0) {
            p.push("explainers.cg_tol must be positive".into());
        }
        if e.cg_max_iter == 0 {
            p.push("explainers.cg_max_iter must be at least 1".into());
        }
        if matches!(e.dm_num_subsets, Some(k) if k < 10) {
            p.push("explainers.dm_num_subsets must be at least 10".into());
        }
        if !(e.dm_subset_fraction > 0.0 && e.dm_subset_fraction < 1.0) {
            p.push("explainers.dm_subset_fraction must lie in (0, 1)".into());
        }
        if matches!(e.dm_ridge, Some(r) if !(r > 0.0 && r.is_finite())) {
            p.push("explainers.dm_ridge must be positive".into());
        }

        let ev = &self.evaluation;
        if ev.n_values.is_empty() {
            p.push("evaluation.n_values must list at least one N".into());
        }
        if ev.n_values.contains(&0) {
            p.push("evaluation.n_values entries must be at least 1".into());
        }
        if ev.n_values.iter().collect::<BTreeSet<_>>().len() != ev.n_values.len() {
            p.push("evaluation.n_values contains duplicates".into());
        }
        if ev.top_k == 0 {
            p.push("evaluation.top_k must be at least 1".into());
        }

        for (k, r) in self.rules.iter().enumerate() {
            let at = format!("rules[{k}]");
            match r.kind {
                RuleKind::Box => {
                    if r.intervals.is_empty() {
                        p.push(format!("{at}: a box rule needs at least one interval"));
                    }
                    if r.w.is_some() || r.b.is_some() {
                        p.push(format!("{at}: `w` and `b` belong to half-space rules"));
                    }
                }
                RuleKind::Halfspace => {
                    if r.w.is_none() || r.b.is_none() {
                        p.push(format!("{at}: a half-space rule needs `w` and `b`"));
                    }
                    if !r.intervals.is_empty() {
                        p.push(format!("{at}: `intervals` belong to box rules"));
                    }
                }
            }
            if r.test_size == 0 {
                p.push(format!("{at}: test_size must be at least 1"));
            }
            // The dimension is known up front only for generated data.
            let dim = match d.source {
                DatasetSource::TwoCluster => Some(d.dim),
                DatasetSource::File => None,
            };
            let rule = r.to_rule();
            let checked = match dim {
                Some(dim) if dim > 0 => rule.validate(dim),
                _ => rule.validate(usize::MAX),
            };
            if let Err(e) = checked {
                // Dimension mismatches of half-space rules surface at run
                // time for file data.
                if dim.is_some() || !matches!(r.kind, RuleKind::Halfspace) {
                    p.push(format!("{at}: {e}"));
                }
            }
        }

        if self.output.formats.is_empty() {
            p.push("output.formats must list at least one format".into());
        }
        p
    }
}
