use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::{DatasetSource, OutputFormat, RunConfig};
use super::output::{Manifest, Materialized, OutputDir, RunStatus};
use super::{Stage, StageError, StageExt};
use crate::dataset::{
    generate_two_cluster, inject_outliers, load_dataset_with, train_test_split, Dataset, ExampleId,
    LabeledExample,
};
use crate::error::{Error, Result};
use crate::explainers::{
    explain_all, explananda_of, select_checkpoints, write_jsonl, DataModelsConfig,
    DataModelsExplainer, Explainer, Explanandum, Explanation, InfluenceConfig, InfluenceExplainer,
    Method, TraceInExplainer,
};
use crate::metrics::{evaluate, MetricReport};
use crate::model::{self, bce_from_logit, Arch, ModelParams, TrainConfig, Trained};
use crate::rules::{apply_rule, correctness, rule_test_set, verify_rule_learning, Rule, RuleVerification};
use crate::seed::derive;

/// Generator batches drawn at most when filling a rule test set.
const RULE_TEST_BATCHES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<ExampleId>,
    pub test: Vec<ExampleId>,
    pub outliers: Vec<ExampleId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    #[serde(rename = "N")]
    pub n: usize,
    pub relevance: Option<f64>,
    pub active_domain: Option<usize>,
    pub active_domain_normalized: Option<f64>,
    pub overlap: Option<f64>,
    /// One value per configured rule.
    pub correctness: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub cells: Vec<SummaryCell>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleTestSource {
    /// New generator draws inside the rule region.
    FreshSamples,
    /// Held-out test-split points inside the rule region.
    TestSplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectnessEntry {
    pub method: Method,
    #[serde(rename = "N")]
    pub n: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleReport {
    pub rule: Rule,
    pub followers: usize,
    pub breakers: usize,
    pub untouched: usize,
    pub rule_test_size: usize,
    pub rule_test_source: RuleTestSource,
    pub verification: RuleVerification,
    /// Mean training loss under the post-rule model.
    pub follower_mean_loss: Option<f64>,
    pub breaker_mean_loss: Option<f64>,
    pub correctness: Vec<CorrectnessEntry>,
}

impl RuleReport {
    pub fn correctness_of(&self, method: Method, n: usize) -> Option<f64> {
        self.correctness
            .iter()
            .find(|c| c.method == method && c.n == n)
            .map(|c| c.value)
    }
}

/// Table-shaped digest of a run: one row per explainer, one cell per N.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_outliers: usize,
    pub n_explananda: usize,
    pub n_values: Vec<usize>,
    pub rows: Vec<SummaryRow>,
    pub rules: Vec<RuleReport>,
    pub warnings: Vec<String>,
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl Summary {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let ns = &self.n_values;
        let mut header = vec!["method".to_string()];
        for prefix in ["rel", "dom", "over"] {
            header.extend(ns.iter().map(|n| format!("{prefix}_N{n}")));
        }
        for k in 1..=self.rules.len() {
            header.extend(ns.iter().map(|n| format!("cor_r{k}_N{n}")));
        }
        writeln!(w, "{}", header.join(","))?;
        for row in &self.rows {
            let mut fields = vec![row.method.as_str().to_string()];
            fields.extend(row.cells.iter().map(|c| opt(c.relevance)));
            fields.extend(row.cells.iter().map(|c| opt(c.active_domain_normalized)));
            fields.extend(row.cells.iter().map(|c| opt(c.overlap)));
            for k in 0..self.rules.len() {
                fields.extend(row.cells.iter().map(|c| opt(c.correctness.get(k))));
            }
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }

    /// Human-readable version of the table, three decimals per value.
    pub fn to_table(&self) -> String {
        let mut groups: Vec<(String, Box<dyn Fn(&SummaryCell) -> Option<f64>>)> = vec![
            ("Rel".into(), Box::new(|c: &SummaryCell| c.relevance)),
            ("Dom".into(), Box::new(|c: &SummaryCell| c.active_domain_normalized)),
            ("Over".into(), Box::new(|c: &SummaryCell| c.overlap)),
        ];
        for k in 0..self.rules.len() {
            let name = if self.rules.len() == 1 {
                "Cor".to_string()
            } else {
                format!("Cor{}", k + 1)
            };
            groups.push((name, Box::new(move |c: &SummaryCell| c.correctness.get(k).copied())));
        }
        let mut s = format!("{:<11}", "");
        for (name, _) in &groups {
            for n in &self.n_values {
                s.push_str(&format!("{:>9}", format!("{name}@{n}")));
            }
        }
        s.push('\n');
        for row in &self.rows {
            s.push_str(&format!("{:<11}", row.method.display_name()));
            for (_, get) in &groups {
                for c in &row.cells {
                    match get(c) {
                        Some(v) => s.push_str(&format!("{v:>9.3}")),
                        None => s.push_str(&format!("{:>9}", "-")),
                    }
                }
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub summary: Summary,
}

/// Executes the configured pipeline, writing into `config.output.dir`.
/// A manifest is written even when a stage fails, with status
/// `incomplete` and the failing stage.
pub fn run(config: &RunConfig) -> Result<RunOutcome, StageError> {
    let mut out = OutputDir::create(&config.output.dir).at(Stage::Write)?;
    let mut materialized = Materialized::from_config(config);
    let result = execute(config, &mut out, &mut materialized);
    let created_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let (status, failed_stage, error) = match &result {
        Ok(_) => (RunStatus::Complete, None, None),
        Err(e) => (RunStatus::Incomplete, Some(e.stage), Some(e.source.to_string())),
    };
    let dir = out.root().to_path_buf();
    let manifest = Manifest {
        status,
        failed_stage,
        error,
        created_unix,
        defaults: materialized,
        config: config.clone(),
        files: BTreeMap::new(),
    };
    let finished = out.finish(manifest);
    let summary = result?;
    finished.at(Stage::Write)?;
    Ok(RunOutcome { dir, summary })
}

pub(crate) fn load_or_generate(cfg: &RunConfig) -> Result<Dataset> {
    let d = &cfg.dataset;
    match d.source {
        DatasetSource::TwoCluster => {
            generate_two_cluster(d.n_per_class, d.dim, d.separation, derive(cfg.seed, "dataset"))
        }
        DatasetSource::File => {
            let path = d
                .path
                .as_ref()
                .ok_or_else(|| Error::arg("dataset.path is missing"))?;
            let format = d
                .file_format()
                .ok_or_else(|| Error::arg("dataset format cannot be inferred"))?;
            load_dataset_with(path, format, d.header)
        }
    }
}

/// The split every consumer of a run's `dataset.csv` must reproduce.
pub(crate) fn split(cfg: &RunConfig, data: &Dataset) -> Result<(Dataset, Dataset)> {
    train_test_split(data, cfg.dataset.test_fraction, derive(cfg.seed, "split"))
}

pub(crate) fn overlap_seed(cfg: &RunConfig) -> u64 {
    derive(cfg.seed, "overlap")
}

fn train_config(cfg: &RunConfig, n_train: usize) -> TrainConfig {
    let m = &cfg.model;
    let mut tc = TrainConfig {
        epochs: m.epochs,
        batch_size: m.batch_size,
        learning_rate: m.learning_rate,
        l2_reg: m.l2_reg,
        checkpoint_every: 1,
        seed: derive(cfg.seed, "train"),
    };
    tc.checkpoint_every = m
        .checkpoint_every
        .unwrap_or_else(|| tc.steps_per_epoch(n_train));
    tc
}

fn datamodels_config(cfg: &RunConfig, n_train: usize, tc: &TrainConfig, tag: &str) -> DataModelsConfig {
    let e = &cfg.explainers;
    DataModelsConfig {
        num_subsets: e.dm_num_subsets.unwrap_or(5 * n_train),
        subset_fraction: e.dm_subset_fraction,
        ridge: e.dm_ridge,
        base_seed: derive(cfg.seed, tag),
        // Subset models only need their final parameters.
        train: TrainConfig {
            checkpoint_every: usize::MAX,
            ..tc.clone()
        },
    }
}

type Explained = Vec<(Method, BTreeMap<usize, Vec<Explanation>>)>;

/// Builds every configured explainer over one trained model and explains
/// all explananda at every N.
fn explain_scenario(
    cfg: &RunConfig,
    trained: &Trained,
    train: &Dataset,
    explananda: &[Explanandum],
    dm: &DataModelsConfig,
    context: &str,
    warnings: &mut Vec<String>,
) -> Result<Explained> {
    let e = &cfg.explainers;
    let icfg = InfluenceConfig {
        damping: e.damping,
        cg_tol: e.cg_tol,
        max_iter: e.cg_max_iter,
        l2_reg: cfg.model.l2_reg,
    };
    let params = &trained.params;
    let mut out = Vec::with_capacity(e.methods.len());
    for &method in &e.methods {
        let explainer: Box<dyn Explainer> = match method {
            Method::If => Box::new(InfluenceExplainer::new(params.clone(), train.clone(), icfg, false)?),
            Method::Rif => Box::new(InfluenceExplainer::new(params.clone(), train.clone(), icfg, true)?),
            Method::TraceIn => {
                let ckpts = select_checkpoints(&trained.checkpoints, e.tracein_checkpoints.as_deref())?;
                Box::new(TraceInExplainer::new(params.clone(), train.clone(), &ckpts)?)
            }
            Method::DataModels => {
                let dm = DataModelsExplainer::fit(params.clone(), train.clone(), explananda, dm)?;
                warnings.extend(dm.warnings().iter().map(|w| format!("{context}: {w}")));
                Box::new(dm)
            }
        };
        out.push((method, explain_all(explainer.as_ref(), explananda, &cfg.evaluation.n_values)?));
    }
    Ok(out)
}

fn explanations_file(prefix: &str, method: Method, n: usize) -> String {
    format!("{prefix}explanations/{}_N{n}.jsonl", method.as_str())
}

fn write_explained(out: &mut OutputDir, prefix: &str, explained: &Explained) -> Result<()> {
    for (method, by_n) in explained {
        for (&n, exps) in by_n {
            let mut buf = Vec::new();
            write_jsonl(&mut buf, exps)?;
            out.write(&explanations_file(prefix, *method, n), &buf)?;
        }
    }
    Ok(())
}

fn explananda_map(explananda: &[Explanandum]) -> HashMap<ExampleId, Vec<f64>> {
    explananda.iter().map(|e| (e.id, e.x.clone())).collect()
}

fn mean_loss_of(model: &ModelParams, data: &Dataset, ids: &BTreeSet<ExampleId>) -> Result<Option<f64>> {
    if ids.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for &id in ids {
        let e = data.get(id).ok_or(Error::Reference(id))?;
        total += bce_from_logit(model.logit(&e.x)?, e.y);
    }
    Ok(Some(total / ids.len() as f64))
}

fn rule_test_examples(
    cfg: &RunConfig,
    k: usize,
    rule: &Rule,
    full: &Dataset,
    test: &Dataset,
) -> Result<(Dataset, RuleTestSource)> {
    let want = cfg.rules[k - 1].test_size;
    let d = &cfg.dataset;
    match d.source {
        DatasetSource::TwoCluster => {
            let first_id = full.ids().max().map_or(0, |m| m + 1);
            let mut picked: Vec<LabeledExample> = Vec::with_capacity(want);
            for batch in 0..RULE_TEST_BATCHES {
                if picked.len() >= want {
                    break;
                }
                let seed = derive(cfg.seed, &format!("rule{k}/test/{batch}"));
                let fresh = generate_two_cluster(d.n_per_class, d.dim, d.separation, seed)?;
                for e in fresh.iter().filter(|e| rule.condition.holds(&e.x)) {
                    if picked.len() == want {
                        break;
                    }
                    picked.push(LabeledExample {
                        id: first_id + picked.len() as u64,
                        x: e.x.clone(),
                        y: rule.forced_label,
                    });
                }
            }
            if picked.is_empty() {
                return Err(Error::RuleNotApplicable);
            }
            Ok((Dataset::new(picked)?, RuleTestSource::FreshSamples))
        }
        DatasetSource::File => {
            let all = rule_test_set(test, rule)?;
            Ok((all.filter_positions(|i| i < want)?, RuleTestSource::TestSplit))
        }
    }
}

struct RuleRun {
    report: RuleReport,
    after: Trained,
    rule_test: Dataset,
    explained: Explained,
}

#[allow(clippy::too_many_arguments)]
fn rule_run(
    cfg: &RunConfig,
    k: usize,
    rule: &Rule,
    full: &Dataset,
    train: &Dataset,
    test: &Dataset,
    arch: Arch,
    tc: &TrainConfig,
    before: &Trained,
    warnings: &mut Vec<String>,
) -> Result<RuleRun> {
    let tag = format!("rule{k}");
    let app = apply_rule(train, rule, derive(cfg.seed, &format!("{tag}/apply")))?;
    // Same seed as the base model: only the labels differ.
    let after = model::train(arch, &app.data, tc)?;
    let (rule_test, source) = rule_test_examples(cfg, k, rule, full, test)?;
    let verification = verify_rule_learning(
        &before.params,
        &after.params,
        &app.data,
        &rule_test,
        &app.intervened(),
        &app.untouched,
    )?;
    let explananda = explananda_of(&rule_test);
    let dm = datamodels_config(cfg, app.data.len(), tc, &format!("{tag}/datamodels"));
    let explained = explain_scenario(cfg, &after, &app.data, &explananda, &dm, &tag, warnings)?;
    let targets = explananda_map(&explananda);
    let mut cor = Vec::new();
    for (method, by_n) in &explained {
        for (&n, exps) in by_n {
            cor.push(CorrectnessEntry {
                method: *method,
                n,
                value: correctness(exps, &app.data, rule, &targets)?,
            });
        }
    }
    let report = RuleReport {
        rule: rule.clone(),
        followers: app.followers.len(),
        breakers: app.breakers.len(),
        untouched: app.untouched.len(),
        rule_test_size: rule_test.len(),
        rule_test_source: source,
        verification,
        follower_mean_loss: mean_loss_of(&after.params, &app.data, &app.followers)?,
        breaker_mean_loss: mean_loss_of(&after.params, &app.data, &app.breakers)?,
        correctness: cor,
    };
    Ok(RuleRun {
        report,
        after,
        rule_test,
        explained,
    })
}

fn execute(cfg: &RunConfig, out: &mut OutputDir, mat: &mut Materialized) -> Result<Summary, StageError> {
    let json = cfg.output.wants(OutputFormat::Json);
    let csv = cfg.output.wants(OutputFormat::Csv);
    let seed = cfg.seed;

    // Data.
    let full = load_or_generate(cfg).at(Stage::Data)?;
    let (full, outliers) = match &cfg.dataset.outliers {
        Some(spec) => inject_outliers(&full, spec, derive(seed, "outliers")).at(Stage::Data)?,
        None => (full, BTreeSet::new()),
    };
    let (train, test) = split(cfg, &full).at(Stage::Data)?;
    let rules: Vec<Rule> = cfg.rules.iter().map(|r| r.to_rule()).collect();
    for r in &rules {
        r.validate(full.dim()).at(Stage::Data)?;
    }
    out.write_with("dataset.csv", |w| full.write_csv(w)).at(Stage::Write)?;
    let split_ids = Split {
        train: train.ids().collect(),
        test: test.ids().collect(),
        outliers: outliers.iter().copied().collect(),
    };
    out.write_json("split.json", &split_ids).at(Stage::Write)?;

    // Training.
    let arch = cfg.model.arch(full.dim());
    let tc = train_config(cfg, train.len());
    mat.checkpoint_every = Some(tc.checkpoint_every);
    let trained = model::train(arch, &train, &tc).at(Stage::Train)?;
    out.write_json("model.json", &trained.params).at(Stage::Write)?;
    for c in &trained.checkpoints {
        out.write_json(&format!("checkpoints/ckpt_{:08}.json", c.step), c)
            .at(Stage::Write)?;
    }
    let losses: Vec<f64> = train
        .iter()
        .map(|e| Ok(bce_from_logit(trained.params.logit(&e.x)?, e.y)))
        .collect::<Result<_>>()
        .at(Stage::Train)?;
    out.write_with("train_losses.csv", |w| {
        writeln!(w, "id,label,outlier,loss")?;
        for (e, l) in train.iter().zip(&losses) {
            writeln!(w, "{},{},{},{l}", e.id, e.y, u8::from(outliers.contains(&e.id)))?;
        }
        Ok(())
    })
    .at(Stage::Write)?;

    // Explanations.
    let explananda = explananda_of(&test);
    let dm = datamodels_config(cfg, train.len(), &tc, "datamodels");
    mat.dm_num_subsets = Some(dm.num_subsets);
    mat.dm_ridge = Some(dm.ridge_penalty());
    let mut warnings = Vec::new();
    let explained = explain_scenario(cfg, &trained, &train, &explananda, &dm, "main", &mut warnings)
        .at(Stage::Explain)?;
    write_explained(out, "", &explained).at(Stage::Write)?;

    // Metrics.
    let targets = explananda_map(&explananda);
    let mut rows = Vec::new();
    for (method, by_n) in &explained {
        let mut cells = Vec::new();
        for (&n, exps) in by_n {
            let report: MetricReport = evaluate(
                Some(*method),
                n,
                exps,
                &train,
                &targets,
                cfg.evaluation.toggles(),
                overlap_seed(cfg),
            )
            .at(Stage::Evaluate)?;
            if json {
                out.write_json(&format!("reports/{}_N{n}.json", method.as_str()), &report)
                    .at(Stage::Write)?;
            }
            cells.push(SummaryCell {
                n,
                relevance: report.relevance,
                active_domain: report.active_domain,
                active_domain_normalized: report.active_domain_normalized,
                overlap: report.overlap,
                correctness: Vec::new(),
            });
        }
        rows.push(SummaryRow {
            method: *method,
            cells,
        });
    }

    // Rules.
    let mut rule_reports = Vec::new();
    for (i, rule) in rules.iter().enumerate() {
        let k = i + 1;
        let run = rule_run(cfg, k, rule, &full, &train, &test, arch, &tc, &trained, &mut warnings)
            .at(Stage::Rules)?;
        mat.rule_test_source = Some(
            match run.report.rule_test_source {
                RuleTestSource::FreshSamples => "fresh_samples",
                RuleTestSource::TestSplit => "test_split",
            }
            .to_string(),
        );
        let prefix = format!("rules/rule{k}/");
        out.write_json(&format!("{prefix}model_after.json"), &run.after.params)
            .at(Stage::Write)?;
        out.write_with(&format!("{prefix}rule_test.csv"), |w| run.rule_test.write_csv(w))
            .at(Stage::Write)?;
        write_explained(out, &prefix, &run.explained).at(Stage::Write)?;
        if json {
            out.write_json(&format!("{prefix}report.json"), &run.report)
                .at(Stage::Write)?;
        }
        if csv {
            out.write_with(&format!("{prefix}verification.csv"), |w| {
                run.report.verification.write_csv(w)
            })
            .at(Stage::Write)?;
        }
        for row in &mut rows {
            for cell in &mut row.cells {
                let v = run.report.correctness_of(row.method, cell.n).unwrap_or(f64::NAN);
                cell.correctness.push(v);
            }
        }
        rule_reports.push(run.report);
    }

    let summary = Summary {
        seed,
        n_train: train.len(),
        n_test: test.len(),
        n_outliers: outliers.len(),
        n_explananda: explananda.len(),
        n_values: {
            let mut ns = cfg.evaluation.n_values.clone();
            ns.sort_unstable();
            ns
        },
        rows,
        rules: rule_reports,
        warnings,
    };
    if json {
        out.write_json("summary.json", &summary).at(Stage::Write)?;
    }
    if csv {
        out.write_with("summary.csv", |w| summary.write_csv(w))
            .at(Stage::Write)?;
    }
    Ok(summary)
}
