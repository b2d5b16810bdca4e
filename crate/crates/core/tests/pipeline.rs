use std::fs;
use std::path::Path;

use exemplar_core::explainers::Method;
use exemplar_core::pipeline::{
    explain_file, export_plots, run, sha256_hex, Manifest, RunConfig, RunStatus, Stage,
};

fn small_config(out: &Path, extra: &str) -> RunConfig {
    let text = format!(
        r#"
seed = 3

[dataset]
n_per_class = 20
test_fraction = 0.25
outliers = {{ mode = "label_flip", fraction = 0.1 }}

[model]
epochs = 5

[explainers]
dm_num_subsets = 60

[evaluation]
n_values = [3, 2]

[output]
dir = "{}"

{extra}
"#,
        out.display()
    );
    RunConfig::parse(&text, Path::new(".")).unwrap()
}

const RULE: &str = r#"
[[rules]]
type = "box"
intervals = [{ coord = 0, lo = 0.0, hi = 3.0 }]
test_size = 10
"#;

#[test]
fn runs_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = run(&small_config(&tmp.path().join("a"), RULE)).unwrap();
    let b = run(&small_config(&tmp.path().join("b"), RULE)).unwrap();
    let ma = Manifest::load(&a.dir).unwrap();
    let mb = Manifest::load(&b.dir).unwrap();
    assert_eq!(ma.status, RunStatus::Complete);
    assert_eq!(ma.files, mb.files);
    for (rel, entry) in &ma.files {
        let bytes = fs::read(a.dir.join(rel)).unwrap();
        assert_eq!(sha256_hex(&bytes), entry.sha256, "{rel}");
        assert_eq!(bytes, fs::read(b.dir.join(rel)).unwrap(), "{rel}");
    }
    assert_eq!(a.summary.n_values, vec![2, 3]);
    assert_eq!(a.summary.rows.len(), 4);
    assert_eq!(a.summary.rules.len(), 1);
    assert!(ma.files.contains_key("rules/rule1/verification.csv"));
    assert!(ma.files.contains_key("explanations/datamodels_N3.jsonl"));
}

#[test]
fn explain_file_reproduces_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(&tmp.path().join("run"), "");
    let outcome = run(&cfg).unwrap();
    for method in [Method::If, Method::TraceIn] {
        let name = format!("{}_N3", method.as_str());
        let expl = outcome.dir.join(format!("explanations/{name}.jsonl"));
        let report = explain_file(&expl, outcome.dir.join("dataset.csv"), &cfg, Some(method)).unwrap();
        let stored: serde_json::Value =
            serde_json::from_slice(&fs::read(outcome.dir.join(format!("reports/{name}.json"))).unwrap()).unwrap();
        assert_eq!(serde_json::to_value(&report).unwrap(), stored);
    }
}

#[test]
fn plot_export_covers_every_method() {
    let tmp = tempfile::tempdir().unwrap();
    let outcome = run(&small_config(&tmp.path().join("run"), "")).unwrap();
    let files = export_plots(&outcome.dir, 2, Some(&[2])).unwrap();
    assert_eq!(files.len(), 12);
    let top = fs::read_to_string(outcome.dir.join("plots/if_N2_top2.csv")).unwrap();
    let mut lines = top.lines();
    assert_eq!(lines.next(), Some("rank,id,pop,loss"));
    assert_eq!(lines.count(), 2);
    assert_eq!(export_plots(&outcome.dir, 1, None).unwrap().len(), 24);
}

#[test]
fn failing_stage_leaves_incomplete_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("broken.csv");
    fs::write(&data, "0,0,1\n1,1,oops\n").unwrap();
    let text = format!(
        "[dataset]\nsource = \"file\"\npath = \"{}\"\n[output]\ndir = \"{}\"\n",
        data.display(),
        tmp.path().join("run").display()
    );
    let cfg = RunConfig::parse(&text, Path::new(".")).unwrap();
    let err = run(&cfg).unwrap_err();
    assert_eq!(err.stage, Stage::Data);
    let m = Manifest::load(tmp.path().join("run")).unwrap();
    assert_eq!(m.status, RunStatus::Incomplete);
    assert_eq!(m.failed_stage, Some(Stage::Data));
    assert!(m.error.is_some());
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 2);
}
