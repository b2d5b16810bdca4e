//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Quantities are recomputed from run outputs with the reference
//! implementations in the core crate's test oracle.

#[path = "../../core/tests/oracle/mod.rs"]
mod oracle;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use exemplar_core::dataset::{generate_two_cluster, Dataset, LabeledExample};
use exemplar_core::explainers::{
    fit_linear_datamodels, sample_subsets, Explainer, Explanandum, InfluenceConfig,
    InfluenceExplainer, Member,
};
use exemplar_core::loo::loo_deltas;
use exemplar_core::metrics::{active_domain, overlap, popularity, relevance};
use exemplar_core::model::{fit_logreg_full_batch, HessianOperator};
use exemplar_core::pipeline::{run, Manifest, RunConfig, RunOutcome};
use exemplar_core::rules::correctness;
use exemplar_core::{seed, Arch, Condition, Explanation, ModelParams, Rule, TrainConfig};
use rand::Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

// ---------------------------------------------------------------- metrics

const TRAIN: usize = 8;

struct Instance {
    train: Dataset,
    raw: Vec<oracle::Expl>,
}

fn random_instance(rng: &mut impl Rng, uniform_size: Option<usize>) -> Instance {
    let xs: Vec<Vec<f64>> = (0..TRAIN)
        .map(|_| (0..3).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let train = Dataset::new(
        xs.iter()
            .enumerate()
            .map(|(i, x)| LabeledExample { id: 10 + i as u64, x: x.clone(), y: (i % 2) as u8 })
            .collect(),
    )
    .unwrap();
    let n_expl = rng.random_range(1..=5);
    let raw = (0..n_expl)
        .map(|_| {
            let t: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let size = uniform_size.unwrap_or_else(|| rng.random_range(1..=3));
            let ids: Vec<u64> = rand::seq::index::sample(rng, TRAIN, size)
                .into_iter()
                .map(|i| 10 + i as u64)
                .collect();
            (t, ids)
        })
        .collect();
    Instance { train, raw }
}

fn to_explanations(raw: &[oracle::Expl]) -> (Vec<Explanation>, HashMap<u64, Vec<f64>>) {
    let exps = raw
        .iter()
        .enumerate()
        .map(|(k, (_, ids))| Explanation {
            explanandum_id: 1000 + k as u64,
            predicted_label: 0,
            members: ids.iter().map(|&id| Member { id, score: 0.0 }).collect(),
        })
        .collect();
    let targets = raw.iter().enumerate().map(|(k, (x, _))| (1000 + k as u64, x.clone())).collect();
    (exps, targets)
}

fn c1_metric_oracle() -> Outcome {
    let mut rng = seed::rng(101);
    let instances = 500;
    let rule = Rule {
        condition: Condition::boxed(&[(0, Some(-1.0), Some(2.0))]),
        forced_label: 1,
        breaker_fraction: 0.0,
    };
    let holds = |x: &[f64]| (-1.0..=2.0).contains(&x[0]);
    let mut cor_checked = 0;
    for k in 0..instances {
        let inst = random_instance(&mut rng, None);
        let by_id: HashMap<u64, Vec<f64>> = inst.train.iter().map(|e| (e.id, e.x.clone())).collect();
        let ids: Vec<u64> = inst.train.ids().collect();
        let (exps, targets) = to_explanations(&inst.raw);
        let e = |what: &str| format!("instance {k}: {what}");

        let rel = relevance(&exps, &inst.train, &targets).map_err(|x| e(&x.to_string()))?;
        let want = oracle::relevance(&inst.raw, &by_id);
        ensure((rel - want).abs() <= 1e-12, || e(&format!("relevance {rel} vs {want}")))?;

        let pop = popularity(&exps, &inst.train).map_err(|x| e(&x.to_string()))?;
        ensure(pop == oracle::popularity(&inst.raw, &ids), || e("popularity"))?;

        let (dom, _) = active_domain(&exps, &inst.train).map_err(|x| e(&x.to_string()))?;
        ensure(dom == oracle::active_domain(&inst.raw), || e("active domain"))?;

        if inst.raw.len() >= 2 {
            let o = overlap(&exps, 0).map_err(|x| e(&x.to_string()))?.value;
            let want = oracle::overlap(&inst.raw);
            ensure((o - want).abs() <= 1e-12, || e(&format!("overlap {o} vs {want}")))?;
        }

        let sat: Vec<oracle::Expl> = inst.raw.iter().filter(|(t, _)| holds(t)).cloned().collect();
        if !sat.is_empty() {
            let (sat_exps, sat_targets) = to_explanations(&sat);
            let cor = correctness(&sat_exps, &inst.train, &rule, &sat_targets).map_err(|x| e(&x.to_string()))?;
            ensure(cor == oracle::correctness(&sat, &by_id, holds), || e("correctness"))?;
            cor_checked += 1;
        }
    }
    Ok(format!("{instances} instances, correctness on {cor_checked}"))
}

fn c2_identities() -> Outcome {
    let mut rng = seed::rng(202);
    for k in 0..300 {
        let size = 1 + k % 3;
        let inst = random_instance(&mut rng, Some(size));
        let (exps, _) = to_explanations(&inst.raw);
        let pop = popularity(&exps, &inst.train).map_err(|e| e.to_string())?;
        let total: f64 = pop.values().sum();
        ensure((total - size as f64).abs() <= 1e-12, || format!("instance {k}: sum of popularity {total} != {size}"))?;
        let positive = pop.values().filter(|&&p| p > 0.0).count();
        let (dom, _) = active_domain(&exps, &inst.train).map_err(|e| e.to_string())?;
        ensure(dom == positive, || format!("instance {k}: domain {dom} vs {positive}"))?;
    }
    let e = |ids: &[u64]| Explanation {
        explanandum_id: 0,
        predicted_label: 0,
        members: ids.iter().map(|&id| Member { id, score: 0.0 }).collect(),
    };
    let same = overlap(&[e(&[1, 2, 3]), e(&[3, 2, 1]), e(&[1, 2, 3])], 0).map_err(|x| x.to_string())?.value;
    ensure(same == 1.0, || format!("overlap of identical sets {same}"))?;
    let disjoint = overlap(&[e(&[1, 2]), e(&[3, 4]), e(&[5, 6])], 0).map_err(|x| x.to_string())?.value;
    ensure(disjoint == 0.0, || format!("overlap of disjoint sets {disjoint}"))?;
    Ok("300 instances; overlap identical 1, disjoint 0".into())
}

// --------------------------------------------------------------- calculus

fn randn(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&d) / norm(b).max(1e-8)
}

fn c3_calculus() -> Outcome {
    let mut rng = seed::rng(303);
    let mut worst_grad: f64 = 0.0;
    for (arch, hidden) in [(Arch::Logreg { dim: 4 }, None), (Arch::Mlp { dim: 3, hidden: 5 }, Some(5))] {
        let dim = arch.dim();
        for draw in 0..100 {
            let theta = randn(&mut rng, arch.n_params(), 0.8);
            let x = randn(&mut rng, dim, 1.0);
            let y = (draw % 2) as u8;
            let model = ModelParams::new(arch, theta.clone()).map_err(|e| e.to_string())?;
            let analytic = model.grad_loss_xy(&x, y, 0.0).map_err(|e| e.to_string())?;
            let numeric = oracle::central_difference(|t| oracle::bce(oracle::logit(dim, hidden, t, &x), y), &theta, 1e-6);
            let err = rel_err(&analytic, &numeric);
            worst_grad = worst_grad.max(err);
            ensure(err < 1e-5, || format!("{arch:?} draw {draw}: gradient error {err:.2e}"))?;
        }
    }

    let data = generate_two_cluster(15, 3, 1.5, 4).map_err(|e| e.to_string())?;
    let xs: Vec<Vec<f64>> = data.iter().map(|e| e.x.clone()).collect();
    let mut worst_hvp: f64 = 0.0;
    for _ in 0..20 {
        let theta = randn(&mut rng, 4, 0.7);
        let model = ModelParams::new(Arch::Logreg { dim: 3 }, theta.clone()).map_err(|e| e.to_string())?;
        let v = randn(&mut rng, 4, 1.0);
        let want = oracle::mat_vec(&oracle::logreg_hessian(&xs, &theta, 0.01, 0.01), &v);
        let got = model.hvp(&data, &v, 0.01, 0.01).map_err(|e| e.to_string())?;
        for (g, w) in got.iter().zip(&want) {
            let err = (g - w).abs() / (1.0 + w.abs());
            worst_hvp = worst_hvp.max(err);
            ensure(err <= 1e-8, || format!("HVP {g} vs {w}"))?;
        }
    }

    let tol = 1e-10;
    let mut worst_res: f64 = 0.0;
    for _ in 0..10 {
        let theta = randn(&mut rng, 4, 0.5);
        let model = ModelParams::new(Arch::Logreg { dim: 3 }, theta.clone()).map_err(|e| e.to_string())?;
        let v = randn(&mut rng, 4, 1.0);
        let op = HessianOperator::new(&model, &data, 0.01, 0.01).map_err(|e| e.to_string())?;
        let sol = op.solve(&v, tol, 500).map_err(|e| e.to_string())?;
        let h = oracle::logreg_hessian(&xs, &theta, 0.01, 0.01);
        let r: Vec<f64> = oracle::mat_vec(&h, &sol.x).iter().zip(&v).map(|(a, b)| a - b).collect();
        let ratio = norm(&r) / (tol * norm(&v));
        worst_res = worst_res.max(ratio);
        // The dense residual may differ from CG's recurrence by rounding.
        ensure(ratio <= 1.0001, || format!("CG residual {:.2e} > tol·‖v‖", norm(&r)))?;
    }
    Ok(format!(
        "max grad rel err {worst_grad:.1e}, max HVP err {worst_hvp:.1e}, max residual/(tol·‖v‖) {worst_res:.3}"
    ))
}

// -------------------------------------------------------------- influence

fn c4_loo() -> Outcome {
    let cfg = TrainConfig::default();
    let icfg = InfluenceConfig { damping: 0.01, ..Default::default() };
    let mut rhos = Vec::new();
    for s in 1..=5u64 {
        let data = generate_two_cluster(15, 5, 1.5, s).map_err(|e| e.to_string())?;
        let model = fit_logreg_full_batch(&data, cfg.l2_reg, 1e-10, 200).map_err(|e| e.to_string())?;
        let probe_src = generate_two_cluster(1, 5, 1.5, 1000 + s).map_err(|e| e.to_string())?;
        let probe = Explanandum { id: 10_000, x: probe_src.examples()[(s % 2) as usize].x.clone() };
        let ife = InfluenceExplainer::new(model, data.clone(), icfg, false).map_err(|e| e.to_string())?;
        let scores = ife.scores(&probe).map_err(|e| e.to_string())?;
        let loo = loo_deltas(Arch::Logreg { dim: 5 }, &data, &probe, &cfg).map_err(|e| e.to_string())?;
        let neg: Vec<f64> = loo.iter().map(|r| -r.loss_delta).collect();
        let rho = oracle::spearman(&scores, &neg);
        rhos.push(rho);
        ensure(rho >= 0.8, || format!("instance {s}: Spearman {rho:.3} < 0.8"))?;
    }
    let shown: Vec<String> = rhos.iter().map(|r| format!("{r:.3}")).collect();
    Ok(format!("Spearman per instance [{}]", shown.join(", ")))
}

fn c5_datamodels() -> Outcome {
    let (n, m, sigma) = (40, 400, 0.01);
    let train = generate_two_cluster(n / 2, 1, 2.0, 0).map_err(|e| e.to_string())?;
    let subsets = sample_subsets(&train, m, 0.5, 17).map_err(|e| e.to_string())?;
    let mut rng = seed::rng(505);
    let beta = randn(&mut rng, n, 1.0);
    let y: Vec<f64> = subsets
        .iter()
        .map(|s| {
            let signal: f64 = s.iter().zip(&beta).filter(|(&b, _)| b).map(|(_, w)| w).sum();
            0.3 + signal + sigma * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let fit = fit_linear_datamodels(&subsets, &[y], 1e-3 * m as f64).map_err(|e| e.to_string())?;
    let err = rel_err(&fit.coefficients[0], &beta);
    ensure(err <= 0.05, || format!("relative coefficient error {err:.4} > 0.05"))?;
    Ok(format!("relative coefficient error {err:.4}"))
}

// --------------------------------------------------------------- pipeline

/// What a run directory says, read back from disk.
struct RunFiles {
    features: Vec<Vec<f64>>,
    train: Vec<u64>,
    test: Vec<u64>,
    losses: BTreeMap<u64, f64>,
}

#[derive(serde::Deserialize)]
struct SplitFile {
    train: Vec<u64>,
    test: Vec<u64>,
}

fn read_run(dir: &Path) -> Result<RunFiles, String> {
    let read = |rel: &str| fs::read_to_string(dir.join(rel)).map_err(|e| format!("{rel}: {e}"));
    let features = read("dataset.csv")?
        .lines()
        .map(|l| {
            let mut v: Vec<f64> = l.split(',').map(|f| f.parse().unwrap()).collect();
            v.pop();
            v
        })
        .collect();
    let split: SplitFile = serde_json::from_str(&read("split.json")?).map_err(|e| e.to_string())?;
    let losses = read("train_losses.csv")?
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[3].parse().unwrap())
        })
        .collect();
    Ok(RunFiles { features, train: split.train, test: split.test, losses })
}

fn read_explanations(path: &Path) -> Result<Vec<(u64, Vec<u64>)>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).map_err(|e| e.to_string())?;
            let t = v["explanandum_id"].as_u64().ok_or("explanandum_id")?;
            let ids = v["members"]
                .as_array()
                .ok_or("members")?
                .iter()
                .map(|m| m["id"].as_u64().ok_or("member id"))
                .collect::<Result<Vec<_>, _>>()?;
            Ok((t, ids))
        })
        .collect()
}

fn run_config(name: &str, out: &Path) -> Result<RunOutcome, String> {
    let mut cfg = RunConfig::load(workspace().join("configs").join(name)).map_err(|e| e.to_string())?;
    cfg.output.dir = out.to_path_buf();
    run(&cfg).map_err(|e| e.to_string())
}

struct OutlierStats {
    rel: BTreeMap<&'static str, f64>,
    detail: String,
}

fn outlier_experiment(tmp: &Path) -> Result<OutlierStats, String> {
    let outcome = run_config("outliers.toml", &tmp.join("outliers"))?;
    let files = read_run(&outcome.dir)?;
    ensure(files.train.len() + files.test.len() == 200, || "expected 200 examples".into())?;
    ensure(files.test.len() >= 50, || format!("only {} test explananda", files.test.len()))?;
    let by_id: HashMap<u64, Vec<f64>> = files.train.iter().map(|&i| (i, files.features[i as usize].clone())).collect();

    let mut rel = BTreeMap::new();
    let mut maxpop = BTreeMap::new();
    let mut dom = BTreeMap::new();
    let mut over = BTreeMap::new();
    let mut pops = BTreeMap::new();
    for m in ["if", "rif"] {
        let exps = read_explanations(&outcome.dir.join(format!("explanations/{m}_N5.jsonl")))?;
        ensure(exps.len() == files.test.len(), || format!("{m}: {} explanations", exps.len()))?;
        ensure(exps.iter().all(|(_, ids)| ids.len() == 5), || format!("{m}: explanation size is not 5"))?;
        let raw: Vec<oracle::Expl> = exps.into_iter().map(|(t, ids)| (files.features[t as usize].clone(), ids)).collect();
        let pop = oracle::popularity(&raw, &files.train);
        maxpop.insert(m, pop.values().cloned().fold(0.0, f64::max));
        rel.insert(m, oracle::relevance(&raw, &by_id));
        dom.insert(m, oracle::active_domain(&raw));
        over.insert(m, oracle::overlap(&raw));
        pops.insert(m, pop);
    }

    let if_pop = &pops["if"];
    let pop_v: Vec<f64> = files.train.iter().map(|i| if_pop[i]).collect();
    let loss_v: Vec<f64> = files.train.iter().map(|i| files.losses[i]).collect();
    let rho = oracle::spearman(&pop_v, &loss_v);
    ensure(rho > 0.3, || format!("(a) Spearman(Pop_IF, loss) {rho:.3} <= 0.3"))?;
    ensure(maxpop["if"] > maxpop["rif"], || format!("(b) max Pop IF {} <= RIF {}", maxpop["if"], maxpop["rif"]))?;
    ensure(dom["rif"] > dom["if"], || format!("(c) domain RIF {} <= IF {}", dom["rif"], dom["if"]))?;
    ensure(over["if"] > over["rif"], || format!("(d) overlap IF {:.3} <= RIF {:.3}", over["if"], over["rif"]))?;

    let mut by_pop: Vec<(u64, f64)> = if_pop.iter().map(|(&i, &p)| (i, p)).collect();
    by_pop.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut sorted_loss = loss_v.clone();
    sorted_loss.sort_by(|a, b| b.total_cmp(a));
    let decile = files.train.len().div_ceil(10);
    let cutoff = sorted_loss[decile - 1];
    for &(id, _) in &by_pop[..2] {
        let l = files.losses[&id];
        ensure(l >= cutoff, || format!("(e) popular example {id} has loss {l:.3} below the top-decile cutoff {cutoff:.3}"))?;
    }

    let detail = format!(
        "rho {rho:.3}; max Pop IF {:.2} vs RIF {:.2}; domain IF {} vs RIF {}; overlap IF {:.3} vs RIF {:.3}; top-2 IF examples {} {} in top {decile} losses",
        maxpop["if"], maxpop["rif"], dom["if"], dom["rif"], over["if"], over["rif"], by_pop[0].0, by_pop[1].0
    );
    Ok(OutlierStats { rel, detail })
}

fn c7_relevance(stats: &Result<OutlierStats, String>) -> Outcome {
    let s = stats.as_ref().map_err(|e| format!("outlier run failed: {e}"))?;
    let (ri, rr) = (s.rel["if"], s.rel["rif"]);
    ensure(rr > ri, || format!("Rel RIF {rr:.3} <= IF {ri:.3}"))?;
    Ok(format!("Rel RIF {rr:.3} vs IF {ri:.3}"))
}

fn rule_experiment(tmp: &Path) -> Result<(RunOutcome, RunFiles), String> {
    let outcome = run_config("rule.toml", &tmp.join("rule"))?;
    let files = read_run(&outcome.dir)?;
    Ok((outcome, files))
}

fn c8_rule_learning(r: &Result<(RunOutcome, RunFiles), String>) -> Outcome {
    let (outcome, _) = r.as_ref().map_err(|e| format!("rule run failed: {e}"))?;
    let rep = outcome.summary.rules.first().ok_or("no rule report")?;
    let v = &rep.verification;
    ensure(rep.rule.breaker_fraction == 0.1, || "breaker fraction is not 0.1".into())?;
    let di = v.ll_intervened_after - v.ll_intervened_before;
    let du = v.ll_untouched_after - v.ll_untouched_before;
    ensure(v.accuracy_on_rule >= 0.8, || format!("accuracy on rule {:.3} < 0.8", v.accuracy_on_rule))?;
    ensure(di > 5.0 * du.abs(), || format!("ΔLL intervened {di:.3} <= 5·|ΔLL untouched| {:.3}", 5.0 * du.abs()))?;
    ensure(v.ps_intervened >= 4.0 * v.ps_untouched, || {
        format!("Ps intervened {:.1} < 4·Ps untouched {:.1}", v.ps_intervened, v.ps_untouched)
    })?;
    Ok(format!(
        "accuracy {:.3}; ΔLL intervened {di:.3} vs untouched {du:.3}; Ps {:.1}% vs {:.1}%",
        v.accuracy_on_rule, v.ps_intervened, v.ps_untouched
    ))
}

fn c9_correctness(r: &Result<(RunOutcome, RunFiles), String>) -> Outcome {
    let (outcome, files) = r.as_ref().map_err(|e| format!("rule run failed: {e}"))?;
    let rep = outcome.summary.rules.first().ok_or("no rule report")?;
    let holds = |x: &[f64]| (0.0..=3.0).contains(&x[0]);
    let rule_test: Vec<Vec<f64>> = fs::read_to_string(outcome.dir.join("rules/rule1/rule_test.csv"))
        .map_err(|e| e.to_string())?
        .lines()
        .map(|l| {
            let mut v: Vec<f64> = l.split(',').map(|f| f.parse().unwrap()).collect();
            v.pop();
            v
        })
        .collect();
    ensure(rule_test.iter().all(|x| holds(x)), || "rule test point outside the rule region".into())?;
    let by_id: HashMap<u64, Vec<f64>> = files.train.iter().map(|&i| (i, files.features[i as usize].clone())).collect();
    let mut cor = BTreeMap::new();
    for m in ["if", "rif"] {
        let exps = read_explanations(&outcome.dir.join(format!("rules/rule1/explanations/{m}_N5.jsonl")))?;
        ensure(exps.len() >= 20, || format!("{m}: only {} rule explananda", exps.len()))?;
        ensure(exps.len() == rule_test.len(), || format!("{m}: explananda do not match the rule test set"))?;
        let raw: Vec<oracle::Expl> = exps.into_iter().map(|(_, ids)| (Vec::new(), ids)).collect();
        cor.insert(m, oracle::correctness(&raw, &by_id, holds));
    }
    let (ci, cr) = (cor["if"], cor["rif"]);
    ensure(ci > cr, || format!("Cor IF {ci:.3} <= RIF {cr:.3}"))?;
    let breaker = rep.breaker_mean_loss.ok_or("no breakers")?;
    let follower = rep.follower_mean_loss.ok_or("no followers")?;
    ensure(breaker > follower, || format!("breaker loss {breaker:.3} <= follower loss {follower:.3}"))?;
    Ok(format!(
        "{} explananda; Cor IF {ci:.3} vs RIF {cr:.3}; mean loss breakers {breaker:.3} vs followers {follower:.3}",
        rule_test.len()
    ))
}

// ------------------------------------------------------------ determinism

fn c10_determinism(tmp: &Path) -> Outcome {
    let config = tmp.join("determinism.toml");
    fs::write(
        &config,
        r#"seed = 11
[dataset]
n_per_class = 40
outliers = { mode = "label_flip", fraction = 0.1 }
[model]
epochs = 10
[explainers]
methods = ["if", "rif", "tracein", "datamodels"]
dm_num_subsets = 200
[evaluation]
n_values = [2, 5]
[[rules]]
type = "box"
intervals = [{ coord = 0, lo = 0.0, hi = 3.0 }]
test_size = 20
"#,
    )
    .map_err(|e| e.to_string())?;
    let mut dirs = Vec::new();
    for workers in [1, 4] {
        let dir = tmp.join(format!("det_w{workers}"));
        let status = Command::new(env!("CARGO_BIN_EXE_exemplar"))
            .args(["--workers", &workers.to_string(), "run"])
            .arg(&config)
            .arg("--out")
            .arg(&dir)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || {
            format!("workers {workers}: {}", String::from_utf8_lossy(&status.stderr))
        })?;
        dirs.push(dir);
    }
    let (a, b) = (Manifest::load(&dirs[0]).map_err(|e| e.to_string())?, Manifest::load(&dirs[1]).map_err(|e| e.to_string())?);
    let mut json = 0;
    for rel in a.files.keys() {
        let (x, y) = (fs::read(dirs[0].join(rel)), fs::read(dirs[1].join(rel)));
        let (x, y) = (x.map_err(|e| e.to_string())?, y.map_err(|e| format!("{rel}: {e}"))?);
        ensure(x == y, || format!("{rel} differs between worker counts"))?;
        json += usize::from(rel.ends_with(".json"));
    }
    ensure(a.files == b.files, || "file lists differ".into())?;
    Ok(format!("{} files identical ({json} JSON) with 1 and 4 workers", a.files.len()))
}

// ------------------------------------------------------------------ main

fn report(id: &str, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = f();
    let took = start.elapsed();
    let result = match (result, limit) {
        (Ok(_), Some(l)) if took > l => Err(format!("took {took:.1?}, limit {l:?}")),
        (r, _) => r,
    };
    let (tag, text) = match &result {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{tag} {id} {name} ({:.2}s): {text}", took.as_secs_f64());
    result.is_ok()
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let secs = Duration::from_secs;
    let mut ok = true;
    ok &= report("C1", "metric oracle equivalence", Some(secs(10)), c1_metric_oracle);
    ok &= report("C2", "metric identities", None, c2_identities);
    ok &= report("C3", "gradient, HVP and CG validation", Some(secs(30)), c3_calculus);
    ok &= report("C4", "IF agrees with leave-one-out", Some(secs(120)), c4_loo);
    ok &= report("C5", "DataModels coefficient recovery", Some(secs(120)), c5_datamodels);

    let mut outliers = Err("not run".to_string());
    ok &= report("C6", "class-outlier susceptibility", Some(secs(300)), || {
        outliers = outlier_experiment(tmp.path());
        outliers.as_ref().map(|s| s.detail.clone()).map_err(|e| e.clone())
    });
    ok &= report("C7", "relevance ordering", None, || c7_relevance(&outliers));

    let mut rule = Err("not run".to_string());
    ok &= report("C8", "rule-learning verification", Some(secs(120)), || {
        rule = rule_experiment(tmp.path());
        c8_rule_learning(&rule)
    });
    ok &= report("C9", "correctness inversion", None, || c9_correctness(&rule));
    ok &= report("C10", "determinism across worker counts", None, || c10_determinism(tmp.path()));

    if ok {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAILED");
        ExitCode::FAILURE
    }
}
