//! Plot source data derived from a finished (or partial) run directory:
//! popularity distributions, popularity against training loss, and the most
//! popular training examples.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use super::output::Manifest;
use super::run::Split;
use crate::dataset::{load_dataset, DataFormat, Dataset};
use crate::error::{Error, Result};
use crate::explainers::{read_jsonl, Method};
use crate::metrics::{popularity, popularity_vs_loss, write_popularity_csv, write_popularity_loss_csv, PopularityLoss};
use crate::model::ModelParams;

/// `explanations/{method}_N{n}.jsonl` → `(method, n)`.
fn parse_explanations_name(rel: &str) -> Option<(Method, usize)> {
    let stem = rel.strip_prefix("explanations/")?.strip_suffix(".jsonl")?;
    let (method, n) = stem.rsplit_once("_N")?;
    Some((method.parse().ok()?, n.parse().ok()?))
}

fn require(manifest: &Manifest, dir: &Path, rel: &str) -> Result<PathBuf> {
    if !manifest.files.contains_key(rel) {
        return Err(Error::io(
            dir.join(rel),
            std::io::Error::new(std::io::ErrorKind::NotFound, "not recorded in the run manifest"),
        ));
    }
    Ok(dir.join(rel))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

/// Most popular first, ties by ascending ID.
pub fn top_popular(rows: &[PopularityLoss], k: usize) -> Vec<PopularityLoss> {
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| b.popularity.total_cmp(&a.popularity).then(a.id.cmp(&b.id)));
    sorted.truncate(k);
    sorted
}

/// Writes `plots/{method}_N{n}_{popularity,pop_loss,top{k}}.csv` for every
/// explanation file of the main run (restricted to `sizes` when given) and
/// returns the written paths.
pub fn export_plots(dir: impl AsRef<Path>, top_k: usize, sizes: Option<&[usize]>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let manifest = Manifest::load(dir)?;
    let full = load_dataset(require(&manifest, dir, "dataset.csv")?, DataFormat::Csv)?;
    let split_path = require(&manifest, dir, "split.json")?;
    let split: Split = serde_json::from_str(
        &fs::read_to_string(&split_path).map_err(|e| Error::io(&split_path, e))?,
    )?;
    let keep: BTreeSet<_> = split.train.iter().copied().collect();
    let train: Dataset = full.filter_positions(|i| keep.contains(&full.examples()[i].id))?;
    let model = ModelParams::load_json(require(&manifest, dir, "model.json")?)?;

    let plots = dir.join("plots");
    fs::create_dir_all(&plots).map_err(|e| Error::io(&plots, e))?;
    let mut written = Vec::new();
    for rel in manifest.files.keys() {
        let Some((method, n)) = parse_explanations_name(rel) else {
            continue;
        };
        if sizes.is_some_and(|s| !s.contains(&n)) {
            continue;
        }
        let path = dir.join(rel);
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let explanations = read_jsonl(BufReader::new(file))?;
        let (pop, rows) = if explanations.is_empty() {
            (Default::default(), Vec::new())
        } else {
            let pop = popularity(&explanations, &train)?;
            let rows = popularity_vs_loss(&pop, &model, &train)?;
            (pop, rows)
        };
        let base = format!("{}_N{n}", method.as_str());

        let p = plots.join(format!("{base}_popularity.csv"));
        write_popularity_csv(create(&p)?, &pop).map_err(|e| Error::io(&p, e))?;
        written.push(p);

        let p = plots.join(format!("{base}_pop_loss.csv"));
        write_popularity_loss_csv(create(&p)?, &rows).map_err(|e| Error::io(&p, e))?;
        written.push(p);

        let p = plots.join(format!("{base}_top{top_k}.csv"));
        let mut w = create(&p)?;
        let mut body = String::from("rank,id,pop,loss\n");
        for (rank, r) in top_popular(&rows, top_k).iter().enumerate() {
            body.push_str(&format!("{},{},{},{}\n", rank + 1, r.id, r.popularity, r.loss));
        }
        w.write_all(body.as_bytes()).map_err(|e| Error::io(&p, e))?;
        written.push(p);
    }
    Ok(written)
}
