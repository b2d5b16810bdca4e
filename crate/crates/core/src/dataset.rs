//! Labeled datasets, CSV / JSON-lines loading, synthetic generators and
//! class-outlier injection.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub type ExampleId = u64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: ExampleId,
    pub x: Vec<f64>,
    pub y: u8,
}

/// An ordered, immutable collection of labeled examples sharing one feature
/// dimension. IDs are unique and stable across splits and relabelings.
#[derive(Debug, Clone)]
pub struct Dataset {
    examples: Vec<LabeledExample>,
    dim: usize,
    index: HashMap<ExampleId, usize>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.examples == other.examples
    }
}

impl Dataset {
    pub fn new(examples: Vec<LabeledExample>) -> Result<Self> {
        let first = examples.first().ok_or(Error::EmptyDataset)?;
        let dim = first.x.len();
        if dim == 0 {
            return Err(Error::arg("feature dimension must be at least 1"));
        }
        let mut index = HashMap::with_capacity(examples.len());
        for (pos, e) in examples.iter().enumerate() {
            if e.x.len() != dim {
                return Err(Error::arg(format!(
                    "example {} has dimension {}, expected {dim}",
                    e.id,
                    e.x.len()
                )));
            }
            if e.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::arg(format!("example {} has non-finite features", e.id)));
            }
            if e.y > 1 {
                return Err(Error::arg(format!("example {} has label {}", e.id, e.y)));
            }
            if index.insert(e.id, pos).is_some() {
                return Err(Error::arg(format!("duplicate example id {}", e.id)));
            }
        }
        Ok(Self {
            examples,
            dim,
            index,
        })
    }

    /// Builds a dataset with IDs `0..n` in the given order.
    pub fn from_rows(xs: Vec<Vec<f64>>, ys: Vec<u8>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::arg("feature and label counts differ"));
        }
        Self::new(
            xs.into_iter()
                .zip(ys)
                .enumerate()
                .map(|(i, (x, y))| LabeledExample {
                    id: i as ExampleId,
                    x,
                    y,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LabeledExample> {
        self.examples.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = ExampleId> + '_ {
        self.examples.iter().map(|e| e.id)
    }

    pub fn get(&self, id: ExampleId) -> Option<&LabeledExample> {
        self.index.get(&id).map(|&i| &self.examples[i])
    }

    pub fn position(&self, id: ExampleId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let mut c = [0, 0];
        for e in &self.examples {
            c[e.y as usize] += 1;
        }
        c
    }

    pub fn has_both_classes(&self) -> bool {
        let [a, b] = self.class_counts();
        a > 0 && b > 0
    }

    /// Copy keeping only examples whose position satisfies `keep`.
    pub fn filter_positions(&self, keep: impl Fn(usize) -> bool) -> Result<Self> {
        Self::new(
            self.examples
                .iter()
                .enumerate()
                .filter(|(i, _)| keep(*i))
                .map(|(_, e)| e.clone())
                .collect(),
        )
    }

    pub fn without(&self, id: ExampleId) -> Result<Self> {
        let pos = self.position(id).ok_or(Error::Reference(id))?;
        self.filter_positions(|i| i != pos)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in &self.examples {
            let mut line = String::new();
            for v in &e.x {
                line.push_str(&format!("{v},"));
            }
            line.push_str(&e.y.to_string());
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
            .map_err(|e| Error::io(path, e))
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a LabeledExample;
    type IntoIter = std::slice::Iter<'a, LabeledExample>;

    fn into_iter(self) -> Self::IntoIter {
        self.examples.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Jsonl,
}

impl DataFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(Self::Csv),
            "jsonl" | "ndjson" => Some(Self::Jsonl),
            _ => None,
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>, format: DataFormat) -> Result<Dataset> {
    load_dataset_with(path, format, false)
}

/// Loads a dataset; `header` tolerates one header row in CSV files.
pub fn load_dataset_with(
    path: impl AsRef<Path>,
    format: DataFormat,
    header: bool,
) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        DataFormat::Csv => parse_csv(file, header),
        DataFormat::Jsonl => parse_jsonl(BufReader::new(file)),
    }
}

fn parse_label(raw: &str, line: u64) -> Result<u8> {
    let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("label {raw:?} is not numeric"),
    })?;
    if v == 0.0 {
        Ok(0)
    } else if v == 1.0 {
        Ok(1)
    } else {
        Err(Error::Parse {
            line,
            message: format!("label {raw:?} is not 0 or 1"),
        })
    }
}

/// CSV with `d` feature columns followed by one label column.
pub fn parse_csv<R: Read>(reader: R, header: bool) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut dim = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() < 2 {
            return Err(Error::Parse {
                line,
                message: "need at least one feature and a label".into(),
            });
        }
        let d = rec.len() - 1;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {expected} features, found {d}"),
                })
            }
            _ => {}
        }
        let mut x = Vec::with_capacity(d);
        for field in rec.iter().take(d) {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("feature {field:?} is not numeric"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("feature {field:?} is not finite"),
                });
            }
            x.push(v);
        }
        ys.push(parse_label(&rec[d], line)?);
        xs.push(x);
    }
    if xs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Dataset::from_rows(xs, ys)
}

#[derive(Deserialize)]
struct JsonRecord {
    x: Vec<f64>,
    #[serde(alias = "label")]
    y: serde_json::Value,
}

/// JSON lines of the form `{"x": [..], "y": 0|1}`.
pub fn parse_jsonl<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i as u64 + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if let Some(first) = xs.first() {
            let first: &Vec<f64> = first;
            if first.len() != rec.x.len() {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected {} features, found {}", first.len(), rec.x.len()),
                });
            }
        }
        if rec.x.is_empty() {
            return Err(Error::Parse {
                line: lineno,
                message: "empty feature vector".into(),
            });
        }
        ys.push(parse_label(&rec.y.to_string(), lineno)?);
        xs.push(rec.x);
    }
    if xs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Dataset::from_rows(xs, ys)
}

/// Two isotropic unit-variance Gaussian clusters: class 0 at the origin,
/// class 1 shifted by `separation` along the first axis. Class-0 examples
/// come first, IDs `0..2·n_per_class`.
pub fn generate_two_cluster(
    n_per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_per_class == 0 || dim == 0 {
        return Err(Error::arg("n_per_class and dim must be positive"));
    }
    if !(separation > 0.0) || !separation.is_finite() {
        return Err(Error::arg("separation must be positive"));
    }
    let mut rng = seed::rng(seed);
    let mut xs = Vec::with_capacity(2 * n_per_class);
    let mut ys = Vec::with_capacity(2 * n_per_class);
    for class in 0..2u8 {
        for _ in 0..n_per_class {
            let mut x: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            if class == 1 {
                x[0] += separation;
            }
            xs.push(x);
            ys.push(class);
        }
    }
    Dataset::from_rows(xs, ys)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierMode {
    /// Flip the label of the chosen examples.
    LabelFlip,
    /// Pull the chosen examples' features towards a random example of the
    /// opposite class, keeping their label.
    BoundaryBlend,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierSpec {
    pub fraction: f64,
    pub mode: OutlierMode,
    #[serde(default = "OutlierSpec::default_blend")]
    pub blend_weight: f64,
}

impl OutlierSpec {
    fn default_blend() -> f64 {
        0.5
    }

    pub fn label_flip(fraction: f64) -> Self {
        Self {
            fraction,
            mode: OutlierMode::LabelFlip,
            blend_weight: Self::default_blend(),
        }
    }

    pub fn boundary_blend(fraction: f64, blend_weight: f64) -> Self {
        Self {
            fraction,
            mode: OutlierMode::BoundaryBlend,
            blend_weight,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.fraction) {
            return Err(Error::arg(format!(
                "outlier fraction {} outside [0, 0.5]",
                self.fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.blend_weight) {
            return Err(Error::arg(format!(
                "blend weight {} outside [0, 1]",
                self.blend_weight
            )));
        }
        Ok(())
    }
}

/// `⌊fraction·n⌋`, robust to representation error such as `0.29·100`.
pub(crate) fn share(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) + 1e-9).floor() as usize
}

/// Turns `⌊fraction·n⌋` uniformly chosen examples into class outliers.
/// Returns the modified copy and the affected IDs.
pub fn inject_outliers(
    data: &Dataset,
    spec: &OutlierSpec,
    seed: u64,
) -> Result<(Dataset, BTreeSet<ExampleId>)> {
    spec.validate()?;
    let k = share(spec.fraction, data.len());
    if k == 0 {
        return Ok((data.clone(), BTreeSet::new()));
    }
    let [c0, c1] = data.class_counts();
    if c0 < 2 || c1 < 2 {
        return Err(Error::arg("outlier injection needs at least 2 examples per class"));
    }
    let mut rng = seed::rng(seed);
    let mut chosen: Vec<usize> = index::sample(&mut rng, data.len(), k).into_vec();
    chosen.sort_unstable();

    let by_class: [Vec<usize>; 2] = [0u8, 1].map(|c| {
        data.iter()
            .enumerate()
            .filter(|(_, e)| e.y == c)
            .map(|(i, _)| i)
            .collect()
    });

    let mut examples = data.examples().to_vec();
    for &pos in &chosen {
        let e = &mut examples[pos];
        match spec.mode {
            OutlierMode::LabelFlip => e.y = 1 - e.y,
            OutlierMode::BoundaryBlend => {
                let pool = &by_class[1 - e.y as usize];
                let other = &data.examples()[pool[rng.random_range(0..pool.len())]];
                let w = spec.blend_weight;
                for (xi, oi) in e.x.iter_mut().zip(&other.x) {
                    *xi = w * *xi + (1.0 - w) * oi;
                }
            }
        }
    }
    let ids = chosen.iter().map(|&p| examples[p].id).collect();
    Ok((Dataset::new(examples)?, ids))
}

/// Stratified split: within each class, `round(test_fraction·n_c)` examples
/// go to the test part. Both parts keep the original relative order.
pub fn train_test_split(
    data: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::arg("test_fraction must lie in (0, 1)"));
    }
    let mut rng = seed::rng(seed);
    let mut is_test = vec![false; data.len()];
    for class in 0..2u8 {
        let members: Vec<usize> = data
            .iter()
            .enumerate()
            .filter(|(_, e)| e.y == class)
            .map(|(i, _)| i)
            .collect();
        let n_test = (test_fraction * members.len() as f64).round() as usize;
        for j in index::sample(&mut rng, members.len(), n_test).into_iter() {
            is_test[members[j]] = true;
        }
    }
    let n_test = is_test.iter().filter(|&&t| t).count();
    if n_test == 0 || n_test == data.len() {
        return Err(Error::arg(format!(
            "test_fraction {test_fraction} leaves an empty part"
        )));
    }
    let train = data.filter_positions(|i| !is_test[i])?;
    let test = data.filter_positions(|i| is_test[i])?;
    Ok((train, test))
}
