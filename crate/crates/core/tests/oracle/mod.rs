//! Direct-from-definition reference implementations used only by tests.
//! Nothing here calls into the library's numerical code.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

/// Forward pass written out independently of the library.
/// Parameter layout: logreg `[w; b]`; MLP `[W1 (hidden×dim, row-major); b1; w2; b2]`.
pub fn logit(dim: usize, hidden: Option<usize>, theta: &[f64], x: &[f64]) -> f64 {
    match hidden {
        None => (0..dim).map(|k| theta[k] * x[k]).sum::<f64>() + theta[dim],
        Some(h) => {
            let mut z = theta[h * dim + 2 * h];
            for j in 0..h {
                let mut a = theta[h * dim + j];
                for k in 0..dim {
                    a += theta[j * dim + k] * x[k];
                }
                z += theta[h * dim + h + j] * a.tanh();
            }
            z
        }
    }
}

/// Binary cross-entropy from a logit: `log(1 + e^z) − y·z`.
pub fn bce(z: f64, y: u8) -> f64 {
    let softplus = if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    };
    softplus - f64::from(y) * z
}

pub fn central_difference(f: impl Fn(&[f64]) -> f64, theta: &[f64], h: f64) -> Vec<f64> {
    let mut p = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            p[i] = theta[i] + h;
            let up = f(&p);
            p[i] = theta[i] - h;
            let down = f(&p);
            p[i] = theta[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Dense `(1/n)·Σ p(1−p)·x̃x̃ᵀ + (l2 + damping)·I` with `x̃ = [x; 1]`.
pub fn logreg_hessian(xs: &[Vec<f64>], theta: &[f64], l2: f64, damping: f64) -> Vec<Vec<f64>> {
    let d = theta.len();
    let mut h = vec![vec![0.0; d]; d];
    for x in xs {
        let mut xt = x.clone();
        xt.push(1.0);
        let p = sigmoid(logit(d - 1, None, theta, x));
        let w = p * (1.0 - p) / xs.len() as f64;
        for i in 0..d {
            for j in 0..d {
                h[i][j] += w * xt[i] * xt[j];
            }
        }
    }
    for (i, row) in h.iter_mut().enumerate() {
        row[i] += l2 + damping;
    }
    h
}

pub fn mat_vec(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum())
        .collect()
}

/// Gaussian elimination with partial pivoting.
pub fn solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(row, &bi)| {
            let mut r = row.clone();
            r.push(bi);
            r
        })
        .collect();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))
            .unwrap();
        m.swap(c, p);
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..=n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| m[r][k] * x[k]).sum();
        x[r] = (m[r][n] - s) / m[r][r];
    }
    x
}

pub fn cosine_clamped(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).max(0.0)
    }
}

/// An explanation as (explanandum features, member IDs).
pub type Expl = (Vec<f64>, Vec<u64>);

pub fn relevance(expls: &[Expl], train: &HashMap<u64, Vec<f64>>) -> f64 {
    let per: Vec<f64> = expls
        .iter()
        .map(|(t, ids)| {
            ids.iter().map(|id| cosine_clamped(t, &train[id])).sum::<f64>() / ids.len() as f64
        })
        .collect();
    per.iter().sum::<f64>() / per.len() as f64
}

pub fn popularity(expls: &[Expl], train_ids: &[u64]) -> BTreeMap<u64, f64> {
    train_ids
        .iter()
        .map(|&x| {
            let hits = expls.iter().filter(|(_, ids)| ids.contains(&x)).count();
            (x, hits as f64 / expls.len() as f64)
        })
        .collect()
}

pub fn active_domain(expls: &[Expl]) -> usize {
    expls
        .iter()
        .flat_map(|(_, ids)| ids.iter().copied())
        .collect::<BTreeSet<_>>()
        .len()
}

pub fn jaccard(a: &[u64], b: &[u64]) -> f64 {
    let a: BTreeSet<_> = a.iter().collect();
    let b: BTreeSet<_> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        1.0
    } else {
        a.intersection(&b).count() as f64 / union as f64
    }
}

pub fn overlap(expls: &[Expl]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..expls.len() {
        for j in 0..i {
            total += jaccard(&expls[i].1, &expls[j].1);
            pairs += 1;
        }
    }
    total / pairs as f64
}

/// Mean over explanations of the share of members whose features satisfy
/// `holds`.
pub fn correctness(expls: &[Expl], train: &HashMap<u64, Vec<f64>>, holds: impl Fn(&[f64]) -> bool) -> f64 {
    let per: Vec<f64> = expls
        .iter()
        .map(|(_, ids)| ids.iter().filter(|id| holds(&train[id])).count() as f64 / ids.len() as f64)
        .collect();
    per.iter().sum::<f64>() / per.len() as f64
}

/// Ranks with ties sharing their mean position (1-based).
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut r = vec![0.0; v.len()];
    for i in 0..v.len() {
        let less = v.iter().filter(|&&x| x < v[i]).count();
        let equal = v.iter().filter(|&&x| x == v[i]).count();
        r[i] = less as f64 + (equal as f64 + 1.0) / 2.0;
    }
    r
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}
