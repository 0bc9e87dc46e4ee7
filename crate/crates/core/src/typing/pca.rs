use super::TypingError;
use crate::rng::{derive_seed, seeded};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 50_000;

/// Mean plus leading orthonormal principal axes of a row set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
}

impl PcaBasis {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn project(&self, row: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(row).zip(&self.mean).map(|((c, x), m)| c * (x - m)).sum())
            .collect()
    }

    pub fn reconstruct(&self, scores: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, s) in self.components.iter().zip(scores) {
            for (o, ci) in out.iter_mut().zip(c) {
                *o += s * ci;
            }
        }
        out
    }
}

/// Top `n_components` eigenpairs of the sample covariance, found by power
/// iteration with deflation. The covariance is applied implicitly as
/// `Xcᵀ(Xc v) / (n-1)` when there are fewer rows than columns, and as an
/// explicit covariance matrix otherwise.
pub fn pca_fit(rows: &[Vec<f64>], n_components: usize) -> Result<PcaBasis, TypingError> {
    let n = rows.len();
    if n < n_components + 1 || n < 2 {
        return Err(TypingError::TooFewRows {
            got: n,
            need: n_components.max(1) + 1,
        });
    }
    let dim = rows[0].len();
    if rows.iter().any(|r| r.len() != dim) {
        return Err(TypingError::DimensionMismatch);
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(TypingError::NonFinite);
    }
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let total_var: f64 = centered.iter().flatten().map(|v| v * v).sum::<f64>() / (n - 1) as f64;

    // tall data: form the dim x dim covariance once, otherwise apply it
    // implicitly through the rows
    let explicit: Option<Vec<f64>> = (n > dim).then(|| {
        let mut c = vec![0.0; dim * dim];
        for r in &centered {
            for (i, a) in r.iter().enumerate() {
                if *a != 0.0 {
                    for (cij, b) in c[i * dim..(i + 1) * dim].iter_mut().zip(r) {
                        *cij += a * b;
                    }
                }
            }
        }
        c.iter_mut().for_each(|x| *x /= (n - 1) as f64);
        c
    });
    let cov_apply = |v: &[f64]| -> Vec<f64> {
        if let Some(c) = &explicit {
            return c.chunks_exact(dim).map(|row| dot(row, v)).collect();
        }
        let mut out = vec![0.0; dim];
        for r in &centered {
            let s: f64 = r.iter().zip(v).map(|(a, b)| a * b).sum();
            if s != 0.0 {
                for (o, a) in out.iter_mut().zip(r) {
                    *o += s * a;
                }
            }
        }
        out.iter_mut().for_each(|o| *o /= (n - 1) as f64);
        out
    };

    let k = n_components.min(dim);
    let mut components: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut explained = Vec::with_capacity(k);
    let zero_cut = 1e-14 * total_var.max(f64::MIN_POSITIVE);
    for c in 0..k {
        let mut rng = seeded(derive_seed(0x5EED, 7, c as u64));
        let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        orthogonalize(&mut v, &components);
        normalize(&mut v);
        let mut lambda = 0.0;
        let mut degenerate = total_var <= 0.0;
        if !degenerate {
            for _ in 0..POWER_MAX_ITER {
                let mut w = cov_apply(&v);
                orthogonalize(&mut w, &components);
                let norm = norm(&w);
                if norm <= zero_cut {
                    degenerate = true;
                    break;
                }
                w.iter_mut().for_each(|x| *x /= norm);
                let diff = w.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                v = w;
                if diff < POWER_TOL {
                    break;
                }
            }
            lambda = dot(&v, &cov_apply(&v));
        }
        if degenerate || lambda <= zero_cut {
            // null space: any unit vector orthogonal to the found axes
            v = null_direction(dim, &components);
            lambda = 0.0;
        }
        fix_sign(&mut v);
        components.push(v);
        explained.push(lambda.max(0.0));
    }
    // power iteration finds eigenvalues in descending order up to round-off
    for i in 1..explained.len() {
        if explained[i] > explained[i - 1] {
            explained[i] = explained[i - 1];
        }
    }
    Ok(PcaBasis {
        mean,
        components,
        explained_variance: explained,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    // twice for numerical safety (classical Gram-Schmidt re-orthogonalization)
    for _ in 0..2 {
        for u in basis {
            let p = dot(v, u);
            for (x, ui) in v.iter_mut().zip(u) {
                *x -= p * ui;
            }
        }
    }
}

fn null_direction(dim: usize, basis: &[Vec<f64>]) -> Vec<f64> {
    let mut best: Option<Vec<f64>> = None;
    let mut best_norm = 0.0;
    for j in 0..dim {
        let mut e = vec![0.0; dim];
        e[j] = 1.0;
        orthogonalize(&mut e, basis);
        let n = norm(&e);
        if n > best_norm + 1e-12 {
            best_norm = n;
            best = Some(e);
        }
        if best_norm > 0.5 {
            break;
        }
    }
    let mut v = best.unwrap_or_else(|| vec![0.0; dim]);
    normalize(&mut v);
    v
}

/// Makes the largest-magnitude entry positive.
fn fix_sign(v: &mut [f64]) {
    let mut idx = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[idx].abs() + 1e-12 {
            idx = i;
        }
    }
    if v[idx] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}
