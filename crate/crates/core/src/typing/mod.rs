//! Consumer typing: PCA on typical weeks, k-means++ on the leading scores,
//! nearest-centroid assignment.

mod kmeans;
mod pca;

pub use kmeans::{kmeanspp_fit, nearest, KMeansFit, MAX_LLOYD_ITERS};
pub use pca::{pca_fit, PcaBasis};

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

pub const DEFAULT_K: usize = 15;
pub const N_COMPONENTS: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum TypingError {
    #[error("need at least {need} rows for PCA, got {got}")]
    TooFewRows { got: usize, need: usize },
    #[error("need at least k = {k} points, got {got}")]
    TooFewPoints { got: usize, k: usize },
    #[error("rows have inconsistent lengths")]
    DimensionMismatch,
    #[error("non-finite value in input")]
    NonFinite,
}

/// Fitted typing model. Serializes as
/// `{mean, components, explained_variance, centroids, seed}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypingModel {
    #[serde(flatten)]
    pub basis: PcaBasis,
    pub centroids: Vec<Vec<f64>>,
    pub seed: u64,
}

/// Per-week min-max scaling so that shape, not magnitude, drives typing.
/// A flat week maps to all zeros.
pub fn normalize_week(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

impl TypingModel {
    /// Fits PCA on the normalized weeks and clusters PC1-5 scores. Returns the
    /// model and the training assignments.
    pub fn fit(weeks: &[Vec<f64>], k: usize, seed: u64) -> Result<(TypingModel, Vec<usize>), TypingError> {
        let rows: Vec<Vec<f64>> = weeks.iter().map(|w| normalize_week(w)).collect();
        let basis = pca_fit(&rows, N_COMPONENTS)?;
        let scores: Vec<Vec<f64>> = rows.iter().map(|r| basis.project(r)).collect();
        let fit = kmeanspp_fit(&scores, k, seed)?;
        Ok((
            TypingModel {
                basis,
                centroids: fit.centroids,
                seed,
            },
            fit.assignments,
        ))
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn scores(&self, week: &[f64]) -> Vec<f64> {
        self.basis.project(&normalize_week(week))
    }

    /// Nearest centroid in PC space, lowest index on ties.
    pub fn assign(&self, week: &[f64]) -> usize {
        nearest(&self.scores(week), &self.centroids).0
    }
}

/// Counts per cluster id over `0..k`.
pub fn cluster_histogram(assignments: &[usize], k: usize) -> Vec<usize> {
    let mut h = vec![0; k];
    for &a in assignments {
        if a < k {
            h[a] += 1;
        }
    }
    h
}

/// Per-cluster counts of surrogates landing in the same cluster as their
/// paired original, plus the overall same-cluster fraction.
pub fn paired_match_histogram(original: &[usize], synthetic: &[usize], k: usize) -> (Vec<usize>, f64) {
    let mut h = vec![0; k];
    let mut hits = 0;
    for (&o, &s) in original.iter().zip(synthetic) {
        if o == s && o < k {
            h[o] += 1;
            hits += 1;
        }
    }
    let n = original.len().min(synthetic.len());
    (h, if n == 0 { 0.0 } else { hits as f64 / n as f64 })
}

/// Adjusted Rand index between two labelings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut ra: HashMap<usize, u64> = HashMap::new();
    let mut rb: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let c2 = |m: u64| (m * m.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.values().map(|&m| c2(m)).sum();
    let sa: f64 = ra.values().map(|&m| c2(m)).sum();
    let sb: f64 = rb.values().map(|&m| c2(m)).sum();
    let total = c2(n as u64);
    let expected = sa * sb / total;
    let max = 0.5 * (sa + sb);
    if (max - expected).abs() < 1e-15 {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn week(shape: impl Fn(usize) -> f64, scale: f64) -> Vec<f64> {
        (0..672).map(|i| scale * shape(i)).collect()
    }

    fn toy_weeks() -> (Vec<Vec<f64>>, Vec<usize>) {
        let shapes: [fn(usize) -> f64; 3] = [
            |i| ((i % 96) as f64 / 96.0 * 6.283).sin() + 1.5,
            |i| if (32..68).contains(&(i % 96)) { 2.0 } else { 0.3 },
            |i| if (i % 96) < 20 { 3.0 } else { 0.5 },
        ];
        let mut weeks = vec![];
        let mut fam = vec![];
        for (f, s) in shapes.iter().enumerate() {
            for m in 0..4 {
                weeks.push(week(|i| s(i) + 0.01 * ((i * (m + 3)) % 7) as f64, 1.0 + m as f64));
                fam.push(f);
            }
        }
        (weeks, fam)
    }

    #[test]
    fn training_members_are_assigned_to_their_cluster() {
        let (weeks, fam) = toy_weeks();
        let (model, assign) = TypingModel::fit(&weeks, 3, 5).unwrap();
        assert_eq!(adjusted_rand_index(&assign, &fam), 1.0);
        for (w, &a) in weeks.iter().zip(&assign) {
            assert_eq!(model.assign(w), a);
        }
    }

    #[test]
    fn equidistant_point_goes_to_lower_cluster() {
        let (weeks, _) = toy_weeks();
        let (mut model, _) = TypingModel::fit(&weeks, 3, 5).unwrap();
        // put two centroids symmetric around the score of a probe week
        let probe = &weeks[0];
        let s = model.scores(probe);
        let mut c2 = s.clone();
        c2[0] += 1.0;
        let mut c7 = s.clone();
        c7[0] -= 1.0;
        let far: Vec<f64> = s.iter().map(|v| v + 100.0).collect();
        model.centroids = vec![far.clone(); 15];
        model.centroids[2] = c2;
        model.centroids[7] = c7;
        assert_eq!(model.assign(probe), 2);
    }

    #[test]
    fn histograms() {
        assert_eq!(cluster_histogram(&[0; 10], 15)[0], 10);
        assert_eq!(cluster_histogram(&[0; 10], 15).iter().sum::<usize>(), 10);
        let (h, f) = paired_match_histogram(&[1, 2, 2], &[1, 2, 2], 4);
        assert_eq!((h, f), (vec![0, 1, 2, 0], 1.0));
    }

    #[test]
    fn ari_values() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[5, 5, 3, 3]), 1.0);
        assert!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]) < 0.0);
    }

    #[test]
    fn model_json_layout() {
        let (weeks, _) = toy_weeks();
        let (model, _) = TypingModel::fit(&weeks, 3, 5).unwrap();
        let v: serde_json::Value = serde_json::to_value(&model).unwrap();
        for key in ["mean", "components", "explained_variance", "centroids", "seed"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let back: TypingModel = serde_json::from_value(v).unwrap();
        assert_eq!(back, model);
    }
}
