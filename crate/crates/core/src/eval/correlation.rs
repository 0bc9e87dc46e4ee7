use super::metrics::pearson;
use super::EvalError;
use rayon::prelude::*;
use serde::Serialize;

/// Pearson correlation of every synthetic row against every real row
/// (`n_synth x n_real`). Undefined correlations (a constant row) are NaN.
pub fn correlation_matrix(synth: &[Vec<f64>], real: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, EvalError> {
    let f = real.first().or(synth.first()).map_or(0, Vec::len);
    if let Some(bad) = real.iter().chain(synth).find(|r| r.len() != f) {
        return Err(EvalError::SchemaMismatch(f, bad.len()));
    }
    Ok(synth
        .par_iter()
        .map(|s| real.iter().map(|r| pearson(s, r).unwrap_or(f64::NAN)).collect())
        .collect())
}

fn key(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// 1-based position of `target` when `row` is sorted descending; ties are
/// resolved in the target's favour and NaN sorts last.
pub fn rank_of(row: &[f64], target: usize) -> usize {
    let t = key(row[target]);
    1 + row.iter().filter(|v| key(**v) > t).count()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrIndex {
    /// Rank of the paired real profile for each synthetic profile.
    pub ranks: Vec<usize>,
    /// Mean reciprocal rank.
    pub map: f64,
}

pub fn mean_average_precision(ranks: &[usize]) -> f64 {
    ranks.iter().map(|r| 1.0 / *r as f64).sum::<f64>() / ranks.len().max(1) as f64
}

/// Correlation index: synthetic profile `i` is paired with real profile
/// `pairing[i]`.
pub fn correlation_index(real: &[Vec<f64>], synth: &[Vec<f64>], pairing: &[usize]) -> Result<CorrIndex, EvalError> {
    let corr = correlation_matrix(synth, real)?;
    Ok(index_from_matrix(&corr, pairing))
}

pub fn index_from_matrix(corr: &[Vec<f64>], pairing: &[usize]) -> CorrIndex {
    let ranks: Vec<usize> = corr.iter().zip(pairing).map(|(row, &j)| rank_of(row, j)).collect();
    CorrIndex {
        map: mean_average_precision(&ranks),
        ranks,
    }
}

/// Majority cluster among the `k` real profiles most correlated with one
/// synthetic profile. Equal correlations keep index order and equal vote
/// counts go to the lower cluster id.
pub fn top_k_vote(corr_row: &[f64], real_clusters: &[usize], k: usize) -> usize {
    let mut order: Vec<usize> = (0..corr_row.len()).collect();
    order.sort_by(|&a, &b| key(corr_row[b]).total_cmp(&key(corr_row[a])).then(a.cmp(&b)));
    let n_clusters = real_clusters.iter().max().map_or(0, |m| m + 1);
    let mut votes = vec![0usize; n_clusters];
    for &j in order.iter().take(k) {
        votes[real_clusters[j]] += 1;
    }
    (0..n_clusters)
        .max_by_key(|&c| (votes[c], std::cmp::Reverse(c)))
        .unwrap_or(0)
}

/// Winning-cluster histogram over all synthetic profiles, `n_clusters` bins.
pub fn vote_histogram(corr: &[Vec<f64>], real_clusters: &[usize], k: usize, n_clusters: usize) -> Vec<usize> {
    let mut h = vec![0usize; n_clusters];
    for row in corr {
        let c = top_k_vote(row, real_clusters, k);
        if c < n_clusters {
            h[c] += 1;
        }
    }
    h
}
