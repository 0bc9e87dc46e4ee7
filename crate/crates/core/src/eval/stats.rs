use crate::dataset::is_missing;
use serde::Serialize;
use statrs::function::erf::erfc;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimpleStats {
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    /// Sample standard deviation (0 for a single value).
    pub std: f64,
}

pub const SIMPLE_STAT_NAMES: [&str; 5] = ["mean", "median", "min", "max", "std"];

impl SimpleStats {
    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "mean" => self.mean,
            "median" => self.median,
            "min" => self.min,
            "max" => self.max,
            "std" => self.std,
            _ => return None,
        })
    }
}

/// Statistics of the present values, or `None` if there are none.
pub fn simple_stats(values: &[f64]) -> Option<SimpleStats> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !is_missing(*x)).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let (mean, std) = mean_std(&v);
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    };
    Some(SimpleStats {
        mean,
        median,
        min: v[0],
        max: v[n - 1],
        std,
    })
}

/// Mean computed around the first value, so a constant input returns
/// that constant exactly.
pub fn shifted_mean(v: &[f64]) -> f64 {
    match v.first() {
        None => f64::NAN,
        Some(&v0) => v0 + v.iter().map(|x| x - v0).sum::<f64>() / v.len() as f64,
    }
}

/// Mean and sample standard deviation; the deviation of one value is 0.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = shifted_mean(v);
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub z: f64,
    /// Two-sided p-value from the tie-corrected normal approximation with
    /// continuity correction.
    pub p: f64,
}

/// Midranks (1-based) of the concatenation of `a` and `b`.
fn midranks(all: &[f64]) -> (Vec<f64>, f64) {
    let mut idx: Vec<usize> = (0..all.len()).collect();
    idx.sort_by(|&i, &j| all[i].total_cmp(&all[j]));
    let mut ranks = vec![0.0; all.len()];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && all[idx[j + 1]] == all[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    (ranks, tie_term)
}

pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> MannWhitney {
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let all: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, tie_term) = midranks(&all);
    let r1: f64 = ranks[..a.len()].iter().sum();
    let u = r1 - n1 * (n1 + 1.0) / 2.0;
    let n = n1 + n2;
    let mu = n1 * n2 / 2.0;
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if !(var > 0.0) {
        return MannWhitney { u, z: 0.0, p: 1.0 };
    }
    let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
    let p = erfc(z / std::f64::consts::SQRT_2).min(1.0);
    MannWhitney { u, z, p }
}

/// Bonferroni-adjusted p-value for `m` comparisons.
pub fn bonferroni(p: f64, m: usize) -> f64 {
    (p * m.max(1) as f64).min(1.0)
}

/// Significance label in the usual star notation.
pub fn significance_label(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        "n.s."
    }
}
