use super::EvalError;
use crate::dataset::is_missing;
use serde::Serialize;

/// Real and synthetic series aligned slot by slot, with jointly dropped gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPair {
    pub y: Vec<f64>,
    pub y_hat: Vec<f64>,
}

impl SeriesPair {
    /// Drops every slot missing in either series.
    pub fn new(y: &[f64], y_hat: &[f64]) -> Result<Self, EvalError> {
        if y.len() != y_hat.len() {
            return Err(EvalError::LengthMismatch(y.len(), y_hat.len()));
        }
        let (y, y_hat): (Vec<f64>, Vec<f64>) = y
            .iter()
            .zip(y_hat)
            .filter(|(a, b)| !is_missing(**a) && !is_missing(**b))
            .map(|(a, b)| (*a, *b))
            .unzip();
        if y.len() < 2 {
            return Err(EvalError::TooShort(y.len()));
        }
        Ok(SeriesPair { y, y_hat })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointMetrics {
    pub mae: f64,
    /// Percent; `None` when every real value was zero.
    pub mape: Option<f64>,
    pub mape_skipped: usize,
    pub rmse: f64,
    /// `None` when either series is constant.
    pub pearson: Option<f64>,
}

pub fn mae(y: &[f64], y_hat: &[f64]) -> f64 {
    y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64
}

pub fn rmse(y: &[f64], y_hat: &[f64]) -> f64 {
    (y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64).sqrt()
}

/// MAPE in percent and the number of skipped slots. Without `keep_eps`,
/// slots with `y = 0` are skipped; with it, every slot is kept and the
/// denominator is `max(|y|, eps)`.
pub fn mape(y: &[f64], y_hat: &[f64], keep_eps: Option<f64>) -> (Option<f64>, usize) {
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut skipped = 0usize;
    for (a, b) in y.iter().zip(y_hat) {
        let denom = match keep_eps {
            Some(eps) => a.abs().max(eps),
            None if *a == 0.0 => {
                skipped += 1;
                continue;
            }
            None => a.abs(),
        };
        sum += ((a - b) / denom).abs();
        n += 1;
    }
    ((n > 0).then(|| 100.0 * sum / n as f64), skipped)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::ConstantSeries);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn pointwise_metrics(pair: &SeriesPair, mape_keep_eps: Option<f64>) -> PointMetrics {
    let (mape, mape_skipped) = mape(&pair.y, &pair.y_hat, mape_keep_eps);
    PointMetrics {
        mae: mae(&pair.y, &pair.y_hat),
        mape,
        mape_skipped,
        rmse: rmse(&pair.y, &pair.y_hat),
        pearson: pearson(&pair.y, &pair.y_hat).ok(),
    }
}

/// Cosine similarity of the two raw vectors; `None` if either is all zero.
pub fn cosine_similarity(x: &[f64], y: &[f64]) -> Option<f64> {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let nx = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ny = y.iter().map(|b| b * b).sum::<f64>().sqrt();
    (nx > 0.0 && ny > 0.0).then(|| dot / (nx * ny))
}

/// SSIM stabilizers `(0.01 L)²` and `(0.03 L)²` for dynamic range `L`.
pub fn ssim_constants(range: f64) -> (f64, f64) {
    ((0.01 * range).powi(2), (0.03 * range).powi(2))
}

/// Dynamic range of the present values of `x`.
pub fn dynamic_range(x: &[f64]) -> f64 {
    let (lo, hi) = x
        .iter()
        .filter(|v| !is_missing(**v))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(*v), hi.max(*v))
        });
    if hi >= lo {
        hi - lo
    } else {
        0.0
    }
}

fn ssim_window(x: &[f64], y: &[f64], c1: f64, c2: f64) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let ddof = if x.len() > 1 { n - 1.0 } else { 1.0 };
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        vx += (a - mx).powi(2);
        vy += (b - my).powi(2);
        cxy += (a - mx) * (b - my);
    }
    let (vx, vy, cxy) = (vx / ddof, vy / ddof, cxy / ddof);
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Mean SSIM over windows of `window` slots taken every `stride` slots;
/// a trailing partial window is ignored. Window statistics use the
/// unbiased (n - 1) variance and covariance.
pub fn ssim(x: &[f64], y: &[f64], window: usize, stride: usize, c1: f64, c2: f64) -> Result<f64, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch(x.len(), y.len()));
    }
    if window == 0 || window > x.len() {
        return Err(EvalError::WindowTooLarge { window, len: x.len() });
    }
    let stride = stride.max(1);
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut s = 0;
    while s + window <= x.len() {
        sum += ssim_window(&x[s..s + window], &y[s..s + window], c1, c2);
        count += 1;
        s += stride;
    }
    Ok(sum / count as f64)
}

/// RBF kernel bandwidth for the MMD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Median pairwise distance over the union of both samples.
    #[default]
    Median,
    Fixed(f64),
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Median pairwise Euclidean distance of the union sample; falls back to 1
/// when it is zero (all points identical).
pub fn median_heuristic(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let all: Vec<&Vec<f64>> = x.iter().chain(y).collect();
    let mut d = Vec::with_capacity(all.len() * all.len().saturating_sub(1) / 2);
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            d.push(sq_dist(all[i], all[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    let mut med = *m;
    if d.len() % 2 == 0 {
        let lower = d[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        med = 0.5 * (med + lower);
    }
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

fn kernel_mean(a: &[Vec<f64>], b: &[Vec<f64>], gamma: f64) -> f64 {
    let mut s = 0.0;
    for p in a {
        for q in b {
            s += (-gamma * sq_dist(p, q)).exp();
        }
    }
    s / (a.len() * b.len()) as f64
}

fn set_order(x: &[Vec<f64>], y: &[Vec<f64>]) -> std::cmp::Ordering {
    x.len().cmp(&y.len()).then_with(|| {
        x.iter()
            .flatten()
            .zip(y.iter().flatten())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    })
}

/// Biased (V-statistic) squared MMD with an RBF kernel
/// `exp(-|a - b|² / (2 σ²))`.
pub fn mmd2(x: &[Vec<f64>], y: &[Vec<f64>], bandwidth: Bandwidth) -> Result<f64, EvalError> {
    if x.is_empty() || y.is_empty() {
        return Err(EvalError::EmptyPool);
    }
    let sigma = match bandwidth {
        Bandwidth::Median => median_heuristic(x, y),
        Bandwidth::Fixed(s) if s > 0.0 && s.is_finite() => s,
        Bandwidth::Fixed(s) => return Err(EvalError::InvalidBandwidth(s)),
    };
    let gamma = 1.0 / (2.0 * sigma * sigma);
    // fixed operand order keeps the result symmetric to the last bit
    let (a, b) = if set_order(x, y).is_le() { (x, y) } else { (y, x) };
    let v = kernel_mean(a, a, gamma) + kernel_mean(b, b, gamma) - 2.0 * kernel_mean(a, b, gamma);
    Ok(v.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    #[test]
    fn identity_pair() {
        let y = vec![1.0, 2.0, 3.0, 5.0];
        let m = pointwise_metrics(&SeriesPair::new(&y, &y).unwrap(), None);
        assert_eq!((m.mae, m.mape, m.rmse, m.pearson), (0.0, Some(0.0), 0.0, Some(1.0)));
    }

    #[test]
    fn hand_values() {
        let m = pointwise_metrics(&SeriesPair::new(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), None);
        assert_eq!(m.mae, 1.5);
        assert_eq!(m.mape, Some(100.0));
        assert!((m.rmse - 2.5f64.sqrt()).abs() < 1e-15);
        assert!((m.pearson.unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
    }

    #[test]
    fn zeros_are_skipped_or_kept() {
        let (v, skipped) = mape(&[0.0, 2.0], &[1.0, 1.0], None);
        assert_eq!((v, skipped), (Some(50.0), 1));
        let (v, skipped) = mape(&[0.0, 2.0], &[1.0, 1.0], Some(1e-3));
        assert_eq!(skipped, 0);
        assert!((v.unwrap() - 50_025.0).abs() < 1e-9);
        assert_eq!(mape(&[0.0], &[1.0], None), (None, 1));
    }

    #[test]
    fn pairs_drop_missing_jointly() {
        let p = SeriesPair::new(&[1.0, f64::NAN, 3.0, 4.0], &[1.0, 2.0, f64::NAN, 5.0]).unwrap();
        assert_eq!(p.y, vec![1.0, 4.0]);
        assert_eq!(p.y_hat, vec![1.0, 5.0]);
        assert_eq!(
            SeriesPair::new(&[1.0], &[1.0, 2.0]),
            Err(EvalError::LengthMismatch(1, 2))
        );
    }

    #[test]
    fn constant_series_flags_pearson() {
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(EvalError::ConstantSeries));
        let m = pointwise_metrics(&SeriesPair::new(&[1.0, 1.0], &[1.0, 2.0]).unwrap(), None);
        assert_eq!(m.pearson, None);
    }

    #[test]
    fn pearson_affine_invariance() {
        let mut rng = seeded(2);
        let x: Vec<f64> = (0..50).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..50).map(|_| rng.random()).collect();
        let base = pearson(&x, &y).unwrap();
        let ya: Vec<f64> = y.iter().map(|v| 3.5 * v + 100.0).collect();
        assert!((pearson(&x, &ya).unwrap() - base).abs() < 1e-9);
    }

    #[test]
    fn ssim_cases() {
        let mut rng = seeded(4);
        let x: Vec<f64> = (0..192).map(|_| rng.random()).collect();
        assert_eq!(ssim(&x, &x, 96, 96, 1e-4, 9e-4).unwrap(), 1.0);
        let z = vec![0.0; 4];
        let o = vec![1.0; 4];
        let (c1, c2) = ssim_constants(1.0);
        let v = ssim(&z, &o, 4, 4, c1, c2).unwrap();
        assert!((v - c1 / (1.0 + c1)).abs() < 1e-15);
        assert!((v - 9.999e-5).abs() < 1e-8);
        for _ in 0..100 {
            let a: Vec<f64> = (0..20).map(|_| rng.random()).collect();
            let b: Vec<f64> = (0..20).map(|_| rng.random()).collect();
            assert_eq!(ssim(&a, &b, 5, 3, c1, c2).unwrap(), ssim(&b, &a, 5, 3, c1, c2).unwrap());
        }
        assert_eq!(
            ssim(&z, &o, 5, 5, c1, c2),
            Err(EvalError::WindowTooLarge { window: 5, len: 4 })
        );
    }

    #[test]
    fn mmd_cases() {
        let x = vec![vec![0.0]];
        let y = vec![vec![1.0]];
        let v = mmd2(&x, &y, Bandwidth::Fixed(1.0)).unwrap();
        assert!((v - (2.0 - 2.0 * (-0.5f64).exp())).abs() < 1e-15);
        assert!((v - 0.786939).abs() < 1e-6);
        let mut rng = seeded(5);
        let a: Vec<Vec<f64>> = (0..15).map(|_| (0..4).map(|_| rng.random()).collect()).collect();
        let b: Vec<Vec<f64>> = (0..9).map(|_| (0..4).map(|_| rng.random()).collect()).collect();
        assert!(mmd2(&a, &a, Bandwidth::Median).unwrap().abs() < 1e-12);
        assert_eq!(
            mmd2(&a, &b, Bandwidth::Median).unwrap(),
            mmd2(&b, &a, Bandwidth::Median).unwrap()
        );
        assert!(mmd2(&a, &b, Bandwidth::Fixed(0.0)).is_err());
    }

    #[test]
    fn median_of_pairwise_distances() {
        // points 0, 1, 3: distances 1, 3, 2
        let x = vec![vec![0.0], vec![1.0]];
        let y = vec![vec![3.0]];
        assert_eq!(median_heuristic(&x, &y), 2.0);
        // points 0, 1, 4, 6: distances 1, 4, 6, 3, 5, 2
        let y = vec![vec![4.0], vec![6.0]];
        assert_eq!(median_heuristic(&x, &y), 3.5);
        assert_eq!(median_heuristic(&[vec![2.0]], &[vec![2.0]]), 1.0);
    }

    #[test]
    fn cosine() {
        assert!((cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 2.0]), Some(0.0));
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[0.0, 2.0]), None);
    }
}
