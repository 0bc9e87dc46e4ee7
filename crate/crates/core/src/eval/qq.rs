use super::EvalError;
use crate::dataset::is_missing;

/// Linearly interpolated quantile of an ascending, non-empty slice
/// (position `p (n - 1)`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QqPoint {
    pub p: f64,
    pub real: f64,
    pub synth: f64,
}

fn sorted_present(v: &[f64]) -> Vec<f64> {
    let mut s: Vec<f64> = v.iter().copied().filter(|x| !is_missing(*x)).collect();
    s.sort_by(f64::total_cmp);
    s
}

/// Probability levels `(i + 0.5) / n_q`.
pub fn qq_levels(n_q: usize) -> Vec<f64> {
    (0..n_q).map(|i| (i as f64 + 0.5) / n_q as f64).collect()
}

/// Paired empirical quantiles of two pools at `n_q` evenly spaced levels.
pub fn qq_quantiles(real_pool: &[f64], synth_pool: &[f64], n_q: usize) -> Result<Vec<QqPoint>, EvalError> {
    let r = sorted_present(real_pool);
    let s = sorted_present(synth_pool);
    if r.is_empty() || s.is_empty() {
        return Err(EvalError::EmptyPool);
    }
    Ok(qq_levels(n_q)
        .into_iter()
        .map(|p| QqPoint {
            p,
            real: quantile_sorted(&r, p),
            synth: quantile_sorted(&s, p),
        })
        .collect())
}

/// Quantiles of one pool at the levels of [`qq_levels`].
pub fn pool_quantiles(pool: &[f64], n_q: usize) -> Result<Vec<f64>, EvalError> {
    let s = sorted_present(pool);
    if s.is_empty() {
        return Err(EvalError::EmptyPool);
    }
    Ok(qq_levels(n_q).into_iter().map(|p| quantile_sorted(&s, p)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    #[test]
    fn interpolation() {
        let s = [1.0, 2.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.0), 1.0);
        assert_eq!(quantile_sorted(&s, 0.75), 3.0);
        assert_eq!(quantile_sorted(&s, 1.0), 4.0);
        assert_eq!(quantile_sorted(&[7.0], 0.3), 7.0);
    }

    #[test]
    fn same_pool_is_diagonal() {
        let pool: Vec<f64> = (0..500).map(|i| ((i * 37) % 101) as f64).collect();
        for q in qq_quantiles(&pool, &pool, 1000).unwrap() {
            assert_eq!(q.real, q.synth);
        }
    }

    #[test]
    fn uniform_matches_identity() {
        let mut rng = seeded(1);
        let u: Vec<f64> = (0..100_000).map(|_| rng.random()).collect();
        for q in qq_quantiles(&u, &u, 1000).unwrap() {
            assert!((q.real - q.p).abs() < 0.01);
        }
    }

    #[test]
    fn monotone_for_random_pools() {
        let mut rng = seeded(2);
        for _ in 0..20 {
            let a: Vec<f64> = (0..rng.random_range(1..50))
                .map(|_| rng.random::<f64>() * 10.0 - 5.0)
                .collect();
            let b: Vec<f64> = (0..rng.random_range(1..50)).map(|_| rng.random::<f64>()).collect();
            let q = qq_quantiles(&a, &b, 200).unwrap();
            assert!(q.windows(2).all(|w| w[0].real <= w[1].real && w[0].synth <= w[1].synth));
        }
        assert_eq!(qq_quantiles(&[], &[1.0], 10), Err(EvalError::EmptyPool));
    }
}
