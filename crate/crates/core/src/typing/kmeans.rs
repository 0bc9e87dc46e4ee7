use super::TypingError;
use crate::rng::seeded;
use rand::Rng as _;

pub const MAX_LLOYD_ITERS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Inertia after each assignment step.
    pub inertia_trace: Vec<f64>,
}

impl KMeansFit {
    pub fn inertia(&self) -> f64 {
        *self.inertia_trace.last().unwrap_or(&0.0)
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
pub fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// k-means++ seeding (D² sampling) followed by Lloyd iterations until the
/// assignment is stable or [`MAX_LLOYD_ITERS`] is reached.
///
/// An emptied cluster is re-seeded at the point farthest from its centroid.
pub fn kmeanspp_fit(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansFit, TypingError> {
    let n = points.len();
    if k == 0 || n < k {
        return Err(TypingError::TooFewPoints { got: n, k });
    }
    let mut rng = seeded(seed);
    let mut chosen: Vec<usize> = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                if r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            // round-off can land on a zero-weight tail entry
            if d2[pick] <= 0.0 {
                pick = (0..n).rev().find(|&i| d2[i] > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[next]));
        }
    }
    let mut centroids: Vec<Vec<f64>> = chosen.iter().map(|&i| points[i].clone()).collect();

    let dim = points[0].len();
    let mut assignments = vec![usize::MAX; n];
    let mut trace = Vec::new();
    for _ in 0..MAX_LLOYD_ITERS {
        let mut changed = false;
        let mut inertia = 0.0;
        let mut dist = vec![0.0; n];
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p, &centroids);
            if assignments[i] != j {
                assignments[i] = j;
                changed = true;
            }
            dist[i] = d;
            inertia += d;
        }
        trace.push(inertia);
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        // distances to the updated centroids for the reseed rule
        for (i, p) in points.iter().enumerate() {
            dist[i] = sq_dist(p, &centroids[assignments[i]]);
        }
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .unwrap();
                centroids[j] = points[far].clone();
                dist[far] = 0.0;
            }
        }
    }
    Ok(KMeansFit {
        centroids,
        assignments,
        inertia_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn one_point_per_cluster() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let fit = kmeanspp_fit(&pts, 6, 4).unwrap();
        assert_eq!(fit.inertia(), 0.0);
        let mut a = fit.assignments.clone();
        a.sort();
        a.dedup();
        assert_eq!(a.len(), 6);
    }

    fn blobs(seed: u64, per: usize) -> Vec<Vec<f64>> {
        let mut rng = seeded(seed);
        let n = Normal::new(0.0, 0.3).unwrap();
        let mut pts = Vec::new();
        for c in [[0.0, 0.0], [5.0, 5.0]] {
            for _ in 0..per {
                pts.push(vec![c[0] + n.sample(&mut rng), c[1] + n.sample(&mut rng)]);
            }
        }
        pts
    }

    /// Exhaustive oracle: best 2-partition by SSE.
    fn best_two_partition(pts: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
        let n = pts.len();
        let mut best = (f64::INFINITY, vec![]);
        for mask in 1u32..(1 << (n - 1)) {
            let mut groups = [vec![], vec![]];
            for (i, p) in pts.iter().enumerate() {
                groups[((mask >> i) & 1) as usize].push(p.clone());
            }
            let mut sse = 0.0;
            let mut cents = vec![];
            for g in &groups {
                let c: Vec<f64> = (0..2)
                    .map(|d| g.iter().map(|p| p[d]).sum::<f64>() / g.len() as f64)
                    .collect();
                sse += g.iter().map(|p| sq_dist(p, &c)).sum::<f64>();
                cents.push(c);
            }
            if sse < best.0 {
                best = (sse, cents);
            }
        }
        best
    }

    #[test]
    fn separated_blobs_match_exhaustive_search() {
        let pts = blobs(8, 6);
        let fit = kmeanspp_fit(&pts, 2, 1).unwrap();
        let (sse, cents) = best_two_partition(&pts);
        assert!((fit.inertia() - sse).abs() < 1e-9);
        for c in &fit.centroids {
            let closest = cents.iter().map(|o| sq_dist(c, o).sqrt()).fold(f64::INFINITY, f64::min);
            assert!(closest < 0.1);
        }
    }

    #[test]
    fn deterministic_under_seed_and_monotone() {
        let pts = blobs(3, 40);
        let a = kmeanspp_fit(&pts, 5, 17).unwrap();
        let b = kmeanspp_fit(&pts, 5, 17).unwrap();
        assert_eq!(a, b);
        for w in a.inertia_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn too_few_points() {
        let pts = vec![vec![0.0]; 3];
        assert!(matches!(
            kmeanspp_fit(&pts, 4, 0),
            Err(TypingError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let cents = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert_eq!(nearest(&[0.5], &cents).0, 0);
        assert_eq!(nearest(&[1.5], &cents).0, 1);
    }
}
