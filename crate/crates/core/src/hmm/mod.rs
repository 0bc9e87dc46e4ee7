//! Gaussian hidden Markov models per (season, weekday) and consumer type.
//!
//! Observations are rows of a `T × d` matrix; emissions are diagonal
//! Gaussians. Inference uses the scaled forward-backward recursions.

mod fit;
mod generate;
mod training_set;

pub use fit::{baum_welch_fit, BaumWelchConfig, FitOutcome};
pub use generate::{
    assemble_span, assemble_year, load_cluster, sample_day, save_cluster, train_cluster, ClusterHmms, HmmTrainConfig,
};
pub use training_set::{build_training_set, rolling_mean, HmmKey, HmmTrainingSet, TrainingSetOptions, OBS_DIM};

use ndarray::{Array2, ArrayView2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_STATES: usize = 50;
pub const DAY_STEPS: usize = 96;

#[derive(Debug, Error)]
pub enum HmmError {
    #[error("no training sequences")]
    EmptyInput,
    #[error("sequences have inconsistent dimensions")]
    DimensionMismatch,
    #[error("emission variance collapsed to {0} with the variance floor disabled")]
    DegenerateEmissions(f64),
    #[error("observation sequence has zero likelihood under the model")]
    ZeroLikelihood,
    #[error("profile {0} has no temperature column")]
    MissingTemperature(String),
    #[error("no training days for {0}")]
    EmptyGroup(HmmKey),
    #[error("no model for {0}")]
    MissingModel(HmmKey),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `initial`, `transition`, `emission_means`, `emission_vars` match the
/// persisted JSON layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianHmm {
    pub initial: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    pub emission_means: Vec<Vec<f64>>,
    pub emission_vars: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<HmmKey>,
}

/// Scaled forward pass: normalized alphas, per-step scale factors and the
/// per-step log shift applied to the emission probabilities.
pub(crate) struct ForwardPass {
    pub alpha: Vec<f64>,
    pub scale: Vec<f64>,
    pub emis: Vec<f64>,
    pub log_likelihood: f64,
}

impl GaussianHmm {
    pub fn n_states(&self) -> usize {
        self.initial.len()
    }

    pub fn dim(&self) -> usize {
        self.emission_means.first().map_or(0, Vec::len)
    }

    /// Log-density of one observation under every state.
    pub fn log_emissions(&self, x: &[f64], out: &mut [f64]) {
        for (s, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for ((xi, m), v) in x.iter().zip(&self.emission_means[s]).zip(&self.emission_vars[s]) {
                let d = xi - m;
                acc += (std::f64::consts::TAU * v).ln() + d * d / v;
            }
            *o = -0.5 * acc;
        }
    }

    pub(crate) fn forward(&self, seq: ArrayView2<f64>) -> Result<ForwardPass, HmmError> {
        let n = self.n_states();
        let t_len = seq.nrows();
        let mut emis = vec![0.0; t_len * n];
        let mut shift_total = 0.0;
        let mut logb = vec![0.0; n];
        for t in 0..t_len {
            let row = seq.row(t);
            let row = row.as_slice().map(|s| s.to_vec()).unwrap_or_else(|| row.to_vec());
            self.log_emissions(&row, &mut logb);
            let m = logb.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            shift_total += m;
            for s in 0..n {
                emis[t * n + s] = (logb[s] - m).exp();
            }
        }
        let mut alpha = vec![0.0; t_len * n];
        let mut scale = vec![0.0; t_len];
        let mut ll = shift_total;
        for t in 0..t_len {
            let (prev, cur) = alpha.split_at_mut(t * n);
            let cur = &mut cur[..n];
            if t == 0 {
                for s in 0..n {
                    cur[s] = self.initial[s] * emis[s];
                }
            } else {
                let prev = &prev[(t - 1) * n..];
                cur.fill(0.0);
                for (i, &a) in prev.iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    for (c, p) in cur.iter_mut().zip(&self.transition[i]) {
                        *c += a * p;
                    }
                }
                for s in 0..n {
                    cur[s] *= emis[t * n + s];
                }
            }
            let c: f64 = cur.iter().sum();
            if !(c > 0.0) || !c.is_finite() {
                return Err(HmmError::ZeroLikelihood);
            }
            cur.iter_mut().for_each(|x| *x /= c);
            scale[t] = c;
            ll += c.ln();
        }
        Ok(ForwardPass {
            alpha,
            scale,
            emis,
            log_likelihood: ll,
        })
    }

    /// Log-likelihood of one sequence (forward algorithm).
    pub fn log_likelihood(&self, seq: ArrayView2<f64>) -> Result<f64, HmmError> {
        Ok(self.forward(seq)?.log_likelihood)
    }

    /// Most probable state path.
    pub fn viterbi(&self, seq: ArrayView2<f64>) -> Vec<usize> {
        let n = self.n_states();
        let t_len = seq.nrows();
        if t_len == 0 {
            return vec![];
        }
        let log_a: Vec<Vec<f64>> = self
            .transition
            .iter()
            .map(|r| r.iter().map(|p| p.ln()).collect())
            .collect();
        let mut logb = vec![0.0; n];
        let mut delta: Vec<f64> = vec![0.0; n];
        let mut back = vec![0usize; t_len * n];
        self.log_emissions(&seq.row(0).to_vec(), &mut logb);
        for s in 0..n {
            delta[s] = self.initial[s].ln() + logb[s];
        }
        let mut next = vec![0.0; n];
        for t in 1..t_len {
            self.log_emissions(&seq.row(t).to_vec(), &mut logb);
            for j in 0..n {
                let mut best = (0, f64::NEG_INFINITY);
                for i in 0..n {
                    let v = delta[i] + log_a[i][j];
                    if v > best.1 {
                        best = (i, v);
                    }
                }
                back[t * n + j] = best.0;
                next[j] = best.1 + logb[j];
            }
            std::mem::swap(&mut delta, &mut next);
        }
        let mut state = (0..n).fold(0, |b, s| if delta[s] > delta[b] { s } else { b });
        let mut path = vec![0; t_len];
        for t in (0..t_len).rev() {
            path[t] = state;
            if t > 0 {
                state = back[t * n + state];
            }
        }
        path
    }

    /// Draws a state path and observations of length `len`.
    pub fn sample<R: rand::Rng>(&self, len: usize, rng: &mut R) -> (Vec<usize>, Array2<f64>) {
        let d = self.dim();
        let mut states = Vec::with_capacity(len);
        let mut obs = Array2::zeros((len, d));
        let mut s = draw_categorical(&self.initial, rng);
        for t in 0..len {
            if t > 0 {
                s = draw_categorical(&self.transition[s], rng);
            }
            states.push(s);
            for k in 0..d {
                let z: f64 = StandardNormal.sample(rng);
                obs[[t, k]] = self.emission_means[s][k] + self.emission_vars[s][k].sqrt() * z;
            }
        }
        (states, obs)
    }

    /// Largest deviation of any stochastic row from summing to one.
    pub fn stochasticity_error(&self) -> f64 {
        let row_err = |r: &[f64]| (r.iter().sum::<f64>() - 1.0).abs();
        self.transition
            .iter()
            .map(|r| row_err(r))
            .fold(row_err(&self.initial), f64::max)
    }
}

fn draw_categorical<R: rand::Rng>(p: &[f64], rng: &mut R) -> usize {
    let total: f64 = p.iter().sum();
    let mut r = rng.random_range(0.0..1.0) * total;
    for (i, &w) in p.iter().enumerate() {
        if r < w {
            return i;
        }
        r -= w;
    }
    p.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng as _;

    pub(crate) fn two_state_toy() -> GaussianHmm {
        GaussianHmm {
            initial: vec![2.0 / 3.0, 1.0 / 3.0],
            transition: vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            emission_means: vec![vec![0.0], vec![1.0]],
            emission_vars: vec![vec![0.01], vec![0.01]],
            tag: None,
        }
    }

    fn gauss(x: f64, m: f64, v: f64) -> f64 {
        (-(x - m).powi(2) / (2.0 * v)).exp() / (std::f64::consts::TAU * v).sqrt()
    }

    /// Sum over every state path.
    fn brute_force_likelihood(h: &GaussianHmm, xs: &[f64]) -> f64 {
        let n = h.n_states();
        let t_len = xs.len();
        let mut total = 0.0;
        for code in 0..n.pow(t_len as u32) {
            let mut c = code;
            let path: Vec<usize> = (0..t_len)
                .map(|_| {
                    let s = c % n;
                    c /= n;
                    s
                })
                .collect();
            let mut p = h.initial[path[0]] * gauss(xs[0], h.emission_means[path[0]][0], h.emission_vars[path[0]][0]);
            for t in 1..t_len {
                p *= h.transition[path[t - 1]][path[t]]
                    * gauss(xs[t], h.emission_means[path[t]][0], h.emission_vars[path[t]][0]);
            }
            total += p;
        }
        total
    }

    fn random_hmm(n: usize, seed: u64) -> GaussianHmm {
        let mut rng = seeded(seed);
        let mut row = |n: usize| {
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let initial = row(n);
        let transition = (0..n).map(|_| row(n)).collect();
        let mut rng = seeded(seed + 1000);
        GaussianHmm {
            initial,
            transition,
            emission_means: (0..n).map(|_| vec![rng.random_range(-1.0..1.0)]).collect(),
            emission_vars: (0..n).map(|_| vec![rng.random_range(0.2..1.5)]).collect(),
            tag: None,
        }
    }

    #[test]
    fn forward_matches_path_enumeration() {
        let h = two_state_toy();
        let xs = [0.05, 0.9, 1.1];
        let seq = Array2::from_shape_vec((3, 1), xs.to_vec()).unwrap();
        let ll = h.log_likelihood(seq.view()).unwrap();
        let bf = brute_force_likelihood(&h, &xs).ln();
        assert!((ll - bf).abs() <= 1e-12 * bf.abs().max(1.0));

        let mut rng = seeded(5);
        for case in 0..50 {
            let n = 1 + case % 3;
            let t_len = 1 + case % 5;
            let h = random_hmm(n, case as u64);
            let xs: Vec<f64> = (0..t_len).map(|_| rng.random_range(-1.5..1.5)).collect();
            let seq = Array2::from_shape_vec((t_len, 1), xs.clone()).unwrap();
            let ll = h.log_likelihood(seq.view()).unwrap();
            let bf = brute_force_likelihood(&h, &xs).ln();
            assert!(
                (ll - bf).abs() <= 1e-12 * bf.abs().max(1.0),
                "case {case}: {ll} vs {bf}"
            );
        }
    }

    #[test]
    fn viterbi_follows_obvious_regimes() {
        let h = two_state_toy();
        let xs = [0.0, 0.02, 1.0, 0.98, 1.01, 0.0];
        let seq = Array2::from_shape_vec((6, 1), xs.to_vec()).unwrap();
        assert_eq!(h.viterbi(seq.view()), vec![0, 0, 1, 1, 1, 0]);
    }

    #[test]
    fn sampling_is_seeded() {
        let h = two_state_toy();
        let a = h.sample(96, &mut seeded(3));
        let b = h.sample(96, &mut seeded(3));
        assert_eq!(a, b);
    }

    #[test]
    fn state_occupancy_approaches_stationary_distribution() {
        let h = two_state_toy();
        let mut rng = seeded(21);
        let mut counts = [0usize; 2];
        for _ in 0..10_000 {
            let (states, _) = h.sample(DAY_STEPS, &mut rng);
            for s in states {
                counts[s] += 1;
            }
        }
        let total = (counts[0] + counts[1]) as f64;
        // stationary vector of [[0.9,0.1],[0.2,0.8]] solves pi = pi A: (2/3, 1/3)
        assert!((counts[0] as f64 / total - 2.0 / 3.0).abs() < 0.02);
        assert!((counts[1] as f64 / total - 1.0 / 3.0).abs() < 0.02);
    }

    #[test]
    fn single_state_day_is_near_constant() {
        let h = GaussianHmm {
            initial: vec![1.0],
            transition: vec![vec![1.0]],
            emission_means: vec![vec![0.4, 0.5, 0.5, 0.5]],
            emission_vars: vec![vec![1e-6; 4]],
            tag: None,
        };
        let day = sample_day(&h, 9);
        assert_eq!(day.len(), DAY_STEPS);
        assert!(day.iter().all(|x| (x - 0.4).abs() < 0.01));
    }
}
