use super::{GaussianHmm, HmmError};
use crate::rng::{derive_seed, seeded};
use crate::typing::kmeanspp_fit;
use ndarray::Array2;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

/// Pooled rows beyond this count are subsampled for the k-means initialization.
const INIT_MAX_ROWS: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaumWelchConfig {
    pub n_states: usize,
    pub max_iter: usize,
    /// Stop once the total log-likelihood changes by less than this.
    pub tol: f64,
    /// `None` disables the floor (degenerate variances then raise an error).
    pub var_floor: Option<f64>,
    pub seed: u64,
}

impl Default for BaumWelchConfig {
    fn default() -> Self {
        BaumWelchConfig {
            n_states: super::DEFAULT_STATES,
            max_iter: 100,
            tol: 1e-4,
            var_floor: Some(1e-6),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: GaussianHmm,
    /// Total log-likelihood of the data under the parameters entering each
    /// EM iteration, followed by the value for the returned model.
    pub log_likelihoods: Vec<f64>,
    pub converged: bool,
}

struct Stats {
    init: Vec<f64>,
    trans: Vec<f64>,
    weight: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
    ll: f64,
}

impl Stats {
    fn new(n: usize, d: usize) -> Self {
        Stats {
            init: vec![0.0; n],
            trans: vec![0.0; n * n],
            weight: vec![0.0; n],
            s1: vec![0.0; n * d],
            s2: vec![0.0; n * d],
            ll: 0.0,
        }
    }
}

/// Expectation-maximization for a diagonal-Gaussian HMM.
///
/// States are seeded by k-means on the pooled observation rows; means and
/// variances of each k-means cluster initialize the emissions, transitions
/// and initial probabilities start uniform over the states k-means used.
pub fn baum_welch_fit(seqs: &[Array2<f64>], cfg: &BaumWelchConfig) -> Result<FitOutcome, HmmError> {
    let seqs: Vec<&Array2<f64>> = seqs.iter().filter(|s| s.nrows() > 0).collect();
    if seqs.is_empty() || cfg.n_states == 0 {
        return Err(HmmError::EmptyInput);
    }
    let d = seqs[0].ncols();
    if seqs.iter().any(|s| s.ncols() != d) {
        return Err(HmmError::DimensionMismatch);
    }
    let mut model = initialize(&seqs, cfg)?;
    let n = cfg.n_states;
    let mut lls: Vec<f64> = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        let stats = e_step(&model, &seqs, n, d)?;
        let ll = stats.ll;
        if let Some(&prev) = lls.last() {
            if (ll - prev).abs() < cfg.tol {
                lls.push(ll);
                converged = true;
                break;
            }
        }
        lls.push(ll);
        m_step(&mut model, &stats, cfg.var_floor)?;
    }
    if !converged {
        lls.push(e_step(&model, &seqs, n, d)?.ll);
    }
    Ok(FitOutcome {
        model,
        log_likelihoods: lls,
        converged,
    })
}

fn initialize(seqs: &[&Array2<f64>], cfg: &BaumWelchConfig) -> Result<GaussianHmm, HmmError> {
    let n = cfg.n_states;
    let d = seqs[0].ncols();
    let mut rows: Vec<Vec<f64>> = seqs
        .iter()
        .flat_map(|s| s.rows().into_iter().map(|r| r.to_vec()))
        .collect();
    if rows.len() > INIT_MAX_ROWS {
        let mut rng = seeded(derive_seed(cfg.seed, 11, 0));
        let mut idx = sample(&mut rng, rows.len(), INIT_MAX_ROWS).into_vec();
        idx.sort_unstable();
        rows = idx.into_iter().map(|i| rows[i].clone()).collect();
    }
    let total = rows.len() as f64;
    let pooled_mean: Vec<f64> = (0..d).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / total).collect();
    let pooled_var: Vec<f64> = (0..d)
        .map(|k| rows.iter().map(|r| (r[k] - pooled_mean[k]).powi(2)).sum::<f64>() / total)
        .collect();
    let floor = cfg.var_floor.unwrap_or(0.0);

    let k = n.min(rows.len());
    let fit = kmeanspp_fit(&rows, k, cfg.seed).map_err(|_| HmmError::EmptyInput)?;
    let mut means = vec![pooled_mean.clone(); n];
    let broad: Vec<f64> = pooled_var.iter().map(|v| v.max(1e-2).max(floor)).collect();
    let mut vars = vec![broad; n];
    let mut counts = vec![0usize; n];
    let mut sums = vec![vec![0.0; d]; n];
    let mut sq = vec![vec![0.0; d]; n];
    for (r, &a) in rows.iter().zip(&fit.assignments) {
        counts[a] += 1;
        for kk in 0..d {
            let c = r[kk] - fit.centroids[a][kk];
            sums[a][kk] += r[kk];
            sq[a][kk] += c * c;
        }
    }
    for s in 0..k {
        if counts[s] > 0 {
            means[s] = sums[s].iter().map(|x| x / counts[s] as f64).collect();
            vars[s] = sq[s].iter().map(|x| (x / counts[s] as f64).max(floor)).collect();
        }
    }
    if cfg.var_floor.is_none() {
        if let Some(v) = vars.iter().flatten().find(|v| !(**v > 0.0)) {
            return Err(HmmError::DegenerateEmissions(*v));
        }
    }
    // states that k-means left empty start unreachable
    let live = counts.iter().filter(|&&c| c > 0).count() as f64;
    let row: Vec<f64> = counts.iter().map(|&c| if c > 0 { 1.0 / live } else { 0.0 }).collect();
    Ok(GaussianHmm {
        initial: row.clone(),
        transition: vec![row; n],
        emission_means: means,
        emission_vars: vars,
        tag: None,
    })
}

fn e_step(model: &GaussianHmm, seqs: &[&Array2<f64>], n: usize, d: usize) -> Result<Stats, HmmError> {
    let mut st = Stats::new(n, d);
    let mut beta = Vec::new();
    let mut tmp = vec![0.0; n];
    for seq in seqs {
        let fw = model.forward(seq.view())?;
        st.ll += fw.log_likelihood;
        let t_len = seq.nrows();
        beta.clear();
        beta.resize(t_len * n, 0.0);
        beta[(t_len - 1) * n..].fill(1.0);
        for t in (0..t_len - 1).rev() {
            for j in 0..n {
                tmp[j] = fw.emis[(t + 1) * n + j] * beta[(t + 1) * n + j];
            }
            let c = fw.scale[t + 1];
            for i in 0..n {
                let row = &model.transition[i];
                let mut acc = 0.0;
                for j in 0..n {
                    acc += row[j] * tmp[j];
                }
                beta[t * n + i] = acc / c;
            }
            // transition counts: xi_t(i,j) = alpha_t(i) A_ij b_{t+1}(j) beta_{t+1}(j) / c_{t+1}
            for i in 0..n {
                let a = fw.alpha[t * n + i] / c;
                if a == 0.0 {
                    continue;
                }
                let row = &model.transition[i];
                let out = &mut st.trans[i * n..(i + 1) * n];
                for j in 0..n {
                    out[j] += a * row[j] * tmp[j];
                }
            }
        }
        for t in 0..t_len {
            let row = seq.row(t);
            for s in 0..n {
                let g = fw.alpha[t * n + s] * beta[t * n + s];
                if g == 0.0 {
                    continue;
                }
                if t == 0 {
                    st.init[s] += g;
                }
                st.weight[s] += g;
                let mean = &model.emission_means[s];
                for k in 0..d {
                    let c = row[k] - mean[k];
                    st.s1[s * d + k] += g * c;
                    st.s2[s * d + k] += g * c * c;
                }
            }
        }
    }
    Ok(st)
}

fn m_step(model: &mut GaussianHmm, st: &Stats, var_floor: Option<f64>) -> Result<(), HmmError> {
    let n = model.n_states();
    let d = model.dim();
    let init_total: f64 = st.init.iter().sum();
    if init_total > 0.0 {
        model.initial = st.init.iter().map(|x| x / init_total).collect();
    }
    for i in 0..n {
        let row = &st.trans[i * n..(i + 1) * n];
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            model.transition[i] = row.iter().map(|x| x / total).collect();
        }
    }
    for s in 0..n {
        let w = st.weight[s];
        if w <= 0.0 {
            continue;
        }
        for k in 0..d {
            let m1 = st.s1[s * d + k] / w;
            let var = st.s2[s * d + k] / w - m1 * m1;
            model.emission_means[s][k] += m1;
            model.emission_vars[s][k] = match var_floor {
                Some(f) => var.max(f),
                None if var > 0.0 => var,
                None => return Err(HmmError::DegenerateEmissions(var)),
            };
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::tests::two_state_toy;
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn recovers_two_state_ground_truth() {
        let truth = two_state_toy();
        let mut rng = seeded(42);
        let seqs: Vec<Array2<f64>> = (0..200).map(|_| truth.sample(96, &mut rng).1).collect();
        let cfg = BaumWelchConfig {
            n_states: 2,
            max_iter: 200,
            tol: 1e-8,
            seed: 1,
            ..Default::default()
        };
        let fit = baum_welch_fit(&seqs, &cfg).unwrap();
        for w in fit.log_likelihoods.windows(2) {
            assert!(w[1] >= w[0] - 1e-8 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }
        let m = &fit.model;
        // align states by emission mean
        let order: Vec<usize> = if m.emission_means[0][0] < m.emission_means[1][0] {
            vec![0, 1]
        } else {
            vec![1, 0]
        };
        for i in 0..2 {
            for j in 0..2 {
                let got = m.transition[order[i]][order[j]];
                assert!((got - truth.transition[i][j]).abs() < 0.05, "A[{i}][{j}] = {got}");
            }
        }
        assert!(m.stochasticity_error() < 1e-9);
    }

    #[test]
    fn constant_sequence_uses_one_state() {
        let seq = Array2::from_elem((96, 1), 0.3);
        let cfg = BaumWelchConfig {
            n_states: 5,
            max_iter: 30,
            ..Default::default()
        };
        let fit = baum_welch_fit(&[seq.clone()], &cfg).unwrap();
        let path = fit.model.viterbi(seq.view());
        assert!(path.iter().all(|&s| s == path[0]));
        let s = path[0];
        assert!(fit.model.transition[s][s] > 0.99);
        assert!(fit.model.initial[s] > 0.99);
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(matches!(
            baum_welch_fit(&[], &BaumWelchConfig::default()),
            Err(HmmError::EmptyInput)
        ));
    }

    #[test]
    fn disabled_floor_reports_degenerate_emissions() {
        let seq = Array2::from_elem((20, 1), 1.0);
        let cfg = BaumWelchConfig {
            n_states: 2,
            var_floor: None,
            ..Default::default()
        };
        assert!(matches!(
            baum_welch_fit(&[seq], &cfg),
            Err(HmmError::DegenerateEmissions(_))
        ));
    }

    #[test]
    fn likelihood_is_monotone_on_random_data() {
        let mut rng = seeded(8);
        use rand::Rng as _;
        let seqs: Vec<Array2<f64>> = (0..12)
            .map(|_| Array2::from_shape_fn((40, 2), |_| rng.random_range(0.0..1.0)))
            .collect();
        for seed in 0..4 {
            let cfg = BaumWelchConfig {
                n_states: 6,
                max_iter: 40,
                tol: 0.0,
                seed,
                ..Default::default()
            };
            let fit = baum_welch_fit(&seqs, &cfg).unwrap();
            for w in fit.log_likelihoods.windows(2) {
                assert!(w[1] >= w[0] - 1e-8 * w[0].abs().max(1.0));
            }
            assert!(fit.model.stochasticity_error() < 1e-9);
        }
    }
}
