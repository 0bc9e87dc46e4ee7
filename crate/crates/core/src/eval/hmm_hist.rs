use crate::dataset::{is_missing, LoadProfile, SLOTS_PER_DAY};
use crate::hmm::{baum_welch_fit, BaumWelchConfig, HmmError};
use ndarray::Array2;

/// Fits a power-only HMM to the complete days of `p` and returns the
/// Viterbi state occupancy frequencies (summing to 1).
pub fn hmm_state_histogram(p: &LoadProfile, cfg: &BaumWelchConfig) -> Result<Vec<f64>, HmmError> {
    let seqs: Vec<Array2<f64>> = p
        .values
        .chunks_exact(SLOTS_PER_DAY)
        .filter(|d| d.iter().all(|v| !is_missing(*v)))
        .map(|d| Array2::from_shape_vec((SLOTS_PER_DAY, 1), d.to_vec()).expect("day shape"))
        .collect();
    let fit = baum_welch_fit(&seqs, cfg)?;
    let mut counts = vec![0usize; fit.model.n_states()];
    for s in &seqs {
        for st in fit.model.viterbi(s.view()) {
            counts[st] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    Ok(counts.into_iter().map(|c| c as f64 / total as f64).collect())
}
