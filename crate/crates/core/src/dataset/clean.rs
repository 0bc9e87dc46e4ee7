use super::{is_missing, DatasetError, LoadProfile, TEST_DAYS, TRAIN_DAYS};
use serde::{Deserialize, Serialize};

/// Plausibility rules applied by [`clean`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleaningRules {
    /// A reading above `spike_factor` times the rolling median is implausible.
    pub spike_factor: f64,
    /// Rolling-median window in slots, centered (96 = 24 h).
    pub spike_window: usize,
    /// Runs of at least this many exact zeros become gaps.
    pub zero_run_len: usize,
    pub max_missing_fraction: f64,
    pub min_span_days: f64,
}

impl Default for CleaningRules {
    fn default() -> Self {
        CleaningRules {
            spike_factor: 50.0,
            spike_window: 96,
            zero_run_len: 8,
            max_missing_fraction: 0.05,
            min_span_days: TRAIN_DAYS + TEST_DAYS,
        }
    }
}

/// Replaces implausible readings by missing markers and rejects profiles that
/// are too short or too sparse.
///
/// Negative readings, zero runs and spikes are removed in that order; spike
/// removal repeats until no reading is flagged, which makes the operation
/// idempotent.
pub fn clean(profile: &LoadProfile, rules: &CleaningRules) -> Result<LoadProfile, DatasetError> {
    let span = profile.span_days();
    if span + 1e-9 < rules.min_span_days {
        return Err(DatasetError::TooShort {
            sensor_id: profile.sensor_id.clone(),
            span_days: span,
            required_days: rules.min_span_days,
        });
    }
    let mut values = profile.values.clone();
    for v in values.iter_mut() {
        if *v < 0.0 {
            *v = f64::NAN;
        }
    }
    mask_zero_runs(&mut values, rules.zero_run_len);
    while mask_spikes(&mut values, rules.spike_factor, rules.spike_window) > 0 {}

    let out = LoadProfile {
        values,
        ..profile.clone()
    };
    let fraction = out.missing_fraction();
    if fraction > rules.max_missing_fraction {
        return Err(DatasetError::TooSparse {
            sensor_id: profile.sensor_id.clone(),
            fraction,
            max: rules.max_missing_fraction,
        });
    }
    Ok(out)
}

fn mask_zero_runs(values: &mut [f64], min_len: usize) {
    if min_len == 0 {
        return;
    }
    let mut i = 0;
    while i < values.len() {
        if values[i] == 0.0 {
            let start = i;
            while i < values.len() && values[i] == 0.0 {
                i += 1;
            }
            if i - start >= min_len {
                values[start..i].fill(f64::NAN);
            }
        } else {
            i += 1;
        }
    }
}

/// One pass of the spike rule against medians of the current values.
fn mask_spikes(values: &mut [f64], factor: f64, window: usize) -> usize {
    let n = values.len();
    let half = window / 2;
    let mut flagged = Vec::new();
    let mut buf = Vec::with_capacity(window + 1);
    for i in 0..n {
        let v = values[i];
        if is_missing(v) || v <= 0.0 {
            continue;
        }
        let lo = i.saturating_sub(half);
        let hi = (i + window - half).min(n);
        buf.clear();
        buf.extend(values[lo..hi].iter().copied().filter(|x| !is_missing(*x)));
        let med = median_in_place(&mut buf);
        if med > 0.0 && v > factor * med {
            flagged.push(i);
        }
    }
    for &i in &flagged {
        values[i] = f64::NAN;
    }
    flagged.len()
}

fn median_in_place(buf: &mut [f64]) -> f64 {
    if buf.is_empty() {
        return f64::NAN;
    }
    let mid = buf.len() / 2;
    let (_, m, _) = buf.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *m;
    if buf.len() % 2 == 1 {
        upper
    } else {
        let lower = buf[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_support::profile;
    use super::*;
    use proptest::prelude::*;

    fn toy_rules() -> CleaningRules {
        CleaningRules {
            min_span_days: 0.0,
            max_missing_fraction: 1.0,
            ..CleaningRules::default()
        }
    }

    fn three_year_values(nan_every: usize) -> Vec<f64> {
        (0..3 * 365 * 96)
            .map(|i| {
                if nan_every > 0 && i % nan_every == 0 {
                    f64::NAN
                } else {
                    0.3 + 0.2 * ((i % 96) as f64 / 96.0 * std::f64::consts::TAU).sin().abs()
                }
            })
            .collect()
    }

    #[test]
    fn clean_profile_is_unchanged() {
        let p = profile("a", "2020-01-01T00:00:00Z", three_year_values(50));
        assert!((p.missing_fraction() - 0.02).abs() < 1e-3);
        let c = clean(&p, &CleaningRules::default()).unwrap();
        assert!(c.bit_eq(&p));
    }

    #[test]
    fn long_zero_run_becomes_missing() {
        // 4 ones, 12 zeros, then 1, 0, 0, 1: only the 12-run is masked
        let mut v = vec![1.0; 4];
        v.extend([0.0; 12]);
        v.extend([1.0, 0.0, 0.0, 1.0]);
        let c = clean(&profile("a", "2021-01-01T00:00:00Z", v), &toy_rules()).unwrap();
        let expected: Vec<bool> = (0..20).map(|i| (4..16).contains(&i)).collect();
        let got: Vec<bool> = c.values.iter().map(|x| x.is_nan()).collect();
        assert_eq!(got, expected);
        assert_eq!(c.values[17], 0.0);
    }

    #[test]
    fn spikes_and_negatives_are_removed() {
        let mut v = vec![0.5; 300];
        v[150] = 500.0;
        v[10] = -0.2;
        let c = clean(&profile("a", "2021-01-01T00:00:00Z", v), &toy_rules()).unwrap();
        assert!(c.values[150].is_nan());
        assert!(c.values[10].is_nan());
        assert_eq!(c.missing_count(), 2);
        // a large but plausible peak survives
        let mut v = vec![0.5; 300];
        v[150] = 20.0;
        let c = clean(&profile("a", "2021-01-01T00:00:00Z", v), &toy_rules()).unwrap();
        assert_eq!(c.values[150], 20.0);
    }

    #[test]
    fn two_year_profile_is_too_short() {
        let p = profile("a", "2021-01-01T00:00:00Z", vec![1.0; 2 * 365 * 96]);
        assert!(matches!(
            clean(&p, &CleaningRules::default()),
            Err(DatasetError::TooShort { .. })
        ));
    }

    #[test]
    fn sparse_profile_is_rejected() {
        let p = profile("a", "2020-01-01T00:00:00Z", three_year_values(10));
        assert!(matches!(
            clean(&p, &CleaningRules::default()),
            Err(DatasetError::TooSparse { .. })
        ));
    }

    proptest! {
        #[test]
        fn clean_is_idempotent(
            raw in proptest::collection::vec(
                prop_oneof![
                    4 => 0.0f64..3.0,
                    2 => Just(0.0),
                    1 => 100.0f64..5000.0,
                    1 => Just(f64::NAN),
                    1 => -1.0f64..0.0,
                ],
                50..600,
            )
        ) {
            let mut rules = toy_rules();
            rules.spike_window = 16;
            rules.zero_run_len = 3;
            let p = profile("a", "2021-01-01T00:00:00Z", raw);
            let once = clean(&p, &rules).unwrap();
            let twice = clean(&once, &rules).unwrap();
            prop_assert!(once.bit_eq(&twice));
            prop_assert!(once.present_values().all(|v| v >= 0.0 && v.is_finite()));
        }
    }
}
