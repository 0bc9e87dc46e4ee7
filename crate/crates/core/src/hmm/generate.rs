use super::{
    baum_welch_fit, build_training_set, BaumWelchConfig, GaussianHmm, HmmError, HmmKey, TrainingSetOptions, DAY_STEPS,
};
use crate::dataset::{midnight, LoadProfile, ProfileMeta, ScalingMode, ScalingParams};
use crate::fsutil::{read_json, write_json_atomic};
use crate::rng::{derive_seed, seeded};
use chrono::{Duration, NaiveDate};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Default)]
pub struct HmmTrainConfig {
    pub baum_welch: BaumWelchConfig,
    pub training: TrainingSetOptions,
}

/// The 21 (season, weekday) models of one consumer type together with the
/// power scaling they were trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterHmms {
    pub cluster_id: usize,
    pub scaling: ScalingParams,
    pub models: BTreeMap<HmmKey, GaussianHmm>,
}

/// Scales the cluster's profiles jointly, builds the day tensors and fits one
/// model per key. Keys are fitted in parallel with per-key derived seeds.
pub fn train_cluster(
    cluster_id: usize,
    profiles: &[LoadProfile],
    cfg: &HmmTrainConfig,
) -> Result<ClusterHmms, HmmError> {
    if profiles.is_empty() {
        return Err(HmmError::EmptyInput);
    }
    let scaling = ScalingParams::fit(profiles.iter().flat_map(|p| p.present_values()), ScalingMode::Global)?;
    let scaled: Vec<LoadProfile> = profiles
        .iter()
        .map(|p| LoadProfile {
            values: scaling_values(&scaling, &p.values),
            ..p.clone()
        })
        .collect();
    let set = build_training_set(&scaled, &cfg.training)?;
    set.require_all_keys()?;
    let keys = HmmKey::all();
    let fitted: Result<Vec<(HmmKey, GaussianHmm)>, HmmError> = keys
        .par_iter()
        .enumerate()
        .map(|(i, &key)| {
            let bw = BaumWelchConfig {
                seed: derive_seed(cfg.baum_welch.seed, 100 + cluster_id as u64, i as u64),
                ..cfg.baum_welch.clone()
            };
            let mut model = baum_welch_fit(&set.groups[&key], &bw)?.model;
            model.tag = Some(key);
            Ok((key, model))
        })
        .collect();
    Ok(ClusterHmms {
        cluster_id,
        scaling,
        models: fitted?.into_iter().collect(),
    })
}

fn scaling_values(params: &ScalingParams, values: &[f64]) -> Vec<f64> {
    values.iter().map(|&v| params.scale(v)).collect()
}

/// One 96-step day of the power channel (scaled units).
pub fn sample_day(model: &GaussianHmm, seed: u64) -> Vec<f64> {
    let (_, obs) = model.sample(DAY_STEPS, &mut seeded(seed));
    obs.column(0).to_vec()
}

fn day_number(date: NaiveDate) -> u64 {
    (date - NaiveDate::from_ymd_opt(1970, 1, 1).unwrap()).num_days() as u64
}

/// Calendar-day values in kW for `n_days` days from `first`.
///
/// Samples start at the models' 05:00 day start, so calendar day `d` takes
/// its 00:00-05:00 slots from the tail of the sample drawn for day `d - 1`
/// and the rest from the head of its own sample. Each sample is seeded by
/// `(seed, date)` only, so overlapping spans agree on shared days.
pub fn assemble_span(
    hmms: &ClusterHmms,
    first: NaiveDate,
    n_days: usize,
    start_hour: u32,
    seed: u64,
    clamp_nonnegative: bool,
) -> Result<Vec<f64>, HmmError> {
    let shift = (start_hour as usize * 4).min(DAY_STEPS);
    let head = DAY_STEPS - shift;
    let draw = |date: NaiveDate| -> Result<Vec<f64>, HmmError> {
        let key = HmmKey::of_date(date);
        let model = hmms.models.get(&key).ok_or(HmmError::MissingModel(key))?;
        Ok(sample_day(model, derive_seed(seed, 3, day_number(date))))
    };
    let dates: Vec<NaiveDate> = (0..=n_days).map(|i| first + Duration::days(i as i64 - 1)).collect();
    let samples: Vec<Vec<f64>> = dates.par_iter().map(|&d| draw(d)).collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(n_days * DAY_STEPS);
    for d in 1..=n_days {
        out.extend_from_slice(&samples[d - 1][head..]);
        out.extend_from_slice(&samples[d][..head]);
    }
    for v in &mut out {
        *v = hmms.scaling.unscale(*v);
        if clamp_nonnegative && *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(out)
}

/// A full calendar year (365 or 366 days) as a load profile.
pub fn assemble_year(
    hmms: &ClusterHmms,
    year: i32,
    meta: ProfileMeta,
    start_hour: u32,
    seed: u64,
    clamp_nonnegative: bool,
) -> Result<LoadProfile, HmmError> {
    let first = NaiveDate::from_ymd_opt(year, 1, 1).unwrap();
    let days = (NaiveDate::from_ymd_opt(year + 1, 1, 1).unwrap() - first).num_days() as usize;
    let values = assemble_span(hmms, first, days, start_hour, seed, clamp_nonnegative)?;
    Ok(LoadProfile::new(meta, midnight(first), values, None)?)
}

/// Writes `scaling.json` and one `<season>_<weekday>.json` per model.
pub fn save_cluster(dir: &Path, hmms: &ClusterHmms) -> Result<(), HmmError> {
    std::fs::create_dir_all(dir)?;
    write_json_atomic(&dir.join("scaling.json"), &hmms.scaling)?;
    for (key, model) in &hmms.models {
        write_json_atomic(&dir.join(key.file_name()), model)?;
    }
    Ok(())
}

pub fn load_cluster(dir: &Path, cluster_id: usize) -> Result<ClusterHmms, HmmError> {
    let scaling: ScalingParams = read_json(&dir.join("scaling.json"))?;
    let mut models = BTreeMap::new();
    for key in HmmKey::all() {
        let path = dir.join(key.file_name());
        if !path.exists() {
            return Err(HmmError::MissingModel(key));
        }
        let mut m: GaussianHmm = read_json(&path)?;
        m.tag = Some(key);
        models.insert(key, m);
    }
    Ok(ClusterHmms {
        cluster_id,
        scaling,
        models,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::test_support::meta;
    use crate::dataset::Season;

    fn constant_cluster(c: f64) -> ClusterHmms {
        let model = GaussianHmm {
            initial: vec![1.0],
            transition: vec![vec![1.0]],
            emission_means: vec![vec![c, 0.5, 0.5, 0.5]],
            emission_vars: vec![vec![1e-12; 4]],
            tag: None,
        };
        ClusterHmms {
            cluster_id: 0,
            scaling: ScalingParams::new(0.0, 2.0, ScalingMode::Global).unwrap(),
            models: HmmKey::all().into_iter().map(|k| (k, model.clone())).collect(),
        }
    }

    #[test]
    fn year_lengths() {
        let h = constant_cluster(0.25);
        let y23 = assemble_year(&h, 2023, meta("s"), 5, 1, false).unwrap();
        assert_eq!(y23.len(), 35_040);
        let y24 = assemble_year(&h, 2024, meta("s"), 5, 1, false).unwrap();
        assert_eq!(y24.len(), 35_136);
        assert_eq!(y24.missing_count(), 0);
        // constant models give a constant year, unscaled to kW
        assert!(y23.values.iter().all(|v| (v - 0.5).abs() < 1e-5));
    }

    #[test]
    fn missing_model_is_reported() {
        let mut h = constant_cluster(0.25);
        let key = HmmKey::new(Season::Winter, chrono::Weekday::Sun);
        h.models.remove(&key);
        let err = assemble_year(&h, 2023, meta("s"), 5, 1, false).unwrap_err();
        assert!(matches!(err, HmmError::MissingModel(k) if k == key));
    }

    #[test]
    fn spans_are_seed_stable_and_stitched() {
        let mut h = constant_cluster(0.25);
        for m in h.models.values_mut() {
            m.emission_vars[0][0] = 0.01;
        }
        let d = NaiveDate::from_ymd_opt(2023, 3, 1).unwrap();
        let a = assemble_span(&h, d, 10, 5, 9, false).unwrap();
        let b = assemble_span(&h, d + Duration::days(3), 4, 5, 9, false).unwrap();
        assert_eq!(&a[3 * 96..7 * 96], &b[..]);
        // 05:00 on day 0 is the first value of that day's own sample
        let own = sample_day(&h.models[&HmmKey::of_date(d)], derive_seed(9, 3, day_number(d)));
        assert_eq!(a[20], h.scaling.unscale(own[0]));
        assert_eq!(a[96], h.scaling.unscale(own[76]));
    }

    #[test]
    fn clamp_removes_negatives() {
        let mut h = constant_cluster(0.0);
        for m in h.models.values_mut() {
            m.emission_vars[0][0] = 0.05;
        }
        let d = NaiveDate::from_ymd_opt(2023, 3, 1).unwrap();
        let raw = assemble_span(&h, d, 5, 5, 2, false).unwrap();
        assert!(raw.iter().any(|v| *v < 0.0));
        let clamped = assemble_span(&h, d, 5, 5, 2, true).unwrap();
        assert!(clamped.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn cluster_round_trips_through_disk() {
        let h = constant_cluster(0.3);
        let dir = tempfile::tempdir().unwrap();
        save_cluster(dir.path(), &h).unwrap();
        let mut back = load_cluster(dir.path(), 0).unwrap();
        for m in back.models.values_mut() {
            m.tag = None;
        }
        assert_eq!(back, h);
    }

    #[test]
    fn trains_all_keys_on_profiles_with_temperature() {
        let data = crate::dataset::reference::generate(3);
        let year: Vec<LoadProfile> = data.profiles[..2].iter().map(|p| p.slice(0, 365 * 96)).collect();
        let cfg = HmmTrainConfig {
            baum_welch: BaumWelchConfig {
                n_states: 2,
                max_iter: 2,
                ..Default::default()
            },
            ..Default::default()
        };
        let h = train_cluster(1, &year, &cfg).unwrap();
        assert_eq!(h.cluster_id, 1);
        assert_eq!(h.models.len(), 21);
        assert!(h.models.values().all(|m| m.stochasticity_error() < 1e-9));
    }
}
