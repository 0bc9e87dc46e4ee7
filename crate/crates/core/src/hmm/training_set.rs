use super::{HmmError, DAY_STEPS};
use crate::dataset::{is_missing, weekday_name, HolidayRange, LoadProfile, Season, WEEKDAYS};
use crate::encoding::{encode_time, normalize_embedding, scale_temperature_hmm, DstRules};
use chrono::{Datelike, Duration, NaiveDate, Weekday};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

/// Observation columns: rolling-mean power, scaled temperature, normalized
/// sin and cos of the day phase.
pub const OBS_DIM: usize = 4;

/// (season, weekday) model key; `weekday` counts from Monday = 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HmmKey {
    pub season: Season,
    pub weekday: u8,
}

impl HmmKey {
    pub fn new(season: Season, weekday: Weekday) -> Self {
        HmmKey {
            season,
            weekday: weekday.num_days_from_monday() as u8,
        }
    }

    pub fn of_date(date: NaiveDate) -> Self {
        HmmKey::new(Season::of(date), date.weekday())
    }

    pub fn weekday(self) -> Weekday {
        WEEKDAYS[self.weekday as usize % 7]
    }

    /// All 21 keys in a fixed order.
    pub fn all() -> Vec<HmmKey> {
        Season::ALL
            .iter()
            .flat_map(|&s| WEEKDAYS.iter().map(move |&w| HmmKey::new(s, w)))
            .collect()
    }

    pub fn file_name(self) -> String {
        format!("{self}.json")
    }
}

impl fmt::Display for HmmKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.season.name(), weekday_name(self.weekday()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSetOptions {
    /// UTC hour at which each day sequence starts.
    pub start_hour: u32,
    /// Rolling-mean window in slots (8 slots = 2 h).
    pub window: usize,
    pub holidays: Vec<HolidayRange>,
}

impl Default for TrainingSetOptions {
    fn default() -> Self {
        TrainingSetOptions {
            start_hour: 5,
            window: 8,
            holidays: HolidayRange::defaults(),
        }
    }
}

/// Day sequences (each `96 × OBS_DIM`) grouped by key. Only keys that
/// received at least one day are present.
#[derive(Debug, Clone, Default)]
pub struct HmmTrainingSet {
    pub groups: BTreeMap<HmmKey, Vec<Array2<f64>>>,
}

impl HmmTrainingSet {
    pub fn n_days(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }

    /// Fails with the first of the 21 keys that has no days.
    pub fn require_all_keys(&self) -> Result<(), HmmError> {
        for key in HmmKey::all() {
            if self.groups.get(&key).is_none_or(|g| g.is_empty()) {
                return Err(HmmError::EmptyGroup(key));
            }
        }
        Ok(())
    }
}

/// Centered moving average over `[i - w/2, i + w - w/2)`, truncated at the
/// series edges. Missing entries are skipped; a window without any present
/// value yields a missing value.
pub fn rolling_mean(values: &[f64], window: usize) -> Vec<f64> {
    let n = values.len();
    let half = window / 2;
    let mut count = vec![0usize; n + 1];
    for (i, &v) in values.iter().enumerate() {
        count[i + 1] = count[i] + !is_missing(v) as usize;
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + window - half).min(n);
            let c = count[hi] - count[lo];
            if c == 0 {
                f64::NAN
            } else {
                values[lo..hi].iter().filter(|v| !is_missing(**v)).sum::<f64>() / c as f64
            }
        })
        .collect()
}

/// Builds per-key day sequences from scaled profiles of one cluster.
///
/// Each sequence starts at `start_hour` UTC and is keyed by the season and
/// weekday of its start date. Days containing any missing power or
/// temperature reading, and days inside a holiday range, are skipped.
pub fn build_training_set(profiles: &[LoadProfile], opts: &TrainingSetOptions) -> Result<HmmTrainingSet, HmmError> {
    let rules = DstRules::eu();
    let day_feat: Vec<[f64; 2]> = (0..DAY_STEPS)
        .map(|s| {
            let t = NaiveDate::from_ymd_opt(2000, 1, 3)
                .unwrap()
                .and_hms_opt(opts.start_hour, 0, 0)
                .unwrap()
                .and_utc()
                + Duration::minutes(15 * s as i64);
            let e = encode_time(t, &rules);
            [
                normalize_embedding(e.sin_day).unwrap(),
                normalize_embedding(e.cos_day).unwrap(),
            ]
        })
        .collect();

    let mut set = HmmTrainingSet::default();
    for p in profiles {
        let temps = p
            .temperature
            .as_ref()
            .ok_or_else(|| HmmError::MissingTemperature(p.sensor_id.clone()))?;
        let smooth = rolling_mean(&p.values, opts.window);
        let first = p.start.date_naive();
        let last = p.end().date_naive();
        let mut date = first;
        while date <= last {
            let here = date;
            date += Duration::days(1);
            if opts.holidays.iter().any(|h| h.contains(here)) {
                continue;
            }
            let t0 = here.and_hms_opt(opts.start_hour, 0, 0).unwrap().and_utc();
            let Some(i0) = p.index_of(t0) else { continue };
            let i1 = i0 + DAY_STEPS;
            if i1 > p.len() {
                continue;
            }
            let complete = (i0..i1).all(|i| !is_missing(p.values[i]) && !is_missing(temps[i]));
            if !complete {
                continue;
            }
            let mut seq = Array2::zeros((DAY_STEPS, super::OBS_DIM));
            for s in 0..DAY_STEPS {
                seq[[s, 0]] = smooth[i0 + s];
                seq[[s, 1]] = scale_temperature_hmm(temps[i0 + s]);
                seq[[s, 2]] = day_feat[s][0];
                seq[[s, 3]] = day_feat[s][1];
            }
            set.groups.entry(HmmKey::of_date(here)).or_default().push(seq);
        }
    }
    Ok(set)
}
