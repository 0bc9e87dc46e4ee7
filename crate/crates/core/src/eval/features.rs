//! Fixed-schema statistical feature vectors for the correlation analysis.

use super::qq::quantile_sorted;
use super::stats::shifted_mean;
use crate::dataset::{is_missing, LoadProfile, Season, SLOTS_PER_DAY, SLOT_SECONDS};
use chrono::{DateTime, Datelike};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::OnceLock;

pub const FEATURE_SCHEMA_VERSION: u32 = 1;
pub const WEEK_SLOTS: usize = 7 * SLOTS_PER_DAY;
pub const QUANTILES: [f64; 9] = [0.01, 0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95, 0.99];
pub const ACF_LAGS: [usize; 7] = [1, 2, 4, 8, 96, 192, 672];
const GLOBAL: [&str; 10] = [
    "mean",
    "std",
    "min",
    "max",
    "median",
    "skewness",
    "excess_kurtosis",
    "iqr",
    "cv",
    "daily_energy_kwh",
];
const PEAK: [&str; 3] = ["peak_slots_above_p95_per_day", "peak_hour_mode", "peak_to_mean_ratio"];
const RATIOS: [&str; 6] = [
    "ratio_weekend_weekday",
    "ratio_winter_summer",
    "ratio_transition_summer",
    "ratio_day_night",
    "ratio_evening_morning",
    "ratio_max_mean",
];

pub const FEATURE_COUNT: usize =
    GLOBAL.len() + QUANTILES.len() + 2 * WEEK_SLOTS + 2 * 12 * 24 + 3 * 24 + ACF_LAGS.len() + PEAK.len() + RATIOS.len();

/// Feature names in vector order.
pub fn feature_names() -> &'static [String] {
    static NAMES: OnceLock<Vec<String>> = OnceLock::new();
    NAMES.get_or_init(|| {
        let mut n: Vec<String> = GLOBAL.iter().map(|s| s.to_string()).collect();
        n.extend(QUANTILES.iter().map(|q| format!("q{:02}", (q * 100.0).round() as u32)));
        for stat in ["mean", "std"] {
            for s in 0..WEEK_SLOTS {
                let (d, k) = (s / SLOTS_PER_DAY, s % SLOTS_PER_DAY);
                n.push(format!("how_{stat}_d{d}_{:02}{:02}", k / 4, 15 * (k % 4)));
            }
        }
        for stat in ["mean", "std"] {
            for m in 1..=12 {
                for h in 0..24 {
                    n.push(format!("month_hour_{stat}_m{m:02}_h{h:02}"));
                }
            }
        }
        for s in Season::ALL {
            for h in 0..24 {
                n.push(format!("season_hour_mean_{}_h{h:02}", s.name()));
            }
        }
        n.extend(ACF_LAGS.iter().map(|l| format!("acf_lag{l}")));
        n.extend(PEAK.iter().map(|s| s.to_string()));
        n.extend(RATIOS.iter().map(|s| s.to_string()));
        debug_assert_eq!(n.len(), FEATURE_COUNT);
        n
    })
}

/// One profile's features plus the indices that were undefined and imputed
/// with 0.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub imputed: Vec<usize>,
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone, Default)]
struct Acc {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Acc {
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        let d = v - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (v - self.mean);
    }
    fn mean(&self) -> f64 {
        if self.n > 0.0 {
            self.mean
        } else {
            f64::NAN
        }
    }
    fn std(&self) -> f64 {
        if self.n < 2.0 {
            return f64::NAN;
        }
        (self.m2.max(0.0) / (self.n - 1.0)).sqrt()
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if b != 0.0 {
        a / b
    } else {
        f64::NAN
    }
}

/// Autocorrelation at `lag` over slot pairs where both values are present,
/// using the global mean and variance.
pub fn autocorrelation(x: &[f64], lag: usize, mean: f64, var: f64) -> f64 {
    if !(var > 0.0) || lag >= x.len() {
        return f64::NAN;
    }
    let mut s = 0.0;
    let mut n = 0usize;
    for (a, b) in x.iter().zip(&x[lag..]) {
        if !is_missing(*a) && !is_missing(*b) {
            s += (a - mean) * (b - mean);
            n += 1;
        }
    }
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64 / var
    }
}

/// Deterministic feature vector of a cleaned profile; see [`feature_names`].
pub fn extract_features(p: &LoadProfile) -> FeatureVector {
    let mut sorted: Vec<f64> = p.present_values().collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut f = Vec::with_capacity(FEATURE_COUNT);

    let mean = shifted_mean(&sorted);
    let var_pop = sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = if sorted.len() > 1 {
        (var_pop * n / (n - 1.0)).sqrt()
    } else {
        f64::NAN
    };
    let m3 = sorted.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let m4 = sorted.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let q = |pr: f64| {
        if sorted.is_empty() {
            f64::NAN
        } else {
            quantile_sorted(&sorted, pr)
        }
    };
    let (min, max) = sorted
        .first()
        .zip(sorted.last())
        .map_or((f64::NAN, f64::NAN), |(a, b)| (*a, *b));
    let (skew, kurt) = if var_pop > 0.0 {
        (m3 / var_pop.powf(1.5), m4 / (var_pop * var_pop) - 3.0)
    } else {
        (f64::NAN, f64::NAN)
    };
    f.extend([
        mean,
        std,
        min,
        max,
        q(0.5),
        skew,
        kurt,
        q(0.75) - q(0.25),
        ratio(std, mean),
        mean * 24.0,
    ]);
    f.extend(QUANTILES.iter().map(|&pr| q(pr)));

    let mut how = vec![Acc::default(); WEEK_SLOTS];
    let mut month_hour = vec![Acc::default(); 12 * 24];
    let mut season_hour = vec![Acc::default(); 3 * 24];
    let (mut weekend, mut weekday) = (Acc::default(), Acc::default());
    let mut season_acc = vec![Acc::default(); 3];
    let (mut day_acc, mut night_acc) = (Acc::default(), Acc::default());
    let (mut evening, mut morning) = (Acc::default(), Acc::default());
    let p95 = q(0.95);
    // per calendar day: (slots above p95, daily max, hour of max, sum, count)
    let mut days: BTreeMap<i64, (usize, f64, usize, f64, usize)> = BTreeMap::new();

    let t0 = p.start.timestamp();
    let mut cached_day = i64::MIN;
    let (mut month0, mut season_idx) = (0usize, 0usize);
    for (i, &v) in p.values.iter().enumerate() {
        if is_missing(v) {
            continue;
        }
        let secs = t0 + SLOT_SECONDS * i as i64;
        let day = secs.div_euclid(86_400);
        let slot = (secs.rem_euclid(86_400) / SLOT_SECONDS) as usize;
        let hour = slot / 4;
        if day != cached_day {
            cached_day = day;
            let date = DateTime::from_timestamp(day * 86_400, 0)
                .expect("in range")
                .date_naive();
            month0 = date.month0() as usize;
            season_idx = Season::ALL.iter().position(|s| *s == Season::of(date)).unwrap();
        }
        let wd = (day + 3).rem_euclid(7) as usize;
        how[wd * SLOTS_PER_DAY + slot].push(v);
        month_hour[month0 * 24 + hour].push(v);
        season_hour[season_idx * 24 + hour].push(v);
        season_acc[season_idx].push(v);
        if wd >= 5 {
            weekend.push(v)
        } else {
            weekday.push(v)
        }
        if (6..22).contains(&hour) {
            day_acc.push(v)
        } else {
            night_acc.push(v)
        }
        if (17..22).contains(&hour) {
            evening.push(v);
        } else if (6..10).contains(&hour) {
            morning.push(v);
        }
        let e = days.entry(day).or_insert((0, f64::NEG_INFINITY, 0, 0.0, 0));
        if v > p95 {
            e.0 += 1;
        }
        if v > e.1 {
            e.1 = v;
            e.2 = hour;
        }
        e.3 += v;
        e.4 += 1;
    }
    f.extend(how.iter().map(Acc::mean));
    f.extend(how.iter().map(Acc::std));
    f.extend(month_hour.iter().map(Acc::mean));
    f.extend(month_hour.iter().map(Acc::std));
    f.extend(season_hour.iter().map(Acc::mean));
    f.extend(ACF_LAGS.iter().map(|&l| autocorrelation(&p.values, l, mean, var_pop)));

    let n_days = days.len() as f64;
    let mut hour_counts = [0usize; 24];
    let mut peak_ratio = 0.0;
    let mut above = 0usize;
    for (c, mx, h, sum, cnt) in days.values() {
        above += c;
        hour_counts[*h] += 1;
        peak_ratio += ratio(*mx, sum / *cnt as f64);
    }
    let mode = (0..24).max_by_key(|&h| (hour_counts[h], std::cmp::Reverse(h))).unwrap();
    if days.is_empty() {
        f.extend([f64::NAN; 3]);
    } else {
        f.extend([above as f64 / n_days, mode as f64, peak_ratio / n_days]);
    }
    f.extend([
        ratio(weekend.mean(), weekday.mean()),
        ratio(season_acc[0].mean(), season_acc[1].mean()),
        ratio(season_acc[2].mean(), season_acc[1].mean()),
        ratio(day_acc.mean(), night_acc.mean()),
        ratio(evening.mean(), morning.mean()),
        ratio(max, mean),
    ]);
    debug_assert_eq!(f.len(), FEATURE_COUNT);

    let mut imputed = Vec::new();
    for (i, v) in f.iter_mut().enumerate() {
        if !v.is_finite() {
            *v = 0.0;
            imputed.push(i);
        }
    }
    FeatureVector { values: f, imputed }
}

/// Column means and population standard deviations of a reference set,
/// used to z-score feature rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScaler {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl ZScaler {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let f = rows.first().map_or(0, Vec::len);
        let n = rows.len() as f64;
        let mut mean = vec![0.0; f];
        let mut sd = vec![0.0; f];
        for j in 0..f {
            mean[j] = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            sd[j] = (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt();
        }
        ZScaler { mean, sd }
    }

    /// Columns that were constant in the reference set map to 0.
    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(x, (m, s))| if *s > 0.0 { (x - m) / s } else { 0.0 })
            .collect()
    }
}

/// Z-scores the columns of `rows` against their own statistics.
pub fn zscore_columns(rows: &mut [Vec<f64>]) {
    let z = ZScaler::fit(rows);
    for r in rows.iter_mut() {
        *r = z.apply(r);
    }
}

/// Schema record written next to every feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub schema_version: u32,
    pub n_features: usize,
    pub names: Vec<String>,
    /// Profile id to the feature indices imputed with 0.
    pub imputed: BTreeMap<String, Vec<usize>>,
}

impl FeatureManifest {
    pub fn new() -> Self {
        FeatureManifest {
            schema_version: FEATURE_SCHEMA_VERSION,
            n_features: FEATURE_COUNT,
            names: feature_names().to_vec(),
            imputed: BTreeMap::new(),
        }
    }
}

impl Default for FeatureManifest {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::test_support::profile;
    use std::f64::consts::TAU;

    fn idx(name: &str) -> usize {
        feature_names().iter().position(|n| n == name).unwrap()
    }

    #[test]
    fn schema_is_fixed_and_large() {
        assert!(FEATURE_COUNT >= 2000);
        assert_eq!(feature_names().len(), FEATURE_COUNT);
        let mut uniq = feature_names().to_vec();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), FEATURE_COUNT);
        assert_eq!(feature_names()[idx("how_mean_d1_0015")], "how_mean_d1_0015");
    }

    #[test]
    fn constant_profile() {
        let fv = extract_features(&profile("c", "2023-01-02T00:00:00Z", vec![0.3; 96 * 28]));
        assert_eq!(fv.values.len(), FEATURE_COUNT);
        for q in ["q01", "q50", "q99", "median", "min", "max"] {
            assert!((fv.values[idx(q)] - 0.3).abs() < 1e-12, "{q}");
        }
        assert_eq!(fv.values[idx("std")], 0.0);
        assert_eq!(fv.values[idx("how_std_d0_1200")], 0.0);
        for l in ACF_LAGS {
            let i = idx(&format!("acf_lag{l}"));
            assert_eq!(fv.values[i], 0.0);
            assert!(fv.imputed.contains(&i));
        }
        assert!(fv.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn sinusoid_autocorrelation() {
        let vals: Vec<f64> = (0..96 * 60).map(|i| 1.0 + (TAU * i as f64 / 96.0).sin()).collect();
        let p = profile("s", "2023-01-02T00:00:00Z", vals.clone());
        let fv = extract_features(&p);
        assert!((fv.values[idx("acf_lag96")] - 1.0).abs() < 1e-9);
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!((autocorrelation(&vals, 48, mean, var) + 1.0).abs() < 1e-9);
    }

    #[test]
    fn time_buckets() {
        // Monday 2023-01-02; value = hour of day, weekend doubled
        let vals: Vec<f64> = (0..96 * 14)
            .map(|i| {
                let h = ((i % 96) / 4) as f64 + 1.0;
                if (i / 96) % 7 >= 5 {
                    2.0 * h
                } else {
                    h
                }
            })
            .collect();
        let fv = extract_features(&profile("t", "2023-01-02T00:00:00Z", vals));
        assert_eq!(fv.values[idx("how_mean_d0_1300")], 14.0);
        assert_eq!(fv.values[idx("how_mean_d6_1300")], 28.0);
        assert!((fv.values[idx("ratio_weekend_weekday")] - 2.0).abs() < 1e-12);
        assert_eq!(fv.values[idx("peak_hour_mode")], 23.0);
        assert!((fv.values[idx("month_hour_mean_m01_h02")] - (3.0 * 10.0 + 6.0 * 4.0) / 14.0).abs() < 1e-12);
        // no July data
        assert!(fv.imputed.contains(&idx("month_hour_mean_m07_h00")));
    }

    #[test]
    fn zscores() {
        let mut rows = vec![vec![1.0, 5.0], vec![3.0, 5.0]];
        zscore_columns(&mut rows);
        assert_eq!(rows, vec![vec![-1.0, 0.0], vec![1.0, 0.0]]);
    }
}
