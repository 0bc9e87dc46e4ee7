//! Standard-load-profile baseline: an SLP year affinely scaled onto a
//! target consumer's low and high load levels.

use crate::dataset::{is_missing, midnight, LoadProfile, ProfileMeta, SLOTS_PER_DAY, SLOT_SECONDS};
use chrono::{DateTime, Datelike, Duration, NaiveDate, Timelike, Utc};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SlpError {
    #[error("target {0} has equal low and high load levels")]
    DegenerateTarget(String),
    #[error("SLP is constant over the target span")]
    DegenerateSlp,
    #[error("SLP has {0} missing or non-finite values")]
    Incomplete(usize),
    #[error("target {0} has no readings")]
    EmptyTarget(String),
}

/// Which SLP statistics map onto the target's low and high levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlpAnchor {
    /// SLP minimum and maximum.
    #[default]
    MinMax,
    /// Medians of the SLP's own lowest and highest 5 %.
    TailMedians,
}

/// A complete standard-load-profile series at 15-minute resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SlpYear {
    pub start: DateTime<Utc>,
    pub values: Vec<f64>,
}

impl SlpYear {
    pub fn new(start: DateTime<Utc>, values: Vec<f64>) -> Result<Self, SlpError> {
        let bad = values.iter().filter(|v| !v.is_finite()).count();
        if bad > 0 {
            return Err(SlpError::Incomplete(bad));
        }
        Ok(SlpYear { start, values })
    }

    pub fn from_profile(p: &LoadProfile) -> Result<Self, SlpError> {
        SlpYear::new(p.start, p.values.clone())
    }

    fn n_days(&self) -> usize {
        self.values.len() / SLOTS_PER_DAY
    }

    /// SLP values at the target's timestamps. When the SLP covers the span
    /// directly they are copied; otherwise each target day takes the SLP day
    /// with the same weekday nearest to its day of year.
    pub fn aligned(&self, start: DateTime<Utc>, len: usize) -> Vec<f64> {
        let offset = (start - self.start).num_seconds();
        if offset >= 0 && offset % SLOT_SECONDS == 0 {
            let i0 = (offset / SLOT_SECONDS) as usize;
            if i0 + len <= self.values.len() {
                return self.values[i0..i0 + len].to_vec();
            }
        }
        let n_days = self.n_days().max(1);
        let slp_first = self.start.date_naive();
        (0..len)
            .map(|k| {
                let t = start + Duration::seconds(SLOT_SECONDS * k as i64);
                let slot = (t.hour() * 4 + t.minute() / 15) as usize;
                let doy = (t.ordinal0() as usize).min(n_days - 1);
                let slp_wd = (slp_first + Duration::days(doy as i64))
                    .weekday()
                    .num_days_from_monday() as i64;
                let mut shift = t.weekday().num_days_from_monday() as i64 - slp_wd;
                if shift > 3 {
                    shift -= 7;
                } else if shift < -3 {
                    shift += 7;
                }
                let mut day = doy as i64 + shift;
                if day < 0 {
                    day += 7;
                }
                if day >= n_days as i64 {
                    day -= 7;
                }
                let day = day.clamp(0, n_days as i64 - 1) as usize;
                self.values[day * SLOTS_PER_DAY + slot]
            })
            .collect()
    }
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Medians of the lowest and highest 5 % of the present values (at least
/// one value each).
pub fn tail_medians(values: &[f64]) -> Option<(f64, f64)> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !is_missing(*x)).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let k = ((v.len() as f64 * 0.05).ceil() as usize).max(1);
    Some((median_sorted(&v[..k]), median_sorted(&v[v.len() - k..])))
}

/// Scales the SLP onto `target`: the SLP anchors map affinely to the
/// medians of the target's lowest and highest 5 % of readings. The result
/// covers the target's span under the id `slp:<sensor_id>`.
pub fn scale_slp(slp: &SlpYear, target: &LoadProfile, anchor: SlpAnchor) -> Result<LoadProfile, SlpError> {
    let (m_low, m_high) =
        tail_medians(&target.values).ok_or_else(|| SlpError::EmptyTarget(target.sensor_id.clone()))?;
    if !(m_high > m_low) {
        return Err(SlpError::DegenerateTarget(target.sensor_id.clone()));
    }
    let a = slp.aligned(target.start, target.len());
    let (lo, hi) = match anchor {
        SlpAnchor::MinMax => (
            a.iter().copied().fold(f64::INFINITY, f64::min),
            a.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ),
        SlpAnchor::TailMedians => tail_medians(&a).ok_or(SlpError::DegenerateSlp)?,
    };
    if !(hi > lo) {
        return Err(SlpError::DegenerateSlp);
    }
    let slope = (m_high - m_low) / (hi - lo);
    let values = a.iter().map(|v| m_low + slope * (v - lo)).collect();
    let meta = ProfileMeta {
        sensor_id: format!("slp:{}", target.sensor_id),
        category: target.category,
        region_code: target.region_code.clone(),
    };
    Ok(LoadProfile::new(meta, target.start, values, None).expect("target start is aligned"))
}

/// Seasonal dynamization factor of the household standard profile
/// (fourth-order polynomial in the day of year).
pub fn dynamization_factor(day_of_year: f64) -> f64 {
    let t = day_of_year;
    -3.92e-10 * t.powi(4) + 3.2e-7 * t.powi(3) - 7.02e-5 * t.powi(2) + 2.1e-3 * t + 1.24
}

fn bump(h: f64, mu: f64, sigma: f64) -> f64 {
    (-0.5 * ((h - mu) / sigma).powi(2)).exp()
}

/// Household-style standard profile in kW for an annual consumption of
/// 1000 kWh, evaluated at `t` (hours read on a UTC+1 clock).
pub fn h0_shape(t: DateTime<Utc>) -> f64 {
    let local = t + Duration::hours(1);
    let h = local.hour() as f64 + local.minute() as f64 / 60.0;
    let wd = local.weekday().num_days_from_monday();
    let winter = 0.5 + 0.5 * (TAU * (local.ordinal0() as f64 - 15.0) / 365.25).cos();
    let base = 0.045 + 0.01 * winter;
    let day = match wd {
        5 => 0.06 * bump(h, 10.0, 2.0) + 0.07 * bump(h, 12.5, 1.5) + 0.09 * bump(h, 19.0, 2.2),
        6 => 0.05 * bump(h, 10.5, 2.0) + 0.09 * bump(h, 12.5, 1.2) + 0.08 * bump(h, 19.0, 2.2),
        _ => 0.05 * bump(h, 7.5, 1.2) + 0.05 * bump(h, 12.5, 1.5) + 0.09 * bump(h, 19.5, 2.0),
    };
    let night_dip = 0.015 * bump(h, 4.0, 1.5);
    (base + day * (0.8 + 0.4 * winter) - night_dip) * dynamization_factor(local.ordinal() as f64)
}

/// Bundled synthetic household SLP for one calendar year.
pub fn reference_slp(year: i32) -> SlpYear {
    let first = NaiveDate::from_ymd_opt(year, 1, 1).unwrap();
    let days = (NaiveDate::from_ymd_opt(year + 1, 1, 1).unwrap() - first).num_days() as usize;
    reference_slp_span(midnight(first), days * SLOTS_PER_DAY)
}

/// The bundled SLP evaluated at `len` slots from `start`.
pub fn reference_slp_span(start: DateTime<Utc>, len: usize) -> SlpYear {
    let values = (0..len)
        .map(|k| h0_shape(start + Duration::seconds(SLOT_SECONDS * k as i64)))
        .collect();
    SlpYear { start, values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::test_support::profile;

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn toy_affine_map() {
        // 20 target values: lowest 5 % is {0.1}, highest is {2.1}
        let mut tv = vec![1.0; 20];
        tv[3] = 0.1;
        tv[7] = 2.1;
        let target = profile("t", "2023-01-01T00:00:00Z", tv);
        let slp = SlpYear::new(
            target.start,
            (0..20).map(|i| [0.0, 0.25, 0.5, 0.75, 1.0][i % 5]).collect(),
        )
        .unwrap();
        let out = scale_slp(&slp, &target, SlpAnchor::MinMax).unwrap();
        assert_eq!(out.sensor_id, "slp:t");
        assert_eq!(&out.values[..5], &[0.1, 0.6, 1.1, 1.6, 2.1]);
    }

    #[test]
    fn constant_target_is_degenerate() {
        let target = profile("c", "2023-01-01T00:00:00Z", vec![0.4; 96]);
        assert_eq!(
            scale_slp(&reference_slp(2023), &target, SlpAnchor::MinMax),
            Err(SlpError::DegenerateTarget("c".into()))
        );
    }

    #[test]
    fn shape_is_kept_and_scaling_is_idempotent() {
        let vals: Vec<f64> = (0..96 * 14).map(|i| 0.2 + ((i * 7919) % 101) as f64 / 50.0).collect();
        let target = profile("t", "2023-03-06T00:00:00Z", vals);
        let slp = reference_slp(2023);
        let out = scale_slp(&slp, &target, SlpAnchor::MinMax).unwrap();
        let src = slp.aligned(target.start, target.len());
        assert!((pearson(&src, &out.values) - 1.0).abs() < 1e-12);
        let (lo, hi) = tail_medians(&target.values).unwrap();
        let mn = out.values.iter().copied().fold(f64::INFINITY, f64::min);
        let mx = out.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!((mn - lo).abs() < 1e-9 && (mx - hi).abs() < 1e-9);
        let again = scale_slp(&SlpYear::from_profile(&out).unwrap(), &target, SlpAnchor::MinMax).unwrap();
        for (a, b) in again.values.iter().zip(&out.values) {
            assert!((a - b).abs() < 1e-9);
        }
        let tails = scale_slp(&slp, &target, SlpAnchor::TailMedians).unwrap();
        assert!((pearson(&src, &tails.values) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reference_year_is_complete_and_weekday_aligned() {
        let y = reference_slp(2024);
        assert_eq!(y.values.len(), 35_136);
        assert!(y.values.iter().all(|v| v.is_finite() && *v > 0.0));
        // a 2023 Saturday maps onto a 2024 Saturday
        let sat = DateTime::parse_from_rfc3339("2023-06-10T00:00:00Z")
            .unwrap()
            .with_timezone(&Utc);
        let got = y.aligned(sat, 96);
        let expect: Vec<f64> = (0..96)
            .map(|k| {
                h0_shape(
                    DateTime::parse_from_rfc3339("2024-06-08T00:00:00Z")
                        .unwrap()
                        .with_timezone(&Utc)
                        + Duration::minutes(15 * k),
                )
            })
            .collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn dynamization_factor_values() {
        assert!((dynamization_factor(0.0) - 1.24).abs() < 1e-12);
        // summer trough is below the winter level
        assert!(dynamization_factor(200.0) < dynamization_factor(10.0));
    }
}
