use super::{is_missing, LoadProfile, SLOTS_PER_DAY};
use crate::encoding::{ConditionVector, DstRules};
use chrono::{Duration, NaiveDate};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    Min15,
    Min30,
}

impl Resolution {
    pub fn from_minutes(m: u32) -> Option<Resolution> {
        match m {
            15 => Some(Resolution::Min15),
            30 => Some(Resolution::Min30),
            _ => None,
        }
    }

    pub fn steps_per_day(self) -> usize {
        match self {
            Resolution::Min15 => 96,
            Resolution::Min30 => 48,
        }
    }
}

/// One complete 24-hour window of power readings.
///
/// `conditions` are evaluated at the window start; its `temperature` field
/// carries the window's mean temperature in °C (`NaN` without a temperature
/// column) until a consumer rescales it.
#[derive(Debug, Clone, PartialEq)]
pub struct DaySample {
    pub sensor_id: String,
    pub date: NaiveDate,
    pub start_hour: u32,
    pub power: Vec<f64>,
    pub conditions: ConditionVector,
}

/// Cuts a profile into 24-hour windows starting at `start_hour` UTC.
///
/// Windows with any missing power reading or extending past the profile are
/// skipped. At 30-minute resolution each value is the mean of its two
/// 15-minute readings.
pub fn extract_day_samples(profile: &LoadProfile, start_hour: u32, resolution: Resolution) -> Vec<DaySample> {
    let rules = DstRules::eu();
    let mut out = Vec::new();
    let first_date = profile.start.date_naive();
    let last_date = profile.end().date_naive();
    let mut date = first_date;
    while date <= last_date {
        let t0 = date.and_hms_opt(start_hour, 0, 0).unwrap().and_utc();
        if let Some(i0) = profile.index_of(t0) {
            let i1 = i0 + SLOTS_PER_DAY;
            if i1 <= profile.len() {
                let day = &profile.values[i0..i1];
                if day.iter().all(|v| !is_missing(*v)) {
                    let power = match resolution {
                        Resolution::Min15 => day.to_vec(),
                        Resolution::Min30 => day.chunks_exact(2).map(|p| 0.5 * (p[0] + p[1])).collect(),
                    };
                    let temp = profile
                        .temperature
                        .as_ref()
                        .map(|t| mean_present(&t[i0..i1]))
                        .unwrap_or(f64::NAN);
                    out.push(DaySample {
                        sensor_id: profile.sensor_id.clone(),
                        date,
                        start_hour,
                        power,
                        conditions: ConditionVector::at(t0, &rules, temp),
                    });
                }
            }
        }
        date += Duration::days(1);
    }
    out
}

fn mean_present(xs: &[f64]) -> f64 {
    let (s, n) = xs
        .iter()
        .filter(|v| !v.is_nan())
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}
