//! Condition vectors for the generators: cyclic time encodings, a DST flag,
//! temperature scalings and integer label codes.

use chrono::{DateTime, Datelike, Duration, NaiveDate, Timelike, Utc, Weekday};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::TAU;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EncodingError {
    #[error("value {0} outside [-1, 1]")]
    OutOfRange(f64),
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("unknown label index {0}")]
    UnknownIndex(usize),
}

/// Daylight-saving window: from the last Sunday of `start_month` to the last
/// Sunday of `end_month`, switching at `switch_hour_utc` on both dates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DstRules {
    pub start_month: u32,
    pub end_month: u32,
    pub switch_hour_utc: u32,
}

impl Default for DstRules {
    fn default() -> Self {
        DstRules::eu()
    }
}

impl DstRules {
    pub fn eu() -> Self {
        DstRules {
            start_month: 3,
            end_month: 10,
            switch_hour_utc: 1,
        }
    }

    pub fn is_active(&self, t: DateTime<Utc>) -> bool {
        let year = t.year();
        let on = self.switch_instant(year, self.start_month);
        let off = self.switch_instant(year, self.end_month);
        t >= on && t < off
    }

    fn switch_instant(&self, year: i32, month: u32) -> DateTime<Utc> {
        let day = last_sunday(year, month);
        day.and_hms_opt(self.switch_hour_utc, 0, 0).unwrap().and_utc()
    }
}

fn last_sunday(year: i32, month: u32) -> NaiveDate {
    let first_next = if month == 12 {
        NaiveDate::from_ymd_opt(year + 1, 1, 1)
    } else {
        NaiveDate::from_ymd_opt(year, month + 1, 1)
    }
    .unwrap();
    let mut d = first_next - Duration::days(1);
    while d.weekday() != Weekday::Sun {
        d -= Duration::days(1);
    }
    d
}

/// Raw (unnormalized) cyclic encodings in [-1, 1] plus the DST flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeEncoding {
    pub sin_day: f64,
    pub cos_day: f64,
    pub sin_week: f64,
    pub cos_week: f64,
    pub sin_year: f64,
    pub cos_year: f64,
    pub dst: bool,
}

pub const YEAR_DAYS: f64 = 365.25;

pub fn encode_time(t: DateTime<Utc>, rules: &DstRules) -> TimeEncoding {
    let secs_of_day = t.num_seconds_from_midnight() as f64 + t.nanosecond() as f64 * 1e-9;
    let day_phase = TAU * secs_of_day / 86_400.0;
    let weekday = t.weekday().num_days_from_monday() as f64;
    let week_phase = TAU * (weekday * 86_400.0 + secs_of_day) / 604_800.0;
    let year_phase = TAU * (t.ordinal0() as f64 + secs_of_day / 86_400.0) / YEAR_DAYS;
    TimeEncoding {
        sin_day: day_phase.sin(),
        cos_day: day_phase.cos(),
        sin_week: week_phase.sin(),
        cos_week: week_phase.cos(),
        sin_year: year_phase.sin(),
        cos_year: year_phase.cos(),
        dst: rules.is_active(t),
    }
}

/// `(v + 1) / 2`, mapping [-1, 1] onto [0, 1].
pub fn normalize_embedding(v: f64) -> Result<f64, EncodingError> {
    if !(-1.0 - 1e-12..=1.0 + 1e-12).contains(&v) {
        return Err(EncodingError::OutOfRange(v));
    }
    Ok(((v + 1.0) / 2.0).clamp(0.0, 1.0))
}

/// `(temp + 20) / 40`; values outside [-20, 20] °C pass through linearly.
pub fn scale_temperature_hmm(temp_c: f64) -> f64 {
    (temp_c + 20.0) / 40.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Z-scores a series with the population standard deviation. Missing
/// (`NaN`) entries are skipped by the statistics and stay missing.
pub fn standardize_temperature(series: &[f64]) -> Result<Standardized, EncodingError> {
    let present: Vec<f64> = series.iter().copied().filter(|v| !v.is_nan()).collect();
    if present.is_empty() {
        return Err(EncodingError::ZeroVariance);
    }
    let n = present.len() as f64;
    let mean = present.iter().sum::<f64>() / n;
    let var = present.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 1e-12) {
        return Err(EncodingError::ZeroVariance);
    }
    Ok(Standardized {
        values: series.iter().map(|v| (v - mean) / std).collect(),
        mean,
        std,
    })
}

/// Normalized condition features for one timestamp.
///
/// The six cyclic entries are already mapped to [0, 1]; `temperature` holds
/// whatever scaling the consumer applied (z-score for the flow, the HMM
/// affine map for the HMMs, or raw °C before either).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionVector {
    pub sin_day: f64,
    pub cos_day: f64,
    pub sin_week: f64,
    pub cos_week: f64,
    pub sin_year: f64,
    pub cos_year: f64,
    pub dst: f64,
    pub temperature: f64,
    pub cluster_id: u32,
    pub sensor_index: u32,
}

impl ConditionVector {
    pub const CSV_HEADER: &'static str =
        "sin_day,cos_day,sin_week,cos_week,sin_year,cos_year,dst,temp_std,cluster_id,sensor_index";

    pub fn at(t: DateTime<Utc>, rules: &DstRules, temperature: f64) -> Self {
        let e = encode_time(t, rules);
        // sin/cos never leave [-1, 1]
        let n = |v: f64| normalize_embedding(v).unwrap();
        ConditionVector {
            sin_day: n(e.sin_day),
            cos_day: n(e.cos_day),
            sin_week: n(e.sin_week),
            cos_week: n(e.cos_week),
            sin_year: n(e.sin_year),
            cos_year: n(e.cos_year),
            dst: if e.dst { 1.0 } else { 0.0 },
            temperature,
            cluster_id: 0,
            sensor_index: 0,
        }
    }

    /// Continuous features in a fixed order (cyclic, dst, temperature).
    pub fn continuous(&self) -> [f64; 8] {
        [
            self.sin_day,
            self.cos_day,
            self.sin_week,
            self.cos_week,
            self.sin_year,
            self.cos_year,
            self.dst,
            self.temperature,
        ]
    }

    pub fn csv_row(&self) -> String {
        let c = self.continuous();
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7], self.cluster_id, self.sensor_index
        )
    }
}

/// Dense bidirectional label ↔ index map; indices follow sorted label order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelCodec {
    labels: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl LabelCodec {
    pub fn fit<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        labels.sort();
        labels.dedup();
        Self::from_labels(labels)
    }

    pub fn from_labels(labels: Vec<String>) -> Self {
        let index = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        LabelCodec { labels, index }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn encode(&self, label: &str) -> Result<usize, EncodingError> {
        self.index
            .get(label)
            .copied()
            .ok_or_else(|| EncodingError::UnknownLabel(label.to_string()))
    }

    pub fn decode(&self, index: usize) -> Result<&str, EncodingError> {
        self.labels
            .get(index)
            .map(String::as_str)
            .ok_or(EncodingError::UnknownIndex(index))
    }

    /// Rebuilds the lookup table after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
    }
}
