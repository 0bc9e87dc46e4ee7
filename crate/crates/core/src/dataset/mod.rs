//! Ingestion, cleaning, scaling, splitting and windowing of 15-minute load data.
//!
//! Missing readings are stored as `NaN` throughout; they propagate through
//! scaling unchanged and are skipped by every aggregate.

mod clean;
pub mod io;
pub mod reference;
mod samples;
mod scaling;
mod split;
mod typical_week;

use chrono::{DateTime, Datelike, Duration, NaiveDate, Timelike, Utc, Weekday};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use clean::{clean, CleaningRules};
pub use samples::{extract_day_samples, DaySample, Resolution};
pub use scaling::{min_max_scale, min_max_unscale, ScalingMode, ScalingParams};
pub use split::{split_train_test, TEST_DAYS, TRAIN_DAYS};
pub use typical_week::{typical_week, HolidayRange, TypicalWeek, WEEK_SLOTS};

pub const SLOT_SECONDS: i64 = 900;
pub const SLOTS_PER_DAY: usize = 96;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("profile {sensor_id} spans {span_days:.1} days, need at least {required_days:.1}")]
    TooShort {
        sensor_id: String,
        span_days: f64,
        required_days: f64,
    },
    #[error("profile {sensor_id} has {fraction:.4} missing after cleaning (max {max:.4})")]
    TooSparse { sensor_id: String, fraction: f64, max: f64 },
    #[error("non-monotonic timestamps in {sensor_id} at row {row}")]
    NonMonotonicTimestamps { sensor_id: String, row: usize },
    #[error("timestamp {0} is not aligned to a 15-minute boundary")]
    Misaligned(DateTime<Utc>),
    #[error("degenerate scaling range [{v_min}, {v_max}]")]
    DegenerateRange { v_min: f64, v_max: f64 },
    #[error("no observations for weekday {weekday} slot {slot} in season {season:?} of {sensor_id}")]
    InsufficientData {
        sensor_id: String,
        season: Season,
        weekday: usize,
        slot: usize,
    },
    #[error("temperature series length {got} does not match power length {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Household,
    Public,
    Commercial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Season {
    Winter,
    Summer,
    Transition,
}

impl Season {
    pub const ALL: [Season; 3] = [Season::Winter, Season::Summer, Season::Transition];

    /// Calendar-month seasons: Dec-Feb winter, Jun-Aug summer, the rest transition.
    pub fn from_month(month: u32) -> Season {
        match month {
            12 | 1 | 2 => Season::Winter,
            6..=8 => Season::Summer,
            _ => Season::Transition,
        }
    }

    pub fn of(date: NaiveDate) -> Season {
        Season::from_month(date.month())
    }

    pub fn name(self) -> &'static str {
        match self {
            Season::Winter => "winter",
            Season::Summer => "summer",
            Season::Transition => "transition",
        }
    }

    pub fn parse(s: &str) -> Option<Season> {
        Season::ALL.into_iter().find(|x| x.name() == s)
    }
}

pub const WEEKDAYS: [Weekday; 7] = [
    Weekday::Mon,
    Weekday::Tue,
    Weekday::Wed,
    Weekday::Thu,
    Weekday::Fri,
    Weekday::Sat,
    Weekday::Sun,
];

pub fn weekday_name(w: Weekday) -> &'static str {
    match w {
        Weekday::Mon => "mon",
        Weekday::Tue => "tue",
        Weekday::Wed => "wed",
        Weekday::Thu => "thu",
        Weekday::Fri => "fri",
        Weekday::Sat => "sat",
        Weekday::Sun => "sun",
    }
}

pub fn parse_weekday(s: &str) -> Option<Weekday> {
    WEEKDAYS.into_iter().find(|w| weekday_name(*w) == s)
}

#[inline]
pub fn is_missing(v: f64) -> bool {
    v.is_nan()
}

/// Metadata carried in the JSON sidecar next to each profile CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileMeta {
    pub sensor_id: String,
    pub category: Category,
    pub region_code: String,
}

/// One consumer's 15-minute power series in kW, starting at a UTC boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadProfile {
    pub sensor_id: String,
    pub category: Category,
    pub region_code: String,
    pub start: DateTime<Utc>,
    pub values: Vec<f64>,
    pub temperature: Option<Vec<f64>>,
}

impl LoadProfile {
    pub fn new(
        meta: ProfileMeta,
        start: DateTime<Utc>,
        values: Vec<f64>,
        temperature: Option<Vec<f64>>,
    ) -> Result<Self, DatasetError> {
        if start.timestamp().rem_euclid(SLOT_SECONDS) != 0 {
            return Err(DatasetError::Misaligned(start));
        }
        if let Some(t) = &temperature {
            if t.len() != values.len() {
                return Err(DatasetError::LengthMismatch {
                    expected: values.len(),
                    got: t.len(),
                });
            }
        }
        // infinities are not plausible readings; treat them as gaps
        let values = values
            .into_iter()
            .map(|v| if v.is_finite() { v } else { f64::NAN })
            .collect();
        Ok(LoadProfile {
            sensor_id: meta.sensor_id,
            category: meta.category,
            region_code: meta.region_code,
            start,
            values,
            temperature,
        })
    }

    pub fn meta(&self) -> ProfileMeta {
        ProfileMeta {
            sensor_id: self.sensor_id.clone(),
            category: self.category,
            region_code: self.region_code.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp(&self, index: usize) -> DateTime<Utc> {
        self.start + Duration::seconds(SLOT_SECONDS * index as i64)
    }

    /// Exclusive end timestamp.
    pub fn end(&self) -> DateTime<Utc> {
        self.timestamp(self.len())
    }

    pub fn span_days(&self) -> f64 {
        self.len() as f64 * SLOT_SECONDS as f64 / 86_400.0
    }

    /// Index of the slot starting at `t`, if `t` is inside the profile and aligned.
    pub fn index_of(&self, t: DateTime<Utc>) -> Option<usize> {
        let secs = (t - self.start).num_seconds();
        if secs < 0 || secs % SLOT_SECONDS != 0 {
            return None;
        }
        let idx = (secs / SLOT_SECONDS) as usize;
        (idx < self.len()).then_some(idx)
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| is_missing(**v)).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.missing_count() as f64 / self.len() as f64
    }

    /// Sub-profile covering slots `[from, to)`.
    pub fn slice(&self, from: usize, to: usize) -> LoadProfile {
        LoadProfile {
            sensor_id: self.sensor_id.clone(),
            category: self.category,
            region_code: self.region_code.clone(),
            start: self.timestamp(from),
            values: self.values[from..to].to_vec(),
            temperature: self.temperature.as_ref().map(|t| t[from..to].to_vec()),
        }
    }

    /// Non-missing power values.
    pub fn present_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().copied().filter(|v| !is_missing(*v))
    }

    pub fn with_values(&self, sensor_id: impl Into<String>, values: Vec<f64>) -> LoadProfile {
        LoadProfile {
            sensor_id: sensor_id.into(),
            category: self.category,
            region_code: self.region_code.clone(),
            start: self.start,
            values,
            temperature: None,
        }
    }

    /// Bitwise equality, treating every `NaN` marker as equal to itself.
    pub fn bit_eq(&self, other: &LoadProfile) -> bool {
        fn same(a: &[f64], b: &[f64]) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        self.sensor_id == other.sensor_id
            && self.start == other.start
            && same(&self.values, &other.values)
            && match (&self.temperature, &other.temperature) {
                (Some(a), Some(b)) => same(a, b),
                (None, None) => true,
                _ => false,
            }
    }
}

/// Slot-of-day (0..96) of an aligned timestamp.
pub fn slot_of_day(t: DateTime<Utc>) -> usize {
    (t.num_seconds_from_midnight() as i64 / SLOT_SECONDS) as usize
}

pub fn midnight(date: NaiveDate) -> DateTime<Utc> {
    date.and_hms_opt(0, 0, 0).unwrap().and_utc()
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    pub fn meta(id: &str) -> ProfileMeta {
        ProfileMeta {
            sensor_id: id.to_string(),
            category: Category::Household,
            region_code: "10115".into(),
        }
    }

    pub fn profile(id: &str, start: &str, values: Vec<f64>) -> LoadProfile {
        let start = DateTime::parse_from_rfc3339(start).unwrap().with_timezone(&Utc);
        LoadProfile::new(meta(id), start, values, None).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;

    #[test]
    fn seasons_follow_calendar_months() {
        assert_eq!(Season::from_month(1), Season::Winter);
        assert_eq!(Season::from_month(12), Season::Winter);
        assert_eq!(Season::from_month(7), Season::Summer);
        assert_eq!(Season::from_month(4), Season::Transition);
        assert_eq!(Season::from_month(9), Season::Transition);
    }

    #[test]
    fn misaligned_start_is_rejected() {
        let t = DateTime::parse_from_rfc3339("2021-01-01T00:07:00Z")
            .unwrap()
            .with_timezone(&Utc);
        assert!(matches!(
            LoadProfile::new(meta("a"), t, vec![1.0], None),
            Err(DatasetError::Misaligned(_))
        ));
    }

    #[test]
    fn index_and_timestamp_agree() {
        let p = profile("a", "2021-01-01T00:00:00Z", vec![0.0; 200]);
        let t = p.timestamp(137);
        assert_eq!(p.index_of(t), Some(137));
        assert_eq!(p.index_of(p.end()), None);
        assert_eq!(slot_of_day(p.timestamp(97)), 1);
    }
}
