use super::{is_missing, slot_of_day, DatasetError, LoadProfile, Season, SLOTS_PER_DAY};
use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

pub const WEEK_SLOTS: usize = 7 * SLOTS_PER_DAY;

/// Inclusive recurring date range given as (month, day) pairs; a range whose
/// end precedes its start wraps over New Year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HolidayRange {
    pub start: (u32, u32),
    pub end: (u32, u32),
}

impl HolidayRange {
    pub fn contains(&self, date: NaiveDate) -> bool {
        let d = (date.month(), date.day());
        if self.start <= self.end {
            self.start <= d && d <= self.end
        } else {
            d >= self.start || d <= self.end
        }
    }

    /// Summer break Jul 1 - Aug 31 and Christmas break Dec 20 - Jan 6.
    pub fn defaults() -> Vec<HolidayRange> {
        vec![
            HolidayRange {
                start: (7, 1),
                end: (8, 31),
            },
            HolidayRange {
                start: (12, 20),
                end: (1, 6),
            },
        ]
    }
}

/// Median load per (weekday, slot) over one season, Monday 00:00 first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypicalWeek {
    pub sensor_id: String,
    pub season: Season,
    pub values: Vec<f64>,
}

pub fn typical_week(
    profile: &LoadProfile,
    season: Season,
    holidays: &[HolidayRange],
) -> Result<TypicalWeek, DatasetError> {
    let mut cells: Vec<Vec<f64>> = vec![Vec::new(); WEEK_SLOTS];
    for (i, &v) in profile.values.iter().enumerate() {
        if is_missing(v) {
            continue;
        }
        let t = profile.timestamp(i);
        let date = t.date_naive();
        if Season::of(date) != season || holidays.iter().any(|h| h.contains(date)) {
            continue;
        }
        let cell = date.weekday().num_days_from_monday() as usize * SLOTS_PER_DAY + slot_of_day(t);
        cells[cell].push(v);
    }
    let mut values = Vec::with_capacity(WEEK_SLOTS);
    for (cell, obs) in cells.iter_mut().enumerate() {
        if obs.is_empty() {
            return Err(DatasetError::InsufficientData {
                sensor_id: profile.sensor_id.clone(),
                season,
                weekday: cell / SLOTS_PER_DAY,
                slot: cell % SLOTS_PER_DAY,
            });
        }
        obs.sort_by(f64::total_cmp);
        let m = obs.len() / 2;
        values.push(if obs.len() % 2 == 1 {
            obs[m]
        } else {
            0.5 * (obs[m - 1] + obs[m])
        });
    }
    Ok(TypicalWeek {
        sensor_id: profile.sensor_id.clone(),
        season,
        values,
    })
}
