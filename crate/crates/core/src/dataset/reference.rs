//! Seeded synthetic reference dataset: 20 consumers drawn from four archetype
//! daily shapes, 2.5 years at 15-minute resolution with a temperature column.
//!
//! Used for tests and demos in place of real meter data.

use super::{Category, LoadProfile, ProfileMeta};
use crate::rng::{derive_seed, seeded};
use chrono::{DateTime, Datelike, Timelike, Utc};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use std::f64::consts::TAU;

pub const FAMILIES: usize = 4;
pub const PER_FAMILY: usize = 5;
pub const SLOTS: usize = 87_600; // 912.5 days
pub const FAMILY_NAMES: [&str; FAMILIES] = ["evening", "office", "night", "morning"];

#[derive(Debug, Clone)]
pub struct ReferenceDataset {
    pub profiles: Vec<LoadProfile>,
    /// Generating archetype of each profile (0..4), parallel to `profiles`.
    pub families: Vec<usize>,
}

pub fn start_time() -> DateTime<Utc> {
    DateTime::parse_from_rfc3339("2021-01-01T00:00:00Z")
        .unwrap()
        .with_timezone(&Utc)
}

fn bump(h: f64, mu: f64, sigma: f64) -> f64 {
    let mut d = (h - mu).abs();
    if d > 12.0 {
        d = 24.0 - d;
    }
    (-0.5 * (d / sigma).powi(2)).exp()
}

fn plateau(h: f64, on: f64, off: f64, edge: f64) -> f64 {
    let s = |x: f64| 1.0 / (1.0 + (-x / edge).exp());
    if on < off {
        s(h - on) * s(off - h)
    } else {
        // wraps midnight
        (s(h - on) + s(off - h)).min(1.0)
    }
}

/// Deterministic daily shape in kW for an archetype.
pub fn archetype_shape(family: usize, hour: f64, weekend: bool, winterness: f64) -> f64 {
    match family {
        0 => {
            let day = if weekend {
                0.5 * bump(hour, 10.0, 2.0) + 0.4 * bump(hour, 13.0, 1.5) + 0.8 * bump(hour, 19.5, 2.0)
            } else {
                0.35 * bump(hour, 7.0, 1.0) + 0.25 * bump(hour, 13.0, 1.5) + 0.9 * bump(hour, 19.5, 1.8)
            };
            (0.12 + day) * (1.0 + 0.3 * winterness)
        }
        1 => {
            let work = if weekend {
                0.05
            } else {
                1.8 * plateau(hour, 8.0, 17.0, 0.4)
            };
            (0.25 + work) * (1.0 + 0.15 * winterness)
        }
        2 => {
            let heat = (0.6 + 0.6 * winterness).max(0.1);
            0.15 + 2.0 * heat * plateau(hour, 22.0, 6.0, 0.4) + 0.2 * bump(hour, 19.0, 2.0)
        }
        _ => {
            let dip = 0.25 * bump(hour, 13.0, 2.0) * (1.0 - winterness) * 0.5;
            (0.35 + 1.2 * bump(hour, 6.5, 1.0) + 0.6 * bump(hour, 21.0, 1.5) - dip).max(0.05)
        }
    }
}

/// +1 in mid-January, -1 in mid-July.
fn winterness(t: DateTime<Utc>) -> f64 {
    (TAU * (t.ordinal0() as f64 - 15.0) / 365.25).cos()
}

pub fn generate(seed: u64) -> ReferenceDataset {
    let start = start_time();
    let noise: Normal<f64> = Normal::new(0.0, 0.2).unwrap();
    let mut profiles = Vec::new();
    let mut families = Vec::new();

    let temperature = reference_temperature(seed);

    for family in 0..FAMILIES {
        for member in 0..PER_FAMILY {
            let idx = family * PER_FAMILY + member;
            let mut rng = seeded(derive_seed(seed, 1, idx as u64));
            let amplitude = rng.random_range(0.7..1.4);
            let shift = rng.random_range(-0.5..0.5);
            let temp_offset = rng.random_range(-1.5..1.5);
            let mut values = Vec::with_capacity(SLOTS);
            for i in 0..SLOTS {
                let t = start + chrono::Duration::seconds(900 * i as i64);
                let hour = t.hour() as f64 + t.minute() as f64 / 60.0 + shift;
                let hour = hour.rem_euclid(24.0);
                let weekend = t.weekday().num_days_from_monday() >= 5;
                let base = archetype_shape(family, hour, weekend, winterness(t));
                let v = amplitude * base * noise.sample(&mut rng).exp();
                values.push(v);
            }
            // a few meter outages
            for _ in 0..3 {
                let at = rng.random_range(0..SLOTS - 64);
                let len = rng.random_range(4..32);
                values[at..at + len].fill(f64::NAN);
            }
            // injected faults exercised by the cleaning rules
            if member == 1 {
                let at = rng.random_range(0..SLOTS);
                values[at] *= 1000.0;
            }
            if member == 2 {
                let at = rng.random_range(0..SLOTS - 16);
                values[at..at + 16].fill(0.0);
            }
            let temps = temperature.iter().map(|t| t + temp_offset).collect();
            let category = match family {
                1 => Category::Commercial,
                3 => Category::Public,
                _ => Category::Household,
            };
            let meta = ProfileMeta {
                sensor_id: format!("ref-{}-{:02}", FAMILY_NAMES[family], member),
                category,
                region_code: format!("{:05}", 10115 + 1000 * idx),
            };
            profiles.push(LoadProfile::new(meta, start, values, Some(temps)).expect("aligned start"));
            families.push(family);
        }
    }
    ReferenceDataset { profiles, families }
}

fn reference_temperature(seed: u64) -> Vec<f64> {
    let start = start_time();
    let mut rng = seeded(derive_seed(seed, 2, 0));
    let daily = Normal::new(0.0, 2.5).unwrap();
    let mut offset = 0.0;
    let mut out = Vec::with_capacity(SLOTS);
    for i in 0..SLOTS {
        if i % 96 == 0 {
            offset = 0.7 * offset + daily.sample(&mut rng);
        }
        let t = start + chrono::Duration::seconds(900 * i as i64);
        let hour = t.hour() as f64 + t.minute() as f64 / 60.0;
        let seasonal = 9.5 - 9.0 * winterness(t);
        let diurnal = 4.0 * (TAU * (hour - 9.0) / 24.0).sin();
        out.push(seasonal + diurnal + offset);
    }
    out
}
