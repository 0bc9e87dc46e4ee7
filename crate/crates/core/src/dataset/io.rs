//! On-disk profile format: one `<id>.csv` (`timestamp_utc,power_kw[,temperature_c]`)
//! plus one `<id>.json` metadata sidecar per sensor.

use super::{DatasetError, LoadProfile, ProfileMeta, SLOT_SECONDS};
use crate::fsutil::write_atomic;
use chrono::{DateTime, Utc};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const TS_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

fn parse_err(path: &Path, message: impl Into<String>) -> DatasetError {
    DatasetError::Parse {
        path: path.display().to_string(),
        message: message.into(),
    }
}

pub fn format_timestamp(t: DateTime<Utc>) -> String {
    t.format(TS_FORMAT).to_string()
}

pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s.trim())
        .ok()
        .map(|t| t.with_timezone(&Utc))
        .or_else(|| {
            chrono::NaiveDateTime::parse_from_str(s.trim(), "%Y-%m-%d %H:%M:%S")
                .ok()
                .map(|t| t.and_utc())
        })
}

fn parse_optional(field: Option<&str>) -> Result<f64, String> {
    match field.map(str::trim) {
        None | Some("") => Ok(f64::NAN),
        Some(s) if s.eq_ignore_ascii_case("nan") => Ok(f64::NAN),
        Some(s) => s.parse::<f64>().map_err(|e| format!("bad number {s:?}: {e}")),
    }
}

/// Reads a profile CSV. Gaps between rows that are whole multiples of
/// 15 minutes are filled with missing markers.
pub fn read_profile_csv(path: &Path, meta: ProfileMeta) -> Result<LoadProfile, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| parse_err(path, e.to_string()))?;
    let headers = rdr.headers().map_err(|e| parse_err(path, e.to_string()))?.clone();
    if headers.get(0).map(str::trim) != Some("timestamp_utc") || headers.get(1).map(str::trim) != Some("power_kw") {
        return Err(parse_err(path, "header must start with timestamp_utc,power_kw"));
    }
    let has_temp = headers.get(2).map(str::trim) == Some("temperature_c");

    let mut start: Option<DateTime<Utc>> = None;
    let mut prev: Option<DateTime<Utc>> = None;
    let mut values = Vec::new();
    let mut temps = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(path, e.to_string()))?;
        let t = rec
            .get(0)
            .and_then(parse_timestamp)
            .ok_or_else(|| parse_err(path, format!("row {row}: bad timestamp")))?;
        if t.timestamp().rem_euclid(SLOT_SECONDS) != 0 {
            return Err(DatasetError::Misaligned(t));
        }
        if let Some(p) = prev {
            let step = (t - p).num_seconds();
            if step <= 0 || step % SLOT_SECONDS != 0 {
                return Err(DatasetError::NonMonotonicTimestamps {
                    sensor_id: meta.sensor_id.clone(),
                    row,
                });
            }
            for _ in 1..step / SLOT_SECONDS {
                values.push(f64::NAN);
                temps.push(f64::NAN);
            }
        } else {
            start = Some(t);
        }
        prev = Some(t);
        values.push(parse_optional(rec.get(1)).map_err(|m| parse_err(path, format!("row {row}: {m}")))?);
        if has_temp {
            temps.push(parse_optional(rec.get(2)).map_err(|m| parse_err(path, format!("row {row}: {m}")))?);
        }
    }
    let start = start.ok_or_else(|| parse_err(path, "no data rows"))?;
    LoadProfile::new(meta, start, values, has_temp.then_some(temps))
}

pub fn profile_csv_string(profile: &LoadProfile) -> String {
    let mut s = String::with_capacity(profile.len() * 32);
    s.push_str("timestamp_utc,power_kw");
    if profile.temperature.is_some() {
        s.push_str(",temperature_c");
    }
    s.push('\n');
    let fmt = |v: f64| if v.is_nan() { String::new() } else { format!("{v}") };
    for (i, &v) in profile.values.iter().enumerate() {
        let _ = write!(s, "{},{}", format_timestamp(profile.timestamp(i)), fmt(v));
        if let Some(t) = &profile.temperature {
            let _ = write!(s, ",{}", fmt(t[i]));
        }
        s.push('\n');
    }
    s
}

pub fn write_profile(dir: &Path, profile: &LoadProfile) -> Result<(), DatasetError> {
    let stem = file_stem(&profile.sensor_id);
    write_atomic(&dir.join(format!("{stem}.csv")), profile_csv_string(profile).as_bytes())?;
    crate::fsutil::write_json_atomic(&dir.join(format!("{stem}.json")), &profile.meta())?;
    Ok(())
}

/// File-system safe stem for a sensor id (`:` and `/` become `_`).
pub fn file_stem(sensor_id: &str) -> String {
    sensor_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Loads every `<stem>.json` + `<stem>.csv` pair in `dir`, sorted by sensor id.
pub fn read_profile_dir(dir: &Path) -> Result<Vec<LoadProfile>, DatasetError> {
    let mut metas: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    metas.sort();
    let mut out = Vec::with_capacity(metas.len());
    for meta_path in metas {
        let meta: ProfileMeta =
            crate::fsutil::read_json(&meta_path).map_err(|e| parse_err(&meta_path, e.to_string()))?;
        let csv_path = meta_path.with_extension("csv");
        if !csv_path.exists() {
            return Err(parse_err(&csv_path, "missing CSV next to metadata sidecar"));
        }
        out.push(read_profile_csv(&csv_path, meta)?);
    }
    out.sort_by(|a, b| a.sensor_id.cmp(&b.sensor_id));
    Ok(out)
}

pub fn write_profile_dir(dir: &Path, profiles: &[LoadProfile]) -> Result<(), DatasetError> {
    std::fs::create_dir_all(dir)?;
    for p in profiles {
        write_profile(dir, p)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::test_support::meta;
    use super::super::Category;
    use super::*;

    #[test]
    fn csv_round_trip_with_gaps_and_temperature() {
        let dir = tempfile::tempdir().unwrap();
        let start = parse_timestamp("2021-01-01T00:00:00Z").unwrap();
        let p = LoadProfile::new(
            ProfileMeta {
                sensor_id: "hh:01".into(),
                category: Category::Public,
                region_code: "01067".into(),
            },
            start,
            vec![0.25, f64::NAN, 1.5, 0.1],
            Some(vec![-3.5, 2.0, f64::NAN, 4.0]),
        )
        .unwrap();
        write_profile(dir.path(), &p).unwrap();
        assert!(dir.path().join("hh_01.csv").exists());
        let back = read_profile_dir(dir.path()).unwrap();
        assert_eq!(back.len(), 1);
        assert!(back[0].bit_eq(&p));
        assert_eq!(back[0].region_code, "01067");
    }

    #[test]
    fn skipped_rows_become_missing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        std::fs::write(
            &path,
            "timestamp_utc,power_kw\n2021-01-01T00:00:00Z,1\n2021-01-01T00:45:00Z,2\n",
        )
        .unwrap();
        let p = read_profile_csv(&path, meta("a")).unwrap();
        assert_eq!(p.len(), 4);
        assert!(p.values[1].is_nan() && p.values[2].is_nan());
        assert_eq!(p.values[3], 2.0);
    }

    #[test]
    fn backwards_timestamps_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        std::fs::write(
            &path,
            "timestamp_utc,power_kw\n2021-01-01T00:15:00Z,1\n2021-01-01T00:00:00Z,2\n",
        )
        .unwrap();
        assert!(matches!(
            read_profile_csv(&path, meta("a")),
            Err(DatasetError::NonMonotonicTimestamps { row: 1, .. })
        ));
    }
}
