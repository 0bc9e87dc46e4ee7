use super::{midnight, DatasetError, LoadProfile, SLOT_SECONDS};
use chrono::Duration;

/// Training span: 1.5 years of 365 days.
pub const TRAIN_DAYS: f64 = 547.5;
/// Test span: one year of 365 days.
pub const TEST_DAYS: f64 = 365.0;

/// Splits a profile into a 1.5-year training part and the following 1-year
/// test part. The boundary is snapped down to midnight UTC; anything after
/// the test year is discarded.
pub fn split_train_test(profile: &LoadProfile) -> Result<(LoadProfile, LoadProfile), DatasetError> {
    let required = TRAIN_DAYS + TEST_DAYS;
    if profile.span_days() + 1e-9 < required {
        return Err(DatasetError::TooShort {
            sensor_id: profile.sensor_id.clone(),
            span_days: profile.span_days(),
            required_days: required,
        });
    }
    let raw_boundary = profile.start + Duration::seconds((TRAIN_DAYS * 86_400.0) as i64);
    let boundary = midnight(raw_boundary.date_naive()).max(profile.start);
    let train_len = ((boundary - profile.start).num_seconds() / SLOT_SECONDS) as usize;
    let test_len = (TEST_DAYS * 86_400.0) as usize / SLOT_SECONDS as usize;
    let train = profile.slice(0, train_len);
    let test = profile.slice(train_len, train_len + test_len);
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::super::test_support::profile;
    use super::*;

    fn ramp(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64).collect()
    }

    #[test]
    fn two_and_a_half_years_split_into_disjoint_parts() {
        let n = 87_600; // 912.5 days
        let p = profile("a", "2021-01-01T00:00:00Z", ramp(n));
        let (train, test) = split_train_test(&p).unwrap();
        assert_eq!(train.len(), 547 * 96);
        assert_eq!(test.len(), 365 * 96);
        assert_eq!(train.end(), test.start);
        assert_eq!(test.start.format("%H:%M").to_string(), "00:00");
        let joined: Vec<f64> = train.values.iter().chain(&test.values).copied().collect();
        assert_eq!(joined, p.values[..joined.len()]);
    }

    #[test]
    fn trailing_data_beyond_test_year_is_dropped() {
        let p = profile("a", "2021-01-01T00:00:00Z", ramp(3 * 365 * 96));
        let (train, test) = split_train_test(&p).unwrap();
        assert_eq!(train.len(), 547 * 96);
        assert_eq!(test.len(), 365 * 96);
        assert_eq!(test.values[0], (547 * 96) as f64);
    }

    #[test]
    fn unaligned_start_snaps_boundary_to_midnight() {
        let p = profile("a", "2021-01-01T13:00:00Z", ramp(87_600));
        let (train, test) = split_train_test(&p).unwrap();
        assert_eq!(test.start.format("%H:%M").to_string(), "00:00");
        assert!(test.end() <= p.end());
        assert_eq!(train.len() + test.len() <= p.len(), true);
    }

    #[test]
    fn short_profile_is_rejected() {
        let p = profile("a", "2021-01-01T00:00:00Z", ramp((2.4 * 365.0 * 96.0) as usize));
        assert!(matches!(split_train_test(&p), Err(DatasetError::TooShort { .. })));
    }
}
