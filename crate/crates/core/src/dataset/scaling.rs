use super::{is_missing, DatasetError};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMode {
    #[default]
    Global,
    PerProfile,
}

/// Min-max range in kW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub v_min: f64,
    pub v_max: f64,
    pub mode: ScalingMode,
}

impl ScalingParams {
    pub fn new(v_min: f64, v_max: f64, mode: ScalingMode) -> Result<Self, DatasetError> {
        if !(v_min < v_max) || !v_min.is_finite() || !v_max.is_finite() {
            return Err(DatasetError::DegenerateRange { v_min, v_max });
        }
        Ok(ScalingParams { v_min, v_max, mode })
    }

    /// Range of the non-missing values.
    pub fn fit<I: IntoIterator<Item = f64>>(values: I, mode: ScalingMode) -> Result<Self, DatasetError> {
        let (lo, hi) = values
            .into_iter()
            .filter(|v| !is_missing(*v))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        ScalingParams::new(lo, hi, mode)
    }

    #[inline]
    pub fn scale(&self, x: f64) -> f64 {
        (x - self.v_min) / (self.v_max - self.v_min)
    }

    #[inline]
    pub fn unscale(&self, x: f64) -> f64 {
        x * (self.v_max - self.v_min) + self.v_min
    }
}

/// `(x - v_min) / (v_max - v_min)`; out-of-range inputs are not clamped.
pub fn min_max_scale(values: &[f64], params: &ScalingParams) -> Vec<f64> {
    values.iter().map(|&x| params.scale(x)).collect()
}

pub fn min_max_unscale(values: &[f64], params: &ScalingParams) -> Vec<f64> {
    values.iter().map(|&x| params.unscale(x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(lo: f64, hi: f64) -> ScalingParams {
        ScalingParams::new(lo, hi, ScalingMode::Global).unwrap()
    }

    #[test]
    fn maps_range_to_unit_interval() {
        assert_eq!(min_max_scale(&[2.0, 4.0, 6.0], &p(2.0, 6.0)), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn out_of_range_is_not_clamped() {
        assert_eq!(min_max_scale(&[1.0, 7.0], &p(2.0, 6.0)), vec![-0.25, 1.25]);
    }

    #[test]
    fn degenerate_range_is_an_error() {
        assert!(matches!(
            ScalingParams::new(3.0, 3.0, ScalingMode::Global),
            Err(DatasetError::DegenerateRange { .. })
        ));
        assert!(ScalingParams::fit([f64::NAN, 2.0, 2.0], ScalingMode::PerProfile).is_err());
    }

    #[test]
    fn missing_markers_pass_through() {
        let s = min_max_scale(&[2.0, f64::NAN], &p(2.0, 6.0));
        assert!(s[1].is_nan());
        let fitted = ScalingParams::fit([f64::NAN, 1.0, 5.0], ScalingMode::Global).unwrap();
        assert_eq!((fitted.v_min, fitted.v_max), (1.0, 5.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn scale_unscale_round_trips(
            lo in -100.0f64..100.0,
            width in 1e-3f64..1e3,
            xs in proptest::collection::vec(-1e3f64..1e3, 1..32),
        ) {
            let params = p(lo, lo + width);
            let back = min_max_unscale(&min_max_scale(&xs, &params), &params);
            for (a, b) in xs.iter().zip(&back) {
                let scale = a.abs().max(lo.abs()).max(width).max(1.0);
                prop_assert!((a - b).abs() <= 1e-12 * scale);
            }
        }
    }
}
