use super::bernstein::{draw_base, invert};
use super::model::{FlowCondition, MabfModel};
use super::MabfError;
use crate::dataset::{is_missing, midnight, LoadProfile, ProfileMeta, SLOTS_PER_DAY};
use crate::rng::{derive_seed, seeded};
use chrono::{Duration, NaiveDate};
use rayon::prelude::*;

impl MabfModel {
    /// One day in scaled units, drawn step by step: each step's parameters
    /// are computed from the loads already drawn, then `h` is inverted at a
    /// base-normal draw.
    pub fn sample_scaled(&self, cond: &FlowCondition, seed: u64) -> Result<Vec<f64>, MabfError> {
        let d = self.arch.steps;
        let m1 = self.arch.order + 1;
        let p = &self.params;
        let [l1, l2, l3] = &self.layout.made.layers;
        let mut ws = self.workspace();
        self.fill_condition_input(cond, &mut ws.cin);
        self.layout.beta_net.forward(p, &ws.cin, &mut ws.beta_net);
        self.layout.theta_net.forward(p, &ws.cin, &mut ws.theta_net);

        let mut rng = seeded(seed);
        let mut y = vec![0.0; d];
        // first-layer pre-activations, updated as each load is drawn
        let mut pre1 = vec![0.0; l1.rows];
        l1.forward(p, &y, &mut pre1);
        let mut h1 = vec![0.0; l1.rows];
        let mut h2 = vec![0.0; l2.rows];
        let mut rows = vec![0.0; m1 + 1];
        for i in 0..d {
            for (h, v) in h1.iter_mut().zip(&pre1) {
                *h = v.tanh();
            }
            l2.forward(p, &h1, &mut h2);
            h2.iter_mut().for_each(|v| *v = v.tanh());
            l3.forward_rows(p, &h2, i * (m1 + 1), (i + 1) * (m1 + 1), &mut rows);
            self.combine_step(i, &rows, &ws.beta_net.out, &ws.theta_net.out, &mut ws.params);
            let beta = ws.params.beta[i];
            let theta = &ws.params.theta[i * m1..(i + 1) * m1];
            let z = draw_base(theta, &mut rng);
            y[i] = invert(z, beta, theta, i)?;
            for (k, v) in pre1.iter_mut().enumerate() {
                *v += p[l1.weight_index(k, i)] * y[i];
            }
        }
        Ok(y)
    }
}

/// One `D`-step day in kW.
pub fn sample_day(model: &MabfModel, cond: &FlowCondition, seed: u64) -> Result<Vec<f64>, MabfError> {
    Ok(model
        .sample_scaled(cond, seed)?
        .into_iter()
        .map(|v| v * model.v_max)
        .collect())
}

/// Repeats each value so a `D`-step day fills 96 quarter-hour slots.
pub fn upsample_to_15min(day: &[f64]) -> Vec<f64> {
    let rep = SLOTS_PER_DAY / day.len().max(1);
    day.iter().flat_map(|&v| std::iter::repeat_n(v, rep)).collect()
}

/// Conditions for `n_days` days from `first`, using the day-mean
/// temperature of `reference` where it covers the day.
pub fn day_conditions(
    model: &MabfModel,
    reference: Option<&LoadProfile>,
    first: NaiveDate,
    n_days: usize,
    sensor: usize,
) -> Vec<FlowCondition> {
    (0..n_days)
        .map(|k| {
            let t0 = midnight(first + Duration::days(k as i64));
            let temp = reference
                .and_then(|p| {
                    let temps = p.temperature.as_ref()?;
                    let i0 = p.index_of(t0)?;
                    let day = temps.get(i0..i0 + SLOTS_PER_DAY)?;
                    let present: Vec<f64> = day.iter().copied().filter(|v| !is_missing(*v)).collect();
                    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
                })
                .unwrap_or(f64::NAN);
            model.condition_at(t0, temp, sensor)
        })
        .collect()
}

fn day_number(date: NaiveDate) -> u64 {
    (date - NaiveDate::from_ymd_opt(1970, 1, 1).unwrap()).num_days() as u64
}

/// 15-minute values in kW for consecutive days from `first`, one per
/// condition. Each day is seeded by `(seed, date)`.
pub fn generate_span(
    model: &MabfModel,
    first: NaiveDate,
    conditions: &[FlowCondition],
    seed: u64,
) -> Result<Vec<f64>, MabfError> {
    let days: Vec<Vec<f64>> = conditions
        .par_iter()
        .enumerate()
        .map(|(k, c)| {
            let date = first + Duration::days(k as i64);
            sample_day(model, c, derive_seed(seed, 4, day_number(date))).map(|d| upsample_to_15min(&d))
        })
        .collect::<Result<_, _>>()?;
    Ok(days.concat())
}

/// A calendar year of surrogate load; `conditions` must hold one entry per day.
pub fn generate_year(
    model: &MabfModel,
    year: i32,
    conditions: &[FlowCondition],
    meta: ProfileMeta,
    seed: u64,
) -> Result<LoadProfile, MabfError> {
    let first = NaiveDate::from_ymd_opt(year, 1, 1).unwrap();
    let n_days = (NaiveDate::from_ymd_opt(year + 1, 1, 1).unwrap() - first).num_days() as usize;
    if conditions.len() != n_days {
        return Err(MabfError::MissingConditions {
            expected: n_days,
            got: conditions.len(),
        });
    }
    let values = generate_span(model, first, conditions, seed)?;
    Ok(LoadProfile::new(meta, midnight(first), values, None)?)
}
