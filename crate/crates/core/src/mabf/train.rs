use super::model::{FlowCondition, MabfArch, MabfModel};
use super::MabfError;
use crate::dataset::DaySample;
use crate::encoding::LabelCodec;
use crate::rng::{derive_seed, seeded};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowTrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for FlowTrainingConfig {
    fn default() -> Self {
        FlowTrainingConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 30,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 5.0,
            patience: 5,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

/// One scaled day vector with its conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    pub y: Vec<f64>,
    pub cond: FlowCondition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Per-step training NLL: at initialization, then the mean batch NLL of
    /// each epoch.
    pub train_nll: Vec<f64>,
    /// Per-step validation NLL after each epoch (empty without validation).
    pub val_nll: Vec<f64>,
    pub best_epoch: usize,
}

/// Mean negative log-density per step over `samples`.
pub fn nll(model: &MabfModel, samples: &[FlowSample]) -> Result<f64, MabfError> {
    mean_nll(model, samples.iter())
}

fn mean_nll<'a>(model: &MabfModel, samples: impl ExactSizeIterator<Item = &'a FlowSample>) -> Result<f64, MabfError> {
    let n = samples.len();
    if n == 0 {
        return Err(MabfError::EmptyInput);
    }
    let mut total = 0.0;
    for s in samples {
        total -= model.log_density(&s.y, &s.cond)?;
    }
    Ok(total / (n * model.arch.steps) as f64)
}

/// Gradient of the batch mean of `-log f(y | x)` with respect to every
/// parameter (zero at masked weights), and that mean.
pub fn nll_gradient(model: &MabfModel, batch: &[&FlowSample]) -> Result<(Vec<f64>, f64), MabfError> {
    if batch.is_empty() {
        return Err(MabfError::EmptyInput);
    }
    let mut grad = vec![0.0; model.n_params()];
    let mut ws = model.workspace();
    let w = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for s in batch {
        loss -= w * model.accumulate_nll_grad(&s.y, &s.cond, w, &mut ws, &mut grad)?;
    }
    for (g, &t) in grad.iter_mut().zip(&model.trainable) {
        if t == 0 {
            *g = 0.0;
        }
    }
    if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
        return Err(MabfError::NonFinite(format!("gradient of {}", param_path(model, k))));
    }
    Ok((grad, loss))
}

/// Human-readable location of a flat parameter index.
fn param_path(model: &MabfModel, k: usize) -> String {
    let l = &model.layout;
    for (name, mlp) in [
        ("made", &l.made),
        ("beta_net", &l.beta_net),
        ("theta_net", &l.theta_net),
    ] {
        for (i, d) in mlp.layers.iter().enumerate() {
            if k >= d.offset && k < d.end() {
                return if k >= d.bias_offset() {
                    format!("{name}.{i}.bias[{}]", k - d.bias_offset())
                } else {
                    let r = (k - d.offset) / d.cols;
                    format!("{name}.{i}.weight[{r}][{}]", (k - d.offset) % d.cols)
                };
            }
        }
    }
    let e = model.arch.embed_dim.max(1);
    format!("embedding[{}][{}]", (k - l.embed_offset) / e, (k - l.embed_offset) % e)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &FlowTrainingConfig) {
        self.t += 1;
        let b1 = cfg.adam_beta1;
        let b2 = cfg.adam_beta2;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for k in 0..params.len() {
            let g = grad[k];
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g;
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g;
            let mh = self.m[k] / c1;
            let vh = self.v[k] / c2;
            params[k] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.adam_eps);
        }
    }
}

/// Trains `model` in place with Adam on shuffled mini-batches, keeping the
/// parameters of the best validation epoch.
pub fn fit_samples(
    model: &mut MabfModel,
    samples: &[FlowSample],
    cfg: &FlowTrainingConfig,
) -> Result<FitReport, MabfError> {
    if samples.is_empty() {
        return Err(MabfError::EmptyInput);
    }
    if let Some(s) = samples.iter().find(|s| s.y.len() != model.arch.steps) {
        return Err(MabfError::ShapeMismatch {
            expected: model.arch.steps,
            got: s.y.len(),
        });
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut seeded(derive_seed(cfg.seed, 20, 0)));
    let n_val = if samples.len() >= 10 {
        ((samples.len() as f64 * cfg.validation_fraction).round() as usize).min(samples.len() - 1)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let val: Vec<FlowSample> = val_idx.iter().map(|&i| samples[i].clone()).collect();
    let mut train: Vec<&FlowSample> = train_idx.iter().map(|&i| &samples[i]).collect();

    let mut report = FitReport {
        train_nll: vec![mean_nll(model, train.iter().copied())?],
        val_nll: Vec::new(),
        best_epoch: 0,
    };
    let mut adam = Adam {
        m: vec![0.0; model.n_params()],
        v: vec![0.0; model.n_params()],
        t: 0,
    };
    let mut best = (f64::INFINITY, model.params.clone());
    let mut since_best = 0;
    let steps = model.arch.steps as f64;
    for epoch in 1..=cfg.epochs {
        train.shuffle(&mut seeded(derive_seed(cfg.seed, 21, epoch as u64)));
        let mut sum = 0.0;
        let mut count = 0usize;
        for batch in train.chunks(cfg.batch_size.max(1)) {
            let (mut grad, loss) = nll_gradient(model, batch)?;
            if !loss.is_finite() {
                return Err(MabfError::DivergedTraining(epoch));
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > cfg.clip_norm {
                let s = cfg.clip_norm / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            adam.step(&mut model.params, &grad, cfg);
            sum += loss * batch.len() as f64;
            count += batch.len();
        }
        let epoch_nll = sum / (count as f64 * steps);
        if !epoch_nll.is_finite() {
            return Err(MabfError::DivergedTraining(epoch));
        }
        report.train_nll.push(epoch_nll);
        let score = if val.is_empty() {
            epoch_nll
        } else {
            // a parameter region where a validation day leaves the domain counts as no improvement
            let v = nll(model, &val).unwrap_or(f64::INFINITY);
            report.val_nll.push(v);
            v
        };
        if score < best.0 {
            best = (score, model.params.clone());
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience.max(1) {
                break;
            }
        }
    }
    if best.0.is_finite() {
        model.params = best.1;
    }
    Ok(report)
}

/// Trains a flow on 30-minute (or any `D`-step) day samples.
///
/// Loads are divided by the largest training load so they lie in [0, 1];
/// day-mean temperatures are standardized; every distinct sensor id gets an
/// embedding row.
pub fn fit(days: &[DaySample], arch: MabfArch, cfg: &FlowTrainingConfig) -> Result<MabfModel, MabfError> {
    if days.is_empty() {
        return Err(MabfError::EmptyInput);
    }
    let steps = days[0].power.len();
    if days.iter().any(|d| d.power.len() != steps) {
        return Err(MabfError::ShapeMismatch {
            expected: steps,
            got: days.iter().map(|d| d.power.len()).find(|&l| l != steps).unwrap(),
        });
    }
    if days.iter().flat_map(|d| &d.power).any(|&v| !(v >= 0.0)) {
        return Err(MabfError::NonPositiveData);
    }
    let v_max = days.iter().flat_map(|d| &d.power).copied().fold(0.0, f64::max);
    if !(v_max > 0.0) {
        return Err(MabfError::NonPositiveData);
    }
    let temps: Vec<f64> = days
        .iter()
        .map(|d| d.conditions.temperature)
        .filter(|t| t.is_finite())
        .collect();
    let (t_mean, t_std) = if temps.len() >= 2 {
        let n = temps.len() as f64;
        let mean = temps.iter().sum::<f64>() / n;
        let std = (temps.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt();
        (mean, if std > 1e-12 { std } else { 1.0 })
    } else {
        (0.0, 1.0)
    };
    let sensors = LabelCodec::fit(days.iter().map(|d| d.sensor_id.as_str()));
    let arch = MabfArch {
        steps,
        n_sensors: sensors.len(),
        ..arch
    };
    let mut model = MabfModel::new(arch, derive_seed(cfg.seed, 22, 0));
    model.v_max = v_max;
    model.temperature_mean = t_mean;
    model.temperature_std = t_std;
    model.sensors = sensors;
    let samples: Vec<FlowSample> = days
        .iter()
        .map(|d| {
            let t0 = crate::dataset::midnight(d.date) + chrono::Duration::hours(d.start_hour as i64);
            FlowSample {
                y: d.power.iter().map(|v| v / v_max).collect(),
                cond: model.condition_at(t0, d.conditions.temperature, model.sensor_index(&d.sensor_id)),
            }
        })
        .collect();
    let report = fit_samples(&mut model, &samples, cfg)?;
    model.nll_trace = report.train_nll;
    model.val_trace = report.val_nll;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::super::model::tests::{jittered, small_arch};
    use super::*;
    use crate::rng::seeded;
    use rand::Rng as _;
    use rand_distr::{Distribution, LogNormal};

    fn toy_batch(n: usize, seed: u64) -> Vec<FlowSample> {
        let mut rng = seeded(seed);
        (0..n)
            .map(|_| FlowSample {
                y: (0..3).map(|_| rng.random_range(0.05..0.95)).collect(),
                cond: FlowCondition {
                    features: std::array::from_fn(|_| rng.random_range(0.0..1.0)),
                    sensor: rng.random_range(0..3),
                },
            })
            .collect()
    }

    fn rel(a: f64, f: f64) -> f64 {
        (a - f).abs() / a.abs().max(f.abs()).max(1e-6)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut m = jittered(small_arch(), 7, 0.4);
        let batch = toy_batch(4, 2);
        let refs: Vec<&FlowSample> = batch.iter().collect();
        let (grad, _) = nll_gradient(&m, &refs).unwrap();
        let loss = |m: &MabfModel| nll(m, &batch).unwrap() * m.arch.steps as f64;
        let mut worst = 0.0f64;
        for k in 0..m.n_params() {
            if m.trainable[k] == 0 {
                assert_eq!(grad[k], 0.0);
                continue;
            }
            let orig = m.params[k];
            m.params[k] = orig + 1e-5;
            let up = loss(&m);
            m.params[k] = orig - 1e-5;
            let down = loss(&m);
            m.params[k] = orig;
            let fd = (up - down) / 2e-5;
            worst = worst.max(rel(grad[k], fd));
        }
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mut m = jittered(small_arch(), 1, 0.2);
        let data = toy_batch(32, 5);
        let before = m.params.clone();
        let nll0 = nll(&m, &data).unwrap();
        let cfg = FlowTrainingConfig {
            learning_rate: 0.0,
            epochs: 1,
            validation_fraction: 0.0,
            ..Default::default()
        };
        fit_samples(&mut m, &data, &cfg).unwrap();
        assert_eq!(m.params, before);
        assert_eq!(nll(&m, &data).unwrap(), nll0);
    }

    #[test]
    fn one_adam_step_descends() {
        let mut m = jittered(small_arch(), 3, 0.2);
        let data = toy_batch(16, 6);
        let refs: Vec<&FlowSample> = data.iter().collect();
        let (grad, loss0) = nll_gradient(&m, &refs).unwrap();
        let mut adam = Adam {
            m: vec![0.0; m.n_params()],
            v: vec![0.0; m.n_params()],
            t: 0,
        };
        adam.step(&mut m.params, &grad, &FlowTrainingConfig::default());
        let (_, loss1) = nll_gradient(&m, &refs).unwrap();
        assert!(loss1 < loss0, "{loss0} -> {loss1}");
    }

    #[test]
    fn training_is_seed_deterministic() {
        let data = toy_batch(50, 8);
        let cfg = FlowTrainingConfig {
            epochs: 3,
            batch_size: 8,
            ..Default::default()
        };
        let mut a = MabfModel::new(small_arch(), 4);
        let mut b = MabfModel::new(small_arch(), 4);
        let ra = fit_samples(&mut a, &data, &cfg).unwrap();
        let rb = fit_samples(&mut b, &data, &cfg).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.params, b.params);
    }

    /// Differential entropy of log-normal(0, 0.5): mu + 1/2 + ln(sigma sqrt(2 pi)).
    fn log_normal_entropy() -> f64 {
        0.5 + (0.5 * (2.0 * std::f64::consts::PI).sqrt()).ln()
    }

    #[test]
    fn learns_log_normal_columns() {
        let (nll_x, target) = train_log_normal_fixture();
        assert!((nll_x - target).abs() <= 0.05 * target, "{nll_x} vs {target}");
    }

    /// Trains on two i.i.d. log-normal(0, 0.5) columns and returns the
    /// per-column NLL in data units with its analytic optimum.
    fn train_log_normal_fixture() -> (f64, f64) {
        let mut rng = seeded(12);
        let dist = LogNormal::new(0.0, 0.5).unwrap();
        let n = 4000;
        let xs: Vec<[f64; 2]> = (0..n).map(|_| [dist.sample(&mut rng), dist.sample(&mut rng)]).collect();
        let scale = xs.iter().flatten().copied().fold(0.0, f64::max);
        let cond = FlowCondition {
            features: [0.0; 6],
            sensor: 0,
        };
        let data: Vec<FlowSample> = xs
            .iter()
            .map(|x| FlowSample {
                y: x.iter().map(|v| v / scale).collect(),
                cond,
            })
            .collect();
        let arch = MabfArch {
            steps: 2,
            order: 12,
            made_hidden: 16,
            cond_hidden: 8,
            embed_dim: 2,
            n_sensors: 1,
        };
        let mut m = MabfModel::new(arch, 5);
        let cfg = FlowTrainingConfig {
            learning_rate: 1e-2,
            batch_size: 128,
            epochs: 150,
            patience: 20,
            validation_fraction: 0.0,
            seed: 3,
            ..Default::default()
        };
        fit_samples(&mut m, &data, &cfg).unwrap();
        (nll(&m, &data).unwrap() + scale.ln(), log_normal_entropy())
    }
}
