use super::bernstein::{sigmoid, softplus_inv, theta_backward, theta_from_unconstrained, StepScratch, THETA_EPS};
use super::network::{Dense, Mlp, MlpCache};
use super::MabfError;
use crate::encoding::LabelCodec;
use crate::fsutil::{read_json, write_json_atomic};
use crate::rng::seeded;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Continuous condition features: sin/cos of week and year phase (each in
/// [0, 1]), the DST flag and the standardized day-mean temperature.
pub const N_FEATURES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowCondition {
    pub features: [f64; N_FEATURES],
    /// Row of the sensor embedding table; `n_sensors` is the unknown row.
    pub sensor: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MabfArch {
    /// Steps per day `D`.
    pub steps: usize,
    /// Bernstein order `M`.
    pub order: usize,
    pub made_hidden: usize,
    pub cond_hidden: usize,
    pub embed_dim: usize,
    /// Known sensors; the embedding table has one extra unknown row.
    pub n_sensors: usize,
}

impl Default for MabfArch {
    fn default() -> Self {
        MabfArch {
            steps: 48,
            order: 10,
            made_hidden: 128,
            cond_hidden: 64,
            embed_dim: 8,
            n_sensors: 0,
        }
    }
}

/// Where each network lives in the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub made: Mlp,
    pub beta_net: Mlp,
    pub theta_net: Mlp,
    pub embed_offset: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(a: &MabfArch) -> Self {
        let d = a.steps;
        let m1 = a.order + 1;
        let made = Mlp::new(d, a.made_hidden, d * (m1 + 1), 0);
        let n_in = N_FEATURES + a.embed_dim;
        let beta_net = Mlp::new(n_in, a.cond_hidden, d, made.end());
        let theta_net = Mlp::new(n_in, a.cond_hidden, d * m1, beta_net.end());
        let embed_offset = theta_net.end();
        Layout {
            made,
            beta_net,
            theta_net,
            embed_offset,
            total: embed_offset + (a.n_sensors + 1) * a.embed_dim,
        }
    }
}

/// MADE degrees of the hidden units: `k mod max(D - 1, 1) + 1`.
fn hidden_degrees(h: usize, d: usize) -> Vec<usize> {
    let span = d.saturating_sub(1).max(1);
    (0..h).map(|k| k % span + 1).collect()
}

/// Binary masks of the three MADE layers, row-major `rows × cols`.
///
/// Input `c` has degree `c + 1`; a hidden unit of degree `m` sees inputs of
/// degree `<= m`; the outputs of step `i` see hidden units of degree `<= i`,
/// so step `i` depends on `y_0..y_{i-1}` only.
pub(crate) fn made_masks(a: &MabfArch) -> [Vec<u8>; 3] {
    let d = a.steps;
    let h = a.made_hidden;
    let m2 = a.order + 2;
    let deg = hidden_degrees(h, d);
    let mut l1 = vec![0u8; h * d];
    for k in 0..h {
        for c in 0..d {
            l1[k * d + c] = (deg[k] > c) as u8;
        }
    }
    let mut l2 = vec![0u8; h * h];
    for k in 0..h {
        for j in 0..h {
            l2[k * h + j] = (deg[k] >= deg[j]) as u8;
        }
    }
    let mut l3 = vec![0u8; d * m2 * h];
    for r in 0..d * m2 {
        let step = r / m2;
        for j in 0..h {
            l3[r * h + j] = (deg[j] <= step) as u8;
        }
    }
    [l1, l2, l3]
}

/// Per-step transformation parameters of one day.
#[derive(Debug, Clone, PartialEq)]
pub struct StepParams {
    pub beta: Vec<f64>,
    /// Unconstrained coefficients, `D × (M + 1)` row-major.
    pub a: Vec<f64>,
    /// Monotone coefficients, same shape as `a`.
    pub theta: Vec<f64>,
}

pub(crate) struct Workspace {
    pub cin: Vec<f64>,
    pub made: MlpCache,
    pub beta_net: MlpCache,
    pub theta_net: MlpCache,
    pub params: StepParams,
    pub step: StepScratch,
    pub d_made: Vec<f64>,
    pub d_beta: Vec<f64>,
    pub d_theta: Vec<f64>,
    pub d_cin: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MabfModel {
    pub arch: MabfArch,
    pub layout: Layout,
    pub params: Vec<f64>,
    /// 1 for free parameters, 0 for weights removed by the MADE masks.
    pub trainable: Vec<u8>,
    /// kW per scaled unit: the flow models `power / v_max`.
    pub v_max: f64,
    pub temperature_mean: f64,
    pub temperature_std: f64,
    pub sensors: LabelCodec,
    /// Training NLL per step: initial value, then one entry per epoch.
    pub nll_trace: Vec<f64>,
    pub val_trace: Vec<f64>,
}

impl PartialEq for MabfModel {
    fn eq(&self, o: &Self) -> bool {
        self.arch == o.arch
            && self.params == o.params
            && self.v_max == o.v_max
            && self.temperature_mean == o.temperature_mean
            && self.temperature_std == o.temperature_std
            && self.sensors.labels() == o.sensors.labels()
    }
}

impl MabfModel {
    /// Random initialization. Output layers start small so the initial
    /// transform is close to the one set by the conditioner biases: `beta`
    /// near 0.9 and `theta` geometric between `e^-3` and `e^3`.
    pub fn new(arch: MabfArch, seed: u64) -> Self {
        let layout = Layout::new(&arch);
        let mut params = vec![0.0; layout.total];
        let mut rng = seeded(seed);
        for mlp in [&layout.made, &layout.beta_net, &layout.theta_net] {
            for (li, l) in mlp.layers.iter().enumerate() {
                let mut scale = (6.0 / (l.rows + l.cols) as f64).sqrt();
                if li == 2 {
                    scale *= 0.05;
                }
                for w in &mut params[l.offset..l.bias_offset()] {
                    *w = rng.random_range(-scale..scale);
                }
            }
        }
        for e in &mut params[layout.embed_offset..] {
            *e = rng.random_range(-0.1..0.1);
        }
        let m = arch.order;
        let thetas: Vec<f64> = (0..=m)
            .map(|j| (-3.0 + 6.0 * j as f64 / m.max(1) as f64).exp())
            .collect();
        let mut a0 = vec![softplus_inv(thetas[0] - THETA_EPS)];
        a0.extend(thetas.windows(2).map(|w| softplus_inv(w[1] - w[0])));
        let beta_bias = layout.beta_net.layers[2].bias_offset();
        let theta_bias = layout.theta_net.layers[2].bias_offset();
        for i in 0..arch.steps {
            params[beta_bias + i] = (0.9f64 / 0.1).ln();
            for j in 0..=m {
                params[theta_bias + i * (m + 1) + j] = a0[j];
            }
        }
        let mut model = MabfModel {
            arch,
            layout,
            params,
            trainable: Vec::new(),
            v_max: 1.0,
            temperature_mean: 0.0,
            temperature_std: 1.0,
            sensors: LabelCodec::default(),
            nll_trace: Vec::new(),
            val_trace: Vec::new(),
        };
        model.trainable = model.build_trainable();
        model.apply_masks();
        model
    }

    fn build_trainable(&self) -> Vec<u8> {
        let mut t = vec![1u8; self.layout.total];
        let masks = made_masks(&self.arch);
        for (l, mask) in self.layout.made.layers.iter().zip(&masks) {
            t[l.offset..l.bias_offset()].copy_from_slice(mask);
        }
        t
    }

    /// Zeroes every masked weight.
    pub fn apply_masks(&mut self) {
        for (p, &t) in self.params.iter_mut().zip(&self.trainable) {
            if t == 0 {
                *p = 0.0;
            }
        }
    }

    pub fn n_params(&self) -> usize {
        self.layout.total
    }

    pub fn unknown_sensor(&self) -> usize {
        self.arch.n_sensors
    }

    pub(crate) fn workspace(&self) -> Workspace {
        let d = self.arch.steps;
        let m1 = self.arch.order + 1;
        Workspace {
            cin: vec![0.0; N_FEATURES + self.arch.embed_dim],
            made: self.layout.made.cache(),
            beta_net: self.layout.beta_net.cache(),
            theta_net: self.layout.theta_net.cache(),
            params: StepParams {
                beta: vec![0.0; d],
                a: vec![0.0; d * m1],
                theta: vec![0.0; d * m1],
            },
            step: StepScratch::new(self.arch.order),
            d_made: vec![0.0; d * (m1 + 1)],
            d_beta: vec![0.0; d],
            d_theta: vec![0.0; d * m1],
            d_cin: vec![0.0; N_FEATURES + self.arch.embed_dim],
        }
    }

    pub(crate) fn fill_condition_input(&self, cond: &FlowCondition, cin: &mut [f64]) {
        cin[..N_FEATURES].copy_from_slice(&cond.features);
        let e = self.arch.embed_dim;
        let row = cond.sensor.min(self.arch.n_sensors);
        let off = self.layout.embed_offset + row * e;
        cin[N_FEATURES..].copy_from_slice(&self.params[off..off + e]);
    }

    /// Runs the three networks and combines their outputs into `ws.params`.
    pub(crate) fn forward(&self, y: &[f64], cond: &FlowCondition, ws: &mut Workspace) {
        let p = &self.params;
        self.fill_condition_input(cond, &mut ws.cin);
        self.layout.beta_net.forward(p, &ws.cin, &mut ws.beta_net);
        self.layout.theta_net.forward(p, &ws.cin, &mut ws.theta_net);
        self.layout.made.forward(p, y, &mut ws.made);
        let m1 = self.arch.order + 1;
        for i in 0..self.arch.steps {
            self.combine_step(
                i,
                &ws.made.out[i * (m1 + 1)..(i + 1) * (m1 + 1)],
                &ws.beta_net.out,
                &ws.theta_net.out,
                &mut ws.params,
            );
        }
    }

    pub(crate) fn combine_step(
        &self,
        i: usize,
        made_rows: &[f64],
        beta_out: &[f64],
        theta_out: &[f64],
        sp: &mut StepParams,
    ) {
        let m1 = self.arch.order + 1;
        sp.beta[i] = sigmoid(beta_out[i] + made_rows[0]);
        let a = &mut sp.a[i * m1..(i + 1) * m1];
        for j in 0..m1 {
            a[j] = theta_out[i * m1 + j] + made_rows[1 + j];
        }
        let th = theta_from_unconstrained(a);
        sp.theta[i * m1..(i + 1) * m1].copy_from_slice(&th);
    }

    /// Transformation parameters of every step for day `y` under `cond`.
    pub fn step_params(&self, y: &[f64], cond: &FlowCondition) -> StepParams {
        let mut ws = self.workspace();
        self.forward(y, cond, &mut ws);
        ws.params
    }

    /// `log f(y | x)` in scaled units, summed over steps.
    pub fn log_density(&self, y: &[f64], cond: &FlowCondition) -> Result<f64, MabfError> {
        if y.len() != self.arch.steps {
            return Err(MabfError::ShapeMismatch {
                expected: self.arch.steps,
                got: y.len(),
            });
        }
        let mut ws = self.workspace();
        self.forward(y, cond, &mut ws);
        let m1 = self.arch.order + 1;
        let mut total = 0.0;
        for i in 0..self.arch.steps {
            total += ws
                .step
                .eval(y[i], ws.params.beta[i], &ws.params.theta[i * m1..(i + 1) * m1], false)?;
        }
        Ok(total)
    }

    /// Adds `weight * d(-log f)/dparams` into `grad` and returns `log f`.
    pub(crate) fn accumulate_nll_grad(
        &self,
        y: &[f64],
        cond: &FlowCondition,
        weight: f64,
        ws: &mut Workspace,
        grad: &mut [f64],
    ) -> Result<f64, MabfError> {
        self.forward(y, cond, ws);
        let m1 = self.arch.order + 1;
        let mut total = 0.0;
        ws.d_made.fill(0.0);
        for i in 0..self.arch.steps {
            let beta = ws.params.beta[i];
            total += ws.step.eval(y[i], beta, &ws.params.theta[i * m1..(i + 1) * m1], true)?;
            let d_pre = -weight * ws.step.d_beta * beta * (1.0 - beta);
            ws.d_beta[i] = d_pre;
            ws.d_made[i * (m1 + 1)] = d_pre;
            let dt = &mut ws.d_theta[i * m1..(i + 1) * m1];
            for (o, g) in dt.iter_mut().zip(&ws.step.d_theta) {
                *o = -weight * g;
            }
            theta_backward(&ws.params.a[i * m1..(i + 1) * m1], dt);
            ws.d_made[i * (m1 + 1) + 1..(i + 1) * (m1 + 1)].copy_from_slice(dt);
        }
        let p = &self.params;
        self.layout.made.backward(p, y, &mut ws.made, &ws.d_made, grad, None);
        ws.d_cin.fill(0.0);
        self.layout
            .beta_net
            .backward(p, &ws.cin, &mut ws.beta_net, &ws.d_beta, grad, Some(&mut ws.d_cin));
        self.layout
            .theta_net
            .backward(p, &ws.cin, &mut ws.theta_net, &ws.d_theta, grad, Some(&mut ws.d_cin));
        let e = self.arch.embed_dim;
        let row = cond.sensor.min(self.arch.n_sensors);
        let off = self.layout.embed_offset + row * e;
        for k in 0..e {
            grad[off + k] += ws.d_cin[N_FEATURES + k];
        }
        Ok(total)
    }

    /// Standardized features for a day starting at `t` with mean
    /// temperature `temp_c` (°C, `NaN` maps to the training mean).
    pub fn condition_at(&self, t: chrono::DateTime<chrono::Utc>, temp_c: f64, sensor: usize) -> FlowCondition {
        let cv = crate::encoding::ConditionVector::at(t, &crate::encoding::DstRules::eu(), temp_c);
        let z = if temp_c.is_finite() {
            (temp_c - self.temperature_mean) / self.temperature_std
        } else {
            0.0
        };
        FlowCondition {
            features: [cv.sin_week, cv.cos_week, cv.sin_year, cv.cos_year, cv.dst, z],
            sensor,
        }
    }

    /// Embedding row for a sensor id, or the unknown row.
    pub fn sensor_index(&self, sensor_id: &str) -> usize {
        self.sensors.encode(sensor_id).unwrap_or(self.arch.n_sensors)
    }

    pub fn save(&self, path: &Path) -> Result<(), MabfError> {
        write_json_atomic(path, &MabfFile::from_model(self))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<MabfModel, MabfError> {
        let f: MabfFile = read_json(path)?;
        f.into_model()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerRecord {
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
}

/// On-disk layout: shapes, MADE masks, the flat parameter vector (the
/// embedding table is its tail) and the data scaling.
#[derive(Debug, Serialize, Deserialize)]
struct MabfFile {
    arch: MabfArch,
    layers: Vec<LayerRecord>,
    masks: Vec<Vec<Vec<u8>>>,
    params: Vec<f64>,
    embedding: Vec<Vec<f64>>,
    v_max: f64,
    temperature_mean: f64,
    temperature_std: f64,
    sensors: Vec<String>,
    nll_trace: Vec<f64>,
    val_trace: Vec<f64>,
}

impl MabfFile {
    fn from_model(m: &MabfModel) -> Self {
        let l = &m.layout;
        let named: [(&str, &Dense); 9] = [
            ("made.0", &l.made.layers[0]),
            ("made.1", &l.made.layers[1]),
            ("made.2", &l.made.layers[2]),
            ("beta.0", &l.beta_net.layers[0]),
            ("beta.1", &l.beta_net.layers[1]),
            ("beta.2", &l.beta_net.layers[2]),
            ("theta.0", &l.theta_net.layers[0]),
            ("theta.1", &l.theta_net.layers[1]),
            ("theta.2", &l.theta_net.layers[2]),
        ];
        let masks = made_masks(&m.arch)
            .iter()
            .zip(&l.made.layers)
            .map(|(mask, d)| mask.chunks(d.cols).map(<[u8]>::to_vec).collect())
            .collect();
        let e = m.arch.embed_dim.max(1);
        MabfFile {
            arch: m.arch,
            layers: named
                .iter()
                .map(|(n, d)| LayerRecord {
                    name: n.to_string(),
                    rows: d.rows,
                    cols: d.cols,
                    offset: d.offset,
                })
                .collect(),
            masks,
            params: m.params[..l.embed_offset].to_vec(),
            embedding: m.params[l.embed_offset..].chunks(e).map(<[f64]>::to_vec).collect(),
            v_max: m.v_max,
            temperature_mean: m.temperature_mean,
            temperature_std: m.temperature_std,
            sensors: m.sensors.labels().to_vec(),
            nll_trace: m.nll_trace.clone(),
            val_trace: m.val_trace.clone(),
        }
    }

    fn into_model(self) -> Result<MabfModel, MabfError> {
        let mut model = MabfModel::new(self.arch, 0);
        let l = model.layout;
        if self.params.len() != l.embed_offset {
            return Err(MabfError::InvalidModel(format!(
                "expected {} network parameters, found {}",
                l.embed_offset,
                self.params.len()
            )));
        }
        let emb: Vec<f64> = self.embedding.into_iter().flatten().collect();
        if emb.len() != l.total - l.embed_offset {
            return Err(MabfError::InvalidModel("embedding table has the wrong shape".into()));
        }
        let expected = made_masks(&self.arch);
        for (stored, want) in self.masks.iter().zip(&expected) {
            let flat: Vec<u8> = stored.iter().flatten().copied().collect();
            if &flat != want {
                return Err(MabfError::InvalidModel("mask does not match the architecture".into()));
            }
        }
        model.params[..l.embed_offset].copy_from_slice(&self.params);
        model.params[l.embed_offset..].copy_from_slice(&emb);
        model.apply_masks();
        model.v_max = self.v_max;
        model.temperature_mean = self.temperature_mean;
        model.temperature_std = self.temperature_std;
        model.sensors = LabelCodec::from_labels(self.sensors);
        model.nll_trace = self.nll_trace;
        model.val_trace = self.val_trace;
        Ok(model)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rng::seeded;

    pub(crate) fn small_arch() -> MabfArch {
        MabfArch {
            steps: 3,
            order: 4,
            made_hidden: 8,
            cond_hidden: 8,
            embed_dim: 2,
            n_sensors: 2,
        }
    }

    /// A model with every free parameter moved off its initialization.
    pub(crate) fn jittered(arch: MabfArch, seed: u64, scale: f64) -> MabfModel {
        let mut m = MabfModel::new(arch, seed);
        let mut rng = seeded(seed + 1);
        for (p, &t) in m.params.iter_mut().zip(&m.trainable) {
            if t == 1 {
                *p += rng.random_range(-scale..scale);
            }
        }
        m
    }

    fn cond(sensor: usize) -> FlowCondition {
        FlowCondition {
            features: [0.2, 0.7, 0.5, 0.9, 1.0, -0.3],
            sensor,
        }
    }

    #[test]
    fn later_inputs_never_change_earlier_steps() {
        let arch = MabfArch {
            steps: 6,
            ..small_arch()
        };
        let m = jittered(arch, 4, 0.5);
        let y = [0.3, 0.5, 0.1, 0.9, 0.4, 0.6];
        let base = m.step_params(&y, &cond(0));
        let m1 = arch.order + 1;
        let mut rng = seeded(9);
        for i in 0..arch.steps {
            for _ in 0..20 {
                let mut y2 = y;
                for v in &mut y2[i..] {
                    *v = rng.random_range(0.0..1.0);
                }
                let p = m.step_params(&y2, &cond(0));
                assert_eq!(p.beta[i].to_bits(), base.beta[i].to_bits(), "step {i}");
                for j in 0..m1 {
                    assert_eq!(p.theta[i * m1 + j].to_bits(), base.theta[i * m1 + j].to_bits());
                }
            }
        }
        // and an earlier input does reach a later step
        let mut y3 = y;
        y3[0] = 0.95;
        assert_ne!(m.step_params(&y3, &cond(0)).beta[5], base.beta[5]);
    }

    #[test]
    fn masks_follow_degrees() {
        let arch = small_arch();
        let [l1, _, l3] = made_masks(&arch);
        // D = 3: hidden degrees alternate 1, 2
        assert_eq!(&l1[..3], &[1, 0, 0]);
        assert_eq!(&l1[3..6], &[1, 1, 0]);
        let m2 = arch.order + 2;
        let h = arch.made_hidden;
        assert!(l3[..m2 * h].iter().all(|&b| b == 0));
    }

    #[test]
    fn coefficients_increase_for_random_inputs() {
        let m = jittered(small_arch(), 2, 1.0);
        let mut rng = seeded(5);
        for _ in 0..100 {
            let y: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            let c = FlowCondition {
                features: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
                sensor: rng.random_range(0..3),
            };
            let p = m.step_params(&y, &c);
            for row in p.theta.chunks(5) {
                assert!(row.windows(2).all(|w| w[0] < w[1]) && row[0] > 0.0);
            }
            assert!(p.beta.iter().all(|b| *b > 0.0 && *b < 1.0));
        }
    }

    #[test]
    fn one_step_density_integrates_to_one() {
        let arch = MabfArch {
            steps: 1,
            ..small_arch()
        };
        let m = jittered(arch, 11, 0.5);
        let c = cond(1);
        let beta = m.step_params(&[0.0], &c).beta[0];
        let upper = 1.0 / beta;
        let n = 10_000;
        let h = upper / n as f64;
        let f = |i: usize| m.log_density(&[(i as f64 * h).min(upper)], &c).unwrap().exp();
        let total: f64 = (0..=n)
            .map(|i| if i == 0 || i == n { 0.5 * f(i) } else { f(i) })
            .sum::<f64>()
            * h;
        assert!((total - 1.0).abs() < 1e-2, "{total}");
    }

    #[test]
    fn save_and_load_round_trip() {
        let mut m = jittered(small_arch(), 3, 0.3);
        m.v_max = 4.5;
        m.sensors = LabelCodec::fit(["b", "a"]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mabf.json");
        m.save(&path).unwrap();
        let back = MabfModel::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.sensor_index("b"), 1);
        assert_eq!(back.sensor_index("zzz"), 2);
    }
}
