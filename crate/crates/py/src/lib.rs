//! Python bindings: profiles, typing, HMMs, metrics, matching and the
//! pipeline driver.

use chrono::{DateTime, Utc};
use loadsurrogate::dataset::{self, io, reference, Category, CleaningRules, ProfileMeta, Season};
use loadsurrogate::daymatch;
use loadsurrogate::eval::{self, Bandwidth, EvalOptions};
use loadsurrogate::hmm::{self, BaumWelchConfig};
use loadsurrogate::pipeline::{self, RunConfig};
use loadsurrogate::rng::seeded;
use loadsurrogate::typing;
use ndarray::Array2;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use std::path::PathBuf;

create_exception!(loadsurrogate, LoadSurrogateError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    LoadSurrogateError::new_err(e.to_string())
}

fn parse_category(s: &str) -> PyResult<Category> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown category {s:?}")))
}

fn category_name(c: Category) -> String {
    serde_json::to_value(c)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

fn parse_start(s: &str) -> PyResult<DateTime<Utc>> {
    io::parse_timestamp(s).ok_or_else(|| PyValueError::new_err(format!("bad timestamp {s:?}")))
}

/// A 15-minute power series in kW. Missing readings are NaN.
#[pyclass(name = "LoadProfile", module = "loadsurrogate", from_py_object)]
#[derive(Clone)]
struct PyLoadProfile {
    inner: dataset::LoadProfile,
}

#[pymethods]
impl PyLoadProfile {
    #[new]
    #[pyo3(signature = (sensor_id, start, values, category = "household", region_code = "0", temperature = None))]
    fn new(
        sensor_id: String,
        start: &str,
        values: Vec<f64>,
        category: &str,
        region_code: &str,
        temperature: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let meta = ProfileMeta {
            sensor_id,
            category: parse_category(category)?,
            region_code: region_code.to_string(),
        };
        let inner = dataset::LoadProfile::new(meta, parse_start(start)?, values, temperature).map_err(err)?;
        Ok(PyLoadProfile { inner })
    }

    #[getter]
    fn sensor_id(&self) -> &str {
        &self.inner.sensor_id
    }

    #[getter]
    fn category(&self) -> String {
        category_name(self.inner.category)
    }

    #[getter]
    fn region_code(&self) -> &str {
        &self.inner.region_code
    }

    #[getter]
    fn start(&self) -> String {
        io::format_timestamp(self.inner.start)
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values.clone()
    }

    #[getter]
    fn temperature(&self) -> Option<Vec<f64>> {
        self.inner.temperature.clone()
    }

    fn missing_fraction(&self) -> f64 {
        self.inner.missing_fraction()
    }

    fn slice(&self, start: usize, stop: usize) -> PyResult<Self> {
        if start > stop || stop > self.inner.len() {
            return Err(PyValueError::new_err("slice out of range"));
        }
        Ok(PyLoadProfile {
            inner: self.inner.slice(start, stop),
        })
    }

    /// Cleaned copy; keyword arguments override the default rules.
    #[pyo3(signature = (spike_factor = None, max_missing_fraction = None, min_span_days = None))]
    fn clean(
        &self,
        spike_factor: Option<f64>,
        max_missing_fraction: Option<f64>,
        min_span_days: Option<f64>,
    ) -> PyResult<Self> {
        let mut rules = CleaningRules::default();
        if let Some(v) = spike_factor {
            rules.spike_factor = v;
        }
        if let Some(v) = max_missing_fraction {
            rules.max_missing_fraction = v;
        }
        if let Some(v) = min_span_days {
            rules.min_span_days = v;
        }
        let inner = dataset::clean(&self.inner, &rules).map_err(err)?;
        Ok(PyLoadProfile { inner })
    }

    /// Mean week (7 x 96 values, Monday first) over the days of `season`.
    #[pyo3(signature = (season = "transition"))]
    fn typical_week(&self, season: &str) -> PyResult<Vec<f64>> {
        let s = Season::parse(season).ok_or_else(|| PyValueError::new_err(format!("unknown season {season:?}")))?;
        Ok(dataset::typical_week(&self.inner, s, &[]).map_err(err)?.values)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "LoadProfile(sensor_id={:?}, start={:?}, len={})",
            self.inner.sensor_id,
            io::format_timestamp(self.inner.start),
            self.inner.len()
        )
    }
}

fn wrap(profiles: Vec<dataset::LoadProfile>) -> Vec<PyLoadProfile> {
    profiles.into_iter().map(|inner| PyLoadProfile { inner }).collect()
}

/// Every `<stem>.csv` + `<stem>.json` pair in a directory, sorted by id.
#[pyfunction]
fn read_profiles(dir: PathBuf) -> PyResult<Vec<PyLoadProfile>> {
    Ok(wrap(io::read_profile_dir(&dir).map_err(err)?))
}

#[pyfunction]
fn write_profiles(dir: PathBuf, profiles: Vec<PyRef<'_, PyLoadProfile>>) -> PyResult<()> {
    let p: Vec<dataset::LoadProfile> = profiles.iter().map(|p| p.inner.clone()).collect();
    io::write_profile_dir(&dir, &p).map_err(err)
}

/// The synthetic reference dataset and the family index of each profile.
#[pyfunction]
#[pyo3(signature = (seed = 42))]
fn reference_dataset(seed: u64) -> (Vec<PyLoadProfile>, Vec<usize>) {
    let r = reference::generate(seed);
    (wrap(r.profiles), r.families)
}

#[pyclass(name = "TypingModel", module = "loadsurrogate")]
struct PyTypingModel {
    inner: typing::TypingModel,
}

#[pymethods]
impl PyTypingModel {
    /// Fits on typical weeks; returns the model and the training labels.
    #[staticmethod]
    #[pyo3(signature = (weeks, k, seed = 0))]
    fn fit(weeks: Vec<Vec<f64>>, k: usize, seed: u64) -> PyResult<(Self, Vec<usize>)> {
        let (inner, labels) = typing::TypingModel::fit(&weeks, k, seed).map_err(err)?;
        Ok((PyTypingModel { inner }, labels))
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    fn assign(&self, week: Vec<f64>) -> usize {
        self.inner.assign(&week)
    }

    fn scores(&self, week: Vec<f64>) -> Vec<f64> {
        self.inner.scores(&week)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyTypingModel {
            inner: serde_json::from_str(text).map_err(err)?,
        })
    }
}

fn to_rows(seq: &[Vec<f64>]) -> PyResult<Array2<f64>> {
    let d = seq.first().map_or(0, Vec::len);
    if seq.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("observation rows differ in length"));
    }
    Array2::from_shape_vec((seq.len(), d), seq.concat()).map_err(err)
}

fn from_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Diagonal-Gaussian hidden Markov model.
#[pyclass(name = "GaussianHmm", module = "loadsurrogate")]
struct PyGaussianHmm {
    inner: hmm::GaussianHmm,
}

#[pymethods]
impl PyGaussianHmm {
    /// Baum-Welch on a list of sequences, each a list of observation rows.
    /// Returns the model and the log-likelihood trace.
    #[staticmethod]
    #[pyo3(signature = (sequences, n_states, max_iter = 100, tol = 1e-4, seed = 0))]
    fn fit(
        sequences: Vec<Vec<Vec<f64>>>,
        n_states: usize,
        max_iter: usize,
        tol: f64,
        seed: u64,
    ) -> PyResult<(Self, Vec<f64>)> {
        let seqs = sequences.iter().map(|s| to_rows(s)).collect::<PyResult<Vec<_>>>()?;
        let cfg = BaumWelchConfig {
            n_states,
            max_iter,
            tol,
            seed,
            ..Default::default()
        };
        let out = hmm::baum_welch_fit(&seqs, &cfg).map_err(err)?;
        Ok((PyGaussianHmm { inner: out.model }, out.log_likelihoods))
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn transition(&self) -> Vec<Vec<f64>> {
        self.inner.transition.clone()
    }

    #[getter]
    fn means(&self) -> Vec<Vec<f64>> {
        self.inner.emission_means.clone()
    }

    fn log_likelihood(&self, sequence: Vec<Vec<f64>>) -> PyResult<f64> {
        self.inner.log_likelihood(to_rows(&sequence)?.view()).map_err(err)
    }

    fn viterbi(&self, sequence: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        Ok(self.inner.viterbi(to_rows(&sequence)?.view()))
    }

    /// Draws `length` steps; returns the state path and the observations.
    #[pyo3(signature = (length, seed = 0))]
    fn sample(&self, length: usize, seed: u64) -> (Vec<usize>, Vec<Vec<f64>>) {
        let (states, obs) = self.inner.sample(length, &mut seeded(seed));
        (states, from_rows(&obs))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyGaussianHmm {
            inner: serde_json::from_str(text).map_err(err)?,
        })
    }
}

#[pyfunction]
fn mae(y: Vec<f64>, y_hat: Vec<f64>) -> f64 {
    eval::mae(&y, &y_hat)
}

#[pyfunction]
fn rmse(y: Vec<f64>, y_hat: Vec<f64>) -> f64 {
    eval::rmse(&y, &y_hat)
}

#[pyfunction]
fn pearson(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    eval::pearson(&x, &y).map_err(err)
}

/// Windowed SSIM; the stabilizing constants come from the range of `x`.
#[pyfunction]
#[pyo3(signature = (x, y, window = 96, stride = 96))]
fn ssim(x: Vec<f64>, y: Vec<f64>, window: usize, stride: usize) -> PyResult<f64> {
    let range = eval::dynamic_range(&x);
    let (c1, c2) = eval::ssim_constants(range);
    eval::ssim(&x, &y, window, stride, c1, c2).map_err(err)
}

/// Squared MMD with an RBF kernel; median-heuristic bandwidth by default.
#[pyfunction]
#[pyo3(signature = (x, y, bandwidth = None))]
fn mmd2(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>, bandwidth: Option<f64>) -> PyResult<f64> {
    let bw = bandwidth.map_or(Bandwidth::Median, Bandwidth::Fixed);
    eval::mmd2(&x, &y, bw).map_err(err)
}

/// Minimum-cost assignment; returns `(pairs, total)`.
#[pyfunction]
fn hungarian(cost: Vec<Vec<f64>>) -> PyResult<(Vec<(usize, usize)>, f64)> {
    let a = daymatch::hungarian(&cost).map_err(err)?;
    Ok((a.pairs, a.total))
}

/// Runs every enabled stage of a TOML config; returns the manifest as JSON.
#[pyfunction]
fn run_pipeline(py: Python<'_>, config: PathBuf) -> PyResult<String> {
    let cfg = RunConfig::load(&config).map_err(err)?;
    let manifest = py.detach(|| pipeline::run(&cfg)).map_err(err)?;
    serde_json::to_string(&manifest).map_err(err)
}

/// Writes the reference dataset to `dir` along with `families.csv` and
/// returns the family of each profile.
#[pyfunction]
#[pyo3(signature = (dir, seed = 42))]
fn write_reference_dataset(dir: PathBuf, seed: u64) -> PyResult<Vec<usize>> {
    Ok(pipeline::write_reference_dataset(&dir, seed).map_err(err)?.families)
}

/// Scores surrogate directories against a real one and writes the report
/// tables to `out_dir`. `synth` maps set names to directories.
#[pyfunction]
#[pyo3(signature = (real_dir, synth, out_dir, pairing = None, assignments = None))]
fn evaluate_dirs(
    py: Python<'_>,
    real_dir: PathBuf,
    synth: Vec<(String, PathBuf)>,
    out_dir: PathBuf,
    pairing: Option<PathBuf>,
    assignments: Option<PathBuf>,
) -> PyResult<usize> {
    let report = py
        .detach(|| {
            pipeline::evaluate_dirs(
                &real_dir,
                &synth,
                pairing.as_deref(),
                assignments.as_deref(),
                &EvalOptions::default(),
                &out_dir,
            )
        })
        .map_err(err)?;
    Ok(report.pairs.len())
}

/// Module initializer; public so tests can embed it.
#[pymodule(name = "loadsurrogate")]
pub fn loadsurrogate_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("LoadSurrogateError", m.py().get_type::<LoadSurrogateError>())?;
    m.add_class::<PyLoadProfile>()?;
    m.add_class::<PyTypingModel>()?;
    m.add_class::<PyGaussianHmm>()?;
    m.add_function(wrap_pyfunction!(read_profiles, m)?)?;
    m.add_function(wrap_pyfunction!(write_profiles, m)?)?;
    m.add_function(wrap_pyfunction!(reference_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(mmd2, m)?)?;
    m.add_function(wrap_pyfunction!(hungarian, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(write_reference_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_dirs, m)?)?;
    Ok(())
}
