use pyo3::prelude::*;
use pyo3::types::PyDict;
use std::ffi::CString;

fn run(code: &str) -> PyResult<()> {
    Python::initialize();
    Python::attach(|py| {
        let module = pyo3::wrap_pymodule!(loadsurrogate_py::loadsurrogate_py)(py);
        let globals = PyDict::new(py);
        globals.set_item("ls", module)?;
        py.run(&CString::new(code).unwrap(), Some(&globals), None)
    })
}

#[test]
fn metrics_and_assignment_are_exposed() {
    run(r#"
assert ls.mae([1.0, 2.0], [1.0, 4.0]) == 1.0
pairs, total = ls.hungarian([[1.0, 0.0], [0.0, 1.0]])
assert pairs == [(0, 1), (1, 0)] and total == 0.0
"#)
    .unwrap();
}

#[test]
fn library_errors_become_python_exceptions() {
    run(r#"
try:
    ls.LoadProfile("x", "2021-01-01T00:07:00Z", [1.0])
except ls.LoadSurrogateError as e:
    assert "15-minute" in str(e)
else:
    raise AssertionError("misaligned start accepted")
"#)
    .unwrap();
}

#[test]
fn hmm_round_trips_through_json() {
    run(r#"
m, trace = ls.GaussianHmm.fit([[[0.0], [0.2], [4.0], [4.2]] * 10], 2, max_iter=10, seed=1)
again = ls.GaussianHmm.from_json(m.to_json())
seq = [[0.1], [4.1], [0.0]]
assert again.log_likelihood(seq) == m.log_likelihood(seq)
states, obs = m.sample(5, seed=2)
assert len(states) == 5 and len(obs[0]) == 1
"#)
    .unwrap();
}
