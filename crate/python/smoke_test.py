"""Smoke test for the Python bindings.

Build and install first:
    pip install --no-build-isolation ./crates/py
"""

import json
import math
import tempfile
from pathlib import Path

import loadsurrogate as ls


def test_metrics():
    y = [1.0, 2.0, 3.0, 4.0]
    assert ls.mae(y, y) == 0.0
    assert ls.rmse(y, [2.0, 3.0, 4.0, 5.0]) == 1.0
    assert math.isclose(ls.pearson(y, [2.0, 4.0, 6.0, 8.0]), 1.0)
    assert math.isclose(ls.ssim(y * 24, y * 24, 96, 96), 1.0)
    assert ls.mmd2([[0.0], [1.0]], [[0.0], [1.0]], 1.0) < 1e-12


def test_hungarian():
    pairs, total = ls.hungarian([[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]])
    assert pairs == [(0, 1), (1, 0), (2, 2)]
    assert total == 5.0


def test_profiles_and_typing():
    profiles, families = ls.reference_dataset(7)
    assert len(profiles) == len(families)
    p = profiles[0]
    assert len(p) == 87_600 and p.start.startswith("2021-01-01")
    weeks = [q.typical_week("transition") for q in profiles]
    model, labels = ls.TypingModel.fit(weeks, 4, 42)
    assert model.k == 4
    # cluster labels are a relabeling of the generating families
    mapping = dict(zip(labels, families))
    assert len(set(mapping.values())) == 4
    assert all(mapping[l] == f for l, f in zip(labels, families))
    again = ls.TypingModel.from_json(model.to_json())
    assert again.assign(weeks[3]) == labels[3]

    with tempfile.TemporaryDirectory() as d:
        ls.write_profiles(d, profiles[:2])
        back = ls.read_profiles(d)
        assert [b.sensor_id for b in back] == sorted(q.sensor_id for q in profiles[:2])

    short = ls.LoadProfile("x", "2021-01-01T00:00:00Z", [1.0] * 96)
    try:
        short.clean()
    except ls.LoadSurrogateError as e:
        assert "spans" in str(e)
    else:
        raise AssertionError("a one-day profile should be rejected")


def test_hmm():
    truth, _ = ls.GaussianHmm.fit([[[0.0], [0.1], [5.0], [5.1]] * 20], 2, max_iter=5, seed=1)
    _, obs = truth.sample(400, seed=3)
    model, trace = ls.GaussianHmm.fit([obs], 2, max_iter=30, seed=2)
    assert all(b >= a - 1e-6 for a, b in zip(trace, trace[1:]))
    means = sorted(m[0] for m in model.means)
    assert abs(means[0] - 0.05) < 0.3 and abs(means[1] - 5.05) < 0.3
    assert ls.GaussianHmm.from_json(model.to_json()).n_states == 2


def test_evaluate_dirs():
    profiles, _ = ls.reference_dataset(3)
    with tempfile.TemporaryDirectory() as d:
        real, synth, out = Path(d, "real"), Path(d, "copy"), Path(d, "report")
        ls.write_profiles(str(real), profiles[:4])
        ls.write_profiles(str(synth), profiles[:4])
        n = ls.evaluate_dirs(str(real), [("copy", str(synth))], str(out))
        assert n == 4
        assert (out / "metrics_aggregate.csv").is_file()


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_"):
            fn()
            print(f"ok  {name}")
