import csv
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from phasepinn.metrics import MetricConfig, emit_report, evaluate, ordered_methods, smape

positive = st.floats(1e-3, 1e7, allow_nan=False)
series = st.integers(1, 40).flatmap(lambda n: st.tuples(arrays(float, n, elements=positive), arrays(float, n, elements=positive)))


def test_smape_hand_values():
    assert smape([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert smape([1.0], [2.0]) == pytest.approx(2 / 3, rel=1e-15)
    assert smape([0.0], [5.0]) == 2.0
    assert smape([0.0, 0.0], [0.0, 0.0]) == 0.0


def test_smape_rejects_bad_input():
    with pytest.raises(ValueError, match="length"):
        smape([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        smape([], [])


@settings(max_examples=200, deadline=None)
@given(series)
def test_smape_bounded_and_symmetric(pair):
    y, yhat = pair
    value = smape(y, yhat)
    assert 0.0 <= value <= 2.0
    assert value == pytest.approx(smape(yhat, y), rel=1e-12, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(series, st.floats(1e-3, 1e3))
def test_smape_scale_invariant(pair, c):
    y, yhat = pair
    assert smape(c * y, c * yhat) == pytest.approx(smape(y, yhat), rel=1e-9, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(series, st.data())
def test_smape_is_length_weighted_mean_over_pieces(pair, data):
    y, yhat = pair
    k = data.draw(st.integers(0, y.size))
    if 0 < k < y.size:
        combined = (k * smape(y[:k], yhat[:k]) + (y.size - k) * smape(y[k:], yhat[k:])) / y.size
        assert smape(y, yhat) == pytest.approx(combined, rel=1e-12, abs=1e-15)


def wave(n=132, scale=1000.0):
    t = np.arange(1, n + 1)
    return scale * np.exp(-((t - 50) / 30) ** 2) + 10


def test_perfect_forecasts_score_zero():
    obs = {"a": wave(), "b": wave(scale=50)}
    report = evaluate(obs, {"sir": dict(obs)})
    assert report.aggregate["sir"] == {"short": 0.0, "long": 0.0, "all": 0.0}


def test_horizons_use_test_days_only():
    obs = wave()
    pred = obs.copy()
    pred[:35] = 0  # training days are never scored
    pred[35 + 30] *= 2  # first long-horizon day
    report = evaluate({"a": obs}, {"mlp": {"a": pred}})
    cell = report.per_region["a"]["mlp"]
    assert cell["short"] == 0.0
    assert cell["long"] == pytest.approx((2 / 3) / 67, rel=1e-12)
    assert cell["all"] == pytest.approx((2 / 3) / 97, rel=1e-12)


def test_aggregate_is_mean_over_regions():
    obs = {"a": wave(), "b": wave(scale=10)}
    fc = {"sir": {"a": 1.1 * obs["a"], "b": 0.5 * obs["b"]}}
    report = evaluate(obs, fc)
    for h in ("short", "long", "all"):
        expected = np.mean([report.per_region[r]["sir"][h] for r in "ab"])
        assert report.aggregate["sir"][h] == expected


def test_missing_region_forecast():
    obs = {"a": wave(), "b": wave()}
    with pytest.raises(KeyError, match="b"):
        evaluate(obs, {"sir": {"a": wave()}})


def test_short_test_window_rejected():
    with pytest.raises(ValueError, match="horizon"):
        evaluate({"a": wave(100)}, {"sir": {"a": wave(100)}}, MetricConfig())


def test_method_order():
    assert ordered_methods({"mp-pinn", "zeta", "sir", "mlp"}) == ("sir", "mlp", "mp-pinn", "zeta")


def read_rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_empty_method_set_gives_header_only(tmp_path):
    report = evaluate({"a": wave()}, {})
    written = emit_report(report, tmp_path)
    assert read_rows(written["results"]) == [["method", "horizon", "smape"]]


def test_full_report_layout(tmp_path):
    obs = {"a": wave(), "b": wave(scale=200)}
    rng = np.random.default_rng(0)
    fc = {m: {r: obs[r] * rng.uniform(0.8, 1.2, 132) for r in obs} for m in ("mp-pinn", "sir", "sp-pinn", "mlp")}
    written = emit_report(evaluate(obs, fc), tmp_path)
    rows = read_rows(written["results"])
    assert len(rows) == 13
    assert [r[0] for r in rows[1::3]] == ["sir", "mlp", "sp-pinn", "mp-pinn"]
    assert [r[1] for r in rows[1:4]] == ["short", "long", "all"]
    assert all(len(r[2].split(".")[1]) == 6 for r in rows[1:])
    assert len(read_rows(tmp_path / "regions" / "a.csv")) == 13
    svgs = sorted((tmp_path / "plots").glob("*.svg"))
    assert len(svgs) == 8
    for path in svgs:
        assert ET.parse(path).getroot().tag.endswith("svg")


def test_report_files_are_reproducible(tmp_path):
    obs = {"a": wave()}
    fc = {"sir": {"a": 0.9 * obs["a"]}}
    first = emit_report(evaluate(obs, fc), tmp_path / "x")
    second = emit_report(evaluate(obs, fc), tmp_path / "y")
    for key in first:
        assert first[key].read_bytes() == second[key].read_bytes(), key
