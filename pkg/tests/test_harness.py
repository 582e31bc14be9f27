import json
import math

import numpy as np
import pytest

from acstab.asymptotics import Prediction
from acstab.errors import AlignmentError, ConfigError
from acstab.harness import (EXPONENT_SENTINEL, ComparisonReport, ExperimentConfig,
                            choose_form, compare_prediction, decay_fit_experiment,
                            full_line_scan, run_experiment)
from acstab.ode import Trajectory
from acstab.potentials import exponential, periodic, power_oscillatory, sum_of, zero

U_PER = periodic([0.0, 2.0, 0.0], 2 * math.pi)
SHORT = dict(x_max=1500.0, x_compare=1200.0, checkpoint=1000.0)


def _free(V, lams, **kw):
    d = dict(kind="free_thm11", V=V.to_dict(), grids=[{"values": list(lams), "label": "S1"}],
             **SHORT)
    d.update(kw)
    return ExperimentConfig.from_dict(d)


def test_zero_potential_passes_everywhere():
    rep = run_experiment(_free(zero(), [0.7, 1.3, 2.9]))
    assert rep.pass_fraction == 1.0 and rep.passed
    for r in rep.records:
        assert r["ratio"] == pytest.approx(1.0, abs=1e-9)
        assert r["ratio_100"] == pytest.approx(1.0, abs=1e-9)


def test_rerun_is_byte_identical(tmp_path):
    cfg = _free(power_oscillatory(1.0, 0.8, 1.0), [0.9, 1.7])
    a = run_experiment(cfg, str(tmp_path / "a"))
    b = run_experiment(cfg, str(tmp_path / "b"))
    for ext in ("json", "csv"):
        assert (tmp_path / "a" / f"free_thm11.{ext}").read_bytes() == \
            (tmp_path / "b" / f"free_thm11.{ext}").read_bytes()
    assert a.to_json() == b.to_json()


def test_every_energy_reported_once():
    lams = [0.6, 1.1, 1.9, 3.3]
    cfg = ExperimentConfig.from_dict(dict(
        kind="free_thm11", V=exponential(1.0, 0.5).to_dict(),
        grids=[{"values": lams[:2], "label": "S1"}, {"values": lams[2:], "label": "S2"}],
        **SHORT))
    rep = run_experiment(cfg)
    assert [r["lam"] for r in rep.records] == lams
    assert [r["grid"] for r in rep.records] == ["S1", "S1", "S2", "S2"]
    header = rep.to_csv().splitlines()[0].split(",")
    assert header[:3] == ["lam", "grid", "status"]


def test_short_range_free_prediction_passes():
    rep = run_experiment(_free(exponential(1.0, 1.0), [0.8, 2.0]))
    assert rep.passed
    for r in rep.records:
        assert abs(r["ratio"] - 1.0) < 1e-6


def test_periodic_band_sampling():
    cfg = ExperimentConfig.from_dict(dict(kind="periodic_thm12", U=U_PER.to_dict(),
                                          V=exponential(1.0, 1.0).to_dict(), bands=[4],
                                          n_per_band=2, **SHORT))
    rep = run_experiment(cfg)
    assert len(rep.records) == 2
    assert all(r["grid"] == "band4" for r in rep.records)
    assert rep.passed
    bad = ExperimentConfig.from_dict(dict(kind="periodic_thm12", U=U_PER.to_dict(),
                                          bands=[40], **SHORT))
    with pytest.raises(ConfigError):
        run_experiment(bad)


def test_full_line_even_potential_symmetric():
    V = power_oscillatory(1.0, 0.8, 1.0)
    cfg = ExperimentConfig.from_dict(dict(kind="full_line_thm13", V=V.to_dict(),
                                          grids=[{"values": [1.2, 2.5]}], **SHORT))
    right, left, comb = full_line_scan(cfg)
    for a, b in zip(right.records, left.records):
        assert a["ratio"] == b["ratio"] and a["status"] == b["status"]
    assert comb.summary["both_fraction"] == comb.summary["either_fraction"]


def test_full_line_right_supported_potential():
    V = power_oscillatory(1.0, 0.8, 1.0, support="positive")
    cfg = ExperimentConfig.from_dict(dict(kind="full_line_thm13", V=V.to_dict(),
                                          grids=[{"values": [1.2, 2.5]}], **SHORT))
    right, left, comb = full_line_scan(cfg)
    for r in left.records:
        assert r["ratio"] == pytest.approx(1.0, abs=1e-9) and r["status"] == "pass"
    assert [r["right"] for r in comb.records] == [r["status"] for r in right.records]


def test_config_errors():
    V = zero().to_dict()
    with pytest.raises(ConfigError):
        ExperimentConfig(kind="nope")
    with pytest.raises(ConfigError):
        ExperimentConfig(kind="free_thm11")
    with pytest.raises(ConfigError):
        ExperimentConfig(kind="periodic_thm12", V=V)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(dict(kind="free_thm11", grids=[[1.0, 2.0], [2.0, 3.0]]))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(dict(kind="free_thm11", grids=[[1.0]], form="thm99"))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(dict(kind="free_thm11", grids=[[1.0]], pass_fraction=1.5))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(dict(kind="free_thm11", grids=[[1.0]], checkpoint=5000.0))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(dict(kind="free_thm11", grids=[[2.0, 1.0]]))


def test_config_json_and_params(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"kind": "maximal_thm21", "ensemble": 5, "q": 3.0}))
    cfg = ExperimentConfig.from_json(p)
    assert cfg.params == {"ensemble": 5, "q": 3.0}
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json(p)


def test_choose_form():
    assert choose_form("auto", power_oscillatory(1.0, 0.8, 1.0)) == "thm17"
    assert choose_form("auto", power_oscillatory(1.0, 0.7, 1.0)) == "thm18"
    assert choose_form("auto", exponential(1.0, 1.0)) == "thm17"
    s = sum_of(power_oscillatory(1.0, 0.9, 1.0), power_oscillatory(0.5, 0.6, 2.0))
    assert choose_form("auto", s) == "thm18"
    assert choose_form("thm18", exponential(1.0, 1.0)) == "thm18"


def _exact_pair(lam=1.0, n=3001):
    k = math.sqrt(lam)
    x = np.linspace(0.0, 3000.0, n)
    phi = np.exp(1j * k * x)
    pr = Prediction(x, phi, 1j * k * phi, "thm17")
    tr = Trajectory(x, 2.0 * phi, 2.0 * 1j * k * phi, lam)
    return pr, tr


def test_compare_prediction_exact_sentinel():
    pr, tr = _exact_pair()
    rec = compare_prediction(tr, pr)
    assert rec["status"] == "pass" and rec["ratio"] == 1.0
    assert rec["error_exponent"] == EXPONENT_SENTINEL


def test_compare_prediction_power_error():
    pr, tr = _exact_pair()
    x = tr.x
    amp = 1.0 + 1.0 / (1.0 + x)
    tr = Trajectory(x, amp * pr.phi, amp * pr.dphi, tr.lam)
    rec = compare_prediction(tr, pr, fit_window=(100.0, 1000.0))
    # r is referenced to the last point, so |r - 1| = |amp / amp(end) - 1|; the running
    # max over +-10 of this decreasing error is its value at x - 10
    xs = np.geomspace(100.0, 1000.0, 50)
    err = np.abs((1.0 + 1.0 / (1.0 + xs - 10.0)) / amp[-1] - 1.0)
    expected = np.polyfit(np.log(xs), np.log(err), 1)[0]
    assert rec["error_exponent"] == pytest.approx(expected, abs=0.02)
    assert rec["status"] == "pass"


def test_compare_prediction_alignment_and_degenerate():
    pr, tr = _exact_pair()
    shifted = Trajectory(tr.x + 0.5, tr.u, tr.du, tr.lam)
    with pytest.raises(AlignmentError):
        compare_prediction(shifted, pr)
    flat = Prediction(pr.x, np.ones_like(pr.phi), np.zeros_like(pr.phi), "thm17")
    assert compare_prediction(tr, flat)["status"] == "degenerate"


def test_report_json_cleans_nonfinite(tmp_path):
    rep = ComparisonReport("x", [{"a": float("nan"), "b": np.float64(1.5)}], 0.5, False,
                           {"inf": float("inf")}, ("a", "b"))
    d = json.loads(rep.to_json())
    assert d["records"][0]["a"] is None and d["summary"]["inf"] is None
    assert rep.to_csv() == "a,b\n,1.5\n"
    pj, pc = rep.write(str(tmp_path), "stem")
    assert pj.endswith("stem.json") and pc.endswith("stem.csv")


def test_decay_fit_experiment_small():
    rep = decay_fit_experiment(power_oscillatory(1.0, 0.8, 1.0), [1.0, 2.0], x_max=8000.0,
                               window=(1e2, 4e3))
    assert rep.passed
    assert rep.summary["median_beta"] <= -0.2
