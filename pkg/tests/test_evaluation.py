import math

import numpy as np
import pytest

from ptpmx import estimators as est
from ptpmx import evaluation as ev
from ptpmx import obs
from ptpmx import pdf as pd

U = pd.uniform(0.0, 1.0, 0.01)


def test_threshold():
    t = ev.ThresholdSpec()
    assert t.mse_threshold == pytest.approx(0.0625, rel=1e-15)
    assert "mse_us2=0.0625" in t.header()
    with pytest.raises(ValueError):
        ev.ThresholdSpec(accuracy=0)


def test_mse_stats_and_paired_rule():
    assert ev.mse_stats([1.0, -1.0, 1.0]) == (1.0, 0.0)
    with pytest.raises(ValueError):
        ev.mse_stats([])
    rng = np.random.default_rng(0)
    e = rng.normal(size=4000)
    mean, se, ok = ev.paired_le(0.5 * e, e)
    assert mean < 0 and ok
    assert not ev.paired_le(2 * e, e)[2]


def test_point_mass_mse_is_tiny():
    """Point masses occupy one bin, so draws carry at most one bin of jitter."""
    pm = pd.point_mass(0.0, 0.001)
    for v, B in (("K", None), ("S", None), ("M", 2)):
        for name in ("minimax",) + est.FILTERS:
            if v == "K" and name != "minimax":
                continue
            mse, _ = ev.mse_at(name, v, 4, B, pm, pm, trials=50, bias_trials=1000)
            assert mse <= pm.bin_width ** 2


def test_mean_filter_mse():
    mse, ci = ev.mse_at("mean", "S", 4, None, U, U, trials=20_000, seed=3, bias_trials=1000)
    assert abs(mse - 1 / 96) <= ci


def test_ci_shrinks_with_trials():
    ratios = []
    for seed in range(6):
        _, c1 = ev.mse_at("mean", "S", 4, None, U, U, trials=1000, seed=seed, bias_trials=1000)
        _, c2 = ev.mse_at("mean", "S", 4, None, U, U, trials=2000, seed=seed + 100, bias_trials=1000)
        ratios.append(c2 / c1)
    assert 0.6 <= np.mean(ratios) <= 0.8


def test_substreams_independent_of_workers(skewed_pdfs):
    setup = ev.TrialSetup(obs.kind("S", 3), *skewed_pdfs, ("minimax", "mean"))
    a = ev.trial_errors(setup, 40, seed=5, workers=1)
    b = ev.trial_errors(setup, 40, seed=5, workers=2)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a[:, :20], ev.trial_errors(setup, 20, seed=5))


def test_curve_csv_bit_identical(tmp_path, skewed_pdfs):
    paths = []
    for i in range(2):
        c = ev.curve(["minimax", "min"], "S", [1, 4], None, *skewed_pdfs, trials=50, seed=9,
                     bias_trials=2000)
        paths.append(tmp_path / f"c{i}.csv")
        ev.write_curves_csv(c, paths[-1], ev.ThresholdSpec())
    assert paths[0].read_bytes() == paths[1].read_bytes()
    back = ev.read_curves_csv(paths[0])
    assert [x.estimator_id for x in back] == ["minimax", "min"]
    np.testing.assert_array_equal(back[0].mse, c[0].mse)


def test_conventional_identical_across_kinds(skewed_pdfs):
    f1, f2 = skewed_pdfs
    bias = ev.bias_for(est.FILTERS, 4, f1, f2, 0, 2000)
    errs = {}
    for v, B in (("S", None), ("M", 3)):
        errs[v] = ev.curve_errors(est.FILTERS, v, [4], B, f1, f2, 100, seed=1, bias=bias)[4]
    np.testing.assert_array_equal(errs["S"], errs["M"])


def test_constant_risk(skewed_pdfs):
    f1, f2 = skewed_pdfs
    dw = f1.bin_width
    for v, B in (("K", None), ("S", None), ("M", 1)):
        k = obs.kind(v, 5, B)
        truth = obs.GroundTruth(37 * dw, 0.0 if v == "K" else 911 * dw, (-12 * dw,) if B else ())
        e0 = ev.trial_errors(ev.TrialSetup(k, f1, f2, ("minimax",)), 30, seed=2)[0]
        e1 = ev.trial_errors(ev.TrialSetup(k, f1, f2, ("minimax",), truth=truth), 30, seed=2)[0]
        assert np.max(np.abs(e0 ** 2 - e1 ** 2)) < 1e-9


def test_minimax_non_increasing_in_p(skewed_pdfs):
    c = ev.curve(["minimax"], "S", [1, 2, 4, 8, 16], None, *skewed_pdfs, trials=300, seed=4)[0]
    for i in range(len(c.P_values) - 1):
        assert c.mse[i + 1] <= c.mse[i] + c.ci_halfwidth[i] + c.ci_halfwidth[i + 1]


def test_bias_breakup(skewed_pdfs):
    f1, f2 = skewed_pdfs
    P = 4
    table = ev.bias_for(["mean"], P, f1, f2, 0, 200_000)
    mu = table.mu("mean", P)
    raw = ev.trial_errors(ev.TrialSetup(obs.kind("S", P), f1, f2, ("mean",)), 4000, seed=3)[0]
    comp = ev.trial_errors(ev.TrialSetup(obs.kind("S", P), f1, f2, ("mean",), bias=table), 4000, seed=3)[0]
    gap = np.mean(raw ** 2) - np.mean(comp ** 2)
    tol = 2 * abs(mu) * ev.Z95 * raw.std(ddof=1) / math.sqrt(raw.size) + 1e-12
    assert abs(gap - mu * mu) <= tol


def test_m_non_increasing_in_b(skewed_pdfs):
    f1, f2 = skewed_pdfs
    prev = None
    for B in (1, 4):
        e = ev.curve_errors(["minimax"], "M", [4], B, f1, f2, 200, seed=6)[4][0]
        if prev is not None:
            assert ev.paired_le(e, prev)[2]
        prev = e


def test_unknown_estimator():
    with pytest.raises(ValueError, match="unknown estimator"):
        ev.curve(["best"], "S", [1], None, U, U, trials=2)


def test_corollary_uniform():
    rows = ev.corollary_check(U, U, [1, 2, 4], P=4, trials=4000, seed=0)
    assert [r.K for r in rows] == [1, 2, 4]
    assert rows[0].rho_KL == rows[0].rho_L
    assert all(r.holds for r in rows)
    with pytest.raises(ValueError):
        ev.corollary_check(U, U, [0], trials=10)


def test_corollary_csv(tmp_path):
    rows = ev.corollary_check(U, U, [1, 2], trials=200, seed=1)
    p = tmp_path / "c.csv"
    ev.write_corollary_csv(rows, p)
    lines = p.read_text().splitlines()
    assert lines[0].startswith("K,L,rho_KL_us2") and len(lines) == 3
