import math

import numpy as np
import pytest

from ptpmx import pdf as pd
from ptpmx import queuesim as qs


def test_traffic_models():
    assert math.isclose(qs.TM1.mean_bytes(), 307.7)
    assert math.isclose(qs.TM2.mean_bytes(), 0.3 * 64 + 0.1 * 576 + 0.6 * 1518)
    assert qs.UNIFORM_INLINE.mean_bytes() == 782.0
    with pytest.raises(ValueError):
        qs.PacketSizeModel("Custom", (64,), (0.5,))


def test_arrival_rates():
    assert math.isclose(qs.load_to_arrival_rate(0.2, 1e9, qs.TM1), 0.2e9 / (307.7 * 8))
    assert abs(qs.load_to_arrival_rate(0.2, 1e9, qs.TM1) - 81_248.0) < 0.5
    assert qs.load_to_arrival_rate(0.5, 1e9, qs.fixed_size(125)) == 500_000
    assert qs.load_to_arrival_rate(1e-12, 1e9, qs.TM1) < 1e-3


def test_config_validation():
    with pytest.raises(qs.UnstableQueue):
        qs.DirectionConfig(0.6, qs.TM1, 0.5)
    with pytest.raises(qs.UnstableQueue):
        qs.DirectionConfig(1.0)
    with pytest.raises(ValueError):
        qs.TrafficScenario(1e9, 0)
    with pytest.raises(ValueError):
        qs.TrafficScenario(1e9, 2, "cross", qs.DirectionConfig(0.1, qs.TM1, 0.1))


def test_zero_load(rng):
    w = qs.simulate_cross_single_node(qs.DirectionConfig(0.0), 1e9, 500, rng)
    assert np.all(w == 0)
    sc = qs.cross_scenario(0.0, 0.0, 3)
    assert np.all(qs.simulate_cascade(sc, "forward", 100, rng).ete_delays == 0)
    p = qs.delay_pdf(sc, "forward", 100, 0.01, rng)
    assert p.origin == 0.0 and p.n_bins == 1


def test_determinism():
    cfg = qs.DirectionConfig(0.4)
    a = qs.simulate_cross_single_node(cfg, 1e9, 2000, np.random.default_rng(3))
    b = qs.simulate_cross_single_node(cfg, 1e9, 2000, np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)


def test_fifo_departures():
    arr = np.array([0.0, 1.0, 1.5, 10.0])
    svc = np.array([2.0, 1.0, 1.0, 1.0])
    np.testing.assert_allclose(qs.fifo_departures(arr, svc), [2.0, 3.0, 4.0, 11.0])


def test_pk_mean_and_carried_load(rng):
    diag = []
    sc = qs.cross_scenario(0.4, 0.4, 1)
    w = qs.simulate_cascade(sc, "forward", 300_000, rng, diagnostics=diag).ete_delays
    pk = qs.pk_mean_wait(0.4, 1e9, qs.TM1)
    assert abs(w.mean() / pk - 1) < 0.05
    assert abs(diag[0].busy_fraction / 0.4 - 1) < 0.02
    assert w.min() >= 0


def test_trace_and_pdf(rng):
    sc = qs.cross_scenario(0.4, 0.2, 3)
    tr = qs.simulate_cascade(sc, "forward", 5000, rng)
    assert tr.per_node_delays.shape == (5000, 3)
    assert np.all(tr.per_node_delays >= 0)
    np.testing.assert_allclose(tr.ete_delays, tr.per_node_delays.sum(axis=1), atol=1e-12)
    p = pd.from_samples(tr.ete_delays, 0.01)
    assert p.origin == 0.0
    assert abs(p.mean() - tr.ete_delays.mean()) <= 0.005 + 1e-12


def test_cross_nodes_independent(rng):
    sc = qs.cross_scenario(0.5, 0.5, 2)
    d = qs.simulate_cascade(sc, "forward", 20_000, rng).per_node_delays
    r = np.corrcoef(d[:, 0], d[:, 1])[0, 1]
    assert abs(r) <= 3 / math.sqrt(d.shape[0])


def test_cross_cascade_matches_convolution():
    n = 20_000
    single = qs.simulate_cross_single_node(qs.DirectionConfig(0.5), 1e9, 200_000, np.random.default_rng(1))
    f4 = pd.self_convolve(pd.from_samples(single, 0.01), 4)
    ete = qs.simulate_cascade(qs.cross_scenario(0.5, 0.5, 4), "forward", n, np.random.default_rng(2)).ete_delays
    # compare CDFs at bin edges: the simulated atom at zero sits inside bin 0
    x = f4.edges[1::5]
    ecdf = np.searchsorted(np.sort(ete), x, side="right") / n
    assert np.max(np.abs(ecdf - f4.cdf(x))) <= 1.358 * math.sqrt(2 / n)


def test_inline_nodes_correlated(rng):
    sc = qs.TrafficScenario(1e9, 2, "inline", qs.DirectionConfig(0, qs.TM1, 0.5), qs.DirectionConfig())
    d = qs.simulate_cascade(sc, "forward", 4000, rng).per_node_delays
    r = np.corrcoef(d[:, 0], d[:, 1])[0, 1]
    perm = np.random.default_rng(0)
    null = [np.corrcoef(d[:, 0], perm.permutation(d[:, 1]))[0, 1] for _ in range(200)]
    assert r > 0 and np.mean(np.array(null) >= r) < 0.01


def test_priority_knob(rng):
    sc = qs.cross_scenario(0.6, 0.6, 1)
    shared = qs.simulate_cascade(sc, "forward", 5000, np.random.default_rng(4)).ete_delays
    high = qs.simulate_cascade(sc, "forward", 5000, np.random.default_rng(4), priority="high").ete_delays
    assert high.mean() < shared.mean()
    with pytest.raises(ValueError):
        qs.simulate_cascade(sc, "forward", 10, rng, priority="low")


def test_stable_half_runs(rng):
    diag = []
    qs.simulate_cascade(qs.cross_scenario(0.6, 0.6, 1), "forward", 1_000_000, rng, diagnostics=diag)
    q = diag[0].queue_lengths
    a, b = q[: q.size // 2].mean(), q[q.size // 2:].mean()
    assert abs(a - b) / max(a, b) <= 0.05


def test_fifo_no_reorder(rng):
    diag = []
    qs.simulate_cascade(qs.cross_scenario(0.7, 0.7, 2), "forward", 5000, rng, diagnostics=diag)
    for node in diag:
        assert np.all(np.diff(node.departures_out) >= 0)
