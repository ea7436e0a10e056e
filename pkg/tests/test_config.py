import pytest

from ptpmx import config as cf
from ptpmx import queuesim as qs

GOOD = """
[traffic]
link_gbps = 1
switches = 4
flow = cross
fwd_cross_load = 0.4   # fraction
rev_cross_load = 0.2
rev_cross_model = tm2
probes = 5000

[estimation]
models = k,s,m
estimators = minimax,min
bin_us = 0.02
f1 = fwd.csv
f2 = rev.csv

[evaluation]
p = 1..16
b = 3
trials = 100
seed = 7
"""


def write(tmp_path, text):
    p = tmp_path / "s.cfg"
    p.write_text(text)
    return p


def test_load(tmp_path):
    c = cf.load(write(tmp_path, GOOD), env={})
    sc = c.traffic.scenario
    assert sc.num_switches == 4 and sc.flow_type == "cross"
    assert sc.forward.cross_load == 0.4 and sc.reverse.cross_model is qs.TM2
    assert c.traffic.probes == 5000
    assert c.estimation.models == ("K", "S", "M") and c.estimation.bin_us == 0.02
    assert c.estimation.f1 == tmp_path / "fwd.csv"
    assert c.evaluation.P_values == (1, 2, 4, 8, 16) and c.evaluation.B == 3
    assert c.evaluation.seed == 7
    assert c.threshold.mse_threshold == pytest.approx(0.0625)


def test_seed_env(tmp_path):
    assert cf.load(write(tmp_path, GOOD), env={cf.SEED_ENV: "99"}).evaluation.seed == 99
    with pytest.raises(cf.ConfigError, match=cf.SEED_ENV):
        cf.load(write(tmp_path, GOOD), env={cf.SEED_ENV: "x"})


@pytest.mark.parametrize("edit,where", [
    (("switches = 4", "switches = 0"), "switches"),
    (("fwd_cross_load = 0.4", "fwd_cross_load = 1.2"), "fwd_"),
    (("rev_cross_model = tm2", "rev_cross_model = jumbo"), "rev_cross_model"),
    (("flow = cross", "flow = sideways"), "flow"),
    (("models = k,s,m", "models = k,q"), "models"),
    (("estimators = minimax,min", "estimators = mode"), "estimators"),
    (("p = 1..16", "p = 0,4"), "p"),
    (("seed = 7", "seed = 7\ncolour = red"), "colour"),
    (("f2 = rev.csv", ""), "f1"),
    (("[evaluation]", "[results]"), "results"),
])
def test_errors_name_the_key(tmp_path, edit, where):
    with pytest.raises(cf.ConfigError, match=where):
        cf.load(write(tmp_path, GOOD.replace(*edit)), env={})


def test_missing_file(tmp_path):
    with pytest.raises(cf.ConfigError, match="cannot read"):
        cf.load(tmp_path / "nope.cfg")


def test_p_list():
    assert cf.parse_p_list("1..256") == (1, 2, 4, 8, 16, 32, 64, 128, 256)
    assert cf.parse_p_list("3,5") == (3, 5)
    for bad in ("8..2", "", "0"):
        with pytest.raises(ValueError):
            cf.parse_p_list(bad)


def test_defaults(tmp_path):
    c = cf.load(write(tmp_path, "[traffic]\nswitches = 1\n"), env={})
    assert c.estimation.models == ("S",) and c.evaluation.trials == 2000
