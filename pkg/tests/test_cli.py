import numpy as np
import pytest

from ptpmx import cli
from ptpmx import obs
from ptpmx import pdf as pd


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pdf_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("pdfs")
    assert run("simulate-delays", "--switches", 2, "--fwd-load", 0.4, "--rev-load", 0.2,
               "--probes", 20_000, "--bin-us", 0.01, "--seed", 3, "--out-dir", d) == 0
    return d / "f1.csv", d / "f2.csv"


def test_help(capsys):
    assert run("--help") == 0
    assert "simulate-delays" in capsys.readouterr().out


def test_simulate_is_deterministic(tmp_path, pdf_files):
    again = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run("simulate-delays", "--switches", 2, "--fwd-load", 0.4, "--rev-load", 0.2,
               "--probes", 20_000, "--bin-us", 0.01, "--seed", 3, "--out", *again) == 0
    for a, b in zip(pdf_files, again):
        assert a.read_bytes() == b.read_bytes()
    f1, f2 = (pd.read_pdf_csv(p) for p in pdf_files)
    assert f1.origin == 0.0 and f1.mean() > f2.mean()


def test_simulate_rejects_overload(capsys):
    assert run("simulate-delays", "--fwd-load", 1.5, "--probes", 10) == 1
    assert "load" in capsys.readouterr().err


@pytest.fixture
def obs_file(tmp_path, pdf_files):
    f1, f2 = (pd.read_pdf_csv(p) for p in pdf_files)
    o = obs.generate(obs.kind("S", 8), obs.GroundTruth(delta=0.5, d=10.0), f1, f2, np.random.default_rng(0))
    path = tmp_path / "obs.csv"
    obs.write_obs_csv(o, path)
    return path


def test_estimate(tmp_path, pdf_files, obs_file, capsys):
    out = tmp_path / "report.csv"
    assert run("estimate", "--model", "s", "--obs", obs_file, "--f1", pdf_files[0], "--f2", pdf_files[1],
               "--estimator", "minimax,min", "--out", out) == 0
    lines = capsys.readouterr().out.splitlines()
    value = float(lines[0].split()[1])
    assert lines[0].startswith("minimax:") and abs(value - 0.5) < 1.0
    rows = out.read_text().splitlines()
    assert rows[0].startswith("estimator,model,P,B,estimate_us") and len(rows) == 3


def test_estimate_model_mismatch(pdf_files, obs_file, capsys):
    assert run("estimate", "--model", "k", "--obs", obs_file, "--f1", pdf_files[0], "--f2", pdf_files[1]) == 1
    assert "does not match" in capsys.readouterr().err


def test_estimate_width_mismatch(tmp_path, pdf_files, obs_file, capsys):
    coarse = tmp_path / "coarse.csv"
    pd.write_pdf_csv(pd.rebin(pd.read_pdf_csv(pdf_files[1]), 0.02), coarse)
    assert run("estimate", "--obs", obs_file, "--f1", pdf_files[0], "--f2", coarse) == 1
    err = capsys.readouterr().err
    assert "0.01" in err and "0.02" in err


def test_missing_file(tmp_path, pdf_files, capsys):
    assert run("estimate", "--obs", tmp_path / "none.csv", "--f1", pdf_files[0], "--f2", pdf_files[1]) == 1
    assert "none.csv" in capsys.readouterr().err


def test_bias_and_benchmark(tmp_path, pdf_files, monkeypatch):
    bias = tmp_path / "bias.csv"
    assert run("bias-table", "--f1", pdf_files[0], "--f2", pdf_files[1], "--p", "1..4",
               "--trials", 2000, "--seed", 1, "--out", bias) == 0
    assert len(bias.read_text().splitlines()) == 1 + 4 * 3
    outs = []
    for workers in (1, 2):
        outs.append(tmp_path / f"c{workers}.csv")
        assert run("benchmark", "--f1", pdf_files[0], "--f2", pdf_files[1], "--models", "k,s",
                   "--estimators", "minimax,min", "--p", "1..4", "--trials", 20, "--bias-table", bias,
                   "--seed", 2, "--workers", workers, "--out", outs[-1]) == 0
    assert outs[0].read_bytes() == outs[1].read_bytes()
    text = outs[0].read_text().splitlines()
    assert text[0].startswith("# threshold") and text[1].startswith("estimator,model,P,mse_us2")
    # K has no conventional rows; S has both
    assert sum(r.startswith("min,") for r in text) == 3
    monkeypatch.setenv("PTPMX_SEED", "2")
    env_out = tmp_path / "env.csv"
    assert run("benchmark", "--f1", pdf_files[0], "--f2", pdf_files[1], "--models", "k,s",
               "--estimators", "minimax,min", "--p", "1..4", "--trials", 20, "--bias-table", bias,
               "--out", env_out) == 0
    assert env_out.read_bytes() == outs[0].read_bytes()


def test_benchmark_bad_estimator(pdf_files, capsys):
    assert run("benchmark", "--f1", pdf_files[0], "--f2", pdf_files[1], "--estimators", "best") == 1
    assert "unknown estimator" in capsys.readouterr().err


def test_usage_error_hint(capsys):
    assert run("estimate") == 1
    assert "--help" in capsys.readouterr().err


def test_corollary(tmp_path, capsys):
    u = tmp_path / "u.csv"
    pd.write_pdf_csv(pd.uniform(0.0, 1.0, 0.01), u)
    code = run("corollary", "--f1", u, "--f2", u, "--k", "1,2", "--P", 4, "--trials", 2000,
               "--seed", 0, "--out", tmp_path / "c.csv")
    assert code == 0
    assert "K=2" in capsys.readouterr().out


def test_plot_data(tmp_path):
    assert run("plot-data", "--figure", "mse_asymm_cross", "--switches", 1, "--probes", 5000,
               "--p", "1,2", "--trials", 10, "--bias-trials", 200, "--seed", 0, "--out-dir", tmp_path) == 0
    rows = (tmp_path / "mse_asymm_cross.csv").read_text().splitlines()
    names = {r.split(",")[0] for r in rows[2:]}
    assert names == {"minimax", "min", "max", "mean", "median"}


def test_verify(tmp_path, capsys):
    report = tmp_path / "v.csv"
    assert run("verify", "--seed", 0, "--out", report) == 0
    assert report.read_text().startswith("# threshold")
    bad = tmp_path / "bad.csv"
    good = pd.uniform(0.0, 1.0, 0.01)
    pd.write_pdf_csv(good, bad)
    text = bad.read_text().splitlines()
    bad.write_text("\n".join(text[:-1]) + "\n")  # drop a bin: mass no longer sums to one
    assert run("verify", "--seed", 0, "--pdf", bad) == 2
    assert "normalization" in capsys.readouterr().err
