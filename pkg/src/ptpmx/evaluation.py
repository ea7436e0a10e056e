"""Monte Carlo MSE harness, corollary check and property suite.

Every trial draws its delays from its own substream, keyed by
``(seed, stream, P, trial)``.  Trial results therefore do not depend on how
trials are split across worker processes, and all reductions run over the
re-assembled per-trial arrays in trial order.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import estimators as est
from . import obs as ob
from .pdf import EmpiricalPdf, self_convolve

Z95 = 1.959963984540054
Z95_ONE_SIDED = 1.6448536269514722
TRIAL_STREAM, BIAS_STREAM = 0, 1
DEFAULT_TRIALS = 2000
DEFAULT_BIAS_TRIALS = 1_000_000


@dataclass(frozen=True)
class ThresholdSpec:
    accuracy: float = 1.25  # us
    sigma_level: float = 5.0

    def __post_init__(self):
        if not (self.accuracy > 0 and self.sigma_level > 0):
            raise ValueError("accuracy and sigma_level must be positive")

    @property
    def std_threshold(self) -> float:
        return self.accuracy / self.sigma_level

    @property
    def mse_threshold(self) -> float:
        return self.std_threshold ** 2

    def header(self) -> str:
        return (f"# threshold accuracy_us={self.accuracy!r} sigma_level={self.sigma_level!r} "
                f"std_us={self.std_threshold!r} mse_us2={self.mse_threshold!r}")


@dataclass
class MseCurve:
    estimator_id: str
    model: str
    P_values: tuple
    mse: np.ndarray
    ci_halfwidth: np.ndarray
    trials: int
    seed: int

    def __post_init__(self):
        self.mse = np.asarray(self.mse, dtype=float)
        self.ci_halfwidth = np.asarray(self.ci_halfwidth, dtype=float)
        if not (len(self.P_values) == self.mse.size == self.ci_halfwidth.size):
            raise ValueError("P_values, mse and ci_halfwidth must have the same length")
        if np.any(self.mse < 0):
            raise ValueError("mse must be non-negative")


def trial_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def mse_stats(errors) -> tuple[float, float]:
    """Mean squared error and its 95% normal-approximation half-width."""
    sq = np.square(np.asarray(errors, dtype=float))
    if sq.size == 0:
        raise ValueError("no trials")
    ci = Z95 * float(np.std(sq, ddof=1)) / math.sqrt(sq.size) if sq.size > 1 else 0.0
    return float(np.mean(sq)), ci


def paired_le(err_a, err_b) -> tuple[float, float, bool]:
    """Test ``MSE_a <= MSE_b`` on matched trials.

    Returns the mean of ``e_a**2 - e_b**2``, its standard error, and whether
    the inequality survives a one-sided 95% test (mean difference not
    significantly positive).
    """
    d = np.square(np.asarray(err_a, float)) - np.square(np.asarray(err_b, float))
    se = float(np.std(d, ddof=1)) / math.sqrt(d.size) if d.size > 1 else 0.0
    mean = float(np.mean(d))
    return mean, se, mean <= Z95_ONE_SIDED * se


# -- trial runner -------------------------------------------------------------

@dataclass(frozen=True)
class TrialSetup:
    kind: ob.ModelKind
    f1: EmpiricalPdf
    f2: EmpiricalPdf
    estimators: tuple
    step: float | None = None
    bias: est.BiasTable | None = None
    truth: ob.GroundTruth = field(default_factory=ob.GroundTruth)


def _run_range(setup: TrialSetup, seed: int, lo: int, hi: int) -> np.ndarray:
    k = setup.kind
    target = ob.target_offset(k, ob.truth_params(k, setup.truth))
    out = np.empty((len(setup.estimators), hi - lo))
    for t in range(lo, hi):
        rng = trial_rng(seed, TRIAL_STREAM, k.P, t)
        o = ob.generate(k, setup.truth, setup.f1, setup.f2, rng)
        for e, name in enumerate(setup.estimators):
            value = est.estimate(o, setup.f1, setup.f2, name, setup.step, setup.bias).estimate
            out[e, t - lo] = value - target
    return out


def _run_star(args):
    return _run_range(*args)


def trial_errors(setup: TrialSetup, trials: int, seed: int, workers: int = 1) -> np.ndarray:
    """Estimation errors, shape ``[estimator, trial]``, identical for any ``workers``."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if workers <= 1 or trials < 2 * workers:
        return _run_range(setup, seed, 0, trials)
    n_chunks = workers * 4
    bounds = np.linspace(0, trials, n_chunks + 1).astype(int)
    jobs = [(setup, seed, int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_run_star, jobs))
    return np.concatenate(parts, axis=1)


def bias_for(filters, P: int, f1, f2, seed: int, num_trials: int = DEFAULT_BIAS_TRIALS) -> est.BiasTable:
    """Bias table for the conventional ``filters`` at one P, on its own substream."""
    table = est.BiasTable()
    for i, name in enumerate(f for f in filters if f in est.FILTERS):
        table[(name, P)] = est.bias_of(name, P, f1, f2, num_trials, trial_rng(seed, BIAS_STREAM, P, i))
    return table


def _check_estimators(names):
    for n in names:
        if n != "minimax" and n not in est.FILTERS:
            raise ValueError(f"unknown estimator {n!r}; choose minimax or one of {', '.join(est.FILTERS)}")


def mse_at(estimator: str, kind: str, P: int, B: int | None, f1, f2, trials: int = DEFAULT_TRIALS,
           seed: int = 0, *, step=None, bias=None, bias_trials=DEFAULT_BIAS_TRIALS, workers=1):
    """(mse, ci) of one estimator at theta = 0."""
    _check_estimators([estimator])
    k = ob.kind(kind, P, B)
    if estimator != "minimax" and bias is None:
        bias = bias_for([estimator], P, f1, f2, seed, bias_trials)
    errs = trial_errors(TrialSetup(k, f1, f2, (estimator,), step, bias), trials, seed, workers)
    return mse_stats(errs[0])


def curve_errors(estimators, kind: str, P_list, B, f1, f2, trials=DEFAULT_TRIALS, seed=0, *,
                 step=None, bias=None, bias_trials=DEFAULT_BIAS_TRIALS, workers=1) -> dict:
    """Per-P error arrays ``{P: [estimator, trial]}`` on matched draws."""
    estimators = tuple(estimators)
    _check_estimators(estimators)
    out = {}
    for P in P_list:
        table = bias
        if table is None and any(e != "minimax" for e in estimators):
            table = bias_for(estimators, P, f1, f2, seed, bias_trials)
        k = ob.kind(kind, P, B)
        out[P] = trial_errors(TrialSetup(k, f1, f2, estimators, step, table), trials, seed, workers)
    return out


def curves_from_errors(estimators, kind: str, errors: dict, trials: int, seed: int) -> list[MseCurve]:
    P_values = tuple(errors)
    curves = []
    for e, name in enumerate(estimators):
        stats = [mse_stats(errors[P][e]) for P in P_values]
        curves.append(MseCurve(name, kind.upper(), P_values, [s[0] for s in stats],
                               [s[1] for s in stats], trials, seed))
    return curves


def curve(estimators, kind: str, P_list, B, f1, f2, trials=DEFAULT_TRIALS, seed=0, **kw) -> list[MseCurve]:
    """MSE-versus-P curves; all estimators see the same delay draws."""
    estimators = tuple(estimators)
    errs = curve_errors(estimators, kind, P_list, B, f1, f2, trials, seed, **kw)
    return curves_from_errors(estimators, kind, errs, trials, seed)


def write_curves_csv(curves, path, threshold: ThresholdSpec | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if threshold is not None:
            fh.write(threshold.header() + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["estimator", "model", "P", "mse_us2", "ci_us2", "trials", "seed"])
        for c in curves:
            for P, m, ci in zip(c.P_values, c.mse, c.ci_halfwidth):
                w.writerow([c.estimator_id, c.model, P, repr(float(m)), repr(float(ci)), c.trials, c.seed])


def read_curves_csv(path) -> list[MseCurve]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    groups: dict = {}
    for r in rows[1:]:
        key = (r[0], r[1], int(r[5]), int(r[6]))
        groups.setdefault(key, []).append((int(r[2]), float(r[3]), float(r[4])))
    return [MseCurve(e, m, tuple(p for p, _, _ in v), [x for _, x, _ in v], [c for _, _, c in v], t, s)
            for (e, m, t, s), v in groups.items()]


# -- corollary ----------------------------------------------------------------

@dataclass(frozen=True)
class CorollaryRow:
    K: int
    L: int
    rho_KL: float
    ci_KL: float
    rho_L: float
    ci_L: float
    slack: float = 0.05

    @property
    def lower_lhs(self) -> float:
        return self.rho_KL - self.ci_KL

    @property
    def upper_rhs(self) -> float:
        return self.K * (self.rho_L + self.ci_L)

    @property
    def holds(self) -> bool:
        if self.K == 1:
            return True  # the same quantity on both sides
        return self.lower_lhs >= (1.0 - self.slack) * self.upper_rhs


def corollary_check(f1_single, f2_single, K_values, L: int = 1, P: int = 1, trials=DEFAULT_TRIALS,
                    seed=0, *, step=None, workers=1, slack=0.05) -> list[CorollaryRow]:
    """S-model minimax MSE of an N-node cascade against K times that of L nodes.

    N-node pdfs are N-fold self-convolutions of the single-node pdfs, which
    makes the per-node delays i.i.d. by construction.
    """
    def rho(n):
        f1, f2 = self_convolve(f1_single, n), self_convolve(f2_single, n)
        return mse_at("minimax", "S", P, None, f1, f2, trials, seed, step=step, workers=workers)

    rho_L, ci_L = rho(L)
    rows = []
    for K in K_values:
        if K < 1:
            raise ValueError("K must be >= 1")
        r, ci = (rho_L, ci_L) if K == 1 else rho(K * L)
        rows.append(CorollaryRow(K, L, r, ci, rho_L, ci_L, slack))
    return rows


def write_corollary_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["K", "L", "rho_KL_us2", "ci_KL_us2", "rho_L_us2", "ci_L_us2", "holds"])
        for r in rows:
            w.writerow([r.K, r.L, repr(r.rho_KL), repr(r.ci_KL), repr(r.rho_L), repr(r.ci_L), int(r.holds)])
