"""Phase-offset estimators: conventional filters and minimax (Pitman-type) rules.

The minimax estimates are posterior means under a flat prior, evaluated as
Riemann sums on uniform lattices of spacing ``step``.  Every lattice is
anchored on the observations themselves, so moving the observations by
``G h`` moves the lattice by exactly ``h`` and the estimates are shift
invariant, not just approximately so.  Likelihood products are accumulated
as log sums and exponentiated only after subtracting their maximum.

Lattice conventions (``o`` is a pdf origin, ``y[0]`` the first observation
of a direction in a block):

* scalar location ``theta_a = y[0] - o - step/2 - a*step``: the reference
  residual sits at bin centres when ``step`` equals the pdf bin width.
* K model ``delta_k = (y1[0] - y2[0])/2 - (o1 - o2)/2 + k*step``.
* M model: current block ``theta1 = d + delta``, ``theta2 = d - delta`` on
  scalar-location lattices; each past block ``theta1' = d + delta_j`` on
  its own scalar lattice, with ``theta2' = 2d - theta1'`` following from it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal

from .exact import CellProfile, NoMass, cell_profile, feasible_hull
from .obs import ObservationSet
from .pdf import EDGE_SNAP, EmpiricalPdf, PdfError, sample

FILTERS = ("min", "max", "mean", "median")
_CHUNK = 4_000_000
MAX_NODES = 1 << 23
_FFT_MIN = 2_000_000


class EmptyPosterior(ValueError):
    pass


class InconsistentObservations(EmptyPosterior):
    """The continuous feasible set itself is empty; no grid can help."""


@dataclass(frozen=True)
class RiemannGrid:
    bin_width: float
    lo: float
    hi: float

    def __post_init__(self):
        if not self.bin_width > 0 or not self.hi >= self.lo:
            raise ValueError("grid needs bin_width > 0 and hi >= lo")


@dataclass(frozen=True)
class EstimateReport:
    estimate: float
    estimator_id: str
    grid_bins_used: int = 0
    log_normalizer: float = float("nan")
    step: float | None = None  # Riemann spacing; None when integrated exactly


# -- conventional filters -------------------------------------------------

def _xi(x: np.ndarray, name: str, axis=-1):
    if name == "min":
        return np.min(x, axis=axis)
    if name == "max":
        return np.max(x, axis=axis)
    if name == "mean":
        return np.mean(x, axis=axis)
    if name == "median":
        # numpy averages the two central order statistics for even sizes
        return np.median(x, axis=axis)
    raise ValueError(f"unknown filter {name!r}; expected one of {FILTERS}")


def conventional(obs: ObservationSet, filter: str) -> float:
    """``(xi(y1) - xi(y2)) / 2`` on the current block; past blocks are ignored."""
    y1, y2 = obs.current
    if y1.size == 0 or y2.size == 0:
        raise ValueError("empty observation vectors")
    return float((_xi(y1, filter) - _xi(y2, filter)) / 2)


@dataclass(frozen=True)
class BiasEntry:
    mu: float
    se: float


class BiasTable(dict):
    """Maps ``(filter, P)`` to a :class:`BiasEntry` (us)."""

    def mu(self, filter: str, P: int) -> float:
        try:
            return self[(filter, P)].mu
        except KeyError:
            raise KeyError(f"bias table has no entry for filter={filter} P={P}") from None

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("estimator,P,mu_us,se_us\n")
            for (name, P), e in sorted(self.items()):
                fh.write(f"{name},{P},{float(e.mu)!r},{float(e.se)!r}\n")

    @classmethod
    def read_csv(cls, path) -> "BiasTable":
        table = cls()
        with open(Path(path), newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                try:
                    table[(row["estimator"], int(row["P"]))] = BiasEntry(
                        float(row["mu_us"]), float(row["se_us"]))
                except (KeyError, ValueError) as exc:
                    raise ValueError(f"{path}: malformed bias row {row!r} ({exc})") from None
        return table


def bias_of(filter: str, P: int, f1: EmpiricalPdf, f2: EmpiricalPdf, num_trials: int,
            rng: np.random.Generator, chunk: int = 100_000) -> BiasEntry:
    """Monte Carlo bias ``mu = (E xi(w1) - E xi(w2)) / 2`` with its standard error."""
    if P < 1:
        raise ValueError("P must be >= 1")
    s1 = s2 = q1 = q2 = 0.0
    done = 0
    while done < num_trials:
        n = min(chunk, num_trials - done)
        x1 = _xi(sample(f1, rng, (n, P)), filter)
        x2 = _xi(sample(f2, rng, (n, P)), filter)
        s1 += x1.sum(); q1 += np.dot(x1, x1)
        s2 += x2.sum(); q2 += np.dot(x2, x2)
        done += n
    m1, m2 = s1 / num_trials, s2 / num_trials
    denom = max(num_trials - 1, 1)
    v1 = max(q1 - num_trials * m1 * m1, 0.0) / denom
    v2 = max(q2 - num_trials * m2 * m2, 0.0) / denom
    return BiasEntry(float(0.5 * (m1 - m2)), float(0.5 * math.sqrt((v1 + v2) / num_trials)))


def bias_table(filters, P_values, f1, f2, num_trials, rng) -> BiasTable:
    table = BiasTable()
    for name in filters:
        for P in P_values:
            table[(name, P)] = bias_of(name, P, f1, f2, num_trials, rng)
    return table


# -- lattice likelihoods ----------------------------------------------------

def _index_range(u: np.ndarray, sign: int, step: float, pdf: EmpiricalPdf):
    """Lattice indices k whose residuals ``u + sign*k*step`` can all hit the support.

    One extra index on each side absorbs boundary round-off; those nodes get
    zero weight if infeasible.
    """
    lo, hi = pdf.support
    if sign > 0:
        k0 = (lo - u.min()) / step
        k1 = (hi - u.max()) / step
    else:
        k0 = (u.max() - hi) / step
        k1 = (u.min() - lo) / step
    return math.ceil(k0 - 1e-9) - 1, math.floor(k1 + 1e-9) + 1


def _feasible(u: np.ndarray, sign: int, pdf: EmpiricalPdf) -> tuple[float, float]:
    """Continuous range of ``t`` keeping every ``u + sign*t`` inside the support hull."""
    lo, hi = pdf.support
    if sign > 0:
        return lo - float(u.min()), hi - float(u.max())
    return float(u.max()) - hi, float(u.min()) - lo


def _loglik(u: np.ndarray, sign: int, step: float, pdf: EmpiricalPdf, k: np.ndarray) -> np.ndarray:
    """``sum_i ln f(u_i + sign*k*step)`` for every lattice index in ``k``."""
    logd = np.log(pdf.densities) if pdf.densities.min() > 0 else _safe_log(pdf.densities)
    sub = round(pdf.bin_width / step)
    if k.size and sub >= 1 and pdf.bin_width / sub == step:
        if sub == 1:
            fast = _loglik_shifted(u, sign, pdf, logd, k)
        else:
            fast = _loglik_subdivided(u, sign, pdf, logd, k, sub)
        if fast is not None:
            return fast
    out = np.empty(k.size)
    rows = max(1, _CHUNK // max(u.size, 1))
    for s in range(0, k.size, rows):
        kk = k[s:s + rows]
        r = u[None, :] + (sign * step) * kk[:, None].astype(float)
        idx = np.floor((r - pdf.origin) / pdf.bin_width + EDGE_SNAP).astype(np.int64)
        inside = (idx >= 0) & (idx < pdf.n_bins)
        vals = np.where(inside, logd[np.clip(idx, 0, pdf.n_bins - 1)], -np.inf)
        out[s:s + rows] = vals.sum(axis=1)
    return out


_PAD = 4


def _loglik_shifted(u, sign, pdf, logd, k):
    """Same sum when the lattice step is one bin: node ``k`` reads bin ``n_i + sign*k``.

    Each observation then contributes one contiguous slice of ``ln f``; no
    per-node floor is needed.  Returns None if an index would leave the
    padded table (never for ranges from ``_index_range``).
    """
    n = np.floor((u - pdf.origin) / pdf.bin_width + EDGE_SNAP).astype(np.int64) + sign * int(k[0])
    N = k.size
    if sign > 0:
        first, last = n, n + (N - 1)
    else:
        first, last = n - (N - 1), n
    if first.min() < -_PAD or last.max() >= pdf.n_bins + _PAD:
        return None
    table = np.concatenate((np.full(_PAD, -np.inf), logd, np.full(_PAD, -np.inf)))
    out = np.zeros(N)
    for a in (first + _PAD).tolist():
        seg = table[a:a + N]
        out += seg if sign > 0 else seg[::-1]
    return out


def _loglik_subdivided(u, sign, pdf, logd, k, sub):
    """Same sum when the step is ``bin_width / sub``.

    With ``q_i = floor(sub * z_i)`` for the snapped bin coordinate ``z_i`` of
    observation ``i``, node ``k`` reads bin ``floor((q_i + sign*k) / sub)``:
    a slice of ``ln f`` with every bin repeated ``sub`` times.
    """
    z = (u - pdf.origin) / pdf.bin_width + EDGE_SNAP
    q = np.floor(z * sub).astype(np.int64) + sign * int(k[0])
    N = k.size
    out = np.zeros(N)
    for qi in q.tolist():
        m0, m1 = (qi, qi + N - 1) if sign > 0 else (qi - N + 1, qi)
        b0, b1 = m0 // sub, m1 // sub
        lo, hi = max(b0, 0), min(b1, pdf.n_bins - 1)
        if hi < lo:
            return None
        seg = np.repeat(logd[lo:hi + 1], sub)
        if lo > b0 or hi < b1:
            seg = np.concatenate((np.full((lo - b0) * sub, -np.inf), seg,
                                  np.full((b1 - hi) * sub, -np.inf)))
        seg = seg[m0 - b0 * sub:m0 - b0 * sub + N]
        out += seg if sign > 0 else seg[::-1]
    return out


def _safe_log(d):
    with np.errstate(divide="ignore"):
        return np.log(d)


@dataclass
class _Profile:
    """Non-negative weights ``exp(logw - offset)`` on lattice indices ``k0..``."""

    k0: int
    w: np.ndarray
    offset: float

    @property
    def k(self) -> np.ndarray:
        return self.k0 + np.arange(self.w.size)


def _profile(terms, step: float, what: str, k_range=None) -> _Profile:
    """Joint lattice profile of several ``(u, sign, pdf)`` likelihood factors."""
    k0, k1 = (-math.inf, math.inf) if k_range is None else k_range
    t0, t1 = -math.inf, math.inf
    for u, sign, pdf in terms:
        a, b = _index_range(u, sign, step, pdf)
        k0, k1 = max(k0, a), min(k1, b)
        lo, hi = _feasible(u, sign, pdf)
        t0, t1 = max(t0, lo), min(t1, hi)
    if t1 < t0 or k1 < k0:
        cls = InconsistentObservations if t1 < t0 else EmptyPosterior
        raise cls(f"empty posterior: {what} observations are inconsistent with the pdf support")
    if k1 - k0 > MAX_NODES:
        raise InconsistentObservations(f"empty posterior: {what} feasible set has no mass on any "
                                       f"grid up to {MAX_NODES} nodes")
    k = np.arange(k0, k1 + 1)
    logw = np.zeros(k.size)
    for u, sign, pdf in terms:
        logw += _loglik(u, sign, step, pdf, k)
    finite = np.flatnonzero(np.isfinite(logw))
    if finite.size == 0:
        raise EmptyPosterior(f"empty posterior: {what} observations are inconsistent with the pdf support")
    logw = logw[finite[0]:finite[-1] + 1]
    m = logw.max()
    return _Profile(int(k[finite[0]]), np.exp(logw - m), float(m))


def _mean_index(p: _Profile) -> tuple[float, float]:
    total = p.w.sum()
    return p.k0 + float(np.dot(np.arange(p.w.size), p.w) / total), total


def _default_step(*pdfs, step=None) -> float:
    if step is not None:
        if not step > 0:
            raise ValueError("integration step must be positive")
        return float(step)
    return float(min(p.bin_width for p in pdfs))


# -- minimax estimators -----------------------------------------------------

# halvings are cheap: a posterior that needs them is a few nodes wide
MAX_REFINE = 40
# adaptive M-model lattice: nodes per posterior standard deviation of delta,
# and at least this many across the narrowest single-block factor (a factor
# the lattice steps over would be lost)
NODES_PER_SPREAD = 4
NODES_PER_FACTOR = 2
MAX_SUBDIVISION = 4096
FINE_NODE_BUDGET = 1 << 21
# cells whose joint marginal is below exp(-PRUNE_LOG) of the peak are skipped;
# the marginals come from FFTs, so this stays well above round-off
PRUNE_LOG = 30.0
PRUNE_MARGIN = 2


def _refining(fn, *args, step):
    """Evaluate ``fn`` on the lattice, halving the step while it finds no mass.

    A feasible set thinner than one step (several observations in isolated
    bins of a gappy empirical pdf) can fall between lattice nodes even though
    its integral is positive.  Truly inconsistent data stays empty.
    """
    for _ in range(MAX_REFINE):
        try:
            return fn(*args, step)
        except InconsistentObservations:
            raise
        except EmptyPosterior:
            step /= 2
    return fn(*args, step)


def _common_width(f1: EmpiricalPdf, f2: EmpiricalPdf) -> float:
    if not math.isclose(f1.bin_width, f2.bin_width, rel_tol=1e-12, abs_tol=0.0):
        raise PdfError(f"bin widths differ: f1 has {f1.bin_width!r} us, f2 has {f2.bin_width!r} us")
    return f1.bin_width


# hulls narrower than this fraction of a bin count as a single point
DEGENERATE_TOL = 1e-9


def _exact(terms, what: str, x_range=None) -> CellProfile:
    dw = terms[0][2].bin_width
    try:
        return cell_profile(terms, dw, x_range)
    except NoMass:
        # supports that meet in a single point (point-mass pdfs) pin x down
        t0, t1 = feasible_hull(terms)
        if x_range is None and abs(t1 - t0) <= DEGENERATE_TOL * dw:
            x = 0.5 * (t0 + t1)
            k0 = math.floor(x / dw)
            return CellProfile(k0, dw, np.ones(1), np.array([x / dw - k0]), np.ones(1), -math.inf)
        raise InconsistentObservations(
            f"empty posterior: {what} observations are inconsistent with the pdf support") from None


def pitman_scalar(values, f: EmpiricalPdf, step: float | None = None) -> EstimateReport:
    """Pitman location estimate ``int t prod f(v_i - t) dt / int prod f(v_i - t) dt``.

    Integrated exactly over the piecewise-constant likelihood unless a
    Riemann ``step`` is given.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size < 1:
        raise ValueError("need at least one value")
    if step is not None:
        return _refining(_pitman_scalar, v, f, step=_default_step(f, step=step))
    anchor = v[0] - f.origin
    prof = _exact([(v - anchor, -1, f)], "scalar location")
    return EstimateReport(float(anchor + prof.mean_x()), "pitman", prof.mass.size,
                          prof.log_integral())


def _pitman_scalar(v, f, step):
    anchor = v[0] - f.origin - step / 2
    prof = _profile([(v - anchor, +1, f)], step, "scalar location")
    kbar, total = _mean_index(prof)
    return EstimateReport(float(anchor - step * kbar), "pitman", int(prof.w.size),
                          math.log(total * step) + prof.offset, step)


def minimax_k(obs: ObservationSet, f1: EmpiricalPdf, f2: EmpiricalPdf,
              step: float | None = None) -> EstimateReport:
    """Minimax offset when both fixed delays are known (one unknown, ``delta``)."""
    if obs.kind.variant != "K":
        raise ValueError("minimax_k needs K-model observations")
    _common_width(f1, f2)
    if step is not None:
        return _refining(_minimax_k, obs, f1, f2, step=_default_step(f1, f2, step=step))
    y1, y2 = obs.current
    base = (y1[0] - y2[0]) / 2 - (f1.origin - f2.origin) / 2
    prof = _exact([(y1 - base, -1, f1), (y2 + base, +1, f2)], "K-model")
    return EstimateReport(float(base + prof.mean_x()), "minimax", prof.mass.size,
                          prof.log_integral())


def _minimax_k(obs, f1, f2, step):
    y1, y2 = obs.current
    base = (y1[0] - y2[0]) / 2 - (f1.origin - f2.origin) / 2
    prof = _profile([(y1 - base, -1, f1), (y2 + base, +1, f2)], step, "K-model")
    kbar, total = _mean_index(prof)
    return EstimateReport(float(base + step * kbar), "minimax", int(prof.w.size),
                          math.log(total * step) + prof.offset, step)


def minimax_s(obs: ObservationSet, f1: EmpiricalPdf, f2: EmpiricalPdf,
              step: float | None = None) -> EstimateReport:
    """Minimax offset under known asymmetry: half the difference of two Pitman estimates."""
    if obs.kind.variant != "S":
        raise ValueError("minimax_s needs S-model observations")
    _common_width(f1, f2)
    y1, y2 = obs.current
    r1 = pitman_scalar(y1, f1, step)
    r2 = pitman_scalar(y2, f2, step)
    return EstimateReport(float(0.5 * (r1.estimate - r2.estimate)), "minimax",
                          r1.grid_bins_used + r2.grid_bins_used,
                          r1.log_normalizer + r2.log_normalizer, step)


def _conv(a: np.ndarray, b: np.ndarray, exact_zeros: bool = True) -> np.ndarray:
    if a.size * b.size <= _FFT_MIN:
        return np.convolve(a, b)
    c = signal.fftconvolve(a, b)
    if not exact_zeros:
        return np.clip(c, 0.0, None)
    # FFT round-off leaves ~1e-16 noise; zero what the exact sum cannot reach
    support = signal.fftconvolve((a > 0).astype(float), (b > 0).astype(float)) > 0.5
    return np.where(support, np.clip(c, 0.0, None), 0.0)


def _corr(w: np.ndarray, w_lo: int, g: np.ndarray, g_lo: int, out_lo: int, n: int) -> np.ndarray:
    """``r[a] = sum_b g[b] w[a + b]`` for ``a = out_lo .. out_lo + n - 1``."""
    full = _conv(w, g[::-1], exact_zeros=False)          # index t <-> a = w_lo + t - (g_lo + len(g) - 1)
    a0 = w_lo - (g_lo + g.size - 1)
    out = np.zeros(n)
    lo, hi = max(out_lo, a0), min(out_lo + n, a0 + full.size)
    if hi > lo:
        out[lo - out_lo:hi - out_lo] = full[lo - a0:hi - a0]
    return out


@dataclass
class _MAnchors:
    A1: float
    A2: float
    C1: list

    def C2(self, j):
        return self.A1 + self.A2 - self.C1[j]


def _m_anchors(obs, f1, f2, step) -> _MAnchors:
    y1, y2 = obs.y1, obs.y2
    return _MAnchors(y1[0, 0] - f1.origin - step / 2, y2[0, 0] - f2.origin - step / 2,
                     [None] + [y1[j, 0] - f1.origin - step / 2 for j in range(1, obs.kind.n_blocks)])


def _m_combine(g1: _Profile, g2: _Profile, past, an: _MAnchors, step: float, n_blocks: int,
               marginals: bool = False):
    """Posterior mean of delta from lattice profiles of every block and direction.

    ``past`` lists ``(h1, h2)`` per past block.  With ``marginals`` the
    per-profile posterior marginals (log scale, peak 0) are returned as well.
    """
    cur0 = _conv(g1.w, g2.w)
    cur1 = _conv(np.arange(g1.w.size) * g1.w, g2.w)
    base = g1.k0 + g2.k0
    s_lo, s_hi = base, base + cur0.size - 1
    omegas = []
    for h1, h2 in past:
        om = _conv(h1.w, h2.w)
        lo = h1.k0 + h2.k0
        omegas.append((lo, om, h1.offset + h2.offset))
        s_lo, s_hi = max(s_lo, lo), min(s_hi, lo + om.size - 1)
    if s_hi < s_lo:
        raise EmptyPosterior("empty posterior: past blocks admit no common fixed delay")

    n = s_hi - s_lo + 1
    log_c0 = _safe_log(cur0[s_lo - base:s_lo - base + n])
    log_om = [_safe_log(om[s_lo - lo:s_lo - lo + n]) for lo, om, _ in omegas]
    log_w = log_c0 + sum(log_om) if log_om else log_c0
    if not np.isfinite(log_w).any():
        raise EmptyPosterior("empty posterior: past blocks admit no common fixed delay")
    m = log_w.max()
    weight = np.exp(log_w - m)           # Omega(d) * current-block mass at each s
    ratio = np.zeros(n)
    c0 = cur0[s_lo - base:s_lo - base + n]
    c1 = cur1[s_lo - base:s_lo - base + n]
    nz = c0 > 0
    ratio[nz] = c1[nz] / c0[nz]          # mean local a' given s
    sp = np.arange(n) + (s_lo - base)    # s - (a0 + b0)
    # delta = (A1 - A2)/2 - (step/2) * (2a - s), with a = a0 + a', s = a0 + b0 + s'
    two_a_minus_s = (g1.k0 - g2.k0) + 2 * ratio - sp
    total = weight.sum()
    estimate = (an.A1 - an.A2) / 2 - (step / 2) * float(np.dot(weight, two_a_minus_s) / total)
    offsets = g1.offset + g2.offset + sum(o for _, _, o in omegas)
    log_norm = math.log(total) + m + offsets + (n_blocks + 1) * math.log(step) - math.log(2.0)
    bins = int(g1.w.size + g2.w.size + sum(om.size for _, om, _ in omegas))
    report = EstimateReport(float(estimate), "minimax", bins, float(log_norm), step)
    if not marginals:
        return report

    # marginal of each profile index under the joint posterior
    if log_om:
        lw = sum(log_om)
        W = np.exp(lw - lw[np.isfinite(lw)].max())
    else:
        W = np.ones(n)
    # posterior spread of delta: within-s variance of a plus spread of E[a|s]
    c2 = _conv(np.arange(g1.w.size) ** 2 * g1.w, g2.w, exact_zeros=False)[s_lo - base:s_lo - base + n]
    var_a = np.zeros(n)
    var_a[nz] = np.maximum(c2[nz] / c0[nz] - ratio[nz] ** 2, 0.0)
    mean_t = float(np.dot(weight, two_a_minus_s) / total)
    var_t = float(np.dot(weight, 4 * var_a + (two_a_minus_s - mean_t) ** 2) / total)
    spread = (step / 2) * math.sqrt(var_t + 1.0 / 3.0)   # cell facet: 2a - s spans +-1 within cells
    out = {"g1": g1.w * _corr(W, s_lo, g2.w, g2.k0, g1.k0, g1.w.size),
           "g2": g2.w * _corr(W, s_lo, g1.w, g1.k0, g2.k0, g2.w.size)}
    c0n = c0 / c0.max()
    for j, (h1, h2) in enumerate(past, start=1):
        others = [x for i, x in enumerate(log_om, start=1) if i != j]
        rest = sum(others) if others else np.zeros(n)
        finite = np.isfinite(rest)
        rest = np.where(finite, np.exp(rest - (rest[finite].max() if finite.any() else 0.0)), 0.0) * c0n
        out[f"h1_{j}"] = h1.w * _corr(rest, s_lo, h2.w, h2.k0, h1.k0, h1.w.size)
        out[f"h2_{j}"] = h2.w * _corr(rest, s_lo, h1.w, h1.k0, h2.k0, h2.w.size)
    return report, out, spread


def _kept_range(weights: np.ndarray, k0: int):
    """Index range whose marginal is within exp(-PRUNE_LOG) of the peak, plus a margin."""
    peak = weights.max()
    if not peak > 0:
        return None
    keep = np.flatnonzero(weights >= peak * math.exp(-PRUNE_LOG))
    return k0 + int(keep[0]) - PRUNE_MARGIN, k0 + int(keep[-1]) + PRUNE_MARGIN


def _as_profile(p: CellProfile) -> _Profile:
    return _Profile(p.k0, p.mass.copy(), p.offset)


def minimax_m(obs: ObservationSet, f1: EmpiricalPdf, f2: EmpiricalPdf,
              step: float | None = None) -> EstimateReport:
    """Minimax offset using ``B`` past blocks that share the fixed delay ``d``.

    With ``theta1 = d + delta`` and ``theta2 = d - delta`` on lattices indexed
    by ``a`` and ``b``, the lattice value of ``d`` depends only on
    ``s = a + b``.  Each past block then contributes
    ``Omega_j[s] = sum_c G1j[c] G2j[s - c]`` (its integral over
    ``delta_j``) and the current block ``sum_a G1[a] G2[s - a]``: all the
    sums over ``d``, ``delta`` and the ``delta_j`` become convolutions.

    Without an explicit ``step`` the lattice spacing adapts to the data.  A
    coarse pass built from the exact cell integrals gives the posterior
    spread of delta and the width of the narrowest single-block factor; the
    spacing is halved below the bin width until it resolves both (see
    ``NODES_PER_SPREAD`` and ``NODES_PER_FACTOR``).  Refined lattices only
    cover the cells where the coarse pass finds non-negligible joint mass.
    """
    if obs.kind.variant != "M":
        raise ValueError("minimax_m needs M-model observations")
    dw = _common_width(f1, f2)
    if step is not None:
        return _refining(_minimax_m, obs, f1, f2, step=_default_step(f1, f2, step=step))
    try:
        marg, width, spread = _coarse_m(obs, f1, f2, dw)
    except InconsistentObservations:
        raise
    except EmptyPosterior:
        # a posterior thinner than a cell can miss the coarse lattice
        return _refining(_minimax_m, obs, f1, f2, step=dw / 2)
    target = min(spread / NODES_PER_SPREAD, width / NODES_PER_FACTOR)
    sub = 1
    while sub < MAX_SUBDIVISION and dw / sub > target:
        sub *= 2
    if sub == 1:
        return _refining(_minimax_m, obs, f1, f2, step=dw)
    ranges = {name: _kept_range(w, k0) for name, (k0, w) in marg.items()}
    cells = sum(b - a + 1 for a, b in (r for r in ranges.values() if r))
    while sub > 1 and cells * sub > FINE_NODE_BUDGET:
        sub //= 2
    return _refining(_minimax_m_fine, obs, f1, f2, ranges, dw, step=dw / sub)


def _coarse_m(obs, f1, f2, dw):
    """Cell-integral (exact mass) version of the M-model sum, with marginals."""
    k = obs.kind
    an = _m_anchors(obs, f1, f2, dw)
    half = dw / 2
    profs = {"g1": _exact([(obs.y1[0] - an.A1 - half, +1, f1)], "current forward"),
             "g2": _exact([(obs.y2[0] - an.A2 - half, +1, f2)], "current reverse")}
    for j in range(1, k.n_blocks):
        profs[f"h1_{j}"] = _exact([(obs.y1[j] - an.C1[j] - half, +1, f1)], f"past block {j} forward")
        profs[f"h2_{j}"] = _exact([(obs.y2[j] - an.C2(j) - half, +1, f2)], f"past block {j} reverse")
    widths = [p.effective_width() for p in profs.values()]
    lat = {name: _as_profile(p) for name, p in profs.items()}
    past = [(lat[f"h1_{j}"], lat[f"h2_{j}"]) for j in range(1, k.n_blocks)]
    report, marg, spread = _m_combine(lat["g1"], lat["g2"], past, an, dw, k.n_blocks, marginals=True)
    return {name: (lat[name].k0, v) for name, v in marg.items()}, min(widths), spread


def _minimax_m_fine(obs, f1, f2, ranges, dw, step):
    """Point lattice of spacing ``step`` restricted to the kept coarse cells."""
    k = obs.kind
    an, coarse = _m_anchors(obs, f1, f2, step), _m_anchors(obs, f1, f2, dw)

    def prof(name, values, A, A_coarse, pdf, what):
        r = ranges.get(name)
        k_range = None
        if r is not None:
            shift = A - A_coarse
            k_range = (math.floor((shift + r[0] * dw - dw / 2) / step),
                       math.ceil((shift + r[1] * dw + dw / 2) / step))
        return _profile([(values - A, +1, pdf)], step, what, k_range)

    g1 = prof("g1", obs.y1[0], an.A1, coarse.A1, f1, "current forward")
    g2 = prof("g2", obs.y2[0], an.A2, coarse.A2, f2, "current reverse")
    past = [(prof(f"h1_{j}", obs.y1[j], an.C1[j], coarse.C1[j], f1, f"past block {j} forward"),
             prof(f"h2_{j}", obs.y2[j], an.C2(j), coarse.C2(j), f2, f"past block {j} reverse"))
            for j in range(1, k.n_blocks)]
    return _m_combine(g1, g2, past, an, step, k.n_blocks)


def _minimax_m(obs, f1, f2, step):
    k = obs.kind
    an = _m_anchors(obs, f1, f2, step)
    g1 = _profile([(obs.y1[0] - an.A1, +1, f1)], step, "current forward")
    g2 = _profile([(obs.y2[0] - an.A2, +1, f2)], step, "current reverse")
    past = [(_profile([(obs.y1[j] - an.C1[j], +1, f1)], step, f"past block {j} forward"),
             _profile([(obs.y2[j] - an.C2(j), +1, f2)], step, f"past block {j} reverse"))
            for j in range(1, k.n_blocks)]
    return _m_combine(g1, g2, past, an, step, k.n_blocks)


def minimax(obs: ObservationSet, f1: EmpiricalPdf, f2: EmpiricalPdf,
            step: float | None = None) -> EstimateReport:
    fn = {"K": minimax_k, "S": minimax_s, "M": minimax_m}[obs.kind.variant]
    return fn(obs, f1, f2, step)


def estimate(obs: ObservationSet, f1: EmpiricalPdf, f2: EmpiricalPdf, estimator: str = "minimax",
             step: float | None = None, bias: BiasTable | None = None) -> EstimateReport:
    """Dispatch to the minimax rule or a (bias-compensated) conventional filter."""
    if estimator == "minimax":
        return minimax(obs, f1, f2, step)
    if estimator not in FILTERS:
        raise ValueError(f"unknown estimator {estimator!r}")
    value = conventional(obs, estimator)
    if bias is not None:
        value -= bias.mu(estimator, obs.kind.P)
    return EstimateReport(value, estimator)
