"""Slow reference computations used to cross-check the fast paths.

Nothing here is pruned, factored or log-domain.  The K and S references
integrate the piecewise-constant joint likelihood exactly, on the partition
cut by every bin edge crossing.  The M reference is a plain Riemann sum of
the full joint likelihood over every node of a wide lattice, using the node
placement rules of :mod:`ptpmx.estimators`, so agreement is exact up to
round-off.
"""

from __future__ import annotations

import numpy as np

from .obs import ObservationSet
from .pdf import EDGE_SNAP, EmpiricalPdf


def density(pdf: EmpiricalPdf, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    idx = np.floor((x - pdf.origin) / pdf.bin_width + EDGE_SNAP).astype(np.int64)
    ok = (idx >= 0) & (idx < pdf.n_bins)
    return np.where(ok, pdf.densities[np.clip(idx, 0, pdf.n_bins - 1)], 0.0)


def _span(values, pdf: EmpiricalPdf, step: float, anchor: float) -> np.ndarray:
    """Lattice indices a (theta = anchor - a*step) wide enough for any residual."""
    lo, hi = pdf.support
    t_lo = np.min(values) - hi - 2 * step
    t_hi = np.max(values) - lo + 2 * step
    a_lo = int(np.floor((anchor - t_hi) / step))
    a_hi = int(np.ceil((anchor - t_lo) / step))
    return np.arange(a_lo, a_hi + 1)


def _joint(values, pdf, theta):
    """prod_i f(values_i - theta) for an array of theta."""
    theta = np.asarray(theta, dtype=float)
    out = np.ones(theta.shape)
    for v in np.ravel(values):
        out = out * density(pdf, v - theta)
    return out


def _breakpoints(values, pdf, sign, lo, hi):
    """Parameter values where some ``f(v - sign*t)`` changes bin, clipped to [lo, hi]."""
    pts = [np.asarray([lo, hi])]
    for v in np.ravel(values):
        pts.append(sign * (v - pdf.edges))
    t = np.unique(np.clip(np.concatenate(pts), lo, hi))
    return t


def _pieces(t):
    return 0.5 * (t[1:] + t[:-1]), np.diff(t)


def brute_k(obs: ObservationSet, f1, f2) -> float:
    """Exact K-model posterior mean by splitting delta at every bin edge crossing."""
    y1, y2 = obs.current
    lo = max(np.max(y1) - f1.support[1], f2.support[0] - np.min(y2)) - 1.0
    hi = min(np.min(y1) - f1.support[0], f2.support[1] - np.max(y2)) + 1.0
    t = np.unique(np.concatenate((_breakpoints(y1, f1, 1, lo, hi), _breakpoints(y2, f2, -1, lo, hi))))
    mid, length = _pieces(t)
    L = _joint(y1, f1, mid) * _joint(y2, f2, -mid) * length
    return float(np.sum(mid * L) / np.sum(L))


def brute_s(obs: ObservationSet, f1, f2) -> float:
    """Exact 2-D integral of ``c^T theta * f(y | theta)`` over a rectangle partition.

    The joint likelihood is evaluated on every rectangle of the product of
    the two breakpoint sets; nothing is factored.
    """
    y1, y2 = obs.current
    t1 = _breakpoints(y1, f1, 1, np.max(y1) - f1.support[1] - 1, np.min(y1) - f1.support[0] + 1)
    t2 = _breakpoints(y2, f2, 1, np.max(y2) - f2.support[1] - 1, np.min(y2) - f2.support[0] + 1)
    m1, l1 = _pieces(t1)
    m2, l2 = _pieces(t2)
    T1, T2 = np.meshgrid(m1, m2, indexing="ij")
    L = np.outer(l1, l2)
    for v in y1:
        L = L * density(f1, v - T1)
    for v in y2:
        L = L * density(f2, v - T2)
    return float(np.sum(0.5 * (T1 - T2) * L) / np.sum(L))


def riemann_s(obs: ObservationSet, f1, f2, step) -> float:
    """Full 2-D Riemann sum on the lattice used by the explicit-step estimator."""
    y1, y2 = obs.current
    A1 = y1[0] - f1.origin - step / 2
    A2 = y2[0] - f2.origin - step / 2
    t1 = A1 - _span(y1, f1, step, A1) * step
    t2 = A2 - _span(y2, f2, step, A2) * step
    T1, T2 = np.meshgrid(t1, t2, indexing="ij")
    L = np.ones(T1.shape)
    for v in y1:
        L = L * density(f1, v - T1)
    for v in y2:
        L = L * density(f2, v - T2)
    return float(np.sum(0.5 * (T1 - T2) * L) / np.sum(L))


def brute_m(obs: ObservationSet, f1, f2, step) -> float:
    """Full 3-D sum over (d, delta, delta_1) for one past block."""
    if obs.kind.B != 1:
        raise ValueError("the 3-D reference handles exactly one past block")
    y1, y2 = obs.y1, obs.y2
    A1 = y1[0, 0] - f1.origin - step / 2
    A2 = y2[0, 0] - f2.origin - step / 2
    C1 = y1[1, 0] - f1.origin - step / 2
    t1 = A1 - _span(y1[0], f1, step, A1) * step
    t2 = A2 - _span(y2[0], f2, step, A2) * step
    u1 = C1 - _span(y1[1], f1, step, C1) * step
    T1, T2, U1 = np.meshgrid(t1, t2, u1, indexing="ij")
    d = (T1 + T2) / 2
    delta = (T1 - T2) / 2
    delta1 = U1 - d
    L = np.ones(T1.shape)
    for v in y1[0]:
        L = L * density(f1, v - d - delta)
    for v in y2[0]:
        L = L * density(f2, v - d + delta)
    for v in y1[1]:
        L = L * density(f1, v - d - delta1)
    for v in y2[1]:
        L = L * density(f2, v - d + delta1)
    return float(np.sum(delta * L) / np.sum(L))


def expected_min(pdf: EmpiricalPdf, P: int) -> float:
    """E[min of P draws] = origin + int (1 - F)^P, exact for the linear-in-bin cdf."""
    cum = np.concatenate(([0.0], np.cumsum(pdf.masses)))
    cum[-1] = 1.0
    s_l, s_r = 1.0 - cum[:-1], 1.0 - cum[1:]
    diff = s_l - s_r
    with np.errstate(invalid="ignore", divide="ignore"):
        per_bin = np.where(diff > 0, (s_l ** (P + 1) - s_r ** (P + 1)) / ((P + 1) * diff), s_l ** P)
    return float(pdf.origin + pdf.bin_width * per_bin.sum())


def expected_max(pdf: EmpiricalPdf, P: int) -> float:
    """E[max of P draws] = hi - int F^P."""
    cum = np.concatenate(([0.0], np.cumsum(pdf.masses)))
    cum[-1] = 1.0
    f_l, f_r = cum[:-1], cum[1:]
    diff = f_r - f_l
    with np.errstate(invalid="ignore", divide="ignore"):
        per_bin = np.where(diff > 0, (f_r ** (P + 1) - f_l ** (P + 1)) / ((P + 1) * diff), f_l ** P)
    return float(pdf.support[1] - pdf.bin_width * per_bin.sum())
