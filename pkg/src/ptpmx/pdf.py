"""Binned finite-support delay densities.

All times are in microseconds, densities in 1/us.  A pdf is piecewise
constant on a uniform grid of bins ``[origin + k*bin_width,
origin + (k+1)*bin_width)``; the first and last bins carry nonzero density.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import signal

NORM_TOL = 1e-9
# bin lookups snap residuals lying within this fraction of a bin onto the
# left-closed edge, so that exact boundary hits survive float round-off
EDGE_SNAP = 1e-9

_FFT_THRESHOLD = 4_000_000


class PdfError(ValueError):
    pass


@dataclass(frozen=True)
class Histogram:
    """Raw sample counts before normalization."""

    bin_width: float
    origin: float
    counts: np.ndarray
    total: int

    def __post_init__(self):
        if int(np.sum(self.counts)) != self.total:
            raise PdfError("histogram counts do not sum to total")
        if np.any(self.counts < 0):
            raise PdfError("negative histogram count")

    def to_pdf(self) -> "EmpiricalPdf":
        return EmpiricalPdf.from_masses(self.bin_width, self.origin, self.counts / self.total)


@dataclass(frozen=True, eq=False)
class EmpiricalPdf:
    bin_width: float
    origin: float
    densities: np.ndarray

    def __post_init__(self):
        d = np.array(self.densities, dtype=np.float64)
        d.setflags(write=False)
        object.__setattr__(self, "densities", d)
        problems = self.problems()
        if problems:
            raise PdfError("; ".join(problems))

    @classmethod
    def unchecked(cls, bin_width, origin, densities) -> "EmpiricalPdf":
        """Build without validation (negative controls only)."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "bin_width", float(bin_width))
        object.__setattr__(obj, "origin", float(origin))
        object.__setattr__(obj, "densities", np.array(densities, dtype=np.float64))
        return obj

    @classmethod
    def from_masses(cls, bin_width: float, origin: float, masses) -> "EmpiricalPdf":
        """Normalize bin masses, trim zero bins at both ends."""
        m = np.asarray(masses, dtype=np.float64)
        nz = np.flatnonzero(m > 0)
        if nz.size == 0:
            raise PdfError("no probability mass")
        first, last = nz[0], nz[-1]
        m = m[first:last + 1]
        m = m / m.sum()
        return cls(float(bin_width), float(origin + first * bin_width), m / bin_width)

    def problems(self) -> list[str]:
        """Invariant violations, empty when the pdf is valid."""
        out = []
        d = self.densities
        if not self.bin_width > 0:
            out.append(f"bin width must be positive, got {self.bin_width}")
        if not self.origin >= 0:
            out.append(f"origin must be >= 0, got {self.origin}")
        if d.ndim != 1 or d.size == 0:
            out.append("densities must be a non-empty 1-D sequence")
            return out
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            out.append("densities must be finite and non-negative")
        elif d[0] <= 0 or d[-1] <= 0:
            out.append("support not trimmed: first and last densities must be > 0")
        total = self.bin_width * float(np.sum(d))
        if abs(total - 1.0) > NORM_TOL:
            out.append(f"not normalized: bin_width * sum(densities) = {total!r}")
        return out

    @property
    def n_bins(self) -> int:
        return int(self.densities.size)

    @property
    def support(self) -> tuple[float, float]:
        return self.origin, self.origin + self.n_bins * self.bin_width

    @property
    def masses(self) -> np.ndarray:
        return self.densities * self.bin_width

    @property
    def edges(self) -> np.ndarray:
        return self.origin + self.bin_width * np.arange(self.n_bins + 1)

    @property
    def centers(self) -> np.ndarray:
        return self.origin + self.bin_width * (np.arange(self.n_bins) + 0.5)

    def mean(self) -> float:
        return float(np.dot(self.masses, self.centers))

    def var(self) -> float:
        # piecewise-constant density adds bin_width**2 / 12 within each bin
        m = self.mean()
        return float(np.dot(self.masses, (self.centers - m) ** 2)) + self.bin_width ** 2 / 12

    def bin_index(self, x) -> np.ndarray:
        """Integer bin index of each x; may fall outside ``[0, n_bins)``."""
        t = (np.asarray(x, dtype=np.float64) - self.origin) / self.bin_width
        return np.floor(t + EDGE_SNAP).astype(np.int64)

    def log_density(self, x):
        """ln f(x), or -inf outside the support.  Accepts scalars or arrays."""
        idx = self.bin_index(x)
        inside = (idx >= 0) & (idx < self.n_bins)
        logd = np.full(idx.shape, -np.inf)
        with np.errstate(divide="ignore"):
            logd[inside] = np.log(self.densities[idx[inside]])
        if np.ndim(x) == 0:
            return float(logd)
        return logd

    def cdf(self, x):
        """Cumulative distribution of the piecewise-constant density."""
        x = np.asarray(x, dtype=np.float64)
        cum = np.concatenate(([0.0], np.cumsum(self.masses)))
        return np.interp(x, self.edges, cum, left=0.0, right=1.0)

    def shifted(self, offset: float) -> "EmpiricalPdf":
        return EmpiricalPdf(self.bin_width, self.origin + offset, self.densities)

    def __eq__(self, other):
        if not isinstance(other, EmpiricalPdf):
            return NotImplemented
        return (self.bin_width == other.bin_width and self.origin == other.origin
                and np.array_equal(self.densities, other.densities))

    __hash__ = None


def point_mass(at: float, bin_width: float) -> EmpiricalPdf:
    """Single-bin pdf occupying ``[at, at + bin_width)``."""
    return EmpiricalPdf(bin_width, at, [1.0 / bin_width])


def uniform(lo: float, hi: float, bin_width: float) -> EmpiricalPdf:
    n = int(round((hi - lo) / bin_width))
    if n < 1 or not math.isclose(n * bin_width, hi - lo, rel_tol=1e-9):
        raise PdfError("uniform range must be a whole number of bins")
    return EmpiricalPdf(bin_width, lo, np.full(n, 1.0 / (n * bin_width)))


def histogram(samples: Iterable[float], bin_width: float) -> Histogram:
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise PdfError("no samples")
    if not bin_width > 0:
        raise PdfError(f"bin width must be positive, got {bin_width}")
    if np.any(x < 0):
        raise PdfError("negative delay")
    origin = math.floor(float(x.min()) / bin_width) * bin_width
    idx = np.floor((x - origin) / bin_width).astype(np.int64)
    idx = np.maximum(idx, 0)
    counts = np.bincount(idx)
    return Histogram(bin_width, origin, counts, int(x.size))


def from_samples(samples: Iterable[float], bin_width: float) -> EmpiricalPdf:
    """Histogram delay samples into a normalized, trimmed pdf."""
    return histogram(samples, bin_width).to_pdf()


def _convolve_masses(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.size * b.size <= _FFT_THRESHOLD:
        return np.convolve(a, b)
    c = signal.fftconvolve(a, b)
    # restore exact zeros outside the structural support of the sum
    structure = signal.fftconvolve((a > 0).astype(float), (b > 0).astype(float))
    c[structure < 0.5] = 0.0
    return np.clip(c, 0.0, None)


def convolve(a: EmpiricalPdf, b: EmpiricalPdf) -> EmpiricalPdf:
    """Pdf of the sum of independent draws from ``a`` and ``b``.

    Bin ``i`` of ``a`` and bin ``j`` of ``b`` contribute to bin ``i + j`` of
    the result, whose origin is ``a.origin + b.origin``.  The result's
    bin-centre mean is therefore ``mean(a) + mean(b) - bin_width / 2``.
    """
    if not math.isclose(a.bin_width, b.bin_width, rel_tol=1e-12, abs_tol=0.0):
        raise PdfError(f"bin widths differ: {a.bin_width!r} vs {b.bin_width!r}")
    c = _convolve_masses(a.masses, b.masses)
    return EmpiricalPdf.from_masses(a.bin_width, a.origin + b.origin, c)


def self_convolve(pdf: EmpiricalPdf, n: int) -> EmpiricalPdf:
    """n-fold convolution of ``pdf`` with itself (n >= 1)."""
    if n < 1:
        raise PdfError("n must be >= 1")
    result, base = None, pdf
    while n:
        if n & 1:
            result = base if result is None else convolve(result, base)
        n >>= 1
        if n:
            base = convolve(base, base)
    return result


def sample(pdf: EmpiricalPdf, rng: np.random.Generator, size=None):
    """Draw delays: a bin chosen by mass, then a uniform offset inside it."""
    cum = np.cumsum(pdf.masses)
    cum[-1] = 1.0
    u = rng.random(size)
    k = np.searchsorted(cum, u, side="right")
    k = np.minimum(k, pdf.n_bins - 1)
    jitter = rng.random(size)
    return pdf.origin + (k + jitter) * pdf.bin_width


def rebin(pdf: EmpiricalPdf, new_bin_width: float) -> EmpiricalPdf:
    k = new_bin_width / pdf.bin_width
    ki = int(round(k))
    if ki < 1 or abs(k - ki) > 1e-9 * k:
        raise PdfError(f"new bin width {new_bin_width!r} is not a whole multiple of {pdf.bin_width!r}")
    if ki == 1:
        return pdf
    m = pdf.masses
    m = np.concatenate((m, np.zeros((-m.size) % ki))).reshape(-1, ki).sum(axis=1)
    return EmpiricalPdf.from_masses(new_bin_width, pdf.origin, m)


def ks_distance(a: Sequence[float], b: Sequence[float]) -> float:
    """Two-sample Kolmogorov-Smirnov statistic."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    grid = np.concatenate((a, b))
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def write_pdf_csv(pdf: EmpiricalPdf, path) -> None:
    """Write the pdf as ``bin_width_us``/``origin_us`` headers plus densities."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"bin_width_us,{pdf.bin_width!r}\n")
        fh.write(f"origin_us,{pdf.origin!r}\n")
        for v in pdf.densities:
            fh.write(f"{float(v)!r}\n")


def read_pdf_csv(path, validate: bool = True) -> EmpiricalPdf:
    """Read a pdf CSV; ``validate=False`` keeps invalid pdfs (negative controls)."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 3:
        raise PdfError(f"{path}: expected bin_width_us, origin_us and at least one density")
    header = {}
    for key, row in zip(("bin_width_us", "origin_us"), rows[:2]):
        if len(row) != 2 or row[0].strip() != key:
            raise PdfError(f"{path}: expected header field {key}")
        try:
            header[key] = float(row[1])
        except ValueError:
            raise PdfError(f"{path}: {key} is not a number: {row[1]!r}") from None
    try:
        dens = [float(r[0]) for r in rows[2:]]
    except ValueError as exc:
        raise PdfError(f"{path}: density_per_us value is not a number ({exc})") from None
    if not validate:
        return EmpiricalPdf.unchecked(header["bin_width_us"], header["origin_us"], dens)
    try:
        return EmpiricalPdf(header["bin_width_us"], header["origin_us"], dens)
    except PdfError as exc:
        raise PdfError(f"{path}: {exc}") from None
