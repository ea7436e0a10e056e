"""Two-way exchange observation models.

Three models are supported, all times in microseconds:

* ``K`` -- fixed delays known and removed: ``y1 = delta + w1``, ``y2 = -delta + w2``.
* ``S`` -- only the delay asymmetry is known: ``y1 = d + delta + w1``,
  ``y2 = d - delta + w2``; parameters ``theta = [d + delta, d - delta]``.
* ``M`` -- as ``S`` plus ``B`` past blocks sharing ``d`` but with their own
  offsets; parameters ``theta = [d, delta, delta_1, ..., delta_B]``.

Observations are stored per block and direction: ``y1[j]``/``y2[j]`` hold the
``P`` forward/reverse differences of block ``j``, block 0 being the current
block and blocks ``1..B`` the past ones.  Stacking ``y1`` row by row and then
``y2`` gives the column vector used in the vector-location formulation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pdf import EmpiricalPdf, sample


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ModelKind:
    variant: str
    P: int
    B: int | None = None

    def __post_init__(self):
        if self.variant not in ("K", "S", "M"):
            raise ShapeError(f"model kind must be K, S or M, got {self.variant!r}")
        if self.P < 1:
            raise ShapeError("P must be >= 1")
        if self.variant == "M":
            if self.B is None or self.B < 1:
                raise ShapeError("kind M requires B >= 1 past blocks")
        elif self.B is not None:
            raise ShapeError(f"kind {self.variant} takes no past blocks")

    @property
    def n_blocks(self) -> int:
        return 1 + (self.B or 0)

    @property
    def n_params(self) -> int:
        return {"K": 1, "S": 2, "M": 2 + (self.B or 0)}[self.variant]


def kind(variant: str, P: int, B: int | None = None) -> ModelKind:
    variant = variant.upper()
    return ModelKind(variant, P, B if variant == "M" else None)


@dataclass(frozen=True)
class GroundTruth:
    delta: float = 0.0
    d: float = 0.0
    past_deltas: tuple = ()


@dataclass(frozen=True, eq=False)
class ObservationSet:
    kind: ModelKind
    y1: np.ndarray  # [block, P]
    y2: np.ndarray

    def __post_init__(self):
        y1 = np.array(self.y1, dtype=float, ndmin=2)
        y2 = np.array(self.y2, dtype=float, ndmin=2)
        shape = (self.kind.n_blocks, self.kind.P)
        if y1.shape != shape or y2.shape != shape:
            raise ShapeError(f"expected y1/y2 of shape {shape}, got {y1.shape} and {y2.shape}")
        if not (np.all(np.isfinite(y1)) and np.all(np.isfinite(y2))):
            raise ShapeError("observations must be finite")
        y1.setflags(write=False)
        y2.setflags(write=False)
        object.__setattr__(self, "y1", y1)
        object.__setattr__(self, "y2", y2)

    @property
    def current(self) -> tuple[np.ndarray, np.ndarray]:
        return self.y1[0], self.y2[0]

    def stacked(self) -> np.ndarray:
        """Column vector ``[y1 ; y2]`` with blocks concatenated per direction."""
        return np.concatenate((self.y1.ravel(), self.y2.ravel()))


def _check_truth(k: ModelKind, truth: GroundTruth):
    if k.variant == "M":
        if truth.past_deltas and len(truth.past_deltas) != k.B:
            raise ShapeError(f"M model with B={k.B} needs {k.B} past deltas, got {len(truth.past_deltas)}")
    elif truth.past_deltas:
        raise ShapeError(f"kind {k.variant} takes no past deltas")
    if k.variant == "K" and truth.d:
        raise ShapeError("K model observations are compensated: d must be 0")


def from_delays(k: ModelKind, truth: GroundTruth, w1, w2) -> ObservationSet:
    """Observations for given queuing delays ``w1``/``w2`` of shape [block, P]."""
    _check_truth(k, truth)
    w1 = np.array(w1, dtype=float, ndmin=2)
    w2 = np.array(w2, dtype=float, ndmin=2)
    past = tuple(truth.past_deltas) or (0.0,) * (k.n_blocks - 1)
    deltas = np.array((truth.delta,) + past, dtype=float)[:, None]
    d = 0.0 if k.variant == "K" else truth.d
    return ObservationSet(k, d + deltas + w1, d - deltas + w2)


def draw_delays(k: ModelKind, f1: EmpiricalPdf, f2: EmpiricalPdf, rng: np.random.Generator):
    """Queuing delays for one observation set.

    Draw order is fixed: forward then reverse delays of the current block,
    then the past blocks.  Current-block delays are thus identical across
    model kinds for the same RNG state.
    """
    P, nb = k.P, k.n_blocks
    w1 = np.empty((nb, P))
    w2 = np.empty((nb, P))
    w1[0] = sample(f1, rng, P)
    w2[0] = sample(f2, rng, P)
    if nb > 1:
        w1[1:] = sample(f1, rng, (nb - 1, P))
        w2[1:] = sample(f2, rng, (nb - 1, P))
    return w1, w2


def generate(k: ModelKind, truth: GroundTruth, f1: EmpiricalPdf, f2: EmpiricalPdf,
             rng: np.random.Generator) -> ObservationSet:
    _check_truth(k, truth)
    w1, w2 = draw_delays(k, f1, f2, rng)
    return from_delays(k, truth, w1, w2)


def _param_vector(k: ModelKind, h) -> np.ndarray:
    h = np.atleast_1d(np.asarray(h, dtype=float))
    if h.shape != (k.n_params,):
        raise ShapeError(f"kind {k.variant} needs a parameter vector of length {k.n_params}, got {h.shape}")
    return h


def shift(obs: ObservationSet, h) -> ObservationSet:
    """Return the observations moved by ``G h`` (``e h`` for K, ``A h`` for S)."""
    k = obs.kind
    h = _param_vector(k, h)
    if k.variant == "K":
        a = np.array([h[0]])
        b = -a
    elif k.variant == "S":
        a, b = np.array([h[0]]), np.array([h[1]])
    else:
        deltas = h[1:]
        a, b = h[0] + deltas, h[0] - deltas
    return ObservationSet(k, obs.y1 + a[:, None], obs.y2 + b[:, None])


def target_offset(k: ModelKind, h) -> float:
    """``c^T h``: the phase offset carried by parameter vector ``h``."""
    h = _param_vector(k, h)
    if k.variant == "K":
        return float(h[0])
    if k.variant == "S":
        return float(0.5 * h[0] - 0.5 * h[1])
    return float(h[1])


def truth_params(k: ModelKind, truth: GroundTruth) -> np.ndarray:
    """Parameter vector matching ``truth`` in the model's own coordinates."""
    if k.variant == "K":
        return np.array([truth.delta])
    if k.variant == "S":
        return np.array([truth.d + truth.delta, truth.d - truth.delta])
    past = tuple(truth.past_deltas) or (0.0,) * k.B
    return np.array((truth.d, truth.delta) + past, dtype=float)


def write_obs_csv(obs: ObservationSet, path) -> None:
    k = obs.kind
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"kind,P,B\n{k.variant},{k.P},{k.B or 0}\n")
        fh.write("block,index,direction,value_us\n")
        for j in range(k.n_blocks):
            for direction, y in ((1, obs.y1), (2, obs.y2)):
                for i in range(k.P):
                    fh.write(f"{j},{i},{direction},{float(y[j, i])!r}\n")


def read_obs_csv(path) -> ObservationSet:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 2 or [c.strip() for c in rows[0]] != ["kind", "P", "B"]:
        raise ShapeError(f"{path}: first row must be the header kind,P,B")
    try:
        variant, P, B = rows[1][0].strip(), int(rows[1][1]), int(rows[1][2])
    except (IndexError, ValueError):
        raise ShapeError(f"{path}: malformed kind,P,B row {rows[1]!r}") from None
    k = kind(variant, P, B if B else None)
    body = rows[2:]
    if body and body[0][0].strip() == "block":
        body = body[1:]
    y = np.full((2, k.n_blocks, P), np.nan)
    for r in body:
        try:
            j, i, direction, v = int(r[0]), int(r[1]), int(r[2]), float(r[3])
            y[direction - 1, j, i] = v
        except (IndexError, ValueError):
            raise ShapeError(f"{path}: malformed observation row {r!r}") from None
    if np.isnan(y).any():
        raise ShapeError(f"{path}: missing observations for kind {variant} P={P} B={B}")
    return ObservationSet(k, y[0], y[1])
