"""Queuing delays of timing probes crossing a cascade of store-and-forward switches.

Each switch output port is a single FIFO server on a link of fixed rate.
Background packets arrive as Poisson streams. *Cross* packets are injected
at every switch and leave the path at the next one; *inline* packets enter
at the first switch and follow the probes through the whole cascade.

A probe is modelled as a zero-length marker: its waiting time at a node is
the work queued ahead of it, and its own transmission time (a constant) is
left to the fixed delay.  Times are in microseconds; link rates in bit/s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .pdf import EmpiricalPdf, from_samples

US_PER_S = 1e6
DEFAULT_WARMUP_PACKETS = 100_000
DEFAULT_WARMUP_US = 1e6


class UnstableQueue(ValueError):
    pass


@dataclass(frozen=True)
class PacketSizeModel:
    """Distribution of background packet sizes in bytes.

    Discrete variants carry ``sizes``/``probs``; ``UniformInline`` carries a
    continuous ``(lo, hi)`` range.
    """

    variant: str
    sizes: tuple = ()
    probs: tuple = ()
    lo: float = 0.0
    hi: float = 0.0

    def __post_init__(self):
        if self.variant == "UniformInline" or (self.variant == "Custom" and not self.sizes):
            if not 0 < self.lo <= self.hi:
                raise ValueError("uniform packet sizes need 0 < lo <= hi")
            return
        if len(self.sizes) != len(self.probs) or not self.sizes:
            raise ValueError("sizes and probabilities must have the same non-zero length")
        if any(s <= 0 for s in self.sizes) or any(p < 0 for p in self.probs):
            raise ValueError("packet sizes must be > 0 and probabilities >= 0")
        if not math.isclose(sum(self.probs), 1.0, abs_tol=1e-12):
            raise ValueError(f"packet size probabilities sum to {sum(self.probs)}, not 1")

    @property
    def is_uniform(self) -> bool:
        return not self.sizes

    def mean_bytes(self) -> float:
        if self.is_uniform:
            return (self.lo + self.hi) / 2
        return float(np.dot(self.sizes, self.probs))

    def second_moment_bytes(self) -> float:
        if self.is_uniform:
            a, b = self.lo, self.hi
            return (a * a + a * b + b * b) / 3
        return float(np.dot(np.square(self.sizes), self.probs))

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.is_uniform:
            return rng.uniform(self.lo, self.hi, n)
        cum = np.cumsum(self.probs)
        cum[-1] = 1.0
        idx = np.searchsorted(cum, rng.random(n), side="right")
        return np.asarray(self.sizes, dtype=float)[np.minimum(idx, len(self.sizes) - 1)]


TM1 = PacketSizeModel("TM1", (64, 576, 1518), (0.80, 0.05, 0.15))
TM2 = PacketSizeModel("TM2", (64, 576, 1518), (0.30, 0.10, 0.60))
UNIFORM_INLINE = PacketSizeModel("UniformInline", lo=64.0, hi=1500.0)

MODELS = {"tm1": TM1, "tm2": TM2, "uniform": UNIFORM_INLINE}


def fixed_size(nbytes: float) -> PacketSizeModel:
    return PacketSizeModel("Custom", (nbytes,), (1.0,))


@dataclass(frozen=True)
class DirectionConfig:
    cross_load: float = 0.0
    cross_model: PacketSizeModel = TM1
    inline_load: float = 0.0
    inline_model: PacketSizeModel = UNIFORM_INLINE

    def __post_init__(self):
        for name in ("cross_load", "inline_load"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise UnstableQueue(f"{name} must lie in [0, 1), got {v}")
        if self.cross_load + self.inline_load >= 1:
            raise UnstableQueue(
                f"unstable queue: total load {self.cross_load + self.inline_load} >= 1")

    @property
    def total_load(self) -> float:
        return self.cross_load + self.inline_load


@dataclass(frozen=True)
class TrafficScenario:
    link_rate: float = 1e9
    num_switches: int = 1
    flow_type: str = "cross"
    forward: DirectionConfig = field(default_factory=DirectionConfig)
    reverse: DirectionConfig = field(default_factory=DirectionConfig)

    def __post_init__(self):
        if self.num_switches < 1:
            raise ValueError("num_switches must be >= 1")
        if self.link_rate <= 0:
            raise ValueError("link_rate must be positive")
        if self.flow_type not in ("cross", "inline", "mixed"):
            raise ValueError(f"flow_type must be cross, inline or mixed, got {self.flow_type!r}")
        for d in (self.forward, self.reverse):
            if self.flow_type == "cross" and d.inline_load:
                raise ValueError("cross scenario cannot carry inline load")
            if self.flow_type == "inline" and d.cross_load:
                raise ValueError("inline scenario cannot carry cross load")

    def direction(self, which: str) -> DirectionConfig:
        if which in ("forward", "fwd", 1):
            return self.forward
        if which in ("reverse", "rev", 2):
            return self.reverse
        raise ValueError(f"unknown direction {which!r}")


@dataclass(frozen=True)
class DelayTrace:
    per_node_delays: np.ndarray  # [probe, node], us

    @property
    def ete_delays(self) -> np.ndarray:
        return self.per_node_delays.sum(axis=1)

    def write_csv(self, path) -> None:
        n = self.per_node_delays.shape[1]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join([f"node_{k + 1}" for k in range(n)] + ["ete"]) + "\n")
            for row, ete in zip(self.per_node_delays, self.ete_delays):
                fh.write(",".join(repr(float(v)) for v in row) + f",{float(ete)!r}\n")


def load_to_arrival_rate(load: float, link_rate: float, model: PacketSizeModel) -> float:
    """Poisson rate (packets/s) at which ``model`` packets occupy ``load`` of the link."""
    if not 0 < load < 1:
        raise ValueError(f"load must lie in (0, 1), got {load}")
    return load * link_rate / (8.0 * model.mean_bytes())


def service_us(nbytes, link_rate: float):
    return np.asarray(nbytes, dtype=float) * 8.0 / link_rate * US_PER_S


def pk_mean_wait(load: float, link_rate: float, model: PacketSizeModel) -> float:
    """Pollaczek-Khinchine mean wait (us) of an M/G/1 queue fed by ``model`` packets."""
    lam = load_to_arrival_rate(load, link_rate, model) / US_PER_S
    es2 = model.second_moment_bytes() * (8.0 / link_rate * US_PER_S) ** 2
    return lam * es2 / (2 * (1 - load))


def poisson_epochs(rng: np.random.Generator, rate_per_us: float, t0: float, t1: float) -> np.ndarray:
    """Arrival epochs of a Poisson stream on ``[t0, t1)``."""
    if rate_per_us <= 0 or t1 <= t0:
        return np.empty(0)
    mean = rate_per_us * (t1 - t0)
    chunk = int(mean + 6 * math.sqrt(mean) + 16)
    parts, t = [], t0
    while True:
        gaps = rng.exponential(1.0 / rate_per_us, chunk)
        times = t + np.cumsum(gaps)
        if times[-1] >= t1:
            parts.append(times[times < t1])
            break
        parts.append(times)
        t = times[-1]
    return np.concatenate(parts)


def fifo_departures(arrivals: np.ndarray, service: np.ndarray) -> np.ndarray:
    """Departure epochs of a work-conserving FIFO server (arrivals sorted)."""
    if arrivals.size == 0:
        return np.empty(0)
    csum = np.cumsum(service)
    prev = csum - service
    # D_n = max_k<=n (T_k + S_k + ... + S_n)
    return np.maximum.accumulate(arrivals - prev) + csum


def _probe_departures(arrivals, service, departures, probes, priority):
    if arrivals.size == 0:
        return probes.copy()
    if priority == "shared":
        idx = np.searchsorted(arrivals, probes, side="right") - 1
        ahead = np.where(idx >= 0, departures[np.maximum(idx, 0)], -np.inf)
        return np.maximum(probes, ahead)
    # non-preemptive strict priority: wait out the packet in service only
    starts = departures - service
    idx = np.searchsorted(starts, probes, side="right") - 1
    in_service = np.where(idx >= 0, departures[np.maximum(idx, 0)], -np.inf)
    return np.maximum(probes, in_service)


@dataclass(frozen=True)
class NodeRun:
    """One switch output port: probe waits plus diagnostics."""

    waits: np.ndarray
    queue_lengths: np.ndarray
    busy_fraction: float
    departures_out: np.ndarray  # probe departure epochs


def run_node(probes, cross_t, cross_s, inline_t=None, inline_s=None, priority="shared"):
    """Serve the merged background stream at one node and time the probes.

    Returns the node diagnostics and the departure epochs (sorted) / service
    times of the inline packets, which become the next node's inline arrivals.
    """
    if priority not in ("shared", "high"):
        raise ValueError(f"probe priority must be 'shared' or 'high', got {priority!r}")
    if inline_t is None:
        inline_t = np.empty(0)
        inline_s = np.empty(0)
    times = np.concatenate((inline_t, cross_t))
    svc = np.concatenate((inline_s, cross_s))
    is_inline = np.concatenate((np.ones(inline_t.size, bool), np.zeros(cross_t.size, bool)))
    order = np.argsort(times, kind="stable")
    times, svc, is_inline = times[order], svc[order], is_inline[order]

    dep = fifo_departures(times, svc)
    probe_dep = _probe_departures(times, svc, dep, probes, priority)
    waits = probe_dep - probes

    arrived = np.searchsorted(times, probes, side="right")
    gone = np.searchsorted(dep, probes, side="right")
    qlen = arrived - gone

    if probes.size and times.size:
        horizon0, horizon1 = probes[0], probes[-1]
        busy = _busy_time(dep - svc, dep, horizon0, horizon1)
        busy_fraction = busy / (horizon1 - horizon0) if horizon1 > horizon0 else 0.0
    else:
        busy_fraction = 0.0

    node = NodeRun(waits, qlen, busy_fraction, probe_dep)
    return node, dep[is_inline], svc[is_inline]


def _busy_time(starts, ends, t0, t1) -> float:
    s = np.clip(starts, t0, t1)
    e = np.clip(ends, t0, t1)
    return float(np.sum(e - s))


def _background(rng, load, model, link_rate, t0, t1):
    if load <= 0:
        return np.empty(0), np.empty(0)
    lam = load_to_arrival_rate(load, link_rate, model) / US_PER_S
    t = poisson_epochs(rng, lam, t0, t1)
    return t, service_us(model.draw(rng, t.size), link_rate)


def _probe_schedule(rng, cfg: DirectionConfig, link_rate, num_probes, probe_rate,
                    warmup_packets, warmup_us):
    lam_bg = 0.0
    if cfg.cross_load > 0:
        lam_bg += load_to_arrival_rate(cfg.cross_load, link_rate, cfg.cross_model)
    if cfg.inline_load > 0:
        lam_bg += load_to_arrival_rate(cfg.inline_load, link_rate, cfg.inline_model)
    lam_bg /= US_PER_S
    rate = probe_rate / US_PER_S if probe_rate else (lam_bg or 1.0)
    warm = min(warmup_packets / lam_bg, warmup_us) if lam_bg > 0 else 0.0
    return warm + np.cumsum(rng.exponential(1.0 / rate, num_probes))


def simulate_cascade(scenario: TrafficScenario, direction, num_probes: int,
                     rng: np.random.Generator, *, probe_rate: float | None = None,
                     priority: str = "shared", warmup_packets: int = DEFAULT_WARMUP_PACKETS,
                     warmup_us: float = DEFAULT_WARMUP_US, diagnostics: list | None = None
                     ) -> DelayTrace:
    """Per-node probe waits along ``scenario.num_switches`` switches.

    ``probe_rate`` (probes/s) defaults to the background packet rate at the
    first switch.  Probes start after the warm-up horizon
    ``min(warmup_packets / rate, warmup_us)``.  When ``diagnostics`` is a
    list, one :class:`NodeRun` per switch is appended to it.
    """
    if num_probes < 1:
        raise ValueError("num_probes must be >= 1")
    cfg = scenario.direction(direction)
    n = scenario.num_switches
    if cfg.total_load == 0:
        return DelayTrace(np.zeros((num_probes, n)))
    rate = scenario.link_rate
    probes = _probe_schedule(rng, cfg, rate, num_probes, probe_rate, warmup_packets, warmup_us)
    # inline packets arriving after the last probe can never overtake it
    inline_t, inline_s = _background(rng, cfg.inline_load, cfg.inline_model, rate, 0.0, probes[-1])
    per_node = np.empty((num_probes, n))
    for k in range(n):
        cross_t, cross_s = _background(rng, cfg.cross_load, cfg.cross_model, rate, 0.0, probes[-1])
        node, inline_t, inline_s = run_node(probes, cross_t, cross_s, inline_t, inline_s, priority)
        per_node[:, k] = node.waits
        if diagnostics is not None:
            diagnostics.append(node)
        probes = node.departures_out
    return DelayTrace(per_node)


def simulate_cross_single_node(cfg: DirectionConfig, link_rate: float, num_probes: int,
                               rng: np.random.Generator, **kwargs) -> np.ndarray:
    """Waiting times of probes at one switch carrying only cross traffic."""
    if cfg.inline_load:
        cfg = DirectionConfig(cfg.cross_load, cfg.cross_model)
    scenario = TrafficScenario(link_rate, 1, "cross", cfg, cfg)
    return simulate_cascade(scenario, "forward", num_probes, rng, **kwargs).ete_delays


def delay_pdf(scenario: TrafficScenario, direction, num_probes: int, bin_width: float,
              rng: np.random.Generator, **kwargs) -> EmpiricalPdf:
    """Empirical end-to-end queuing-delay pdf of ``direction``."""
    trace = simulate_cascade(scenario, direction, num_probes, rng, **kwargs)
    return from_samples(trace.ete_delays, bin_width)


def cross_scenario(load_fwd: float, load_rev: float, num_switches: int = 1,
                   model: PacketSizeModel = TM1, link_rate: float = 1e9) -> TrafficScenario:
    return TrafficScenario(link_rate, num_switches, "cross",
                           DirectionConfig(load_fwd, model), DirectionConfig(load_rev, model))
