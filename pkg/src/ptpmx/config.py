"""Scenario configuration files.

Plain ``key = value`` lines grouped in ``[traffic]``, ``[estimation]``,
``[evaluation]`` and ``[threshold]`` sections.  Times are microseconds and
loads are fractions of the link rate.  Example::

    [traffic]
    link_gbps = 1
    switches = 4
    flow = cross
    fwd_cross_load = 0.4
    fwd_cross_model = tm1
    rev_cross_load = 0.2
    rev_cross_model = tm1
    probes = 200000

    [estimation]
    models = k,s,m
    estimators = minimax,min,mean
    bin_us = 0.01

    [evaluation]
    p = 4,16,64
    b = 5
    trials = 2000
    seed = 7

The ``PTPMX_SEED`` environment variable, when set, replaces
``[evaluation] seed``.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass
from pathlib import Path

from . import queuesim as qs
from .estimators import FILTERS
from .evaluation import DEFAULT_BIAS_TRIALS, DEFAULT_TRIALS, ThresholdSpec

SEED_ENV = "PTPMX_SEED"
SECTIONS = ("traffic", "estimation", "evaluation", "threshold")

_KEYS = {
    "traffic": {"link_gbps", "switches", "flow", "probes", "warmup_packets", "warmup_us", "priority",
                *(f"{d}_{f}_{x}" for d in ("fwd", "rev") for f in ("cross", "inline")
                  for x in ("load", "model"))},
    "estimation": {"models", "estimators", "bin_us", "step_us", "f1", "f2", "bias_table"},
    "evaluation": {"p", "b", "trials", "seed", "bias_trials", "workers"},
    "threshold": {"accuracy_us", "sigma_level"},
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrafficSettings:
    scenario: qs.TrafficScenario
    probes: int = 200_000
    warmup_packets: int = qs.DEFAULT_WARMUP_PACKETS
    warmup_us: float = qs.DEFAULT_WARMUP_US
    priority: str = "shared"


@dataclass(frozen=True)
class EstimationSettings:
    models: tuple = ("S",)
    estimators: tuple = ("minimax",)
    bin_us: float = 0.01
    step_us: float | None = None
    f1: Path | None = None
    f2: Path | None = None
    bias_table: Path | None = None


@dataclass(frozen=True)
class EvaluationSettings:
    P_values: tuple = (1, 2, 4, 8, 16, 32, 64, 128, 256)
    B: int = 5
    trials: int = DEFAULT_TRIALS
    seed: int = 0
    bias_trials: int = DEFAULT_BIAS_TRIALS
    workers: int = 1


@dataclass(frozen=True)
class ScenarioConfig:
    traffic: TrafficSettings
    estimation: EstimationSettings
    evaluation: EvaluationSettings
    threshold: ThresholdSpec


def parse_p_list(text: str) -> tuple:
    """``4,16,64`` or ``1..256`` (powers of two from 1 to 256)."""
    text = text.strip()
    if ".." in text:
        a, b = (int(x) for x in text.split(".."))
        if a < 1 or b < a:
            raise ValueError(f"bad range {text!r}")
        out, p = [], a
        while p <= b:
            out.append(p)
            p *= 2
        return tuple(out)
    out = tuple(int(x) for x in text.split(",") if x.strip())
    if not out or min(out) < 1:
        raise ValueError(f"P values must be positive integers, got {text!r}")
    return out


class _Section:
    def __init__(self, name, mapping):
        self.name, self.m = name, mapping

    def _fail(self, key, why):
        raise ConfigError(f"[{self.name}] {key}: {why}")

    def get(self, key, conv, default):
        if key not in self.m:
            return default
        raw = self.m[key].strip()
        try:
            return conv(raw)
        except (ValueError, KeyError) as exc:
            self._fail(key, f"invalid value {raw!r} ({exc})")


def _model(name: str) -> qs.PacketSizeModel:
    try:
        return qs.MODELS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown packet-size model; choose {', '.join(qs.MODELS)}") from None


def _split(text):
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _models(text):
    out = tuple(x.upper() for x in _split(text))
    bad = [x for x in out if x not in ("K", "S", "M")]
    if not out or bad:
        raise ValueError("models must be a comma list of k, s, m")
    return out


def _estimators(text):
    out = _split(text)
    bad = [x for x in out if x != "minimax" and x not in FILTERS]
    if not out or bad:
        raise ValueError(f"estimators must be minimax or one of {', '.join(FILTERS)}")
    return out


def _positive(conv):
    def f(raw):
        v = conv(raw)
        if not v > 0:
            raise ValueError("must be positive")
        return v
    return f


def _direction(sec: _Section, prefix: str) -> qs.DirectionConfig:
    try:
        return qs.DirectionConfig(
            sec.get(f"{prefix}_cross_load", float, 0.0), sec.get(f"{prefix}_cross_model", _model, qs.TM1),
            sec.get(f"{prefix}_inline_load", float, 0.0),
            sec.get(f"{prefix}_inline_model", _model, qs.UNIFORM_INLINE))
    except (qs.UnstableQueue, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[traffic] {prefix}_*_load: {exc}") from None


def from_parser(cp: configparser.ConfigParser, env=None) -> ScenarioConfig:
    env = os.environ if env is None else env
    for name in cp.sections():
        if name not in SECTIONS:
            raise ConfigError(f"[{name}]: unknown section; expected one of {', '.join(SECTIONS)}")
        extra = sorted(set(cp[name]) - _KEYS[name])
        if extra:
            raise ConfigError(f"[{name}] {extra[0]}: unknown key")
    sec = {n: _Section(n, cp[n] if cp.has_section(n) else {}) for n in SECTIONS}

    t = sec["traffic"]
    flow = t.get("flow", str.lower, "cross")
    if flow not in ("cross", "inline", "mixed"):
        raise ConfigError(f"[traffic] flow: must be cross, inline or mixed, got {flow!r}")
    try:
        scenario = qs.TrafficScenario(t.get("link_gbps", _positive(float), 1.0) * 1e9,
                                      t.get("switches", _positive(int), 1), flow,
                                      _direction(t, "fwd"), _direction(t, "rev"))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[traffic] flow: {exc}") from None
    priority = t.get("priority", str.lower, "shared")
    if priority not in ("shared", "high"):
        raise ConfigError("[traffic] priority: must be shared or high")
    traffic = TrafficSettings(scenario, t.get("probes", _positive(int), 200_000),
                              t.get("warmup_packets", int, qs.DEFAULT_WARMUP_PACKETS),
                              t.get("warmup_us", float, qs.DEFAULT_WARMUP_US), priority)

    e = sec["estimation"]
    path = lambda raw: Path(raw)  # noqa: E731
    estimation = EstimationSettings(
        e.get("models", _models, ("S",)), e.get("estimators", _estimators, ("minimax",)),
        e.get("bin_us", _positive(float), 0.01), e.get("step_us", _positive(float), None),
        e.get("f1", path, None), e.get("f2", path, None), e.get("bias_table", path, None))
    if (estimation.f1 is None) != (estimation.f2 is None):
        raise ConfigError("[estimation] f1: f1 and f2 must be given together")

    v = sec["evaluation"]
    seed = v.get("seed", int, 0)
    if env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV}: not an integer: {env[SEED_ENV]!r}") from None
    evaluation = EvaluationSettings(
        v.get("p", parse_p_list, EvaluationSettings.P_values), v.get("b", _positive(int), 5),
        v.get("trials", _positive(int), DEFAULT_TRIALS), seed,
        v.get("bias_trials", _positive(int), DEFAULT_BIAS_TRIALS), v.get("workers", _positive(int), 1))

    h = sec["threshold"]
    threshold = ThresholdSpec(h.get("accuracy_us", _positive(float), 1.25),
                              h.get("sigma_level", _positive(float), 5.0))
    return ScenarioConfig(traffic, estimation, evaluation, threshold)


def load(path, env=None) -> ScenarioConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {str(exc).splitlines()[0]}") from None
    cfg = from_parser(cp, env)
    base = path.parent
    est = cfg.estimation
    fix = {k: (base / p if p is not None and not p.is_absolute() else p)
           for k, p in (("f1", est.f1), ("f2", est.f2), ("bias_table", est.bias_table))}
    return ScenarioConfig(cfg.traffic, EstimationSettings(est.models, est.estimators, est.bin_us,
                                                          est.step_us, **fix),
                          cfg.evaluation, cfg.threshold)
