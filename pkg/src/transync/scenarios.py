"""Scenario sampling, the mean scenario, and lossless (de)serialization.

A scenario is one joint realization of every random input: segment running
times, inter-stop walking times, transfer demand, alighting counts, net
intermediate boarding, initial onboard loads, and local-passenger demand
(arrival rates for high-frequency lines, per-trip totals for low-frequency
lines).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, ValidationError
from .network import FrequencyClass, LineSpec, NetworkSpec, trip_count

PairKey = tuple[str, str, str]  # (node, feeder_line, connecting_line)
NodeLineKey = tuple[str, str]  # (node, line)

_FORMAT_NAME = "transync-scenario-set"
_FORMAT_VERSION = 1


class Provenance(Enum):
    SAMPLED = "Sampled"
    REDUCED = "Reduced"
    TEST_SET = "TestSet"


@dataclass(frozen=True)
class LognormalSpec:
    """Lognormal parameters in log space; `mean` is the closed-form mean."""

    mu: float
    sigma: float

    @classmethod
    def from_mean_cv(cls, mean: float, cv: float) -> "LognormalSpec":
        if mean <= 0:
            raise ConfigError(f"lognormal mean must be > 0, got {mean}")
        if cv < 0:
            raise ConfigError(f"lognormal cv must be >= 0, got {cv}")
        sigma2 = math.log(1.0 + cv * cv)
        sigma = math.sqrt(sigma2)
        return cls(mu=math.log(mean) - sigma2 / 2.0, sigma=sigma)

    @property
    def mean(self) -> float:
        return math.exp(self.mu + self.sigma * self.sigma / 2.0)

    def validate(self, name: str) -> None:
        if not math.isfinite(self.mu):
            raise ConfigError(f"{name}: mu must be finite")
        if self.sigma < 0 or not math.isfinite(self.sigma):
            raise ConfigError(f"{name}: sigma must be >= 0")


@dataclass(frozen=True)
class RangeSpec:
    """Closed interval sampled uniformly; `lo == hi` collapses to a constant."""

    lo: float
    hi: float

    @property
    def mean(self) -> float:
        return (self.lo + self.hi) / 2.0

    def validate(self, name: str, positive: bool = False, nonnegative: bool = False) -> None:
        if self.lo > self.hi:
            raise ConfigError(f"{name}: lo > hi ({self.lo} > {self.hi})")
        if positive and self.lo <= 0:
            raise ConfigError(f"{name}: values must be > 0, lower bound is {self.lo}")
        if nonnegative and self.lo < 0:
            raise ConfigError(f"{name}: values must be >= 0, lower bound is {self.lo}")


@dataclass
class DistributionConfig:
    """Input distributions, with global defaults plus per-key overrides.

    Running times are lognormal per (line, segment); everything else is a
    uniform range.  All time quantities are minutes.
    """

    running_default: LognormalSpec = field(
        default_factory=lambda: LognormalSpec.from_mean_cv(8.0, 0.20)
    )
    running: dict[tuple[str, int], LognormalSpec] = field(default_factory=dict)
    walking_default: RangeSpec = field(default_factory=lambda: RangeSpec(1.0, 3.0))
    walking: dict[PairKey, RangeSpec] = field(default_factory=dict)
    transfer_demand_default: RangeSpec = field(default_factory=lambda: RangeSpec(2.0, 12.0))
    transfer_demand: dict[PairKey, RangeSpec] = field(default_factory=dict)
    alighting_default: RangeSpec = field(default_factory=lambda: RangeSpec(0.0, 8.0))
    alighting: dict[NodeLineKey, RangeSpec] = field(default_factory=dict)
    net_intermediate_default: RangeSpec = field(default_factory=lambda: RangeSpec(-4.0, 6.0))
    net_intermediate: dict[tuple[str, int], RangeSpec] = field(default_factory=dict)
    initial_onboard_default: RangeSpec = field(default_factory=lambda: RangeSpec(15.0, 40.0))
    initial_onboard: dict[str, RangeSpec] = field(default_factory=dict)
    local_rate_default: RangeSpec = field(default_factory=lambda: RangeSpec(0.3, 1.5))
    local_rate: dict[NodeLineKey, RangeSpec] = field(default_factory=dict)
    local_total_default: RangeSpec = field(default_factory=lambda: RangeSpec(4.0, 20.0))
    local_total: dict[NodeLineKey, RangeSpec] = field(default_factory=dict)

    def validate(self) -> None:
        self.running_default.validate("running_default")
        for key, spec in self.running.items():
            spec.validate(f"running{key}")
        self.walking_default.validate("walking_default", positive=True)
        for key, spec in self.walking.items():
            spec.validate(f"walking{key}", positive=True)
        for name, default, overrides, kw in (
            ("transfer_demand", self.transfer_demand_default, self.transfer_demand, "nonnegative"),
            ("alighting", self.alighting_default, self.alighting, "nonnegative"),
            ("initial_onboard", self.initial_onboard_default, self.initial_onboard, "nonnegative"),
            ("local_rate", self.local_rate_default, self.local_rate, "nonnegative"),
            ("local_total", self.local_total_default, self.local_total, "nonnegative"),
        ):
            default.validate(f"{name}_default", **{kw: True})
            for key, spec in overrides.items():
                spec.validate(f"{name}{key}", **{kw: True})
        self.net_intermediate_default.validate("net_intermediate_default")
        for key, spec in self.net_intermediate.items():
            spec.validate(f"net_intermediate{key}")

    # lookup helpers -------------------------------------------------------
    def running_spec(self, line_id: str, seg: int) -> LognormalSpec:
        return self.running.get((line_id, seg), self.running_default)

    def walking_spec(self, key: PairKey) -> RangeSpec:
        return self.walking.get(key, self.walking_default)

    def transfer_demand_spec(self, key: PairKey) -> RangeSpec:
        return self.transfer_demand.get(key, self.transfer_demand_default)

    def alighting_spec(self, key: NodeLineKey) -> RangeSpec:
        return self.alighting.get(key, self.alighting_default)

    def net_intermediate_spec(self, line_id: str, seg: int) -> RangeSpec:
        return self.net_intermediate.get((line_id, seg), self.net_intermediate_default)

    def initial_onboard_spec(self, line_id: str) -> RangeSpec:
        return self.initial_onboard.get(line_id, self.initial_onboard_default)

    def local_rate_spec(self, key: NodeLineKey) -> RangeSpec:
        return self.local_rate.get(key, self.local_rate_default)

    def local_total_spec(self, key: NodeLineKey) -> RangeSpec:
        return self.local_total.get(key, self.local_total_default)

    # JSON -----------------------------------------------------------------
    def to_json(self) -> dict:
        def ln(spec: LognormalSpec) -> dict:
            return {"mu": spec.mu, "sigma": spec.sigma}

        def rg(spec: RangeSpec) -> list[float]:
            return [spec.lo, spec.hi]

        return {
            "running": {
                "default": ln(self.running_default),
                **{f"{k[0]}/{k[1]}": ln(v) for k, v in self.running.items()},
            },
            "walking": {
                "default": rg(self.walking_default),
                **{"/".join(k): rg(v) for k, v in self.walking.items()},
            },
            "transfer_demand": {
                "default": rg(self.transfer_demand_default),
                **{"/".join(k): rg(v) for k, v in self.transfer_demand.items()},
            },
            "alighting": {
                "default": rg(self.alighting_default),
                **{"/".join(k): rg(v) for k, v in self.alighting.items()},
            },
            "net_intermediate": {
                "default": rg(self.net_intermediate_default),
                **{f"{k[0]}/{k[1]}": rg(v) for k, v in self.net_intermediate.items()},
            },
            "initial_onboard": {
                "default": rg(self.initial_onboard_default),
                **{k: rg(v) for k, v in self.initial_onboard.items()},
            },
            "local_rate": {
                "default": rg(self.local_rate_default),
                **{"/".join(k): rg(v) for k, v in self.local_rate.items()},
            },
            "local_total": {
                "default": rg(self.local_total_default),
                **{"/".join(k): rg(v) for k, v in self.local_total.items()},
            },
        }

    @classmethod
    def from_json(cls, data: dict) -> "DistributionConfig":
        def ln(obj: dict) -> LognormalSpec:
            if "mean" in obj:
                return LognormalSpec.from_mean_cv(obj["mean"], obj.get("cv", 0.0))
            return LognormalSpec(mu=obj["mu"], sigma=obj["sigma"])

        def rg(obj) -> RangeSpec:
            return RangeSpec(lo=float(obj[0]), hi=float(obj[1]))

        cfg = cls()
        if "running" in data:
            sect = dict(data["running"])
            if "default" in sect:
                cfg.running_default = ln(sect.pop("default"))
            for key, val in sect.items():
                line_id, seg = key.rsplit("/", 1)
                cfg.running[(line_id, int(seg))] = ln(val)
        for name, keyparts in (
            ("walking", 3),
            ("transfer_demand", 3),
            ("alighting", 2),
            ("local_rate", 2),
            ("local_total", 2),
        ):
            if name not in data:
                continue
            sect = dict(data[name])
            if "default" in sect:
                setattr(cfg, f"{name}_default", rg(sect.pop("default")))
            target = getattr(cfg, name)
            for key, val in sect.items():
                parts = tuple(key.split("/"))
                if len(parts) != keyparts:
                    raise ConfigError(f"{name} key {key!r}: expected {keyparts} parts")
                target[parts] = rg(val)
        if "net_intermediate" in data:
            sect = dict(data["net_intermediate"])
            if "default" in sect:
                cfg.net_intermediate_default = rg(sect.pop("default"))
            for key, val in sect.items():
                line_id, seg = key.rsplit("/", 1)
                cfg.net_intermediate[(line_id, int(seg))] = rg(val)
        if "initial_onboard" in data:
            sect = dict(data["initial_onboard"])
            if "default" in sect:
                cfg.initial_onboard_default = rg(sect.pop("default"))
            for key, val in sect.items():
                cfg.initial_onboard[key] = rg(val)
        cfg.validate()
        return cfg


@dataclass
class Scenario:
    """One realization of all random inputs.

    Array layouts (all float64, times in minutes):
      running_time[line]   -> (trips, n_segments); segment i runs from
                              node_sequence[i] to node_sequence[i+1]
      walking_time[(node, feeder, connecting)] -> minutes
      transfer_demand[(node, feeder, connecting)] -> (feeder trips,)
      alighting[line]      -> (trips, len(node_sequence)); terminal column 0
      net_intermediate[line] -> (trips, n_segments)
      initial_onboard[line] -> (trips,)
      local_rate_lambda[(node, line)] -> persons/min (high-frequency lines)
      local_total_D[(node, line)]     -> (trips,) persons (low-frequency lines)
    """

    running_time: dict[str, np.ndarray]
    walking_time: dict[PairKey, float]
    transfer_demand: dict[PairKey, np.ndarray]
    alighting: dict[str, np.ndarray]
    net_intermediate: dict[str, np.ndarray]
    initial_onboard: dict[str, np.ndarray]
    local_rate_lambda: dict[NodeLineKey, float]
    local_total_D: dict[NodeLineKey, np.ndarray]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Scenario):
            return NotImplemented
        for name in (
            "running_time",
            "transfer_demand",
            "alighting",
            "net_intermediate",
            "initial_onboard",
            "local_total_D",
        ):
            mine, theirs = getattr(self, name), getattr(other, name)
            if mine.keys() != theirs.keys():
                return False
            if any(not np.array_equal(mine[k], theirs[k]) for k in mine):
                return False
        return (
            self.walking_time == other.walking_time
            and self.local_rate_lambda == other.local_rate_lambda
        )


@dataclass
class ScenarioSet:
    """Immutable-by-convention bundle of scenarios with occurrence probabilities."""

    scenarios: list[Scenario]
    probability: np.ndarray
    seed: int
    provenance: Provenance

    def __post_init__(self) -> None:
        self.probability = np.asarray(self.probability, dtype=float)
        self.validate()

    def __len__(self) -> int:
        return len(self.scenarios)

    def validate(self) -> None:
        if not self.scenarios:
            raise ValidationError("scenario set must be non-empty")
        if len(self.probability) != len(self.scenarios):
            raise ValidationError("probability vector length mismatch")
        if np.any(self.probability <= 0):
            raise ValidationError("every scenario probability must be > 0")
        if abs(float(self.probability.sum()) - 1.0) > 1e-9:
            raise ValidationError("scenario probabilities must sum to 1")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ScenarioSet):
            return NotImplemented
        return (
            self.seed == other.seed
            and self.provenance == other.provenance
            and np.array_equal(self.probability, other.probability)
            and self.scenarios == other.scenarios
        )


# --------------------------------------------------------------------------
# Sampling
# --------------------------------------------------------------------------

#: Spawn-key index per stream; test sets live on a disjoint child of the seed.
_STREAMS = {"train": 0, "test": 1}


def _stream_sequences(seed: int, stream: str, n: int) -> list[np.random.SeedSequence]:
    if stream not in _STREAMS:
        raise ConfigError(f"unknown stream {stream!r}; use 'train' or 'test'")
    root = np.random.SeedSequence(seed)
    branch = root.spawn(2)[_STREAMS[stream]]
    return branch.spawn(n)


def _draw_lognormal(rng: np.random.Generator | None, spec: LognormalSpec, size) -> np.ndarray:
    if rng is None or spec.sigma == 0.0:
        return np.full(size, spec.mean, dtype=float)
    return rng.lognormal(spec.mu, spec.sigma, size=size)


def _draw_range(rng: np.random.Generator | None, spec: RangeSpec, size=None):
    if rng is None or spec.lo == spec.hi:
        if size is None:
            return spec.mean
        return np.full(size, spec.mean, dtype=float)
    if size is None:
        return float(rng.uniform(spec.lo, spec.hi))
    return rng.uniform(spec.lo, spec.hi, size=size)


def _build_scenario(
    network: NetworkSpec, dists: DistributionConfig, rng: np.random.Generator | None
) -> Scenario:
    """Draw one scenario (or the mean scenario when ``rng`` is None).

    Alighting and net-intermediate counts are clipped against the running
    onboard balance (ignoring future boardings) so the onboard count implied
    by the flow-conservation update can never go negative.
    """
    running: dict[str, np.ndarray] = {}
    walking: dict[PairKey, float] = {}
    demand: dict[PairKey, np.ndarray] = {}
    alighting: dict[str, np.ndarray] = {}
    net_int: dict[str, np.ndarray] = {}
    onboard: dict[str, np.ndarray] = {}
    rates: dict[NodeLineKey, float] = {}
    totals: dict[NodeLineKey, np.ndarray] = {}

    for ln in network.lines:
        trips = trip_count(ln, network.horizon_T)
        nseg = ln.n_segments
        run = np.empty((trips, nseg), dtype=float)
        for seg in range(nseg):
            run[:, seg] = _draw_lognormal(rng, dists.running_spec(ln.line_id, seg), trips)
        running[ln.line_id] = run
        onboard[ln.line_id] = _draw_range(rng, dists.initial_onboard_spec(ln.line_id), trips)

        ad = np.zeros((trips, len(ln.node_sequence)), dtype=float)
        sp = np.empty((trips, nseg), dtype=float)
        for seg in range(nseg):
            sp[:, seg] = _draw_range(rng, dists.net_intermediate_spec(ln.line_id, seg), trips)
        for pos in range(1, len(ln.node_sequence)):
            node = ln.node_sequence[pos]
            ad[:, pos] = _draw_range(rng, dists.alighting_spec((node, ln.line_id)), trips)
        # conservation walk: sp + ad may never exceed the balance so far
        balance = onboard[ln.line_id].copy()
        for pos in range(1, len(ln.node_sequence)):
            seg = pos - 1
            sp[:, seg] = np.minimum(sp[:, seg], balance)
            balance = balance - sp[:, seg]
            ad[:, pos] = np.minimum(ad[:, pos], balance)
            balance = balance - ad[:, pos]
        alighting[ln.line_id] = ad
        net_int[ln.line_id] = sp

    for tp in network.transfer_pairs:
        key = (tp.node, tp.feeder_line, tp.connecting_line)
        walking[key] = float(_draw_range(rng, dists.walking_spec(key)))
        feeder_trips = trip_count(network.line(tp.feeder_line), network.horizon_T)
        demand[key] = np.asarray(
            _draw_range(rng, dists.transfer_demand_spec(key), feeder_trips), dtype=float
        )

    for ln in network.lines:
        trips = trip_count(ln, network.horizon_T)
        for node in ln.node_sequence[1:]:
            key = (node, ln.line_id)
            if ln.frequency_class is FrequencyClass.HIGH:
                rates[key] = float(_draw_range(rng, dists.local_rate_spec(key)))
            else:
                totals[key] = np.asarray(
                    _draw_range(rng, dists.local_total_spec(key), trips), dtype=float
                )

    return Scenario(
        running_time=running,
        walking_time=walking,
        transfer_demand=demand,
        alighting=alighting,
        net_intermediate=net_int,
        initial_onboard=onboard,
        local_rate_lambda=rates,
        local_total_D=totals,
    )


def sample_scenarios(
    network: NetworkSpec,
    dists: DistributionConfig,
    n: int,
    seed: int,
    stream: str = "train",
) -> ScenarioSet:
    """Sample ``n`` equally likely scenarios, deterministically in ``seed``.

    ``stream='test'`` draws from a disjoint child stream of the same seed, so
    train and test sets never share randomness.
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    dists.validate()
    sequences = _stream_sequences(seed, stream, n)
    scenarios = [
        _build_scenario(network, dists, np.random.default_rng(ss)) for ss in sequences
    ]
    provenance = Provenance.TEST_SET if stream == "test" else Provenance.SAMPLED
    return ScenarioSet(
        scenarios=scenarios,
        probability=np.full(n, 1.0 / n),
        seed=seed,
        provenance=provenance,
    )


def mean_scenario(network: NetworkSpec, dists: DistributionConfig) -> Scenario:
    """Coordinate-wise expectation of the sampling distributions
    (lognormal means in closed form, range midpoints elsewhere)."""
    dists.validate()
    return _build_scenario(network, dists, rng=None)


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------


def _scenario_to_json(s: Scenario) -> dict:
    return {
        "running_time": {k: v.tolist() for k, v in s.running_time.items()},
        "walking_time": {"/".join(k): v for k, v in s.walking_time.items()},
        "transfer_demand": {"/".join(k): v.tolist() for k, v in s.transfer_demand.items()},
        "alighting": {k: v.tolist() for k, v in s.alighting.items()},
        "net_intermediate": {k: v.tolist() for k, v in s.net_intermediate.items()},
        "initial_onboard": {k: v.tolist() for k, v in s.initial_onboard.items()},
        "local_rate_lambda": {"/".join(k): v for k, v in s.local_rate_lambda.items()},
        "local_total_D": {"/".join(k): v.tolist() for k, v in s.local_total_D.items()},
    }


def _scenario_from_json(data: dict) -> Scenario:
    def split2(key: str) -> NodeLineKey:
        a, b = key.split("/")
        return (a, b)

    def split3(key: str) -> PairKey:
        a, b, c = key.split("/")
        return (a, b, c)

    try:
        return Scenario(
            running_time={k: np.array(v, dtype=float) for k, v in data["running_time"].items()},
            walking_time={split3(k): float(v) for k, v in data["walking_time"].items()},
            transfer_demand={
                split3(k): np.array(v, dtype=float) for k, v in data["transfer_demand"].items()
            },
            alighting={k: np.array(v, dtype=float) for k, v in data["alighting"].items()},
            net_intermediate={
                k: np.array(v, dtype=float) for k, v in data["net_intermediate"].items()
            },
            initial_onboard={
                k: np.array(v, dtype=float) for k, v in data["initial_onboard"].items()
            },
            local_rate_lambda={
                split2(k): float(v) for k, v in data["local_rate_lambda"].items()
            },
            local_total_D={
                split2(k): np.array(v, dtype=float) for k, v in data["local_total_D"].items()
            },
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"malformed scenario record: {exc}") from exc


def save_scenarios(scenario_set: ScenarioSet, path: str | Path) -> None:
    scenario_set.validate()
    payload = {
        "format": _FORMAT_NAME,
        "version": _FORMAT_VERSION,
        "seed": scenario_set.seed,
        "provenance": scenario_set.provenance.value,
        "probability": scenario_set.probability.tolist(),
        "scenarios": [_scenario_to_json(s) for s in scenario_set.scenarios],
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_scenarios(path: str | Path) -> ScenarioSet:
    text = Path(path).read_text(encoding="utf-8")
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"scenario file {path} is corrupt: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != _FORMAT_NAME:
        raise FormatError(f"{path}: not a {_FORMAT_NAME} file")
    if payload.get("version") != _FORMAT_VERSION:
        raise FormatError(
            f"{path}: unsupported version {payload.get('version')!r} "
            f"(expected {_FORMAT_VERSION})"
        )
    return ScenarioSet(
        scenarios=[_scenario_from_json(rec) for rec in payload["scenarios"]],
        probability=np.array(payload["probability"], dtype=float),
        seed=int(payload["seed"]),
        provenance=Provenance(payload["provenance"]),
    )
