"""Static transit network: line/transfer-pair specs, validation, and the
plain-text configuration format.

All durations are minutes except the per-passenger service constants
(``boarding_time_bt``, ``alighting_time_at``, ``door_time``), which are
seconds in the config file and converted on access.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from .errors import ParseError, ValidationError

SECONDS_PER_MINUTE = 60.0


class FrequencyClass(Enum):
    HIGH = "high"
    LOW = "low"


@dataclass(frozen=True)
class LineSpec:
    """One bus line: headway band, stop sequence and service-time constants.

    ``node_sequence`` starts at the line's terminal and then lists the
    transfer nodes the line passes, in running order.
    """

    line_id: str
    headway_h: float
    node_sequence: tuple[str, ...]
    frequency_class: FrequencyClass
    headway_min: float = 0.0  # defaults to 0.9 * headway_h when left at 0
    headway_max: float = 0.0  # defaults to 1.1 * headway_h when left at 0
    boarding_time_bt: float = 1.96  # seconds per passenger
    alighting_time_at: float = 1.12  # seconds per passenger
    door_time: float = 7.43  # seconds, opening + closing

    def __post_init__(self) -> None:
        if self.headway_min == 0.0:
            object.__setattr__(self, "headway_min", 0.9 * self.headway_h)
        if self.headway_max == 0.0:
            object.__setattr__(self, "headway_max", 1.1 * self.headway_h)

    @property
    def terminal(self) -> str:
        return self.node_sequence[0]

    @property
    def bt_minutes(self) -> float:
        return self.boarding_time_bt / SECONDS_PER_MINUTE

    @property
    def at_minutes(self) -> float:
        return self.alighting_time_at / SECONDS_PER_MINUTE

    @property
    def n_segments(self) -> int:
        return len(self.node_sequence) - 1

    def validate(self) -> None:
        if self.headway_h <= 0:
            raise ValidationError(f"line {self.line_id}: headway_h must be > 0")
        if not (self.headway_min <= self.headway_h <= self.headway_max):
            raise ValidationError(
                f"line {self.line_id}: require headway_min <= headway_h <= headway_max, "
                f"got {self.headway_min} / {self.headway_h} / {self.headway_max}"
            )
        if self.headway_min <= 0:
            raise ValidationError(f"line {self.line_id}: headway_min must be > 0")
        if not self.node_sequence:
            raise ValidationError(f"line {self.line_id}: node_sequence is empty")
        if len(set(self.node_sequence)) != len(self.node_sequence):
            raise ValidationError(f"line {self.line_id}: node_sequence has repeats")
        if self.boarding_time_bt <= 0:
            raise ValidationError(f"line {self.line_id}: boarding_time_bt must be > 0")
        if self.alighting_time_at <= 0:
            raise ValidationError(f"line {self.line_id}: alighting_time_at must be > 0")
        if self.door_time < 0:
            raise ValidationError(f"line {self.line_id}: door_time must be >= 0")


@dataclass(frozen=True)
class TransferPairSpec:
    """A directed transfer movement at a node: feeder line -> connecting line."""

    node: str
    feeder_line: str
    connecting_line: str

    def validate(self) -> None:
        if self.feeder_line == self.connecting_line:
            raise ValidationError(
                f"pair at {self.node}: feeder_line equals connecting_line "
                f"({self.feeder_line})"
            )


@dataclass(frozen=True)
class CostWeights:
    """Objective weights (person-minute multipliers).

    ``c_dt_in_vehicle`` defaults to the mean of the out-of-vehicle delay
    weight and the in-vehicle weight, which is how the in-vehicle delay
    component is priced.
    """

    c_tw: float = 2.0
    c_vt: float = 1.5
    c_dt: float = 3.27
    c_dt_in_vehicle: float = 0.0  # derived when left at 0

    def __post_init__(self) -> None:
        if self.c_dt_in_vehicle == 0.0:
            object.__setattr__(self, "c_dt_in_vehicle", (self.c_dt + self.c_vt) / 2.0)

    def validate(self) -> None:
        for name in ("c_tw", "c_vt", "c_dt", "c_dt_in_vehicle"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"cost weight {name} must be > 0")


@dataclass(frozen=True)
class NetworkSpec:
    """Immutable description of the whole network plus global model constants.

    ``zone_boundary_frac_1``/``2`` position the two local-passenger arrival
    waves of a low-frequency line, as fractions of that line's headway before
    the published departure (outer and inner boundary respectively).
    ``longwait`` is the wait charged for a next-horizon connection; ``None``
    means "use the connecting line's headway".
    """

    horizon_T: float
    lines: tuple[LineSpec, ...]
    transfer_nodes: tuple[str, ...]
    transfer_pairs: tuple[TransferPairSpec, ...]
    zone_boundary_frac_1: float = 0.30
    zone_boundary_frac_2: float = 0.09
    first_group_share_nu: float = 0.80
    delay_threshold_Aths: float = 1.0
    unnecessary_threshold_Rths: float = 1.0
    longwait: float | None = None
    cost_weights: CostWeights = field(default_factory=CostWeights)

    def line(self, line_id: str) -> LineSpec:
        for ln in self.lines:
            if ln.line_id == line_id:
                return ln
        raise KeyError(line_id)

    def effective_longwait(self, connecting: LineSpec) -> float:
        return self.longwait if self.longwait is not None else connecting.headway_h

    def feeders_at(self, node: str, connecting_line: str) -> list[TransferPairSpec]:
        return [
            tp
            for tp in self.transfer_pairs
            if tp.node == node and tp.connecting_line == connecting_line
        ]

    def validate(self) -> None:
        ids = [ln.line_id for ln in self.lines]
        if len(set(ids)) != len(ids):
            raise ValidationError("lines: duplicate line_id")
        if not self.lines:
            raise ValidationError("lines: at least one line required")
        for ln in self.lines:
            ln.validate()
        if self.horizon_T <= max(ln.headway_h for ln in self.lines):
            raise ValidationError("horizon_T must exceed every line headway")
        if len(set(self.transfer_nodes)) != len(self.transfer_nodes):
            raise ValidationError("transfer_nodes: duplicates")
        node_set = set(self.transfer_nodes)
        for ln in self.lines:
            if ln.terminal in node_set:
                raise ValidationError(
                    f"line {ln.line_id}: terminal {ln.terminal} may not be a transfer node"
                )
            for nd in ln.node_sequence[1:]:
                if nd not in node_set:
                    raise ValidationError(
                        f"line {ln.line_id}: node_sequence entry {nd} is not a "
                        f"declared transfer node"
                    )
        if not (0.0 < self.zone_boundary_frac_1 < 1.0):
            raise ValidationError("zone_boundary_frac_1 must lie in (0, 1)")
        if not (0.0 < self.zone_boundary_frac_2 < self.zone_boundary_frac_1):
            raise ValidationError(
                "zone_boundary_frac_2 must lie in (0, zone_boundary_frac_1)"
            )
        if not (0.0 < self.first_group_share_nu <= 1.0):
            raise ValidationError("first_group_share_nu must lie in (0, 1]")
        if self.delay_threshold_Aths < 0:
            raise ValidationError("delay_threshold_Aths must be >= 0")
        if self.unnecessary_threshold_Rths < 0:
            raise ValidationError("unnecessary_threshold_Rths must be >= 0")
        if self.longwait is not None and self.longwait <= 0:
            raise ValidationError("longwait must be > 0 when set")
        self.cost_weights.validate()
        for tp in self.transfer_pairs:
            tp.validate()
            try:
                feeder = self.line(tp.feeder_line)
                connecting = self.line(tp.connecting_line)
            except KeyError as exc:
                raise ValidationError(
                    f"pair at {tp.node}: unknown line {exc.args[0]}"
                ) from None
            if tp.node not in node_set:
                raise ValidationError(
                    f"pair at {tp.node}: node is not a declared transfer node"
                )
            for ln in (feeder, connecting):
                if tp.node not in ln.node_sequence:
                    raise ValidationError(
                        f"pair at {tp.node}: node absent from node_sequence of "
                        f"line {ln.line_id}"
                    )
                if tp.node == ln.terminal:
                    raise ValidationError(
                        f"pair at {tp.node}: node is the terminal of line {ln.line_id}"
                    )


def trip_count(line: LineSpec, horizon_T: float) -> int:
    """Number of trips a line runs in the horizon: floor(T / h), at least 1."""
    if horizon_T <= 0:
        raise ValidationError("horizon_T must be > 0")
    return max(1, math.floor(horizon_T / line.headway_h))


# --------------------------------------------------------------------------
# Text config format
# --------------------------------------------------------------------------
#
# UTF-8, line oriented.  Sections:
#   [global]                      network-wide constants
#   [line <id>]                   one line per bus line
#   [node <id>]                   declares a transfer node (no keys)
#   [pair <node> <feeder> <connecting>]   a transfer direction (no keys)
# Keys are `name = value`; unknown keys are errors.  `#` starts a comment.

_GLOBAL_FLOAT_KEYS = {
    "horizon_T",
    "zone_boundary_frac_1",
    "zone_boundary_frac_2",
    "first_group_share_nu",
    "delay_threshold_Aths",
    "unnecessary_threshold_Rths",
    "longwait",
    "c_tw",
    "c_vt",
    "c_dt",
    "c_dt_in_vehicle",
}

_LINE_KEYS = {
    "headway_h",
    "headway_min",
    "headway_max",
    "frequency_class",
    "node_sequence",
    "boarding_time_bt",
    "alighting_time_at",
    "door_time",
}


def _parse_float(key: str, raw: str, lineno: int) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise ParseError(f"line {lineno}: key {key}: not a number: {raw!r}") from None
    if not math.isfinite(value):
        raise ParseError(f"line {lineno}: key {key}: non-finite value")
    return value


def parse_network(text: str) -> NetworkSpec:
    """Parse the config text into a validated :class:`NetworkSpec`."""
    globals_: dict[str, float] = {}
    line_sections: dict[str, dict[str, str]] = {}
    line_linenos: dict[str, int] = {}
    nodes: list[str] = []
    pairs: list[TransferPairSpec] = []
    current: dict[str, str] | None = None
    current_kind = ""

    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ParseError(f"line {lineno}: unterminated section header")
            head = stripped[1:-1].split()
            if not head:
                raise ParseError(f"line {lineno}: empty section header")
            kind = head[0]
            if kind == "global":
                if len(head) != 1:
                    raise ParseError(f"line {lineno}: [global] takes no arguments")
                current, current_kind = globals_, "global"  # type: ignore[assignment]
            elif kind == "line":
                if len(head) != 2:
                    raise ParseError(f"line {lineno}: expected [line <id>]")
                if head[1] in line_sections:
                    raise ParseError(f"line {lineno}: duplicate [line {head[1]}]")
                line_sections[head[1]] = {}
                line_linenos[head[1]] = lineno
                current, current_kind = line_sections[head[1]], "line"
            elif kind == "node":
                if len(head) != 2:
                    raise ParseError(f"line {lineno}: expected [node <id>]")
                nodes.append(head[1])
                current, current_kind = None, "node"
            elif kind == "pair":
                if len(head) != 4:
                    raise ParseError(
                        f"line {lineno}: expected [pair <node> <feeder> <connecting>]"
                    )
                pairs.append(TransferPairSpec(head[1], head[2], head[3]))
                current, current_kind = None, "pair"
            else:
                raise ParseError(f"line {lineno}: unknown section kind {kind!r}")
            continue
        if "=" not in stripped:
            raise ParseError(f"line {lineno}: expected `key = value`")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if current_kind in ("node", "pair"):
            raise ParseError(f"line {lineno}: [{current_kind}] sections take no keys")
        if current is None:
            raise ParseError(f"line {lineno}: key outside any section")
        if current_kind == "global":
            if key not in _GLOBAL_FLOAT_KEYS:
                raise ParseError(f"line {lineno}: unknown [global] key {key!r}")
            current[key] = _parse_float(key, value, lineno)
        else:
            if key not in _LINE_KEYS:
                raise ParseError(f"line {lineno}: unknown [line] key {key!r}")
            current[key] = value

    if "horizon_T" not in globals_:
        raise ParseError("[global] section must set horizon_T")

    lines = []
    for line_id, section in line_sections.items():
        lineno = line_linenos[line_id]
        if "headway_h" not in section:
            raise ParseError(f"line {lineno}: [line {line_id}] must set headway_h")
        if "node_sequence" not in section:
            raise ParseError(f"line {lineno}: [line {line_id}] must set node_sequence")
        if "frequency_class" not in section:
            raise ParseError(f"line {lineno}: [line {line_id}] must set frequency_class")
        fc_raw = section["frequency_class"].lower()
        try:
            fc = FrequencyClass(fc_raw)
        except ValueError:
            raise ParseError(
                f"line {lineno}: frequency_class must be 'high' or 'low', got {fc_raw!r}"
            ) from None
        kwargs = {
            key: _parse_float(key, section[key], lineno)
            for key in (
                "headway_h",
                "headway_min",
                "headway_max",
                "boarding_time_bt",
                "alighting_time_at",
                "door_time",
            )
            if key in section
        }
        lines.append(
            LineSpec(
                line_id=line_id,
                node_sequence=tuple(section["node_sequence"].split()),
                frequency_class=fc,
                **kwargs,
            )
        )

    weights = CostWeights(
        **{
            short: globals_[key]
            for key, short in (
                ("c_tw", "c_tw"),
                ("c_vt", "c_vt"),
                ("c_dt", "c_dt"),
                ("c_dt_in_vehicle", "c_dt_in_vehicle"),
            )
            if key in globals_
        }
    )
    spec_kwargs = {
        key: globals_[key]
        for key in (
            "zone_boundary_frac_1",
            "zone_boundary_frac_2",
            "first_group_share_nu",
            "delay_threshold_Aths",
            "unnecessary_threshold_Rths",
            "longwait",
        )
        if key in globals_
    }
    spec = NetworkSpec(
        horizon_T=globals_["horizon_T"],
        lines=tuple(lines),
        transfer_nodes=tuple(nodes),
        transfer_pairs=tuple(pairs),
        cost_weights=weights,
        **spec_kwargs,
    )
    spec.validate()
    return spec


def load_network(path: str | Path) -> NetworkSpec:
    """Read and validate a network config file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read network config {path}: {exc}") from exc
    return parse_network(text)


def serialize_network(spec: NetworkSpec) -> str:
    """Render a NetworkSpec back to config text; reparses to an equal spec."""
    out = ["[global]"]
    out.append(f"horizon_T = {spec.horizon_T!r}")
    out.append(f"zone_boundary_frac_1 = {spec.zone_boundary_frac_1!r}")
    out.append(f"zone_boundary_frac_2 = {spec.zone_boundary_frac_2!r}")
    out.append(f"first_group_share_nu = {spec.first_group_share_nu!r}")
    out.append(f"delay_threshold_Aths = {spec.delay_threshold_Aths!r}")
    out.append(f"unnecessary_threshold_Rths = {spec.unnecessary_threshold_Rths!r}")
    if spec.longwait is not None:
        out.append(f"longwait = {spec.longwait!r}")
    w = spec.cost_weights
    out.append(f"c_tw = {w.c_tw!r}")
    out.append(f"c_vt = {w.c_vt!r}")
    out.append(f"c_dt = {w.c_dt!r}")
    out.append(f"c_dt_in_vehicle = {w.c_dt_in_vehicle!r}")
    for node in spec.transfer_nodes:
        out.append(f"[node {node}]")
    for ln in spec.lines:
        out.append(f"[line {ln.line_id}]")
        out.append(f"headway_h = {ln.headway_h!r}")
        out.append(f"headway_min = {ln.headway_min!r}")
        out.append(f"headway_max = {ln.headway_max!r}")
        out.append(f"frequency_class = {ln.frequency_class.value}")
        out.append(f"node_sequence = {' '.join(ln.node_sequence)}")
        out.append(f"boarding_time_bt = {ln.boarding_time_bt!r}")
        out.append(f"alighting_time_at = {ln.alighting_time_at!r}")
        out.append(f"door_time = {ln.door_time!r}")
    for tp in spec.transfer_pairs:
        out.append(f"[pair {tp.node} {tp.feeder_line} {tp.connecting_line}]")
    return "\n".join(out) + "\n"


def save_network(spec: NetworkSpec, path: str | Path) -> None:
    Path(path).write_text(serialize_network(spec), encoding="utf-8")


def with_mode_defaults(spec: NetworkSpec, **overrides) -> NetworkSpec:
    """Return a copy with selected global constants replaced (test helper)."""
    new = replace(spec, **overrides)
    new.validate()
    return new
