"""Topology description data model.

The types here mirror the configuration document one-to-one.  Parsing of the
document lives in :mod:`topoforge.parser`; structural validation across
entities lives in :mod:`topoforge.validation`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import PathSyntaxError, SchemaError

NAME_RE = re.compile(r"^[A-Za-z0-9_-]+$")

RATE_UNITS = ("kbit", "mbit", "gbit")

_RATE_BITS = {"kbit": 1_000, "mbit": 1_000_000, "gbit": 1_000_000_000}

# Impairment option names that a timer may override.
TIMED_OPTIONS = (
    "mtu",
    "buffer_size",
    "rate",
    "delay",
    "jitter",
    "loss",
    "corrupt",
    "duplicate",
    "reorder",
)


@dataclass(frozen=True)
class Rate:
    """A link rate literal, e.g. ``100mbit``."""

    value: float
    unit: str  # one of RATE_UNITS

    @property
    def bits_per_second(self) -> float:
        return self.value * _RATE_BITS[self.unit]

    def __str__(self) -> str:
        return f"{format_number(self.value)}{self.unit}"


def format_number(x: float) -> str:
    """Render a float without a trailing ``.0`` when it is integral."""
    if x == int(x):
        return str(int(x))
    return repr(x)


def format_us(x: float) -> str:
    return f"{format_number(x)}us"


def format_percent(x: float) -> str:
    return f"{format_number(x)}%"


def parse_rate(value, *, entity=None, fieldname="rate") -> Rate:
    if isinstance(value, Rate):
        return value
    if not isinstance(value, str):
        raise SchemaError(
            f"rate must be a string like '100mbit', got {value!r}", entity, fieldname
        )
    m = re.fullmatch(r"\s*(\d+(?:\.\d+)?)\s*(kbit|mbit|gbit)\s*", value)
    if not m:
        raise SchemaError(f"cannot parse rate literal {value!r}", entity, fieldname)
    return Rate(float(m.group(1)), m.group(2))


def parse_duration_us(value, *, entity=None, fieldname=None) -> float:
    """Parse a time literal to microseconds.

    Accepts bare numbers (already microseconds) or strings with a ``us``,
    ``ms``, or ``s`` suffix.
    """
    if isinstance(value, bool):
        raise SchemaError(f"expected a duration, got {value!r}", entity, fieldname)
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        m = re.fullmatch(r"\s*(\d+(?:\.\d+)?)\s*(us|ms|s)?\s*", value)
        if m and m.group(1):
            scale = {"us": 1.0, "ms": 1_000.0, "s": 1_000_000.0, None: 1.0}[m.group(2)]
            return float(m.group(1)) * scale
    raise SchemaError(f"cannot parse time literal {value!r}", entity, fieldname)


def parse_percent(value, *, entity=None, fieldname=None) -> float:
    """Parse a percent literal; the trailing ``%`` is optional."""
    if isinstance(value, bool):
        raise SchemaError(f"expected a percentage, got {value!r}", entity, fieldname)
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        m = re.fullmatch(r"\s*(\d+(?:\.\d+)?)\s*%?\s*", value)
        if m:
            return float(m.group(1))
    raise SchemaError(f"cannot parse percent literal {value!r}", entity, fieldname)


def parse_strict_int(value, *, entity=None, fieldname=None) -> int:
    """Accept only actual integers; no string coercion."""
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"expected an integer, got {value!r}", entity, fieldname)
    return value


@dataclass(frozen=True)
class Path:
    """An ordered hop sequence, e.g. parsed from ``r1->r2->s1``."""

    hops: tuple[str, ...]

    def __post_init__(self):
        if not self.hops:
            raise PathSyntaxError("path has no hops")

    def __str__(self) -> str:
        return "->".join(self.hops)


def parse_path(s: str) -> Path:
    """Split a path string on the two-character ``->`` separator.

    Hops are trimmed of surrounding whitespace; empty hops (including those
    produced by a leading or trailing separator) are rejected.
    """
    if not isinstance(s, str) or not s.strip():
        raise PathSyntaxError(f"empty path string: {s!r}")
    hops = [h.strip() for h in s.split("->")]
    if any(not h for h in hops):
        raise PathSyntaxError(f"empty hop in path {s!r}")
    return Path(tuple(hops))


@dataclass(frozen=True)
class TimerSpec:
    """A scheduled temporary override of one impairment option."""

    option: str
    start: float  # seconds since container launch
    duration: float  # seconds the override stays active
    new_value: object  # typed like the named option

    @property
    def end(self) -> float:
        return self.start + self.duration


@dataclass(frozen=True)
class ImpairmentSpec:
    """Network options attached to one connection.

    Time values are canonical microseconds, percents are plain floats in
    [0, 100], and ``rate`` is a :class:`Rate`.
    """

    mtu: int | None = None
    buffer_size: int | None = None
    rate: Rate | None = None
    delay: float | None = None
    jitter: float | None = None
    loss: float | None = None
    corrupt: float | None = None
    duplicate: float | None = None
    reorder: float | None = None
    timers: tuple[TimerSpec, ...] = ()

    def is_empty(self) -> bool:
        return self == ImpairmentSpec()

    def option_value(self, option: str):
        return getattr(self, option)

    def replace_option(self, option: str, value) -> "ImpairmentSpec":
        from dataclasses import replace

        return replace(self, **{option: value})


@dataclass(frozen=True)
class ConnectionSpec:
    """A declared connection: a hop path plus optional url and impairments."""

    path: Path
    url: str | None = None  # present only on service-side connections
    options: ImpairmentSpec = field(default_factory=ImpairmentSpec)


@dataclass(frozen=True)
class EndpointSpec:
    entrypoint: str
    psize: int
    connections: tuple[ConnectionSpec, ...] = ()


@dataclass(frozen=True)
class ServiceSpec:
    name: str
    port: int
    endpoints: tuple[EndpointSpec, ...]

    kind = "service"


@dataclass(frozen=True)
class RouterSpec:
    name: str
    connections: tuple[ConnectionSpec, ...]

    kind = "router"


EntitySpec = ServiceSpec | RouterSpec


@dataclass(frozen=True)
class TopologyConfig:
    """The parsed, not yet validated, topology description.

    ``entities`` preserves document declaration order.
    """

    entities: dict[str, EntitySpec]

    def services(self) -> dict[str, ServiceSpec]:
        return {n: e for n, e in self.entities.items() if isinstance(e, ServiceSpec)}

    def routers(self) -> dict[str, RouterSpec]:
        return {n: e for n, e in self.entities.items() if isinstance(e, RouterSpec)}
