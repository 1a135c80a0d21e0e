"""Parsing and serialization of the topology configuration document.

The document is YAML: a top-level mapping of entity name to entity body,
following the service/router templates.  Unknown keys anywhere are hard
errors; numeric fields are never coerced from strings.
"""

from __future__ import annotations

import yaml

from .errors import ConfigSyntaxError, SchemaError
from .model import (
    NAME_RE,
    TIMED_OPTIONS,
    ConnectionSpec,
    EndpointSpec,
    ImpairmentSpec,
    Path,
    Rate,
    RouterSpec,
    ServiceSpec,
    TimerSpec,
    TopologyConfig,
    format_percent,
    format_us,
    parse_duration_us,
    parse_path,
    parse_percent,
    parse_rate,
    parse_strict_int,
)

_SERVICE_KEYS = {"type", "port", "endpoints"}
_ROUTER_KEYS = {"type", "connections"}
_ENDPOINT_KEYS = {"entrypoint", "psize", "connections"}
_OPTION_KEYS = set(TIMED_OPTIONS) | {"timers"}
_SERVICE_CONN_KEYS = {"path", "url"} | _OPTION_KEYS
_ROUTER_CONN_KEYS = {"path"} | _OPTION_KEYS
_TIMER_KEYS = {"option", "start", "duration", "newValue"}


class _StrictLoader(yaml.SafeLoader):
    """SafeLoader that rejects duplicate mapping keys with a line number."""


def _construct_mapping(loader, node, deep=False):
    mapping = {}
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=deep)
        if key in mapping:
            raise ConfigSyntaxError(
                f"duplicate key {key!r}", line=key_node.start_mark.line + 1
            )
        mapping[key] = loader.construct_object(value_node, deep=deep)
    return mapping


_StrictLoader.add_constructor(
    yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping
)


def parse_config(text: str) -> TopologyConfig:
    """Parse a configuration document into a :class:`TopologyConfig`."""
    try:
        doc = yaml.load(text, Loader=_StrictLoader)
    except ConfigSyntaxError:
        raise
    except yaml.YAMLError as exc:
        line = None
        mark = getattr(exc, "problem_mark", None)
        if mark is not None:
            line = mark.line + 1
        raise ConfigSyntaxError(str(exc), line=line) from exc
    if not isinstance(doc, dict) or not doc:
        raise SchemaError("document must be a non-empty mapping of entities")

    entities = {}
    for name, body in doc.items():
        if not isinstance(name, str) or not NAME_RE.match(name):
            raise SchemaError(
                f"invalid entity name {name!r} (expected [A-Za-z0-9_-]+)"
            )
        entities[name] = _parse_entity(name, body)
    if not any(isinstance(e, ServiceSpec) for e in entities.values()):
        raise SchemaError("at least one service must be specified")
    return TopologyConfig(entities=entities)


def _require_mapping(value, entity, what):
    if not isinstance(value, dict):
        raise SchemaError(f"{what} must be a mapping, got {type(value).__name__}", entity)
    return value


def _check_keys(body: dict, allowed: set, entity: str, what: str):
    unknown = set(body) - allowed
    if unknown:
        raise SchemaError(
            f"unknown key(s) in {what}: {', '.join(sorted(map(str, unknown)))}", entity
        )


def _parse_entity(name: str, body) -> ServiceSpec | RouterSpec:
    _require_mapping(body, name, "entity body")
    kind = body.get("type")
    if kind == "service":
        return _parse_service(name, body)
    if kind == "router":
        return _parse_router(name, body)
    raise SchemaError(
        f"type must be 'service' or 'router', got {kind!r}", name, "type"
    )


def _parse_service(name: str, body: dict) -> ServiceSpec:
    _check_keys(body, _SERVICE_KEYS, name, "service")
    if "port" not in body:
        raise SchemaError("missing required field", name, "port")
    port = parse_strict_int(body["port"], entity=name, fieldname="port")
    eps = body.get("endpoints")
    if not isinstance(eps, list) or not eps:
        raise SchemaError("endpoints must be a non-empty list", name, "endpoints")
    endpoints = tuple(_parse_endpoint(name, ep) for ep in eps)
    seen = set()
    for ep in endpoints:
        if ep.entrypoint in seen:
            raise SchemaError(
                f"duplicate entrypoint {ep.entrypoint!r}", name, "endpoints"
            )
        seen.add(ep.entrypoint)
    return ServiceSpec(name=name, port=port, endpoints=endpoints)


def _parse_endpoint(entity: str, body) -> EndpointSpec:
    _require_mapping(body, entity, "endpoint")
    _check_keys(body, _ENDPOINT_KEYS, entity, "endpoint")
    entrypoint = body.get("entrypoint")
    if not isinstance(entrypoint, str) or not entrypoint.startswith("/"):
        raise SchemaError(
            f"entrypoint must be a URL path starting with '/', got {entrypoint!r}",
            entity,
            "entrypoint",
        )
    if "psize" not in body:
        raise SchemaError("missing required field", entity, "psize")
    psize = parse_strict_int(body["psize"], entity=entity, fieldname="psize")
    if psize < 1:
        raise SchemaError(f"psize must be >= 1, got {psize}", entity, "psize")
    conns = body.get("connections", [])
    if conns is None:
        conns = []
    if not isinstance(conns, list):
        raise SchemaError("connections must be a list", entity, "connections")
    connections = tuple(_parse_connection(entity, c, service_side=True) for c in conns)
    return EndpointSpec(entrypoint=entrypoint, psize=psize, connections=connections)


def _parse_router(name: str, body: dict) -> RouterSpec:
    _check_keys(body, _ROUTER_KEYS, name, "router")
    conns = body.get("connections", [])
    if conns is None:
        conns = []
    if not isinstance(conns, list):
        raise SchemaError("connections must be a list", name, "connections")
    connections = tuple(_parse_connection(name, c, service_side=False) for c in conns)
    return RouterSpec(name=name, connections=connections)


def _parse_connection(entity: str, body, service_side: bool) -> ConnectionSpec:
    _require_mapping(body, entity, "connection")
    allowed = _SERVICE_CONN_KEYS if service_side else _ROUTER_CONN_KEYS
    _check_keys(body, allowed, entity, "connection")
    if "path" not in body:
        raise SchemaError("connection is missing 'path'", entity, "path")
    path = parse_path(body["path"]) if not isinstance(body["path"], Path) else body["path"]
    url = body.get("url")
    if service_side:
        if not isinstance(url, str) or not url.startswith("/"):
            raise SchemaError(
                f"service connection needs a url starting with '/', got {url!r}",
                entity,
                "url",
            )
    options = _parse_options(entity, body)
    return ConnectionSpec(path=path, url=url, options=options)


def _parse_options(entity: str, body: dict) -> ImpairmentSpec:
    kwargs = {}
    if "mtu" in body:
        kwargs["mtu"] = parse_strict_int(body["mtu"], entity=entity, fieldname="mtu")
    if "buffer_size" in body:
        kwargs["buffer_size"] = parse_strict_int(
            body["buffer_size"], entity=entity, fieldname="buffer_size"
        )
    if "rate" in body:
        kwargs["rate"] = parse_rate(body["rate"], entity=entity)
    for key in ("delay", "jitter"):
        if key in body:
            kwargs[key] = parse_duration_us(body[key], entity=entity, fieldname=key)
    for key in ("loss", "corrupt", "duplicate", "reorder"):
        if key in body:
            kwargs[key] = parse_percent(body[key], entity=entity, fieldname=key)
    timers = body.get("timers", [])
    if timers is None:
        timers = []
    if not isinstance(timers, list):
        raise SchemaError("timers must be a list", entity, "timers")
    kwargs["timers"] = tuple(_parse_timer(entity, t) for t in timers)
    return ImpairmentSpec(**kwargs)


def _parse_timer_value(entity: str, option: str, value):
    if option in ("mtu", "buffer_size"):
        return parse_strict_int(value, entity=entity, fieldname="newValue")
    if option == "rate":
        return parse_rate(value, entity=entity, fieldname="newValue")
    if option in ("delay", "jitter"):
        return parse_duration_us(value, entity=entity, fieldname="newValue")
    return parse_percent(value, entity=entity, fieldname="newValue")


def _parse_timer(entity: str, body) -> TimerSpec:
    _require_mapping(body, entity, "timer")
    _check_keys(body, _TIMER_KEYS, entity, "timer")
    option = body.get("option")
    if option not in TIMED_OPTIONS:
        raise SchemaError(
            f"timer option must be one of {', '.join(TIMED_OPTIONS)}, got {option!r}",
            entity,
            "option",
        )
    for key in ("start", "duration", "newValue"):
        if key not in body:
            raise SchemaError(f"timer is missing '{key}'", entity, key)
    start = body["start"]
    duration = body["duration"]
    for key, value in (("start", start), ("duration", duration)):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"timer {key} must be a number", entity, key)
    if start < 0:
        raise SchemaError("timer start must be >= 0", entity, "start")
    if duration <= 0:
        raise SchemaError("timer duration must be > 0", entity, "duration")
    new_value = _parse_timer_value(entity, option, body["newValue"])
    return TimerSpec(option=option, start=float(start), duration=float(duration), new_value=new_value)


# --- serialization -----------------------------------------------------------


def _options_to_dict(opt: ImpairmentSpec) -> dict:
    out = {}
    if opt.mtu is not None:
        out["mtu"] = opt.mtu
    if opt.buffer_size is not None:
        out["buffer_size"] = opt.buffer_size
    if opt.rate is not None:
        out["rate"] = str(opt.rate)
    if opt.delay is not None:
        out["delay"] = format_us(opt.delay)
    if opt.jitter is not None:
        out["jitter"] = format_us(opt.jitter)
    for key in ("loss", "corrupt", "duplicate", "reorder"):
        value = getattr(opt, key)
        if value is not None:
            out[key] = format_percent(value)
    if opt.timers:
        out["timers"] = [
            {
                "option": t.option,
                "start": t.start if t.start != int(t.start) else int(t.start),
                "duration": t.duration if t.duration != int(t.duration) else int(t.duration),
                "newValue": _timer_value_literal(t),
            }
            for t in opt.timers
        ]
    return out


def _timer_value_literal(t: TimerSpec):
    if t.option in ("mtu", "buffer_size"):
        return t.new_value
    if t.option == "rate":
        return str(t.new_value)
    if t.option in ("delay", "jitter"):
        return format_us(t.new_value)
    return format_percent(t.new_value)


def config_to_dict(cfg: TopologyConfig) -> dict:
    doc = {}
    for name, ent in cfg.entities.items():
        if isinstance(ent, ServiceSpec):
            doc[name] = {
                "type": "service",
                "port": ent.port,
                "endpoints": [
                    {
                        "entrypoint": ep.entrypoint,
                        "psize": ep.psize,
                        **(
                            {
                                "connections": [
                                    {"path": str(c.path), "url": c.url, **_options_to_dict(c.options)}
                                    for c in ep.connections
                                ]
                            }
                            if ep.connections
                            else {}
                        ),
                    }
                    for ep in ent.endpoints
                ],
            }
        else:
            doc[name] = {
                "type": "router",
                "connections": [
                    {"path": str(c.path), **_options_to_dict(c.options)}
                    for c in ent.connections
                ],
            }
    return doc


def serialize_config(cfg: TopologyConfig) -> str:
    """Render a TopologyConfig back to the config document format.

    ``parse_config(serialize_config(cfg)) == cfg`` holds for any parsed cfg.
    """
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


# re-export for API symmetry with parse_config
__all__ = ["parse_config", "parse_path", "serialize_config", "config_to_dict"]
