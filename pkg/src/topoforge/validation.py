"""Structural validation of a parsed topology.

Resolves every declared connection path against the entity table, enforces
the router linkage rule, builds the service call graph and the link graph,
and runs capacity checks for the chosen address family.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import (
    CapacityExceededError,
    CyclicCallGraphError,
    DanglingRouterConnectionError,
    DuplicatePortError,
    MissingRouterLinkageError,
    NonRouterIntermediateHopError,
    OptionRangeError,
    TerminalNotServiceError,
    TimerTargetMissingError,
    UnknownEntityError,
    UnknownEntrypointError,
    ValidationError,
)
from .model import (
    ConnectionSpec,
    ImpairmentSpec,
    RouterSpec,
    ServiceSpec,
    TimerSpec,
    TopologyConfig,
)

# Address-family capacity limits for the single-host deployment target.
MAX_SUBNETS_V4 = 2**22 - 1
MAX_HOSTS_PER_SUBNET_V4 = 2**10 - 2
MAX_SUBNETS_V6 = 2**64 - 1
MAX_HOSTS_PER_SUBNET_V6 = 2**64
MAX_SERVICES = 64_510

MIN_PORT = 1024
MAX_PORT = 65_535


def check_capacity(family: str, n_subnets: int, max_hosts_in_subnet: int, n_services: int):
    """Raise CapacityExceededError when a plan would exceed the address-family limits.

    Takes raw counts so boundary conditions can be tested without
    materializing huge topologies.
    """
    if family == "v4":
        max_subnets, max_hosts = MAX_SUBNETS_V4, MAX_HOSTS_PER_SUBNET_V4
    elif family == "v6":
        max_subnets, max_hosts = MAX_SUBNETS_V6, MAX_HOSTS_PER_SUBNET_V6
    else:
        raise ValueError(f"unknown address family {family!r}")
    if n_subnets > max_subnets:
        raise CapacityExceededError(
            f"{n_subnets} subnets exceed the {family} limit of {max_subnets}"
        )
    if max_hosts_in_subnet > max_hosts:
        raise CapacityExceededError(
            f"{max_hosts_in_subnet} hosts in one subnet exceed the {family} limit of {max_hosts}"
        )
    if n_services > MAX_SERVICES:
        raise CapacityExceededError(
            f"{n_services} services exceed the {MAX_SERVICES} host-exposable limit"
        )


def link_key(a: str, b: str) -> tuple[str, str]:
    """Canonical (sorted) name pair identifying an undirected link."""
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class ResolvedPath:
    """One service connection resolved to its full hop sequence."""

    service: str
    entrypoint: str
    conn_index: int
    hops: tuple[str, ...]  # [source service, routers..., terminal service]
    url: str
    options: ImpairmentSpec

    @property
    def terminal(self) -> str:
        return self.hops[-1]


@dataclass
class LinkEdge:
    """An undirected adjacency between two entities with merged impairments."""

    a: str
    b: str
    impairments: ImpairmentSpec = field(default_factory=ImpairmentSpec)
    # name of the entity whose connection declared each option (for iface attribution)
    declared_by: dict = field(default_factory=dict)

    @property
    def key(self) -> tuple[str, str]:
        return link_key(self.a, self.b)


@dataclass
class ValidatedTopology:
    services: dict[str, ServiceSpec]
    routers: dict[str, RouterSpec]
    call_graph: list[tuple[tuple[str, str], tuple[str, str]]]
    link_graph: dict[tuple[str, str], LinkEdge]
    path_table: list[ResolvedPath]
    warnings: list[str] = field(default_factory=list)

    @property
    def entities(self) -> dict:
        merged = {}
        merged.update(self.services)
        merged.update(self.routers)
        return merged

    _order: list[str] = field(default_factory=list)

    def ordered_entities(self) -> list[str]:
        return list(self._order)

    def direct_pairs(self) -> list[tuple[str, str]]:
        """Adjacent pairs that are direct service-to-service connections."""
        pairs = set()
        for rp in self.path_table:
            if len(rp.hops) == 2:
                pairs.add(link_key(rp.hops[0], rp.hops[1]))
        return sorted(pairs)

    def routed_pairs(self) -> list[tuple[str, str]]:
        """Adjacent pairs involving at least one router (per-link subnets)."""
        pairs = set()
        for rp in self.path_table:
            if len(rp.hops) == 2:
                continue
            for x, y in zip(rp.hops, rp.hops[1:]):
                pairs.add(link_key(x, y))
        return sorted(pairs)

    def unattached_entities(self) -> list[str]:
        """Entities that appear on no link subnet (need the bridge for connectivity)."""
        attached = set()
        for a, b in self.routed_pairs():
            attached.add(a)
            attached.add(b)
        for a, b in self.direct_pairs():
            attached.add(a)
            attached.add(b)
        return [n for n in self._order if n not in attached]

    def bridge_members(self) -> list[str]:
        """Entities attached to the shared bridge subnet, in declaration order."""
        members = set()
        for a, b in self.direct_pairs():
            members.add(a)
            members.add(b)
        members.update(self.unattached_entities())
        return [n for n in self._order if n in members]

    def needs_bridge(self) -> bool:
        return bool(self.bridge_members())


_PERCENT_OPTIONS = ("loss", "corrupt", "duplicate", "reorder")


def _check_impairments(entity: str, opt: ImpairmentSpec):
    if opt.mtu is not None and not (68 <= opt.mtu <= 65_535):
        raise OptionRangeError(f"mtu {opt.mtu} outside [68, 65535]", entity, "mtu")
    if opt.buffer_size is not None and opt.buffer_size < 1:
        raise OptionRangeError(f"buffer_size must be >= 1", entity, "buffer_size")
    if opt.rate is not None and opt.rate.value <= 0:
        raise OptionRangeError("rate must be > 0", entity, "rate")
    for key in ("delay", "jitter"):
        value = getattr(opt, key)
        if value is not None and value < 0:
            raise OptionRangeError(f"{key} must be >= 0", entity, key)
    for key in _PERCENT_OPTIONS:
        value = getattr(opt, key)
        if value is not None and not (0 <= value <= 100):
            raise OptionRangeError(f"{key} {value} outside [0, 100]", entity, key)
    if (opt.jitter or 0) > 0 and (opt.delay or 0) <= 0:
        raise OptionRangeError("jitter > 0 requires delay > 0", entity, "jitter")
    if (opt.reorder or 0) > 0 and (opt.delay or 0) <= 0:
        raise OptionRangeError("reorder > 0 requires delay > 0", entity, "reorder")
    for t in opt.timers:
        _check_timer(entity, opt, t)


def _check_timer(entity: str, base: ImpairmentSpec, t: TimerSpec):
    if base.option_value(t.option) is None:
        raise TimerTargetMissingError(
            f"timer overrides '{t.option}' but the connection sets no base value for it",
            entity,
            "timers",
        )
    # range-check newValue with the same rules as a base option value
    substituted = base.replace_option(t.option, t.new_value).replace_option("timers", ())
    _check_impairments(entity, substituted)


def validate(cfg: TopologyConfig, family: str = "v4") -> ValidatedTopology:
    """Resolve and validate a parsed topology for the given address family."""
    services = cfg.services()
    routers = cfg.routers()
    order = list(cfg.entities)
    warnings: list[str] = []

    _check_ports(services, warnings)

    # resolve every service connection to a full hop sequence
    path_table: list[ResolvedPath] = []
    for sname, svc in services.items():
        for ep in svc.endpoints:
            for ci, conn in enumerate(ep.connections):
                path_table.append(
                    _resolve_service_path(cfg, sname, ep.entrypoint, ci, conn)
                )

    # router connection paths must at least name known entities
    for rname, rtr in routers.items():
        for conn in rtr.connections:
            if len(set(conn.path.hops)) != len(conn.path.hops):
                raise ValidationError("repeated hop in path", rname, "path")
            for hop in conn.path.hops:
                if hop not in cfg.entities:
                    raise UnknownEntityError(f"unknown entity '{hop}' in path", rname, "path")
            _check_impairments(rname, conn.options)

    # router linkage rule: every router on a resolved path must declare a
    # connection whose first hop is the path's next hop
    consumed: set[tuple[str, int]] = set()
    for rp in path_table:
        for i in range(1, len(rp.hops) - 1):
            router = rp.hops[i]
            nxt = rp.hops[i + 1]
            match = _router_connection_for(routers[router], nxt)
            if match is None:
                raise MissingRouterLinkageError(router, nxt, field="connections")
            consumed.add((router, match))

    referenced_routers = {h for rp in path_table for h in rp.hops[1:-1]}
    for rname, rtr in routers.items():
        if rname not in referenced_routers:
            warnings.append(f"router '{rname}' is not referenced by any path")
            continue
        for ci in range(len(rtr.connections)):
            if (rname, ci) not in consumed:
                raise DanglingRouterConnectionError(
                    f"connection {ci} (path '{rtr.connections[ci].path}') matches no service path",
                    rname,
                    "connections",
                )

    call_graph = _build_call_graph(cfg, path_table)
    _reject_cycles(call_graph)
    link_graph = _build_link_graph(cfg, path_table, routers)

    vt = ValidatedTopology(
        services=services,
        routers=routers,
        call_graph=call_graph,
        link_graph=link_graph,
        path_table=path_table,
        warnings=warnings,
        _order=order,
    )

    n_subnets = len(vt.routed_pairs()) + (1 if vt.needs_bridge() else 0)
    max_hosts = max(
        [3] * bool(vt.routed_pairs()) + [len(vt.bridge_members()) + 1], default=0
    )
    check_capacity(family, n_subnets, max_hosts, len(services))
    return vt


def _check_ports(services: dict[str, ServiceSpec], warnings: list[str]):
    seen: dict[int, str] = {}
    for name, svc in services.items():
        if not (1 <= svc.port <= MAX_PORT):
            raise OptionRangeError(
                f"port {svc.port} outside [1, {MAX_PORT}]", name, "port"
            )
        if svc.port < MIN_PORT:
            # system ports work on the host but are best avoided
            warnings.append(
                f"service '{name}' uses system port {svc.port} (below {MIN_PORT})"
            )
        if svc.port in seen:
            raise DuplicatePortError(
                f"port {svc.port} already used by '{seen[svc.port]}'", name, "port"
            )
        seen[svc.port] = name


def _resolve_service_path(cfg, sname, entrypoint, ci, conn: ConnectionSpec) -> ResolvedPath:
    hops = conn.path.hops
    if len(set(hops)) != len(hops) or sname in hops:
        raise ValidationError("repeated hop in path", sname, "path")
    for hop in hops:
        if hop not in cfg.entities:
            raise UnknownEntityError(f"unknown entity '{hop}' in path", sname, "path")
    for hop in hops[:-1]:
        if not isinstance(cfg.entities[hop], RouterSpec):
            raise NonRouterIntermediateHopError(
                f"intermediate hop '{hop}' is not a router", sname, "path"
            )
    terminal = hops[-1]
    target = cfg.entities[terminal]
    if not isinstance(target, ServiceSpec):
        raise TerminalNotServiceError(
            f"terminal hop '{terminal}' is not a service", sname, "path"
        )
    if not any(ep.entrypoint == conn.url for ep in target.endpoints):
        raise UnknownEntrypointError(
            f"target service '{terminal}' has no entrypoint '{conn.url}'", sname, "url"
        )
    _check_impairments(sname, conn.options)
    return ResolvedPath(
        service=sname,
        entrypoint=entrypoint,
        conn_index=ci,
        hops=(sname,) + hops,
        url=conn.url,
        options=conn.options,
    )


def _router_connection_for(rtr: RouterSpec, next_hop: str) -> int | None:
    for i, conn in enumerate(rtr.connections):
        if conn.path.hops[0] == next_hop:
            return i
    return None


def _build_call_graph(cfg, path_table):
    edges = []
    for rp in path_table:
        edges.append(((rp.service, rp.entrypoint), (rp.terminal, rp.url)))
    return edges


def _reject_cycles(call_graph):
    adj: dict[tuple[str, str], list[tuple[str, str]]] = {}
    for src, dst in call_graph:
        adj.setdefault(src, []).append(dst)
        adj.setdefault(dst, [])
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {n: WHITE for n in adj}
    for start in adj:
        if color[start] != WHITE:
            continue
        stack = [(start, iter(adj[start]))]
        color[start] = GRAY
        trail = [start]
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if color[nxt] == GRAY:
                    i = trail.index(nxt)
                    raise CyclicCallGraphError(trail[i:] + [nxt])
                if color[nxt] == WHITE:
                    color[nxt] = GRAY
                    trail.append(nxt)
                    stack.append((nxt, iter(adj[nxt])))
                    advanced = True
                    break
            if not advanced:
                color[node] = BLACK
                trail.pop()
                stack.pop()


def _merge_impairments(edge: LinkEdge, opt: ImpairmentSpec, declarer: str, warnings=None):
    for name in (
        "mtu",
        "buffer_size",
        "rate",
        "delay",
        "jitter",
        "loss",
        "corrupt",
        "duplicate",
        "reorder",
        "timers",
    ):
        value = getattr(opt, name)
        if value is None or (name == "timers" and not value):
            continue
        current = getattr(edge.impairments, name)
        if current is None or (name == "timers" and not current):
            edge.impairments = edge.impairments.replace_option(name, value)
            edge.declared_by[name] = declarer
        # identical re-declarations are harmless; conflicts keep the first


def _build_link_graph(cfg, path_table, routers):
    links: dict[tuple[str, str], LinkEdge] = {}

    def edge(a, b):
        key = link_key(a, b)
        if key not in links:
            links[key] = LinkEdge(a=key[0], b=key[1])
        return links[key]

    for rp in path_table:
        # the declaring service's options govern its first adjacent pair
        _merge_impairments(edge(rp.hops[0], rp.hops[1]), rp.options, rp.hops[0])
        # each router's matched connection governs the pair toward its next hop
        for i in range(1, len(rp.hops) - 1):
            router, nxt = rp.hops[i], rp.hops[i + 1]
            ci = _router_connection_for(routers[router], nxt)
            conn = routers[router].connections[ci]
            _merge_impairments(edge(router, nxt), conn.options, router)
    return links
