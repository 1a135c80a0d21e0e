"""Deterministic network planning.

Allocates subnets and addresses, plans static routes so traffic follows the
declared hop sequences (and replies retrace them), and renders per-container
setup command sequences plus timer scripts in the ``ip``/``tc`` dialect.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field

from .errors import CapacityExceededError, ConflictingRouteError
from .model import (
    ImpairmentSpec,
    TimerSpec,
    format_number,
    format_percent,
    format_us,
)
from .validation import ValidatedTopology, check_capacity, link_key

DEFAULT_BASE_V4 = "10.0.0.0/8"
DEFAULT_BASE_V6 = "fd00::/16"

PREFIX_V4 = 22
PREFIX_V6 = 64

BRIDGE_NET = "bridge"


@dataclass(frozen=True)
class Subnet:
    name: str
    cidr: str
    role: str  # "bridge" | "link"
    link: tuple[str, str] | None = None

    @property
    def network(self):
        return ipaddress.ip_network(self.cidr)


@dataclass
class NetPlan:
    family: str
    subnets: list[Subnet] = field(default_factory=list)
    # (entity, subnet name) -> address string
    interfaces: dict[tuple[str, str], str] = field(default_factory=dict)
    host_ports: dict[str, int] = field(default_factory=dict)
    setup: dict[str, list[str]] = field(default_factory=dict)
    timer_scripts: dict[str, str] = field(default_factory=dict)
    # (entity, subnet name) -> in-container interface name
    iface_names: dict[tuple[str, str], str] = field(default_factory=dict)

    def subnet_by_name(self, name: str) -> Subnet:
        for s in self.subnets:
            if s.name == name:
                return s
        raise KeyError(name)

    def subnet_of_pair(self, a: str, b: str) -> Subnet:
        key = link_key(a, b)
        for s in self.subnets:
            if s.role == "link" and s.link == key:
                return s
        raise KeyError(f"no link subnet for pair {key}")

    def address(self, entity: str, subnet_name: str) -> str:
        return self.interfaces[(entity, subnet_name)]

    def attachments(self, entity: str) -> list[tuple[str, str]]:
        """(subnet name, address) pairs for one entity, in subnet order."""
        out = []
        for s in self.subnets:
            key = (entity, s.name)
            if key in self.interfaces:
                out.append((s.name, self.interfaces[key]))
        return out


def link_subnet_name(a: str, b: str) -> str:
    a, b = link_key(a, b)
    return f"link_{a}_{b}"


def allocate_networks(
    t: ValidatedTopology,
    family: str = "v4",
    base: str | None = None,
    extra_bridge_members: tuple[str, ...] = (),
) -> NetPlan:
    """Allocate subnets, interface addresses, and host ports.

    Deterministic: link pairs in lexicographic order step sequential subnets
    out of ``base``; within each subnet, members sorted by name get host
    parts from .2 (or ::2) upward.
    """
    prefix = PREFIX_V4 if family == "v4" else PREFIX_V6
    base = base or (DEFAULT_BASE_V4 if family == "v4" else DEFAULT_BASE_V6)
    space = ipaddress.ip_network(base)
    if space.prefixlen > prefix:
        raise CapacityExceededError(
            f"base network {base} is smaller than the /{prefix} subnet size"
        )
    pool = space.subnets(new_prefix=prefix)

    np = NetPlan(family=family)
    bridge_members = list(t.bridge_members()) + [
        m for m in extra_bridge_members if m not in t.bridge_members()
    ]
    routed = t.routed_pairs()

    n_subnets = len(routed) + (1 if bridge_members else 0)
    max_hosts = max([3] * bool(routed) + [len(bridge_members) + 1], default=0)
    check_capacity(family, n_subnets, max_hosts, len(t.services))

    members_of: list[tuple[Subnet, list[str]]] = []
    if bridge_members:
        net = next(pool)
        sn = Subnet(name=BRIDGE_NET, cidr=str(net), role="bridge")
        np.subnets.append(sn)
        members_of.append((sn, sorted(bridge_members)))
    for a, b in routed:
        net = next(pool)
        sn = Subnet(name=link_subnet_name(a, b), cidr=str(net), role="link", link=(a, b))
        np.subnets.append(sn)
        members_of.append((sn, sorted([a, b])))

    for sn, members in members_of:
        hosts = sn.network.network_address + 2  # .1/::1 is the docker gateway
        for i, member in enumerate(members):
            np.interfaces[(member, sn.name)] = str(hosts + i)

    # interface names follow subnet allocation order per entity
    counters: dict[str, int] = {}
    for sn in np.subnets:
        for (entity, sname) in list(np.interfaces):
            if sname != sn.name:
                continue
            idx = counters.get(entity, 0)
            counters[entity] = idx + 1
            np.iface_names[(entity, sname)] = f"eth{idx}"

    for name, svc in t.services.items():
        np.host_ports[name] = svc.port
    return np


# --- timer semantics ---------------------------------------------------------


def timer_window(start: float, duration: float) -> tuple[float, float]:
    """Active window of a timer override, in seconds since container launch.

    Window-relative reading: the override is active over
    [start, start + duration).  This is the single place to change if the
    launch-relative reading (active until t = duration) is wanted instead.
    """
    return (start, start + duration)


def effective_impairments(base: ImpairmentSpec, t: float) -> ImpairmentSpec:
    """Impairment values in force at virtual/wall time ``t`` seconds.

    Overlapping timers on the same option: the latest-starting active
    window wins (last writer).
    """
    eff = base
    for option in {tm.option for tm in base.timers}:
        winner = None
        for tm in base.timers:
            if tm.option != option:
                continue
            lo, hi = timer_window(tm.start, tm.duration)
            if lo <= t < hi and (winner is None or tm.start >= winner.start):
                winner = tm
        if winner is not None:
            eff = eff.replace_option(option, winner.new_value)
    return eff


def timer_boundaries(timers: tuple[TimerSpec, ...]) -> list[float]:
    times = set()
    for tm in timers:
        lo, hi = timer_window(tm.start, tm.duration)
        times.add(lo)
        times.add(hi)
    return sorted(times)


# --- command rendering -------------------------------------------------------


def _netem_params(opt: ImpairmentSpec) -> str:
    """netem parameter string with fixed ordering:
    limit, rate, delay <d> <jitter>, loss, corrupt, duplicate, reorder."""
    parts = []
    if opt.buffer_size is not None:
        parts.append(f"limit {opt.buffer_size}")
    if opt.rate is not None:
        parts.append(f"rate {opt.rate}")
    if opt.delay is not None:
        if opt.jitter is not None:
            parts.append(f"delay {format_us(opt.delay)} {format_us(opt.jitter)}")
        else:
            parts.append(f"delay {format_us(opt.delay)}")
    for key in ("loss", "corrupt", "duplicate", "reorder"):
        value = getattr(opt, key)
        if value is not None:
            parts.append(f"{key} {format_percent(value)}")
    return " ".join(parts)


def render_impairments(opt: ImpairmentSpec, iface: str) -> list[str]:
    """Setup commands applying a connection's impairments on one interface.

    Fixed order: MTU first, then a single netem queuing discipline carrying
    everything else.  An empty spec renders nothing.
    """
    cmds = []
    if opt.mtu is not None:
        cmds.append(f"ip link set dev {iface} mtu {opt.mtu}")
    params = _netem_params(opt)
    if params:
        cmds.append(f"tc qdisc add dev {iface} root netem {params}")
    return cmds


def _change_commands(prev: ImpairmentSpec, new: ImpairmentSpec, iface: str) -> list[str]:
    cmds = []
    if new.mtu != prev.mtu and new.mtu is not None:
        cmds.append(f"ip link set dev {iface} mtu {new.mtu}")
    prev_net = _netem_params(prev.replace_option("mtu", None))
    new_net = _netem_params(new.replace_option("mtu", None))
    if new_net != prev_net and new_net:
        cmds.append(f"tc qdisc change dev {iface} root netem {new_net}")
    return cmds


def timer_events(
    timers: tuple[TimerSpec, ...], base: ImpairmentSpec, iface: str
) -> list[tuple[float, list[str]]]:
    """(time, commands) pairs realizing the timer schedule on one interface."""
    base = base.replace_option("timers", ())
    full = base.replace_option("timers", tuple(timers))
    events = []
    prev = base
    for t in timer_boundaries(timers):
        now = effective_impairments(full, t).replace_option("timers", ())
        cmds = _change_commands(prev, now, iface)
        if cmds:
            events.append((t, cmds))
        prev = now
    return events


def _script_from_events(events: list[tuple[float, list[str]]]) -> str:
    if not events:
        return ""
    lines = ["#!/bin/sh", "# scheduled impairment overrides"]
    now = 0.0
    for t, cmds in sorted(events, key=lambda e: e[0]):
        if t > now:
            lines.append(f"sleep {format_number(t - now)}")
            now = t
        lines.extend(cmds)
    return "\n".join(lines) + "\n"


def render_timer_script(
    timers: tuple[TimerSpec, ...], base: ImpairmentSpec, iface: str
) -> str:
    """POSIX shell script applying timer overrides and restoring base values.

    Empty timer list renders an empty script.
    """
    return _script_from_events(timer_events(timers, base, iface))


# --- route planning ----------------------------------------------------------


def _route_cmd(family: str, dst: str, via: str) -> str:
    if family == "v4":
        return f"ip route add {dst}/32 via {via}"
    return f"ip -6 route add {dst}/128 via {via}"


def _forward_cmd(family: str) -> str:
    if family == "v4":
        return "sysctl -w net.ipv4.ip_forward=1"
    return "sysctl -w net.ipv6.conf.all.forwarding=1"


def plan_routes(t: ValidatedTopology, np: NetPlan) -> NetPlan:
    """Add per-entity setup commands: forwarding, impairments, static routes.

    For each resolved path the source gets a host route to the destination
    via the first router; each router forwards toward the destination via
    its next hop; reverse routes mirror the path so replies retrace it.
    """
    setup: dict[str, list[str]] = {name: [] for name in t.ordered_entities()}
    referenced_routers = {h for rp in t.path_table for h in rp.hops[1:-1]}
    for rname in t.routers:
        if rname in referenced_routers:
            setup[rname].append(_forward_cmd(np.family))

    # impairments, in declaration order of the declaring entity
    for name in t.ordered_entities():
        for conn, first_hop in _declared_connections(t, name):
            iface = _iface_toward(t, np, name, first_hop)
            if iface is None:
                continue  # unreferenced router connection: no subnet exists
            for cmd in render_impairments(conn.options, iface):
                if cmd not in setup[name]:
                    setup[name].append(cmd)

    # (entity, destination address) -> gateway; a second gateway for the same
    # destination cannot be realized with destination-based routing
    gateway_for: dict[tuple[str, str], str] = {}

    def add(entity: str, dst: str, via: str):
        prev = gateway_for.setdefault((entity, dst), via)
        if prev != via:
            raise ConflictingRouteError(
                f"needs routes to {dst} via both {prev} and {via}", entity, "path"
            )
        cmd = _route_cmd(np.family, dst, via)
        if cmd not in setup[entity]:
            setup[entity].append(cmd)

    for rp in t.path_table:
        hops = rp.hops
        if len(hops) < 3:
            continue  # direct connection: on-link on the bridge subnet
        dst_ip = np.address(hops[-1], np.subnet_of_pair(hops[-2], hops[-1]).name)
        src_ip = np.address(hops[0], np.subnet_of_pair(hops[0], hops[1]).name)
        # forward direction
        add(hops[0], dst_ip, _addr_on(np, hops[1], hops[0], hops[1]))
        for i in range(1, len(hops) - 2):
            add(hops[i], dst_ip, _addr_on(np, hops[i + 1], hops[i], hops[i + 1]))
        # reverse direction
        add(hops[-1], src_ip, _addr_on(np, hops[-2], hops[-2], hops[-1]))
        for i in range(len(hops) - 2, 1, -1):
            add(hops[i], src_ip, _addr_on(np, hops[i - 1], hops[i - 1], hops[i]))

    np.setup = {name: cmds for name, cmds in setup.items() if cmds}
    return np


def _addr_on(np: NetPlan, entity: str, a: str, b: str) -> str:
    return np.address(entity, np.subnet_of_pair(a, b).name)


def _declared_connections(t: ValidatedTopology, name: str):
    """(connection, first hop) pairs declared by one entity, in order."""
    ent = t.entities.get(name)
    if ent is None:
        return
    if name in t.services:
        for ep in ent.endpoints:
            for conn in ep.connections:
                yield conn, conn.path.hops[0]
    else:
        for conn in ent.connections:
            yield conn, conn.path.hops[0]


def _iface_toward(t: ValidatedTopology, np: NetPlan, name: str, first_hop: str) -> str | None:
    key = link_key(name, first_hop)
    if key in [s.link for s in np.subnets if s.role == "link"]:
        return np.iface_names[(name, link_subnet_name(name, first_hop))]
    if (name, BRIDGE_NET) in np.interfaces and (first_hop, BRIDGE_NET) in np.interfaces:
        return np.iface_names[(name, BRIDGE_NET)]
    return None


def plan_timer_scripts(t: ValidatedTopology, np: NetPlan) -> NetPlan:
    """Render one combined timer script per entity that declares timers."""
    for name in t.ordered_entities():
        events: list[tuple[float, list[str]]] = []
        for conn, first_hop in _declared_connections(t, name):
            if not conn.options.timers:
                continue
            iface = _iface_toward(t, np, name, first_hop)
            if iface is None:
                continue
            events.extend(timer_events(conn.options.timers, conn.options, iface))
        script = _script_from_events(events)
        if script:
            np.timer_scripts[name] = script
    return np


def plan_network(
    t: ValidatedTopology,
    family: str = "v4",
    base: str | None = None,
    extra_bridge_members: tuple[str, ...] = (),
) -> NetPlan:
    """allocate_networks + plan_routes + plan_timer_scripts in one call."""
    np = allocate_networks(t, family=family, base=base, extra_bridge_members=extra_bridge_members)
    plan_routes(t, np)
    plan_timer_scripts(t, np)
    return np
