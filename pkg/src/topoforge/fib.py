"""Longest-prefix-match forwarding over the emitted route commands.

Builds a model FIB per entity by parsing the ``ip route add`` commands and
subnet attachments out of a NetPlan, then walks packets hop by hop.  Used to
check that every declared path is followed exactly, forward and reverse.
"""

from __future__ import annotations

import ipaddress
import re
from dataclasses import dataclass, field

from .netplan import NetPlan

_ROUTE_RE = re.compile(r"^ip (?:-6 )?route add (\S+) via (\S+)$")


@dataclass
class Fib:
    # entity -> list of (prefix network, gateway address | None for on-link)
    tables: dict[str, list[tuple[object, object]]]
    addr_owner: dict[str, str]  # address -> entity

    def lookup(self, entity: str, dst: str):
        dst_ip = ipaddress.ip_address(dst)
        best = None
        for prefix, via in self.tables.get(entity, []):
            if dst_ip in prefix:
                if best is None or prefix.prefixlen > best[0].prefixlen:
                    best = (prefix, via)
        return best


def build_fib(np: NetPlan) -> Fib:
    tables: dict[str, list] = {}
    addr_owner: dict[str, str] = {}
    for (entity, subnet_name), addr in np.interfaces.items():
        addr_owner[addr] = entity
        subnet = np.subnet_by_name(subnet_name)
        tables.setdefault(entity, []).append((subnet.network, None))
    for entity, cmds in np.setup.items():
        for cmd in cmds:
            m = _ROUTE_RE.match(cmd)
            if not m:
                continue
            prefix = ipaddress.ip_network(m.group(1))
            via = ipaddress.ip_address(m.group(2))
            tables.setdefault(entity, []).append((prefix, via))
    return Fib(tables=tables, addr_owner=addr_owner)


class ForwardingError(Exception):
    pass


def forward(fib: Fib, np: NetPlan, src: str, dst_addr: str, max_hops: int = 64) -> list[str]:
    """Entity names a packet visits from ``src`` to the holder of ``dst_addr``."""
    visited = [src]
    current = src
    for _ in range(max_hops):
        owner = fib.addr_owner.get(dst_addr)
        if owner == current:
            return visited
        match = fib.lookup(current, dst_addr)
        if match is None:
            raise ForwardingError(f"{current} has no route toward {dst_addr}")
        prefix, via = match
        if via is None:
            # on-link: deliver directly to the address owner on that subnet
            if owner is None or (owner, _subnet_name_for(np, prefix)) not in np.interfaces:
                raise ForwardingError(f"{dst_addr} not on-link at {current}")
            nxt = owner
        else:
            nxt = fib.addr_owner.get(str(via))
            if nxt is None:
                raise ForwardingError(f"gateway {via} owned by nobody (at {current})")
        visited.append(nxt)
        current = nxt
    raise ForwardingError(f"forwarding loop from {src} toward {dst_addr}: {visited}")


def _subnet_name_for(np: NetPlan, network) -> str:
    for s in np.subnets:
        if s.network == network:
            return s.name
    raise KeyError(str(network))


@dataclass
class PathCheck:
    ok: bool
    failures: list[str] = field(default_factory=list)


def check_path_fidelity(t, np: NetPlan) -> PathCheck:
    """Verify every resolved path is followed exactly, forward and reverse."""
    fib = build_fib(np)
    failures = []
    for rp in t.path_table:
        hops = rp.hops
        if len(hops) == 2:
            fwd_dst = np.address(hops[1], "bridge")
            rev_dst = np.address(hops[0], "bridge")
        else:
            fwd_dst = np.address(hops[-1], np.subnet_of_pair(hops[-2], hops[-1]).name)
            rev_dst = np.address(hops[0], np.subnet_of_pair(hops[0], hops[1]).name)
        try:
            got = forward(fib, np, hops[0], fwd_dst)
            if tuple(got) != hops:
                failures.append(f"forward {rp.service}->{rp.terminal}: {got} != {list(hops)}")
            back = forward(fib, np, hops[-1], rev_dst)
            if tuple(back) != tuple(reversed(hops)):
                failures.append(f"reverse {rp.terminal}->{rp.service}: {back}")
        except ForwardingError as exc:
            failures.append(str(exc))
    return PathCheck(ok=not failures, failures=failures)
