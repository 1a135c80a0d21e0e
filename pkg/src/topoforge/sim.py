"""Deterministic discrete-event execution of a validated topology.

Virtual time, single-threaded event loop, seeded randomness: identical
(topology, seed, workload) inputs produce identical reports.  Entities clone
the runtime's sequential-downstream semantics; links model the impairment
options; request-level reliability is retransmission on a fixed virtual
timeout.
"""

from __future__ import annotations

import hashlib
import heapq
import random
import struct
from dataclasses import dataclass, field

from .errors import WorkloadUnreachableError
from .model import ImpairmentSpec
from .netplan import effective_impairments, timer_boundaries
from .validation import ResolvedPath, ValidatedTopology, link_key

US = 1.0
MS = 1_000.0
S = 1_000_000.0


@dataclass(frozen=True)
class ModelParams:
    """Model constants; documented defaults, all overridable."""

    service_proc_us: float = 10.0  # per message handled by a service
    router_proc_us: float = 1.0  # per packet forwarded by a router
    rto_us: float = 200 * MS  # retransmission timeout
    request_deadline_us: float = 1 * S  # client-level per-request deadline
    downstream_timeout_us: float = 5 * S  # per-downstream-call timeout
    request_bytes: int = 128  # HTTP request size model
    header_bytes: int = 128  # response = psize + this
    queue_limit: int = 1000  # packets queued per shaped link direction (netem default)


@dataclass(frozen=True)
class Workload:
    service: str
    entrypoint: str = "/"
    mode: str = "closed"  # closed | open
    clients: int = 1  # closed-loop population
    rate: float | None = None  # open-loop offered req/s
    duration_s: float = 1.0
    start_s: float = 0.0  # virtual time at which the load begins

    def check(self):
        if self.mode == "closed" and self.clients < 1:
            raise ValueError("closed-loop workload needs clients >= 1")
        if self.mode == "open" and not (self.rate and self.rate > 0):
            raise ValueError("open-loop workload needs rate > 0")
        if self.mode not in ("closed", "open"):
            raise ValueError(f"unknown workload mode {self.mode!r}")


@dataclass
class SimReport:
    issued: int
    completed: int
    failed: int
    achieved_rate: float  # completions inside the load window, per virtual second
    rtt_count: int
    rtt_mean_us: float
    rtt_p50_us: float
    rtt_p99_us: float
    entity_bytes: dict[str, dict[str, int]]  # name -> {"rx": .., "tx": ..}
    link_bytes: dict[str, dict[str, int]]  # "a->b" -> tx/rx/dropped/corrupted
    timer_events: list[tuple[float, str, str]]  # (time s, link, option)
    event_digest: str

    def to_dict(self) -> dict:
        return {
            "issued": self.issued,
            "completed": self.completed,
            "failed": self.failed,
            "achieved_rate": self.achieved_rate,
            "rtt": {
                "count": self.rtt_count,
                "mean_us": self.rtt_mean_us,
                "p50_us": self.rtt_p50_us,
                "p99_us": self.rtt_p99_us,
            },
            "entity_bytes": self.entity_bytes,
            "link_bytes": self.link_bytes,
            "timer_events": [list(e) for e in self.timer_events],
            "event_digest": self.event_digest,
        }

    def to_text(self) -> str:
        lines = [
            f"requests     issued={self.issued} completed={self.completed} failed={self.failed}",
            f"rate         {self.achieved_rate:.1f} req/s",
            f"rtt          n={self.rtt_count} mean={self.rtt_mean_us:.1f}us "
            f"p50={self.rtt_p50_us:.1f}us p99={self.rtt_p99_us:.1f}us",
            "entity bytes:",
        ]
        for name, b in self.entity_bytes.items():
            lines.append(f"  {name:<20} rx={b['rx']:<12} tx={b['tx']}")
        lines.append("link bytes:")
        for name, b in self.link_bytes.items():
            lines.append(
                f"  {name:<24} tx={b['tx']:<10} rx={b['rx']:<10} "
                f"dropped={b['dropped']:<8} corrupted={b['corrupted']}"
            )
        for t, link, option in self.timer_events:
            lines.append(f"timer        t={t}s {link} {option}")
        lines.append(f"event digest {self.event_digest}")
        return "\n".join(lines) + "\n"


@dataclass
class Message:
    kind: str  # request | response
    exchange_id: int
    route: tuple[str, ...]
    index: int  # current position within route
    size: int
    url: str | None = None
    ok: bool = True
    failed_hop: str | None = None
    corrupted: bool = False


class _LinkDir:
    """One direction of a link: serialization, latency, stochastic impairments."""

    __slots__ = (
        "world", "rng", "segments", "seg_idx", "busy_until", "queued",
        "tx", "rx", "dropped", "corrupted",
    )

    def __init__(self, world: "SimWorld", spec: ImpairmentSpec):
        self.world = world
        self.rng = world.rng
        # piecewise-constant parameter timeline (timer semantics)
        bounds = timer_boundaries(spec.timers)
        self.segments = [(0.0, effective_impairments(spec, 0.0))]
        for t in bounds:
            self.segments.append((t * S, effective_impairments(spec, t)))
        self.seg_idx = 0
        self.busy_until = 0.0
        self.queued = 0
        self.tx = self.rx = self.dropped = self.corrupted = 0

    def params_at(self, now_us: float) -> ImpairmentSpec:
        # event times are non-decreasing, so a forward-moving index suffices;
        # but retransmissions may probe equal times, so re-scan from current
        i = self.seg_idx
        while i + 1 < len(self.segments) and self.segments[i + 1][0] <= now_us:
            i += 1
        self.seg_idx = i
        return self.segments[i][1]

    def transmit(self, msg: Message, now: float, deliver):
        eff = self.params_at(now)
        self.tx += msg.size
        if eff.rate is not None:
            limit = eff.buffer_size if eff.buffer_size is not None else self.world.params.queue_limit
            if self.queued >= limit:
                self.dropped += msg.size
                return
            ser = msg.size * 8 / eff.rate.bits_per_second * S
            depart = max(now, self.busy_until) + ser
            self.busy_until = depart
            self.queued += 1
            self.world.schedule_at(depart, self._departed, msg, deliver)
        else:
            self._release(msg, now, deliver)

    def _departed(self, now: float, msg: Message, deliver):
        self.queued -= 1
        self._release(msg, now, deliver)

    def _release(self, msg: Message, now: float, deliver):
        eff = self.params_at(now)
        if eff.loss is not None and self.rng.random() * 100.0 < eff.loss:
            self.dropped += msg.size
            return
        if eff.corrupt is not None and self.rng.random() * 100.0 < eff.corrupt:
            msg = _copy_msg(msg)
            msg.corrupted = True
        latency = 0.0
        if eff.delay is not None:
            latency = eff.delay
            if eff.jitter is not None and eff.jitter > 0:
                latency += self.rng.uniform(-eff.jitter, eff.jitter)
            latency = max(0.0, latency)
            # netem-style reordering: a reordered packet skips the delay and
            # jumps ahead of earlier, still-delayed packets
            if eff.reorder is not None and self.rng.random() * 100.0 < eff.reorder:
                latency = 0.0
        dup = eff.duplicate is not None and self.rng.random() * 100.0 < eff.duplicate
        self.world.schedule_at(now + latency, self._arrive, msg, deliver)
        if dup:
            self.tx += msg.size
            self.world.schedule_at(now + latency, self._arrive, _copy_msg(msg), deliver)

    def _arrive(self, now: float, msg: Message, deliver):
        if msg.corrupted:
            self.corrupted += msg.size
            return  # receiver rejects the frame
        self.rx += msg.size
        deliver(now, msg)


def _copy_msg(msg: Message) -> Message:
    return Message(
        kind=msg.kind,
        exchange_id=msg.exchange_id,
        route=msg.route,
        index=msg.index,
        size=msg.size,
        url=msg.url,
        ok=msg.ok,
        failed_hop=msg.failed_hop,
        corrupted=msg.corrupted,
    )


class _Exchange:
    """One reliable request/response round trip along a route."""

    __slots__ = ("world", "route", "url", "deadline", "on_done", "eid", "done", "issued_at")

    def __init__(self, world, route, url, deadline_us, on_done):
        self.world = world
        self.route = route
        self.url = url
        self.on_done = on_done
        self.eid = world.next_exchange_id()
        self.done = False
        self.issued_at = world.now
        self.deadline = None if deadline_us is None else world.now + deadline_us
        world.exchanges[self.eid] = self
        if self.deadline is not None:
            world.schedule_at(self.deadline, self._expire)
        self._attempt()

    def _attempt(self, now: float | None = None):
        if self.done:
            return
        now = self.world.now
        if self.deadline is not None and now >= self.deadline:
            return
        msg = Message(
            kind="request",
            exchange_id=self.eid,
            route=self.route,
            index=0,
            size=self.world.params.request_bytes,
            url=self.url,
        )
        self.world.inject(msg, now)
        self.world.schedule(self.world.params.rto_us, self._rto)

    def _rto(self, now: float):
        if not self.done:
            self._attempt()

    def _expire(self, now: float):
        if not self.done:
            self._finish(False)

    def on_response(self, msg: Message):
        if not self.done:
            self._finish(msg.ok)

    def _finish(self, ok: bool):
        self.done = True
        self.world.exchanges.pop(self.eid, None)
        self.on_done(ok, self.world.now - self.issued_at)


class _Job:
    """Server-side handling of one received request: sequential downstreams."""

    __slots__ = ("svc", "endpoint_paths", "psize", "idx", "reply")

    def __init__(self, svc: "_ServiceModel", entrypoint: str, reply):
        self.svc = svc
        self.endpoint_paths = svc.downstream_paths[entrypoint]
        self.psize = svc.psizes[entrypoint]
        self.idx = 0
        self.reply = reply

    def step(self, now: float):
        if self.idx >= len(self.endpoint_paths):
            self.reply(True, self.psize, None)
            return
        rp = self.endpoint_paths[self.idx]
        _Exchange(
            self.svc.world,
            rp.hops,
            rp.url,
            self.svc.world.params.downstream_timeout_us,
            lambda ok, _rtt, rp=rp: self._on_downstream(ok, rp),
        )

    def _on_downstream(self, ok: bool, rp: ResolvedPath):
        if not ok:
            self.reply(False, 0, rp.terminal)
            return
        self.idx += 1
        self.step(self.svc.world.now)


class _ServiceModel:
    __slots__ = (
        "world", "name", "busy_until", "downstream_paths", "psizes", "rx", "tx", "proc", "seen",
    )

    def __init__(self, world, name, svc_spec, paths_by_ep):
        self.world = world
        self.name = name
        self.busy_until = 0.0
        self.proc = world.params.service_proc_us
        self.downstream_paths = paths_by_ep
        self.psizes = {ep.entrypoint: ep.psize for ep in svc_spec.endpoints}
        self.rx = self.tx = 0
        # per-exchange request dedup: in-flight retransmits are absorbed and
        # finished ones get the cached reply resent (at-most-once execution)
        self.seen: dict[int, tuple | None] = {}

    def on_message(self, now: float, msg: Message):
        # single-server processing: each message costs one proc slot
        start = max(now, self.busy_until)
        self.busy_until = start + self.proc
        self.world.schedule_at(self.busy_until, self._handle, msg)

    def _handle(self, now: float, msg: Message):
        if msg.kind == "response":
            ex = self.world.exchanges.get(msg.exchange_id)
            if ex is not None:
                ex.on_response(msg)
            return
        eid = msg.exchange_id
        if eid in self.seen:
            cached = self.seen[eid]
            if cached is not None:
                self._reply(msg, *cached)
            return
        self.seen[eid] = None
        if msg.url not in self.psizes:
            self._finish_request(msg, False, 0, self.name)  # unknown entrypoint
            return
        job = _Job(self, msg.url, lambda ok, psize, hop, m=msg: self._finish_request(m, ok, psize, hop))
        job.step(now)

    def _finish_request(self, req: Message, ok: bool, psize: int, failed_hop: str | None):
        self.seen[req.exchange_id] = (ok, psize, failed_hop)
        self._reply(req, ok, psize, failed_hop)

    def _reply(self, req: Message, ok: bool, psize: int, failed_hop: str | None):
        size = self.world.params.header_bytes + (psize if ok else 0)
        resp = Message(
            kind="response",
            exchange_id=req.exchange_id,
            route=tuple(reversed(req.route)),
            index=0,
            size=size,
            ok=ok,
            failed_hop=failed_hop,
        )
        self.world.inject(resp, self.world.now)


class _RouterModel:
    __slots__ = ("world", "name", "busy_until", "rx", "tx", "proc")

    def __init__(self, world, name):
        self.world = world
        self.name = name
        self.busy_until = 0.0
        self.proc = world.params.router_proc_us
        self.rx = self.tx = 0

    def on_message(self, now: float, msg: Message):
        start = max(now, self.busy_until)
        self.busy_until = start + self.proc
        self.world.schedule_at(self.busy_until, self._forward, msg)

    def _forward(self, now: float, msg: Message):
        self.world.forward(msg, now)


class SimWorld:
    """Entity and link models plus the virtual-time event queue."""

    def __init__(self, topology: ValidatedTopology, seed: int = 0, params: ModelParams | None = None):
        self.topology = topology
        self.seed = seed
        self.params = params or ModelParams()
        self.rng = random.Random(seed)
        self.now = 0.0
        self._heap: list = []
        self._seq = 0
        self._digest = hashlib.sha256()
        self.exchanges: dict[int, _Exchange] = {}
        self._next_eid = 0

        paths_by_svc_ep: dict[str, dict[str, list[ResolvedPath]]] = {
            name: {ep.entrypoint: [] for ep in spec.endpoints}
            for name, spec in topology.services.items()
        }
        for rp in topology.path_table:
            paths_by_svc_ep[rp.service][rp.entrypoint].append(rp)

        self.entities: dict[str, object] = {}
        for name, spec in topology.services.items():
            self.entities[name] = _ServiceModel(self, name, spec, paths_by_svc_ep[name])
        for name in topology.routers:
            self.entities[name] = _RouterModel(self, name)

        self.links: dict[tuple[str, str], dict[tuple[str, str], _LinkDir]] = {}
        for key, edge in sorted(topology.link_graph.items()):
            spec = edge.impairments
            self.links[key] = {
                (key[0], key[1]): _LinkDir(self, spec),
                (key[1], key[0]): _LinkDir(self, spec),
            }

    # --- scheduling -----------------------------------------------------------

    def next_exchange_id(self) -> int:
        self._next_eid += 1
        return self._next_eid

    def schedule_at(self, t: float, fn, *args):
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, fn, args))

    def schedule(self, delay_us: float, fn, *args):
        self.schedule_at(self.now + delay_us, fn, *args)

    def run_until(self, t_end_us: float):
        while self._heap and self._heap[0][0] <= t_end_us:
            t, _seq, fn, args = heapq.heappop(self._heap)
            self.now = t
            self._digest.update(struct.pack("<d", t))
            fn(t, *args)
        self.now = max(self.now, t_end_us)

    def idle(self) -> bool:
        return not self._heap

    # --- message movement -------------------------------------------------------

    def inject(self, msg: Message, now: float):
        """A message leaves the entity at route[index] toward route[index+1]."""
        self.forward(msg, now)

    def forward(self, msg: Message, now: float):
        route = msg.route
        src = route[msg.index]
        model = self.entities.get(src)
        if model is not None:
            model.tx += msg.size
        if msg.index + 1 >= len(route):
            return  # already at the end (defensive)
        dst = route[msg.index + 1]
        nxt = _copy_msg(msg)
        nxt.index = msg.index + 1
        link = self.links.get(link_key(src, dst))
        if link is None:
            # no modeled link (external client attachment): direct handoff
            self._deliver(now, nxt)
            return
        link[(src, dst)].transmit(nxt, now, self._deliver)

    def _deliver(self, now: float, msg: Message):
        name = msg.route[msg.index]
        if name == "__client__":
            ex = self.exchanges.get(msg.exchange_id)
            if ex is not None:
                ex.on_response(msg)
            return
        model = self.entities[name]
        model.rx += msg.size
        model.on_message(now, msg)

    def link_param(self, a: str, b: str, option: str, t_seconds: float):
        """Sampled link parameter value at a virtual time (timers applied)."""
        edge = self.topology.link_graph[link_key(a, b)]
        return effective_impairments(edge.impairments, t_seconds).option_value(option)

    def timer_timeline(self, horizon_s: float) -> list[tuple[float, str, str]]:
        events = []
        for key, edge in sorted(self.topology.link_graph.items()):
            for tm in edge.impairments.timers:
                for t in (tm.start, tm.start + tm.duration):
                    if t <= horizon_s:
                        events.append((t, f"{key[0]}<->{key[1]}", tm.option))
        return sorted(events)


def build_sim(topology: ValidatedTopology, seed: int = 0, params: ModelParams | None = None) -> SimWorld:
    return SimWorld(topology, seed=seed, params=params)


def _percentile(sorted_vals: list[float], q: float) -> float:
    if not sorted_vals:
        return 0.0
    idx = min(len(sorted_vals) - 1, max(0, int(round(q * (len(sorted_vals) - 1)))))
    return sorted_vals[idx]


def run(world: SimWorld, workload: Workload) -> SimReport:
    """Execute a workload against a freshly built world."""
    workload.check()
    svc = world.topology.services.get(workload.service)
    if svc is None or all(ep.entrypoint != workload.entrypoint for ep in svc.endpoints):
        raise WorkloadUnreachableError(
            f"no service '{workload.service}' with entrypoint '{workload.entrypoint}'"
        )

    start_us = workload.start_s * S
    end_us = start_us + workload.duration_s * S
    route = ("__client__", workload.service)
    stats = {"issued": 0, "completed": 0, "failed": 0, "in_window": 0}
    rtts: list[float] = []

    def on_done(ok: bool, rtt: float):
        if ok:
            stats["completed"] += 1
            if world.now <= end_us:
                stats["in_window"] += 1
            rtts.append(rtt)
        else:
            stats["failed"] += 1

    def issue(on_finished=None):
        stats["issued"] += 1
        _Exchange(
            world,
            route,
            workload.entrypoint,
            world.params.request_deadline_us,
            on_finished or on_done,
        )

    if workload.mode == "closed":

        def loop_done(ok: bool, rtt: float):
            on_done(ok, rtt)
            if world.now < end_us:
                issue(loop_done)

        for _ in range(workload.clients):
            world.schedule_at(start_us, lambda _t: issue(loop_done))
    else:
        n = int(workload.rate * workload.duration_s)
        spacing = S / workload.rate
        for i in range(n):
            world.schedule_at(start_us + i * spacing, lambda _t: issue())

    hard_stop = end_us + world.params.request_deadline_us + world.params.rto_us
    world.run_until(hard_stop)
    # anything still unresolved at the hard stop counts as failed
    for ex in list(world.exchanges.values()):
        if ex.route == route:
            ex._finish(False)

    rtts.sort()
    completed = stats["completed"]
    entity_bytes = {
        name: {"rx": model.rx, "tx": model.tx} for name, model in world.entities.items()
    }
    link_bytes = {}
    for key, dirs in world.links.items():
        for (a, b), d in dirs.items():
            link_bytes[f"{a}->{b}"] = {
                "tx": d.tx,
                "rx": d.rx,
                "dropped": d.dropped,
                "corrupted": d.corrupted,
            }
    return SimReport(
        issued=stats["issued"],
        completed=completed,
        failed=stats["failed"],
        achieved_rate=stats["in_window"] / workload.duration_s if workload.duration_s else 0.0,
        rtt_count=len(rtts),
        rtt_mean_us=sum(rtts) / len(rtts) if rtts else 0.0,
        rtt_p50_us=_percentile(rtts, 0.50),
        rtt_p99_us=_percentile(rtts, 0.99),
        entity_bytes=entity_bytes,
        link_bytes=link_bytes,
        timer_events=world.timer_timeline(workload.start_s + workload.duration_s),
        event_digest=world._digest.hexdigest(),
    )
