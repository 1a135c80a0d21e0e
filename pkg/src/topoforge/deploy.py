"""Target-agnostic deployment planning.

Converts a validated topology plus a network plan into a container set that
the compose and kubernetes emitters serialize.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import tls
from .errors import OptionConflictError
from .netplan import BRIDGE_NET, NetPlan, plan_network
from .validation import ValidatedTopology

DEFAULT_SERVICE_IMAGE = "topoforge/service:latest"
DEFAULT_ROUTER_IMAGE = "topoforge/router:latest"
DEFAULT_COLLECTOR_IMAGE = "jaegertracing/all-in-one:1.57"

COLLECTOR_NAME = "jaeger"
COLLECTOR_UI_PORT = 16686
COLLECTOR_INGEST_PORT = 4318

CONFIG_MOUNT = "/etc/topoforge/config.json"
TIMER_MOUNT = "/etc/topoforge/timers.sh"
CERTS_MOUNT_DIR = "/etc/topoforge/certs"

SERVICE_COMMAND = f"topoforge-service --config {CONFIG_MOUNT}"
ROUTER_COMMAND = "sleep infinity"

DOWNSTREAM_TIMEOUT_S = 5.0


@dataclass(frozen=True)
class GenerationOptions:
    family: str = "v4"  # v4 | v6
    scheme: str = "http"  # http | https
    tracing: bool = False
    ioam: bool = False
    target: str = "compose"  # compose | k8s
    base: str | None = None  # address base CIDR override
    seed: int = 0
    service_image: str = DEFAULT_SERVICE_IMAGE
    router_image: str = DEFAULT_ROUTER_IMAGE
    collector_image: str = DEFAULT_COLLECTOR_IMAGE

    def check(self):
        if self.ioam and self.family != "v6":
            raise OptionConflictError("ioam requires the v6 address family")
        if self.family not in ("v4", "v6"):
            raise OptionConflictError(f"unknown address family {self.family!r}")
        if self.scheme not in ("http", "https"):
            raise OptionConflictError(f"unknown scheme {self.scheme!r}")
        if self.target not in ("compose", "k8s"):
            raise OptionConflictError(f"unknown target {self.target!r}")


@dataclass
class ContainerSpec:
    name: str
    role: str  # service | router | collector
    image: str
    config_payload: dict | None = None
    setup: list[str] = field(default_factory=list)
    timer_script: str | None = None
    attachments: list[tuple[str, str]] = field(default_factory=list)  # (network, address)
    ports: list[tuple[int, int]] = field(default_factory=list)  # (host, container)
    cap_net_admin: bool = False
    environment: dict[str, str] = field(default_factory=dict)
    tls_files: dict[str, str] = field(default_factory=dict)  # mount path -> material key


@dataclass
class DeploymentPlan:
    containers: list[ContainerSpec]
    networks: list  # Subnet list for the compose target
    options: GenerationOptions
    # relative file name -> bytes, written next to the emitted documents
    materials: dict[str, bytes] = field(default_factory=dict)

    def container(self, name: str) -> ContainerSpec:
        for c in self.containers:
            if c.name == name:
                return c
        raise KeyError(name)


def collector_endpoint(np: NetPlan, opts: GenerationOptions) -> str:
    addr = np.address(COLLECTOR_NAME, BRIDGE_NET)
    host = f"[{addr}]" if np.family == "v6" else addr
    return f"http://{host}:{COLLECTOR_INGEST_PORT}/v1/traces"


def _downstream_entry(t: ValidatedTopology, np: NetPlan, rp, opts: GenerationOptions) -> dict:
    terminal = rp.terminal
    if len(rp.hops) == 2:
        addr = np.address(terminal, BRIDGE_NET)
    else:
        addr = np.address(terminal, np.subnet_of_pair(rp.hops[-2], terminal).name)
    return {
        "name": terminal,
        "address": addr,
        "port": t.services[terminal].port,
        "url": rp.url,
        "scheme": opts.scheme,
    }


def _runtime_config(t: ValidatedTopology, np: NetPlan, name: str, opts: GenerationOptions) -> dict:
    svc = t.services[name]
    by_conn = {
        (rp.entrypoint, rp.conn_index): rp
        for rp in t.path_table
        if rp.service == name
    }
    endpoints = []
    for ep in svc.endpoints:
        downstreams = [
            _downstream_entry(t, np, by_conn[(ep.entrypoint, ci)], opts)
            for ci in range(len(ep.connections))
        ]
        endpoints.append(
            {"entrypoint": ep.entrypoint, "psize": ep.psize, "downstreams": downstreams}
        )
    cfg = {
        "name": name,
        "port": svc.port,
        "scheme": opts.scheme,
        "family": opts.family,
        "endpoints": endpoints,
        "downstream_timeout_s": DOWNSTREAM_TIMEOUT_S,
    }
    if opts.scheme == "https":
        cfg["tls"] = {
            "cert": f"{CERTS_MOUNT_DIR}/{name}.crt",
            "key": f"{CERTS_MOUNT_DIR}/{name}.key",
            "ca": f"{CERTS_MOUNT_DIR}/ca.crt",
        }
    return cfg


def _ioam_commands(np: NetPlan, name: str) -> list[str]:
    # enablement hooks only; actual in-band telemetry is outside this tool
    cmds = []
    for subnet_name, _addr in np.attachments(name):
        iface = np.iface_names[(name, subnet_name)]
        cmds.append(f"sysctl -w net.ipv6.conf.{iface}.ioam6_enabled=1")
    return cmds


def build_plan(t: ValidatedTopology, np: NetPlan, opts: GenerationOptions) -> DeploymentPlan:
    """One container per entity, plus an optional tracing collector."""
    opts.check()
    if opts.tracing and COLLECTOR_NAME in t.entities:
        raise OptionConflictError(
            f"tracing reserves the container name '{COLLECTOR_NAME}'"
        )

    materials: dict[str, bytes] = {}
    authority = None
    if opts.scheme == "https":
        authority = tls.generate_authority(opts.seed)
        materials["certs/ca.crt"] = authority.cert_pem

    containers: list[ContainerSpec] = []
    for name in t.ordered_entities():
        role = "service" if name in t.services else "router"
        setup = list(np.setup.get(name, []))
        if opts.ioam:
            setup.extend(_ioam_commands(np, name))
        spec = ContainerSpec(
            name=name,
            role=role,
            image=opts.service_image if role == "service" else opts.router_image,
            setup=setup,
            timer_script=np.timer_scripts.get(name),
            attachments=np.attachments(name),
            cap_net_admin=role == "router" or bool(setup),
        )
        if role == "service":
            spec.config_payload = _runtime_config(t, np, name, opts)
            spec.ports = [(np.host_ports[name], t.services[name].port)]
            if opts.tracing:
                spec.environment["TRACE_COLLECTOR_ENDPOINT"] = collector_endpoint(np, opts)
            if authority is not None:
                leaf = tls.generate_leaf(
                    authority, name, [a for _n, a in np.attachments(name)], opts.seed
                )
                materials[f"certs/{name}.crt"] = leaf.cert_pem
                materials[f"certs/{name}.key"] = leaf.key_pem
                spec.tls_files = {
                    f"{CERTS_MOUNT_DIR}/ca.crt": "certs/ca.crt",
                    f"{CERTS_MOUNT_DIR}/{name}.crt": f"certs/{name}.crt",
                    f"{CERTS_MOUNT_DIR}/{name}.key": f"certs/{name}.key",
                }
        else:
            spec.config_payload = {"name": name, "role": "router"}
        containers.append(spec)

    if opts.tracing:
        containers.append(
            ContainerSpec(
                name=COLLECTOR_NAME,
                role="collector",
                image=opts.collector_image,
                attachments=np.attachments(COLLECTOR_NAME),
                ports=[(COLLECTOR_UI_PORT, COLLECTOR_UI_PORT)],
                environment={"COLLECTOR_OTLP_ENABLED": "true"},
            )
        )

    return DeploymentPlan(
        containers=containers, networks=list(np.subnets), options=opts, materials=materials
    )


def plan_deployment(
    t: ValidatedTopology, opts: GenerationOptions
) -> tuple[NetPlan, DeploymentPlan]:
    """Network planning and deployment planning wired together.

    With tracing enabled, every service and the collector join the shared
    bridge subnet so span export has a route.
    """
    opts.check()
    extra: tuple[str, ...] = ()
    if opts.tracing:
        extra = tuple(t.services) + (COLLECTOR_NAME,)
    np = plan_network(t, family=opts.family, base=opts.base, extra_bridge_members=extra)
    return np, build_plan(t, np, opts)
