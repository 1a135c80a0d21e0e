"""Serialization of a DeploymentPlan to a single-host compose document."""

from __future__ import annotations

import yaml

from .deploy import (
    CONFIG_MOUNT,
    ROUTER_COMMAND,
    SERVICE_COMMAND,
    TIMER_MOUNT,
    ContainerSpec,
    DeploymentPlan,
)

CONFIG_DIR = "configs"
TIMER_DIR = "timers"


def startup_script(c: ContainerSpec) -> str:
    """Shell fragment: apply setup commands, launch timers, exec the main process."""
    main = SERVICE_COMMAND if c.role == "service" else ROUTER_COMMAND
    lines = list(c.setup)
    if c.timer_script:
        lines.append(f"(sh {TIMER_MOUNT} &)")
    lines.append(f"exec {main}")
    return "\n".join(["set -e"] + lines)


def _service_entry(c: ContainerSpec, family: str) -> dict:
    entry: dict = {"image": c.image, "container_name": c.name}
    if c.cap_net_admin:
        entry["cap_add"] = ["NET_ADMIN"]
    if c.role != "collector":
        entry["command"] = ["sh", "-c", startup_script(c)]
    volumes = []
    if c.role == "service":
        volumes.append(f"./{CONFIG_DIR}/{c.name}.json:{CONFIG_MOUNT}:ro")
    if c.timer_script:
        volumes.append(f"./{TIMER_DIR}/{c.name}.sh:{TIMER_MOUNT}:ro")
    for mount, key in sorted(c.tls_files.items()):
        volumes.append(f"./{key}:{mount}:ro")
    if volumes:
        entry["volumes"] = volumes
    if c.environment:
        entry["environment"] = dict(sorted(c.environment.items()))
    addr_key = "ipv4_address" if family == "v4" else "ipv6_address"
    if c.attachments:
        entry["networks"] = {net: {addr_key: addr} for net, addr in c.attachments}
    if c.ports:
        entry["ports"] = [f"{host}:{cont}" for host, cont in c.ports]
    return entry


def emit_compose(plan: DeploymentPlan) -> str:
    """Render the compose document; output is deterministic, key order stable."""
    family = plan.options.family
    doc = {
        "services": {
            c.name: _service_entry(c, family) for c in plan.containers
        },
        "networks": {},
    }
    for subnet in plan.networks:
        net: dict = {"driver": "bridge"}
        if family == "v6":
            net["enable_ipv6"] = True
        net["ipam"] = {"config": [{"subnet": subnet.cidr}]}
        doc["networks"][subnet.name] = net
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=False, width=100000)
