"""Serialization of a DeploymentPlan to kubernetes manifests.

Per entity: one Deployment, one stable-name Service, and one ConfigMap
carrying the runtime config, setup commands, and timer script.  The cluster
target uses the flat pod network; per-link subnets are not reproduced there,
impairments still apply to container egress interfaces.
"""

from __future__ import annotations

import json

import yaml

from .deploy import (
    CONFIG_MOUNT,
    ROUTER_COMMAND,
    SERVICE_COMMAND,
    TIMER_MOUNT,
    ContainerSpec,
    DeploymentPlan,
)
from .compose import startup_script

CONFIG_MOUNT_DIR = "/etc/topoforge"


def _configmap(c: ContainerSpec) -> dict:
    data = {}
    if c.config_payload is not None:
        data["config.json"] = json.dumps(c.config_payload, indent=2, sort_keys=True)
    if c.setup:
        data["setup.sh"] = "\n".join(["#!/bin/sh", "set -e"] + c.setup) + "\n"
    if c.timer_script:
        data["timers.sh"] = c.timer_script
    return {
        "apiVersion": "v1",
        "kind": "ConfigMap",
        "metadata": {"name": f"{c.name}-config"},
        "data": data,
    }


def _deployment(c: ContainerSpec) -> dict:
    container: dict = {"name": c.name, "image": c.image}
    if c.role != "collector":
        main = SERVICE_COMMAND if c.role == "service" else ROUTER_COMMAND
        container["command"] = ["sh", "-c", f"exec {main}"]
        container["volumeMounts"] = [{"name": "config", "mountPath": CONFIG_MOUNT_DIR}]
    if c.ports:
        container["ports"] = [{"containerPort": cont} for _host, cont in c.ports]
    if c.environment:
        container["env"] = [
            {"name": k, "value": v} for k, v in sorted(c.environment.items())
        ]
    if c.cap_net_admin:
        container["securityContext"] = {"capabilities": {"add": ["NET_ADMIN"]}}
    if c.setup:
        container["lifecycle"] = {
            "postStart": {"exec": {"command": ["sh", "-c", startup_setup(c)]}}
        }
    pod_spec: dict = {"containers": [container]}
    if container.get("volumeMounts"):
        pod_spec["volumes"] = [
            {"name": "config", "configMap": {"name": f"{c.name}-config"}}
        ]
    else:
        container.pop("volumeMounts", None)
    return {
        "apiVersion": "apps/v1",
        "kind": "Deployment",
        "metadata": {"name": c.name, "labels": {"app": c.name}},
        "spec": {
            "replicas": 1,
            "selector": {"matchLabels": {"app": c.name}},
            "template": {
                "metadata": {"labels": {"app": c.name}},
                "spec": pod_spec,
            },
        },
    }


def startup_setup(c: ContainerSpec) -> str:
    """postStart hook body: setup commands plus timer script launch."""
    lines = ["set -e"] + list(c.setup)
    if c.timer_script:
        lines.append(f"(sh {CONFIG_MOUNT_DIR}/timers.sh &)")
    return "\n".join(lines)


def _service(c: ContainerSpec) -> dict:
    spec_ports = []
    for host, cont in c.ports:
        spec_ports.append({"name": f"port-{cont}", "port": cont, "targetPort": cont})
    if not spec_ports:
        # routers expose nothing; a headless service still gives a stable name
        return {
            "apiVersion": "v1",
            "kind": "Service",
            "metadata": {"name": c.name},
            "spec": {"clusterIP": "None", "selector": {"app": c.name}},
        }
    return {
        "apiVersion": "v1",
        "kind": "Service",
        "metadata": {"name": c.name},
        "spec": {"selector": {"app": c.name}, "ports": spec_ports},
    }


def emit_k8s(plan: DeploymentPlan) -> list[tuple[str, str]]:
    """(file name, manifest text) pairs, one file per manifest."""
    out = []
    for c in plan.containers:
        out.append(
            (f"{c.name}-configmap.yaml", yaml.safe_dump(_configmap(c), sort_keys=False))
        )
        out.append(
            (f"{c.name}-deployment.yaml", yaml.safe_dump(_deployment(c), sort_keys=False))
        )
        out.append((f"{c.name}-service.yaml", yaml.safe_dump(_service(c), sort_keys=False)))
    return out
