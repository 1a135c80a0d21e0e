"""Command-line entry point: generate, validate, inspect, simulate."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .compose import CONFIG_DIR, TIMER_DIR, emit_compose
from .deploy import (
    DEFAULT_COLLECTOR_IMAGE,
    DEFAULT_ROUTER_IMAGE,
    DEFAULT_SERVICE_IMAGE,
    GenerationOptions,
    plan_deployment,
)
from .errors import OptionConflictError, TopoforgeError, ValidationError
from .k8s import emit_k8s
from .maxrate import measure_max_rate
from .parser import parse_config
from .sim import ModelParams, Workload, build_sim, run
from .validation import validate

COMPOSE_FILE = "compose.yml"
MANIFEST_DIR = "manifests"


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="topoforge", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("config", help="topology configuration file")
        group = p.add_mutually_exclusive_group()
        group.add_argument("--ipv4", dest="family", action="store_const", const="v4")
        group.add_argument("--ipv6", dest="family", action="store_const", const="v6")
        p.set_defaults(family="v4")
        p.add_argument("--base-v4", default=None, help="IPv4 allocation base CIDR")
        p.add_argument("--base-v6", default=None, help="IPv6 allocation base CIDR")

    gen = sub.add_parser("generate", help="emit deployment configuration files")
    add_common(gen)
    gen.add_argument("--target", choices=["compose", "k8s"], default="compose")
    gen.add_argument("--https", action="store_true")
    gen.add_argument("--tracing", action="store_true")
    gen.add_argument("--ioam", action="store_true")
    gen.add_argument("--output", default="out", help="output directory")
    gen.add_argument("--seed", type=int, default=0)

    val = sub.add_parser("validate", help="parse and validate only")
    add_common(val)

    ins = sub.add_parser("inspect", help="print the resolved topology and network plan")
    add_common(ins)

    simp = sub.add_parser("simulate", help="run the in-process simulation harness")
    add_common(simp)
    simp.add_argument("--service", default=None, help="target service (default: first)")
    simp.add_argument("--entrypoint", default="/")
    simp.add_argument("--mode", choices=["closed", "open"], default="closed")
    simp.add_argument("--clients", type=int, default=1)
    simp.add_argument("--rate", type=float, default=None, help="open-loop req/s")
    simp.add_argument("--duration", type=float, default=1.0, help="virtual seconds")
    simp.add_argument("--seed", type=int, default=0)
    simp.add_argument("--max-rate", action="store_true", help="measure the maximum sustainable request rate")
    simp.add_argument("--precision", type=float, default=0.01, help="relative search precision")
    simp.add_argument("--json", action="store_true", help="machine-readable report")
    return ap


def _load(args):
    text = Path(args.config).read_text()
    cfg = parse_config(text)
    topo = validate(cfg, family=args.family)
    for w in topo.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return topo


def _options(args) -> GenerationOptions:
    return GenerationOptions(
        family=args.family,
        scheme="https" if args.https else "http",
        tracing=args.tracing,
        ioam=args.ioam,
        target=args.target,
        base=args.base_v6 if args.family == "v6" else args.base_v4,
        seed=args.seed,
        service_image=os.environ.get("TOPOFORGE_SERVICE_IMAGE", DEFAULT_SERVICE_IMAGE),
        router_image=os.environ.get("TOPOFORGE_ROUTER_IMAGE", DEFAULT_ROUTER_IMAGE),
        collector_image=os.environ.get("TOPOFORGE_COLLECTOR_IMAGE", DEFAULT_COLLECTOR_IMAGE),
    )


def _write(path: Path, data):
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, bytes):
        path.write_bytes(data)
    else:
        path.write_text(data)


def cmd_generate(args) -> int:
    opts = _options(args)
    opts.check()
    topo = _load(args)
    np, plan = plan_deployment(topo, opts)
    out = Path(args.output)
    written = []
    if opts.target == "compose":
        _write(out / COMPOSE_FILE, emit_compose(plan))
        written.append(COMPOSE_FILE)
    else:
        for name, text in emit_k8s(plan):
            _write(out / MANIFEST_DIR / name, text)
            written.append(f"{MANIFEST_DIR}/{name}")
    for c in plan.containers:
        if c.role == "service":
            _write(
                out / CONFIG_DIR / f"{c.name}.json",
                json.dumps(c.config_payload, indent=2, sort_keys=True) + "\n",
            )
            written.append(f"{CONFIG_DIR}/{c.name}.json")
        if c.timer_script:
            _write(out / TIMER_DIR / f"{c.name}.sh", c.timer_script)
            written.append(f"{TIMER_DIR}/{c.name}.sh")
    for rel, data in sorted(plan.materials.items()):
        _write(out / rel, data)
        written.append(rel)
    for rel in written:
        print(f"wrote {out / rel}")
    return 0


def cmd_validate(args) -> int:
    topo = _load(args)
    print(
        f"ok: {len(topo.services)} services, {len(topo.routers)} routers, "
        f"{len(topo.path_table)} paths, {len(topo.link_graph)} links"
    )
    return 0


def cmd_inspect(args) -> int:
    topo = _load(args)
    from .netplan import plan_network

    np = plan_network(topo, family=args.family, base=args.base_v6 if args.family == "v6" else args.base_v4)
    print("call graph:")
    for (src, sep), (dst, url) in topo.call_graph:
        print(f"  {src}{sep} -> {dst}{url}")
    print("links:")
    for (a, b), edge in sorted(topo.link_graph.items()):
        print(f"  {a} <-> {b}")
    print("subnets:")
    for s in np.subnets:
        print(f"  {s.name:<24} {s.cidr}")
    print("interfaces:")
    for (entity, subnet), addr in sorted(np.interfaces.items()):
        print(f"  {entity:<16} {subnet:<24} {addr} ({np.iface_names[(entity, subnet)]})")
    print("host ports:")
    for svc, port in np.host_ports.items():
        print(f"  {svc:<16} {port}")
    return 0


def cmd_simulate(args) -> int:
    topo = _load(args)
    service = args.service or next(iter(topo.services))
    if args.max_rate:
        result = measure_max_rate(
            topo, (service, args.entrypoint), precision=args.precision, seed=args.seed
        )
        if args.json:
            print(json.dumps({"max_rate": result.rate, "probes": result.probes}))
        else:
            print(f"max sustainable rate: {result.rate:.1f} req/s ({len(result.probes)} probes)")
        return 0
    workload = Workload(
        service=service,
        entrypoint=args.entrypoint,
        mode=args.mode,
        clients=args.clients,
        rate=args.rate,
        duration_s=args.duration,
    )
    world = build_sim(topo, seed=args.seed)
    report = run(world, workload)
    if args.json:
        print(json.dumps(report.to_dict(), sort_keys=True))
    else:
        print(report.to_text(), end="")
    return 0


def main(argv: list[str] | None = None) -> int:
    ap = _build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "generate":
            return cmd_generate(args)
        if args.command == "validate":
            return cmd_validate(args)
        if args.command == "inspect":
            return cmd_inspect(args)
        if args.command == "simulate":
            return cmd_simulate(args)
        return 2
    except OptionConflictError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, TopoforgeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
