"""The microservice runtime.

Listens on configured entrypoints, queries downstream services strictly
sequentially, answers with a random payload of the configured size, and
optionally exports trace spans to a collector endpoint or a file sink.
"""

from __future__ import annotations

import argparse
import json
import os
import random
import re
import socket
import ssl
import sys
import threading
import time
import urllib.error
import urllib.request
from collections import deque
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


@dataclass(frozen=True)
class Downstream:
    name: str
    address: str
    port: int
    url: str
    scheme: str = "http"


@dataclass(frozen=True)
class EndpointRuntime:
    entrypoint: str
    psize: int
    downstreams: tuple[Downstream, ...] = ()


@dataclass(frozen=True)
class RuntimeConfig:
    name: str
    port: int
    endpoints: tuple[EndpointRuntime, ...]
    scheme: str = "http"
    family: str = "v4"
    host: str = ""
    tracing_endpoint: str | None = None
    span_sink_file: str | None = None
    payload_seed: int | None = None
    downstream_timeout_s: float = 5.0
    tls: dict | None = None

    @staticmethod
    def from_dict(d: dict) -> "RuntimeConfig":
        endpoints = tuple(
            EndpointRuntime(
                entrypoint=ep["entrypoint"],
                psize=ep["psize"],
                downstreams=tuple(Downstream(**ds) for ds in ep.get("downstreams", [])),
            )
            for ep in d["endpoints"]
        )
        return RuntimeConfig(
            name=d["name"],
            port=d["port"],
            endpoints=endpoints,
            scheme=d.get("scheme", "http"),
            family=d.get("family", "v4"),
            host=d.get("host", ""),
            tracing_endpoint=d.get("tracing_endpoint"),
            span_sink_file=d.get("span_sink_file"),
            payload_seed=d.get("payload_seed"),
            downstream_timeout_s=d.get("downstream_timeout_s", 5.0),
            tls=d.get("tls"),
        )

    @staticmethod
    def load(path: str) -> "RuntimeConfig":
        with open(path) as fh:
            return RuntimeConfig.from_dict(json.load(fh))


@dataclass(frozen=True)
class SpanRecord:
    trace_id: str
    span_id: str
    parent_span_id: str | None
    name: str
    start_ns: int
    end_ns: int
    attributes: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.end_ns < self.start_ns:
            raise ValueError("span end precedes start")

    def to_wire(self) -> dict:
        return {
            "traceId": self.trace_id,
            "spanId": self.span_id,
            "parentSpanId": self.parent_span_id,
            "name": self.name,
            "startNs": self.start_ns,
            "endNs": self.end_ns,
            "attributes": dict(self.attributes),
        }


class SpanExporter:
    """Best-effort asynchronous span delivery behind a bounded queue.

    Overflow drops the oldest record and increments ``dropped``; export
    never blocks the request path.
    """

    def __init__(self, endpoint: str | None = None, sink_file: str | None = None, maxlen: int = 4096):
        self.endpoint = endpoint
        self.sink_file = sink_file
        self.dropped = 0
        self._queue: deque[SpanRecord] = deque()
        self._maxlen = maxlen
        self._lock = threading.Lock()
        self._wake = threading.Event()
        self._closed = False
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def export(self, record: SpanRecord):
        with self._lock:
            if len(self._queue) >= self._maxlen:
                self._queue.popleft()
                self.dropped += 1
            self._queue.append(record)
        self._wake.set()

    def _drain(self) -> list[SpanRecord]:
        with self._lock:
            batch = list(self._queue)
            self._queue.clear()
        return batch

    def _run(self):
        while True:
            self._wake.wait(timeout=0.2)
            self._wake.clear()
            batch = self._drain()
            if batch:
                self._deliver(batch)
            if self._closed and not self._queue:
                return

    def _deliver(self, batch: list[SpanRecord]):
        payload = "\n".join(json.dumps(r.to_wire(), sort_keys=True) for r in batch) + "\n"
        if self.sink_file:
            try:
                with open(self.sink_file, "a") as fh:
                    fh.write(payload)
            except OSError:
                self.dropped += len(batch)
        if self.endpoint:
            try:
                req = urllib.request.Request(
                    self.endpoint,
                    data=payload.encode(),
                    headers={"Content-Type": "application/x-ndjson"},
                )
                urllib.request.urlopen(req, timeout=2.0).read()
            except (urllib.error.URLError, OSError, ValueError):
                pass  # best effort

    def flush(self, timeout: float = 2.0):
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            with self._lock:
                empty = not self._queue
            if empty:
                return
            self._wake.set()
            time.sleep(0.01)

    def close(self):
        self._closed = True
        self._wake.set()
        self.flush()


_TRACEPARENT_RE = re.compile(r"^00-([0-9a-f]{32})-([0-9a-f]{16})-([0-9a-f]{2})$")


def parse_traceparent(value: str | None) -> tuple[str, str] | None:
    if not value:
        return None
    m = _TRACEPARENT_RE.match(value.strip())
    if not m:
        return None
    return m.group(1), m.group(2)


def format_traceparent(trace_id: str, span_id: str) -> str:
    return f"00-{trace_id}-{span_id}-01"


def random_payload(n: int, rng: random.Random | None = None) -> bytes:
    """Exactly ``n`` random bytes; seeded rng gives reproducible output."""
    if n < 1:
        raise ValueError("payload size must be >= 1")
    if rng is not None:
        return rng.randbytes(n)
    return os.urandom(n)


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "topoforge-service"

    def log_message(self, *args):  # quiet by default
        if self.server.verbose:
            super().log_message(*args)

    def do_GET(self):
        self._handle()

    def do_POST(self):
        # bodies are ignored; method-agnostic GET semantics
        length = int(self.headers.get("Content-Length") or 0)
        if length:
            self.rfile.read(length)
        self._handle()

    def _send(self, status: int, body: bytes, ctype: str = "application/octet-stream"):
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _handle(self):
        server: Microservice = self.server.microservice
        path = self.path.split("?", 1)[0]
        endpoint = server.endpoint(path)
        if endpoint is None:
            self._send(404, b"unknown entrypoint", "text/plain")
            return
        try:
            status, body, ctype = server.handle_request(
                endpoint, self.headers.get("traceparent")
            )
        except Exception as exc:  # never crash the handler thread
            self._send(500, f"internal error: {exc}".encode(), "text/plain")
            return
        self._send(status, body, ctype)


class _ServerV4(ThreadingHTTPServer):
    daemon_threads = True
    verbose = False


class _ServerV6(ThreadingHTTPServer):
    daemon_threads = True
    verbose = False
    address_family = socket.AF_INET6


class Microservice:
    """One service instance bound to a RuntimeConfig."""

    def __init__(self, config: RuntimeConfig, exporter: SpanExporter | None = None):
        self.config = config
        self._endpoints = {ep.entrypoint: ep for ep in config.endpoints}
        self._rng = (
            random.Random(config.payload_seed) if config.payload_seed is not None else None
        )
        self._rng_lock = threading.Lock()
        self.exporter = exporter
        if exporter is None and (config.tracing_endpoint or config.span_sink_file):
            self.exporter = SpanExporter(config.tracing_endpoint, config.span_sink_file)
        server_cls = _ServerV6 if config.family == "v6" else _ServerV4
        self._server = server_cls((config.host, config.port), _Handler)
        self._server.microservice = self
        if config.scheme == "https":
            ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
            ctx.load_cert_chain(config.tls["cert"], config.tls["key"])
            self._server.socket = ctx.wrap_socket(self._server.socket, server_side=True)
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    def endpoint(self, path: str) -> EndpointRuntime | None:
        return self._endpoints.get(path)

    def start(self):
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    def stop(self):
        self._server.shutdown()
        self._server.server_close()
        if self.exporter:
            self.exporter.close()

    def serve_forever(self):
        self._server.serve_forever()

    # --- request handling ---------------------------------------------------

    def _payload(self, n: int) -> bytes:
        if self._rng is not None:
            with self._rng_lock:
                return random_payload(n, self._rng)
        return random_payload(n)

    def _new_id(self, nbytes: int) -> str:
        return os.urandom(nbytes).hex()

    def handle_request(
        self, endpoint: EndpointRuntime, traceparent: str | None
    ) -> tuple[int, bytes, str]:
        parent = parse_traceparent(traceparent)
        trace_id = parent[0] if parent else self._new_id(16)
        server_span_id = self._new_id(8)
        start_ns = time.time_ns()
        spans: list[SpanRecord] = []
        failed_hop: str | None = None

        for ds in endpoint.downstreams:
            child_id = self._new_id(8)
            child_start = time.time_ns()
            ok = self._call_downstream(ds, trace_id, child_id)
            child_end = time.time_ns()
            spans.append(
                SpanRecord(
                    trace_id=trace_id,
                    span_id=child_id,
                    parent_span_id=server_span_id,
                    name=f"call {ds.name}{ds.url}",
                    start_ns=child_start,
                    end_ns=child_end,
                    attributes={
                        "peer": ds.name,
                        "entrypoint": ds.url,
                        "status": "ok" if ok else "error",
                    },
                )
            )
            if not ok:
                failed_hop = ds.name
                break  # fail fast; remaining downstreams are not queried

        if failed_hop is not None:
            status, body, ctype = (
                502,
                f"downstream '{failed_hop}' failed".encode(),
                "text/plain",
            )
        else:
            status, body, ctype = 200, self._payload(endpoint.psize), "application/octet-stream"

        if self.exporter:
            spans.insert(
                0,
                SpanRecord(
                    trace_id=trace_id,
                    span_id=server_span_id,
                    parent_span_id=parent[1] if parent else None,
                    name=f"{self.config.name}{endpoint.entrypoint}",
                    start_ns=start_ns,
                    end_ns=time.time_ns(),
                    attributes={
                        "peer": self.config.name,
                        "entrypoint": endpoint.entrypoint,
                        "status": str(status),
                    },
                ),
            )
            for record in spans:
                self.exporter.export(record)
        return status, body, ctype

    def _call_downstream(self, ds: Downstream, trace_id: str, span_id: str) -> bool:
        host = f"[{ds.address}]" if ":" in ds.address else ds.address
        url = f"{ds.scheme}://{host}:{ds.port}{ds.url}"
        req = urllib.request.Request(
            url, headers={"traceparent": format_traceparent(trace_id, span_id)}
        )
        ctx = None
        if ds.scheme == "https":
            ctx = ssl.create_default_context()
            if self.config.tls and self.config.tls.get("ca"):
                ctx.load_verify_locations(self.config.tls["ca"])
            ctx.check_hostname = False
        try:
            with urllib.request.urlopen(
                req, timeout=self.config.downstream_timeout_s, context=ctx
            ) as resp:
                resp.read()
                return resp.status == 200
        except (urllib.error.URLError, OSError, ValueError):
            return False


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="topoforge-service", description=__doc__)
    ap.add_argument("--config", required=True, help="runtime config JSON path")
    args = ap.parse_args(argv)
    config = RuntimeConfig.load(args.config)
    endpoint = os.environ.get("TRACE_COLLECTOR_ENDPOINT")
    if endpoint and not config.tracing_endpoint:
        from dataclasses import replace

        config = replace(config, tracing_endpoint=endpoint)
    service = Microservice(config)
    try:
        service.serve_forever()
    except KeyboardInterrupt:
        service.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())
