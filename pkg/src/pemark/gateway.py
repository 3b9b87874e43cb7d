"""Watermarking reverse proxy.

Requests are forwarded to the first route whose ``path_prefix`` matches.
JSON object responses with enough top-level keys come back reordered to
carry the route's watermark; everything else is relayed byte for byte.
Any failure inside the watermarking step falls back to the upstream body.
"""

from __future__ import annotations

import http.client
import json
import logging
import os
import socket
import statistics
import sys
import threading
import time
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import IO, Any, Callable
from urllib.parse import urlsplit

import yaml

from .core import EmbedConfig, Watermark, embed
from .errors import ConfigInvalid, ConfigSyntax, PEMarkError, UpstreamUnreachable
from .ordered_doc import parse, serialize
from .permcode import factorial, min_threshold

__all__ = [
    "Gateway",
    "GatewayConfig",
    "LatencySummary",
    "LogSink",
    "OUTCOMES",
    "OverheadReport",
    "RequestLogRecord",
    "RouteRule",
    "config_from_mapping",
    "load_config",
    "measure_overhead",
]

log = logging.getLogger(__name__)

DEFAULT_MAX_BODY = 8 * 1024 * 1024
ENV_LISTEN = "PEMARK_LISTEN"
ENV_LOG = "PEMARK_LOG"

OUTCOMES = (
    "watermarked",
    "passthrough_non_json",
    "passthrough_parse_error",
    "passthrough_too_few_keys",
    "passthrough_too_large",
    "passthrough_disabled",
    "upstream_error",
    "no_route",
)

HOP_BY_HOP = frozenset({
    "connection", "keep-alive", "proxy-authenticate", "proxy-authorization",
    "te", "trailer", "trailers", "transfer-encoding", "upgrade", "proxy-connection",
})


# -- configuration ------------------------------------------------------------

@dataclass(frozen=True)
class RouteRule:
    path_prefix: str
    upstream_url: str
    watermark: Watermark
    embed_config: EmbedConfig
    content_types: tuple[str, ...] = ("application/json",)
    embed_enabled: bool = True

    def __post_init__(self):
        if self.watermark.value >= factorial(self.embed_config.T):
            raise ConfigInvalid("watermark value does not fit in T! orderings", field="watermark")

    def matches(self, path: str) -> bool:
        return path.startswith(self.path_prefix)


@dataclass(frozen=True)
class GatewayConfig:
    listen_address: tuple[str, int]
    routes: tuple[RouteRule, ...]
    connect_timeout: float = 5.0
    read_timeout: float = 30.0
    log_destination: str = "stderr"
    max_body_bytes: int = DEFAULT_MAX_BODY
    mark_header: bool = True

    def __post_init__(self):
        if not self.routes:
            raise ConfigInvalid("at least one route is required", field="routes")

    def route_for(self, path: str) -> RouteRule | None:
        path = path.split("?", 1)[0]
        for r in self.routes:
            if r.matches(path):
                return r
        return None


def _parse_listen(value: Any) -> tuple[str, int]:
    if not isinstance(value, str) or ":" not in value:
        raise ConfigInvalid(f"expected host:port, got {value!r}", field="listen")
    host, _, port = value.rpartition(":")
    host = host.strip("[]")
    if not host or not port.isdigit() or not 0 <= int(port) <= 65535:
        raise ConfigInvalid(f"expected host:port, got {value!r}", field="listen")
    return host, int(port)


def _number(data: dict, name: str, default: float, route: int | None = None) -> float:
    value = data.get(name, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)) or value <= 0:
        raise ConfigInvalid(f"must be a positive number, got {value!r}", route=route, field=name)
    return value


def _parse_route(i: int, raw: Any) -> RouteRule:
    if not isinstance(raw, dict):
        raise ConfigInvalid("route must be a mapping", route=i)
    for name in ("path_prefix", "upstream_url", "watermark"):
        if name not in raw:
            raise ConfigInvalid("missing required field", route=i, field=name)
    prefix = raw["path_prefix"]
    if not isinstance(prefix, str) or not prefix.startswith("/"):
        raise ConfigInvalid("must be a string starting with '/'", route=i, field="path_prefix")
    url = raw["upstream_url"]
    parts = urlsplit(url) if isinstance(url, str) else None
    if parts is None or parts.scheme not in ("http", "https") or not parts.hostname:
        raise ConfigInvalid(f"must be an absolute http(s) URL, got {url!r}", route=i, field="upstream_url")
    try:
        parts.port
    except ValueError:
        raise ConfigInvalid(f"bad port in {url!r}", route=i, field="upstream_url") from None

    wm_raw = raw["watermark"]
    if not isinstance(wm_raw, dict) or "hex" not in wm_raw or "length" not in wm_raw:
        raise ConfigInvalid("expected {hex: ..., length: ...}", route=i, field="watermark")
    length = wm_raw["length"]
    if isinstance(length, bool) or not isinstance(length, int) or length < 1:
        raise ConfigInvalid(f"length must be a positive integer, got {length!r}", route=i, field="watermark.length")
    try:
        wm = Watermark.from_hex(str(wm_raw["hex"]), length)
    except ValueError as exc:
        raise ConfigInvalid(str(exc), route=i, field="watermark.hex") from None

    threshold = raw.get("threshold")
    if threshold is not None:
        if isinstance(threshold, bool) or not isinstance(threshold, int) or threshold < 2:
            raise ConfigInvalid(f"must be an integer >= 2, got {threshold!r}", route=i, field="threshold")
        if wm.value >= factorial(threshold):
            raise ConfigInvalid(
                f"watermark value {wm.hex} is not below {threshold}!", route=i, field="watermark"
            )
        if threshold < min_threshold(length):
            raise ConfigInvalid(
                f"{threshold} keys cannot carry {length}-bit watermarks (need {min_threshold(length)})",
                route=i, field="threshold",
            )
    decoys = raw.get("decoys", "none")
    try:
        cfg = EmbedConfig(length, threshold, decoy_policy=decoys, decoy_seed=int(raw.get("decoy_seed", 0)))
    except (ValueError, TypeError) as exc:
        raise ConfigInvalid(str(exc), route=i, field="decoys") from None

    ctypes = raw.get("content_types", ["application/json"])
    if isinstance(ctypes, str):
        ctypes = [ctypes]
    if not isinstance(ctypes, list) or not all(isinstance(c, str) for c in ctypes):
        raise ConfigInvalid("must be a list of media types", route=i, field="content_types")
    enabled = raw.get("enabled", True)
    if not isinstance(enabled, bool):
        raise ConfigInvalid("must be true or false", route=i, field="enabled")
    return RouteRule(
        path_prefix=prefix,
        upstream_url=url.rstrip("/"),
        watermark=wm,
        embed_config=cfg,
        content_types=tuple(c.strip().lower() for c in ctypes),
        embed_enabled=enabled,
    )


def config_from_mapping(data: Any, env: dict | None = None) -> GatewayConfig:
    """Validate a decoded config document; ``env`` overrides listen and log."""
    env = os.environ if env is None else env
    if not isinstance(data, dict):
        raise ConfigInvalid("config must be a mapping")
    listen = env.get(ENV_LISTEN) or data.get("listen", "127.0.0.1:8080")
    routes = data.get("routes")
    if not isinstance(routes, list) or not routes:
        raise ConfigInvalid("at least one route is required", field="routes")
    timeouts = data.get("timeouts", {}) or {}
    if not isinstance(timeouts, dict):
        raise ConfigInvalid("must be a mapping", field="timeouts")
    max_body = data.get("max_body_bytes", DEFAULT_MAX_BODY)
    if isinstance(max_body, bool) or not isinstance(max_body, int) or max_body < 0:
        raise ConfigInvalid(f"must be a non-negative integer, got {max_body!r}", field="max_body_bytes")
    log_dest = env.get(ENV_LOG) or data.get("log", "stderr")
    if not isinstance(log_dest, str):
        raise ConfigInvalid("must be stdout, stderr, none or a file path", field="log")
    return GatewayConfig(
        listen_address=_parse_listen(listen),
        routes=tuple(_parse_route(i, r) for i, r in enumerate(routes)),
        connect_timeout=_number(timeouts, "connect", 5.0),
        read_timeout=_number(timeouts, "read", 30.0),
        log_destination=log_dest,
        max_body_bytes=max_body,
        mark_header=bool(data.get("mark_header", True)),
    )


def load_config(path: str | os.PathLike, env: dict | None = None) -> GatewayConfig:
    """Read a YAML (or JSON) gateway config file."""
    with open(path, encoding="utf-8") as fp:
        text = fp.read()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigSyntax(f"{path}: {exc}") from None
    return config_from_mapping(data, env)


# -- logging ------------------------------------------------------------------

@dataclass(frozen=True)
class RequestLogRecord:
    timestamp: str
    route: str | None
    method: str
    path: str
    status: int
    upstream_ms: float
    embed_ms: float
    outcome: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))


class LogSink:
    """Serializes request records into one stream; also keeps listeners for tests."""

    def __init__(self, stream: IO[str] | None = None):
        self._stream = stream
        self._lock = threading.Lock()
        self._owned = False
        self.listeners: list[Callable[[RequestLogRecord], None]] = []

    @classmethod
    def open(cls, destination: str) -> LogSink:
        if destination == "stderr":
            return cls(sys.stderr)
        if destination == "stdout":
            return cls(sys.stdout)
        if destination == "none":
            return cls(None)
        sink = cls(open(destination, "a", encoding="utf-8", buffering=1))
        sink._owned = True
        return sink

    def write(self, record: RequestLogRecord) -> None:
        with self._lock:
            if self._stream is not None:
                self._stream.write(record.to_json() + "\n")
                self._stream.flush()
            for fn in self.listeners:
                fn(record)

    def message(self, text: str) -> None:
        with self._lock:
            if self._stream is not None:
                self._stream.write(text + "\n")
                self._stream.flush()

    def close(self) -> None:
        if self._owned and self._stream is not None:
            self._stream.close()


# -- proxy --------------------------------------------------------------------

def _watermark_body(body: bytes, route: RouteRule) -> tuple[bytes | None, str]:
    """Return (new body or None, outcome)."""
    cfg = route.embed_config
    try:
        doc = parse(body)
    except PEMarkError:
        return None, "passthrough_parse_error"
    if doc.N < cfg.T and cfg.decoy_policy == "none":
        return None, "passthrough_too_few_keys"
    return serialize(embed(doc, route.watermark, cfg)).encode("utf-8"), "watermarked"


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, config: GatewayConfig, sink: LogSink):
        self.config = config
        self.sink = sink
        self.closing = False
        self._active = 0
        self._idle = threading.Condition()
        super().__init__(address, _Handler)

    def begin(self):
        with self._idle:
            self._active += 1

    def end(self):
        with self._idle:
            self._active -= 1
            self._idle.notify_all()

    def drain(self, timeout: float) -> bool:
        with self._idle:
            return self._idle.wait_for(lambda: self._active == 0, timeout)


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "pemark-gateway"
    # headers and body go out as separate writes
    disable_nagle_algorithm = True
    server: _Server

    def log_message(self, format, *args):  # noqa: A002 - stdlib signature
        log.debug("%s " + format, self.address_string(), *args)

    def _read_request_body(self) -> bytes | None:
        if "chunked" in self.headers.get("Transfer-Encoding", "").lower():
            chunks = []
            while True:
                size = int(self.rfile.readline().split(b";", 1)[0].strip() or b"0", 16)
                if size == 0:
                    # trailer section ends with a blank line
                    while self.rfile.readline() not in (b"\r\n", b"\n", b""):
                        pass
                    break
                chunks.append(self.rfile.read(size))
                self.rfile.readline()
            return b"".join(chunks)
        length = int(self.headers.get("Content-Length") or 0)
        return self.rfile.read(length) if length else None

    def _send(self, status: int, headers: list[tuple[str, str]], body: bytes, reason: str | None = None):
        # relayed responses keep the upstream's Server and Date headers
        self.log_request(status)
        self.send_response_only(status, reason)
        names = {k.lower() for k, _ in headers}
        if "server" not in names:
            self.send_header("Server", self.version_string())
        if "date" not in names:
            self.send_header("Date", self.date_time_string())
        for k, v in headers:
            self.send_header(k, v)
        self.send_header("Content-Length", str(len(body)))
        if self.server.closing:
            self.send_header("Connection", "close")
            self.close_connection = True
        self.end_headers()
        if self.command != "HEAD" and body:
            self.wfile.write(body)

    def _error(self, status: int, message: str):
        body = json.dumps({"error": message}).encode()
        self._send(status, [("Content-Type", "application/json")], body)

    def _proxy(self):
        srv = self.server
        srv.begin()
        try:
            self._proxy_inner()
        finally:
            srv.end()

    def _proxy_inner(self):
        cfg = self.server.config
        route = cfg.route_for(self.path)
        started = datetime.now(timezone.utc).isoformat(timespec="milliseconds")
        upstream_ms = embed_ms = 0.0

        def record(status, outcome):
            self.server.sink.write(RequestLogRecord(
                started, route.path_prefix if route else None, self.command, self.path,
                status, round(upstream_ms, 3), round(embed_ms, 3), outcome,
            ))

        body = self._read_request_body()
        if route is None:
            self._error(404, "no route matches this path")
            record(404, "no_route")
            return

        target = urlsplit(route.upstream_url)
        headers = {}
        for k, v in self.headers.items():
            lk = k.lower()
            if lk in HOP_BY_HOP or lk in ("host", "content-length", "accept-encoding"):
                continue
            headers[k] = v
        headers["Accept-Encoding"] = "identity"
        headers["Host"] = target.netloc
        if body is not None:
            headers["Content-Length"] = str(len(body))

        conn_cls = http.client.HTTPSConnection if target.scheme == "https" else http.client.HTTPConnection
        conn = conn_cls(target.hostname, target.port, timeout=cfg.connect_timeout)
        t0 = time.perf_counter()
        try:
            try:
                conn.connect()
            except socket.timeout:
                raise
            except OSError as exc:
                upstream_ms = (time.perf_counter() - t0) * 1000
                self._error(502, f"upstream unreachable: {exc}")
                record(502, "upstream_error")
                return
            conn.sock.settimeout(cfg.read_timeout)
            conn.request(self.command, target.path + self.path, body=body, headers=headers)
            resp = conn.getresponse()
            payload = resp.read() if self.command != "HEAD" else b""
        except socket.timeout:
            upstream_ms = (time.perf_counter() - t0) * 1000
            self._error(504, "upstream timed out")
            record(504, "upstream_error")
            return
        except (OSError, http.client.HTTPException) as exc:
            upstream_ms = (time.perf_counter() - t0) * 1000
            self._error(502, f"bad upstream response: {exc}")
            record(502, "upstream_error")
            return
        finally:
            conn.close()
        upstream_ms = (time.perf_counter() - t0) * 1000

        out_headers = [
            (k, v) for k, v in resp.getheaders()
            if k.lower() not in HOP_BY_HOP and k.lower() != "content-length"
        ]
        media = (resp.getheader("Content-Type") or "").split(";", 1)[0].strip().lower()
        encoding = (resp.getheader("Content-Encoding") or "identity").strip().lower()

        if not route.embed_enabled:
            outcome = "passthrough_disabled"
        elif media not in route.content_types or encoding != "identity" or self.command == "HEAD":
            outcome = "passthrough_non_json"
        elif len(payload) > cfg.max_body_bytes:
            outcome = "passthrough_too_large"
        else:
            t1 = time.perf_counter()
            try:
                new_body, outcome = _watermark_body(payload, route)
            except Exception:
                # fail open: never turn a watermarking problem into an outage
                log.exception("watermarking failed for %s", self.path)
                new_body, outcome = None, "passthrough_parse_error"
            embed_ms = (time.perf_counter() - t1) * 1000
            if new_body is not None:
                payload = new_body
                if cfg.mark_header:
                    out_headers.append(("X-PEMark", "1"))
        self._send(resp.status, out_headers, payload, resp.reason)
        record(resp.status, outcome)

    do_GET = do_POST = do_PUT = do_DELETE = do_PATCH = do_HEAD = do_OPTIONS = _proxy


class Gateway:
    """A running (or startable) proxy bound to ``config.listen_address``."""

    def __init__(self, config: GatewayConfig, sink: LogSink | None = None):
        self.config = config
        self.sink = sink if sink is not None else LogSink.open(config.log_destination)
        self._server = _Server(config.listen_address, config, self.sink)
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        host, port = self._server.server_address[:2]
        return host, port

    @property
    def url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}"

    def serve_forever(self) -> None:
        self._server.serve_forever(poll_interval=0.1)

    def start(self) -> Gateway:
        if self._thread is not None:
            return self
        self._thread = threading.Thread(target=self.serve_forever, name="pemark-gateway", daemon=True)
        self._thread.start()
        return self

    def shutdown(self, grace: float = 10.0) -> None:
        """Stop accepting connections and let in-flight requests finish."""
        srv = self._server
        srv.closing = True
        if self._thread is not None:
            srv.shutdown()
            self._thread.join()
        srv.drain(grace)
        srv.server_close()
        self.sink.close()

    def __enter__(self) -> Gateway:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.shutdown()


# -- overhead measurement -----------------------------------------------------

@dataclass(frozen=True)
class LatencySummary:
    n: int
    mean_ms: float
    p50_ms: float
    p95_ms: float

    @classmethod
    def of(cls, samples: list[float]) -> LatencySummary:
        xs = sorted(samples)
        q = statistics.quantiles(xs, n=20, method="inclusive") if len(xs) > 1 else [xs[0]] * 19
        return cls(len(xs), statistics.fmean(xs), statistics.median(xs), q[18])


@dataclass(frozen=True)
class OverheadReport:
    original: LatencySummary
    watermarked: LatencySummary
    embed: LatencySummary
    outcomes: dict[str, int] = field(default_factory=dict)

    @property
    def overhead_ms(self) -> float:
        return self.watermarked.mean_ms - self.original.mean_ms


def _probe(url: str, timeout: float) -> None:
    parts = urlsplit(url)
    port = parts.port or (443 if parts.scheme == "https" else 80)
    try:
        socket.create_connection((parts.hostname, port), timeout=timeout).close()
    except OSError as exc:
        raise UpstreamUnreachable(f"{url}: {exc}") from None


def measure_overhead(
    route: RouteRule,
    request_count: int,
    path: str | None = None,
    control: bool = False,
    timeout: float = 5.0,
) -> OverheadReport:
    """Client-observed latency through a pass-through gateway vs. a watermarking one.

    Both gateways run locally against ``route``'s upstream and requests
    alternate between them. With ``control=True`` both arms pass through.
    """
    if request_count < 1:
        raise ValueError("request_count must be at least 1")
    _probe(route.upstream_url, timeout)
    path = path or route.path_prefix
    base = replace(route, embed_enabled=False)
    treated = base if control else route
    embed_times: list[float] = []
    outcomes: dict[str, int] = {}

    def on_record(rec: RequestLogRecord):
        outcomes[rec.outcome] = outcomes.get(rec.outcome, 0) + 1
        if rec.outcome == "watermarked":
            embed_times.append(rec.embed_ms)

    arms = []
    for r, listen in ((base, True), (treated, False)):
        sink = LogSink(None)
        if not listen:
            sink.listeners.append(on_record)
        gw = Gateway(GatewayConfig(("127.0.0.1", 0), (r,), connect_timeout=timeout, read_timeout=timeout), sink)
        arms.append(gw.start())
    samples: list[list[float]] = [[], []]
    try:
        conns = [http.client.HTTPConnection(*gw.address, timeout=timeout) for gw in arms]
        for _ in range(request_count):
            for i, conn in enumerate(conns):
                t0 = time.perf_counter()
                conn.request("GET", path)
                resp = conn.getresponse()
                resp.read()
                samples[i].append((time.perf_counter() - t0) * 1000)
                if resp.status >= 500:
                    raise UpstreamUnreachable(f"gateway answered {resp.status}")
        for conn in conns:
            conn.close()
    finally:
        for gw in arms:
            gw.shutdown()
    return OverheadReport(
        original=LatencySummary.of(samples[0]),
        watermarked=LatencySummary.of(samples[1]),
        embed=LatencySummary.of(embed_times or [0.0]),
        outcomes=outcomes,
    )
