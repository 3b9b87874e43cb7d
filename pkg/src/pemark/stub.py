"""A tiny fixed-response HTTP server standing in for a real upstream API."""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

__all__ = ["GITHUB_USER", "StubResponse", "StubUpstream"]

# shape of a public GitHub /users/<name> response
GITHUB_USER = (
    b'{"login":"google","id":1342004,"node_id":"MDEyOk9yZ2FuaXphdGlvbjEzNDIwMDQ=",'
    b'"avatar_url":"https://avatars.githubusercontent.com/u/1342004?v=4","gravatar_id":"",'
    b'"url":"https://api.github.com/users/google","html_url":"https://github.com/google",'
    b'"followers_url":"https://api.github.com/users/google/followers",'
    b'"following_url":"https://api.github.com/users/google/following{/other_user}",'
    b'"gists_url":"https://api.github.com/users/google/gists{/gist_id}",'
    b'"starred_url":"https://api.github.com/users/google/starred{/owner}{/repo}",'
    b'"subscriptions_url":"https://api.github.com/users/google/subscriptions",'
    b'"organizations_url":"https://api.github.com/users/google/orgs",'
    b'"repos_url":"https://api.github.com/users/google/repos",'
    b'"events_url":"https://api.github.com/users/google/events{/privacy}",'
    b'"received_events_url":"https://api.github.com/users/google/received_events",'
    b'"type":"Organization","user_view_type":"public","site_admin":false,"name":"Google",'
    b'"company":null,"blog":"https://opensource.google/","location":null,"email":"opensource@google.com",'
    b'"hireable":null,"bio":"Google \xe2\x9d\xa4\xef\xb8\x8f Open Source","twitter_username":"GoogleOSS",'
    b'"public_repos":2700,"public_gists":0,"followers":58000,"following":0,'
    b'"created_at":"2012-01-18T01:30:18Z","updated_at":"2024-08-23T12:00:00Z"}'
)


@dataclass(frozen=True)
class StubResponse:
    body: bytes
    content_type: str = "application/json"
    status: int = 200
    delay: float = 0.0
    headers: tuple[tuple[str, str], ...] = ()


class _StubHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    disable_nagle_algorithm = True

    def log_message(self, format, *args):  # noqa: A002
        pass

    def _respond(self):
        length = int(self.headers.get("Content-Length") or 0)
        if length:
            self.rfile.read(length)
        srv = self.server
        with srv.lock:
            srv.requests.append((self.command, self.path, dict(self.headers.items())))
        stub = srv.routes.get(self.path.split("?", 1)[0])
        if stub is None:
            stub = StubResponse(b'{"message":"Not Found"}', status=404)
        if stub.delay:
            time.sleep(stub.delay)
        self.send_response(stub.status)
        self.send_header("Content-Type", stub.content_type)
        for k, v in stub.headers:
            self.send_header(k, v)
        self.send_header("Content-Length", str(len(stub.body)))
        self.end_headers()
        if self.command != "HEAD":
            self.wfile.write(stub.body)

    do_GET = do_POST = do_PUT = do_DELETE = do_PATCH = do_HEAD = do_OPTIONS = _respond


class StubUpstream:
    """Serve ``routes`` (exact path -> StubResponse) on a background thread."""

    def __init__(self, routes: dict[str, StubResponse], host: str = "127.0.0.1", port: int = 0):
        self._server = ThreadingHTTPServer((host, port), _StubHandler)
        self._server.daemon_threads = True
        self._server.routes = dict(routes)
        self._server.requests = []
        self._server.lock = threading.Lock()
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    @property
    def requests(self) -> list:
        return list(self._server.requests)

    def start(self) -> StubUpstream:
        self._thread = threading.Thread(target=self._server.serve_forever, kwargs={"poll_interval": 0.1}, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> StubUpstream:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
