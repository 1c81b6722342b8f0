"""Loopback HTTP control API and NDJSON event stream.

Every command is marshaled onto the protocol thread, so the API never
mutates engine state concurrently.  GET /v1/events streams the control
journal as one JSON object per line, with ~1 s heartbeats carrying the
server clock so clients can keep countdowns honest.

Module errors map to machine-readable codes: the exception class name
is the code, e.g. {"code": "PeerBusy"}.
"""

from __future__ import annotations

import base64
import json
import mimetypes
import os
import queue
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import TYPE_CHECKING, Any

from .. import grouping, messaging, profile
from ..discovery import AlreadyRunning
from ..messaging import InkNote

if TYPE_CHECKING:
    from .daemon import NodeDaemon

HEARTBEAT_S = 1.0

_STATUS_BY_ERROR: dict[type, int] = {
    profile.Oversize: 400,
    profile.IllegalCharacter: 400,
    profile.EmptyProfile: 400,
    messaging.OversizePayload: 400,
    messaging.EmptyBody: 400,
    messaging.MalformedInk: 400,
    grouping.PeerBusy: 400,
    grouping.GroupFull: 400,
    ValueError: 400,
    grouping.PeerUnknown: 404,
    grouping.ExpiredInvitation: 409,
    grouping.AlreadyResolved: 409,
    grouping.DuplicatePending: 409,
    grouping.NotInGroup: 409,
    grouping.NotAvailable: 409,
    messaging.NotConnected: 409,
    AlreadyRunning: 409,
}


def _status_for(exc: Exception) -> int:
    for cls, status in _STATUS_BY_ERROR.items():
        if isinstance(exc, cls):
            return status
    return 500


class ApiServer:
    def __init__(self, daemon: "NodeDaemon"):
        self.daemon = daemon
        handler = _make_handler(daemon)
        try:
            self.httpd = ThreadingHTTPServer((daemon.cfg.api_bind, daemon.cfg.api_port), handler)
        except OSError as e:
            from .daemon import PortInUse

            raise PortInUse(f"api port {daemon.cfg.api_port}: {e}") from None
        self.httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    def start(self) -> None:
        self._thread = threading.Thread(target=self.httpd.serve_forever, name="proxchat-api", daemon=True)
        self._thread.start()

    def shutdown(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()


def _make_handler(daemon: "NodeDaemon"):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            pass

        # -------------------------------------------------------------- helpers

        def _json(self, status: int, body: Any) -> None:
            payload = json.dumps(body).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def _error(self, exc: Exception) -> None:
            self._json(_status_for(exc), {"code": type(exc).__name__, "detail": str(exc)})

        def _body(self) -> dict:
            length = int(self.headers.get("Content-Length") or 0)
            if length == 0:
                return {}
            try:
                parsed = json.loads(self.rfile.read(length))
            except json.JSONDecodeError:
                raise ValueError("body is not valid JSON") from None
            if not isinstance(parsed, dict):
                raise ValueError("body must be a JSON object")
            return parsed

        def _authorized(self) -> bool:
            token = daemon.cfg.api_token
            if not token:
                return True
            return self.headers.get("Authorization") == f"Bearer {token}"

        # -------------------------------------------------------------- routing

        def do_GET(self):
            try:
                if self.path.startswith("/v1/") and not self._authorized():
                    self._json(401, {"code": "Unauthorized"})
                    return
                if self.path == "/v1/profile":
                    self._json(200, daemon.call(lambda now: daemon.engine.profile_view()))
                elif self.path == "/v1/peers":
                    self._json(200, daemon.call(lambda now: daemon.engine.peers_view()))
                elif self.path == "/v1/invitations":
                    self._json(200, daemon.call(lambda now: daemon.engine.invitations_view(now)))
                elif self.path == "/v1/group":
                    self._json(200, daemon.call(lambda now: daemon.engine.group_view()))
                elif self.path.startswith("/v1/events"):
                    self._stream_events()
                else:
                    self._static()
            except Exception as e:
                self._error(e)

        def do_PUT(self):
            try:
                if not self._authorized():
                    self._json(401, {"code": "Unauthorized"})
                    return
                if self.path == "/v1/profile":
                    body = self._body()
                    name = body.get("name", "")
                    interests = body.get("interests", [])
                    daemon.call(lambda now: daemon.engine.set_profile(name, interests, now))
                    self._json(200, daemon.call(lambda now: daemon.engine.profile_view()))
                else:
                    self._json(404, {"code": "NotFound"})
            except Exception as e:
                self._error(e)

        def do_POST(self):
            try:
                if not self._authorized():
                    self._json(401, {"code": "Unauthorized"})
                    return
                if self.path == "/v1/invitations":
                    self._post_invitation()
                elif self.path.startswith("/v1/invitations/") and self.path.endswith("/response"):
                    self._post_response()
                elif self.path == "/v1/messages":
                    self._post_message()
                elif self.path == "/v1/disconnect":
                    daemon.call(lambda now: daemon._dispatch(daemon.engine.disconnect(now), now))
                    self._json(200, {"ok": True})
                elif self.path == "/v1/discovery/restart":
                    daemon.call(lambda now: daemon.engine.restart_discovery(now))
                    self._json(200, {"ok": True})
                else:
                    self._json(404, {"code": "NotFound"})
            except Exception as e:
                self._error(e)

        # -------------------------------------------------------------- commands

        def _post_invitation(self):
            body = self._body()
            try:
                peer = bytes.fromhex(body.get("device_id", ""))
            except ValueError:
                raise ValueError("device_id must be hex") from None

            def run(now):
                inv, actions = daemon.engine.invite(peer, now)
                daemon._dispatch(actions, now)
                return inv

            inv = daemon.call(run)
            self._json(200, {"id": inv.id.hex(), "remaining_ms": inv.ttl_ms})

        def _post_response(self):
            inv_hex = self.path.split("/")[3]
            try:
                inv_id = bytes.fromhex(inv_hex)
            except ValueError:
                raise ValueError("invitation id must be hex") from None
            accept = bool(self._body().get("accept", False))

            def run(now):
                daemon._dispatch(daemon.engine.respond(inv_id, accept, now), now)

            daemon.call(run)
            self._json(200, {"ok": True})

        def _post_message(self):
            body = self._body()
            kind = body.get("kind")
            if kind == "chat":
                text = body.get("text", "")

                def run(now):
                    seq, actions = daemon.engine.send_chat(text)
                    daemon._dispatch(actions, now)
                    return seq

            elif kind == "ink":
                strokes = body.get("strokes", [])
                note = InkNote(strokes=tuple(tuple((p[0], p[1]) for p in s) for s in strokes))

                def run(now):
                    seq, actions = daemon.engine.send_ink(note)
                    daemon._dispatch(actions, now)
                    return seq

            elif kind == "file":
                name = body.get("name", "")
                try:
                    data = base64.b64decode(body.get("data_b64", ""), validate=True)
                except Exception:
                    raise ValueError("data_b64 is not valid base64") from None

                def run(now):
                    seqs, actions = daemon.engine.send_file(name, data)
                    daemon._dispatch(actions, now)
                    return seqs

            else:
                raise ValueError(f"unknown message kind {kind!r}")
            seq = daemon.call(run)
            self._json(200, {"ok": True, "seq": seq})

        # -------------------------------------------------------------- events

        def _stream_events(self):
            since = 0
            if "?" in self.path:
                for part in self.path.split("?", 1)[1].split("&"):
                    if part.startswith("since="):
                        try:
                            since = int(part[6:])
                        except ValueError:
                            pass
            backlog, q = daemon.subscribe(since)
            self.send_response(200)
            self.send_header("Content-Type", "application/x-ndjson")
            self.send_header("Cache-Control", "no-cache")
            self.send_header("Connection", "close")
            self.end_headers()
            try:
                for ev in backlog:
                    self._write_line(ev.to_json())
                while True:
                    try:
                        ev = q.get(timeout=HEARTBEAT_S)
                    except queue.Empty:
                        self._write_line({"event": "heartbeat", "t_ms": time.monotonic() * 1000.0})
                        continue
                    if ev is None:
                        break
                    self._write_line(ev.to_json())
            except (BrokenPipeError, ConnectionResetError, OSError):
                pass
            finally:
                daemon.unsubscribe(q)

        def _write_line(self, obj: dict) -> None:
            self.wfile.write((json.dumps(obj) + "\n").encode())
            self.wfile.flush()

        # -------------------------------------------------------------- static UI

        def _static(self):
            root = daemon.web_root
            if not root:
                self._json(404, {"code": "NotFound"})
                return
            rel = self.path.split("?", 1)[0].lstrip("/") or "index.html"
            path = os.path.realpath(os.path.join(root, rel))
            if not path.startswith(os.path.realpath(root)) or not os.path.isfile(path):
                self._json(404, {"code": "NotFound"})
                return
            ctype = mimetypes.guess_type(path)[0] or "application/octet-stream"
            with open(path, "rb") as f:
                data = f.read()
            self.send_response(200)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

    return Handler
