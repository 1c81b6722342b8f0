"""The long-lived node process.

One protocol thread owns all engine state.  It multiplexes the
discovery sockets, the TCP frame listener, a command pipe from the HTTP
API, and a periodic tick timer; every engine mutation happens on this
thread, so invitations, grouping, and sequencing never interleave
mid-transition.

Transport layout
  - probes go to the multicast group from a UDP socket bound to our
    unicast port, so receivers learn where to reach us from the
    datagram's source address;
  - beacons come back as plain unicast datagrams to that same port;
  - invitations and sealed group frames travel over short TCP
    connections to the peer's unicast port, each frame prefixed with a
    u32 length.

With airplane=true no sockets are opened at all: the engine still
ticks and the API still answers, but nothing is transmitted.
"""

from __future__ import annotations

import logging
import queue
import random
import secrets
import selectors
import socket
import struct
import threading
import time
from typing import Any, Callable

from .. import wire
from ..engine import Action, ControlEvent, Engine, SendBeacon, SendProbe, SendStream
from .config import NodeConfig

log = logging.getLogger("proxchat.node")

TICK_MS = 30.0
TCP_CONNECT_TIMEOUT = 2.0
MAX_FRAME = 1 << 20


class NodeError(Exception):
    pass


class PortInUse(NodeError):
    pass


class MulticastJoinFailed(NodeError):
    pass


def _now_ms() -> float:
    return time.monotonic() * 1000.0


class _TcpConn:
    """Accumulates length-prefixed frames from one inbound connection."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.buf = b""

    def feed(self) -> list[bytes] | None:
        """Read available bytes; returns complete frames, None on EOF."""
        try:
            chunk = self.sock.recv(65536)
        except (BlockingIOError, InterruptedError):
            return []
        except OSError:
            return None
        if not chunk:
            return None
        self.buf += chunk
        frames = []
        while len(self.buf) >= 4:
            (n,) = struct.unpack(">I", self.buf[:4])
            if n > MAX_FRAME:
                return None
            if len(self.buf) < 4 + n:
                break
            frames.append(self.buf[4 : 4 + n])
            self.buf = self.buf[4 + n :]
        return frames


class NodeDaemon:
    def __init__(self, cfg: NodeConfig, seed: int | None = None, web_root: str | None = None):
        cfg.validate()
        self.cfg = cfg
        self.web_root = web_root
        rng = random.Random(seed) if seed is not None else random.Random(secrets.randbits(128))
        self.engine = Engine(
            device_id=cfg.device_id_bytes(),
            rng=rng,
            name=cfg.name,
            interests=list(cfg.interests),
            go_intent=cfg.go_intent,
            dwell_min_ms=cfg.dwell_min_ms,
            dwell_max_ms=cfg.dwell_max_ms,
            stale_after_ms=cfg.stale_after_ms,
            invitation_ttl_ms=cfg.invitation_ttl_ms,
        )
        self.endpoints: dict[bytes, tuple[str, int]] = {}  # device_id -> (ip, unicast port)
        self._commands: queue.Queue[tuple[Callable[[float], Any], "_Reply"]] = queue.Queue()
        self._subscribers: list[queue.Queue[ControlEvent | None]] = []
        self._subs_lock = threading.Lock()
        self._journal_cursor = 0
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._mcast_rx: socket.socket | None = None
        self._udp: socket.socket | None = None
        self._tcp: socket.socket | None = None
        self._wake_r, self._wake_w = socket.socketpair()
        self._wake_r.setblocking(False)
        self._api_server = None

    # ------------------------------------------------------------------ sockets

    def _open_sockets(self) -> None:
        cfg = self.cfg
        mcast = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        mcast.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        if hasattr(socket, "SO_REUSEPORT"):
            mcast.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEPORT, 1)
        try:
            mcast.bind(("", cfg.multicast_port))
        except OSError as e:
            raise PortInUse(f"multicast port {cfg.multicast_port}: {e}") from None
        mreq = struct.pack("4s4s", socket.inet_aton(cfg.multicast_group), socket.inet_aton("0.0.0.0"))
        try:
            mcast.setsockopt(socket.IPPROTO_IP, socket.IP_ADD_MEMBERSHIP, mreq)
        except OSError as e:
            raise MulticastJoinFailed(f"cannot join {cfg.multicast_group}: {e}") from None
        mcast.setblocking(False)
        self._mcast_rx = mcast

        udp = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        udp.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        udp.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_TTL, 1)
        udp.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_LOOP, 1)
        try:
            udp.bind(("", cfg.unicast_port))
        except OSError as e:
            raise PortInUse(f"unicast port {cfg.unicast_port}: {e}") from None
        udp.setblocking(False)
        self._udp = udp

        tcp = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        tcp.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            tcp.bind(("", cfg.unicast_port))
        except OSError as e:
            raise PortInUse(f"unicast tcp port {cfg.unicast_port}: {e}") from None
        tcp.listen(32)
        tcp.setblocking(False)
        self._tcp = tcp

    # ------------------------------------------------------------------ lifecycle

    def start(self) -> None:
        from .api import ApiServer

        if not self.cfg.airplane:
            self._open_sockets()
        self._api_server = ApiServer(self)
        self._api_server.start()
        self.engine.start_discovery(_now_ms())  # manual restart re-randomizes the channel
        self._thread = threading.Thread(target=self._loop, name="proxchat-loop", daemon=True)
        self._thread.start()
        log.info(
            "node %s up: api=%s:%d discovery=%s:%d unicast=%d airplane=%s",
            self.engine.device_id.hex()[:8],
            self.cfg.api_bind,
            self.cfg.api_port,
            self.cfg.multicast_group,
            self.cfg.multicast_port,
            self.cfg.unicast_port,
            self.cfg.airplane,
        )

    def stop(self) -> None:
        if self._stop.is_set():
            return
        # leave the group politely before the loop dies
        try:
            if self.engine.group is not None:
                self.call(lambda now: self._dispatch(self.engine.disconnect(now), now))
        except Exception:
            pass
        self._stop.set()
        self._wake_w.send(b"x")
        if self._thread is not None:
            self._thread.join(timeout=5)
        if self._api_server is not None:
            self._api_server.shutdown()
        for s in (self._mcast_rx, self._udp, self._tcp, self._wake_r, self._wake_w):
            if s is not None:
                s.close()
        with self._subs_lock:
            for q in self._subscribers:
                q.put(None)

    def run_forever(self) -> None:
        import signal

        self.start()
        done = threading.Event()

        def handler(signum, frame):
            done.set()

        signal.signal(signal.SIGTERM, handler)
        signal.signal(signal.SIGINT, handler)
        try:
            while not done.is_set() and not self._stop.is_set():
                done.wait(0.2)
        finally:
            self.stop()

    # ------------------------------------------------------------------ command marshaling

    def call(self, fn: Callable[[float], Any], timeout: float = 5.0) -> Any:
        """Run fn(now) on the protocol thread and return its result."""
        reply = _Reply()
        self._commands.put((fn, reply))
        try:
            self._wake_w.send(b"x")
        except OSError:
            pass
        if not reply.done.wait(timeout):
            raise TimeoutError("protocol loop did not answer")
        if reply.error is not None:
            raise reply.error
        return reply.value

    # ------------------------------------------------------------------ event fan-out

    def subscribe(self, since: int = 0) -> tuple[list[ControlEvent], queue.Queue]:
        q: queue.Queue[ControlEvent | None] = queue.Queue()
        with self._subs_lock:
            backlog = [ev for ev in self.engine.journal if ev.seq > since]
            self._subscribers.append(q)
        return backlog, q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._subs_lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def _publish_new_events(self) -> None:
        journal = self.engine.journal
        if self._journal_cursor >= len(journal):
            return
        fresh = journal[self._journal_cursor :]
        self._journal_cursor = len(journal)
        with self._subs_lock:
            for q in self._subscribers:
                for ev in fresh:
                    q.put(ev)

    # ------------------------------------------------------------------ protocol loop

    def _loop(self) -> None:
        sel = selectors.DefaultSelector()
        sel.register(self._wake_r, selectors.EVENT_READ, "wake")
        if self._mcast_rx is not None:
            sel.register(self._mcast_rx, selectors.EVENT_READ, "dgram")
            sel.register(self._udp, selectors.EVENT_READ, "dgram")
            sel.register(self._tcp, selectors.EVENT_READ, "accept")
        next_tick = _now_ms() + TICK_MS
        while not self._stop.is_set():
            timeout = max(0.0, next_tick - _now_ms()) / 1000.0
            for key, _ in sel.select(timeout):
                if key.data == "wake":
                    try:
                        self._wake_r.recv(4096)
                    except OSError:
                        pass
                elif key.data == "dgram":
                    self._read_datagrams(key.fileobj)
                elif key.data == "accept":
                    self._accept_tcp(sel)
                elif isinstance(key.data, _TcpConn):
                    self._read_tcp(sel, key.data)
            self._drain_commands()
            now = _now_ms()
            if now >= next_tick:
                self._dispatch(self.engine.handle_tick(now), now)
                next_tick = now + TICK_MS
            self._publish_new_events()
        sel.close()

    def _drain_commands(self) -> None:
        while True:
            try:
                fn, reply = self._commands.get_nowait()
            except queue.Empty:
                return
            try:
                reply.value = fn(_now_ms())
            except Exception as e:  # handed back to the API caller
                reply.error = e
            reply.done.set()
            self._publish_new_events()

    def _read_datagrams(self, sock) -> None:
        while True:
            try:
                data, addr = sock.recvfrom(wire.MAX_DATAGRAM)
            except (BlockingIOError, InterruptedError):
                return
            except OSError:
                return
            try:
                frame = wire.decode_frame(data)
            except wire.WireError:
                continue
            if isinstance(frame, (wire.Probe, wire.Beacon)):
                if frame.device_id != self.engine.device_id:
                    self.endpoints[frame.device_id] = (addr[0], addr[1])
            now = _now_ms()
            self._dispatch(self.engine.handle_frame(frame, now), now)

    def _accept_tcp(self, sel: selectors.BaseSelector) -> None:
        while True:
            try:
                conn, _ = self._tcp.accept()
            except (BlockingIOError, InterruptedError):
                return
            except OSError:
                return
            conn.setblocking(False)
            sel.register(conn, selectors.EVENT_READ, _TcpConn(conn))

    def _read_tcp(self, sel: selectors.BaseSelector, tc: _TcpConn) -> None:
        frames = tc.feed()
        if frames is None:
            sel.unregister(tc.sock)
            tc.sock.close()
            return
        for raw in frames:
            try:
                frame = wire.decode_frame(raw)
            except wire.WireError:
                continue
            now = _now_ms()
            self._dispatch(self.engine.handle_frame(frame, now), now)

    # ------------------------------------------------------------------ transmit

    def _dispatch(self, actions: list[Action], now: float) -> None:
        if self.cfg.airplane:
            return
        for action in actions:
            try:
                if isinstance(action, SendProbe):
                    self._udp.sendto(
                        wire.encode_frame(action.frame), (self.cfg.multicast_group, self.cfg.multicast_port)
                    )
                elif isinstance(action, SendBeacon):
                    ep = self.endpoints.get(action.to)
                    if ep is not None:
                        self._udp.sendto(wire.encode_frame(action.frame), ep)
                elif isinstance(action, SendStream):
                    self._send_stream(action)
            except OSError as e:
                log.debug("tx failed: %s", e)

    def _send_stream(self, action: SendStream) -> None:
        ep = self.endpoints.get(action.to)
        if ep is None:
            log.debug("no endpoint for %s, dropping frame", action.to.hex()[:8])
            return
        payload = wire.encode_frame(action.frame)
        try:
            with socket.create_connection(ep, timeout=TCP_CONNECT_TIMEOUT) as s:
                s.sendall(struct.pack(">I", len(payload)) + payload)
        except OSError as e:
            log.debug("stream to %s failed: %s", ep, e)


class _Reply:
    def __init__(self) -> None:
        self.done = threading.Event()
        self.value: Any = None
        self.error: Exception | None = None
