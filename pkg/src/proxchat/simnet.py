"""Deterministic discrete-event radio simulator.

Devices sit at fixed positions on a plane and run the complete protocol
engine.  A unit-disk radio delivers frames: discovery datagrams are
lossy and gated by the receiver's listen phase and channel, while
invitation and group frames behave like a reliable in-order transport
within range.  Everything is driven by one seeded virtual clock, so a
(scenario, seed) pair always reproduces the same event trace byte for
byte.

Scenario files are JSON:

    {"range_m": 200, "loss": 0.0, "duration_ms": 60000,
     "devices": [{"id": "alice", "name": "Alice", "interests": "music chess",
                  "pos_x": 0, "pos_y": 0, "go_intent": 7}, ...],
     "script": [{"at_ms": 0, "device": "alice", "action": "start_discovery"}, ...]}

Script actions: set_profile, start_discovery, invite, respond,
send_chat, send_ink, disconnect.  An optional "chaos" section injects
duplicate and cross-sender-reordered group-frame deliveries for
resilience testing; per-sender order is preserved so sequencing alone
decides what gets dropped.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import math
import random
import statistics
from dataclasses import dataclass, field
from typing import Any, Callable

from . import wire
from .discovery import Phase
from .engine import Action, Engine, SendBeacon, SendProbe, SendStream
from .grouping import GroupingError
from .messaging import InkNote, MessagingError
from .profile import ProfileError

DEFAULT_RANGE_M = 200.0
DEFAULT_TICK_MS = 30.0
LATENCY_MS = 1.0
_EPS = 0.001  # keeps reliable streams strictly ordered

FRAME_CLASSES = ("probe", "beacon", "invite", "group")

SCRIPT_ACTIONS = (
    "set_profile",
    "start_discovery",
    "invite",
    "respond",
    "send_chat",
    "send_ink",
    "disconnect",
)


class SimError(Exception):
    pass


class SchemaError(SimError):
    pass


class UnknownDevice(SimError):
    pass


@dataclass(frozen=True)
class RadioModel:
    range_m: float = DEFAULT_RANGE_M
    loss_probability: float = 0.0

    def __post_init__(self) -> None:
        if not self.range_m > 0:
            raise SchemaError("range_m must be positive")
        if not 0.0 <= self.loss_probability < 1.0:
            raise SchemaError("loss must be in [0, 1)")


def in_range(a: tuple[float, float], b: tuple[float, float], model: RadioModel) -> bool:
    """Unit-disk reachability; the boundary distance itself is in range."""
    return math.dist(a, b) <= model.range_m


def device_id_for(label: str) -> bytes:
    """Stable 16-byte device id derived from the scenario label."""
    return hashlib.sha256(label.encode("utf-8")).digest()[:16]


@dataclass
class FrameStats:
    transmitted: int = 0
    delivered: int = 0
    dropped_range: int = 0
    dropped_phase: int = 0
    dropped_loss: int = 0

    def attempts(self) -> int:
        return self.delivered + self.dropped_range + self.dropped_phase + self.dropped_loss

    def to_json(self) -> dict[str, int]:
        return {
            "transmitted": self.transmitted,
            "delivered": self.delivered,
            "dropped_range": self.dropped_range,
            "dropped_phase": self.dropped_phase,
            "dropped_loss": self.dropped_loss,
        }


@dataclass
class SimMetrics:
    discovery_latency_ms: dict[str, float | None] = field(default_factory=dict)
    invitations: dict[str, int] = field(
        default_factory=lambda: {"sent": 0, "accepted": 0, "declined": 0, "expired": 0}
    )
    messages: dict[str, int] = field(default_factory=lambda: {"sent": 0, "delivered": 0, "dropped": 0})
    frames: dict[str, FrameStats] = field(default_factory=lambda: {c: FrameStats() for c in FRAME_CLASSES})
    injected_duplicates: int = 0

    def to_json(self) -> dict[str, Any]:
        return {
            "discovery_latency_ms": dict(self.discovery_latency_ms),
            "invitations": dict(self.invitations),
            "messages": dict(self.messages),
            "frames": {c: s.to_json() for c, s in self.frames.items()},
            "injected_duplicates": self.injected_duplicates,
        }


@dataclass
class SimResult:
    metrics: SimMetrics
    trace: list[dict[str, Any]]

    def trace_jsonl(self) -> str:
        return "\n".join(json.dumps(row, sort_keys=True) for row in self.trace)


_DEVICE_KEYS = {
    "id",
    "name",
    "interests",
    "pos_x",
    "pos_y",
    "go_intent",
    "dwell_min_ms",
    "dwell_max_ms",
    "listen_channel",  # pins the drawn channel; for reproducing rendezvous corner cases
}
_SCENARIO_KEYS = {"range_m", "loss", "duration_ms", "devices", "script", "tick_ms", "chaos"}
_CHAOS_KEYS = {"duplicate_p", "reorder_p", "reorder_jitter_ms"}


def validate_scenario(obj: Any) -> dict[str, Any]:
    """Check scenario structure; raises SchemaError/UnknownDevice."""
    if not isinstance(obj, dict):
        raise SchemaError("scenario must be a JSON object")
    unknown = set(obj) - _SCENARIO_KEYS
    if unknown:
        raise SchemaError(f"unknown scenario keys: {sorted(unknown)}")
    devices = obj.get("devices")
    if not isinstance(devices, list) or not devices:
        raise SchemaError("scenario needs a non-empty devices list")
    labels = set()
    for dev in devices:
        if not isinstance(dev, dict):
            raise SchemaError("device entries must be objects")
        missing = {"id", "name", "pos_x", "pos_y"} - set(dev)
        if missing:
            raise SchemaError(f"device entry missing {sorted(missing)}")
        bad = set(dev) - _DEVICE_KEYS
        if bad:
            raise SchemaError(f"unknown device keys: {sorted(bad)}")
        if dev["id"] in labels:
            raise SchemaError(f"duplicate device id {dev['id']!r}")
        labels.add(dev["id"])
    duration = obj.get("duration_ms")
    if not isinstance(duration, (int, float)) or duration <= 0:
        raise SchemaError("duration_ms must be a positive number")
    RadioModel(range_m=obj.get("range_m", DEFAULT_RANGE_M), loss_probability=obj.get("loss", 0.0))
    chaos = obj.get("chaos", {})
    if chaos:
        bad = set(chaos) - _CHAOS_KEYS
        if bad:
            raise SchemaError(f"unknown chaos keys: {sorted(bad)}")
    for entry in obj.get("script", []):
        if not isinstance(entry, dict) or "at_ms" not in entry or "device" not in entry or "action" not in entry:
            raise SchemaError("script entries need at_ms, device, action")
        if entry["action"] not in SCRIPT_ACTIONS:
            raise SchemaError(f"unknown script action {entry['action']!r}")
        if entry["device"] not in labels:
            raise UnknownDevice(f"script references unknown device {entry['device']!r}")
        for key in ("to", "from"):
            if key in entry and entry[key] not in labels:
                raise UnknownDevice(f"script references unknown device {entry[key]!r}")
    return obj


def load_scenario(path: str) -> dict[str, Any]:
    with open(path, encoding="utf-8") as f:
        try:
            obj = json.load(f)
        except json.JSONDecodeError as e:
            raise SchemaError(f"scenario is not valid JSON: {e}") from None
    return validate_scenario(obj)


@dataclass
class SimDevice:
    label: str
    engine: Engine
    position: tuple[float, float]
    started_at: float | None = None
    journal_cursor: int = 0
    pinned_channel: int | None = None


class Simulation:
    """One seeded run of a scenario."""

    def __init__(self, scenario: dict[str, Any], seed: int, trace: bool = True,
                 stop_on_full_discovery: bool = False):
        validate_scenario(scenario)
        self.radio = RadioModel(
            range_m=scenario.get("range_m", DEFAULT_RANGE_M),
            loss_probability=scenario.get("loss", 0.0),
        )
        self.duration_ms = float(scenario["duration_ms"])
        self.tick_ms = float(scenario.get("tick_ms", DEFAULT_TICK_MS))
        chaos = scenario.get("chaos", {})
        self.chaos_duplicate_p = float(chaos.get("duplicate_p", 0.0))
        self.chaos_reorder_p = float(chaos.get("reorder_p", 0.0))
        self.chaos_jitter_ms = float(chaos.get("reorder_jitter_ms", 5.0))
        self.trace_enabled = trace
        self.stop_on_full_discovery = stop_on_full_discovery

        master = random.Random(seed)
        self.devices: dict[str, SimDevice] = {}
        self.by_id: dict[bytes, SimDevice] = {}
        for dev in scenario["devices"]:
            rng = random.Random(master.getrandbits(64))
            engine = Engine(
                device_id=device_id_for(dev["id"]),
                rng=rng,
                name=dev["name"],
                interests=dev.get("interests", ""),
                go_intent=dev.get("go_intent", 7),
                dwell_min_ms=dev.get("dwell_min_ms", 100.0),
                dwell_max_ms=dev.get("dwell_max_ms", 300.0),
            )
            sd = SimDevice(
                label=dev["id"],
                engine=engine,
                position=(float(dev["pos_x"]), float(dev["pos_y"])),
                pinned_channel=dev.get("listen_channel"),
            )
            self.devices[dev["id"]] = sd
            self.by_id[engine.device_id] = sd
        self.radio_rng = random.Random(master.getrandbits(64))
        self.chaos_rng = random.Random(master.getrandbits(64))

        self.metrics = SimMetrics()
        self.trace: list[dict[str, Any]] = []
        self._heap: list[tuple[float, int, Callable[[float], None]]] = []
        self._heap_seq = 0
        self._stream_clock: dict[tuple[bytes, bytes], float] = {}
        self._origin_clock: dict[tuple[bytes, bytes], float] = {}
        self._undiscovered = {
            tuple(sorted((a, b)))
            for a in self.devices
            for b in self.devices
            if a < b
        }
        self._inviter_of: dict[str, str] = {}  # invitation id hex -> inviter label
        self._stopped = False

        # stagger tick grids so devices do not share flip instants (real
        # devices have independent clocks; lockstep would stall fixed-dwell
        # rendezvous forever)
        for idx, sd in enumerate(self.devices.values()):
            offset = self.tick_ms * idx / max(1, len(self.devices))
            self._schedule(self.tick_ms + offset, lambda t, sd=sd: self._on_tick(sd, t))
        for entry in scenario.get("script", []):
            self._schedule(float(entry["at_ms"]), lambda t, e=entry: self._run_script(e, t))

    # ------------------------------------------------------------------ plumbing

    def _schedule(self, t: float, fn: Callable[[float], None]) -> None:
        self._heap_seq += 1
        heapq.heappush(self._heap, (round(t, 3), self._heap_seq, fn))

    def _trace_row(self, t: float, device: str, event: str, details: dict[str, Any]) -> None:
        if self.trace_enabled:
            self.trace.append({"t_ms": t, "device": device, "event": event, "details": details})

    def _drain_journal(self, sd: SimDevice) -> None:
        journal = sd.engine.journal
        while sd.journal_cursor < len(journal):
            ev = journal[sd.journal_cursor]
            sd.journal_cursor += 1
            self._trace_row(ev.t_ms, sd.label, ev.kind, ev.data)
            self._count_event(sd, ev.kind, ev.data)

    def _count_event(self, sd: SimDevice, kind: str, data: dict[str, Any]) -> None:
        if kind == "invitation_sent":
            self.metrics.invitations["sent"] += 1
            self._inviter_of[data["id"]] = sd.label
        elif kind == "invitation_resolved" and self._inviter_of.get(data["id"]) == sd.label:
            self.metrics.invitations[data["outcome"]] += 1
        elif kind == "message":
            self.metrics.messages["delivered"] += 1

    def _check_discovery(self, sd: SimDevice, now: float) -> None:
        if not self._undiscovered:
            return
        done = []
        for pair in self._undiscovered:
            if sd.label not in pair:
                continue
            a, b = (self.devices[x] for x in pair)
            if a.engine.device_id in b.engine.peers.peers and b.engine.device_id in a.engine.peers.peers:
                starts = [x.started_at for x in (a, b)]
                base = max(s for s in starts if s is not None) if all(s is not None for s in starts) else 0.0
                self.metrics.discovery_latency_ms["|".join(pair)] = round(now - base, 3)
                done.append(pair)
        for pair in done:
            self._undiscovered.discard(pair)
        if self.stop_on_full_discovery and not self._undiscovered:
            self._stopped = True

    # ------------------------------------------------------------------ events

    def _on_tick(self, sd: SimDevice, now: float) -> None:
        actions = sd.engine.handle_tick(now)
        self._dispatch(sd, actions, now)
        self._drain_journal(sd)
        self._schedule(now + self.tick_ms, lambda t: self._on_tick(sd, t))

    def _deliver_frame(self, sd: SimDevice, frame: wire.Frame, now: float) -> None:
        actions = sd.engine.handle_frame(frame, now)
        self._dispatch(sd, actions, now)
        self._drain_journal(sd)
        if isinstance(frame, (wire.Probe, wire.Beacon)):
            self._check_discovery(sd, now)

    def _dispatch(self, src: SimDevice, actions: list[Action], now: float) -> None:
        for action in actions:
            if isinstance(action, SendProbe):
                self._tx_probe(src, action.frame, now)
            elif isinstance(action, SendBeacon):
                self._tx_beacon(src, action, now)
            elif isinstance(action, SendStream):
                self._tx_stream(src, action, now)

    def _tx_probe(self, src: SimDevice, probe: wire.Probe, now: float) -> None:
        stats = self.metrics.frames["probe"]
        stats.transmitted += 1
        for sd in self.devices.values():
            if sd is src:
                continue
            if not in_range(src.position, sd.position, self.radio):
                stats.dropped_range += 1
                continue
            if self.radio.loss_probability > 0 and self.radio_rng.random() < self.radio.loss_probability:
                stats.dropped_loss += 1
                continue
            self._schedule(now + LATENCY_MS, lambda t, sd=sd, p=probe, st=stats: self._rx_probe(sd, p, st, t))

    def _rx_probe(self, sd: SimDevice, probe: wire.Probe, stats: FrameStats, now: float) -> None:
        disc = sd.engine.discovery
        if disc.phase is not Phase.LISTEN or disc.listen_channel != probe.channel:
            stats.dropped_phase += 1
            return
        stats.delivered += 1
        self._deliver_frame(sd, probe, now)

    def _tx_beacon(self, src: SimDevice, action: SendBeacon, now: float) -> None:
        stats = self.metrics.frames["beacon"]
        stats.transmitted += 1
        dst = self.by_id.get(action.to)
        if dst is None:
            return
        if not in_range(src.position, dst.position, self.radio):
            stats.dropped_range += 1
            return
        if self.radio.loss_probability > 0 and self.radio_rng.random() < self.radio.loss_probability:
            stats.dropped_loss += 1
            return

        def rx(t: float) -> None:
            stats.delivered += 1
            self._deliver_frame(dst, action.frame, t)

        self._schedule(now + LATENCY_MS, rx)

    def _tx_stream(self, src: SimDevice, action: SendStream, now: float) -> None:
        cls = "group" if isinstance(action.frame, wire.GroupSealed) else "invite"
        stats = self.metrics.frames[cls]
        stats.transmitted += 1
        dst = self.by_id.get(action.to)
        if dst is None:
            return
        if not in_range(src.position, dst.position, self.radio):
            stats.dropped_range += 1
            if cls == "group":
                self.metrics.messages["dropped"] += 1
            return
        arrival = now + LATENCY_MS
        key = (src.engine.device_id, dst.engine.device_id)
        if cls == "group":
            if self.chaos_reorder_p > 0 and self.chaos_rng.random() < self.chaos_reorder_p:
                arrival += self.chaos_rng.uniform(0.0, self.chaos_jitter_ms)
            origin = action.frame.sealed.header.sender
            okey = (origin, dst.engine.device_id)
            arrival = max(arrival, self._origin_clock.get(okey, 0.0) + _EPS)
            self._origin_clock[okey] = arrival
        arrival = max(arrival, self._stream_clock.get(key, 0.0) + _EPS)
        self._stream_clock[key] = arrival
        frame = action.frame

        def rx(t: float) -> None:
            stats.delivered += 1
            self._deliver_frame(dst, frame, t)

        self._schedule(arrival, rx)
        if cls == "group" and self.chaos_duplicate_p > 0 and self.chaos_rng.random() < self.chaos_duplicate_p:
            self.metrics.injected_duplicates += 1
            dup_at = arrival + self.chaos_rng.uniform(1.0, self.chaos_jitter_ms)
            self._schedule(dup_at, lambda t: self._deliver_frame(dst, frame, t))

    # ------------------------------------------------------------------ script

    def _run_script(self, entry: dict[str, Any], now: float) -> None:
        sd = self.devices[entry["device"]]
        action = entry["action"]
        self._trace_row(now, sd.label, "script", {k: v for k, v in entry.items() if k not in ("at_ms", "device")})
        try:
            if action == "set_profile":
                sd.engine.set_profile(entry["name"], entry.get("interests", ""), now)
            elif action == "start_discovery":
                sd.engine.start_discovery(now)
                if sd.pinned_channel is not None:
                    sd.engine.discovery.listen_channel = sd.pinned_channel
                sd.started_at = now
            elif action == "invite":
                target = self.devices[entry["to"]]
                _, actions = sd.engine.invite(target.engine.device_id, now)
                self._dispatch(sd, actions, now)
            elif action == "respond":
                inviter = self.devices[entry["from"]]
                inv = next(
                    (
                        i
                        for i in sd.engine.invitations.pending()
                        if i.from_device == inviter.engine.device_id and i.to_device == sd.engine.device_id
                    ),
                    None,
                )
                if inv is None:
                    raise GroupingError("no pending invitation from that device")
                self._dispatch(sd, sd.engine.respond(inv.id, bool(entry.get("accept", True)), now), now)
            elif action == "send_chat":
                n = len(sd.engine.group.members) - 1 if sd.engine.group else 0
                _, actions = sd.engine.send_chat(entry["text"])
                self.metrics.messages["sent"] += n
                self._dispatch(sd, actions, now)
            elif action == "send_ink":
                strokes = entry.get("strokes", [[[0.0, 0.0], [1.0, 1.0]]])
                note = InkNote(strokes=tuple(tuple((p[0], p[1]) for p in s) for s in strokes))
                n = len(sd.engine.group.members) - 1 if sd.engine.group else 0
                _, actions = sd.engine.send_ink(note)
                self.metrics.messages["sent"] += n
                self._dispatch(sd, actions, now)
            elif action == "disconnect":
                self._dispatch(sd, sd.engine.disconnect(now), now)
        except (GroupingError, MessagingError, ProfileError) as e:
            self._trace_row(now, sd.label, "action_error", {"action": action, "code": type(e).__name__, "detail": str(e)})
        self._drain_journal(sd)

    # ------------------------------------------------------------------ run

    def run(self) -> SimResult:
        while self._heap and not self._stopped:
            t, _, fn = heapq.heappop(self._heap)
            if t > self.duration_ms:
                break
            fn(t)
        for sd in self.devices.values():
            self._drain_journal(sd)
            c = sd.engine.counters
            self.metrics.messages["dropped"] += (
                c["duplicate_drops"] + c["auth_failures"] + c["unknown_sender_drops"]
            )
        return SimResult(metrics=self.metrics, trace=self.trace)


def run_scenario(scenario: dict[str, Any], seed: int, trace: bool = True) -> SimResult:
    """Execute one seeded run; identical inputs give identical traces."""
    return Simulation(scenario, seed, trace=trace).run()


def measure_discovery_latency(scenario: dict[str, Any], n_runs: int, base_seed: int = 0) -> dict[str, Any]:
    """Monte-Carlo sweep of mutual-discovery latency over independent seeds.

    Each run stops as soon as every pair has discovered each other, so
    large sweeps stay fast.  Returns per-pair stats plus the count of
    runs in which every pair succeeded within the scenario duration.
    """
    validate_scenario(scenario)
    labels = [d["id"] for d in scenario["devices"]]
    pairs = ["|".join(sorted((a, b))) for i, a in enumerate(labels) for b in labels[i + 1 :]]
    latencies: dict[str, list[float]] = {p: [] for p in pairs}
    full_runs = 0
    for i in range(n_runs):
        sim = Simulation(scenario, seed=base_seed + i, trace=False, stop_on_full_discovery=True)
        result = sim.run()
        got = result.metrics.discovery_latency_ms
        if len(got) == len(pairs) and pairs:
            full_runs += 1
        for pair, latency in got.items():
            latencies[pair].append(latency)

    def stats_for(vals: list[float]) -> dict[str, Any]:
        if not vals:
            return {"discovered": 0, "min_ms": None, "median_ms": None, "p99_ms": None}
        ordered = sorted(vals)
        p99 = ordered[min(len(ordered) - 1, math.ceil(0.99 * len(ordered)) - 1)]
        return {
            "discovered": len(vals),
            "min_ms": ordered[0],
            "median_ms": statistics.median(ordered),
            "p99_ms": p99,
        }

    return {
        "runs": n_runs,
        "all_pairs_discovered_runs": full_runs,
        "pairs": {p: stats_for(v) for p, v in latencies.items()},
    }
