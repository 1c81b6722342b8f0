"""Find-phase state machine and the similarity-annotated peer table.

A device picks one listen channel out of the social set {1, 6, 11} and
then alternates LISTEN and SEARCH, each phase lasting a random dwell
(default 100-300 ms).  While searching it probes the social channels
round-robin, one per advance() call; while listening it answers probes
that land on its own channel with a beacon.  One landed probe makes
discovery mutual: the listener learns the prober from the probe's SSID
and the prober learns the listener from the beacon.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum

from .profile import Malformed, Profile, decode_ssid, keyword_similarity
from .wire import Beacon, Probe

SOCIAL_CHANNELS = (1, 6, 11)
DEFAULT_DWELL_MIN_MS = 100.0
DEFAULT_DWELL_MAX_MS = 300.0
DEFAULT_STALE_AFTER_MS = 10_000.0


class DiscoveryError(Exception):
    pass


class AlreadyRunning(DiscoveryError):
    pass


class Phase(Enum):
    OFF = "off"
    SEARCH = "search"
    LISTEN = "listen"


class PeerStatus(Enum):
    AVAILABLE = "available"
    CONNECTED = "connected"


@dataclass
class PeerRecord:
    device_id: bytes
    ssid: str
    profile: Profile | None  # None = opaque (undecodable device ID)
    similarity: int | None  # present iff profile decoded
    status: PeerStatus
    last_seen_ms: float


@dataclass
class PeerTable:
    """Known neighbors keyed by device id, with staleness eviction."""

    stale_after_ms: float = DEFAULT_STALE_AFTER_MS
    peers: dict[bytes, PeerRecord] = field(default_factory=dict)

    def upsert(
        self,
        ssid: str,
        device_id: bytes,
        status: PeerStatus,
        now: float,
        local: Profile,
    ) -> PeerRecord:
        """Store or refresh a peer from its advertised SSID.

        A malformed SSID degrades to an opaque record (legacy MAC-style
        device ID) instead of failing; similarity is computed against the
        local profile only when the SSID decodes.
        """
        try:
            prof: Profile | None = decode_ssid(ssid)
        except Malformed:
            prof = None
        similarity = keyword_similarity(local.interests, prof.interests) if prof is not None else None
        prev = self.peers.get(device_id)
        last_seen = now if prev is None else max(prev.last_seen_ms, now)
        rec = PeerRecord(
            device_id=device_id,
            ssid=ssid,
            profile=prof,
            similarity=similarity,
            status=status,
            last_seen_ms=last_seen,
        )
        self.peers[device_id] = rec
        return rec

    def evict_stale(self, now: float) -> list[bytes]:
        """Drop peers unseen for longer than stale_after_ms; returns their ids."""
        dead = [pid for pid, rec in self.peers.items() if now - rec.last_seen_ms > self.stale_after_ms]
        for pid in dead:
            del self.peers[pid]
        return dead

    def recompute_similarity(self, local: Profile) -> None:
        for rec in self.peers.values():
            if rec.profile is not None:
                rec.similarity = keyword_similarity(local.interests, rec.profile.interests)

    def snapshot(self) -> list[PeerRecord]:
        """Peers ordered by similarity descending, opaque peers last,
        ties broken by device id."""
        return sorted(
            self.peers.values(),
            key=lambda r: (-(r.similarity if r.similarity is not None else -1), r.device_id),
        )


@dataclass
class DiscoveryStateMachine:
    """Per-device LISTEN/SEARCH alternation on the social channels."""

    device_id: bytes
    ssid: str = ""
    dwell_min_ms: float = DEFAULT_DWELL_MIN_MS
    dwell_max_ms: float = DEFAULT_DWELL_MAX_MS
    phase: Phase = Phase.OFF
    listen_channel: int = 0
    phase_deadline: float = 0.0
    _probe_idx: int = 0

    def start(self, rng: random.Random, now: float) -> None:
        """Begin discovery: pick a listen channel and enter LISTEN."""
        if self.phase is not Phase.OFF:
            raise AlreadyRunning("discovery already started")
        self.listen_channel = rng.choice(SOCIAL_CHANNELS)
        self.phase = Phase.LISTEN
        self.phase_deadline = now + rng.uniform(self.dwell_min_ms, self.dwell_max_ms)

    def stop(self) -> None:
        self.phase = Phase.OFF

    def advance(self, now: float, rng: random.Random) -> list[Probe]:
        """Drive the alternation; returns probe transmissions to make.

        Flips SEARCH/LISTEN once the dwell deadline passes and draws the
        next dwell.  Each call in SEARCH probes exactly one social
        channel, round-robin.
        """
        if self.phase is Phase.OFF:
            return []
        if now >= self.phase_deadline:
            self.phase = Phase.SEARCH if self.phase is Phase.LISTEN else Phase.LISTEN
            self.phase_deadline = now + rng.uniform(self.dwell_min_ms, self.dwell_max_ms)
        if self.phase is not Phase.SEARCH:
            return []
        channel = SOCIAL_CHANNELS[self._probe_idx % len(SOCIAL_CHANNELS)]
        self._probe_idx += 1
        return [Probe(device_id=self.device_id, channel=channel, ssid=self.ssid)]

    def on_probe_received(self, probe: Probe) -> Beacon | None:
        """Answer a probe that lands on our listen channel while listening.

        Off-channel or off-phase probes are silently ignored, modeling a
        radio that simply is not tuned there.
        """
        if self.phase is not Phase.LISTEN or probe.channel != self.listen_channel:
            return None
        return Beacon(device_id=self.device_id, ssid=self.ssid, listen_channel=self.listen_channel)
