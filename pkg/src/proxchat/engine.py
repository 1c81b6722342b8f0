"""Transport-neutral protocol engine: one device's complete stack.

The engine owns every piece of per-device protocol state (discovery
machine, peer table, invitations, group, sequencing, sealing) and is
driven by exactly three kinds of input: clock ticks, received frames,
and local commands.  Each input returns a list of transmit actions for
the host to carry out; the host is either the discrete-event simulator
or the LAN daemon, so the protocol logic is byte-for-byte the same in
both.  All calls must come from one logical event loop.

Devices are addressed by an opaque 16-byte id everywhere; mapping ids to
sockets or positions is the host's concern.

Control events (the UI journal) are appended to `journal`; hosts keep
their own read cursors.
"""

from __future__ import annotations

import base64
import json
import random
from dataclasses import dataclass, field
from typing import Any

from . import grouping, messaging, security, wire
from .discovery import DiscoveryStateMachine, PeerStatus, PeerTable
from .grouping import (
    DuplicatePending,
    Group,
    GroupingError,
    Invitation,
    InvitationState,
    InvitationStore,
    NotAvailable,
    NotInGroup,
    PeerBusy,
    PeerUnknown,
    Role,
)
from .messaging import (
    KIND_CHAT,
    KIND_FILE,
    KIND_GROUP_DISSOLVED,
    KIND_INK,
    KIND_MEMBER_JOINED,
    KIND_MEMBER_LEFT,
    KIND_ROSTER,
    Disposition,
    FileChunk,
    InkNote,
    NotConnected,
    ReplayGuard,
    SequenceState,
    UnknownSender,
)
from .profile import Malformed, Profile, decode_ssid, encode_ssid, keyword_similarity, normalize_interests
from .security import AuthenticationFailure, GroupKey, NonceState


@dataclass(frozen=True)
class SendProbe:
    """Broadcast a discovery probe on its logical channel."""

    frame: wire.Probe


@dataclass(frozen=True)
class SendBeacon:
    """Answer a prober with a unicast datagram."""

    to: bytes
    frame: wire.Beacon


@dataclass(frozen=True)
class SendStream:
    """Reliable unicast frame (invitations and sealed group traffic)."""

    to: bytes
    frame: wire.Invite | wire.InviteResponse | wire.GroupSealed


Action = SendProbe | SendBeacon | SendStream


@dataclass(frozen=True)
class ControlEvent:
    seq: int
    t_ms: float
    kind: str
    data: dict[str, Any]

    def to_json(self) -> dict[str, Any]:
        return {"seq": self.seq, "t_ms": self.t_ms, "event": self.kind, **self.data}


def _hex(device_id: bytes) -> str:
    return device_id.hex()


class Engine:
    def __init__(
        self,
        device_id: bytes,
        rng: random.Random,
        name: str,
        interests: list[str] | str = (),
        go_intent: int = 7,
        dwell_min_ms: float = 100.0,
        dwell_max_ms: float = 300.0,
        stale_after_ms: float = 10_000.0,
        invitation_ttl_ms: float = 30_000.0,
    ):
        if len(device_id) != wire.DEVICE_ID_BYTES:
            raise ValueError("device id must be 16 bytes")
        self.device_id = device_id
        self.rng = rng
        self.go_intent = grouping.check_go_intent(go_intent)
        kws = normalize_interests(interests) if isinstance(interests, str) else list(interests)
        self.profile = Profile(name=name, interests=tuple(kws))
        self.ssid = encode_ssid(self.profile)
        self.discovery = DiscoveryStateMachine(
            device_id=device_id, ssid=self.ssid, dwell_min_ms=dwell_min_ms, dwell_max_ms=dwell_max_ms
        )
        self.peers = PeerTable(stale_after_ms=stale_after_ms)
        self.invitations = InvitationStore(ttl_ms=invitation_ttl_ms)
        self.group: Group | None = None
        self.member_names: dict[bytes, str | None] = {}
        self.journal: list[ControlEvent] = []
        self._event_seq = 0
        self._seq_state = SequenceState()
        self._guard = ReplayGuard()
        self._nonce_state = NonceState.for_sender(device_id)
        self._outbound_profiles: dict[bytes, Profile | None] = {}  # invitation id -> target profile
        self._awaiting_key: dict[bytes, float] = {}  # invitation id -> accept time
        self.counters = {
            "auth_failures": 0,
            "unsealed_drops": 0,
            "unknown_sender_drops": 0,
            "duplicate_drops": 0,
        }

    # ------------------------------------------------------------------ events

    def _emit(self, now: float, kind: str, data: dict[str, Any]) -> None:
        self._event_seq += 1
        self.journal.append(ControlEvent(seq=self._event_seq, t_ms=now, kind=kind, data=data))

    def _peer_row(self, device_id: bytes) -> dict[str, Any]:
        rec = self.peers.peers[device_id]
        return {
            "device_id": _hex(device_id),
            "name": rec.profile.name if rec.profile else None,
            "interests": list(rec.profile.interests) if rec.profile else [],
            "similarity": rec.similarity,
            "status": rec.status.value,
            "last_seen_ms": rec.last_seen_ms,
        }

    # ------------------------------------------------------------------ status

    @property
    def role(self) -> Role | None:
        if self.group is None:
            return None
        return Role.OWNER if self.group.owner == self.device_id else Role.MEMBER

    def _status_of(self, device_id: bytes) -> PeerStatus:
        if self.group is not None and device_id in self.group.members:
            return PeerStatus.CONNECTED
        return PeerStatus.AVAILABLE

    # ------------------------------------------------------------------ profile

    def set_profile(self, name: str, interests: list[str] | str, now: float) -> Profile:
        """Replace the advertised identity; raises Oversize/IllegalCharacter."""
        kws = normalize_interests(interests) if isinstance(interests, str) else list(interests)
        profile = Profile(name=name, interests=tuple(kws))
        ssid = encode_ssid(profile)  # validates
        self.profile, self.ssid = profile, ssid
        self.discovery.ssid = ssid
        before = {pid: rec.similarity for pid, rec in self.peers.peers.items()}
        self.peers.recompute_similarity(profile)
        for pid, rec in self.peers.peers.items():
            if rec.similarity != before[pid]:
                self._emit(now, "peer_updated", self._peer_row(pid))
        return profile

    # ------------------------------------------------------------------ discovery

    def start_discovery(self, now: float) -> None:
        self.discovery.start(self.rng, now)

    def restart_discovery(self, now: float) -> None:
        """Manual restart: re-randomizes the listen channel."""
        self.discovery.stop()
        self.discovery.start(self.rng, now)

    def _upsert_peer(self, ssid: str, device_id: bytes, now: float) -> None:
        prev = self.peers.peers.get(device_id)
        rec = self.peers.upsert(ssid, device_id, self._status_of(device_id), now, self.profile)
        if prev is None:
            self._emit(now, "peer_found", self._peer_row(device_id))
        elif (prev.ssid, prev.similarity, prev.status) != (rec.ssid, rec.similarity, rec.status):
            self._emit(now, "peer_updated", self._peer_row(device_id))

    # ------------------------------------------------------------------ tick

    def handle_tick(self, now: float) -> list[Action]:
        actions: list[Action] = [SendProbe(frame=p) for p in self.discovery.advance(now, self.rng)]
        for inv in self.invitations.expire_due(now):
            peer = inv.to_device if inv.from_device == self.device_id else inv.from_device
            self._emit(
                now,
                "invitation_resolved",
                {"id": _hex(inv.id), "outcome": "expired", "peer": _hex(peer)},
            )
        for inv_id, accepted_at in list(self._awaiting_key.items()):
            # accepted but the owner's key never arrived; give up quietly
            if now - accepted_at > self.invitations.ttl_ms:
                del self._awaiting_key[inv_id]
        for pid in self.peers.evict_stale(now):
            self._emit(now, "peer_lost", {"device_id": _hex(pid)})
        return actions

    # ------------------------------------------------------------------ frames

    def handle_frame(self, frame: wire.Frame, now: float) -> list[Action]:
        if isinstance(frame, wire.Probe):
            return self._on_probe(frame, now)
        if isinstance(frame, wire.Beacon):
            return self._on_beacon(frame, now)
        if isinstance(frame, wire.Invite):
            return self._on_invite(frame, now)
        if isinstance(frame, wire.InviteResponse):
            return self._on_invite_response(frame, now)
        if isinstance(frame, wire.GroupSealed):
            return self._on_sealed(frame, now)
        return []

    def _on_probe(self, probe: wire.Probe, now: float) -> list[Action]:
        if probe.device_id == self.device_id:
            return []
        beacon = self.discovery.on_probe_received(probe)
        if beacon is None:
            return []
        self._upsert_peer(probe.ssid, probe.device_id, now)
        return [SendBeacon(to=probe.device_id, frame=beacon)]

    def _on_beacon(self, beacon: wire.Beacon, now: float) -> list[Action]:
        if beacon.device_id == self.device_id:
            return []
        self._upsert_peer(beacon.ssid, beacon.device_id, now)
        return []

    # ------------------------------------------------------------------ invitations

    def invite(self, peer_id: bytes, now: float) -> tuple[Invitation, list[Action]]:
        """Send a connection request to an available neighbor."""
        rec = self.peers.peers.get(peer_id)
        if rec is None:
            raise PeerUnknown(f"no such peer {_hex(peer_id)}")
        if rec.status is PeerStatus.CONNECTED:
            raise PeerBusy("peer is connected")
        if self.group is not None:
            raise NotAvailable("already connected; group growth happens by inviting the owner")
        if self.invitations.has_pending_to(self.device_id, peer_id):
            raise DuplicatePending("an invitation to this peer is already pending")
        inv = Invitation(
            id=self.rng.randbytes(16),
            from_device=self.device_id,
            to_device=peer_id,
            from_profile=self.profile,
            created_at=now,
            ttl_ms=self.invitations.ttl_ms,
            from_go_intent=self.go_intent,
        )
        self.invitations.add(inv)
        self._outbound_profiles[inv.id] = rec.profile
        self._emit(
            now,
            "invitation_sent",
            {
                "id": _hex(inv.id),
                "peer": _hex(peer_id),
                "name": rec.profile.name if rec.profile else None,
                "remaining_ms": inv.ttl_ms,
            },
        )
        frame = wire.Invite(
            invitation_id=inv.id, from_device=self.device_id, go_intent=self.go_intent, ssid=self.ssid
        )
        return inv, [SendStream(to=peer_id, frame=frame)]

    def _on_invite(self, frame: wire.Invite, now: float) -> list[Action]:
        if self.invitations.get(frame.invitation_id) is not None:
            return []  # duplicate delivery
        try:
            from_profile: Profile | None = decode_ssid(frame.ssid)
        except Malformed:
            from_profile = None
        self._upsert_peer(frame.ssid, frame.from_device, now)
        inv = Invitation(
            id=frame.invitation_id,
            from_device=frame.from_device,
            to_device=self.device_id,
            from_profile=from_profile,
            created_at=now,
            ttl_ms=self.invitations.ttl_ms,
            from_go_intent=frame.go_intent,
        )
        if self.group is not None and self.role is Role.MEMBER:
            # a plain member can neither host nor move; decline immediately
            return [
                SendStream(
                    to=frame.from_device,
                    frame=wire.InviteResponse(
                        invitation_id=frame.invitation_id, accept=False, go_intent=self.go_intent
                    ),
                )
            ]
        self.invitations.add(inv)
        similarity = (
            keyword_similarity(self.profile.interests, from_profile.interests) if from_profile else None
        )
        self._emit(
            now,
            "invitation_received",
            {
                "id": _hex(inv.id),
                "peer": _hex(frame.from_device),
                "name": from_profile.name if from_profile else None,
                "interests": list(from_profile.interests) if from_profile else [],
                "similarity": similarity,
                "remaining_ms": inv.ttl_ms,
            },
        )
        return []

    def respond(self, invitation_id: bytes, accept: bool, now: float) -> list[Action]:
        """Resolve an inbound invitation; on accept, form or grow a group."""
        inv = self.invitations.get(invitation_id)
        if inv is None or inv.to_device != self.device_id:
            raise PeerUnknown("no such inbound invitation")
        if not accept:
            self.invitations.resolve(inv, InvitationState.DECLINED, now)
            self._emit(
                now,
                "invitation_resolved",
                {"id": _hex(inv.id), "outcome": "declined", "peer": _hex(inv.from_device)},
            )
            return [
                SendStream(
                    to=inv.from_device,
                    frame=wire.InviteResponse(invitation_id=inv.id, accept=False, go_intent=self.go_intent),
                )
            ]
        if self.group is not None and self.role is Role.MEMBER:
            self.invitations.resolve(inv, InvitationState.DECLINED, now)
            raise NotAvailable("connected members cannot accept invitations")
        self.invitations.resolve(inv, InvitationState.ACCEPTED, now)  # raises when expired
        self._emit(
            now,
            "invitation_resolved",
            {"id": _hex(inv.id), "outcome": "accepted", "peer": _hex(inv.from_device)},
        )
        if self.group is not None and self.role is Role.OWNER:
            return self._admit_into_group(inv, now)
        assert inv.from_go_intent is not None
        owner = grouping.negotiate_role(
            (self.go_intent, self.device_id), (inv.from_go_intent, inv.from_device)
        )
        if owner == self.device_id:
            group = grouping.form_group(self.device_id, inv.from_device, self.rng)
            self._enter_group(group, {inv.from_device: inv.from_profile.name if inv.from_profile else None}, now)
            actions = [
                SendStream(
                    to=inv.from_device,
                    frame=wire.InviteResponse(
                        invitation_id=inv.id,
                        accept=True,
                        go_intent=self.go_intent,
                        psk=group.psk.key,
                        group_address=group.members[inv.from_device],
                    ),
                )
            ]
            actions += self._broadcast_roster()
            return actions
        # the inviter wins ownership: accept now, the key arrives from them
        self._awaiting_key[inv.id] = now
        return [
            SendStream(
                to=inv.from_device,
                frame=wire.InviteResponse(invitation_id=inv.id, accept=True, go_intent=self.go_intent),
            )
        ]

    def _admit_into_group(self, inv: Invitation, now: float) -> list[Action]:
        assert self.group is not None
        try:
            addr = grouping.admit_member(self.group, inv.from_device, self.device_id)
        except GroupingError:
            # no room: tell the inviter no
            return [
                SendStream(
                    to=inv.from_device,
                    frame=wire.InviteResponse(invitation_id=inv.id, accept=False, go_intent=self.go_intent),
                )
            ]
        name = inv.from_profile.name if inv.from_profile else None
        self.member_names[inv.from_device] = name
        self._guard.register(inv.from_device)
        self._set_peer_status(inv.from_device, now)
        self._emit(
            now, "member_joined", {"device_id": _hex(inv.from_device), "address": addr, "name": name}
        )
        actions = [
            SendStream(
                to=inv.from_device,
                frame=wire.InviteResponse(
                    invitation_id=inv.id,
                    accept=True,
                    go_intent=self.go_intent,
                    psk=self.group.psk.key,
                    group_address=addr,
                ),
            )
        ]
        # one roster broadcast (a single sequence number for everyone)
        # tells the newcomer who is here and the others who arrived
        actions += self._broadcast_roster()
        return actions

    def _on_invite_response(self, frame: wire.InviteResponse, now: float) -> list[Action]:
        inv = self.invitations.get(frame.invitation_id)
        if inv is None:
            return []
        if inv.to_device == self.device_id:
            # follow-up from an inviter that won ownership: carries the key
            if frame.accept and frame.psk is not None and frame.invitation_id in self._awaiting_key:
                del self._awaiting_key[frame.invitation_id]
                self._join_group(inv.from_device, frame.psk, frame.group_address, now)
            return []
        if inv.from_device != self.device_id or inv.state is not InvitationState.PENDING:
            return []
        if inv.is_expired(now):
            return []  # local clock already treats this as auto-declined
        if not frame.accept:
            self.invitations.resolve(inv, InvitationState.DECLINED, now)
            self._emit(
                now,
                "invitation_resolved",
                {"id": _hex(inv.id), "outcome": "declined", "peer": _hex(inv.to_device)},
            )
            return []
        self.invitations.resolve(inv, InvitationState.ACCEPTED, now)
        self._emit(
            now,
            "invitation_resolved",
            {"id": _hex(inv.id), "outcome": "accepted", "peer": _hex(inv.to_device)},
        )
        if frame.psk is not None:
            # the responder owns (or already owned) the group; join at the given address
            self._join_group(inv.to_device, frame.psk, frame.group_address, now)
            return []
        # both sides were free: the winner of negotiation forms and keys the group
        owner = grouping.negotiate_role(
            (self.go_intent, self.device_id), (frame.go_intent, inv.to_device)
        )
        if owner != self.device_id:
            return []  # inconsistent peer; drop
        group = grouping.form_group(self.device_id, inv.to_device, self.rng)
        target_profile = self._outbound_profiles.get(inv.id)
        self._enter_group(group, {inv.to_device: target_profile.name if target_profile else None}, now)
        actions = [
            SendStream(
                to=inv.to_device,
                frame=wire.InviteResponse(
                    invitation_id=inv.id,
                    accept=True,
                    go_intent=self.go_intent,
                    psk=group.psk.key,
                    group_address=group.members[inv.to_device],
                ),
            )
        ]
        actions += self._broadcast_roster()
        return actions

    # ------------------------------------------------------------------ group state

    def _reset_session(self) -> None:
        self._seq_state = SequenceState()
        self._guard = ReplayGuard()
        self._nonce_state = NonceState.for_sender(self.device_id)

    def _enter_group(self, group: Group, names: dict[bytes, str | None], now: float) -> None:
        self._reset_session()
        self.group = group
        self.member_names = dict(names)
        self.member_names[self.device_id] = self.profile.name
        for member in group.members:
            if member != self.device_id:
                self._guard.register(member)
                self._set_peer_status(member, now)
        self._emit(now, "group_formed", self._group_row())

    def _join_group(self, owner_id: bytes, psk: bytes, my_address: int | None, now: float) -> None:
        group = Group(owner=owner_id, psk=GroupKey(psk))
        group.members[owner_id] = grouping.OWNER_ADDRESS
        group.members[self.device_id] = my_address if my_address is not None else grouping.MIN_CLIENT_ADDRESS
        owner_rec = self.peers.peers.get(owner_id)
        names = {owner_id: owner_rec.profile.name if owner_rec and owner_rec.profile else None}
        self._enter_group(group, names, now)

    def _group_row(self) -> dict[str, Any]:
        assert self.group is not None
        role = "owner" if self.group.owner == self.device_id else "member"
        members = [
            {
                "device_id": _hex(m),
                "address": addr,
                "name": self.profile.name if m == self.device_id else self.member_names.get(m),
            }
            for m, addr in sorted(self.group.members.items(), key=lambda kv: kv[1])
        ]
        return {"role": role, "owner": _hex(self.group.owner), "members": members}

    def _set_peer_status(self, device_id: bytes, now: float) -> None:
        rec = self.peers.peers.get(device_id)
        if rec is None:
            return
        status = self._status_of(device_id)
        if rec.status is not status:
            rec.status = status
            self._emit(now, "peer_updated", self._peer_row(device_id))

    def _broadcast_roster(self) -> list[Action]:
        assert self.group is not None
        roster = {
            "owner": _hex(self.group.owner),
            "members": [
                {"device_id": _hex(m), "address": addr, "name": self.member_names.get(m)}
                for m, addr in sorted(self.group.members.items(), key=lambda kv: kv[1])
            ],
        }
        return self._send_control(KIND_ROSTER, json.dumps(roster).encode(), self.group.client_ids())

    # ------------------------------------------------------------------ sealed traffic

    def _send_control(self, kind: int, payload: bytes, targets: list[bytes]) -> list[Action]:
        if not targets or self.group is None:
            return []
        msg = messaging.compose(kind, payload, self._seq_state, self.device_id)
        sealed = security.seal(
            self.group.psk,
            security.FrameHeader(sender=self.device_id, seq=msg.seq, kind=msg.kind),
            msg.payload,
            self._nonce_state,
        )
        frame = wire.GroupSealed(sealed=sealed)
        return [SendStream(to=t, frame=frame) for t in targets]

    def _send_user_message(self, kind: int, body) -> tuple[int, list[Action]]:
        if self.group is None:
            raise NotConnected("not in a group")
        msg = messaging.compose(kind, body, self._seq_state, self.device_id)
        sealed = security.seal(
            self.group.psk,
            security.FrameHeader(sender=self.device_id, seq=msg.seq, kind=msg.kind),
            msg.payload,
            self._nonce_state,
        )
        frame = wire.GroupSealed(sealed=sealed)
        if self.role is Role.OWNER:
            targets = self.group.client_ids()
        else:
            targets = [self.group.owner]
        return msg.seq, [SendStream(to=t, frame=frame) for t in targets]

    def send_chat(self, text: str) -> tuple[int, list[Action]]:
        return self._send_user_message(KIND_CHAT, text)

    def send_ink(self, note: InkNote) -> tuple[int, list[Action]]:
        return self._send_user_message(KIND_INK, note)

    def send_file(self, name: str, data: bytes) -> tuple[list[int], list[Action]]:
        """Ship a file as 64 KiB chunks, one sealed message per chunk."""
        if self.group is None:
            raise NotConnected("not in a group")
        chunks = [data[i : i + messaging.MAX_FILE_CHUNK] for i in range(0, len(data), messaging.MAX_FILE_CHUNK)] or [b""]
        seqs, actions = [], []
        for idx, chunk in enumerate(chunks):
            seq, acts = self._send_user_message(
                KIND_FILE, FileChunk(name=name, index=idx, total=len(chunks), data=chunk)
            )
            seqs.append(seq)
            actions += acts
        return seqs, actions

    def _on_sealed(self, frame: wire.GroupSealed, now: float) -> list[Action]:
        if self.group is None:
            self.counters["unsealed_drops"] += 1
            return []
        try:
            header, payload = security.open_frame(self.group.psk, frame.sealed)
        except AuthenticationFailure:
            self.counters["auth_failures"] += 1
            return []
        try:
            disposition, gap = self._guard.accept_inbound(header.sender, header.seq)
        except UnknownSender:
            self.counters["unknown_sender_drops"] += 1
            return []
        if disposition is Disposition.DUPLICATE:
            self.counters["duplicate_drops"] += 1
            return []
        if gap is not None:
            self._emit(now, "gap_detected", {"peer": _hex(header.sender), "missing": [gap[0], gap[1]]})
        actions: list[Action] = []
        if self.role is Role.OWNER and header.kind in (KIND_CHAT, KIND_INK, KIND_FILE):
            targets = messaging.route(self.group.members, self.group.owner, header.sender, self.device_id)
            actions += [SendStream(to=t, frame=frame) for t in targets]
        actions += self._deliver(header.sender, header.seq, header.kind, payload, now)
        return actions

    def _deliver(self, sender: bytes, seq: int, kind: int, payload: bytes, now: float) -> list[Action]:
        base = {"peer": _hex(sender), "seq": seq, "name": self.member_names.get(sender)}
        if kind == KIND_CHAT:
            self._emit(now, "message", {**base, "kind": "chat", "text": payload.decode("utf-8", "replace")})
        elif kind == KIND_INK:
            note = messaging.decode_ink(payload)
            self._emit(now, "message", {**base, "kind": "ink", "strokes": [[list(p) for p in s] for s in note.strokes]})
        elif kind == KIND_FILE:
            chunk = messaging.decode_file_chunk(payload)
            self._emit(
                now,
                "message",
                {
                    **base,
                    "kind": "file",
                    "file_name": chunk.name,
                    "index": chunk.index,
                    "total": chunk.total,
                    "data_b64": base64.b64encode(chunk.data).decode(),
                },
            )
        elif kind == KIND_MEMBER_JOINED:
            info = json.loads(payload)
            member = bytes.fromhex(info["device_id"])
            if self.group is not None and member not in self.group.members:
                self.group.members[member] = info["address"]
                self.member_names[member] = info.get("name")
                self._guard.register(member)
                self._set_peer_status(member, now)
                self._emit(now, "member_joined", info)
        elif kind == KIND_MEMBER_LEFT:
            info = json.loads(payload)
            member = bytes.fromhex(info["device_id"])
            return self._handle_member_left(member, now)
        elif kind == KIND_GROUP_DISSOLVED:
            self._leave_group(now)
        elif kind == KIND_ROSTER:
            self._apply_roster(json.loads(payload), now)
        return []

    def _apply_roster(self, roster: dict[str, Any], now: float) -> None:
        if self.group is None:
            return
        for row in roster["members"]:
            member = bytes.fromhex(row["device_id"])
            if member not in self.group.members:
                self.group.members[member] = row["address"]
                self._guard.register(member)
                self._set_peer_status(member, now)
                self._emit(now, "member_joined", row)
            if member != self.device_id:
                self.member_names.setdefault(member, row.get("name"))

    def _handle_member_left(self, member: bytes, now: float) -> list[Action]:
        if self.group is None or member not in self.group.members:
            return []
        if member == self.group.owner:
            self._leave_group(now)
            return []
        grouping.remove_member(self.group, member)
        self._guard.forget(member)
        self.member_names.pop(member, None)
        self._set_peer_status(member, now)
        self._emit(now, "member_left", {"device_id": _hex(member)})
        if self.role is Role.OWNER:
            if not self.group.client_ids():
                # nobody left to own; return to Available for fresh negotiation
                self._leave_group(now)
                return []
            payload = json.dumps({"device_id": _hex(member)}).encode()
            return self._send_control(KIND_MEMBER_LEFT, payload, self.group.client_ids())
        return []

    def _leave_group(self, now: float) -> None:
        if self.group is None:
            return
        members = [m for m in self.group.members if m != self.device_id]
        self.group = None
        self.member_names = {}
        self._reset_session()
        for m in members:
            self._set_peer_status(m, now)
        self._emit(now, "group_dissolved", {})

    def disconnect(self, now: float) -> list[Action]:
        """Leave the group: owners dissolve it, members bow out."""
        if self.group is None:
            raise NotInGroup("not in a group")
        if self.role is Role.OWNER:
            actions = self._send_control(KIND_GROUP_DISSOLVED, b"{}", self.group.client_ids())
        else:
            payload = json.dumps({"device_id": _hex(self.device_id)}).encode()
            actions = self._send_control(KIND_MEMBER_LEFT, payload, [self.group.owner])
        self._leave_group(now)
        return actions

    # ------------------------------------------------------------------ views

    def peers_view(self) -> list[dict[str, Any]]:
        return [self._peer_row(rec.device_id) for rec in self.peers.snapshot()]

    def invitations_view(self, now: float) -> list[dict[str, Any]]:
        rows = []
        for inv in self.invitations.pending():
            outbound = inv.from_device == self.device_id
            peer = inv.to_device if outbound else inv.from_device
            rows.append(
                {
                    "id": _hex(inv.id),
                    "direction": "outbound" if outbound else "inbound",
                    "peer": _hex(peer),
                    "name": None if inv.from_profile is None else (
                        self._outbound_name(inv) if outbound else inv.from_profile.name
                    ),
                    "remaining_ms": inv.remaining_ms(now),
                }
            )
        return rows

    def _outbound_name(self, inv: Invitation) -> str | None:
        prof = self._outbound_profiles.get(inv.id)
        return prof.name if prof else None

    def group_view(self) -> dict[str, Any] | None:
        return self._group_row() if self.group is not None else None

    def profile_view(self) -> dict[str, Any]:
        return {
            "device_id": _hex(self.device_id),
            "name": self.profile.name,
            "interests": list(self.profile.interests),
            "ssid": self.ssid,
            "status": "available" if self.group is None else f"connected_{self.role.value}",
        }
