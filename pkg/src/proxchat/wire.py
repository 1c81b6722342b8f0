"""Binary frame layout shared by the LAN transport and the simulator.

All frames open with magic ``OFAT``, a version byte, and a type byte;
everything multi-byte is big-endian.  Discovery frames (PROBE, BEACON)
travel as datagrams; INVITE, INVITE_RESPONSE, and GROUP_SEALED travel
over reliable unicast streams, length-prefixed by the transport.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .security import FrameHeader, SealedFrame

MAGIC = b"OFAT"
VERSION = 1
MAX_DATAGRAM = 65507

TYPE_BEACON = 0
TYPE_PROBE = 1
TYPE_INVITE = 2
TYPE_INVITE_RESPONSE = 3
TYPE_GROUP_SEALED = 4

DEVICE_ID_BYTES = 16


class WireError(Exception):
    """Frame failed to decode: bad magic, version, field, or truncation."""


@dataclass(frozen=True)
class Beacon:
    device_id: bytes
    ssid: str
    listen_channel: int


@dataclass(frozen=True)
class Probe:
    device_id: bytes
    channel: int
    ssid: str


@dataclass(frozen=True)
class Invite:
    invitation_id: bytes
    from_device: bytes
    go_intent: int
    ssid: str


@dataclass(frozen=True)
class InviteResponse:
    invitation_id: bytes
    accept: bool
    go_intent: int
    psk: bytes | None = None  # present on accept from the eventual owner
    group_address: int | None = None


@dataclass(frozen=True)
class GroupSealed:
    sealed: SealedFrame


Frame = Beacon | Probe | Invite | InviteResponse | GroupSealed


def _ssid_bytes(ssid: str) -> bytes:
    raw = ssid.encode("utf-8")
    if len(raw) > 32:
        raise WireError(f"ssid is {len(raw)} bytes, limit 32")
    return bytes([len(raw)]) + raw


def encode_frame(frame: Frame) -> bytes:
    head = MAGIC + bytes([VERSION])
    if isinstance(frame, Beacon):
        return head + bytes([TYPE_BEACON]) + frame.device_id + _ssid_bytes(frame.ssid) + bytes([frame.listen_channel])
    if isinstance(frame, Probe):
        return head + bytes([TYPE_PROBE]) + frame.device_id + bytes([frame.channel]) + _ssid_bytes(frame.ssid)
    if isinstance(frame, Invite):
        return (
            head
            + bytes([TYPE_INVITE])
            + frame.invitation_id
            + frame.from_device
            + bytes([frame.go_intent])
            + _ssid_bytes(frame.ssid)
        )
    if isinstance(frame, InviteResponse):
        body = head + bytes([TYPE_INVITE_RESPONSE]) + frame.invitation_id + bytes([1 if frame.accept else 0, frame.go_intent])
        if frame.psk is not None:
            if frame.group_address is None:
                raise WireError("psk without group address")
            body += frame.psk + bytes([frame.group_address])
        return body
    if isinstance(frame, GroupSealed):
        s = frame.sealed
        return (
            head
            + bytes([TYPE_GROUP_SEALED])
            + s.header.sender
            + struct.pack(">QB", s.header.seq, s.header.kind)
            + s.nonce
            + struct.pack(">I", len(s.ciphertext))
            + s.ciphertext
        )
    raise WireError(f"unknown frame {frame!r}")


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise WireError("truncated frame")
        chunk = self.data[self.off : self.off + n]
        self.off += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def done(self) -> bool:
        return self.off == len(self.data)


def _take_ssid(cur: _Cursor) -> str:
    n = cur.u8()
    if n > 32:
        raise WireError(f"ssid length {n} over 32")
    try:
        return cur.take(n).decode("utf-8")
    except UnicodeDecodeError:
        raise WireError("ssid is not valid UTF-8") from None


def decode_frame(data: bytes) -> Frame:
    """Decode one frame; raises WireError rather than crashing on junk."""
    cur = _Cursor(data)
    if cur.take(4) != MAGIC:
        raise WireError("bad magic")
    if cur.u8() != VERSION:
        raise WireError("unsupported version")
    ftype = cur.u8()
    if ftype == TYPE_BEACON:
        device_id = cur.take(DEVICE_ID_BYTES)
        ssid = _take_ssid(cur)
        channel = cur.u8()
        frame: Frame = Beacon(device_id=device_id, ssid=ssid, listen_channel=channel)
    elif ftype == TYPE_PROBE:
        device_id = cur.take(DEVICE_ID_BYTES)
        channel = cur.u8()
        ssid = _take_ssid(cur)
        frame = Probe(device_id=device_id, channel=channel, ssid=ssid)
    elif ftype == TYPE_INVITE:
        invitation_id = cur.take(DEVICE_ID_BYTES)
        from_device = cur.take(DEVICE_ID_BYTES)
        go_intent = cur.u8()
        ssid = _take_ssid(cur)
        frame = Invite(invitation_id=invitation_id, from_device=from_device, go_intent=go_intent, ssid=ssid)
    elif ftype == TYPE_INVITE_RESPONSE:
        invitation_id = cur.take(DEVICE_ID_BYTES)
        accept = cur.u8() != 0
        go_intent = cur.u8()
        psk = None
        address = None
        if not cur.done():
            psk = cur.take(32)
            address = cur.u8()
        frame = InviteResponse(
            invitation_id=invitation_id, accept=accept, go_intent=go_intent, psk=psk, group_address=address
        )
    elif ftype == TYPE_GROUP_SEALED:
        sender = cur.take(DEVICE_ID_BYTES)
        seq, kind = struct.unpack(">QB", cur.take(9))
        nonce = cur.take(12)
        (ct_len,) = struct.unpack(">I", cur.take(4))
        ciphertext = cur.take(ct_len)
        frame = GroupSealed(
            sealed=SealedFrame(header=FrameHeader(sender=sender, seq=seq, kind=kind), nonce=nonce, ciphertext=ciphertext)
        )
    else:
        raise WireError(f"unknown frame type {ftype}")
    if not cur.done():
        raise WireError("trailing bytes after frame")
    return frame
