"""In-group payloads: chat text, handwritten ink, file chunks.

Every message carries a per-sender sequence number starting at 1.  The
receive side keeps a per-sender high-water mark: in-order messages are
delivered, replays are dropped, and skips are delivered with the missing
range reported (best-effort transport; nothing is retransmitted).
Client-to-client traffic is relayed by the group owner, so routing is a
pure function of who holds the frame.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum

MAX_CHAT_BYTES = 64 * 1024
MAX_FILE_CHUNK = 64 * 1024
INK_SCALE = 65535

# Payload kind bytes on the wire.  Values >= 16 are owner-originated
# membership control payloads, not user messages.
KIND_CHAT = 0
KIND_INK = 1
KIND_FILE = 2
KIND_MEMBER_JOINED = 16
KIND_MEMBER_LEFT = 17
KIND_GROUP_DISSOLVED = 18
KIND_ROSTER = 19


class MessagingError(Exception):
    pass


class NotConnected(MessagingError):
    pass


class OversizePayload(MessagingError):
    pass


class EmptyBody(MessagingError):
    pass


class MalformedInk(MessagingError):
    pass


class UnknownSender(MessagingError):
    pass


class NotMember(MessagingError):
    pass


@dataclass(frozen=True)
class InkNote:
    """Handwritten strokes, coordinates normalized to [0, 1]."""

    strokes: tuple[tuple[tuple[float, float], ...], ...]

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "strokes", tuple(tuple((float(x), float(y)) for x, y in s) for s in self.strokes)
        )
        if not self.strokes:
            raise MalformedInk("ink note has no strokes")
        for stroke in self.strokes:
            if len(stroke) < 2:
                raise MalformedInk("stroke has fewer than 2 points")
            for x, y in stroke:
                if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
                    raise MalformedInk(f"coordinate ({x}, {y}) outside [0, 1]")


@dataclass(frozen=True)
class FileChunk:
    name: str
    index: int
    total: int
    data: bytes


@dataclass(frozen=True)
class Message:
    sender: bytes
    seq: int
    kind: int
    payload: bytes


def _fixed(v: float) -> int:
    # round half-up at 16-bit fixed point
    return int(v * INK_SCALE + 0.5)


def encode_ink(note: InkNote) -> bytes:
    """Serialize strokes as big-endian 16-bit fixed-point polylines."""
    out = [struct.pack(">H", len(note.strokes))]
    for stroke in note.strokes:
        out.append(struct.pack(">H", len(stroke)))
        for x, y in stroke:
            out.append(struct.pack(">HH", _fixed(x), _fixed(y)))
    return b"".join(out)


def decode_ink(data: bytes) -> InkNote:
    """Parse an ink payload; raises MalformedInk on truncation or bad shape."""
    try:
        (stroke_count,) = struct.unpack_from(">H", data, 0)
        off = 2
        strokes = []
        for _ in range(stroke_count):
            (point_count,) = struct.unpack_from(">H", data, off)
            off += 2
            points = []
            for _ in range(point_count):
                xf, yf = struct.unpack_from(">HH", data, off)
                off += 4
                points.append((xf / INK_SCALE, yf / INK_SCALE))
            strokes.append(tuple(points))
    except struct.error:
        raise MalformedInk("truncated ink payload") from None
    if off != len(data):
        raise MalformedInk("trailing bytes after ink payload")
    return InkNote(strokes=tuple(strokes))


def encode_file_chunk(chunk: FileChunk) -> bytes:
    name = chunk.name.encode("utf-8")
    return struct.pack(">H", len(name)) + name + struct.pack(">II", chunk.index, chunk.total) + chunk.data


def decode_file_chunk(data: bytes) -> FileChunk:
    try:
        (name_len,) = struct.unpack_from(">H", data, 0)
        name = data[2 : 2 + name_len].decode("utf-8")
        index, total = struct.unpack_from(">II", data, 2 + name_len)
    except (struct.error, UnicodeDecodeError):
        raise MessagingError("truncated file chunk") from None
    return FileChunk(name=name, index=index, total=total, data=data[10 + name_len :])


@dataclass
class SequenceState:
    """Per-device outbound counter; seq starts at 1."""

    last: int = 0

    def next_seq(self) -> int:
        self.last += 1
        return self.last


def compose(kind: int, body: bytes | str | InkNote | FileChunk, seq_state: SequenceState, sender: bytes) -> Message:
    """Build the next outbound message, validating the body for its kind."""
    if kind == KIND_CHAT:
        raw = body.encode("utf-8") if isinstance(body, str) else bytes(body)
        if not raw:
            raise EmptyBody("chat body is empty")
        if len(raw) > MAX_CHAT_BYTES:
            raise OversizePayload(f"chat body is {len(raw)} bytes, limit {MAX_CHAT_BYTES}")
    elif kind == KIND_INK:
        if not isinstance(body, InkNote):
            raise MalformedInk("ink body must be an InkNote")
        raw = encode_ink(body)
    elif kind == KIND_FILE:
        if not isinstance(body, FileChunk):
            raise MessagingError("file body must be a FileChunk")
        if not body.name:
            raise EmptyBody("file chunk has no name")
        if len(body.data) > MAX_FILE_CHUNK:
            raise OversizePayload(f"file chunk is {len(body.data)} bytes, limit {MAX_FILE_CHUNK}")
        raw = encode_file_chunk(body)
    else:
        raw = bytes(body)  # control payloads are prevalidated by the engine
    return Message(sender=sender, seq=seq_state.next_seq(), kind=kind, payload=raw)


class Disposition(Enum):
    DELIVER = "deliver"
    DUPLICATE = "duplicate"


@dataclass
class ReplayGuard:
    """Per-sender high-water marks; monotone, never decreasing.

    A sender registers as unsynced (None): whoever joins a group
    mid-session has no idea how far each counter has advanced, so the
    first frame from every sender sets the baseline instead of reporting
    frames from before the join as a gap.
    """

    high: dict[bytes, int | None] = field(default_factory=dict)

    def register(self, sender: bytes) -> None:
        self.high.setdefault(sender, None)

    def forget(self, sender: bytes) -> None:
        self.high.pop(sender, None)

    def accept_inbound(self, sender: bytes, seq: int) -> tuple[Disposition, tuple[int, int] | None]:
        """Classify an inbound (sender, seq).

        Returns (DELIVER, None) in order, (DUPLICATE, None) for replays,
        and (DELIVER, (lo, hi)) when seq skips ahead, naming the missing
        range.  Raises UnknownSender for senders never registered.
        """
        if sender not in self.high:
            raise UnknownSender(f"sender {sender.hex()} is not a group member")
        high = self.high[sender]
        if high is None:
            self.high[sender] = seq
            return Disposition.DELIVER, None
        if seq <= high:
            return Disposition.DUPLICATE, None
        gap = (high + 1, seq - 1) if seq > high + 1 else None
        self.high[sender] = seq
        return Disposition.DELIVER, gap


def route(members: dict[bytes, int], owner: bytes, sender: bytes, at: bytes) -> list[bytes]:
    """Forward targets for a message held at device `at`.

    The owner fans out to every member except the sender; a client only
    delivers locally (it receives solely from the owner).  Raises
    NotMember if the holder or sender is outside the group.
    """
    if at not in members or sender not in members:
        raise NotMember("device is not in the group")
    if at != owner:
        return []
    return [m for m in members if m != sender and m != at]
