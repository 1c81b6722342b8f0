"""Sealing of in-group frames under the shared 256-bit group key.

Every group payload travels as AES-256-GCM ciphertext with the clear
frame header (sender, sequence number, payload kind) bound in as
associated data, so a relay can route on the header but nobody can
splice a ciphertext onto a different sender or sequence number.  Nonces
are a 4-byte sender prefix plus a per-sender 64-bit counter and are
never reused under one key.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

KEY_BYTES = 32
NONCE_BYTES = 12
_COUNTER_MAX = 2**64 - 1


class SecurityError(Exception):
    pass


class BadLength(SecurityError):
    """PSK string is not exactly 64 hex digits."""


class BadDigit(SecurityError):
    """PSK string contains a non-hexadecimal character."""


class NonceExhausted(SecurityError):
    """Per-sender nonce counter wrapped; the key must be retired."""


class AuthenticationFailure(SecurityError):
    """Frame failed tag verification: tampered, spliced, or wrong key."""


@dataclass(frozen=True)
class GroupKey:
    """32-byte pre-shared group secret, rendered as 64 hex digits."""

    key: bytes

    def __post_init__(self) -> None:
        if len(self.key) != KEY_BYTES:
            raise BadLength(f"group key must be {KEY_BYTES} bytes, got {len(self.key)}")

    def render(self) -> str:
        return self.key.hex()


def parse_psk(text: str) -> GroupKey:
    """Parse a 64-hex-digit pre-shared key, case-insensitively."""
    if len(text) != KEY_BYTES * 2:
        raise BadLength(f"PSK must be {KEY_BYTES * 2} hex digits, got {len(text)}")
    try:
        raw = bytes.fromhex(text)
    except ValueError as e:
        raise BadDigit(str(e)) from None
    return GroupKey(raw)


@dataclass(frozen=True)
class FrameHeader:
    """Clear, authenticated routing header of a sealed frame."""

    sender: bytes  # 16-byte device id
    seq: int  # per-sender counter, starts at 1
    kind: int  # payload kind byte

    def pack(self) -> bytes:
        return struct.pack(">16sQB", self.sender, self.seq, self.kind)


@dataclass(frozen=True)
class SealedFrame:
    header: FrameHeader
    nonce: bytes
    ciphertext: bytes  # includes the 16-byte GCM tag


@dataclass
class NonceState:
    """Per-sender nonce source: 4-byte prefix || big-endian counter."""

    prefix: bytes
    counter: int = 0
    issued: list[bytes] = field(default_factory=list, repr=False)

    @classmethod
    def for_sender(cls, sender: bytes) -> "NonceState":
        return cls(prefix=sender[:4])

    def next_nonce(self) -> bytes:
        if self.counter >= _COUNTER_MAX:
            raise NonceExhausted("nonce counter wrapped")
        self.counter += 1
        return self.prefix + struct.pack(">Q", self.counter)


def seal(key: GroupKey, header: FrameHeader, plaintext: bytes, nonce_state: NonceState) -> SealedFrame:
    """Encrypt a payload under the group key, authenticating the header."""
    nonce = nonce_state.next_nonce()
    ct = AESGCM(key.key).encrypt(nonce, plaintext, header.pack())
    return SealedFrame(header=header, nonce=nonce, ciphertext=ct)


def open_frame(key: GroupKey, sealed: SealedFrame) -> tuple[FrameHeader, bytes]:
    """Verify and decrypt a sealed frame.

    Raises AuthenticationFailure on any tag mismatch; the verified header
    is what feeds replay checking downstream.
    """
    try:
        pt = AESGCM(key.key).decrypt(sealed.nonce, sealed.ciphertext, sealed.header.pack())
    except InvalidTag:
        raise AuthenticationFailure("sealed frame failed verification") from None
    return sealed.header, pt
