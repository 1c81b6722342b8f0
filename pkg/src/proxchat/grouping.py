"""Connection invitations, owner negotiation, and group membership.

Invitations auto-decline 30 seconds after creation.  When two free
devices pair up, the higher go-intent (device id breaks ties) becomes
the group owner at group address 1; clients get the lowest free address
in 2..254.  The owner generates the group key and hands it to each
client inside the accepted-invitation exchange.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum

from .profile import Profile
from .security import GroupKey

DEFAULT_TTL_MS = 30_000.0
OWNER_ADDRESS = 1
MIN_CLIENT_ADDRESS = 2
MAX_CLIENT_ADDRESS = 254
GO_INTENT_MAX = 15


class GroupingError(Exception):
    pass


class PeerUnknown(GroupingError):
    pass


class PeerBusy(GroupingError):
    pass


class DuplicatePending(GroupingError):
    pass


class AlreadyResolved(GroupingError):
    pass


class ExpiredInvitation(GroupingError):
    pass


class GroupFull(GroupingError):
    pass


class NotOwner(GroupingError):
    pass


class NotInGroup(GroupingError):
    pass


class NotAvailable(GroupingError):
    """Local device is already connected and cannot initiate invitations."""


class InvitationState(Enum):
    PENDING = "pending"
    ACCEPTED = "accepted"
    DECLINED = "declined"
    EXPIRED = "expired"


class Role(Enum):
    OWNER = "owner"
    MEMBER = "member"


def check_go_intent(value: int) -> int:
    if not 0 <= value <= GO_INTENT_MAX:
        raise ValueError(f"go intent must be in 0..{GO_INTENT_MAX}, got {value}")
    return value


@dataclass
class Invitation:
    id: bytes
    from_device: bytes
    to_device: bytes
    from_profile: Profile | None
    created_at: float
    ttl_ms: float = DEFAULT_TTL_MS
    state: InvitationState = InvitationState.PENDING
    from_go_intent: int | None = None  # carried on the INVITE for owner negotiation

    def remaining_ms(self, now: float) -> float:
        return max(0.0, self.ttl_ms - (now - self.created_at))

    def is_expired(self, now: float) -> bool:
        # "after 30 seconds": strict, exactly 30 000 ms is still pending
        return now - self.created_at > self.ttl_ms


@dataclass
class InvitationStore:
    """Pending invitations, inbound and outbound, keyed by id."""

    ttl_ms: float = DEFAULT_TTL_MS
    invitations: dict[bytes, Invitation] = field(default_factory=dict)

    def add(self, inv: Invitation) -> None:
        self.invitations[inv.id] = inv

    def get(self, inv_id: bytes) -> Invitation | None:
        return self.invitations.get(inv_id)

    def pending(self) -> list[Invitation]:
        return [i for i in self.invitations.values() if i.state is InvitationState.PENDING]

    def has_pending_to(self, from_device: bytes, to_device: bytes) -> bool:
        return any(
            i.from_device == from_device and i.to_device == to_device for i in self.pending()
        )

    def resolve(self, inv: Invitation, state: InvitationState, now: float) -> None:
        """Move a Pending invitation to its one terminal state.

        A respond attempt past the ttl is treated exactly as the
        auto-decline: the invitation flips to (or already is) Expired and
        the caller gets ExpiredInvitation.
        """
        if inv.state is InvitationState.EXPIRED:
            raise ExpiredInvitation("invitation already expired")
        if inv.state is not InvitationState.PENDING:
            raise AlreadyResolved(f"invitation already {inv.state.value}")
        if state is not InvitationState.EXPIRED and inv.is_expired(now):
            inv.state = InvitationState.EXPIRED
            raise ExpiredInvitation(f"invitation expired {now - inv.created_at - inv.ttl_ms:.0f} ms ago")
        inv.state = state

    def expire_due(self, now: float) -> list[Invitation]:
        """Auto-decline every Pending invitation past its ttl."""
        out = []
        for inv in self.invitations.values():
            if inv.state is InvitationState.PENDING and inv.is_expired(now):
                inv.state = InvitationState.EXPIRED
                out.append(inv)
        return out

    def drop_resolved(self) -> None:
        self.invitations = {k: v for k, v in self.invitations.items() if v.state is InvitationState.PENDING}


def negotiate_role(a: tuple[int, bytes], b: tuple[int, bytes]) -> bytes:
    """Pick the group owner from two (go_intent, device_id) pairs.

    Higher intent wins; equal intents fall to the lexicographically
    greater device id.  Pure and order-independent, so both sides compute
    the same winner without a tie-breaker exchange.
    """
    (ia, da), (ib, db) = a, b
    if da == db:
        raise ValueError("cannot negotiate a device against itself")
    if ia != ib:
        return da if ia > ib else db
    return max(da, db)


@dataclass
class Group:
    """One owner plus clients, each holding a unique per-group address."""

    owner: bytes
    psk: GroupKey
    members: dict[bytes, int] = field(default_factory=dict)  # device_id -> group address

    def address_of(self, device_id: bytes) -> int | None:
        return self.members.get(device_id)

    def client_ids(self) -> list[bytes]:
        return [m for m in self.members if m != self.owner]

    def lowest_free_address(self) -> int | None:
        used = set(self.members.values())
        for addr in range(MIN_CLIENT_ADDRESS, MAX_CLIENT_ADDRESS + 1):
            if addr not in used:
                return addr
        return None


def form_group(owner_id: bytes, client_id: bytes, rng: random.Random) -> Group:
    """Create a two-device group: owner at address 1, client at 2,
    fresh key drawn by the owner."""
    psk = GroupKey(rng.randbytes(32))
    return Group(owner=owner_id, psk=psk, members={owner_id: OWNER_ADDRESS, client_id: MIN_CLIENT_ADDRESS})


def admit_member(group: Group, peer_id: bytes, at: bytes) -> int:
    """Add a client at the lowest free address; only the owner admits."""
    if at != group.owner:
        raise NotOwner("only the group owner admits members")
    if peer_id in group.members:
        raise PeerBusy("device is already a member")
    addr = group.lowest_free_address()
    if addr is None:
        raise GroupFull(f"all {MAX_CLIENT_ADDRESS - MIN_CLIENT_ADDRESS + 1} client addresses in use")
    group.members[peer_id] = addr
    return addr


def remove_member(group: Group, device_id: bytes) -> bool:
    """Remove a device; returns True when the group dissolves (owner left)."""
    if device_id not in group.members:
        raise NotInGroup(f"device {device_id.hex()} is not in the group")
    if device_id == group.owner:
        group.members.clear()
        return True
    del group.members[device_id]
    return False
