"""User identity codec and interest similarity.

A device advertises itself as ``name#kw1,kw2,...`` inside the 32-octet
SSID field, so the whole identity has to fit in 32 UTF-8 bytes.  Interest
keywords are free text normalized down to a comma-separated lowercase
list; matching between two devices is plain keyword overlap (Jaccard,
as a percentage) with an optional weighted cosine variant for callers
that track keyword counts.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Mapping

SSID_MAX_BYTES = 32

# Similarity percentages are plain ints in [0, 100].
SimilarityPercent = int


class ProfileError(Exception):
    pass


class Oversize(ProfileError):
    """Encoded SSID would exceed the 32-byte budget."""


class IllegalCharacter(ProfileError):
    """Name or keyword contains a reserved character or is not normalized."""


class Malformed(ProfileError):
    """SSID does not parse as name#interests (legacy/opaque device ID)."""


class EmptyProfile(ProfileError):
    """Weighted profile with no keywords."""


_WS_RUN = re.compile(r"\s+")
_COMMA_RUN = re.compile(r",+")


def normalize_interests(raw: str) -> list[str]:
    """Turn free-text interests into an ordered, deduplicated keyword list.

    Whitespace runs become one comma, comma runs collapse, leading and
    trailing separators are dropped, and duplicates are removed
    case-insensitively keeping the first occurrence.  Keywords are stored
    lowercase.  Idempotent; empty input gives an empty list.
    """
    s = _WS_RUN.sub(",", raw)
    s = _COMMA_RUN.sub(",", s)
    s = s.strip(",")
    if not s:
        return []
    seen: dict[str, None] = {}
    for token in s.split(","):
        kw = token.casefold()
        if kw not in seen:
            seen[kw] = None
    return list(seen)


def _check_keyword(kw: str) -> None:
    if not kw:
        raise IllegalCharacter("empty keyword")
    if "#" in kw or "," in kw:
        raise IllegalCharacter(f"keyword {kw!r} contains a reserved character")
    if _WS_RUN.search(kw):
        raise IllegalCharacter(f"keyword {kw!r} contains whitespace")
    if kw != kw.casefold():
        raise IllegalCharacter(f"keyword {kw!r} is not lowercase")


@dataclass(frozen=True)
class Profile:
    """Display name plus ordered interest keywords."""

    name: str
    interests: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "interests", tuple(self.interests))


def encode_ssid(p: Profile) -> str:
    """Encode a profile as ``name#kw1,kw2``, at most 32 UTF-8 bytes.

    Raises IllegalCharacter for a bad name or non-normalized keyword and
    Oversize when the result would not fit; never truncates.
    """
    if not p.name:
        raise IllegalCharacter("name is empty")
    if "#" in p.name:
        raise IllegalCharacter("name contains '#'")
    for kw in p.interests:
        _check_keyword(kw)
    ssid = p.name + "#" + ",".join(p.interests)
    n = len(ssid.encode("utf-8"))
    if n > SSID_MAX_BYTES:
        raise Oversize(f"encoded SSID is {n} bytes, limit is {SSID_MAX_BYTES}")
    return ssid


def decode_ssid(ssid: str) -> Profile:
    """Parse ``name#interests`` back into a Profile.

    Splits on the first '#'; the interest part is re-normalized.  Raises
    Malformed when there is no '#' or the name is empty (callers treat
    such peers as opaque, MAC-style device IDs) or when the input is over
    the 32-byte SSID budget.
    """
    if len(ssid.encode("utf-8")) > SSID_MAX_BYTES:
        raise Malformed(f"SSID longer than {SSID_MAX_BYTES} bytes")
    name, sep, rest = ssid.partition("#")
    if not sep or not name:
        raise Malformed("no name#interests structure")
    return Profile(name=name, interests=tuple(normalize_interests(rest)))


def keyword_similarity(a: list[str] | tuple[str, ...], b: list[str] | tuple[str, ...]) -> SimilarityPercent:
    """Jaccard overlap of two keyword lists as a rounded percentage.

    round(100 * |A∩B| / |A∪B|), half-up; both empty gives 0.
    """
    sa, sb = set(a), set(b)
    union = len(sa | sb)
    if union == 0:
        return 0
    inter = len(sa & sb)
    # floor(100*i/u + 1/2) in exact integer arithmetic
    return (200 * inter + union) // (2 * union)


@dataclass(frozen=True)
class WeightedProfile:
    """Keyword -> occurrence-count map for the weighted similarity variant."""

    weights: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.weights:
            raise EmptyProfile("weighted profile has no keywords")
        for kw, count in self.weights.items():
            if count < 1:
                raise ValueError(f"count for {kw!r} must be >= 1, got {count}")


def cosine_similarity(a: WeightedProfile | Mapping[str, float], b: WeightedProfile | Mapping[str, float]) -> float:
    """Cosine of the two weight vectors over the union of their keywords.

    Result is in [0, 1]: 1 exactly when the vectors are positive scalar
    multiples of each other, 0 when they share no keywords.  Raises
    EmptyProfile if either side has no keywords.
    """
    wa = a.weights if isinstance(a, WeightedProfile) else a
    wb = b.weights if isinstance(b, WeightedProfile) else b
    if not wa or not wb:
        raise EmptyProfile("cosine similarity needs non-empty profiles")
    dot = 0.0
    for kw in wa.keys() | wb.keys():
        dot += wa.get(kw, 0) * wb.get(kw, 0)
    norm = math.sqrt(math.fsum(v * v for v in wa.values())) * math.sqrt(
        math.fsum(v * v for v in wb.values())
    )
    return min(1.0, max(0.0, dot / norm))
