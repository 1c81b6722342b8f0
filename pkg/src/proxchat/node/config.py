"""Node configuration: JSON file with the profile, ports, and timers.

A missing file yields defaults with a freshly generated device id; the
daemon persists it on first start so the identity is stable across
restarts.  Profile problems (SSID over 32 bytes, bad characters) are
reported before the node starts, not when the first beacon goes out.
"""

from __future__ import annotations

import json
import os
import secrets
from dataclasses import dataclass, field, fields

from ..grouping import check_go_intent
from ..profile import Profile, ProfileError, encode_ssid, normalize_interests


class ConfigError(Exception):
    pass


class ParseError(ConfigError):
    pass


class InvalidProfile(ConfigError):
    pass


@dataclass
class NodeConfig:
    name: str = ""
    interests: list[str] = field(default_factory=list)
    go_intent: int = 7
    api_port: int = 7777
    api_bind: str = "127.0.0.1"
    api_token: str = ""  # required for non-loopback binds
    multicast_group: str = "239.77.68.1"
    multicast_port: int = 3773
    unicast_port: int = 3774
    dwell_min_ms: float = 100.0
    dwell_max_ms: float = 300.0
    stale_after_ms: float = 10_000.0
    invitation_ttl_ms: float = 30_000.0
    airplane: bool = False
    device_id: str = ""  # 32 hex chars

    def profile(self) -> Profile:
        return Profile(name=self.name, interests=tuple(self.interests))

    def device_id_bytes(self) -> bytes:
        return bytes.fromhex(self.device_id)

    def validate(self) -> None:
        ports = {self.api_port, self.multicast_port, self.unicast_port}
        if len(ports) != 3:
            raise ParseError("api_port, multicast_port and unicast_port must be distinct")
        if not 0 < self.dwell_min_ms <= self.dwell_max_ms:
            raise ParseError("dwell bounds must satisfy 0 < dwell_min_ms <= dwell_max_ms")
        try:
            check_go_intent(self.go_intent)
        except ValueError as e:
            raise ParseError(str(e)) from None
        if len(self.device_id) != 32:
            raise ParseError("device_id must be 32 hex characters")
        try:
            bytes.fromhex(self.device_id)
        except ValueError:
            raise ParseError("device_id is not hexadecimal") from None
        try:
            encode_ssid(self.profile())
        except ProfileError as e:
            raise InvalidProfile(f"name/interests do not fit the SSID: {e}") from None


_FIELD_TYPES = {f.name: f.type for f in fields(NodeConfig)}


def _defaults() -> NodeConfig:
    cfg = NodeConfig()
    cfg.device_id = secrets.token_bytes(16).hex()
    cfg.name = "user-" + cfg.device_id[:4]
    return cfg


def load_config(path: str) -> NodeConfig:
    """Read config JSON; a missing file gives defaults with a new identity."""
    if not os.path.exists(path):
        return _defaults()
    with open(path, encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}:{e.lineno}: {e.msg}") from None
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: top level must be an object")
    cfg = _defaults()
    for key, value in raw.items():
        if key not in _FIELD_TYPES:
            raise ParseError(f"{path}: unknown field {key!r}")
        setattr(cfg, key, value)
    if isinstance(cfg.interests, str):
        cfg.interests = normalize_interests(cfg.interests)
    cfg.validate()
    return cfg


def save_config(cfg: NodeConfig, path: str) -> None:
    cfg.validate()
    data = {f.name: getattr(cfg, f.name) for f in fields(NodeConfig)}
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)
