"""LAN daemon: the deployable half of the stack.

Discovery probes and beacons travel as UDP datagrams (multicast out,
unicast back), invitations and sealed group frames over short TCP
connections, and a loopback HTTP API plus NDJSON event stream drives it
all from a CLI or browser.
"""

from .config import ConfigError, InvalidProfile, NodeConfig, ParseError, load_config, save_config
from .daemon import MulticastJoinFailed, NodeDaemon, PortInUse

__all__ = [
    "ConfigError",
    "InvalidProfile",
    "NodeConfig",
    "ParseError",
    "load_config",
    "save_config",
    "NodeDaemon",
    "PortInUse",
    "MulticastJoinFailed",
]
