"""Serverless proximity chat.

Profiles ride inside the 32-byte SSID as ``name#interests``, nearby
devices find each other by alternating listen/search phases on the
social channels, matching is plain keyword overlap, and groups chat
through an owner-relayed star under a shared 256-bit key.  The same
protocol engine runs in a deterministic simulator and in the LAN
daemon.
"""

__version__ = "0.1.0"
