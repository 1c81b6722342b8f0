"""Command-line entry point.

`proxchat run` starts the daemon; `peers`, `invite`, `respond`, `chat`,
and `disconnect` talk to a running daemon's API; `sim` executes
scenario files offline.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import urllib.error
import urllib.request

from . import simnet
from .node import ConfigError, NodeDaemon, load_config, save_config
from .node.daemon import NodeError

DEFAULT_CONFIG = os.path.expanduser("~/.proxchat.json")


def _api(args, method: str, path: str, body: dict | None = None):
    port = args.api_port if args.api_port is not None else 7777
    url = f"http://127.0.0.1:{port}{path}"
    data = json.dumps(body).encode() if body is not None else None
    req = urllib.request.Request(url, data=data, method=method)
    req.add_header("Content-Type", "application/json")
    try:
        with urllib.request.urlopen(req, timeout=10) as resp:
            return json.loads(resp.read())
    except urllib.error.HTTPError as e:
        detail = e.read().decode(errors="replace")
        print(f"error {e.code}: {detail}", file=sys.stderr)
        sys.exit(1)
    except urllib.error.URLError as e:
        print(f"cannot reach node API on port {port}: {e.reason}", file=sys.stderr)
        sys.exit(1)


def _cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    if args.api_port is not None:
        cfg.api_port = args.api_port
    if args.airplane:
        cfg.airplane = True
    if not os.path.exists(args.config):
        save_config(cfg, args.config)  # persist the generated identity
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    try:
        daemon = NodeDaemon(cfg, seed=args.seed, web_root=args.web_root)
        daemon.run_forever()
    except (NodeError, ConfigError) as e:
        print(f"startup failed: {e}", file=sys.stderr)
        return 1
    return 0


def _cmd_peers(args) -> int:
    peers = _api(args, "GET", "/v1/peers")
    if not peers:
        print("no peers")
        return 0
    for p in peers:
        sim = f"{p['similarity']:>3}%" if p["similarity"] is not None else "  ??"
        name = p["name"] or "(opaque)"
        print(f"{sim}  {name:<20} {p['status']:<10} {','.join(p['interests'])}  [{p['device_id']}]")
    return 0


def _cmd_invite(args) -> int:
    out = _api(args, "POST", "/v1/invitations", {"device_id": args.device_id})
    print(f"invitation {out['id']} sent ({out['remaining_ms']:.0f} ms to respond)")
    return 0


def _cmd_respond(args) -> int:
    _api(args, "POST", f"/v1/invitations/{args.invitation_id}/response", {"accept": args.accept})
    print("accepted" if args.accept else "declined")
    return 0


def _cmd_chat(args) -> int:
    out = _api(args, "POST", "/v1/messages", {"kind": "chat", "text": args.text})
    print(f"sent (seq {out['seq']})")
    return 0


def _cmd_disconnect(args) -> int:
    _api(args, "POST", "/v1/disconnect")
    print("disconnected")
    return 0


def _cmd_sim(args) -> int:
    try:
        scenario = simnet.load_scenario(args.scenario)
    except simnet.SimError as e:
        print(f"scenario error: {e}", file=sys.stderr)
        return 1
    if args.runs > 1:
        stats = simnet.measure_discovery_latency(scenario, n_runs=args.runs, base_seed=args.seed)
        print(json.dumps(stats, indent=2))
        return 0
    result = simnet.run_scenario(scenario, seed=args.seed)
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as f:
            f.write(result.trace_jsonl() + "\n")
        print(f"trace written to {args.trace}", file=sys.stderr)
    print(json.dumps(result.metrics.to_json(), indent=2))
    return 0


def main(argv: list[str] | None = None) -> int:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--api-port", type=int, default=None, help="control API port (default 7777)")

    parser = argparse.ArgumentParser(prog="proxchat", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", parents=[common], help="start the node daemon")
    p_run.add_argument("--config", default=DEFAULT_CONFIG, help="config file path")
    p_run.add_argument("--airplane", action="store_true", help="keep the stack alive with transport off")
    p_run.add_argument("--seed", type=int, default=None, help="seed the RNG for reproducible tests")
    p_run.add_argument("--web-root", default=None, help="serve this directory as the web UI")
    p_run.set_defaults(fn=_cmd_run)

    p_peers = sub.add_parser("peers", parents=[common], help="list nearby devices")
    p_peers.set_defaults(fn=_cmd_peers)

    p_invite = sub.add_parser("invite", parents=[common], help="invite a peer by device id")
    p_invite.add_argument("device_id")
    p_invite.set_defaults(fn=_cmd_invite)

    p_resp = sub.add_parser("respond", parents=[common], help="answer a pending invitation")
    p_resp.add_argument("invitation_id")
    group = p_resp.add_mutually_exclusive_group(required=True)
    group.add_argument("--accept", dest="accept", action="store_true")
    group.add_argument("--decline", dest="accept", action="store_false")
    p_resp.set_defaults(fn=_cmd_respond)

    p_chat = sub.add_parser("chat", parents=[common], help="send a chat message to the group")
    p_chat.add_argument("text")
    p_chat.set_defaults(fn=_cmd_chat)

    p_disc = sub.add_parser("disconnect", parents=[common], help="leave the current group")
    p_disc.set_defaults(fn=_cmd_disconnect)

    p_sim = sub.add_parser("sim", help="run a scenario in the simulator")
    p_sim.add_argument("scenario", help="scenario JSON file")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--runs", type=int, default=1, help="Monte-Carlo discovery sweep when > 1")
    p_sim.add_argument("--trace", default=None, help="write the event trace (JSONL) here")
    p_sim.set_defaults(fn=_cmd_sim)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
