"""Acceptance gate: one test per release criterion, at full scale.

Run with `pytest tests/test_acceptance.py -v -s` to see one PASS line
per criterion.  These repeat the unit-level checks at their contractual
sizes (10 000 profiles, 1 000 simulator seeds, 10 000 fuzz mutations,
two real daemon processes) and enforce the stated time budgets.
"""

import json
import os
import random
import socket
import string
import subprocess
import sys
import time
import urllib.error
import urllib.request
from fractions import Fraction

import pytest

from proxchat.grouping import (
    ExpiredInvitation,
    Invitation,
    InvitationState,
    InvitationStore,
    negotiate_role,
)
from proxchat.messaging import Disposition, ReplayGuard
from proxchat.profile import (
    Oversize,
    Profile,
    cosine_similarity,
    decode_ssid,
    encode_ssid,
    keyword_similarity,
    normalize_interests,
)
from proxchat.security import AuthenticationFailure, FrameHeader, GroupKey, NonceState, open_frame, seal
from proxchat.simnet import measure_discovery_latency, run_scenario
from proxchat.wire import GroupSealed, WireError, decode_frame, encode_frame

from test_profile import GOLDEN_NORMALIZE


def report(name: str) -> None:
    print(f"\n[ACCEPTANCE] PASS: {name}")


# ---------------------------------------------------------------- 1. ssid codec


def _random_profile(rng: random.Random) -> Profile:
    alphabet = string.ascii_letters + string.digits + " .-_é犬ö"
    kw_alphabet = string.ascii_lowercase + string.digits + "é犬"
    while True:
        name = "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 14))).replace("#", "x")
        kws = []
        for _ in range(rng.randint(0, 4)):
            kw = "".join(rng.choice(kw_alphabet) for _ in range(rng.randint(1, 8)))
            if kw not in kws:
                kws.append(kw)
        p = Profile(name, tuple(kws))
        if len((name + "#" + ",".join(kws)).encode("utf-8")) <= 32:
            return p


def test_acceptance_ssid_codec_10k_profiles():
    rng = random.Random(0xC0DEC)
    start = time.perf_counter()
    for _ in range(10_000):
        p = _random_profile(rng)
        ssid = encode_ssid(p)
        assert len(ssid.encode("utf-8")) <= 32
        assert decode_ssid(ssid) == p
        # inflate the same profile to exactly 33 bytes: rejected, never truncated
        room = 32 - len(ssid.encode("utf-8"))
        fat = Profile(p.name + "z" * (room + 1), p.interests)
        with pytest.raises(Oversize):
            encode_ssid(fat)
        if room:
            exact = Profile(p.name + "z" * room, p.interests)
            assert len(encode_ssid(exact).encode("utf-8")) == 32
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0, f"codec property suite took {elapsed:.1f}s (budget 5s)"
    report(f"SSID codec: 10 000 profiles round-trip, 32-byte cap, Oversize at 33 ({elapsed:.2f}s)")


# ---------------------------------------------------------------- 2. normalization


def test_acceptance_normalization_golden_table():
    assert len(GOLDEN_NORMALIZE) == 50
    for raw, expected in GOLDEN_NORMALIZE:
        assert normalize_interests(raw) == expected
    assert normalize_interests("music  chess,  go") == ["music", "chess", "go"]
    report("normalization: 50-case golden table incl. 'music  chess,  go'")


# ---------------------------------------------------------------- 3. similarity


def test_acceptance_similarity_oracles():
    rng = random.Random(1701)
    vocab = [f"kw{i}" for i in range(12)]
    for _ in range(1_000):
        a = rng.sample(vocab, rng.randint(0, 8))
        b = rng.sample(vocab, rng.randint(0, 8))
        sa, sb = set(a), set(b)
        if sa | sb:
            expected = int(Fraction(100) * len(sa & sb) / len(sa | sb) + Fraction(1, 2))
        else:
            expected = 0
        assert keyword_similarity(a, b) == expected
        assert keyword_similarity(b, a) == expected

    import math

    for _ in range(1_000):
        wa = {k: rng.randint(1, 50) for k in rng.sample(vocab, rng.randint(1, 12))}
        wb = {k: rng.randint(1, 50) for k in rng.sample(vocab, rng.randint(1, 12))}
        union = set(wa) | set(wb)
        dot = math.fsum(wa.get(k, 0) * wb.get(k, 0) for k in union)
        oracle = dot / (
            math.sqrt(math.fsum(v * v for v in wa.values()))
            * math.sqrt(math.fsum(v * v for v in wb.values()))
        )
        got = cosine_similarity(wa, wb)
        assert abs(got - oracle) <= 1e-9
        assert 0.0 <= got <= 1.0
    report("similarity: 1 000 keyword pairs exact vs set oracle; cosine within 1e-9, in [0,1]")


# ---------------------------------------------------------------- 4. rendezvous


def test_acceptance_discovery_rendezvous_1000_runs():
    scenario = {
        "range_m": 200,
        "loss": 0.0,
        "duration_ms": 10_000,
        "devices": [
            {"id": "a", "name": "A", "interests": "x", "pos_x": 0, "pos_y": 0},
            {"id": "b", "name": "B", "interests": "x", "pos_x": 50, "pos_y": 0},
        ],
        "script": [
            {"at_ms": 0, "device": "a", "action": "start_discovery"},
            {"at_ms": 0, "device": "b", "action": "start_discovery"},
        ],
    }
    r1 = run_scenario(scenario, seed=4242)
    r2 = run_scenario(scenario, seed=4242)
    assert r1.trace_jsonl() == r2.trace_jsonl(), "identical seed must give identical trace"

    start = time.perf_counter()
    stats = measure_discovery_latency(scenario, n_runs=1_000, base_seed=0)
    elapsed = time.perf_counter() - start
    rate = stats["all_pairs_discovered_runs"] / stats["runs"]
    assert rate >= 0.99, f"rendezvous rate {rate:.3f} below 99%"
    assert elapsed < 60.0, f"sweep took {elapsed:.1f}s (budget 60s)"
    report(
        "discovery rendezvous: "
        f"{stats['all_pairs_discovered_runs']}/1000 mutual within 10 s "
        f"(p99 {stats['pairs']['a|b']['p99_ms']:.0f} ms, sweep {elapsed:.1f}s)"
    )


# ---------------------------------------------------------------- 5. invitation clock


def test_acceptance_invitation_clock():
    def fresh():
        store = InvitationStore()
        inv = Invitation(
            id=b"\x01" * 16, from_device=b"a" * 16, to_device=b"b" * 16,
            from_profile=None, created_at=0.0,
        )
        store.add(inv)
        return store, inv

    transitions = []
    for now in range(29_990, 30_011):
        store, inv = fresh()
        store.expire_due(float(now))
        if inv.state is InvitationState.EXPIRED:
            transitions.append(now)
    assert transitions == list(range(30_001, 30_011)), "expiry must begin exactly at 30 001 ms"

    store, inv = fresh()
    store.resolve(inv, InvitationState.ACCEPTED, now=29_999.0)
    assert inv.state is InvitationState.ACCEPTED

    store, inv = fresh()
    with pytest.raises(ExpiredInvitation):
        store.resolve(inv, InvitationState.ACCEPTED, now=30_001.0)
    assert inv.state is InvitationState.EXPIRED
    report("invitation clock: Pending->Expired first at 30 001 ms; accept at 29 999 ms succeeds")


# ---------------------------------------------------------------- 6. role negotiation


def test_acceptance_role_negotiation_grid():
    a_id, b_id = b"\x11" * 16, b"\x22" * 16
    for ia in range(16):
        for ib in range(16):
            fwd = negotiate_role((ia, a_id), (ib, b_id))
            rev = negotiate_role((ib, b_id), (ia, a_id))
            assert fwd == rev, "argument order must not matter"
            assert fwd in (a_id, b_id)
            expected = a_id if ia > ib else b_id if ib > ia else max(a_id, b_id)
            assert fwd == expected
    report("role negotiation: 16x16 intent grid x both argument orders -> exactly one owner")


# ---------------------------------------------------------------- 7. group/messaging


def test_acceptance_group_messaging_chaos_scenario():
    base = 12_000
    script = [
        {"at_ms": 0, "device": "o", "action": "start_discovery"},
        {"at_ms": 0, "device": "a", "action": "start_discovery"},
        {"at_ms": 0, "device": "b", "action": "start_discovery"},
        {"at_ms": 5_000, "device": "a", "action": "invite", "to": "o"},
        {"at_ms": 5_600, "device": "o", "action": "respond", "from": "a", "accept": True},
        {"at_ms": 8_000, "device": "b", "action": "invite", "to": "o"},
        {"at_ms": 8_600, "device": "o", "action": "respond", "from": "b", "accept": True},
    ]
    rng = random.Random(9)
    sent_inks: dict[tuple[str, int], list] = {}
    ink_counter: dict[str, int] = {"o": 0, "a": 0, "b": 0}
    senders = ["o", "a", "b"]
    for i in range(100):
        dev = senders[i % 3]
        at = base + i * 53
        if i % 4 == 3:
            strokes = [[[rng.randint(0, 1000) / 1000, rng.randint(0, 1000) / 1000] for _ in range(4)]]
            script.append({"at_ms": at, "device": dev, "action": "send_ink", "strokes": strokes})
            sent_inks[(dev, ink_counter[dev])] = strokes
            ink_counter[dev] += 1
        else:
            script.append({"at_ms": at, "device": dev, "action": "send_chat", "text": f"msg-{i}"})
    scenario = {
        "duration_ms": 25_000,
        "chaos": {"duplicate_p": 0.10, "reorder_p": 0.10},
        "devices": [
            {"id": "o", "name": "Oona", "interests": "music", "pos_x": 0, "pos_y": 0, "go_intent": 15},
            {"id": "a", "name": "Ann", "interests": "music", "pos_x": 30, "pos_y": 0, "go_intent": 4},
            {"id": "b", "name": "Ben", "interests": "music", "pos_x": 0, "pos_y": 30, "go_intent": 2},
        ],
        "script": script,
    }
    result = run_scenario(scenario, seed=2024)
    assert result.metrics.injected_duplicates > 0, "chaos must actually fire"
    assert not any(r["event"] == "action_error" for r in result.trace)

    msgs = [r for r in result.trace if r["event"] == "message"]
    keys = [(r["device"], r["details"]["peer"], r["details"]["seq"]) for r in msgs]
    assert len(keys) == len(set(keys)), "a (receiver, sender, seq) delivered twice"
    streams: dict[tuple, list[int]] = {}
    for r in msgs:
        streams.setdefault((r["device"], r["details"]["peer"]), []).append(r["details"]["seq"])
    for seqs in streams.values():
        assert seqs == sorted(set(seqs)), "per-sender delivery must be strictly increasing"
    # relay conservation: every message reaches exactly the other two members
    assert len(msgs) == 100 * 2, f"expected 200 deliveries, saw {len(msgs)}"
    assert result.metrics.messages["delivered"] == 200

    ink_msgs = [r for r in msgs if r["details"]["kind"] == "ink"]
    label_of = {"Oona": "o", "Ann": "a", "Ben": "b"}
    seen_per_sender: dict[tuple[str, str], int] = {}
    for r in sorted(ink_msgs, key=lambda r: r["details"]["seq"]):
        sender = label_of[r["details"]["name"]]
        idx = seen_per_sender.setdefault((r["device"], sender), 0)
        expected = sent_inks[(sender, idx)]
        got = r["details"]["strokes"]
        for (x0, y0), (x1, y1) in zip(expected[0], got[0]):
            assert abs(x0 - x1) <= 1 / 65535
            assert abs(y0 - y1) <= 1 / 65535
        seen_per_sender[(r["device"], sender)] = idx + 1
    report(
        "group/messaging: 3-device admit + 100 chaos-injected messages -> "
        f"exactly-once in-order, 200 deliveries, ink within 1/65535 "
        f"({result.metrics.injected_duplicates} duplicates injected)"
    )


# ---------------------------------------------------------------- 8. security


def test_acceptance_security_fuzz():
    rng = random.Random(0x5EC)
    key = GroupKey(rng.randbytes(32))
    nonces = NonceState.for_sender(b"\x42" * 16)
    frames = []
    for seq in range(1, 21):
        sealed = seal(key, FrameHeader(b"\x42" * 16, seq, seq % 3), rng.randbytes(rng.randint(1, 300)), nonces)
        frames.append(encode_frame(GroupSealed(sealed=sealed)))

    rejected = 0
    for i in range(10_000):
        raw = bytearray(frames[i % len(frames)])
        raw[rng.randrange(len(raw))] ^= 1 << rng.randrange(8)
        try:
            frame = decode_frame(bytes(raw))
            if not isinstance(frame, GroupSealed):
                rejected += 1  # type byte flipped into another frame shape
                continue
            open_frame(key, frame.sealed)
        except (WireError, AuthenticationFailure):
            rejected += 1
    assert rejected == 10_000, f"{10_000 - rejected} single-bit mutations were accepted"

    sealed_ok = seal(key, FrameHeader(b"\x42" * 16, 99, 0), b"secret", nonces)
    for _ in range(200):
        wrong = GroupKey(rng.randbytes(32))
        with pytest.raises(AuthenticationFailure):
            open_frame(wrong, sealed_ok)

    guard = ReplayGuard()
    guard.register(b"\x42" * 16)
    header, _ = open_frame(key, sealed_ok)
    outcomes = [guard.accept_inbound(header.sender, header.seq)[0] for _ in range(5)]
    assert outcomes[0] is Disposition.DELIVER
    assert all(o is Disposition.DUPLICATE for o in outcomes[1:])
    report("security: 10 000/10 000 bit flips rejected; 200 wrong PSKs fail; replay delivered once")


# ---------------------------------------------------------------- 9. LAN end-to-end


def _free_ports(n, kind=socket.SOCK_STREAM):
    socks, ports = [], []
    for _ in range(n):
        s = socket.socket(socket.AF_INET, kind)
        s.bind(("127.0.0.1", 0))
        socks.append(s)
        ports.append(s.getsockname()[1])
    for s in socks:
        s.close()
    return ports


def _api(port, method, path, body=None):
    data = json.dumps(body).encode() if body is not None else None
    req = urllib.request.Request(f"http://127.0.0.1:{port}{path}", data=data, method=method)
    req.add_header("Content-Type", "application/json")
    with urllib.request.urlopen(req, timeout=5) as r:
        return json.loads(r.read())


def _wait(predicate, timeout, step=0.15):
    deadline = time.time() + timeout
    while time.time() < deadline:
        try:
            value = predicate()
        except (urllib.error.URLError, ConnectionError, OSError):
            value = None
        if value:
            return value
        time.sleep(step)
    raise AssertionError("condition not met in time")


def test_acceptance_lan_end_to_end(tmp_path):
    start = time.time()
    api_a, api_b, uni_a, uni_b = _free_ports(4)
    (mcast,) = _free_ports(1, socket.SOCK_DGRAM)
    procs = []
    try:
        for tag, api_port, uni, name, interests, intent, seed in (
            ("a", api_a, uni_a, "Alice", ["music", "chess"], 12, 7),
            ("b", api_b, uni_b, "Bob", ["chess", "food"], 2, 8),
        ):
            cfg = {
                "name": name, "interests": interests, "go_intent": intent,
                "device_id": (tag * 2) * 16,
                "api_port": api_port, "unicast_port": uni, "multicast_port": mcast,
            }
            path = tmp_path / f"{tag}.json"
            path.write_text(json.dumps(cfg))
            procs.append(
                subprocess.Popen(
                    [sys.executable, "-m", "proxchat", "run", "--config", str(path), "--seed", str(seed)],
                    stdout=subprocess.PIPE, stderr=subprocess.PIPE,
                    cwd=os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                )
            )

        try:
            _wait(lambda: _api(api_a, "GET", "/v1/peers") and _api(api_b, "GET", "/v1/peers"), timeout=20)
        except AssertionError:
            details = []
            for p in procs:
                p.terminate()
                out, err = p.communicate(timeout=5)
                details.append(f"rc={p.returncode} stderr={err.decode(errors='replace')[:800]}")
            raise AssertionError("daemons never discovered each other: " + " | ".join(details))
        peers_b_view = _api(api_a, "GET", "/v1/peers")
        assert peers_b_view[0]["similarity"] == 33

        _api(api_a, "POST", "/v1/invitations", {"device_id": "bb" * 16})
        inv = _wait(lambda: _api(api_b, "GET", "/v1/invitations"), timeout=10)[0]
        assert inv["remaining_ms"] <= 30_000
        _api(api_b, "POST", f"/v1/invitations/{inv['id']}/response", {"accept": True})
        _wait(lambda: _api(api_a, "GET", "/v1/group") and _api(api_b, "GET", "/v1/group"), timeout=10)
        ga, gb = _api(api_a, "GET", "/v1/group"), _api(api_b, "GET", "/v1/group")
        assert ga["role"] == "owner" and gb["role"] == "member"  # intent 12 beats 2
        assert ga["members"] == gb["members"]
        assert [m["address"] for m in ga["members"]] == [1, 2]

        _api(api_a, "POST", "/v1/messages", {"kind": "chat", "text": "hello from alice"})
        strokes = [[[0.0, 0.0], [0.25, 0.75], [1.0, 1.0]]]
        _api(api_b, "POST", "/v1/messages", {"kind": "ink", "strokes": strokes})

        # read the journal replay off the live stream until the first
        # heartbeat (which marks "caught up")
        def journal(port):
            conn_events = []
            req = urllib.request.Request(f"http://127.0.0.1:{port}/v1/events?since=0")
            with urllib.request.urlopen(req, timeout=5) as resp:
                deadline = time.time() + 3
                while time.time() < deadline:
                    line = resp.readline()
                    if not line:
                        break
                    row = json.loads(line)
                    if row.get("event") == "heartbeat":
                        break
                    conn_events.append(row)
            return conn_events

        chat_rows = _wait(
            lambda: [e for e in journal(api_b) if e.get("event") == "message" and e.get("kind") == "chat"],
            timeout=10,
        )
        assert chat_rows[0]["text"] == "hello from alice"
        ink_rows = _wait(
            lambda: [e for e in journal(api_a) if e.get("event") == "message" and e.get("kind") == "ink"],
            timeout=10,
        )
        for (x0, y0), (x1, y1) in zip(strokes[0], ink_rows[0]["strokes"][0]):
            assert abs(x0 - x1) <= 1 / 65535 and abs(y0 - y1) <= 1 / 65535

        _api(api_b, "POST", "/v1/disconnect")
        _wait(lambda: _api(api_a, "GET", "/v1/group") is None, timeout=10)
        assert _api(api_b, "GET", "/v1/group") is None
        _wait(lambda: _api(api_a, "GET", "/v1/peers")[0]["status"] == "available", timeout=10)

        elapsed = time.time() - start
        assert elapsed < 60.0, f"end-to-end took {elapsed:.1f}s (budget 60s)"
        report(f"LAN end-to-end: discover -> invite -> accept -> chat -> ink -> disconnect in {elapsed:.1f}s")
    finally:
        for p in procs:
            p.terminate()
        for p in procs:
            try:
                p.wait(timeout=10)
            except subprocess.TimeoutExpired:
                p.kill()
