import copy
import json

import pytest

from proxchat.simnet import (
    RadioModel,
    SchemaError,
    Simulation,
    UnknownDevice,
    in_range,
    measure_discovery_latency,
    run_scenario,
    validate_scenario,
)


def two_device_scenario(**over):
    sc = {
        "range_m": 200,
        "loss": 0.0,
        "duration_ms": 10_000,
        "devices": [
            {"id": "alice", "name": "Alice", "interests": "music chess", "pos_x": 0, "pos_y": 0, "go_intent": 10},
            {"id": "bob", "name": "Bob", "interests": "chess food", "pos_x": 50, "pos_y": 0, "go_intent": 3},
        ],
        "script": [
            {"at_ms": 0, "device": "alice", "action": "start_discovery"},
            {"at_ms": 0, "device": "bob", "action": "start_discovery"},
        ],
    }
    sc.update(over)
    return sc


# ---------------------------------------------------------------- radio model


def test_in_range_boundaries():
    model = RadioModel(range_m=200.0)
    assert in_range((0, 0), (0, 150), model)
    assert not in_range((0, 0), (0, 250), model)
    assert in_range((0, 0), (0, 200.0), model)  # inclusive boundary


def test_loss_probability_one_rejected():
    with pytest.raises(SchemaError):
        RadioModel(loss_probability=1.0)
    RadioModel(loss_probability=0.999)
    with pytest.raises(SchemaError):
        RadioModel(range_m=0.0)


# ---------------------------------------------------------------- schema


def test_schema_rejects_unknown_keys():
    sc = two_device_scenario()
    sc["typo"] = 1
    with pytest.raises(SchemaError):
        validate_scenario(sc)


def test_schema_requires_device_fields():
    sc = two_device_scenario()
    del sc["devices"][0]["pos_x"]
    with pytest.raises(SchemaError):
        validate_scenario(sc)


def test_schema_rejects_unknown_script_action():
    sc = two_device_scenario()
    sc["script"].append({"at_ms": 0, "device": "alice", "action": "teleport"})
    with pytest.raises(SchemaError):
        validate_scenario(sc)


def test_schema_rejects_unknown_script_device():
    sc = two_device_scenario()
    sc["script"].append({"at_ms": 0, "device": "mallory", "action": "start_discovery"})
    with pytest.raises(UnknownDevice):
        validate_scenario(sc)


def test_schema_rejects_bad_duration():
    with pytest.raises(SchemaError):
        validate_scenario(two_device_scenario(duration_ms=0))


def test_schema_rejects_duplicate_ids():
    sc = two_device_scenario()
    sc["devices"][1]["id"] = "alice"
    with pytest.raises(SchemaError):
        validate_scenario(sc)


# ---------------------------------------------------------------- determinism


def test_same_seed_same_trace():
    sc = two_device_scenario()
    r1 = run_scenario(sc, seed=99)
    r2 = run_scenario(copy.deepcopy(sc), seed=99)
    assert r1.trace_jsonl() == r2.trace_jsonl()
    assert json.dumps(r1.metrics.to_json(), sort_keys=True) == json.dumps(r2.metrics.to_json(), sort_keys=True)


def test_different_seed_different_rendezvous():
    sc = two_device_scenario()
    lat = {run_scenario(sc, seed=s).metrics.discovery_latency_ms["alice|bob"] for s in range(4)}
    assert len(lat) > 1


# ---------------------------------------------------------------- discovery


def test_mutual_discovery_within_duration():
    result = run_scenario(two_device_scenario(), seed=5)
    assert result.metrics.discovery_latency_ms.get("alice|bob") is not None
    found = [r for r in result.trace if r["event"] == "peer_found"]
    assert {r["device"] for r in found} == {"alice", "bob"}


def test_out_of_range_no_discovery_no_deliveries():
    sc = two_device_scenario()
    sc["devices"][1]["pos_x"] = 500
    result = run_scenario(sc, seed=5)
    assert result.metrics.discovery_latency_ms == {}
    for stats in result.metrics.frames.values():
        assert stats.delivered == 0
    assert result.metrics.frames["probe"].dropped_range > 0


def test_exactly_at_range_boundary_discovers():
    sc = two_device_scenario()
    sc["devices"][1]["pos_x"] = 200
    result = run_scenario(sc, seed=5)
    assert result.metrics.discovery_latency_ms.get("alice|bob") is not None


def test_frame_conservation():
    sc = two_device_scenario()
    sc["loss"] = 0.3
    result = run_scenario(sc, seed=11)
    frames = result.metrics.frames
    # broadcast probes fan out to every other device
    assert frames["probe"].attempts() == frames["probe"].transmitted * 1
    for cls in ("beacon", "invite", "group"):
        assert frames[cls].attempts() == frames[cls].transmitted
    assert frames["probe"].dropped_loss > 0


def test_fixed_dwell_same_channel_rendezvous():
    # degenerate uniform dwell; staggered starts give the first overlap window
    sc = {
        "duration_ms": 5_000,
        "devices": [
            {"id": "a", "name": "A", "interests": "x", "pos_x": 0, "pos_y": 0,
             "dwell_min_ms": 100, "dwell_max_ms": 100, "listen_channel": 6},
            {"id": "b", "name": "B", "interests": "x", "pos_x": 10, "pos_y": 0,
             "dwell_min_ms": 100, "dwell_max_ms": 100, "listen_channel": 6},
        ],
        "script": [
            {"at_ms": 0, "device": "a", "action": "start_discovery"},
            {"at_ms": 150, "device": "b", "action": "start_discovery"},
        ],
    }
    result = run_scenario(sc, seed=3)
    latency = result.metrics.discovery_latency_ms.get("a|b")
    assert latency is not None
    assert latency < 700.0  # a few 100 ms phase windows at most


def test_monte_carlo_rendezvous_rate():
    stats = measure_discovery_latency(two_device_scenario(), n_runs=60, base_seed=0)
    assert stats["all_pairs_discovered_runs"] >= 59
    pair = stats["pairs"]["alice|bob"]
    assert pair["p99_ms"] is None or pair["p99_ms"] < 10_000


def test_single_device_empty_distribution():
    sc = {
        "duration_ms": 1_000,
        "devices": [{"id": "solo", "name": "Solo", "interests": "x", "pos_x": 0, "pos_y": 0}],
        "script": [{"at_ms": 0, "device": "solo", "action": "start_discovery"}],
    }
    stats = measure_discovery_latency(sc, n_runs=3)
    assert stats["pairs"] == {}


# ---------------------------------------------------------------- full flows


def paper_flow_scenario():
    sc = two_device_scenario(duration_ms=12_000)
    sc["script"] += [
        {"at_ms": 4_000, "device": "alice", "action": "invite", "to": "bob"},
        {"at_ms": 5_000, "device": "bob", "action": "respond", "from": "alice", "accept": True},
        {"at_ms": 6_000, "device": "alice", "action": "send_chat", "text": "hello bob"},
        {"at_ms": 7_000, "device": "bob", "action": "send_ink",
         "strokes": [[[0.0, 0.0], [0.5, 0.25], [1.0, 1.0]]]},
        {"at_ms": 8_000, "device": "alice", "action": "disconnect"},
    ]
    return sc


def test_invite_accept_chat_ink_disconnect_flow():
    result = run_scenario(paper_flow_scenario(), seed=21)
    by_event: dict[str, list] = {}
    for row in result.trace:
        by_event.setdefault(row["event"], []).append(row)
    assert {r["device"] for r in by_event["group_formed"]} == {"alice", "bob"}
    owner_rows = [r for r in by_event["group_formed"] if r["details"]["role"] == "owner"]
    assert owner_rows[0]["device"] == "alice"  # go_intent 10 beats 3
    chats = [r for r in by_event["message"] if r["details"]["kind"] == "chat"]
    assert len(chats) == 1 and chats[0]["device"] == "bob"
    inks = [r for r in by_event["message"] if r["details"]["kind"] == "ink"]
    assert len(inks) == 1 and inks[0]["device"] == "alice"
    got = inks[0]["details"]["strokes"][0]
    for (x0, y0), (x1, y1) in zip([[0.0, 0.0], [0.5, 0.25], [1.0, 1.0]], got):
        assert abs(x0 - x1) <= 1 / 65535 and abs(y0 - y1) <= 1 / 65535
    assert {r["device"] for r in by_event["group_dissolved"]} == {"alice", "bob"}
    m = result.metrics
    assert m.invitations == {"sent": 1, "accepted": 1, "declined": 0, "expired": 0}
    assert m.messages["sent"] == 2 and m.messages["delivered"] == 2
    # both ends available again afterwards
    for sd in ("alice", "bob"):
        last_status = [r for r in result.trace if r["device"] == sd and r["event"] == "peer_updated"][-1]
        assert last_status["details"]["status"] == "available"


def test_decline_flow():
    sc = two_device_scenario(duration_ms=8_000)
    sc["script"] += [
        {"at_ms": 4_000, "device": "alice", "action": "invite", "to": "bob"},
        {"at_ms": 5_000, "device": "bob", "action": "respond", "from": "alice", "accept": False},
    ]
    result = run_scenario(sc, seed=8)
    assert result.metrics.invitations["declined"] == 1
    assert not any(r["event"] == "group_formed" for r in result.trace)


def test_invitation_expires_in_vm_time():
    sc = two_device_scenario(duration_ms=35_000)
    sc["script"] += [{"at_ms": 3_000, "device": "alice", "action": "invite", "to": "bob"}]
    result = run_scenario(sc, seed=8)
    assert result.metrics.invitations["expired"] == 1
    expiries = [r for r in result.trace if r["event"] == "invitation_resolved"]
    assert {r["device"] for r in expiries} == {"alice", "bob"}
    assert all(r["details"]["outcome"] == "expired" for r in expiries)
    # both fire within one tick after the 30 s boundary
    for r in expiries:
        assert 33_000.0 < r["t_ms"] <= 33_000.0 + 31.0


def test_respond_without_invitation_is_action_error():
    sc = two_device_scenario(duration_ms=6_000)
    sc["script"] += [{"at_ms": 4_000, "device": "bob", "action": "respond", "from": "alice", "accept": True}]
    result = run_scenario(sc, seed=8)
    errs = [r for r in result.trace if r["event"] == "action_error"]
    assert len(errs) == 1 and errs[0]["device"] == "bob"


def test_chat_before_group_is_action_error():
    sc = two_device_scenario(duration_ms=6_000)
    sc["script"] += [{"at_ms": 4_000, "device": "alice", "action": "send_chat", "text": "early"}]
    result = run_scenario(sc, seed=8)
    errs = [r for r in result.trace if r["event"] == "action_error"]
    assert len(errs) == 1 and errs[0]["details"]["code"] == "NotConnected"


# ---------------------------------------------------------------- chaos


def three_device_chat_scenario(n_messages=30, chaos=None):
    sc = {
        "duration_ms": 40_000,
        "devices": [
            {"id": "o", "name": "Oona", "interests": "music", "pos_x": 0, "pos_y": 0, "go_intent": 15},
            {"id": "a", "name": "Ann", "interests": "music", "pos_x": 30, "pos_y": 0, "go_intent": 4},
            {"id": "b", "name": "Ben", "interests": "music", "pos_x": 0, "pos_y": 30, "go_intent": 2},
        ],
        "script": [
            {"at_ms": 0, "device": "o", "action": "start_discovery"},
            {"at_ms": 0, "device": "a", "action": "start_discovery"},
            {"at_ms": 0, "device": "b", "action": "start_discovery"},
            {"at_ms": 4_000, "device": "a", "action": "invite", "to": "o"},
            {"at_ms": 4_500, "device": "o", "action": "respond", "from": "a", "accept": True},
            {"at_ms": 8_000, "device": "b", "action": "invite", "to": "o"},
            {"at_ms": 8_500, "device": "o", "action": "respond", "from": "b", "accept": True},
        ],
    }
    if chaos:
        sc["chaos"] = chaos
    senders = ["o", "a", "b"]
    t = 10_000
    for i in range(n_messages):
        dev = senders[i % 3]
        if i % 5 == 4:
            sc["script"].append({"at_ms": t, "device": dev, "action": "send_ink"})
        else:
            sc["script"].append({"at_ms": t, "device": dev, "action": "send_chat", "text": f"m{i}"})
        t += 97
    return sc


def _message_rows(trace):
    return [r for r in trace if r["event"] == "message"]


def test_chaos_duplicates_are_dropped_exactly_once_in_order():
    sc = three_device_chat_scenario(n_messages=30, chaos={"duplicate_p": 0.3, "reorder_p": 0.3})
    result = run_scenario(sc, seed=77)
    assert result.metrics.injected_duplicates > 0
    msgs = _message_rows(result.trace)
    # exactly-once: no (receiver, sender, seq) appears twice
    keys = [(r["device"], r["details"]["peer"], r["details"]["seq"]) for r in msgs]
    assert len(keys) == len(set(keys))
    # per-sender order strictly increasing at every receiver
    per_stream: dict[tuple, list] = {}
    for r in msgs:
        per_stream.setdefault((r["device"], r["details"]["peer"]), []).append(r["details"]["seq"])
    for seqs in per_stream.values():
        assert seqs == sorted(seqs)
        assert len(seqs) == len(set(seqs))
    # relay conservation: every user message reaches the other two members
    assert len(msgs) == 30 * 2
    assert result.metrics.messages["delivered"] == 60
    assert not any(r["event"] == "gap_detected" for r in result.trace)


def test_chaos_and_clean_runs_deliver_identically():
    clean = run_scenario(three_device_chat_scenario(30), seed=13)
    noisy = run_scenario(three_device_chat_scenario(30, chaos={"duplicate_p": 0.25, "reorder_p": 0.25}), seed=13)
    def delivered(result):
        return sorted(
            (r["device"], r["details"]["peer"], r["details"]["seq"])
            for r in _message_rows(result.trace)
        )
    assert delivered(clean) == delivered(noisy)
