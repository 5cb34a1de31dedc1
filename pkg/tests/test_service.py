import json
import socket
import threading

import pytest

from phasemotion.errors import InvalidArgumentError
from phasemotion.runtime import PlaybackSession
from phasemotion.service import (PlaybackService, _Client, apply_command,
                                 run_script)


@pytest.fixture
def make_session(tiny_model, tiny_corpus):
    params, cfg, norm = tiny_model
    clips, _ = tiny_corpus

    def factory():
        return PlaybackSession(params, cfg, norm, clips)

    return factory


@pytest.fixture
def names(tiny_corpus):
    clips, _ = tiny_corpus
    return sorted(c.name for c in clips)


# ---------------------------------------------------------------------------
# command interpreter


def test_play_ack_and_id_echo(make_session, names):
    s = make_session()
    resp = apply_command(s, {"type": "play", "motion": names[0], "id": 17})
    assert resp == {"type": "ack", "command": "play", "ok": True, "id": 17}
    assert s.state is not None
    resp = apply_command(s, {"type": "stop"})
    assert resp == {"type": "ack", "command": "stop", "ok": True}
    assert s.state is None


def test_command_validation_leaves_session_alone(make_session, names):
    s = make_session()
    apply_command(s, {"type": "play", "motion": names[0]})
    before_scale = s.state.freq_scale
    for bad in (
        {"type": "play"},                       # missing motion
        {"type": "play", "motion": 3},          # non-string motion
        {"type": "transition"},                 # missing target
        {"type": "freq_scale"},                 # missing value
        {"type": "mode"},                       # missing value
        {"type": "warp"},                       # unknown type
        {"no_type": True},
        "not even a dict",
        {"type": 42},
    ):
        with pytest.raises(InvalidArgumentError):
            apply_command(s, bad)
    assert s.state is not None
    assert s.state.freq_scale == before_scale
    assert s.state.clip_name == names[0]


def test_queries(make_session, names, tiny_model):
    s = make_session()
    cfg = tiny_model[1]
    resp = apply_command(s, {"type": "list_motions", "id": 1})
    assert resp == {"type": "motions", "motions": names, "id": 1}
    resp = apply_command(s, {"type": "get_config"})
    assert resp["d"] == cfg.d and resp["window"] == cfg.window
    assert resp["dt"] == cfg.dt and resp["horizon"] == cfg.horizon
    resp = apply_command(s, {"type": "get_state"})
    assert resp == {"type": "state", "playing": False}
    apply_command(s, {"type": "play", "motion": names[0]})
    s.tick()
    resp = apply_command(s, {"type": "get_state"})
    assert resp["playing"] is True
    assert resp["motion"] == names[0]
    assert resp["mode"] == "replay-encoded"
    assert resp["cursor"] == cfg.window  # one tick advanced the cursor
    assert resp["transition_active"] is False


def test_freq_scale_and_mode_commands(make_session, names):
    s = make_session()
    apply_command(s, {"type": "play", "motion": names[0]})
    apply_command(s, {"type": "freq_scale", "value": 2.0})
    assert s.state.freq_scale == 2.0
    apply_command(s, {"type": "mode", "value": "propagate-latent"})
    assert s.state.mode == "propagate-latent"
    apply_command(s, {"type": "transition", "target": names[1],
                      "duration_s": 0.2})
    assert s.state.transition is not None
    assert s.state.transition.duration_s == 0.2


# ---------------------------------------------------------------------------
# offline script runner


def _frames(out):
    return [m for m in out if isinstance(m, dict) and m.get("type") == "frame"]


def test_run_script_plain_playback(make_session, names):
    s = make_session()
    out = run_script(s, 5, [{"type": "play", "motion": names[0]}])
    assert out[0] == {"type": "ack", "command": "play", "ok": True}
    assert len(out) == 6
    assert len(_frames(out)) == 5
    assert [f["t"] for f in _frames(out)] == [0.01, 0.02, 0.03, 0.04, 0.05]


def test_run_script_no_playback_stops_early(make_session):
    s = make_session()
    assert run_script(s, 10, []) == []
    out = run_script(s, 10, [{"type": "get_state"}])
    assert out == [{"type": "state", "playing": False}]


def test_run_script_at_tick_pacing(make_session, names):
    s = make_session()
    out = run_script(s, 10, [
        {"type": "play", "motion": names[0]},
        {"type": "freq_scale", "value": 2.0, "at_tick": 6, "id": 1},
        {"type": "freq_scale", "value": 3.0, "at_tick": 2, "id": 2},
    ])
    # strict FIFO: the at_tick 2 command waits behind the at_tick 6 head
    kinds = [(m.get("type"), m.get("id")) for m in out]
    assert kinds[0] == ("ack", None)
    assert kinds[1:7] == [("frame", None)] * 6
    assert kinds[7] == ("ack", 1)
    assert kinds[8] == ("ack", 2)
    assert kinds[9:] == [("frame", None)] * 4
    assert s.state.freq_scale == 3.0


def test_run_script_stop_freezes_tick_counter(make_session, names):
    s = make_session()
    out = run_script(s, 6, [
        {"type": "play", "motion": names[0]},
        {"type": "stop", "at_tick": 3},
        # while stopped every wait is vacuous, so this runs immediately
        {"type": "play", "motion": names[1], "at_tick": 500},
    ])
    types = [m["type"] for m in out]
    assert types == ["ack", "frame", "frame", "frame", "ack", "ack",
                     "frame", "frame", "frame"]
    assert len(_frames(out)) == 6


def test_run_script_errors_leave_playback_intact(make_session, names):
    s = make_session()
    out = run_script(s, 4, [
        {"type": "play", "motion": names[0]},
        {"type": "bogus", "at_tick": 2, "id": 9},
        {"type": "play", "motion": "no-such-motion", "at_tick": 2, "id": 10},
    ])
    errors = [m for m in out if m.get("type") == "error"]
    assert [e["id"] for e in errors] == [9, 10]
    assert "bogus" in errors[0]["message"]
    assert len(_frames(out)) == 4
    assert s.state.clip_name == names[0]


def test_run_script_deterministic(make_session, names):
    script = [
        {"type": "play", "motion": names[0], "mode": "propagate-latent"},
        {"type": "freq_scale", "value": 1.5, "at_tick": 5},
        {"type": "transition", "target": names[1], "duration_s": 0.1,
         "at_tick": 10},
    ]
    a = run_script(make_session(), 40, script)
    b = run_script(make_session(), 40, script)
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_run_script_transition_emits_blend_fields(make_session, names):
    s = make_session()
    out = run_script(s, 30, [
        {"type": "play", "motion": names[0]},
        {"type": "transition", "target": names[1], "duration_s": 0.1,
         "at_tick": 10},
    ])
    remaining = [f["blend_remaining_s"] for f in _frames(out)
                 if "blend_remaining_s" in f]
    assert len(remaining) == 10  # 0.1 s at dt 0.01
    assert remaining[-1] == 0.0


# ---------------------------------------------------------------------------
# client queue bounds


class _FakeConn:
    def shutdown(self, how):
        pass

    def close(self):
        pass


def test_client_queue_drops_oldest(monkeypatch):
    monkeypatch.setattr("phasemotion.service._QUEUE_LIMIT", 4)
    client = _Client(_FakeConn(), None)
    for k in range(10):
        client.enqueue({"k": k})
    assert client.dropped_total == 6
    assert [m["k"] for m in client.queue] == [6, 7, 8, 9]


def test_drop_report_precedes_next_message(monkeypatch, make_session):
    monkeypatch.setattr("phasemotion.service._QUEUE_LIMIT", 3)
    a, b = socket.socketpair()
    client = _Client(a, None)
    for k in range(5):
        client.enqueue({"k": k})
    svc = object.__new__(PlaybackService)  # only _write_loop is exercised
    svc._stop = threading.Event()
    t = threading.Thread(target=svc._write_loop, args=(client,), daemon=True)
    t.start()
    reader = b.makefile("r")
    first = json.loads(reader.readline())
    assert first == {"type": "drop_report", "dropped_total": 2}
    assert [json.loads(reader.readline())["k"] for _ in range(3)] == [2, 3, 4]
    client.close()
    t.join(timeout=2.0)
    assert not t.is_alive()
    b.close()


# ---------------------------------------------------------------------------
# live TCP service


@pytest.fixture
def service(tiny_model, tiny_corpus):
    params, cfg, norm = tiny_model
    clips, _ = tiny_corpus
    svc = PlaybackService(params, cfg, norm, clips, port=0)
    svc.start()
    yield svc
    svc.stop()


def _connect(svc):
    conn = socket.create_connection((svc.host, svc.port), timeout=5.0)
    conn.settimeout(5.0)
    return conn, conn.makefile("rw")


def _recv_until(reader, pred, limit=500):
    for _ in range(limit):
        msg = json.loads(reader.readline())
        if pred(msg):
            return msg
    raise AssertionError("expected message never arrived")


def test_service_round_trip(service, names):
    conn, f = _connect(service)
    try:
        f.write(json.dumps({"type": "list_motions", "id": 1}) + "\n")
        f.flush()
        resp = _recv_until(f, lambda m: m.get("id") == 1)
        assert resp["motions"] == names
        f.write(json.dumps({"type": "play", "motion": names[0], "id": 2}) + "\n")
        f.flush()
        ack = _recv_until(f, lambda m: m.get("id") == 2)
        assert ack["ok"] is True
        frames = [_recv_until(f, lambda m: m["type"] == "frame")
                  for _ in range(3)]
        ts = [fr["t"] for fr in frames]
        assert ts == sorted(ts)
        assert len(frames[0]["q"]) == service.session.cfg.d
        f.write(json.dumps({"type": "get_state", "id": 3}) + "\n")
        f.flush()
        st = _recv_until(f, lambda m: m.get("id") == 3)
        assert st["playing"] is True and st["motion"] == names[0]
    finally:
        conn.close()


def test_service_reports_malformed_json(service):
    conn, f = _connect(service)
    try:
        f.write("this is not json\n")
        f.flush()
        err = _recv_until(f, lambda m: m["type"] == "error")
        assert "message" in err
    finally:
        conn.close()


def test_serve_matches_offline_script(service, make_session, names):
    script = [{"type": "play", "motion": names[0]}]
    want = run_script(make_session(), 12, script)
    conn, f = _connect(service)
    try:
        f.write(json.dumps(script[0]) + "\n")
        f.flush()
        got = [json.loads(f.readline()) for _ in range(13)]
    finally:
        conn.close()
    assert got[0] == want[0]
    # same commands, same logical clock: frame-for-frame identical content
    assert got[1:] == want[1:]
