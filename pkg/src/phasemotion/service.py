"""Line-delimited JSON playback service and its offline twin.

One ticker thread owns the PlaybackSession. Network readers only enqueue
command messages; the ticker applies everything queued between ticks, so
any frame a client sees is fully pre- or fully post-command. Frames fan
out through per-client bounded queues: a slow client loses oldest frames
first and is told how many vanished.

`run_script` drives the same session/command interpreter on a logical
clock with no sockets; `serve` paces it against the wall clock. Identical
scripts therefore produce identical frame sequences in both.
"""

from __future__ import annotations

import json
import socket
import threading
from collections import deque
from typing import Sequence

from .errors import InvalidArgumentError, PhaseMotionError
from .motiondata import MotionClip, NormStats
from .network import ModelConfig, ModelParams
from .runtime import PlaybackSession

_QUEUE_LIMIT = 256


# ---------------------------------------------------------------------------
# Command interpretation (shared by serve and offline play)


def apply_command(session: PlaybackSession, msg: dict) -> dict:
    """Apply one command/query message; returns the response message.

    Unknown or ill-formed commands raise InvalidArgumentError; callers turn
    that into an error message without touching the session."""
    if not isinstance(msg, dict) or not isinstance(msg.get("type"), str):
        raise InvalidArgumentError("command must be an object with a 'type'")
    kind = msg["type"]
    if kind == "play":
        motion = _require_str(msg, "motion")
        mode = msg.get("mode", "replay-encoded")
        session.play(motion, mode=mode)
        return _ack(msg, kind)
    if kind == "stop":
        session.stop()
        return _ack(msg, kind)
    if kind == "transition":
        target = _require_str(msg, "target")
        duration = float(msg.get("duration_s", 0.5))
        session.transition_to(target, duration_s=duration)
        return _ack(msg, kind)
    if kind == "freq_scale":
        if "value" not in msg:
            raise InvalidArgumentError("freq_scale needs a 'value'")
        session.set_freq_scale(float(msg["value"]))
        return _ack(msg, kind)
    if kind == "mode":
        session.set_mode(_require_str(msg, "value"))
        return _ack(msg, kind)
    if kind == "list_motions":
        return _reply(msg, {"type": "motions",
                            "motions": sorted(session.clips)})
    if kind == "get_config":
        cfg = session.cfg
        return _reply(msg, {"type": "config",
                            "d": cfg.d, "c": cfg.c, "window": cfg.window,
                            "dt": cfg.dt, "hidden": cfg.hidden,
                            "kernel": cfg.kernel, "horizon": cfg.horizon})
    if kind == "get_state":
        st = session.state
        body = {"type": "state", "playing": st is not None}
        if st is not None:
            body.update({
                "motion": st.clip_name, "mode": st.mode,
                "cursor": st.cursor, "freq_scale": st.freq_scale,
                "transition_active": st.transition is not None,
            })
        return _reply(msg, body)
    raise InvalidArgumentError(f"unknown command type '{kind}'")


def _require_str(msg: dict, key: str) -> str:
    val = msg.get(key)
    if not isinstance(val, str):
        raise InvalidArgumentError(f"'{msg['type']}' needs a string '{key}'")
    return val


def _ack(msg: dict, command: str) -> dict:
    out = {"type": "ack", "command": command, "ok": True}
    if "id" in msg:
        out["id"] = msg["id"]
    return out


def _reply(msg: dict, body: dict) -> dict:
    if "id" in msg:
        body["id"] = msg["id"]
    return body


def _error_msg(msg, exc: Exception) -> dict:
    out = {"type": "error", "message": str(exc)}
    if isinstance(msg, dict) and "id" in msg:
        out["id"] = msg["id"]
    return out


# ---------------------------------------------------------------------------
# Offline script runner (logical clock)


def run_script(session: PlaybackSession, n_ticks: int,
               script: Sequence[dict] = ()) -> list[dict]:
    """Emit up to n_ticks frames, weaving in script commands.

    Commands run strictly in list order. A command waits until the session
    has emitted `at_tick` frames (session.ticks); while playback is stopped
    the frame counter is frozen, so waits are vacuous and the next command
    runs at once. The same rule paces commands in the live service, which is
    what makes offline and online frame sequences identical for one script.
    Returns frames and command responses interleaved in execution order."""
    out: list = []
    i = 0
    emitted = 0
    while emitted < n_ticks:
        while i < len(script) and _command_due(session, script[i]):
            cmd = script[i]
            i += 1
            try:
                out.append(apply_command(session, _strip_at_tick(cmd)))
            except (PhaseMotionError, ValueError, TypeError) as e:
                out.append(_error_msg(cmd, e))
        if session.state is None:
            if i >= len(script):
                break  # nothing left that could restart playback
            continue
        out.append(session.tick())
        emitted += 1
    return out


def _command_due(session: PlaybackSession, msg) -> bool:
    if not isinstance(msg, dict):
        return True
    if session.state is None:
        return True
    return int(msg.get("at_tick", 0)) <= session.ticks


def _strip_at_tick(msg: dict) -> dict:
    return {k: v for k, v in msg.items() if k != "at_tick"}


# ---------------------------------------------------------------------------
# TCP service (wall clock)


class _Client:
    def __init__(self, conn: socket.socket, addr):
        self.conn = conn
        self.addr = addr
        self.queue: deque = deque()
        self.dropped_total = 0
        self.reported_dropped = 0
        self.cv = threading.Condition()
        self.closed = False

    def enqueue(self, msg: dict) -> None:
        with self.cv:
            if self.closed:
                return
            if len(self.queue) >= _QUEUE_LIMIT:
                self.queue.popleft()
                self.dropped_total += 1
            self.queue.append(msg)
            self.cv.notify()

    def close(self) -> None:
        with self.cv:
            self.closed = True
            self.cv.notify()
        try:
            self.conn.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.conn.close()


class PlaybackService:
    """TCP wrapper: newline-delimited JSON in both directions on every
    connection. All session mutation happens on the ticker thread."""

    def __init__(self, params: ModelParams, cfg: ModelConfig, norm: NormStats,
                 clips: Sequence[MotionClip], host: str = "127.0.0.1",
                 port: int = 0):
        self.session = PlaybackSession(params, cfg, norm, clips)
        self._commands: deque = deque()  # (client or None, message)
        self._cmd_lock = threading.Lock()
        self._clients: list[_Client] = []
        self._clients_lock = threading.Lock()
        self._stop = threading.Event()
        self._listener = socket.create_server((host, port))
        self.host, self.port = self._listener.getsockname()[:2]
        self._threads: list[threading.Thread] = []

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> None:
        for fn in (self._accept_loop, self._tick_loop):
            t = threading.Thread(target=fn, daemon=True)
            t.start()
            self._threads.append(t)

    def stop(self) -> None:
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass
        with self._clients_lock:
            clients = list(self._clients)
        for c in clients:
            c.close()
        for t in self._threads:
            t.join(timeout=2.0)

    def serve_forever(self) -> None:
        self.start()
        try:
            while not self._stop.is_set():
                self._stop.wait(0.2)
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()

    # -- threads --------------------------------------------------------------

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, addr = self._listener.accept()
            except OSError:
                return
            client = _Client(conn, addr)
            with self._clients_lock:
                self._clients.append(client)
            for fn in (self._read_loop, self._write_loop):
                threading.Thread(target=fn, args=(client,), daemon=True).start()

    def _read_loop(self, client: _Client) -> None:
        buf = b""
        try:
            while not self._stop.is_set():
                chunk = client.conn.recv(65536)
                if not chunk:
                    break
                buf += chunk
                while b"\n" in buf:
                    line, buf = buf.split(b"\n", 1)
                    if not line.strip():
                        continue
                    try:
                        msg = json.loads(line.decode("utf-8"))
                    except (UnicodeDecodeError, json.JSONDecodeError) as e:
                        client.enqueue(_error_msg(None, e))
                        continue
                    with self._cmd_lock:
                        self._commands.append((client, msg))
        except OSError:
            pass
        finally:
            self._drop_client(client)

    def _write_loop(self, client: _Client) -> None:
        try:
            while True:
                with client.cv:
                    while not client.queue and not client.closed:
                        client.cv.wait(0.5)
                        if self._stop.is_set() and not client.queue:
                            return
                    if client.closed and not client.queue:
                        return
                    msg = client.queue.popleft()
                    drops = client.dropped_total
                payload = json.dumps(msg) + "\n"
                if drops > client.reported_dropped:
                    report = json.dumps({"type": "drop_report",
                                         "dropped_total": drops}) + "\n"
                    client.reported_dropped = drops
                    payload = report + payload
                client.conn.sendall(payload.encode("utf-8"))
        except OSError:
            self._drop_client(client)

    def _tick_loop(self) -> None:
        import time
        dt = self.session.cfg.dt
        next_t = time.monotonic()
        while not self._stop.is_set():
            self._apply_pending()
            if self.session.state is not None:
                frame = self.session.tick()
                self._broadcast(frame)
            next_t += dt
            delay = next_t - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            else:
                # Fell behind (heavy tick or preemption): rebase instead of
                # bursting a backlog of frames.
                next_t = time.monotonic()

    # -- internals -------------------------------------------------------------

    def _apply_pending(self) -> None:
        # Strict FIFO with the same pacing rule as run_script: the head
        # command waits for its at_tick frame count and blocks everything
        # behind it, so serve and offline play order commands identically.
        while True:
            with self._cmd_lock:
                if not self._commands:
                    return
                client, msg = self._commands[0]
                if not _command_due(self.session, msg):
                    return
                self._commands.popleft()
            try:
                resp = apply_command(self.session, _strip_at_tick(msg)
                                     if isinstance(msg, dict) else msg)
            except (PhaseMotionError, ValueError, TypeError) as e:
                resp = _error_msg(msg, e)
            if client is not None:
                client.enqueue(resp)

    def _broadcast(self, frame: dict) -> None:
        with self._clients_lock:
            clients = list(self._clients)
        for c in clients:
            c.enqueue(frame)

    def _drop_client(self, client: _Client) -> None:
        with self._clients_lock:
            if client in self._clients:
                self._clients.remove(client)
        client.close()
