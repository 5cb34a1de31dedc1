"""Playback-time machinery.

Latent propagation freezes the sinusoid parameters and advances phases by
f*dt per tick; fresh re-encoding replaces the whole latent state from the
most recent real window each tick. Transitions interpolate two endpoint
latent states over a fixed duration (default 0.5 s) with shortest-arc
phase handling. A torque-limited PD joint model stands in for an actuated
robot so tracking error is a meaningful, nonzero quantity.

All functions here are pure or operate on an explicitly owned session
object; the TCP service drives a PlaybackSession from a single ticker
thread and the offline `play` command drives the same object on a logical
clock, which is what makes the two produce identical sequences.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError
from .motiondata import (MotionClip, NormStats, TrajectorySegment,
                         apply_normalization, invert_normalization)
from .network import (LatentState, ModelConfig, ModelParams, decode, encode,
                      wrap_phase)

REPLAY_ENCODED = "replay-encoded"
PROPAGATE_LATENT = "propagate-latent"
_MODES = (REPLAY_ENCODED, PROPAGATE_LATENT)


# ---------------------------------------------------------------------------
# Latent-state operations


def propagate(latent: LatentState, dt: float, freq_scale: float = 1.0) -> LatentState:
    """Advance phases by freq_scale*f*dt (wrapped); frequency, amplitude and
    offset are carried over untouched."""
    if dt <= 0.0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    out = latent.copy()
    step = freq_scale * latent.freq * dt
    # a zero increment must be a bitwise no-op (frozen oscillator), and the
    # mod in wrap_phase can perturb even in-range values by one ulp
    out.phi = np.where(step == 0.0, latent.phi,
                       wrap_phase(latent.phi + step))
    return out


@dataclass
class TransitionPlan:
    """Endpoint latent states of a timed blend. The session re-anchors both
    endpoints every tick (the old motion keeps oscillating, the new one
    keeps playing) so finishing the blend hands over seamlessly."""

    latent_a: LatentState
    latent_b: LatentState
    duration_s: float = 0.5
    elapsed_s: float = 0.0

    def __post_init__(self):
        if self.duration_s <= 0.0:
            raise InvalidArgumentError(
                f"transition duration must be positive, got {self.duration_s}")
        if not (0.0 <= self.elapsed_s <= self.duration_s):
            raise InvalidArgumentError(
                f"elapsed {self.elapsed_s} outside [0, {self.duration_s}]")


def blend(plan: TransitionPlan, elapsed_s: float, *,
          circular: bool = True) -> LatentState:
    """Interpolate the plan's endpoints at the given elapsed time.

    The blend weight on endpoint A ramps 1 -> 0 over the duration, so
    elapsed=0 returns exactly A and elapsed=duration exactly B. Phases
    follow the shortest arc between the wrapped endpoints; `circular=False`
    interpolates the raw wrapped values instead (kept for comparison, it
    sweeps a spurious full cycle across the seam)."""
    if not (0.0 <= elapsed_s <= plan.duration_s):
        warnings.warn(
            f"blend elapsed {elapsed_s} outside [0, {plan.duration_s}], clamping",
            RuntimeWarning, stacklevel=2)
        elapsed_s = min(max(elapsed_s, 0.0), plan.duration_s)
    # Boundary values reproduce the endpoints bit-exactly; the interpolation
    # formulas only reach them to rounding error.
    if elapsed_s == 0.0:
        return plan.latent_a.copy()
    if elapsed_s == plan.duration_s:
        return plan.latent_b.copy()
    wa = 1.0 - elapsed_s / plan.duration_s
    wb = 1.0 - wa
    a, b = plan.latent_a, plan.latent_b
    if circular:
        phi = wrap_phase(a.phi + wb * wrap_phase(b.phi - a.phi))
    else:
        phi = wrap_phase(wa * a.phi + wb * b.phi)
    return LatentState(
        phi=phi,
        freq=wa * a.freq + wb * b.freq,
        amp=wa * a.amp + wb * b.amp,
        offset=wa * a.offset + wb * b.offset)


def decode_frame(latent: LatentState, params: ModelParams, cfg: ModelConfig,
                 norm: NormStats) -> np.ndarray:
    """Decode the window the latent state describes and return its final
    (current-instant) column, denormalized."""
    seg = decode(latent, params, cfg)
    return invert_normalization(norm, seg.values[:, -1:])[:, 0]


def fresh_reencode(recent: TrajectorySegment, params: ModelParams,
                   cfg: ModelConfig, norm: NormStats) -> LatentState:
    """Encode the most recent real window, discarding any propagated state.
    `recent` is raw (denormalized) history of exactly `window` frames."""
    vals = np.asarray(recent.values, dtype=np.float64)
    if vals.ndim != 2 or vals.shape[0] != cfg.d or vals.shape[1] != cfg.window:
        raise InvalidArgumentError(
            f"fresh_reencode needs a ({cfg.d}, {cfg.window}) history window, "
            f"got {vals.shape}")
    seg = TrajectorySegment(values=apply_normalization(norm, vals),
                            dt=recent.dt, end_time_index=recent.end_time_index)
    state, _ = encode(seg, params, cfg)
    return state


# ---------------------------------------------------------------------------
# PD tracking surrogate


@dataclass
class TrackerState:
    q: np.ndarray
    qdot: np.ndarray
    kp: float = 100.0
    kd: float = 20.0
    inertia: float = 1.0
    tau_limit: float = 50.0
    last_target: Optional[np.ndarray] = None
    last_tau: Optional[np.ndarray] = None

    @staticmethod
    def at_rest(n_joints: int, **gains) -> "TrackerState":
        return TrackerState(q=np.zeros(n_joints), qdot=np.zeros(n_joints), **gains)


def pd_track_step(tracker: TrackerState, target: np.ndarray,
                  sim_dt: float = 0.0025, substeps: int = 4) -> TrackerState:
    """One control period: `substeps` semi-implicit Euler steps of
    tau = clamp(kp*(target - q) - kd*qdot), qddot = tau/inertia.
    Defaults give a 400 Hz plant under a 100 Hz control loop."""
    target = np.asarray(target, dtype=np.float64)
    if not np.isfinite(target).all():
        raise InvalidArgumentError("non-finite tracking target")
    if sim_dt <= 0.0 or substeps < 1:
        raise InvalidArgumentError("sim_dt must be positive and substeps >= 1")
    q = tracker.q.astype(np.float64).copy()
    qd = tracker.qdot.astype(np.float64).copy()
    tau = np.zeros_like(q)
    for _ in range(substeps):
        tau = np.clip(tracker.kp * (target - q) - tracker.kd * qd,
                      -tracker.tau_limit, tracker.tau_limit)
        qd = qd + (tau / tracker.inertia) * sim_dt
        q = q + qd * sim_dt
    return TrackerState(q=q, qdot=qd, kp=tracker.kp, kd=tracker.kd,
                        inertia=tracker.inertia, tau_limit=tracker.tau_limit,
                        last_target=target.copy(), last_tau=tau)


def track_clip(reference: MotionClip, targets: np.ndarray,
               tracker: TrackerState | None = None,
               sim_dt: float = 0.0025, substeps: int = 4,
               **gains) -> tuple[MotionClip, np.ndarray]:
    """Feed a (d, T) target sequence through the PD plant starting from the
    reference's first frame; returns the executed clip and per-frame applied
    torques (d, T)."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != reference.states.shape:
        raise InvalidArgumentError(
            f"target shape {targets.shape} != reference {reference.states.shape}")
    if tracker is None:
        tracker = TrackerState(q=reference.states[:, 0].copy(),
                               qdot=np.zeros(reference.d), **gains)
    executed = np.empty_like(targets)
    torques = np.empty_like(targets)
    for t in range(targets.shape[1]):
        tracker = pd_track_step(tracker, targets[:, t], sim_dt, substeps)
        executed[:, t] = tracker.q
        torques[:, t] = tracker.last_tau
    out = MotionClip(states=executed, dt=reference.dt,
                     name=f"{reference.name}.tracked",
                     base_motion_id=reference.base_motion_id,
                     freq_factor=reference.freq_factor)
    return out, torques


def mae(reference: MotionClip, measured: MotionClip) -> float:
    """Mean absolute per-joint, per-frame error in radians."""
    if reference.states.shape != measured.states.shape:
        raise InvalidArgumentError(
            f"shape mismatch: {reference.states.shape} vs {measured.states.shape}")
    if reference.dt != measured.dt:
        raise InvalidArgumentError(
            f"dt mismatch: {reference.dt} vs {measured.dt}")
    return float(np.mean(np.abs(reference.states - measured.states)))


# ---------------------------------------------------------------------------
# Reward metrics


@dataclass
class MetricFrame:
    """One instant's measurements. Any field left None makes the metrics
    that need it unavailable (reported as such, never as zero)."""

    q_ref: Optional[np.ndarray] = None
    q: Optional[np.ndarray] = None
    qd_ref: Optional[np.ndarray] = None
    qd: Optional[np.ndarray] = None
    tau: Optional[np.ndarray] = None
    qdd: Optional[np.ndarray] = None
    target_prev: Optional[np.ndarray] = None
    target_cur: Optional[np.ndarray] = None
    collisions: Optional[int] = None
    head_ref: Optional[np.ndarray] = None
    head: Optional[np.ndarray] = None
    base_rate_ref: Optional[float] = None
    base_rate: Optional[float] = None
    foot_vel: Optional[np.ndarray] = None
    foot_air_s: Optional[np.ndarray] = None


@dataclass
class RewardReport:
    raw: dict
    scaled: dict
    unavailable: list


# Per-phase scale columns; None marks a metric absent from that phase.
REWARD_SCALES = {
    "dance": {
        "joint_position_imitation": 1.0,
        "base_angular_velocity_tracking": 0.0,
        "end_effector_orientation_tracking": 0.0,
        "joint_torque": -0.001,
        "joint_acceleration": -2e-7,
        "joint_target_difference": -0.01,
        "self_collisions": -10.0,
        "foot_slippage": 0.0,
        "foot_air_time": 0.0,
    },
    "locomotion": {
        "joint_position_imitation": 1.0,
        "base_angular_velocity_tracking": 1.0,
        "end_effector_orientation_tracking": None,
        "joint_torque": -0.001,
        "joint_acceleration": -2e-7,
        "joint_target_difference": -0.01,
        "self_collisions": -10.0,
        "foot_slippage": -0.15,
        "foot_air_time": 2.0,
    },
    "gaze": {
        "joint_position_imitation": 1.0,
        "base_angular_velocity_tracking": None,
        "end_effector_orientation_tracking": 0.7,
        "joint_torque": -0.001,
        "joint_acceleration": -2e-7,
        "joint_target_difference": -0.01,
        "self_collisions": -10.0,
        "foot_slippage": None,
        "foot_air_time": None,
    },
}

_AIR_TIME_TARGET_S = 0.2


def _sqnorm(x) -> float:
    v = np.asarray(x, dtype=np.float64).ravel()
    return float(np.dot(v, v))


def rewards(frame: MetricFrame, phase: str = "dance") -> RewardReport:
    """Evaluate every metric the frame has data for.

    `raw` holds the signed convention (exponential metrics in (0, 1],
    penalties <= 0, air time signed); `scaled` multiplies each metric's
    positive base value by the phase's scale column, omitting metrics the
    phase does not use."""
    if phase not in REWARD_SCALES:
        raise InvalidArgumentError(
            f"unknown phase '{phase}', expected one of {sorted(REWARD_SCALES)}")
    scales = REWARD_SCALES[phase]

    # name -> (available, base >= 0 except air time, raw signed value)
    def exp_metric(a, b, coef):
        v = float(np.exp(-coef * _sqnorm(np.asarray(a) - np.asarray(b))))
        return v, v

    rows = {}
    if frame.q_ref is not None and frame.q is not None:
        rows["joint_position_imitation"] = exp_metric(frame.q_ref, frame.q, 1.0)
    if frame.base_rate_ref is not None and frame.base_rate is not None:
        rows["base_angular_velocity_tracking"] = exp_metric(
            frame.base_rate_ref, frame.base_rate, 1.0 / 0.06)
    if frame.head_ref is not None and frame.head is not None:
        rows["end_effector_orientation_tracking"] = exp_metric(
            frame.head_ref, frame.head, 4.0)
    if frame.tau is not None:
        base = _sqnorm(frame.tau)
        rows["joint_torque"] = (base, -base)
    if frame.qdd is not None:
        base = _sqnorm(frame.qdd)
        rows["joint_acceleration"] = (base, -base)
    if frame.target_prev is not None and frame.target_cur is not None:
        base = _sqnorm(np.asarray(frame.target_prev) - np.asarray(frame.target_cur))
        rows["joint_target_difference"] = (base, -base)
    if frame.collisions is not None:
        base = float(frame.collisions)
        rows["self_collisions"] = (base, -base)
    if frame.foot_vel is not None:
        base = _sqnorm(frame.foot_vel)
        rows["foot_slippage"] = (base, -base)
    if frame.foot_air_s is not None:
        v = float(np.sum(np.asarray(frame.foot_air_s) - _AIR_TIME_TARGET_S))
        rows["foot_air_time"] = (v, v)

    raw = {}
    scaled = {}
    unavailable = []
    for name, scale in scales.items():
        if name not in rows:
            unavailable.append(name)
            continue
        base, signed = rows[name]
        raw[name] = signed
        if scale is not None:
            scaled[name] = base * scale
    return RewardReport(raw=raw, scaled=scaled, unavailable=unavailable)


# ---------------------------------------------------------------------------
# Playback session (logical clock; the service adds wall-clock pacing)


@dataclass
class PlaybackState:
    latent: LatentState
    mode: str = REPLAY_ENCODED
    clip_name: Optional[str] = None  # None means free-running (propagate only)
    cursor: float = 0.0              # current-instant frame index into the clip
    freq_scale: float = 1.0
    transition: Optional[TransitionPlan] = None

    def __post_init__(self):
        if self.mode not in _MODES:
            raise InvalidArgumentError(
                f"mode must be one of {_MODES}, got '{self.mode}'")
        if not (np.isfinite(self.freq_scale) and self.freq_scale >= 0.0):
            raise InvalidArgumentError(
                f"freq_scale must be finite and >= 0, got {self.freq_scale}")


class PlaybackSession:
    """Single-owner tick engine over a trained checkpoint and a clip library.

    Every tick advances the session by exactly cfg.dt of logical time and
    returns one frame record; commands are plain method calls, applied
    between ticks by whoever owns the session."""

    def __init__(self, params: ModelParams, cfg: ModelConfig, norm: NormStats,
                 clips: Sequence[MotionClip]):
        self.params = params
        self.cfg = cfg
        self.norm = norm
        self.clips = {}
        for c in clips:
            if c.d != cfg.d:
                raise InvalidArgumentError(
                    f"clip '{c.name}' has d={c.d}, checkpoint expects {cfg.d}")
            if c.n_frames < cfg.window:
                raise InvalidArgumentError(
                    f"clip '{c.name}' is shorter than the {cfg.window}-frame window")
            if c.dt != cfg.dt:
                raise InvalidArgumentError(
                    f"clip '{c.name}' has dt={c.dt}, checkpoint expects {cfg.dt}")
            self.clips[c.name] = c
        self.state: Optional[PlaybackState] = None
        self.ticks = 0
        self._blend_ticks = 0

    # -- commands ----------------------------------------------------------

    def play(self, clip_name: str, mode: str = REPLAY_ENCODED,
             cursor: Optional[float] = None) -> None:
        clip = self._clip(clip_name)
        if cursor is None:
            cursor = float(self.cfg.window - 1)
        latent = self._encode_at(clip, cursor)
        keep_scale = self.state.freq_scale if self.state is not None else 1.0
        self.state = PlaybackState(latent=latent, mode=mode,
                                   clip_name=clip_name, cursor=cursor,
                                   freq_scale=keep_scale)

    def stop(self) -> None:
        self.state = None

    def set_freq_scale(self, value: float) -> None:
        if not (np.isfinite(value) and value >= 0.0):
            raise InvalidArgumentError(
                f"freq_scale must be finite and >= 0, got {value}")
        if self.state is None:
            raise InvalidArgumentError("no active playback")
        self.state.freq_scale = float(value)

    def set_mode(self, mode: str) -> None:
        if mode not in _MODES:
            raise InvalidArgumentError(f"mode must be one of {_MODES}")
        if self.state is None:
            raise InvalidArgumentError("no active playback")
        if mode == REPLAY_ENCODED and self.state.clip_name is None:
            raise InvalidArgumentError("cannot replay-encode while free-running")
        self.state.mode = mode

    def transition_to(self, clip_name: str, duration_s: float = 0.5,
                      mode: Optional[str] = None) -> None:
        """Blend from the current output latent into the named motion over
        duration_s. One transition at a time."""
        if self.state is None:
            raise InvalidArgumentError("no active playback to transition from")
        if self.state.transition is not None:
            raise InvalidArgumentError("a transition is already in progress")
        clip = self._clip(clip_name)
        cursor = float(self.cfg.window - 1)
        current = self._output_latent()
        target = self._encode_at(clip, cursor)
        self.state.clip_name = clip_name
        self.state.cursor = cursor
        self.state.latent = target.copy()
        if mode is not None:
            self.set_mode(mode)
        self._blend_ticks = 0
        self.state.transition = TransitionPlan(
            latent_a=current, latent_b=target, duration_s=duration_s,
            elapsed_s=0.0)

    # -- ticking -----------------------------------------------------------

    def tick(self) -> dict:
        """Advance one control period and return the frame record."""
        if self.state is None:
            raise InvalidArgumentError("no active playback")
        st = self.state
        self._advance_live(st)
        plan = st.transition
        blend_remaining = None
        if plan is not None:
            plan.latent_a = propagate(plan.latent_a, self.cfg.dt, st.freq_scale)
            plan.latent_b = st.latent.copy()
            # Tick-count multiplication, not repeated addition: 50 adds of
            # 0.01 land short of 0.5 and would stretch the blend a tick.
            self._blend_ticks += 1
            plan.elapsed_s = min(self._blend_ticks * self.cfg.dt,
                                 plan.duration_s)
            out = blend(plan, plan.elapsed_s)
            blend_remaining = round(plan.duration_s - plan.elapsed_s, 9)
            if plan.elapsed_s >= plan.duration_s:
                st.latent = plan.latent_b
                st.transition = None
        else:
            out = st.latent
        q = decode_frame(out, self.params, self.cfg, self.norm)
        self.ticks += 1
        frame = {
            "type": "frame",
            "t": round(self.ticks * self.cfg.dt, 9),
            "q": [float(v) for v in q],
            "phi": [float(v) for v in out.phi],
            "f": [float(v) for v in out.freq],
            "a": [float(v) for v in out.amp],
            "b": [float(v) for v in out.offset],
        }
        if blend_remaining is not None:
            frame["blend_remaining_s"] = blend_remaining
        return frame

    def rollout(self, n_ticks: int) -> np.ndarray:
        """n_ticks frames of q as a (d, n_ticks) array."""
        cols = [self.tick()["q"] for _ in range(n_ticks)]
        return np.asarray(cols, dtype=np.float64).T

    # -- internals ----------------------------------------------------------

    def _clip(self, name: str) -> MotionClip:
        clip = self.clips.get(name)
        if clip is None:
            raise InvalidArgumentError(f"unknown motion '{name}'")
        return clip

    def _window_at(self, clip: MotionClip, cursor: float) -> np.ndarray:
        """H-frame window ending at the (fractional, circular) cursor."""
        h = self.cfg.window
        ends = cursor - (h - 1) + np.arange(h)
        base = np.floor(ends).astype(np.int64)
        frac = ends - base
        n = clip.n_frames
        lo = clip.states[:, base % n]
        hi = clip.states[:, (base + 1) % n]
        return lo * (1.0 - frac) + hi * frac

    def _encode_at(self, clip: MotionClip, cursor: float) -> LatentState:
        vals = self._window_at(clip, cursor)
        seg = TrajectorySegment(values=vals, dt=clip.dt,
                                end_time_index=int(np.floor(cursor)))
        return fresh_reencode(seg, self.params, self.cfg, self.norm)

    def _advance_live(self, st: PlaybackState) -> None:
        # The reference cursor tracks playback in both modes so that
        # toggling propagate -> replay re-encodes where the motion is now,
        # not where it was when propagation took over.
        if st.clip_name is not None:
            clip = self._clip(st.clip_name)
            st.cursor = (st.cursor + st.freq_scale) % clip.n_frames
        if st.mode == REPLAY_ENCODED:
            st.latent = self._encode_at(self._clip(st.clip_name), st.cursor)
        else:
            st.latent = propagate(st.latent, self.cfg.dt, st.freq_scale)

    def _output_latent(self) -> LatentState:
        st = self.state
        if st.transition is not None:
            return blend(st.transition, st.transition.elapsed_s)
        return st.latent.copy()


def session_to_clip(frames: np.ndarray, dt: float, name: str) -> MotionClip:
    """Wrap a rolled-out (d, T) frame block as an exportable clip."""
    return MotionClip(states=np.asarray(frames, dtype=np.float64), dt=dt,
                      name=name, base_motion_id=name, freq_factor=1.0)


def write_metrics_csv(path: str, reports: Sequence[RewardReport]) -> None:
    """One row per report; columns are the union of raw/scaled metric names
    (raw_* and scaled_* prefixes), blank cells for unavailable metrics."""
    raw_names = sorted({k for r in reports for k in r.raw})
    scaled_names = sorted({k for r in reports for k in r.scaled})
    header = (["raw_" + n for n in raw_names]
              + ["scaled_" + n for n in scaled_names])
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(header) + "\n")
            for r in reports:
                cells = [repr(r.raw[n]) if n in r.raw else "" for n in raw_names]
                cells += [repr(r.scaled[n]) if n in r.scaled else ""
                          for n in scaled_names]
                fh.write(",".join(cells) + "\n")
    except OSError as e:
        raise OSError(f"failed writing metrics to {path}: {e}") from e
