"""Trajectory containers, clip files, normalization, and the synthetic corpus.

The corpus generator stands in for a proprietary dance-motion set. Each clip
mixes a small bank of shared tone slots (clip-specific frequencies, master
amplitudes, master phases) into joints through a coupling that is fixed across
the whole corpus, so joints move in a correlated way like a real articulated
figure. Per-joint Gaussian bumps supply the aperiodic content the downstream
experiments discriminate on. All randomness flows through per-clip
`numpy.random.default_rng` streams keyed by (seed, clip index), so generation
is deterministic no matter how clips are ordered or parallelized.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError

DT_DEFAULT = 0.01

_CLIP_MAGIC = b"PMCL"
_CLIP_VERSION = 1
_FLAG_VELOCITIES = 1


@dataclass
class MotionClip:
    """One motion: d state rows by T frames, plus identifying metadata.

    When `with_velocities` is set the first half of the rows are joint
    positions (rad) and the second half their velocities (rad/s).
    """

    name: str
    states: np.ndarray
    dt: float
    base_motion_id: str
    freq_factor: float = 1.0
    with_velocities: bool = False

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim != 2 or self.states.shape[1] < 1:
            raise InvalidArgumentError(
                f"states must be d x T with T >= 1, got shape {self.states.shape}")
        if self.dt <= 0.0:
            raise InvalidArgumentError(f"dt must be positive, got {self.dt}")
        if not np.isfinite(self.states).all():
            raise InvalidArgumentError(f"clip '{self.name}' contains non-finite values")
        if self.with_velocities and self.states.shape[0] % 2 != 0:
            raise InvalidArgumentError(
                "with_velocities requires an even row count (positions + velocities)")

    @property
    def d(self) -> int:
        return self.states.shape[0]

    @property
    def n_frames(self) -> int:
        return self.states.shape[1]

    @property
    def duration_s(self) -> float:
        return self.states.shape[1] * self.dt


@dataclass
class TrajectorySegment:
    """A length-H window of a clip, columns oldest to newest."""

    values: np.ndarray  # (d, H) read-only view into the source clip
    dt: float
    end_time_index: int


@dataclass
class NormStats:
    """Per-dimension mean and std over a corpus; std floored at 1e-6."""

    mean: np.ndarray
    std: np.ndarray


@dataclass
class ClipEntry:
    file: str
    name: str
    base_motion_id: str
    freq_factor: float


@dataclass
class DatasetManifest:
    dt: float
    d: int
    with_velocities: bool
    clips: list[ClipEntry] = field(default_factory=list)
    # Optional provenance: the generate_corpus keyword set that produced the
    # base clips, enough to re-derive recipes (bump ground truth) exactly.
    generator: Optional[dict] = None


# ---------------------------------------------------------------------------
# Corpus generation

_TONE_SLOTS = 3
_FREQ_LO = 0.5
_FREQ_HI = 3.0


@dataclass
class BumpSpec:
    """One Gaussian bump: where the generator broke periodicity on purpose."""

    joint: int
    amp: float
    center_s: float
    sigma_s: float


@dataclass
class _ClipRecipe:
    """Everything needed to render one clip analytically (used by the
    generator and, internally, by evaluation probes that need ground truth)."""

    slot_freqs: np.ndarray    # (slots,) Hz, bin-aligned to the clip duration
    slot_amps: np.ndarray     # (slots,) master amplitudes
    slot_phases: np.ndarray   # (slots,) cycles
    gains: np.ndarray         # (n_joints, slots) signed, rows L1-normalized
    phase_offsets: np.ndarray  # (n_joints, slots) cycles
    bumps: list[BumpSpec]
    duration_s: float


def _coupling(seed: int, n_joints: int):
    """Corpus-wide joint coupling: which slots drive which joint, with what
    gain and phase offset. Rows are L1-normalized so per-joint amplitude is
    bounded by the slot master amplitudes."""
    rng = np.random.default_rng([seed, 0, 1])
    gains = np.zeros((n_joints, _TONE_SLOTS))
    offsets = rng.uniform(0.0, 1.0, size=(n_joints, _TONE_SLOTS))
    for j in range(n_joints):
        n_sub = int(rng.integers(1, _TONE_SLOTS + 1))
        slots = rng.permutation(_TONE_SLOTS)[:n_sub]
        mag = rng.uniform(0.25, 1.0, size=n_sub)
        sign = rng.choice([-1.0, 1.0], size=n_sub)
        gains[j, slots] = sign * mag / mag.sum()
    return gains, offsets


def _recipe(seed: int, index: int, n_joints: int, duration_s: float,
            bump_clip_fraction: float, bump_joint_fraction: float) -> _ClipRecipe:
    gains, offsets = _coupling(seed, n_joints)
    rng = np.random.default_rng([seed, index, 0])
    # Bin-aligned frequencies keep every tone an integer number of periods
    # per clip: spectra live exactly on DFT bins and circular warps stay
    # seamless.
    m_lo = math.ceil(_FREQ_LO * duration_s)
    m_hi = math.floor(_FREQ_HI * duration_s)
    if m_hi < m_lo + _TONE_SLOTS - 1:
        raise InvalidArgumentError(
            f"duration {duration_s}s leaves fewer than {_TONE_SLOTS} distinct "
            f"frequency bins in [{_FREQ_LO}, {_FREQ_HI}] Hz")
    bins = rng.choice(np.arange(m_lo, m_hi + 1), size=_TONE_SLOTS, replace=False)
    slot_freqs = bins / duration_s
    slot_amps = rng.uniform(0.4, 0.8, size=_TONE_SLOTS)
    slot_phases = rng.uniform(0.0, 1.0, size=_TONE_SLOTS)

    bumps: list[BumpSpec] = []
    if rng.random() < bump_clip_fraction:
        carriers = np.flatnonzero(rng.random(n_joints) < bump_joint_fraction)
        for j in carriers:
            amp = float(rng.uniform(0.3, 0.8) * rng.choice([-1.0, 1.0]))
            center = float(rng.uniform(0.25, 0.75) * duration_s)
            sigma = float(rng.uniform(0.1, 0.3))
            bumps.append(BumpSpec(joint=int(j), amp=amp, center_s=center, sigma_s=sigma))
    return _ClipRecipe(slot_freqs=slot_freqs, slot_amps=slot_amps,
                       slot_phases=slot_phases, gains=gains,
                       phase_offsets=offsets, bumps=bumps, duration_s=duration_s)


def _render(recipe: _ClipRecipe, n_joints: int, dt: float,
            with_velocities: bool) -> np.ndarray:
    n_frames = round(recipe.duration_s / dt)
    t = np.arange(n_frames) * dt
    # (joints, slots, t) phases in cycles
    phase = (recipe.slot_freqs[None, :, None] * t[None, None, :]
             + recipe.slot_phases[None, :, None]
             + recipe.phase_offsets[:, :, None])
    amp = recipe.gains * recipe.slot_amps[None, :]
    pos = np.einsum("js,jst->jt", amp, np.sin(2.0 * np.pi * phase))
    for b in recipe.bumps:
        pos[b.joint] += b.amp * np.exp(-((t - b.center_s) ** 2) / (2.0 * b.sigma_s ** 2))
    if not with_velocities:
        return pos
    vel = np.empty_like(pos)
    vel[:, 1:-1] = (pos[:, 2:] - pos[:, :-2]) / (2.0 * dt)
    vel[:, 0] = (pos[:, 1] - pos[:, 0]) / dt
    vel[:, -1] = (pos[:, -1] - pos[:, -2]) / dt
    return np.vstack([pos, vel])


def generate_corpus(seed: int, n_base: int, n_joints: int, duration_s: float,
                    *, bump_clip_fraction: float = 0.5,
                    bump_joint_fraction: float = 0.6,
                    with_velocities: bool = False,
                    dt: float = DT_DEFAULT) -> list[MotionClip]:
    """Synthesize `n_base` clips of correlated multi-sine joint motion.

    Each joint is a sum of 1-3 sinusoids drawn from the clip's tone slots
    (0.5-3 Hz, bin-aligned, amplitudes bounded by 0.8 rad, random phases).
    Roughly bump_clip_fraction of clips carry Gaussian bumps on about
    bump_joint_fraction of their joints; the defaults put a bump on ~30% of
    all joints corpus-wide while leaving half the clips purely periodic.
    """
    if n_base < 1 or n_joints < 1:
        raise InvalidArgumentError(
            f"n_base and n_joints must be >= 1, got {n_base}, {n_joints}")
    if duration_s <= 0.0 or dt <= 0.0:
        raise InvalidArgumentError("duration_s and dt must be positive")
    clips = []
    for i in range(n_base):
        rec = _recipe(seed, i, n_joints, duration_s,
                      bump_clip_fraction, bump_joint_fraction)
        states = _render(rec, n_joints, dt, with_velocities)
        name = f"dance{i:03d}"
        clips.append(MotionClip(name=name, states=states, dt=dt,
                                base_motion_id=name, freq_factor=1.0,
                                with_velocities=with_velocities))
    return clips


def corpus_bumps(seed: int, n_base: int, n_joints: int, duration_s: float,
                 *, bump_clip_fraction: float = 0.5,
                 bump_joint_fraction: float = 0.6) -> dict[str, list[BumpSpec]]:
    """Bump ground truth for the corpus generate_corpus(same args) returns.

    Maps base clip name to its bumps (empty list for purely periodic clips).
    Recipes are re-derived from the seed, so this stays in sync with the
    rendered clips by construction rather than by stored metadata."""
    out = {}
    for i in range(n_base):
        rec = _recipe(seed, i, n_joints, duration_s,
                      bump_clip_fraction, bump_joint_fraction)
        out[f"dance{i:03d}"] = rec.bumps
    return out


# ---------------------------------------------------------------------------
# Frequency augmentation


def augment_frequencies(clip: MotionClip, factors: Sequence[float]) -> list[MotionClip]:
    """Time-warp a clip by each factor k: y(t) = x(k t), linear interpolation.

    Output duration always equals the input duration: for k > 1 the read
    cursor wraps around the source (generator clips are circularly smooth),
    for k < 1 only the first k fraction of the source is consumed. Velocity
    rows, when present, are scaled by k to stay the time derivative of the
    warped positions.
    """
    out = []
    for k in factors:
        if k <= 0.0:
            raise InvalidArgumentError(f"frequency factor must be > 0, got {k}")
        n = clip.n_frames
        if k == 1.0:
            states = clip.states.copy()
        else:
            cursor = (k * np.arange(n)) % n
            i0 = np.floor(cursor).astype(np.intp)
            frac = cursor - i0
            i1 = (i0 + 1) % n
            states = (clip.states[:, i0] * (1.0 - frac)
                      + clip.states[:, i1] * frac)
            if clip.with_velocities:
                states[clip.d // 2:] *= k
        out.append(MotionClip(
            name=f"{clip.name}@x{k:g}",
            states=states, dt=clip.dt,
            base_motion_id=clip.base_motion_id,
            freq_factor=clip.freq_factor * k,
            with_velocities=clip.with_velocities))
    return out


# ---------------------------------------------------------------------------
# Segmentation and normalization


def segments(clip: MotionClip, window: int) -> Iterator[TrajectorySegment]:
    """All length-`window` segments at stride 1, oldest column first."""
    if window < 1 or window > clip.n_frames:
        raise InvalidArgumentError(
            f"window {window} outside [1, {clip.n_frames}] for clip '{clip.name}'")
    # Values are views into the clip to keep iteration cheap; callers that
    # mutate must copy first.
    for end in range(window - 1, clip.n_frames):
        vals = clip.states[:, end - window + 1: end + 1]
        yield TrajectorySegment(values=vals, dt=clip.dt, end_time_index=end)


def fit_normalization(clips: Sequence[MotionClip]) -> NormStats:
    """Per-dimension mean/std over every frame of every clip (population std,
    floored at 1e-6 so constant rows stay invertible)."""
    if len(clips) == 0:
        raise InvalidArgumentError("fit_normalization needs at least one clip")
    d = clips[0].d
    total = 0
    s1 = np.zeros(d)
    s2 = np.zeros(d)
    for c in clips:
        if c.d != d:
            raise InvalidArgumentError(
                f"clip '{c.name}' has d={c.d}, expected {d}")
        s1 += c.states.sum(axis=1)
        s2 += (c.states ** 2).sum(axis=1)
        total += c.n_frames
    mean = s1 / total
    var = np.maximum(s2 / total - mean ** 2, 0.0)
    std = np.maximum(np.sqrt(var), 1e-6)
    return NormStats(mean=mean, std=std)


def apply_normalization(stats: NormStats, states: np.ndarray) -> np.ndarray:
    return (states - stats.mean[:, None]) / stats.std[:, None]


def invert_normalization(stats: NormStats, states: np.ndarray) -> np.ndarray:
    return states * stats.std[:, None] + stats.mean[:, None]


# ---------------------------------------------------------------------------
# Clip files, CSV export, manifest


def save_clip(clip: MotionClip, path: str) -> None:
    name_b = clip.name.encode("utf-8")
    base_b = clip.base_motion_id.encode("utf-8")
    flags = _FLAG_VELOCITIES if clip.with_velocities else 0
    header = struct.pack(
        "<4sHHIIdd", _CLIP_MAGIC, _CLIP_VERSION, flags,
        clip.d, clip.n_frames, clip.dt, clip.freq_factor)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<H", len(base_b)))
            fh.write(base_b)
            fh.write(np.ascontiguousarray(clip.states, dtype="<f8").tobytes())
    except OSError as e:
        raise OSError(f"failed writing clip to {path}: {e}") from e


def load_clip(path: str) -> MotionClip:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise OSError(f"failed reading clip from {path}: {e}") from e
    head = struct.calcsize("<4sHHIIdd")
    if len(blob) < head:
        raise InvalidArgumentError(f"{path}: not a clip file (truncated header)")
    magic, version, flags, d, n_frames, dt, freq_factor = struct.unpack(
        "<4sHHIIdd", blob[:head])
    if magic != _CLIP_MAGIC:
        raise InvalidArgumentError(f"{path}: not a clip file (bad magic {magic!r})")
    if version != _CLIP_VERSION:
        raise InvalidArgumentError(f"{path}: unsupported clip version {version}")
    try:
        off = head
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (blen,) = struct.unpack_from("<H", blob, off)
        off += 2
        base = blob[off:off + blen].decode("utf-8")
        off += blen
        states = np.frombuffer(blob, dtype="<f8", count=d * n_frames, offset=off)
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        raise InvalidArgumentError(f"{path}: truncated or corrupt clip file: {e}")
    states = states.reshape(d, n_frames).copy()
    return MotionClip(name=name, states=states, dt=dt, base_motion_id=base,
                      freq_factor=freq_factor,
                      with_velocities=bool(flags & _FLAG_VELOCITIES))


def export_clip_csv(clip: MotionClip, path: str) -> None:
    """Debug export: header `t,q0..q{d-1}`, shortest round-trip float text."""
    cols = ",".join(f"q{i}" for i in range(clip.d))
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"t,{cols}\n")
            for k in range(clip.n_frames):
                t = k * clip.dt
                row = ",".join(repr(float(v)) for v in clip.states[:, k])
                fh.write(f"{t!r},{row}\n")
    except OSError as e:
        raise OSError(f"failed writing CSV to {path}: {e}") from e


def save_manifest(manifest: DatasetManifest, path: str) -> None:
    doc = {
        "version": 1,
        "dt": manifest.dt,
        "d": manifest.d,
        "with_velocities": manifest.with_velocities,
        "clips": [
            {"file": e.file, "name": e.name,
             "base_motion_id": e.base_motion_id, "freq_factor": e.freq_factor}
            for e in manifest.clips
        ],
    }
    if manifest.generator is not None:
        doc["generator"] = manifest.generator
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
    except OSError as e:
        raise OSError(f"failed writing manifest to {path}: {e}") from e


def load_manifest(path: str) -> DatasetManifest:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as e:
        raise OSError(f"failed reading manifest from {path}: {e}") from e
    return DatasetManifest(
        dt=float(doc["dt"]), d=int(doc["d"]),
        with_velocities=bool(doc["with_velocities"]),
        clips=[ClipEntry(file=c["file"], name=c["name"],
                         base_motion_id=c["base_motion_id"],
                         freq_factor=float(c["freq_factor"]))
               for c in doc["clips"]],
        generator=doc.get("generator"))


def save_corpus(clips: Sequence[MotionClip], directory: str,
                manifest_name: str = "manifest.json",
                generator: Optional[dict] = None) -> DatasetManifest:
    """Write every clip plus a manifest.json index into `directory`."""
    import os
    os.makedirs(directory, exist_ok=True)
    if not clips:
        raise InvalidArgumentError("save_corpus needs at least one clip")
    d = clips[0].d
    entries = []
    for c in clips:
        fname = f"{c.name}.clip"
        save_clip(c, os.path.join(directory, fname))
        entries.append(ClipEntry(file=fname, name=c.name,
                                 base_motion_id=c.base_motion_id,
                                 freq_factor=c.freq_factor))
    manifest = DatasetManifest(dt=clips[0].dt, d=d,
                               with_velocities=clips[0].with_velocities,
                               clips=entries, generator=generator)
    save_manifest(manifest, os.path.join(directory, manifest_name))
    return manifest


def load_corpus(manifest_path: str) -> tuple[DatasetManifest, list[MotionClip]]:
    import os
    manifest = load_manifest(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))
    clips = [load_clip(os.path.join(base, e.file)) for e in manifest.clips]
    return manifest, clips
