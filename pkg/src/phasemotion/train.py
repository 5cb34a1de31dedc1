"""Adam training loop over uniformly sampled clip segments.

Sampling draws (clip, start) pairs only where the full window plus the
prediction horizon fits inside the clip, so no slab ever crosses a clip
boundary. All math is float64; runs with equal seeds produce bit-identical
loss logs and checkpoints.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidArgumentError, NumericFailureError
from .lossgrad import loss_and_grad
from .motiondata import (MotionClip, NormStats, apply_normalization,
                         fit_normalization)
from .network import (PARAM_FIELDS, ModelConfig, ModelParams, init_params,
                      save_checkpoint, zeros_like_params)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 5e-4
    batch: int = 50
    max_iters: int = 5000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    eval_every: int = 500

    def __post_init__(self):
        if self.lr <= 0.0 or self.eps <= 0.0:
            raise InvalidArgumentError("lr and eps must be positive")
        if self.weight_decay < 0.0:
            raise InvalidArgumentError("weight_decay must be >= 0")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise InvalidArgumentError("betas must lie in (0, 1)")
        if self.batch < 1:
            raise InvalidArgumentError("batch must be >= 1")
        if self.max_iters < 0:
            raise InvalidArgumentError("max_iters must be >= 0")
        if self.eval_every < 1:
            raise InvalidArgumentError("eval_every must be >= 1")


@dataclass
class AdamState:
    m: ModelParams
    v: ModelParams
    step: int = 0

    @staticmethod
    def fresh(params: ModelParams) -> "AdamState":
        return AdamState(m=zeros_like_params(params),
                         v=zeros_like_params(params), step=0)


def adam_step(params: ModelParams, grads: ModelParams, state: AdamState,
              cfg: TrainConfig) -> None:
    """One in-place Adam update with bias correction, then decoupled decay
    p <- p - lr*wd*p applied to the already-updated parameters."""
    state.step += 1
    t = state.step
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    decay = 1.0 - cfg.lr * cfg.weight_decay
    for name in PARAM_FIELDS:
        g = getattr(grads, name)
        if not np.isfinite(g).all():
            raise NumericFailureError("non-finite gradient", where=name)
        p = getattr(params, name)
        m = getattr(state.m, name)
        v = getattr(state.v, name)
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        if cfg.weight_decay != 0.0:
            p *= decay


@dataclass
class SegmentIndex:
    """Flat enumeration of every (clip, start) slab that fits the window
    plus horizon, over pre-normalized clip arrays."""

    arrays: list
    starts: np.ndarray  # (n_slabs,) start column
    clip_of: np.ndarray  # (n_slabs,) index into arrays
    width: int

    @property
    def n_slabs(self) -> int:
        return self.starts.size

    def gather(self, idx: np.ndarray) -> np.ndarray:
        return np.stack([
            self.arrays[self.clip_of[i]][:, self.starts[i]:self.starts[i] + self.width]
            for i in idx])


def build_segment_index(clips: Sequence[MotionClip], norm: NormStats,
                        mcfg: ModelConfig) -> SegmentIndex:
    width = mcfg.window + mcfg.horizon
    arrays = []
    starts = []
    clip_of = []
    for ci, clip in enumerate(clips):
        if clip.d != mcfg.d:
            raise InvalidArgumentError(
                f"clip '{clip.name}' has d={clip.d}, model expects {mcfg.d}")
        arrays.append(apply_normalization(norm, clip.states))
        n = clip.n_frames - width + 1
        if n > 0:
            starts.append(np.arange(n))
            clip_of.append(np.full(n, ci))
    if not starts:
        raise InvalidArgumentError(
            f"no clip is long enough for window+horizon = {width} frames")
    return SegmentIndex(arrays=arrays, starts=np.concatenate(starts),
                        clip_of=np.concatenate(clip_of), width=width)


@dataclass
class TrainResult:
    params: ModelParams
    norm: NormStats
    losses: np.ndarray
    checkpoint_path: str
    log_path: str
    snapshot_paths: list = field(default_factory=list)


def train(clips: Sequence[MotionClip], tcfg: TrainConfig, mcfg: ModelConfig,
          out_dir: str, *,
          checkpoint_name: str = "model.ckpt",
          log_name: str = "loss_log.csv",
          progress: Callable[[int, float], None] | None = None) -> TrainResult:
    """Run the full loop: per-iteration uniform slab sampling, loss+grads,
    Adam, CSV loss log, snapshots every eval_every iterations, final
    checkpoint embedding the normalization stats."""
    if not clips:
        raise InvalidArgumentError("train needs a non-empty clip list")
    os.makedirs(out_dir, exist_ok=True)
    norm = fit_normalization(clips)
    index = build_segment_index(clips, norm, mcfg)
    if tcfg.batch > index.n_slabs:
        raise InvalidArgumentError(
            f"batch {tcfg.batch} exceeds the {index.n_slabs} available segments")

    rng = np.random.default_rng(tcfg.seed)
    params = init_params(mcfg, seed=tcfg.seed)
    state = AdamState.fresh(params)
    losses = np.empty(tcfg.max_iters)
    snapshots = []

    log_path = os.path.join(out_dir, log_name)
    ckpt_path = os.path.join(out_dir, checkpoint_name)
    try:
        log = open(log_path, "w", encoding="utf-8")
    except OSError as e:
        raise OSError(f"failed opening loss log {log_path}: {e}") from e
    with log:
        log.write("iter,loss\n")
        for it in range(tcfg.max_iters):
            pick = rng.integers(0, index.n_slabs, size=tcfg.batch)
            slabs = index.gather(pick)
            loss, grads = loss_and_grad(slabs, params, mcfg)
            losses[it] = loss
            log.write(f"{it},{loss!r}\n")
            adam_step(params, grads, state, tcfg)
            if progress is not None and (it % tcfg.eval_every == 0
                                         or it == tcfg.max_iters - 1):
                progress(it, loss)
            if (it + 1) % tcfg.eval_every == 0 and (it + 1) < tcfg.max_iters:
                snap = os.path.join(out_dir, f"model_{it + 1:05d}.ckpt")
                save_checkpoint(snap, params, mcfg, norm)
                snapshots.append(snap)

    save_checkpoint(ckpt_path, params, mcfg, norm)
    return TrainResult(params=params, norm=norm, losses=losses,
                       checkpoint_path=ckpt_path, log_path=log_path,
                       snapshot_paths=snapshots)


# ---------------------------------------------------------------------------
# key=value config files (shared by the CLI and the experiment scripts)


_TRAIN_KEYS = {"lr": float, "weight_decay": float, "batch": int,
               "max_iters": int, "beta1": float, "beta2": float,
               "eps": float, "seed": int, "eval_every": int}
_MODEL_KEYS = {"c": int, "window": int, "dt": float, "hidden": int,
               "kernel": int, "horizon": int}


def parse_config_file(path: str) -> dict:
    """key=value lines; '#' starts a comment; blank lines ignored."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise OSError(f"failed reading config {path}: {e}") from e
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgumentError(f"{path}:{lineno}: expected key=value")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def configs_from_mapping(mapping: dict, d: int) -> tuple[TrainConfig, ModelConfig]:
    """Split a flat key=value mapping into train/model configs; `d` comes
    from the dataset, never the file."""
    tkw = {}
    mkw = {}
    for key, raw in mapping.items():
        if key in _TRAIN_KEYS:
            tkw[key] = _parse_scalar(key, raw, _TRAIN_KEYS[key])
        elif key in _MODEL_KEYS:
            mkw[key] = _parse_scalar(key, raw, _MODEL_KEYS[key])
        else:
            raise InvalidArgumentError(f"unknown config key '{key}'")
    return TrainConfig(**tkw), ModelConfig(d=d, **mkw)


def _parse_scalar(key: str, raw, typ):
    if isinstance(raw, (int, float)):
        return typ(raw)
    try:
        return typ(raw)
    except ValueError as e:
        raise InvalidArgumentError(
            f"config key '{key}' expects {typ.__name__}, got '{raw}'") from e
