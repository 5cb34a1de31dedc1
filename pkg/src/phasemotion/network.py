"""Encoder/decoder network with a spectral bottleneck, hand-written backprop.

Shape conventions: batches are (B, channels, time); kernels are
(out_ch, in_ch, kernel). Convolutions are cross-correlations with same-length
zero padding, computed through an FFT of length >= H+K-1 (numpy's pocketfft
does the transform; the layer math, its adjoint, and everything around them
is written out here). Phases are in cycles everywhere.

The canonical parameter order (checkpoints, flattening, gradient buffers) is
PARAM_FIELDS below.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, fields

import numpy as np

from .errors import InvalidArgumentError, NumericFailureError
from .motiondata import NormStats, TrajectorySegment
from . import spectral

_CKPT_MAGIC = b"PMCK"
_CKPT_VERSION = 1


@dataclass
class ModelConfig:
    d: int
    c: int = 8
    window: int = 100
    dt: float = 0.01
    hidden: int = 64
    kernel: int = 51
    horizon: int = 0  # forward-prediction steps N; 0 trains plain reconstruction

    def __post_init__(self):
        if self.d < 1 or self.c < 1 or self.hidden < 1:
            raise InvalidArgumentError("channel counts must be >= 1")
        if self.window < 4 or self.window % 2 != 0:
            raise InvalidArgumentError(f"window must be even and >= 4, got {self.window}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise InvalidArgumentError(f"kernel must be odd, got {self.kernel}")
        if self.dt <= 0.0:
            raise InvalidArgumentError(f"dt must be positive, got {self.dt}")
        if self.horizon < 0:
            raise InvalidArgumentError(f"horizon must be >= 0, got {self.horizon}")


PARAM_FIELDS = ("enc1_w", "enc1_b", "enc2_w", "enc2_b",
                "phase_w", "phase_b",
                "dec1_w", "dec1_b", "dec2_w", "dec2_b")


@dataclass
class ModelParams:
    enc1_w: np.ndarray  # (hidden, d, kernel)
    enc1_b: np.ndarray  # (hidden,)
    enc2_w: np.ndarray  # (c, hidden, kernel)
    enc2_b: np.ndarray  # (c,)
    phase_w: np.ndarray  # (c, 2, window)
    phase_b: np.ndarray  # (c, 2)
    dec1_w: np.ndarray  # (hidden, c, kernel)
    dec1_b: np.ndarray  # (hidden,)
    dec2_w: np.ndarray  # (d, hidden, kernel)
    dec2_b: np.ndarray  # (d,)

    def check_finite(self) -> None:
        for f in fields(self):
            if not np.isfinite(getattr(self, f.name)).all():
                raise NumericFailureError("non-finite parameter", where=f.name)

    def copy(self) -> "ModelParams":
        return ModelParams(**{f: getattr(self, f).copy() for f in PARAM_FIELDS})


def zeros_like_params(p: ModelParams) -> ModelParams:
    return ModelParams(**{f: np.zeros_like(getattr(p, f)) for f in PARAM_FIELDS})


def init_params(cfg: ModelConfig, seed: int) -> ModelParams:
    """Uniform init scaled by 1/sqrt(fan_in) for weights and biases."""
    rng = np.random.default_rng(seed)

    def u(shape, fan_in):
        s = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-s, s, size=shape)

    k = cfg.kernel
    return ModelParams(
        enc1_w=u((cfg.hidden, cfg.d, k), cfg.d * k),
        enc1_b=u((cfg.hidden,), cfg.d * k),
        enc2_w=u((cfg.c, cfg.hidden, k), cfg.hidden * k),
        enc2_b=u((cfg.c,), cfg.hidden * k),
        phase_w=u((cfg.c, 2, cfg.window), cfg.window),
        phase_b=u((cfg.c, 2), cfg.window),
        dec1_w=u((cfg.hidden, cfg.c, k), cfg.c * k),
        dec1_b=u((cfg.hidden,), cfg.c * k),
        dec2_w=u((cfg.d, cfg.hidden, k), cfg.hidden * k),
        dec2_b=u((cfg.d,), cfg.hidden * k),
    )


def flatten_params(p: ModelParams) -> np.ndarray:
    return np.concatenate([np.asarray(getattr(p, f), dtype=np.float64).ravel()
                           for f in PARAM_FIELDS])


def unflatten_params(blob: np.ndarray, cfg: ModelConfig) -> ModelParams:
    shapes = _param_shapes(cfg)
    total = sum(int(np.prod(s)) for s in shapes.values())
    if blob.size != total:
        raise InvalidArgumentError(
            f"parameter blob has {blob.size} values, expected {total}")
    out = {}
    off = 0
    for name in PARAM_FIELDS:
        shape = shapes[name]
        size = int(np.prod(shape))
        out[name] = blob[off:off + size].reshape(shape).copy()
        off += size
    return ModelParams(**out)


def _param_shapes(cfg: ModelConfig) -> dict:
    k = cfg.kernel
    return {
        "enc1_w": (cfg.hidden, cfg.d, k), "enc1_b": (cfg.hidden,),
        "enc2_w": (cfg.c, cfg.hidden, k), "enc2_b": (cfg.c,),
        "phase_w": (cfg.c, 2, cfg.window), "phase_b": (cfg.c, 2),
        "dec1_w": (cfg.hidden, cfg.c, k), "dec1_b": (cfg.hidden,),
        "dec2_w": (cfg.d, cfg.hidden, k), "dec2_b": (cfg.d,),
    }


@dataclass
class LatentState:
    """Per-channel phase (cycles, wrapped to [-0.5, 0.5)) and sinusoid
    parameters: frequency (Hz), amplitude, offset."""

    phi: np.ndarray
    freq: np.ndarray
    amp: np.ndarray
    offset: np.ndarray

    def copy(self) -> "LatentState":
        return LatentState(self.phi.copy(), self.freq.copy(),
                           self.amp.copy(), self.offset.copy())


def wrap_phase(x):
    """Wrap to [-0.5, 0.5); +0.5 maps to -0.5."""
    return (np.asarray(x) + 0.5) % 1.0 - 0.5


@dataclass
class ForwardCache:
    """Encoder intermediates needed by the backward pass."""

    x: np.ndarray          # (B, d, H) normalized input
    z1: np.ndarray         # (B, hidden, H) conv1 pre-activation
    a1: np.ndarray         # (B, hidden, H) post-ELU
    latent: np.ndarray     # (B, c, H) latent curves
    coeffs: np.ndarray     # (B, c, H//2+1) spectra of latent curves
    total_power: np.ndarray  # (B, c)
    freq: np.ndarray       # (B, c)
    amp: np.ndarray
    offset: np.ndarray
    sx: np.ndarray         # (B, c) phase-head outputs
    sy: np.ndarray
    phi: np.ndarray        # (B, c)


# ---------------------------------------------------------------------------
# Generic FFT-backed convolution engine (per-window reference path)


def _next_fast_len(n: int) -> int:
    best = 1
    while best < n:
        best *= 2
    m = n
    while True:
        k = m
        for p in (2, 3, 5):
            while k % p == 0:
                k //= p
        if k == 1:
            return m
        m += 1
        if m >= best:
            return best


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same-length zero-padded cross-correlation: x (B,Ci,H), w (Co,Ci,K)."""
    B, ci, h = x.shape
    co, ci2, k = w.shape
    if ci2 != ci:
        raise InvalidArgumentError(f"conv channels mismatch: {ci} vs {ci2}")
    p = k // 2
    n = _next_fast_len(h + k - 1)
    xf = np.fft.rfft(x, n, axis=-1)
    # Reversing the kernel turns linear convolution into cross-correlation.
    wf = np.fft.rfft(w[:, :, ::-1], n, axis=-1)
    yf = np.einsum("oif,bif->bof", wf, xf)
    y = np.fft.irfft(yf, n, axis=-1)[..., k - 1 - p: k - 1 - p + h]
    return y + b[None, :, None]


def conv1d_backward(x: np.ndarray, w: np.ndarray, dy: np.ndarray):
    """Gradients of the layer above: returns (dx, dw, db)."""
    B, ci, h = x.shape
    co, _, k = w.shape
    p = k // 2
    n = _next_fast_len(h + k - 1)
    dyf = np.fft.rfft(dy, n, axis=-1)
    # dx[j] = sum_{o,k} w[o,i,k] dy[o, j - k + p]: plain convolution with the
    # unreversed kernel, sliced at offset p.
    wf = np.fft.rfft(w, n, axis=-1)
    dxf = np.einsum("oif,bof->bif", wf, dyf)
    dx = np.fft.irfft(dxf, n, axis=-1)[..., p: p + h]
    # dw[o,i,k] = sum_{b,t} dy[b,o,t] x[b,i,t+k-p]: circular correlation of
    # the zero-padded x against dy; lag k-p sits at index (k-p) mod n.
    xf = np.fft.rfft(x, n, axis=-1)
    prodf = np.einsum("bif,bof->oif", xf, np.conj(dyf))
    lags = np.fft.irfft(prodf, n, axis=-1)
    idx = (np.arange(k) - p) % n
    dw = lags[..., idx]
    db = dy.sum(axis=(0, 2))
    return dx, dw, db


def elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad_from_output(a: np.ndarray) -> np.ndarray:
    """ELU'(x) from the activation value: 1 for x>0, exp(x)=a+1 otherwise."""
    return np.minimum(a + 1.0, 1.0)


# ---------------------------------------------------------------------------
# Encode


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericFailureError("non-finite activation", where=where)


def encode_batch(x: np.ndarray, params: ModelParams, cfg: ModelConfig) -> ForwardCache:
    """Encoder forward on a stacked batch (B, d, H) of normalized windows."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != cfg.d or x.shape[2] != cfg.window:
        raise InvalidArgumentError(
            f"encode expects (B, {cfg.d}, {cfg.window}), got {x.shape}")
    z1 = conv1d_forward(x, params.enc1_w, params.enc1_b)
    _check_finite(z1, "enc_conv1")
    a1 = elu(z1)
    latent = conv1d_forward(a1, params.enc2_w, params.enc2_b)
    _check_finite(latent, "enc_conv2")

    freq, amp, offset, coeffs, total = spectral._extract_arrays(latent, cfg.dt)

    # Phase heads: per-channel linear map H -> 2, then atan2 in cycles.
    sx = np.einsum("bch,ch->bc", latent, params.phase_w[:, 0, :]) + params.phase_b[:, 0]
    sy = np.einsum("bch,ch->bc", latent, params.phase_w[:, 1, :]) + params.phase_b[:, 1]
    _check_finite(sx, "phase_head")
    _check_finite(sy, "phase_head")
    phi = wrap_phase(np.arctan2(sy, sx) / (2.0 * np.pi))
    return ForwardCache(x=x, z1=z1, a1=a1, latent=latent, coeffs=coeffs,
                        total_power=total, freq=freq, amp=amp, offset=offset,
                        sx=sx, sy=sy, phi=phi)


def encode(seg: TrajectorySegment, params: ModelParams,
           cfg: ModelConfig) -> tuple[LatentState, ForwardCache]:
    vals = np.asarray(seg.values, dtype=np.float64)
    if vals.shape != (cfg.d, cfg.window):
        raise InvalidArgumentError(
            f"segment shape {vals.shape} does not match ({cfg.d}, {cfg.window})")
    cache = encode_batch(vals[None], params, cfg)
    state = LatentState(phi=cache.phi[0].copy(), freq=cache.freq[0].copy(),
                        amp=cache.amp[0].copy(), offset=cache.offset[0].copy())
    return state, cache


def encode_backward(cache: ForwardCache, params: ModelParams, cfg: ModelConfig,
                    dphi: np.ndarray, dfreq: np.ndarray, damp: np.ndarray,
                    doffset: np.ndarray, grads: ModelParams) -> None:
    """Accumulate encoder parameter gradients from latent-state cotangents.

    All arrays are (B, c). `grads` is accumulated in place.
    """
    # Phase head backward: phi = atan2(sy, sx)/2pi (wrap adds a constant).
    r2 = cache.sx ** 2 + cache.sy ** 2
    safe = r2 > 0.0
    denom = np.where(safe, r2, 1.0)
    dsx = np.where(safe, -cache.sy / denom, 0.0) * dphi / (2.0 * np.pi)
    dsy = np.where(safe, cache.sx / denom, 0.0) * dphi / (2.0 * np.pi)

    dlatent = np.einsum("bc,ch->bch", dsx, params.phase_w[:, 0, :])
    dlatent += np.einsum("bc,ch->bch", dsy, params.phase_w[:, 1, :])
    grads.phase_w[:, 0, :] += np.einsum("bc,bch->ch", dsx, cache.latent)
    grads.phase_w[:, 1, :] += np.einsum("bc,bch->ch", dsy, cache.latent)
    grads.phase_b[:, 0] += dsx.sum(axis=0)
    grads.phase_b[:, 1] += dsy.sum(axis=0)

    # Spectral readout adjoint (shares spectra with the forward pass).
    dlatent += spectral._adjoint_from_cache(
        cache.coeffs, cache.total_power, cache.freq, cfg.dt,
        dfreq, damp, doffset)

    da1, dw2, db2 = conv1d_backward(cache.a1, params.enc2_w, dlatent)
    grads.enc2_w += dw2
    grads.enc2_b += db2
    dz1 = da1 * elu_grad_from_output(cache.a1)
    _, dw1, db1 = conv1d_backward(cache.x, params.enc1_w, dz1)
    grads.enc1_w += dw1
    grads.enc1_b += db1


# ---------------------------------------------------------------------------
# Decode (single window, generic path)


def latent_curves(state: LatentState, cfg: ModelConfig) -> np.ndarray:
    """Rebuild the c sinusoid curves on the window's centered time axis."""
    tau = (np.arange(cfg.window) - cfg.window // 2) * cfg.dt
    arg = 2.0 * np.pi * (state.freq[:, None] * tau[None, :] + state.phi[:, None])
    return state.amp[:, None] * np.sin(arg) + state.offset[:, None]


def decode_batch(phi: np.ndarray, freq: np.ndarray, amp: np.ndarray,
                 offset: np.ndarray, params: ModelParams,
                 cfg: ModelConfig) -> np.ndarray:
    """Decoder forward on stacked latent states (B, c) -> (B, d, H)."""
    tau = (np.arange(cfg.window) - cfg.window // 2) * cfg.dt
    arg = 2.0 * np.pi * (freq[..., None] * tau + phi[..., None])
    curves = amp[..., None] * np.sin(arg) + offset[..., None]
    h1 = elu(conv1d_forward(curves, params.dec1_w, params.dec1_b))
    _check_finite(h1, "dec_conv1")
    out = conv1d_forward(h1, params.dec2_w, params.dec2_b)
    _check_finite(out, "dec_conv2")
    return out


def decode(state: LatentState, params: ModelParams,
           cfg: ModelConfig) -> TrajectorySegment:
    phi = wrap_phase(state.phi)
    out = decode_batch(phi[None], state.freq[None], state.amp[None],
                       state.offset[None], params, cfg)
    return TrajectorySegment(values=out[0], dt=cfg.dt,
                             end_time_index=cfg.window - 1)


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(path: str, params: ModelParams, cfg: ModelConfig,
                    norm: NormStats) -> None:
    header = {
        "config": {"d": cfg.d, "c": cfg.c, "window": cfg.window, "dt": cfg.dt,
                   "hidden": cfg.hidden, "kernel": cfg.kernel,
                   "horizon": cfg.horizon},
        "norm": {"mean": norm.mean.tolist(), "std": norm.std.tolist()},
        "param_order": list(PARAM_FIELDS),
    }
    blob = flatten_params(params)
    head_b = json.dumps(header, sort_keys=True).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(struct.pack("<4sHI", _CKPT_MAGIC, _CKPT_VERSION, len(head_b)))
            fh.write(head_b)
            fh.write(blob.astype("<f8").tobytes())
    except OSError as e:
        raise OSError(f"failed writing checkpoint to {path}: {e}") from e


def load_checkpoint(path: str) -> tuple[ModelParams, ModelConfig, NormStats]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise OSError(f"failed reading checkpoint from {path}: {e}") from e
    if len(blob) < struct.calcsize("<4sHI"):
        raise InvalidArgumentError(f"{path}: not a checkpoint (truncated header)")
    magic, version, hlen = struct.unpack_from("<4sHI", blob, 0)
    if magic != _CKPT_MAGIC:
        raise InvalidArgumentError(f"{path}: not a checkpoint (magic {magic!r})")
    if version != _CKPT_VERSION:
        raise InvalidArgumentError(f"{path}: unsupported checkpoint version {version}")
    off = struct.calcsize("<4sHI")
    try:
        header = json.loads(blob[off:off + hlen].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as e:
        raise InvalidArgumentError(f"{path}: corrupt checkpoint header: {e}")
    off += hlen
    c = header["config"]
    cfg = ModelConfig(d=c["d"], c=c["c"], window=c["window"], dt=c["dt"],
                      hidden=c["hidden"], kernel=c["kernel"], horizon=c["horizon"])
    if header["param_order"] != list(PARAM_FIELDS):
        raise InvalidArgumentError(f"{path}: unknown parameter order")
    flat = np.frombuffer(blob, dtype="<f8", offset=off).copy()
    params = unflatten_params(flat, cfg)
    norm = NormStats(mean=np.asarray(header["norm"]["mean"], dtype=np.float64),
                     std=np.asarray(header["norm"]["std"], dtype=np.float64))
    return params, cfg, norm
