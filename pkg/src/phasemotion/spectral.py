"""Hand-rolled real FFT and differentiable sinusoid-parameter extraction.

The transform is an iterative radix-2 FFT with a Bluestein chirp-z fallback,
so any even window length works, not just powers of two. On top of it sits
the frequency/amplitude/offset readout used as the network bottleneck:

    p_k = |c_k|^2                 for k = 1..H/2   (DC excluded, Nyquist in)
    f   = sum(nu_k p_k) / sum(p_k)    with nu_k = k / (H dt)
    a   = 2 sqrt(sum(p_k)) / H
    b   = Re(c_0) / H

plus the exact adjoint of that readout, derived by hand so training needs no
autodiff. All phases elsewhere in the package are in cycles; frequencies here
are in Hz.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

# Below this total AC power the frequency readout is ill-conditioned: f is
# clamped to 0 and the adjoint returns zero contribution for f and a.
EPS_POWER = 1e-12


@dataclass
class RealSpectrum:
    """One-sided spectrum of a real signal: bins 0..n/2 inclusive."""

    coeffs: np.ndarray  # complex128, shape (..., n//2 + 1)
    n: int              # original signal length

    def power(self) -> np.ndarray:
        return np.abs(self.coeffs) ** 2


@dataclass
class SpectralParams:
    """Single-sinusoid summary of one curve: frequency (Hz), amplitude, offset."""

    freq: float
    amp: float
    offset: float


# ---------------------------------------------------------------------------
# FFT core


def _bit_reverse_permutation(m: int) -> np.ndarray:
    idx = np.arange(m)
    rev = np.zeros(m, dtype=np.intp)
    bits = m.bit_length() - 1
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


class _Pow2Plan:
    def __init__(self, m: int):
        self.m = m
        self.perm = _bit_reverse_permutation(m)
        # One twiddle table per butterfly stage, for both directions.
        self.twiddles = []
        size = 2
        while size <= m:
            k = np.arange(size // 2)
            self.twiddles.append(np.exp(-2j * np.pi * k / size))
            size *= 2


class _BluesteinPlan:
    def __init__(self, n: int):
        self.n = n
        m = 1
        while m < 2 * n - 1:
            m *= 2
        self.m = m
        # exp(-i pi j^2 / n); j^2 mod 2n keeps the argument small so the
        # chirp stays accurate for long windows.
        j = np.arange(n, dtype=np.int64)
        jsq = (j * j) % (2 * n)
        self.chirp = np.exp(-1j * np.pi * jsq / n)
        b = np.zeros(m, dtype=np.complex128)
        b[:n] = np.conj(self.chirp)
        b[m - n + 1:] = np.conj(self.chirp[1:][::-1])
        self.b_spectrum = _fft_pow2(b, _pow2_plan(m), inverse=False)


_POW2_PLANS: dict[int, _Pow2Plan] = {}
_BLUESTEIN_PLANS: dict[int, _BluesteinPlan] = {}


def _pow2_plan(m: int) -> _Pow2Plan:
    plan = _POW2_PLANS.get(m)
    if plan is None:
        plan = _Pow2Plan(m)
        _POW2_PLANS[m] = plan
    return plan


def _bluestein_plan(n: int) -> _BluesteinPlan:
    plan = _BLUESTEIN_PLANS.get(n)
    if plan is None:
        plan = _BluesteinPlan(n)
        _BLUESTEIN_PLANS[n] = plan
    return plan


def _fft_pow2(x: np.ndarray, plan: _Pow2Plan, inverse: bool) -> np.ndarray:
    """Iterative radix-2 Cooley-Tukey over the last axis (length = plan.m)."""
    m = plan.m
    out = np.ascontiguousarray(x[..., plan.perm], dtype=np.complex128)
    size = 2
    for tw in plan.twiddles:
        w = np.conj(tw) if inverse else tw
        half = size // 2
        view = out.reshape(*out.shape[:-1], m // size, size)
        even = view[..., :half]
        odd = view[..., half:] * w
        upper = even + odd
        lower = even - odd
        view[..., :half] = upper
        view[..., half:] = lower
        size *= 2
    if inverse:
        out /= m
    return out


def _dft_complex(x: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Unnormalized forward DFT (or normalized inverse) over the last axis."""
    n = x.shape[-1]
    if n & (n - 1) == 0:
        return _fft_pow2(x, _pow2_plan(n), inverse)
    if inverse:
        return np.conj(_dft_complex(np.conj(x), inverse=False)) / n
    plan = _bluestein_plan(n)
    a = np.zeros(x.shape[:-1] + (plan.m,), dtype=np.complex128)
    a[..., :n] = x * plan.chirp
    spec = _fft_pow2(a, _pow2_plan(plan.m), inverse=False)
    spec *= plan.b_spectrum
    conv = _fft_pow2(spec, _pow2_plan(plan.m), inverse=True)
    return conv[..., :n] * plan.chirp


def rfft(x: np.ndarray) -> RealSpectrum:
    """One-sided DFT of a real signal along the last axis.

    Accepts any length >= 2 (even lengths are the common case; odd lengths
    transform fine, the Nyquist bin is simply absent from the math that uses
    them downstream). Bins 0 and n/2 (n even) are forced exactly real, which
    the full DFT guarantees up to rounding anyway.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n < 2:
        raise InvalidArgumentError(f"rfft needs length >= 2, got {n}")
    full = _dft_complex(x.astype(np.complex128))
    half = full[..., : n // 2 + 1].copy()
    half[..., 0] = half[..., 0].real
    if n % 2 == 0:
        half[..., -1] = half[..., -1].real
    return RealSpectrum(coeffs=half, n=n)


def irfft(spectrum: RealSpectrum) -> np.ndarray:
    """Exact inverse of `rfft`; round-trip error stays near machine epsilon."""
    c = np.asarray(spectrum.coeffs, dtype=np.complex128)
    n = spectrum.n
    if c.shape[-1] != n // 2 + 1:
        raise InvalidArgumentError(
            f"spectrum has {c.shape[-1]} bins, expected {n // 2 + 1} for n={n}")
    full = np.zeros(c.shape[:-1] + (n,), dtype=np.complex128)
    full[..., : n // 2 + 1] = c
    if n % 2 == 0:
        full[..., n // 2 + 1:] = np.conj(c[..., 1:-1][..., ::-1])
    else:
        full[..., n // 2 + 1:] = np.conj(c[..., 1:][..., ::-1])
    return _dft_complex(full, inverse=True).real


# ---------------------------------------------------------------------------
# Parameter extraction and its adjoint


def _extract_arrays(curves: np.ndarray, dt: float):
    """Batched readout. curves (..., H) -> (f, a, b, coeffs, total_power)."""
    curves = np.asarray(curves, dtype=np.float64)
    h = curves.shape[-1]
    if h < 2 or h % 2 != 0:
        raise InvalidArgumentError(f"window length must be even and >= 2, got {h}")
    if dt <= 0.0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    spec = rfft(curves)
    c = spec.coeffs
    p = (c[..., 1:].real ** 2 + c[..., 1:].imag ** 2)  # bins 1..H/2
    total = p.sum(axis=-1)
    nu = np.arange(1, h // 2 + 1) / (h * dt)
    weighted = p @ nu
    safe = total >= EPS_POWER
    f = np.where(safe, weighted / np.where(safe, total, 1.0), 0.0)
    # same dead band as the adjoint: below EPS_POWER the AC readout is 0
    a = np.where(safe, 2.0 * np.sqrt(total) / h, 0.0)
    b = c[..., 0].real / h
    return f, a, b, c, total


def extract_params(curve: np.ndarray, dt: float) -> SpectralParams:
    """Dominant-frequency readout of a single curve (power-weighted mean
    frequency over AC bins, amplitude from total AC power, DC offset)."""
    curve = np.asarray(curve, dtype=np.float64)
    if curve.ndim != 1:
        raise InvalidArgumentError(f"expected a 1-D curve, got shape {curve.shape}")
    f, a, b, _, _ = _extract_arrays(curve, dt)
    return SpectralParams(freq=float(f), amp=float(a), offset=float(b))


def extract_params_batch(curves: np.ndarray, dt: float):
    """Vectorized readout over leading axes: returns (f, a, b) arrays."""
    f, a, b, _, _ = _extract_arrays(curves, dt)
    return f, a, b


def extract_params_adjoint(curve: np.ndarray, dt: float,
                           upstream: tuple) -> np.ndarray:
    """Gradient of (f, a, b) w.r.t. the curve samples, contracted with the
    upstream cotangent (df, da, db). Batched over leading axes.

    Where total AC power falls below EPS_POWER both the f and a legs return
    zero contribution (f is clamped there; a has a sqrt(0) subgradient, 0 by
    choice), leaving only the uniform db/H term.
    """
    curve = np.asarray(curve, dtype=np.float64)
    df, da, db = (np.asarray(u, dtype=np.float64) for u in upstream)
    f, _, _, c, total = _extract_arrays(curve, dt)
    return _adjoint_from_cache(c, total, f, dt, df, da, db)


def _adjoint_from_cache(coeffs: np.ndarray, total_power: np.ndarray,
                        freq: np.ndarray, dt: float,
                        df: np.ndarray, da: np.ndarray,
                        db: np.ndarray) -> np.ndarray:
    """Same math as extract_params_adjoint, reusing forward-pass spectra.

    coeffs (..., H/2+1), total_power/freq/df/da/db (...), returns (..., H).
    """
    h = 2 * (coeffs.shape[-1] - 1)
    nu = np.arange(1, h // 2 + 1) / (h * dt)
    safe = total_power >= EPS_POWER
    denom = np.where(safe, total_power, 1.0)
    g = (df[..., None] * (nu - freq[..., None]) / denom[..., None]
         + da[..., None] / (h * np.sqrt(denom))[..., None])
    g = np.where(safe[..., None], g, 0.0)
    gc = g * coeffs[..., 1:]
    basis = _readout_basis(h)
    grad = 2.0 * (gc.real @ basis[0] - gc.imag @ basis[1])
    grad += db[..., None] / h
    return grad


_READOUT_BASIS: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _readout_basis(h: int) -> tuple[np.ndarray, np.ndarray]:
    """cos/sin tables (H/2, H) for bins 1..H/2 against sample index."""
    cached = _READOUT_BASIS.get(h)
    if cached is None:
        k = np.arange(1, h // 2 + 1)[:, None]
        j = np.arange(h)[None, :]
        ang = 2.0 * np.pi * ((k * j) % h) / h
        cached = (np.cos(ang), np.sin(ang))
        _READOUT_BASIS[h] = cached
    return cached
