"""Forward-prediction loss and full hand-written backward pass.

The loss encodes the oldest window of each training slab, then decodes the
N+1 step-shifted windows (phase advanced by i*f*dt, other parameters frozen)
and sums per-window MSE against the matching slab columns.

Two equivalent engines compute it:

* a generic path that materializes every shifted window and runs the
  per-window convolution layers (clear, used for small windows and as the
  reference in tests);
* a table path exploiting that all N+1 decoded windows are slices of one
  latent timeline: the first decoder conv of a sinusoid has a closed form,
  so the convs, the ELU, and even the MSE against overlapping clip windows
  collapse to one shared table of length H+N plus explicit edge columns
  (zero padding makes the outermost columns window-specific). This is what
  makes the 101-step training budget fit on one core.

Both paths produce bit-deterministic results; the table path requires
H >= 2*(kernel-1) (otherwise left and right padding overlap and the engine
falls back to the generic path).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, NumericFailureError
from .network import (ForwardCache, ModelConfig, ModelParams, conv1d_backward,
                      conv1d_forward, elu, elu_grad_from_output, encode_backward,
                      encode_batch, zeros_like_params)


@dataclass
class TrainingSample:
    """One slab of d x (H + N) consecutive normalized frames: the encoded
    window plus its N future columns."""

    values: np.ndarray
    clip_name: str = ""
    end_time_index: int = -1


def _stack_batch(batch, cfg: ModelConfig) -> np.ndarray:
    width = cfg.window + cfg.horizon
    if isinstance(batch, np.ndarray):
        slabs = np.asarray(batch, dtype=np.float64)
        if slabs.ndim != 3:
            raise InvalidArgumentError(f"batch array must be 3-D, got {slabs.shape}")
    else:
        items = list(batch)
        if not items:
            raise InvalidArgumentError("empty batch")
        slabs = np.stack([np.asarray(s.values, dtype=np.float64) for s in items])
    if slabs.shape[1] != cfg.d:
        raise InvalidArgumentError(
            f"batch has d={slabs.shape[1]}, config expects {cfg.d}")
    if slabs.shape[2] != width:
        raise InvalidArgumentError(
            f"slab width {slabs.shape[2]} != window+horizon = {width}; "
            "horizon exceeds the frames provided")
    return slabs


def loss_and_grad(batch, params: ModelParams,
                  cfg: ModelConfig) -> tuple[float, ModelParams]:
    """Mean over the batch of the summed N-step prediction MSE, plus
    gradients for every parameter (canonical field order, fixed reduction
    order, bit-deterministic)."""
    slabs = _stack_batch(batch, cfg)
    if _fast_applicable(slabs.shape[0], cfg):
        return _fast_engine(slabs, params, cfg)
    return _generic_engine(slabs, params, cfg)


def _fast_applicable(bsz: int, cfg: ModelConfig) -> bool:
    """The table engine needs non-overlapping edge patches, and its direct
    edge convolutions only pay off for kernels much narrower than the
    window (the im2col temporaries grow as steps*kernel**2 and the patch
    flops overtake the FFT path for fat kernels)."""
    if cfg.window < 2 * (cfg.kernel - 1):
        return False
    p = cfg.kernel // 2
    steps = cfg.horizon + 1
    im2col = 8 * bsz * steps * cfg.kernel * p * (cfg.c + 2 * cfg.hidden)
    return im2col <= 250_000_000


# ---------------------------------------------------------------------------
# Generic engine: materialize every shifted window


def _windows_view(slabs: np.ndarray, h: int) -> np.ndarray:
    """(B, d, H+N) -> read-only (B, steps, d, H) strided view of windows."""
    b, d, width = slabs.shape
    steps = width - h + 1
    sb, sd, st = slabs.strides
    return np.lib.stride_tricks.as_strided(
        slabs, shape=(b, steps, d, h), strides=(sb, st, sd, st), writeable=False)


def _generic_engine(slabs, params, cfg):
    bsz, _, width = slabs.shape
    h, c, steps = cfg.window, cfg.c, cfg.horizon + 1
    scale = 1.0 / (bsz * cfg.d * h)

    cache = encode_batch(slabs[:, :, :h], params, cfg)
    f, a, b_off, phi = cache.freq, cache.amp, cache.offset, cache.phi

    # Latent curves for every step: arg = 2pi(f*(tau_j + s*dt) + phi).
    tau = (np.arange(h) - h // 2) * cfg.dt
    tgrid = tau[None, :] + (np.arange(steps) * cfg.dt)[:, None]     # (steps, H)
    arg = 2.0 * np.pi * (f[:, None, :, None] * tgrid[None, :, None, :]
                         + phi[:, None, :, None])                   # (B,steps,c,H)
    sin_a = np.sin(arg)
    cos_a = np.cos(arg)
    curves = a[:, None, :, None] * sin_a + b_off[:, None, :, None]

    flat = curves.reshape(bsz * steps, c, h)
    z1 = conv1d_forward(flat, params.dec1_w, params.dec1_b)
    a1 = elu(z1)
    shat = conv1d_forward(a1, params.dec2_w, params.dec2_b)
    _assert_finite_scalar(shat, "dec_conv2")

    targets = _windows_view(slabs, h).reshape(bsz * steps, cfg.d, h)
    diff = shat - targets
    loss = scale * float(np.dot(diff.ravel(), diff.ravel()))

    grads = zeros_like_params(params)
    dshat = (2.0 * scale) * diff
    da1, dw2, db2 = conv1d_backward(a1, params.dec2_w, dshat)
    grads.dec2_w += dw2
    grads.dec2_b += db2
    dz1 = da1 * elu_grad_from_output(a1)
    dcurves, dw1, db1 = conv1d_backward(flat, params.dec1_w, dz1)
    grads.dec1_w += dw1
    grads.dec1_b += db1

    dcv = dcurves.reshape(bsz, steps, c, h)
    damp = np.einsum("bscj,bscj->bc", dcv, sin_a)
    doff = dcv.sum(axis=(1, 3))
    dac = dcv * (a[:, None, :, None] * cos_a)
    dphi = 2.0 * np.pi * dac.sum(axis=(1, 3))
    dfreq = 2.0 * np.pi * np.einsum("bscj,sj->bc", dac, tgrid)

    encode_backward(cache, params, cfg, dphi, dfreq, damp, doff, grads)
    return loss, grads


def _assert_finite_scalar(arr, where):
    if not np.isfinite(arr).all():
        raise NumericFailureError("non-finite activation", where=where)


# ---------------------------------------------------------------------------
# Table engine


def _fast_engine(slabs, params, cfg):
    bsz, d, width = slabs.shape
    h_w, c, hid = cfg.window, cfg.c, cfg.hidden
    k, dt = cfg.kernel, cfg.dt
    p = k // 2
    steps = cfg.horizon + 1
    span = h_w + cfg.horizon          # distinct clip columns touched
    u_len = span + 2 * p              # table index m <-> time offset u = m - p
    scale = 1.0 / (bsz * d * h_w)
    w1, b1 = params.dec1_w, params.dec1_b
    w2, b2 = params.dec2_w, params.dec2_b

    cache = encode_batch(slabs[:, :, :h_w], params, cfg)
    f, a, b_off, phi = cache.freq, cache.amp, cache.offset, cache.phi

    # --- shared latent timeline -------------------------------------------
    um = (np.arange(u_len) - p) - h_w // 2            # (u_len,) time index
    arg = 2.0 * np.pi * (f[:, :, None] * (um * dt) + phi[:, :, None])
    sin_t = np.sin(arg)                               # (B, c, U)
    cos_t = np.cos(arg)

    # First decoder conv of a sinusoid in closed form: per-frequency kernel
    # transforms turn the conv into a pointwise mix of sin/cos tables.
    kc = 2.0 * np.pi * dt * (np.arange(k) - p)        # (k,)
    beta = f[:, :, None] * kc                          # (B, c, k) radians
    cos_b = np.cos(beta)
    sin_b = np.sin(beta)
    wc = np.einsum("oik,bik->boi", w1, cos_b)          # (B, hid, c)
    ws = np.einsum("oik,bik->boi", w1, sin_b)
    wsum = w1.sum(axis=2)                              # (hid, c)
    c1 = a[:, None, :] * wc
    c2 = a[:, None, :] * ws
    const = b1[None, :] + b_off @ wsum.T               # (B, hid)
    z_tab = (np.matmul(c1, sin_t) + np.matmul(c2, cos_t)
             + const[:, :, None])                      # (B, hid, U)

    # --- conv1 edge columns (first/last p per window) ---------------------
    # Left: output col t in [0,p) misses inputs at pos<0; patch holds
    # pos in [-p, 2p-1] with zeros below 0. Right mirrors it.
    wl = 3 * p
    patch1_l = np.zeros((bsz, c, steps, wl)) if p else None
    patch1_r = np.zeros((bsz, c, steps, wl)) if p else None
    if p:
        # Window-s position j sits at table column s + j + p.
        sview_l = _table_windows(sin_t, p, steps, 2 * p)
        patch1_l[:, :, :, p:] = a[:, :, None, None] * sview_l + b_off[:, :, None, None]
        sview_r = _table_windows(sin_t, h_w - p, steps, 2 * p)
        patch1_r[:, :, :, :2 * p] = a[:, :, None, None] * sview_r + b_off[:, :, None, None]
        z_left = _patch_conv(patch1_l, w1, p) + b1[None, :, None, None]
        z_right = _patch_conv(patch1_r, w1, p) + b1[None, :, None, None]
        a3_left = elu(z_left)                          # (B, hid, steps, p)
        a3_right = elu(z_right)
    else:
        z_left = z_right = a3_left = a3_right = None

    elu_tab = elu(z_tab)

    # --- conv2: shared part as a plain conv over the table ----------------
    tab2 = conv1d_forward(elu_tab, w2, b2)             # (B, d, U)
    _assert_finite_scalar(tab2, "dec_conv2")

    # --- conv2 edge columns (first/last 2p per window) --------------------
    # Patch pos in [-p, 3p-1]: zeros below 0, corrected values in [0,p),
    # table values in [p, 3p). Right mirrors it.
    if p:
        patch2_l = np.zeros((bsz, hid, steps, 4 * p))
        patch2_l[:, :, :, p:2 * p] = a3_left
        patch2_l[:, :, :, 2 * p:] = _table_windows(elu_tab, 2 * p, steps, 2 * p)
        shat_l = _patch_conv(patch2_l, w2, 2 * p) + b2[None, :, None, None]

        patch2_r = np.zeros((bsz, hid, steps, 4 * p))
        patch2_r[:, :, :, :2 * p] = _table_windows(elu_tab, h_w - 2 * p, steps, 2 * p)
        patch2_r[:, :, :, 2 * p:3 * p] = a3_right
        shat_r = _patch_conv(patch2_r, w2, 2 * p) + b2[None, :, None, None]
    else:
        shat_l = shat_r = None

    # --- loss --------------------------------------------------------------
    # Interior columns t in [2p, H-2p) of window s read tab2 at m = s+t+p and
    # the slab at column s+t: the whole double sum collapses onto the table
    # axis with a multiplicity weight.
    e_tab = tab2[:, :, p:p + span] - slabs             # (B, d, span)
    t_ind = np.zeros(h_w)
    t_ind[2 * p: h_w - 2 * p] = 1.0
    weight = np.convolve(np.ones(steps), t_ind)        # (span,)
    loss = float(np.einsum("bom,bom,m->", e_tab, e_tab, weight)) * scale

    if p:
        tgt_l = _table_windows(slabs, 0, steps, 2 * p)         # cols s+t
        diff_l = shat_l - tgt_l
        tgt_r = _table_windows(slabs, h_w - 2 * p, steps, 2 * p)
        diff_r = shat_r - tgt_r
        loss += scale * (float(np.dot(diff_l.ravel(), diff_l.ravel()))
                         + float(np.dot(diff_r.ravel(), diff_r.ravel())))
    if not np.isfinite(loss):
        raise NumericFailureError("non-finite loss", where="loss")

    # =======================================================================
    # Backward
    grads = zeros_like_params(params)
    two_s = 2.0 * scale

    dtab2 = np.zeros_like(tab2)
    dtab2[:, :, p:p + span] = (two_s * weight) * e_tab

    delu_tab, dw2, db2 = conv1d_backward(elu_tab, w2, dtab2)
    grads.dec2_w += dw2
    grads.dec2_b += db2

    da3_left = da3_right = None
    if p:
        dsh_l = two_s * diff_l
        dsh_r = two_s * diff_r
        dpatch2_l = _patch_conv_backward_input(dsh_l, w2, 4 * p)
        dpatch2_r = _patch_conv_backward_input(dsh_r, w2, 4 * p)
        grads.dec2_w += _patch_conv_backward_kernel(patch2_l, dsh_l, k)
        grads.dec2_w += _patch_conv_backward_kernel(patch2_r, dsh_r, k)
        grads.dec2_b += dsh_l.sum(axis=(0, 2, 3)) + dsh_r.sum(axis=(0, 2, 3))
        da3_left = dpatch2_l[:, :, :, p:2 * p]
        da3_right = dpatch2_r[:, :, :, 2 * p:3 * p]
        _fold_windows(delu_tab, dpatch2_l[:, :, :, 2 * p:], 2 * p)
        _fold_windows(delu_tab, dpatch2_r[:, :, :, :2 * p], h_w - 2 * p)

    dz_tab = delu_tab * elu_grad_from_output(elu_tab)

    # conv1 interior backward
    dc1 = np.matmul(dz_tab, sin_t.transpose(0, 2, 1))  # (B, hid, c)
    dc2 = np.matmul(dz_tab, cos_t.transpose(0, 2, 1))
    dsin_t = np.matmul(c1.transpose(0, 2, 1), dz_tab)  # (B, c, U)
    dcos_t = np.matmul(c2.transpose(0, 2, 1), dz_tab)
    dconst = dz_tab.sum(axis=2)                        # (B, hid)
    grads.dec1_b += dconst.sum(axis=0)
    doff = dconst @ wsum                               # (B, c)
    grads.dec1_w += np.einsum("bo,bi->oi", dconst, b_off)[:, :, None] * np.ones(k)

    dwc = a[:, None, :] * dc1
    dws = a[:, None, :] * dc2
    damp = np.einsum("boi,boi->bi", dc1, wc) + np.einsum("boi,boi->bi", dc2, ws)
    grads.dec1_w += np.einsum("boi,bik->oik", dwc, cos_b)
    grads.dec1_w += np.einsum("boi,bik->oik", dws, sin_b)
    # frequency dependence of the kernel transforms
    u1s = np.einsum("oik,bik,k->boi", w1, sin_b, kc)
    u1c = np.einsum("oik,bik,k->boi", w1, cos_b, kc)
    dfreq = np.einsum("boi,boi->bi", dws, u1c) - np.einsum("boi,boi->bi", dwc, u1s)

    # conv1 edge backward
    if p:
        dz_left = da3_left * elu_grad_from_output(a3_left)
        dz_right = da3_right * elu_grad_from_output(a3_right)
        grads.dec1_w += _patch_conv_backward_kernel(patch1_l, dz_left, k)
        grads.dec1_w += _patch_conv_backward_kernel(patch1_r, dz_right, k)
        grads.dec1_b += dz_left.sum(axis=(0, 2, 3)) + dz_right.sum(axis=(0, 2, 3))
        dpatch1_l = _patch_conv_backward_input(dz_left, w1, 3 * p)
        dpatch1_r = _patch_conv_backward_input(dz_right, w1, 3 * p)

        pl = dpatch1_l[:, :, :, p:]
        pr = dpatch1_r[:, :, :, :2 * p]
        damp += np.einsum("bism,bism->bi", pl, sview_l)
        damp += np.einsum("bism,bism->bi", pr, sview_r)
        doff += pl.sum(axis=(2, 3)) + pr.sum(axis=(2, 3))
        _fold_windows(dsin_t, a[:, :, None, None] * pl, p)
        _fold_windows(dsin_t, a[:, :, None, None] * pr, h_w - p)

    # sinusoid-stage gradients from the accumulated table cotangents
    rot = dsin_t * cos_t - dcos_t * sin_t
    dphi = 2.0 * np.pi * rot.sum(axis=2)
    dfreq += 2.0 * np.pi * dt * np.einsum("bim,m->bi", rot, um.astype(np.float64))

    encode_backward(cache, params, cfg, dphi, dfreq, damp, doff, grads)
    return loss, grads


def _table_windows(tab: np.ndarray, start: int, steps: int, width: int):
    """Read-only view v[b, ch, s, j] = tab[b, ch, start + s + j].

    `start` is a table column index; callers pass window positions already
    offset so that window s column j lands on table column start+s+j.
    """
    b, ch, u_len = tab.shape
    if start + steps - 1 + width - 1 >= u_len or start < 0:
        raise InvalidArgumentError("table window out of range")
    sb, sc, su = tab.strides
    return np.lib.stride_tricks.as_strided(
        tab[:, :, start:], shape=(b, ch, steps, width),
        strides=(sb, sc, su, su), writeable=False)


def _patch_conv(patch: np.ndarray, w: np.ndarray, n_out: int) -> np.ndarray:
    """Valid cross-correlation along the last axis: patch (B,Ci,S,W) with
    kernel (Co,Ci,K) -> (B,Co,S,n_out), n_out = W-K+1."""
    b, ci, s, width = patch.shape
    k = w.shape[2]
    sb, sc, ss, sw = patch.strides
    win = np.lib.stride_tricks.as_strided(
        patch, shape=(b, ci, s, n_out, k), strides=(sb, sc, ss, sw, sw),
        writeable=False)
    return np.einsum("oik,bistk->bost", w, win, optimize=True)


def _patch_conv_backward_kernel(patch: np.ndarray, dy: np.ndarray, k: int):
    """d kernel for _patch_conv: (B,Ci,S,W) x (B,Co,S,T) -> (Co,Ci,K)."""
    b, ci, s, width = patch.shape
    n_out = dy.shape[3]
    sb, sc, ss, sw = patch.strides
    win = np.lib.stride_tricks.as_strided(
        patch, shape=(b, ci, s, n_out, k), strides=(sb, sc, ss, sw, sw),
        writeable=False)
    return np.einsum("bost,bistk->oik", dy, win, optimize=True)


def _patch_conv_backward_input(dy: np.ndarray, w: np.ndarray, width: int):
    """d patch for _patch_conv: full correlation of dy with the kernel."""
    b, co, s, n_out = dy.shape
    ci, k = w.shape[1], w.shape[2]
    dpatch = np.zeros((b, ci, s, width))
    for kk in range(k):
        contrib = np.tensordot(w[:, :, kk], dy, axes=([0], [1]))  # (ci,B,S,T)
        dpatch[:, :, :, kk:kk + n_out] += contrib.transpose(1, 0, 2, 3)
    return dpatch


def _fold_windows(tab_grad: np.ndarray, dwin: np.ndarray, start: int) -> None:
    """Adjoint of _table_windows: accumulate dwin[b,ch,s,j] into
    tab_grad[b,ch,start+s+j] (shift-and-add over the narrow j axis)."""
    steps = dwin.shape[2]
    for j in range(dwin.shape[3]):
        tab_grad[:, :, start + j: start + j + steps] += dwin[:, :, :, j]
