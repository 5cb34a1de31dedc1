import numpy as np
import pytest

from oracles import loss_naive
from phasemotion.errors import InvalidArgumentError
from phasemotion.lossgrad import (TrainingSample, _fast_applicable,
                                  _generic_engine, loss_and_grad)
from phasemotion.network import (ModelConfig, PARAM_FIELDS, flatten_params,
                                 init_params, unflatten_params)


def _cfg(**kw):
    base = dict(d=2, c=2, window=8, hidden=3, kernel=3, dt=0.01, horizon=0)
    base.update(kw)
    return ModelConfig(**base)


def _delta_params(cfg):
    """Identity network: delta kernels everywhere, dead phase head."""
    p = init_params(cfg, seed=0)
    mid = cfg.kernel // 2
    for name in PARAM_FIELDS:
        getattr(p, name)[:] = 0.0
    p.enc1_w[0, 0, mid] = 1.0
    p.enc2_w[0, 0, mid] = 1.0
    p.dec1_w[0, 0, mid] = 1.0
    p.dec2_w[0, 0, mid] = 1.0
    return p


def test_engine_dispatch_boundary():
    # the table path needs window >= 2*(kernel-1); kernel 7 at window 8 spills
    assert _fast_applicable(4, _cfg(kernel=3))
    assert not _fast_applicable(4, _cfg(kernel=7))


def test_loss_matches_naive_reference():
    rng = np.random.default_rng(0)
    for horizon, kernel in [(0, 3), (3, 3), (0, 7), (3, 7)]:
        cfg = _cfg(horizon=horizon, kernel=kernel)
        p = init_params(cfg, seed=1)
        slabs = rng.standard_normal((3, 2, 8 + horizon))
        got, _ = loss_and_grad(slabs, p, cfg)
        want = loss_naive(slabs, p, cfg)
        assert abs(got - want) < 1e-9 * max(1.0, abs(want))


def test_perfect_reconstruction_zero_loss_zero_grads():
    # a constant slab through the identity network reproduces itself; the
    # fast path is table-based and lands on exact zeros
    for horizon in (0, 2):
        cfg = _cfg(d=1, c=1, window=8, hidden=1, kernel=1, horizon=horizon)
        p = _delta_params(cfg)
        slab = np.full((2, 1, 8 + horizon), 0.5)
        loss, g = loss_and_grad(slab, p, cfg)
        assert loss == 0.0
        assert all(np.abs(getattr(g, n)).max() == 0.0 for n in PARAM_FIELDS)


def test_perfect_reconstruction_generic_engine():
    # kernel 7 at window 8 forces the generic path, whose FFT convolutions
    # leave ~1e-17 dust on constants; still a numerical zero
    for horizon in (0, 2):
        cfg = _cfg(d=1, c=1, window=8, hidden=1, kernel=7, horizon=horizon)
        assert not _fast_applicable(2, cfg)
        p = _delta_params(cfg)
        slab = np.full((2, 1, 8 + horizon), 0.5)
        loss, g = loss_and_grad(slab, p, cfg)
        assert loss < 1e-30
        assert all(np.abs(getattr(g, n)).max() < 1e-15 for n in PARAM_FIELDS)
    # the all-zero slab is exact in both engines
    cfg = _cfg(d=1, c=1, window=8, hidden=1, kernel=7, horizon=2)
    loss, g = loss_and_grad(np.zeros((2, 1, 10)), _delta_params(cfg), cfg)
    assert loss == 0.0
    assert all(np.abs(getattr(g, n)).max() == 0.0 for n in PARAM_FIELDS)


def test_multistep_loss_decomposes():
    # N=2 loss equals the sum of the three per-step MSEs with the phase
    # advanced by i*f*dt, all from the window-0 encoding
    from phasemotion.network import decode_batch, encode_batch
    cfg = _cfg(horizon=2)
    p = init_params(cfg, seed=2)
    rng = np.random.default_rng(2)
    slabs = rng.standard_normal((4, 2, 10))
    got, _ = loss_and_grad(slabs, p, cfg)
    st = encode_batch(slabs[:, :, :8], p, cfg)
    total = 0.0
    for i in range(3):
        shat = decode_batch(st.phi + i * st.freq * cfg.dt, st.freq, st.amp,
                            st.offset, p, cfg)
        diff = shat - slabs[:, :, i:i + 8]
        total += float(np.sum(diff * diff))
    total /= 4 * 2 * 8
    assert abs(got - total) < 1e-9


def test_fast_and_generic_engines_agree():
    rng = np.random.default_rng(3)
    for horizon in (0, 4):
        cfg = _cfg(d=3, c=2, window=12, hidden=3, kernel=5, horizon=horizon)
        assert _fast_applicable(3, cfg)
        p = init_params(cfg, seed=4)
        slabs = rng.standard_normal((3, 3, 12 + horizon))
        fast_loss, fast_g = loss_and_grad(slabs, p, cfg)
        gen_loss, gen_g = _generic_engine(slabs, p, cfg)
        assert abs(fast_loss - gen_loss) < 1e-12 * max(1.0, abs(gen_loss))
        for name in PARAM_FIELDS:
            a, b = getattr(fast_g, name), getattr(gen_g, name)
            scale = max(1.0, float(np.abs(b).max()))
            assert np.abs(a - b).max() < 1e-11 * scale


def test_gradient_matches_finite_differences():
    # the wide audit lives in the acceptance suite; this is the quick version
    eps = 1e-6
    for seed, horizon in [(0, 0), (1, 3)]:
        cfg = _cfg(horizon=horizon)
        rng = np.random.default_rng(seed)
        p = init_params(cfg, seed=seed)
        slabs = rng.standard_normal((3, 2, 8 + horizon))
        _, g = loss_and_grad(slabs, p, cfg)
        flat = flatten_params(p)
        gflat = flatten_params(g)
        worst = 0.0
        for j in range(flat.size):
            up = flat.copy()
            up[j] += eps
            down = flat.copy()
            down[j] -= eps
            lp, _ = loss_and_grad(slabs, unflatten_params(up, cfg), cfg)
            lm, _ = loss_and_grad(slabs, unflatten_params(down, cfg), cfg)
            fd = (lp - lm) / (2 * eps)
            worst = max(worst, abs(fd - gflat[j])
                        / max(abs(fd), abs(gflat[j]), 1e-6))
        assert worst < 1e-4


def test_batch_validation():
    cfg = _cfg(horizon=2)
    p = init_params(cfg, seed=0)
    with pytest.raises(InvalidArgumentError):
        loss_and_grad([], p, cfg)
    with pytest.raises(InvalidArgumentError):
        loss_and_grad(np.zeros((2, 10)), p, cfg)
    with pytest.raises(InvalidArgumentError):
        loss_and_grad(np.zeros((1, 3, 10)), p, cfg)   # wrong d
    with pytest.raises(InvalidArgumentError):
        loss_and_grad(np.zeros((1, 2, 8)), p, cfg)    # horizon needs width 10


def test_training_sample_list_input():
    cfg = _cfg(horizon=1)
    p = init_params(cfg, seed=5)
    rng = np.random.default_rng(5)
    arr = rng.standard_normal((2, 2, 9))
    samples = [TrainingSample(values=arr[i]) for i in range(2)]
    a, _ = loss_and_grad(samples, p, cfg)
    b, _ = loss_and_grad(arr, p, cfg)
    assert a == b


def test_loss_scales_as_batch_mean():
    # duplicating the batch leaves the loss unchanged
    cfg = _cfg(horizon=1)
    p = init_params(cfg, seed=6)
    rng = np.random.default_rng(6)
    slab = rng.standard_normal((1, 2, 9))
    one, _ = loss_and_grad(slab, p, cfg)
    two, _ = loss_and_grad(np.concatenate([slab, slab]), p, cfg)
    assert abs(one - two) < 1e-12 * max(1.0, abs(one))
