import dataclasses
import os

import numpy as np
import pytest

from phasemotion.errors import InvalidArgumentError, NumericFailureError
from phasemotion.lossgrad import loss_and_grad
from phasemotion.motiondata import MotionClip, fit_normalization, generate_corpus
from phasemotion.network import ModelConfig, PARAM_FIELDS, init_params, load_checkpoint
from phasemotion.train import (AdamState, TrainConfig, adam_step,
                               build_segment_index, configs_from_mapping,
                               parse_config_file, train)


def _ones_params(cfg, value=1.0):
    p = init_params(cfg, seed=0)
    for n in PARAM_FIELDS:
        getattr(p, n)[:] = value
    return p


TINY = ModelConfig(d=1, c=1, window=4, hidden=1, kernel=1)


# ---------------------------------------------------------------------------
# optimizer


def test_train_config_validation():
    with pytest.raises(InvalidArgumentError):
        TrainConfig(lr=0.0)
    with pytest.raises(InvalidArgumentError):
        TrainConfig(weight_decay=-1.0)
    with pytest.raises(InvalidArgumentError):
        TrainConfig(beta1=1.0)
    with pytest.raises(InvalidArgumentError):
        TrainConfig(batch=0)
    with pytest.raises(InvalidArgumentError):
        TrainConfig(max_iters=-1)
    with pytest.raises(InvalidArgumentError):
        TrainConfig(eval_every=0)
    TrainConfig(max_iters=0)       # explicitly allowed
    TrainConfig(weight_decay=0.0)  # decay off


def test_adam_first_step_pinned_value():
    # unit parameter, unit gradient, defaults: the decoupled-decay update is
    # p' = (1 - lr/(1+eps)) * (1 - lr*wd), decay applied after the step
    p = _ones_params(TINY)
    g = _ones_params(TINY)
    st = AdamState.fresh(p)
    adam_step(p, g, st, TrainConfig())
    oracle = (1.0 - 1e-4 / (1.0 + 1e-8)) * (1.0 - 1e-4 * 5e-4)
    for n in PARAM_FIELDS:
        assert np.abs(getattr(p, n) - oracle).max() < 1e-12
    assert st.step == 1


def test_adam_zero_grad_is_fixed_point_without_decay():
    p = _ones_params(TINY, value=0.7)
    g = _ones_params(TINY, value=0.0)
    st = AdamState.fresh(p)
    cfg = TrainConfig(weight_decay=0.0)
    for _ in range(3):
        adam_step(p, g, st, cfg)
    for n in PARAM_FIELDS:
        assert np.array_equal(getattr(p, n), np.full_like(getattr(p, n), 0.7))


def test_adam_zero_grad_pure_decay():
    p = _ones_params(TINY, value=2.0)
    g = _ones_params(TINY, value=0.0)
    st = AdamState.fresh(p)
    cfg = TrainConfig()
    adam_step(p, g, st, cfg)
    adam_step(p, g, st, cfg)
    want = 2.0 * (1.0 - 1e-4 * 5e-4) ** 2
    for n in PARAM_FIELDS:
        assert np.abs(getattr(p, n) - want).max() < 1e-15


def test_adam_rejects_nonfinite_gradient():
    p = _ones_params(TINY)
    g = _ones_params(TINY)
    g.dec2_b[0] = np.nan
    with pytest.raises(NumericFailureError) as e:
        adam_step(p, g, AdamState.fresh(p), TrainConfig())
    assert e.value.where == "dec2_b"


# ---------------------------------------------------------------------------
# segment index


def test_segment_index_respects_clip_boundaries():
    clips = [
        MotionClip(states=np.arange(2 * 120, dtype=float).reshape(2, 120),
                   dt=0.01, name="a", base_motion_id="a"),
        MotionClip(states=np.arange(2 * 130, dtype=float).reshape(2, 130),
                   dt=0.01, name="b", base_motion_id="b"),
    ]
    norm = fit_normalization(clips)
    mcfg = ModelConfig(d=2, c=1, window=100, hidden=1, kernel=1, horizon=20)
    idx = build_segment_index(clips, norm, mcfg)
    assert idx.width == 120
    assert len(idx.starts) == 1 + 11   # (120-120+1) + (130-120+1)
    for start, ci in zip(idx.starts, idx.clip_of):
        assert start + idx.width <= clips[ci].n_frames
    got = idx.gather(np.arange(len(idx.starts)))
    assert got.shape == (12, 2, 120)


def test_segment_index_needs_one_long_clip():
    clips = [MotionClip(states=np.zeros((1, 50)), dt=0.01, name="a",
                        base_motion_id="a")]
    norm = fit_normalization(clips)
    mcfg = ModelConfig(d=1, c=1, window=40, hidden=1, kernel=1, horizon=20)
    with pytest.raises(InvalidArgumentError):
        build_segment_index(clips, norm, mcfg)


def test_segment_index_rejects_d_mismatch():
    clips = [MotionClip(states=np.zeros((3, 50)), dt=0.01, name="a",
                        base_motion_id="a")]
    norm = fit_normalization(clips)
    mcfg = ModelConfig(d=2, c=1, window=40, hidden=1, kernel=1)
    with pytest.raises(InvalidArgumentError):
        build_segment_index(clips, norm, mcfg)


# ---------------------------------------------------------------------------
# the loop


@pytest.fixture(scope="module")
def small_clips():
    return generate_corpus(11, 3, 2, 6.0)


def _small_cfgs(horizon=0, **train_kw):
    mcfg = ModelConfig(d=2, c=2, window=20, hidden=2, kernel=3, horizon=horizon)
    kw = dict(batch=4, max_iters=12, eval_every=5, seed=2)
    kw.update(train_kw)
    return TrainConfig(**kw), mcfg


def test_train_is_deterministic(tmp_path, small_clips):
    tcfg, mcfg = _small_cfgs()
    ra = train(small_clips, tcfg, mcfg, str(tmp_path / "a"))
    rb = train(small_clips, tcfg, mcfg, str(tmp_path / "b"))
    assert open(ra.log_path, "rb").read() == open(rb.log_path, "rb").read()
    assert open(ra.checkpoint_path, "rb").read() == open(rb.checkpoint_path, "rb").read()
    rc = train(small_clips, dataclasses.replace(tcfg, seed=3), mcfg,
               str(tmp_path / "c"))
    assert open(ra.log_path, "rb").read() != open(rc.log_path, "rb").read()


def test_first_logged_loss_is_first_batch_loss(tmp_path, small_clips):
    tcfg, mcfg = _small_cfgs()
    res = train(small_clips, tcfg, mcfg, str(tmp_path / "run"))
    norm = fit_normalization(small_clips)
    idx = build_segment_index(small_clips, norm, mcfg)
    rng = np.random.default_rng(tcfg.seed)
    pick = rng.integers(0, len(idx.starts), size=tcfg.batch)
    want, _ = loss_and_grad(idx.gather(pick), init_params(mcfg, seed=tcfg.seed), mcfg)
    assert res.losses[0] == want
    first_line = open(res.log_path).read().splitlines()[1]
    assert first_line == f"0,{want!r}"


def test_train_zero_iters_returns_init(tmp_path, small_clips):
    tcfg, mcfg = _small_cfgs(max_iters=0)
    res = train(small_clips, tcfg, mcfg, str(tmp_path / "zero"))
    init = init_params(mcfg, seed=tcfg.seed)
    for n in PARAM_FIELDS:
        assert np.array_equal(getattr(res.params, n), getattr(init, n))
    assert res.losses.shape == (0,)
    assert open(res.log_path).read() == "iter,loss\n"
    assert os.path.exists(res.checkpoint_path)


def test_train_snapshots(tmp_path, small_clips):
    tcfg, mcfg = _small_cfgs(max_iters=12, eval_every=5)
    res = train(small_clips, tcfg, mcfg, str(tmp_path / "snap"))
    names = [os.path.basename(p) for p in res.snapshot_paths]
    assert names == ["model_00005.ckpt", "model_00010.ckpt"]
    for p in res.snapshot_paths:
        load_checkpoint(p)


def test_train_batch_larger_than_segments(tmp_path):
    clips = [MotionClip(states=np.random.default_rng(0).standard_normal((2, 21)),
                        dt=0.01, name="a", base_motion_id="a")]
    tcfg, mcfg = _small_cfgs(batch=10)
    with pytest.raises(InvalidArgumentError):
        train(clips, tcfg, mcfg, str(tmp_path / "small"))


def test_checkpoint_restores_training_output(tmp_path, small_clips):
    tcfg, mcfg = _small_cfgs()
    res = train(small_clips, tcfg, mcfg, str(tmp_path / "ck"))
    params, cfg, norm = load_checkpoint(res.checkpoint_path)
    assert cfg == mcfg
    for n in PARAM_FIELDS:
        assert np.array_equal(getattr(params, n), getattr(res.params, n))
    want = fit_normalization(small_clips)
    assert np.array_equal(norm.mean, want.mean)
    assert np.array_equal(norm.std, want.std)


def test_progress_callback_cadence(tmp_path, small_clips):
    tcfg, mcfg = _small_cfgs(max_iters=11, eval_every=5)
    seen = []
    train(small_clips, tcfg, mcfg, str(tmp_path / "prog"),
          progress=lambda it, loss: seen.append(it))
    assert seen == [0, 5, 10]


# ---------------------------------------------------------------------------
# config files


def test_parse_config_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\nlr = 1e-3\nbatch=8\n\nwindow=40\nhidden = 4\n")
    mapping = parse_config_file(str(p))
    assert mapping == {"lr": "1e-3", "batch": "8", "window": "40", "hidden": "4"}
    tcfg, mcfg = configs_from_mapping(mapping, d=3)
    assert tcfg.lr == 1e-3
    assert tcfg.batch == 8
    assert mcfg.window == 40
    assert mcfg.hidden == 4
    assert mcfg.d == 3


def test_parse_config_rejects_bad_lines(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("lr 0.1\n")
    with pytest.raises(InvalidArgumentError):
        parse_config_file(str(p))


def test_configs_reject_unknown_key():
    with pytest.raises(InvalidArgumentError):
        configs_from_mapping({"learning_rate": "0.1"}, d=2)


def test_monotone_smoke_standard_corpus(acceptance_dir):
    # the real training runs must actually descend
    for sub in ("n0", "n100"):
        log = os.path.join(acceptance_dir, sub, "loss_log.csv")
        losses = np.loadtxt(log, delimiter=",", skiprows=1, usecols=1)
        assert losses.shape[0] == 5000
        assert np.median(losses[4500:]) < np.median(losses[:500])
