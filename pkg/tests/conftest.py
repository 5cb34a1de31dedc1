"""Shared fixtures.

Two tiers: a tiny corpus + quickly trained checkpoints for protocol and
structure tests, and the full-size training run behind the experiment
assertions. The full run costs ~15 CPU minutes, so its artifacts are cached
under .cache/acceptance keyed by every input that could change the result
(corpus args, train/model configs, and the training-relevant source files).
Delete the cache directory to force a rebuild.
"""

import hashlib
import json
import os

import pytest

from phasemotion import motiondata
from phasemotion.network import ModelConfig, load_checkpoint
from phasemotion.train import TrainConfig, train

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
_CACHE_ROOT = os.path.join(REPO_ROOT, ".cache", "acceptance")

# The standard corpus and the two training runs the experiments compare.
CORPUS_ARGS = dict(seed=7, n_base=34, n_joints=14, duration_s=6.0)
FACTORS = (0.5, 0.75, 1.0, 1.25, 1.5)
TRAIN_ARGS = dict(lr=1e-4, weight_decay=5e-4, batch=50, max_iters=5000,
                  seed=1, eval_every=500)
# hidden/kernel are scaled down from the module defaults to fit the CPU
# budget; everything else is pinned.
MODEL_ARGS = dict(c=8, window=100, dt=0.01, hidden=8, kernel=9)

_TRAIN_SOURCES = ("motiondata.py", "spectral.py", "network.py",
                  "lossgrad.py", "train.py")


def _source_digest() -> str:
    h = hashlib.sha256()
    src = os.path.join(REPO_ROOT, "src", "phasemotion")
    for name in _TRAIN_SOURCES:
        with open(os.path.join(src, name), "rb") as fh:
            h.update(fh.read())
    return h.hexdigest()


def acceptance_cache_dir() -> str:
    blob = json.dumps([CORPUS_ARGS, FACTORS, TRAIN_ARGS, MODEL_ARGS,
                       _source_digest()], sort_keys=True)
    key = hashlib.sha256(blob.encode()).hexdigest()[:16]
    return os.path.join(_CACHE_ROOT, key)


def build_standard_corpus():
    base = motiondata.generate_corpus(**CORPUS_ARGS)
    clips = [w for c in base for w in motiondata.augment_frequencies(c, FACTORS)]
    truth = motiondata.corpus_bumps(**CORPUS_ARGS)
    return clips, truth


def ensure_acceptance_artifacts(progress=None) -> str:
    """Train the horizon-0 and horizon-100 checkpoints once, then reuse."""
    out = acceptance_cache_dir()
    stamp = os.path.join(out, "BUILT")
    if os.path.exists(stamp):
        return out
    clips, _ = build_standard_corpus()
    for horizon, sub in ((0, "n0"), (100, "n100")):
        mcfg = ModelConfig(d=clips[0].d, horizon=horizon, **MODEL_ARGS)
        tcfg = TrainConfig(**TRAIN_ARGS)
        train(clips, tcfg, mcfg, os.path.join(out, sub), progress=progress)
    with open(stamp, "w") as fh:
        fh.write(os.path.basename(out) + "\n")
    return out


# ---------------------------------------------------------------------------
# Tiny tier


@pytest.fixture(scope="session")
def tiny_corpus():
    """30 small clips (6 bases x 5 factors, 5 joints) plus bump truth."""
    base = motiondata.generate_corpus(7, 6, 5, 6.0)
    clips = [w for c in base for w in motiondata.augment_frequencies(c, FACTORS)]
    truth = motiondata.corpus_bumps(7, 6, 5, 6.0)
    return clips, truth


@pytest.fixture(scope="session")
def tiny_model_cfg():
    return ModelConfig(d=5, c=3, window=60, hidden=4, kernel=7)


@pytest.fixture(scope="session")
def tiny_ckpts(tmp_path_factory, tiny_corpus, tiny_model_cfg):
    """Two briefly trained checkpoints (horizon 0 and 12) for pipeline tests
    that need real files but not convergence."""
    import dataclasses
    clips, _ = tiny_corpus
    root = tmp_path_factory.mktemp("tiny_ckpts")
    tcfg = TrainConfig(batch=10, max_iters=40, eval_every=20, seed=3)
    paths = {}
    for horizon, tag in ((0, "t0"), (12, "tN")):
        mcfg = dataclasses.replace(tiny_model_cfg, horizon=horizon)
        res = train(clips, tcfg, mcfg, str(root / tag))
        paths[tag] = res.checkpoint_path
    return paths


@pytest.fixture(scope="session")
def tiny_model(tiny_ckpts):
    return load_checkpoint(tiny_ckpts["t0"])


# ---------------------------------------------------------------------------
# Full tier (cached on disk, see module docstring)


@pytest.fixture(scope="session")
def standard_corpus():
    return build_standard_corpus()


@pytest.fixture(scope="session")
def acceptance_dir():
    return ensure_acceptance_artifacts()


@pytest.fixture(scope="session")
def model_n0(acceptance_dir):
    return load_checkpoint(os.path.join(acceptance_dir, "n0", "model.ckpt"))


@pytest.fixture(scope="session")
def model_n100(acceptance_dir):
    return load_checkpoint(os.path.join(acceptance_dir, "n100", "model.ckpt"))
