"""Periodic latent representations for motion clips.

The package is organized around a small number of load-bearing pieces:

- :mod:`phasemotion.motiondata` -- clip container, synthetic corpus,
  frequency augmentation, windowing, normalization, serialization.
- :mod:`phasemotion.spectral` -- hand-rolled real FFT plus the
  frequency/amplitude/offset readout and its adjoint.
- :mod:`phasemotion.network` -- convolutional encoder/decoder with a
  periodic bottleneck, written against plain numpy arrays.
- :mod:`phasemotion.lossgrad` -- reconstruction + forward-prediction
  loss with hand-derived gradients.
- :mod:`phasemotion.train` -- Adam loop, sampling, loss logging.
- :mod:`phasemotion.runtime` -- latent playback: propagation,
  re-encoding, transition blending, PD tracking, reward metrics.
"""

from .errors import InvalidArgumentError, NumericFailureError, PhaseMotionError
from .motiondata import (
    DT_DEFAULT,
    BumpSpec,
    DatasetManifest,
    MotionClip,
    NormStats,
    TrajectorySegment,
    augment_frequencies,
    corpus_bumps,
    generate_corpus,
    load_clip,
    load_corpus,
    save_clip,
    save_corpus,
    segments,
)
from .network import (
    LatentState,
    ModelConfig,
    ModelParams,
    decode,
    encode,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .spectral import SpectralParams, extract_params, irfft, rfft

__version__ = "0.1.0"

__all__ = [
    "BumpSpec",
    "DT_DEFAULT",
    "DatasetManifest",
    "InvalidArgumentError",
    "LatentState",
    "ModelConfig",
    "ModelParams",
    "MotionClip",
    "NormStats",
    "NumericFailureError",
    "PhaseMotionError",
    "SpectralParams",
    "TrajectorySegment",
    "augment_frequencies",
    "corpus_bumps",
    "decode",
    "encode",
    "extract_params",
    "generate_corpus",
    "init_params",
    "irfft",
    "load_checkpoint",
    "load_clip",
    "load_corpus",
    "rfft",
    "save_checkpoint",
    "save_clip",
    "save_corpus",
    "segments",
    "__version__",
]
