"""feedflow: a chunk-level short-video feeds simulator with a flow-network
prefetch/bitrate controller, baselines, and an experiment harness."""

__version__ = "0.1.0"

from . import controller, gfn, harness, media, objective, sim, traces

__all__ = [
    "__version__",
    "controller",
    "gfn",
    "harness",
    "media",
    "objective",
    "sim",
    "traces",
]
