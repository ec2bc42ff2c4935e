"""LLM-as-policy reinforcement learning workbench with from-scratch baselines."""
from ._jit import JIT_ENABLED
from .core import EpisodeLog, RewardSet, StepRecord, discounted_return
from .rng import SeededRng, rng_substream

__version__ = "0.1.0"

__all__ = [
    "JIT_ENABLED",
    "EpisodeLog",
    "RewardSet",
    "StepRecord",
    "discounted_return",
    "SeededRng",
    "rng_substream",
]
