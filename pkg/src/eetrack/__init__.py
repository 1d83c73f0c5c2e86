"""Single-stream ViT tracker with dynamic early exit and blur-robust training."""

__version__ = "0.1.0"

from .config import LossWeights, RunConfig, TrackerConfig, TrainConfig
from .head import BBox

__all__ = ["BBox", "LossWeights", "RunConfig", "TrackerConfig", "TrainConfig",
           "__version__"]
