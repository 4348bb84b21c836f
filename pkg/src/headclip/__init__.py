"""Zero-shot anomaly detection with per-head weighted consistent self-attention, at desk scale."""

from .config import ModelConfig, TrainConfig
from .model import HeadCLIPState

__version__ = "0.1.0"
__all__ = ["ModelConfig", "TrainConfig", "HeadCLIPState"]
