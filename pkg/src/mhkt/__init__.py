"""Multi-level heterogeneous knowledge transfer from scattering-center sets to SAR images."""

__version__ = "0.1.0"

from .ascsim import RadarConfig, ScatteringCenter
from .estimator import MHKTClassifier
from .trainer import LossWeights, TrainConfig, train

__all__ = ["LossWeights", "MHKTClassifier", "RadarConfig", "ScatteringCenter", "TrainConfig", "train", "__version__"]
