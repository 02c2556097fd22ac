"""Domain adaptation via swapped-autoencoder disentanglement and graph convolutions."""

from .autodiff import Tensor, Tape, finite_diff_check
from .estimator import SwapGraphClassifier

__version__ = "0.1.0"

__all__ = ["Tensor", "Tape", "finite_diff_check", "SwapGraphClassifier", "__version__"]
