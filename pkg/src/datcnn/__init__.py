"""3D CNN pipeline for dopamine-transporter volume classification.

Provides volume preprocessing (affine resampling, intensity normalization),
two volumetric CNN families with ReLU/SELU variants trained from scratch,
stratified cross-validated evaluation with ROC/AUC, gradient saliency maps,
and a synthetic striatal phantom generator for end-to-end experiments.
"""

__version__ = "0.1.0"

from .errors import DataError, NumericError
from .seeds import derive_seed

__all__ = ["DataError", "NumericError", "derive_seed", "__version__"]
