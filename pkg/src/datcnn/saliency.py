"""Gradient saliency maps: which voxels move a class score the most."""

import numpy as np

from . import models as M
from .tensor import assert_finite


def logit_input_gradient(model, volume, target_class):
    """Signed gradient of the target-class pre-softmax score w.r.t. the input.

    Differentiates the class score (not the post-softmax probability), with
    dropout off, and returns a map shaped like the volume.
    """
    if target_class not in range(model.arch.classes):
        raise ValueError(f"target class must be in 0..{model.arch.classes - 1}")
    volume = np.asarray(volume)
    x = volume[None, None].astype(np.float32, copy=False)
    logits, caches = M._forward_cached(model, x, "infer", 0)
    grad_logits = np.zeros_like(logits)
    grad_logits[0, target_class] = 1.0
    grad_input, _ = M._backward_from_logits(model, caches, grad_logits)
    grad = grad_input[0, 0]
    assert_finite(grad, "saliency gradient")
    return grad


def saliency_map(model, volume, target_class):
    """Absolute input-gradient map for a class score, same shape as the input."""
    return np.abs(logit_input_gradient(model, volume, target_class))


def saliency_projection(vol_map):
    """Maximum-intensity projection along the axial (depth) axis."""
    vol_map = np.asarray(vol_map)
    if vol_map.ndim != 3:
        raise ValueError("expected a 3-D map")
    return vol_map.max(axis=0)
