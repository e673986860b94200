"""Forward and backward passes for every layer kind used by the models.

All functions are pure: results depend only on the explicit arguments (plus
the seed, for dropout). Backward functions return exact chain-rule gradients
of the matching forward function.

Convolution uses the flipped-kernel (true convolution) index convention: the
input sample at offset (u, v, w) inside the receptive field is multiplied by
the weight at the spatially mirrored position. Internally the filter bank is
reversed once and applied as a cross-correlation via an im2col/GEMM path.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericError
from .tensor import assert_finite

SELU_ALPHA = 1.6733
SELU_LAMBDA = 1.0507
# Negative saturation of the scaled exponential unit, lim z -> -inf.
SELU_SATURATION = -SELU_LAMBDA * SELU_ALPHA

ACTIVATIONS = ("relu", "selu", "softmax", "linear")


@dataclass
class Conv3D:
    """3D convolution layer: weights (filters, in_channels, k, k, k)."""

    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 0
    activation: str = "linear"

    def __post_init__(self):
        if self.weights.ndim != 5:
            raise ValueError("conv weights must have rank 5")
        k, c, p, q, r = self.weights.shape
        if not (p == q == r):
            raise ValueError("conv kernels must be cubic")
        if self.bias.shape != (k,):
            raise ValueError("bias length must equal the filter count")
        if self.stride < 1 or self.padding < 0:
            raise ValueError("stride must be >= 1 and padding >= 0")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class Dense:
    """Fully connected layer: weights (out_units, in_units)."""

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "linear"

    def __post_init__(self):
        if self.weights.ndim != 2 or self.weights.shape[0] < 1:
            raise ValueError("dense weights must be (out_units, in_units)")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError("bias length must equal the output unit count")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class MaxPool3D:
    """Cubic max pooling with block size M and stride M."""

    block: int

    def __post_init__(self):
        if self.block < 1:
            raise ValueError("pool block must be >= 1")


@dataclass
class DropoutSpec:
    """Dropout configuration: kind is 'standard' or 'alpha', p = drop probability."""

    kind: str = "standard"
    p: float = 0.5

    def __post_init__(self):
        if self.kind not in ("standard", "alpha"):
            raise ValueError(f"unknown dropout kind {self.kind!r}")
        if not 0.0 <= self.p < 1.0:
            raise ValueError("drop probability must lie in [0, 1)")


def conv_output_extent(extent, kernel, stride, padding):
    return (extent + 2 * padding - kernel) // stride + 1


def _as_batch(x, rank):
    """Add a leading batch axis when a single sample is passed."""
    x = np.asarray(x)
    if x.ndim == rank:
        return x[None], True
    if x.ndim == rank + 1:
        return x, False
    raise ValueError(f"expected rank {rank} or {rank + 1}, got {x.ndim}")


# ---------------------------------------------------------------------------
# activations


def activation_forward(kind, z):
    """Apply an activation. Softmax is only defined for vectors."""
    z = np.asarray(z)
    if kind == "linear":
        return z
    if kind == "relu":
        return np.maximum(z, 0)
    if kind == "selu":
        zneg = np.minimum(z, 0)
        return np.where(z >= 0, SELU_LAMBDA * z,
                        SELU_LAMBDA * SELU_ALPHA * np.expm1(zneg))
    if kind == "softmax":
        if z.ndim != 1:
            raise ValueError("softmax input must be a vector")
        return _softmax_rows(z[None])[0]
    raise ValueError(f"unknown activation {kind!r}")


def _softmax_rows(z):
    # max-subtraction keeps the exponentials in range
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _activation_grad(kind, z):
    """d activation / d z, elementwise (not defined for softmax)."""
    if kind == "linear":
        return np.ones_like(z)
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    if kind == "selu":
        zneg = np.minimum(z, 0)
        return np.where(z >= 0, np.asarray(SELU_LAMBDA, dtype=z.dtype),
                        SELU_LAMBDA * SELU_ALPHA * np.exp(zneg)).astype(z.dtype)
    raise ValueError(f"no elementwise gradient for activation {kind!r}")


def activation_backward(kind, z, grad_out):
    """Gradient through an activation given the stored pre-activation."""
    z = np.asarray(z)
    if kind == "softmax":
        raise ValueError("softmax gradient is fused with the loss")
    return grad_out * _activation_grad(kind, z)


# ---------------------------------------------------------------------------
# 3D convolution


def _conv_geometry(layer, x):
    k, c, p, _, _ = layer.weights.shape
    n, cin, d, h, w = x.shape
    if cin != c:
        raise ValueError(f"input has {cin} channels, layer expects {c}")
    s, pad = layer.stride, layer.padding
    do = conv_output_extent(d, p, s, pad)
    ho = conv_output_extent(h, p, s, pad)
    wo = conv_output_extent(w, p, s, pad)
    if min(do, ho, wo) < 1:
        raise ValueError("kernel larger than the padded input")
    return k, c, p, s, pad, (do, ho, wo)


def _im2col(xp, kernel, stride, out_extents):
    """Gather receptive fields into rows: (N * out_voxels, C * kernel**3)."""
    n, c = xp.shape[:2]
    do, ho, wo = out_extents
    win = sliding_window_view(xp, (kernel, kernel, kernel), axis=(2, 3, 4))
    win = win[:, :, ::stride, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 4, 1, 5, 6, 7))
    return cols.reshape(n * do * ho * wo, c * kernel ** 3)


def _pad_input(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad), (pad, pad)))


def _conv3d_affine(layer, x):
    """Pre-activation convolution output plus the padded input."""
    k, c, p, s, pad, out_ext = _conv_geometry(layer, x)
    n = x.shape[0]
    xp = _pad_input(x, pad)
    wf = layer.weights[:, :, ::-1, ::-1, ::-1]  # mirrored: true convolution
    cols = _im2col(xp, p, s, out_ext)
    z = cols @ wf.reshape(k, -1).T.astype(x.dtype, copy=False)
    z += layer.bias.astype(x.dtype, copy=False)
    z = np.ascontiguousarray(
        z.reshape(n, *out_ext, k).transpose(0, 4, 1, 2, 3))
    return z, xp, out_ext


def conv3d_forward(layer, x):
    """Convolve, add bias, apply the layer activation.

    Accepts (C, D, H, W) or batched (N, C, D, H, W) input; filters are
    stacked along the leading output axis.
    """
    xb, single = _as_batch(x, 4)
    z, _, _ = _conv3d_affine(layer, xb)
    out = activation_forward(layer.activation, z) if layer.activation != "linear" else z
    assert_finite(out, "conv3d output")
    return out[0] if single else out


def conv3d_backward(layer, x, grad_out):
    """Gradients of conv3d_forward w.r.t. input, weights and bias."""
    xb, single = _as_batch(x, 4)
    gb, _ = _as_batch(grad_out, 4)
    z, xp, out_ext = _conv3d_affine(layer, xb)
    if gb.shape != z.shape:
        raise ValueError(f"grad shape {gb.shape} does not match output {z.shape}")
    gx, gw, gbias = _conv3d_grads(layer, xp, z, gb, out_ext)
    return (gx[0] if single else gx), gw, gbias


def _conv3d_grads(layer, xp, z, grad_out, out_ext):
    k, c, p, _, _ = layer.weights.shape
    s, pad = layer.stride, layer.padding
    n = xp.shape[0]
    do, ho, wo = out_ext
    if layer.activation != "linear":
        grad_out = grad_out * _activation_grad(layer.activation, z)
    gbias = grad_out.sum(axis=(0, 2, 3, 4), dtype=np.float64).astype(layer.bias.dtype)

    gmat = np.ascontiguousarray(
        grad_out.transpose(0, 2, 3, 4, 1)).reshape(n * do * ho * wo, k)
    cols = _im2col(xp, p, s, out_ext)
    gwf = (gmat.T @ cols).reshape(k, c, p, p, p)
    gw = gwf[:, :, ::-1, ::-1, ::-1].astype(layer.weights.dtype, copy=False)

    wf = layer.weights[:, :, ::-1, ::-1, ::-1].reshape(k, -1)
    gcols = gmat @ wf.astype(gmat.dtype, copy=False)
    gcols = np.ascontiguousarray(
        gcols.reshape(n, do, ho, wo, c, p ** 3).transpose(0, 4, 5, 1, 2, 3))

    gxp = np.zeros_like(xp)
    i = 0
    for u in range(p):
        for v in range(p):
            for w in range(p):
                gxp[:, :, u:u + do * s:s, v:v + ho * s:s, w:w + wo * s:s] += gcols[:, :, i]
                i += 1
    gx = gxp if pad == 0 else gxp[:, :, pad:-pad, pad:-pad, pad:-pad]
    return np.ascontiguousarray(gx), gw, gbias


# ---------------------------------------------------------------------------
# 3D max pooling


def maxpool3d_forward(layer, x):
    """Block maxima over M**3 windows plus the argmax map for backprop.

    Extents not divisible by M are truncated; the argmax map stores the
    winning in-block flat index (first winner in scan order on ties).
    """
    m = layer.block
    xb, single = _as_batch(x, 4)
    n, c, d, h, w = xb.shape
    if min(d, h, w) < m:
        raise ValueError("pool block larger than the input extents")
    db, hb, wb = d // m, h // m, w // m
    crop = xb[:, :, :db * m, :hb * m, :wb * m]
    blocks = crop.reshape(n, c, db, m, hb, m, wb, m)
    blocks = np.ascontiguousarray(blocks.transpose(0, 1, 2, 4, 6, 3, 5, 7))
    flat = blocks.reshape(n, c, db, hb, wb, m ** 3)
    argmax = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]
    if single:
        return out[0], argmax[0]
    return out, argmax


def maxpool3d_backward(argmax, input_shape, block, grad_out):
    """Route gradients to the winning input positions; all others get zero."""
    m = block
    single = len(input_shape) == 4
    if single:
        input_shape = (1,) + tuple(input_shape)
        argmax = argmax[None]
        grad_out = grad_out[None]
    n, c, d, h, w = input_shape
    db, hb, wb = d // m, h // m, w // m
    if argmax.shape != (n, c, db, hb, wb):
        raise ValueError("argmax map does not match the input shape")
    if grad_out.shape != argmax.shape:
        raise ValueError("grad shape does not match the pooled output")
    flat = np.zeros((n, c, db, hb, wb, m ** 3), dtype=grad_out.dtype)
    np.put_along_axis(flat, argmax[..., None], grad_out[..., None], axis=-1)
    blocks = flat.reshape(n, c, db, hb, wb, m, m, m).transpose(0, 1, 2, 5, 3, 6, 4, 7)
    gx = np.zeros(input_shape, dtype=grad_out.dtype)
    gx[:, :, :db * m, :hb * m, :wb * m] = blocks.reshape(n, c, db * m, hb * m, wb * m)
    return gx[0] if single else gx


# ---------------------------------------------------------------------------
# dense


def dense_forward(layer, x):
    """Affine map plus activation for vectors or row batches."""
    xb, single = _as_batch(x, 1)
    if xb.shape[1] != layer.weights.shape[1]:
        raise ValueError(
            f"input length {xb.shape[1]} does not match weights {layer.weights.shape}")
    z = xb @ layer.weights.T.astype(xb.dtype, copy=False) + layer.bias.astype(xb.dtype, copy=False)
    if layer.activation == "softmax":
        out = _softmax_rows(z)
    else:
        out = activation_forward(layer.activation, z)
    assert_finite(out, "dense output")
    return out[0] if single else out


def dense_backward(layer, x, grad_out):
    """Gradients of dense_forward w.r.t. input, weights and bias."""
    xb, single = _as_batch(x, 1)
    gb, _ = _as_batch(grad_out, 1)
    z = xb @ layer.weights.T.astype(xb.dtype, copy=False) + layer.bias.astype(xb.dtype, copy=False)
    if gb.shape != z.shape:
        raise ValueError("grad shape does not match the layer output")
    if layer.activation != "linear":
        gb = gb * _activation_grad(layer.activation, z)
    gw = (gb.T @ xb).astype(layer.weights.dtype, copy=False)
    gbias = gb.sum(axis=0, dtype=np.float64).astype(layer.bias.dtype)
    gx = gb @ layer.weights.astype(gb.dtype, copy=False)
    return (gx[0] if single else gx), gw, gbias


# ---------------------------------------------------------------------------
# dropout


def _dropout_mask(p, shape, seed):
    rng = np.random.default_rng(seed)
    return rng.random(shape) >= p


def dropout_apply(spec, x, mode, seed=0):
    """Apply dropout in train mode; identity at inference.

    Standard dropout zeroes units with probability p and rescales survivors
    by 1/(1-p), so inference needs no compensation. Alpha dropout sets
    dropped units to the selu negative saturation and applies the affine
    correction that restores zero mean and unit variance for unit-gaussian
    inputs.
    """
    y, _ = _dropout_cached(spec, x, mode, seed)
    return y


def _dropout_cached(spec, x, mode, seed):
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    x = np.asarray(x)
    if mode == "infer" or spec.p == 0.0:
        return x, None
    mask = _dropout_mask(spec.p, x.shape, seed).astype(x.dtype)
    if spec.kind == "standard":
        scale = np.asarray(1.0 / (1.0 - spec.p), dtype=x.dtype)
        return x * mask * scale, mask * scale
    q = 1.0 - spec.p
    a = (q + SELU_SATURATION ** 2 * spec.p * q) ** -0.5
    b = -a * spec.p * SELU_SATURATION
    a = np.asarray(a, dtype=x.dtype)
    y = a * (x * mask + SELU_SATURATION * (1.0 - mask)) + np.asarray(b, dtype=x.dtype)
    return y, mask * a


def _dropout_backward(cache, grad_out):
    if cache is None:
        return grad_out
    return grad_out * cache


def check_finite_params(arrays, context="parameters"):
    for a in arrays:
        if not np.isfinite(a).all():
            raise NumericError(f"non-finite values in {context}")
