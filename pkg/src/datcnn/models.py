"""Architecture descriptors and whole-model forward/backward passes.

Two families are provided, each in a ReLU and a SELU flavour:

* ``lenet53d``: 2 convolutional + 2 max-pooling layers and 1 hidden dense
  layer before the softmax output.
* ``alexnet3d``: 5 convolutional layers with 3 max-pooling stages and 2
  hidden dense layers before the softmax output.

The SELU variants share the exact layer geometry (and therefore parameter
count) with their ReLU counterparts; they differ only in activation,
weight-initialization variance and the dropout flavour (alpha dropout).
Filter counts and dense widths are configurable; the defaults below are
scaled-down proportions of the classic 2D originals, sized for volumetric
input.
"""

from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .seeds import derive_seed
from .tensor import assert_finite

DEFAULT_INPUT_SHAPE = (57, 69, 57)


@dataclass(frozen=True)
class ConvSpec:
    filters: int
    kernel: int
    stride: int = 1
    padding: int = 0


@dataclass(frozen=True)
class PoolSpec:
    block: int


@dataclass(frozen=True)
class DenseSpec:
    units: int
    dropout: float = 0.0


@dataclass(frozen=True)
class ArchitectureSpec:
    name: str
    activation: str                       # relu | selu
    input_shape: tuple                    # (D, H, W), single channel
    features: tuple                       # ConvSpec / PoolSpec sequence
    dense: tuple                          # hidden DenseSpec sequence
    classes: int = 2

    @property
    def full_name(self):
        return self.name if self.activation == "relu" else f"{self.name}-{self.activation}"


def lenet53d(input_shape=DEFAULT_INPUT_SHAPE, activation="relu",
             conv_filters=(6, 16), kernel=5, pool=2, dense_units=120,
             dropout=0.0):
    """LeNet-5 style stack: conv-pool-conv-pool plus one hidden dense layer."""
    features = (
        ConvSpec(conv_filters[0], kernel),
        PoolSpec(pool),
        ConvSpec(conv_filters[1], kernel),
        PoolSpec(pool),
    )
    return ArchitectureSpec("lenet53d", activation, tuple(input_shape),
                            features, (DenseSpec(dense_units, dropout),))


def alexnet3d(input_shape=DEFAULT_INPUT_SHAPE, activation="relu",
              conv_filters=(16, 32, 48, 48, 32), dense_units=(256, 64),
              dropout=0.5):
    """AlexNet style stack: five conv layers, three pools, two hidden dense.

    The first convolution is strided (the hallmark of the original design);
    convolutions 2-5 pad by one voxel to keep extents positive at volumetric
    input sizes.
    """
    f1, f2, f3, f4, f5 = conv_filters
    features = (
        ConvSpec(f1, 5, stride=2),
        PoolSpec(2),
        ConvSpec(f2, 3, padding=1),
        PoolSpec(2),
        ConvSpec(f3, 3, padding=1),
        ConvSpec(f4, 3, padding=1),
        ConvSpec(f5, 3, padding=1),
        PoolSpec(2),
    )
    dense = tuple(DenseSpec(u, dropout) for u in dense_units)
    return ArchitectureSpec("alexnet3d", activation, tuple(input_shape),
                            features, dense)


_BUILDERS = {"lenet53d": lenet53d, "alexnet3d": alexnet3d}


def build_architecture(name, input_shape=DEFAULT_INPUT_SHAPE, **overrides):
    """Build a named architecture; a ``-selu`` suffix selects the SELU variant."""
    base = name
    activation = overrides.pop("activation", None)
    if base.endswith("-selu"):
        base = base[:-5]
        activation = "selu"
    if base.endswith("-relu"):
        base = base[:-5]
        activation = "relu"
    if base not in _BUILDERS:
        raise ValueError(f"unknown architecture {name!r}")
    return _BUILDERS[base](input_shape=input_shape,
                           activation=activation or "relu", **overrides)


def propagate_shapes(arch):
    """Per-layer activation shapes (C, D, H, W); raises if any extent drops below 1."""
    if arch.activation not in ("relu", "selu"):
        raise ValueError(f"unknown activation family {arch.activation!r}")
    c = 1
    d, h, w = arch.input_shape
    shapes = [(c, d, h, w)]
    for spec in arch.features:
        if isinstance(spec, ConvSpec):
            d = L.conv_output_extent(d, spec.kernel, spec.stride, spec.padding)
            h = L.conv_output_extent(h, spec.kernel, spec.stride, spec.padding)
            w = L.conv_output_extent(w, spec.kernel, spec.stride, spec.padding)
            c = spec.filters
        elif isinstance(spec, PoolSpec):
            if min(d, h, w) < spec.block:
                raise ValueError(
                    f"pool block {spec.block} exceeds extents {(d, h, w)}")
            d, h, w = d // spec.block, h // spec.block, w // spec.block
        else:
            raise ValueError(f"unknown feature layer {spec!r}")
        if min(d, h, w) < 1:
            raise ValueError(f"layer {spec} shrinks the volume to {(d, h, w)}")
        shapes.append((c, d, h, w))
    return shapes


def flattened_size(arch):
    c, d, h, w = propagate_shapes(arch)[-1]
    return c * d * h * w


class Flatten:
    """Marker layer: reshapes (N, C, D, H, W) to (N, C*D*H*W)."""


@dataclass
class Model:
    arch: ArchitectureSpec
    layers: list = field(repr=False)
    seed: int = 0


def build_model(arch, seed, dtype=np.float32):
    """Initialize parameters for an architecture.

    Weights are zero-mean gaussian with variance 2/fan_in for the ReLU
    family and 1/fan_in for the SELU family; biases start at zero. The same
    seed always produces bit-identical parameters.
    """
    propagate_shapes(arch)  # validates geometry
    gain = 2.0 if arch.activation == "relu" else 1.0
    dropout_kind = "alpha" if arch.activation == "selu" else "standard"
    built = []
    idx = 0
    c = 1
    for spec in arch.features:
        if isinstance(spec, ConvSpec):
            fan_in = c * spec.kernel ** 3
            rng = np.random.default_rng(derive_seed(seed, "init", idx))
            w = rng.standard_normal(
                (spec.filters, c, spec.kernel, spec.kernel, spec.kernel))
            w = (w * np.sqrt(gain / fan_in)).astype(dtype)
            b = np.zeros(spec.filters, dtype=dtype)
            built.append(L.Conv3D(w, b, spec.stride, spec.padding, arch.activation))
            c = spec.filters
            idx += 1
        else:
            built.append(L.MaxPool3D(spec.block))
    built.append(Flatten())
    in_units = flattened_size(arch)
    for spec in arch.dense:
        rng = np.random.default_rng(derive_seed(seed, "init", idx))
        w = (rng.standard_normal((spec.units, in_units))
             * np.sqrt(gain / in_units)).astype(dtype)
        built.append(L.Dense(w, np.zeros(spec.units, dtype=dtype), arch.activation))
        if spec.dropout > 0.0:
            built.append(L.DropoutSpec(dropout_kind, spec.dropout))
        in_units = spec.units
        idx += 1
    rng = np.random.default_rng(derive_seed(seed, "init", idx))
    w = (rng.standard_normal((arch.classes, in_units))
         * np.sqrt(gain / in_units)).astype(dtype)
    built.append(L.Dense(w, np.zeros(arch.classes, dtype=dtype), "softmax"))
    return Model(arch, built, seed)


def count_params(model):
    """Total number of weight and bias elements across all layers."""
    n = 0
    for layer in model.layers:
        if isinstance(layer, (L.Conv3D, L.Dense)):
            n += layer.weights.size + layer.bias.size
    return n


def parameter_arrays(model):
    """Flat list of parameter arrays in layer order (weights then bias)."""
    out = []
    for layer in model.layers:
        if isinstance(layer, (L.Conv3D, L.Dense)):
            out.append(layer.weights)
            out.append(layer.bias)
    return out


def _check_batch(model, x):
    x = np.asarray(x)
    if x.ndim != 5 or x.shape[1] != 1:
        raise ValueError(f"expected batch shaped (N, 1, D, H, W), got {x.shape}")
    if tuple(x.shape[2:]) != tuple(model.arch.input_shape):
        raise ValueError(
            f"volume shape {x.shape[2:]} does not match model input "
            f"{model.arch.input_shape}")
    return x


def forward(model, x, mode="infer", seed=0):
    """Class probabilities for a batch (N, 1, D, H, W); rows sum to 1."""
    logits, _ = _forward_cached(model, x, mode, seed)
    probs = L._softmax_rows(logits)
    assert_finite(probs, "model output")
    return probs


def _forward_cached(model, x, mode, seed):
    """Run all layers up to the output logits, keeping per-layer caches."""
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    a = _check_batch(model, x)
    caches = []
    for li, layer in enumerate(model.layers):
        if isinstance(layer, L.Conv3D):
            z, xp, out_ext = L._conv3d_affine(layer, a)
            a = L.activation_forward(layer.activation, z)
            caches.append(("conv", layer, xp, z, out_ext))
        elif isinstance(layer, L.MaxPool3D):
            shape = a.shape
            a, argmax = L.maxpool3d_forward(layer, a)
            caches.append(("pool", layer, argmax, shape))
        elif isinstance(layer, Flatten):
            shape = a.shape
            a = a.reshape(shape[0], -1)
            caches.append(("flatten", shape))
        elif isinstance(layer, L.Dense):
            xin = a
            z = a @ layer.weights.T.astype(a.dtype, copy=False) + layer.bias.astype(a.dtype, copy=False)
            if layer.activation == "softmax":
                a = z  # logits; softmax applied by the caller
            else:
                a = L.activation_forward(layer.activation, z)
            caches.append(("dense", layer, xin, z))
        elif isinstance(layer, L.DropoutSpec):
            a, dcache = L._dropout_cached(layer, a, mode, derive_seed(seed, "dropout", li))
            caches.append(("dropout", dcache))
        else:
            raise ValueError(f"unknown layer {layer!r}")
    assert_finite(a, "model logits")
    return a, caches


def _backward_from_logits(model, caches, grad_logits):
    """Backpropagate a logit gradient; returns (grad_input, per-layer grads).

    Per-layer grads are (grad_weights, grad_bias) tuples for parameterized
    layers and None for the rest, in layer order.
    """
    grads = [None] * len(model.layers)
    g = grad_logits
    for li in range(len(model.layers) - 1, -1, -1):
        cache = caches[li]
        kind = cache[0]
        if kind == "dense":
            _, layer, xin, z = cache
            if layer.activation not in ("softmax", "linear"):
                g = g * L._activation_grad(layer.activation, z)
            gw = (g.T @ xin).astype(layer.weights.dtype, copy=False)
            gb = g.sum(axis=0, dtype=np.float64).astype(layer.bias.dtype)
            grads[li] = (gw, gb)
            g = g @ layer.weights.astype(g.dtype, copy=False)
        elif kind == "dropout":
            g = L._dropout_backward(cache[1], g)
        elif kind == "flatten":
            g = g.reshape(cache[1])
        elif kind == "pool":
            _, layer, argmax, shape = cache
            g = L.maxpool3d_backward(argmax, shape, layer.block, g)
        elif kind == "conv":
            _, layer, xp, z, out_ext = cache
            g, gw, gb = L._conv3d_grads(layer, xp, z, g, out_ext)
            grads[li] = (gw, gb)
        else:
            raise ValueError(f"unknown cache {kind!r}")
    return g, grads
