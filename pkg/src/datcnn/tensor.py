"""Dense float32 arrays with shape validation and finite-value checks.

Arrays are plain numpy ndarrays stored in C order (last axis fastest). The
canonical activation layout is (channels, depth, height, width), with an
optional leading batch axis. Values are stored as 32-bit floats; reductions
accumulate in 64-bit so statistics over full volumes (~224k voxels) stay
stable.
"""

import numpy as np

from .errors import NumericError

MAX_RANK = 5


def validate_shape(shape):
    """Return shape as a tuple of ints, rejecting invalid ranks or extents."""
    dims = tuple(int(d) for d in shape)
    if not 1 <= len(dims) <= MAX_RANK:
        raise ValueError(f"rank must be between 1 and {MAX_RANK}, got {len(dims)}")
    if any(d < 1 for d in dims):
        raise ValueError(f"every extent must be >= 1, got {dims}")
    return dims


def element_count(shape):
    dims = validate_shape(shape)
    n = 1
    for d in dims:
        n *= d
    return n


def assert_finite(a, context="array"):
    """Raise NumericError if any value is NaN or infinite."""
    if not np.isfinite(a).all():
        raise NumericError(f"non-finite values in {context}")


def tensor_create(shape, fill=0.0):
    """Allocate a float32 tensor of the given shape, filled with a constant."""
    dims = validate_shape(shape)
    if not np.isfinite(fill):
        raise NumericError("fill value must be finite")
    return np.full(dims, fill, dtype=np.float32)


def tensor_map(t, f):
    """Apply a scalar function elementwise, keeping shape and float32 storage.

    ``f`` may be vectorized (numpy ufunc or array expression); a plain Python
    scalar function is applied element by element as a fallback.
    """
    t = np.asarray(t, dtype=np.float32)
    try:
        out = np.asarray(f(t), dtype=np.float32)
        if out.shape != t.shape:
            raise TypeError("shape changed")
    except Exception:
        out = np.frompyfunc(f, 1, 1)(t).astype(np.float32)
    assert_finite(out, "tensor_map result")
    return out


def tensor_reduce(t, kind):
    """Reduce all elements to a scalar; one of sum, mean or max.

    Sums and means accumulate in float64; mean is computed as the accumulated
    sum divided by the element count.
    """
    t = np.asarray(t)
    if t.size == 0:
        raise ValueError("cannot reduce an empty tensor")
    if kind == "sum":
        return float(t.sum(dtype=np.float64))
    if kind == "mean":
        return float(t.sum(dtype=np.float64)) / t.size
    if kind == "max":
        return float(t.max())
    raise ValueError(f"unknown reduction {kind!r}")
