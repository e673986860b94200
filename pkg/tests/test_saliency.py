import numpy as np
import pytest

from datcnn import layers as L
from datcnn import models as M
from datcnn import saliency as S


def small_model(seed=0, shape=(10, 10, 10)):
    arch = M.lenet53d(shape, conv_filters=(2, 3), kernel=3, dense_units=4)
    return M.build_model(arch, seed=seed)


def test_dead_network_gives_zero_map():
    model = small_model(seed=1)
    model.layers[0].weights[...] = 0.0
    model.layers[0].bias[...] = 0.0
    vol = np.random.default_rng(2).random((10, 10, 10), dtype=np.float32)
    assert not S.saliency_map(model, vol, 0).any()


def test_linear_model_map_is_weight_row():
    # flatten straight into the output layer: the class-score gradient is
    # exactly that class's weight row
    arch = M.ArchitectureSpec("lenet53d", "relu", (4, 5, 4), (), ())
    model = M.build_model(arch, seed=3)
    vol = np.random.default_rng(4).random((4, 5, 4), dtype=np.float32)
    for cls in (0, 1):
        expected = np.abs(model.layers[-1].weights[cls].reshape(4, 5, 4))
        assert np.allclose(S.saliency_map(model, vol, cls), expected, atol=1e-7)


def test_map_matches_finite_differences_on_probe_voxels():
    model = small_model(seed=5)
    rng = np.random.default_rng(6)
    vol = rng.random((10, 10, 10), dtype=np.float32).astype(np.float64)
    target = 1
    grad = S.logit_input_gradient(model, vol, target)

    def logit(v):
        out, _ = M._forward_cached(model, v[None, None].astype(np.float64),
                                   "infer", 0)
        return float(out[0, target])

    h = 1e-3
    for _ in range(20):
        idx = tuple(rng.integers(0, 10, 3))
        vp = vol.copy()
        vp[idx] += h
        vm = vol.copy()
        vm[idx] -= h
        num = (logit(vp) - logit(vm)) / (2 * h)
        assert abs(grad[idx] - num) <= 1e-2 * max(abs(num), 1e-4) + 1e-6


def test_class_gradients_are_additive():
    model = small_model(seed=7)
    vol = np.random.default_rng(8).random((10, 10, 10), dtype=np.float32)
    g0 = S.logit_input_gradient(model, vol, 0)
    g1 = S.logit_input_gradient(model, vol, 1)

    x = vol[None, None].astype(np.float32)
    logits, caches = M._forward_cached(model, x, "infer", 0)
    both = np.ones_like(logits)
    g_sum, _ = M._backward_from_logits(model, caches, both)
    assert np.abs((g0 + g1) - g_sum[0, 0]).max() < 1e-6


def test_invalid_target_class():
    model = small_model(seed=9)
    vol = np.zeros((10, 10, 10), np.float32)
    with pytest.raises(ValueError):
        S.saliency_map(model, vol, 2)


def test_projection_constant_map():
    proj = S.saliency_projection(np.full((4, 5, 6), 2.0))
    assert proj.shape == (5, 6)
    assert np.all(proj == 2.0)


def test_projection_single_impulse():
    vol = np.zeros((4, 5, 6))
    vol[2, 3, 1] = 7.0
    proj = S.saliency_projection(vol)
    assert proj[3, 1] == 7.0
    assert proj.sum() == 7.0


def test_projection_matches_columnwise_max():
    rng = np.random.default_rng(10)
    vol = rng.random((5, 6, 7))
    proj = S.saliency_projection(vol)
    for y in range(6):
        for x in range(7):
            assert proj[y, x] == vol[:, y, x].max()
