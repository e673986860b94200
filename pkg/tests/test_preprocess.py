import numpy as np
import pytest

from datcnn import preprocess as PP
from datcnn.errors import DataError


def rand_volume(shape=(10, 12, 10), seed=0, lo=0.1, hi=5.0):
    rng = np.random.default_rng(seed)
    return rng.uniform(lo, hi, shape).astype(np.float32)


# ---------------------------------------------------------------------------
# intensity normalization


def test_normalize_max_constant_volume():
    vol = np.full((5, 5, 5), 5.0, np.float32)
    assert np.allclose(PP.normalize_max(vol), 1.0)


def test_normalize_max_ramp_top_three_selection():
    # 100 voxels valued 1..100: divisor is mean(98, 99, 100) = 99
    vol = np.arange(1.0, 101.0, dtype=np.float32).reshape(4, 5, 5)
    out = PP.normalize_max(vol)
    assert abs(out.max() - 100.0 / 99.0) < 1e-6
    assert abs(PP.top_fraction_mean(out) - 1.0) < 1e-5


def test_normalize_max_all_zero_rejected():
    with pytest.raises(DataError):
        PP.normalize_max(np.zeros((4, 4, 4), np.float32))


def test_normalize_max_statistic_restored_to_one():
    for seed in range(5):
        out = PP.normalize_max(rand_volume(seed=seed))
        assert abs(PP.top_fraction_mean(out) - 1.0) < 1e-5


def test_normalize_integral_constant_volume():
    vol = np.full((6, 6, 6), 2.75, np.float32)
    assert np.allclose(PP.normalize_integral(vol), 1.0)


def test_normalize_integral_two_voxel_example():
    out = PP.normalize_integral(np.array([[[2.0, 4.0]]], np.float32))
    assert np.allclose(out, [2 / 3, 4 / 3], atol=1e-6)


def test_normalize_integral_mean_is_one():
    for seed in range(5):
        out = PP.normalize_integral(rand_volume(seed=seed))
        assert abs(out.mean(dtype=np.float64) - 1.0) < 1e-5


def test_normalize_integral_zero_mean_rejected():
    with pytest.raises(DataError):
        PP.normalize_integral(np.zeros((3, 3, 3), np.float32))


@pytest.mark.parametrize("norm", [PP.normalize_integral, PP.normalize_max])
def test_normalization_idempotent(norm):
    vol = rand_volume(seed=3)
    once = norm(vol)
    twice = norm(once)
    assert np.abs(once - twice).max() < 1e-6


@pytest.mark.parametrize("norm", [PP.normalize_integral, PP.normalize_max])
@pytest.mark.parametrize("k", [0.1, 1.0, 10.0])
def test_normalization_scale_invariant(norm, k):
    vol = rand_volume(seed=4)
    assert np.abs(norm(vol) - norm((k * vol).astype(np.float32))).max() < 1e-6


# ---------------------------------------------------------------------------
# affine resampling


def test_affine_identity_is_exact():
    vol = rand_volume(seed=5)
    out = PP.affine_resample(vol, np.eye(4))
    assert np.array_equal(out, vol)


def test_affine_integer_translation_moves_impulse():
    vol = np.zeros((7, 7, 7), np.float32)
    vol[3, 3, 3] = 1.0
    shift = np.eye(4)
    shift[0, 3] = 1.0  # +1 along x
    out = PP.affine_resample(vol, shift)
    assert out[3, 3, 4] == pytest.approx(1.0, abs=1e-6)
    assert out.sum() == pytest.approx(1.0, abs=1e-5)


def test_affine_uniform_scale_preserves_constant_interior():
    vol = np.full((8, 8, 8), 1.5, np.float32)
    scale = PP.make_similarity(scale=2.0)
    out = PP.affine_resample(vol, scale)
    # voxels whose source point stays interior keep the constant value
    assert np.abs(out[:4, :4, :4] - 1.5).max() < 1e-6


def test_affine_singular_matrix_rejected():
    a = np.eye(4)
    a[0, 0] = 0.0
    with pytest.raises(DataError):
        PP.affine_resample(rand_volume(), a)


def test_affine_bad_last_row_rejected():
    a = np.eye(4)
    a[3, 0] = 1.0
    with pytest.raises(ValueError):
        PP.affine_resample(rand_volume(), a)


def test_affine_composition_on_smooth_field():
    # low-frequency field: resampling twice matches the composed transform
    z, y, x = np.indices((12, 12, 12), dtype=np.float64)
    vol = (np.sin(x / 20) + np.cos(y / 24) + np.sin(z / 22)).astype(np.float32) + 2.0
    a = PP.make_similarity(1.0, (0, 0, 5), (0.5, 0, 0))
    b = PP.make_similarity(1.0, (0, 4, 0), (0, -0.4, 0))
    star = PP.affine_resample(PP.affine_resample(vol, a), b)
    combined = PP.affine_resample(vol, b @ a)
    interior = (slice(3, 9),) * 3
    assert np.abs(star[interior] - combined[interior]).max() < 1e-3


def test_make_similarity_identity():
    assert np.allclose(PP.make_similarity(), np.eye(4))


def test_make_similarity_inverse_composes_to_identity():
    a = PP.make_similarity(1.3, (10, -20, 30), (1, -2, 3))
    assert np.abs(a @ np.linalg.inv(a) - np.eye(4)).max() < 1e-6


def test_make_similarity_rotation_about_z():
    a = PP.make_similarity(1.0, (0, 0, 90))
    rotated = a @ np.array([1.0, 0.0, 0.0, 1.0])
    assert np.abs(rotated - [0.0, 1.0, 0.0, 1.0]).max() < 1e-12


def test_make_similarity_determinant_is_scale_cubed():
    a = PP.make_similarity(1.7, (12, 34, -8), (0, 1, 2))
    assert np.linalg.det(a[:3, :3]) == pytest.approx(1.7 ** 3, rel=1e-10)


def test_make_similarity_rejects_bad_scale():
    with pytest.raises(ValueError):
        PP.make_similarity(scale=0.0)


# ---------------------------------------------------------------------------
# shape resampling


def test_resample_same_shape_unchanged():
    vol = rand_volume(seed=6)
    assert np.array_equal(PP.resample_to_shape(vol, vol.shape), vol)


def test_resample_downsample_preserves_constant():
    vol = np.full((8, 12, 8), 4.5, np.float32)
    out = PP.resample_to_shape(vol, (4, 6, 4))
    assert out.shape == (4, 6, 4)
    assert np.abs(out - 4.5).max() < 1e-6


def test_resample_impulse_coordinate_mapping():
    vol = np.zeros((8, 8, 8), np.float32)
    vol[4, 4, 4] = 1.0
    out = PP.resample_to_shape(vol, (4, 4, 4))
    # output voxel c samples input at c * in/out = 2c, so the impulse at 4
    # lands exactly on output index 2
    assert out[2, 2, 2] == pytest.approx(1.0, abs=1e-6)


# ---------------------------------------------------------------------------
# pipeline tags


def test_tag_rendering_and_parsing():
    tag = PP.PipelineTag("int", "u")
    assert tag.render() == "int_u"
    assert PP.PipelineTag.parse("max_w") == PP.PipelineTag("max", "w")
    for bad in ("int", "foo_u", "int_x", "int_u_w"):
        with pytest.raises(DataError):
            PP.PipelineTag.parse(bad)


def test_pipeline_no_u_is_identity():
    vol = rand_volume(seed=7)
    assert np.array_equal(PP.apply_pipeline(vol, "no_u"), vol)


def test_pipeline_int_u_on_constant_gives_ones():
    vol = np.full((6, 6, 6), 3.0, np.float32)
    assert np.allclose(PP.apply_pipeline(vol, "int_u"), 1.0)


def test_pipeline_w_with_identity_matches_u():
    vol = rand_volume(seed=8)
    u = PP.apply_pipeline(vol, "max_u")
    w = PP.apply_pipeline(vol, "max_w", transform=np.eye(4))
    assert np.array_equal(u, w)


def test_pipeline_w_requires_transform():
    with pytest.raises(ValueError):
        PP.apply_pipeline(rand_volume(), "int_w")
