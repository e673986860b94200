import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from datcnn import io as F
from datcnn import models as M
from datcnn.errors import DataError
from datcnn.phantom import SubjectRecord


# ---------------------------------------------------------------------------
# NVOL


def test_nvol_byte_layout(tmp_path):
    vol = np.arange(24, dtype=np.float32).reshape(2, 3, 4)  # (D, H, W)
    path = tmp_path / "v.nvol"
    F.write_nvol(path, vol)
    blob = path.read_bytes()
    assert blob[:4] == b"NV01"
    assert struct.unpack("<III", blob[4:16]) == (4, 3, 2)  # dx, dy, dz
    assert len(blob) == 16 + 4 * 24
    # x varies fastest: the first four floats are row (d=0, h=0)
    first = np.frombuffer(blob, dtype="<f4", count=4, offset=16)
    assert first.tolist() == [0.0, 1.0, 2.0, 3.0]


def test_nvol_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    vol = rng.standard_normal((5, 7, 6)).astype(np.float32)
    path = tmp_path / "v.nvol"
    F.write_nvol(path, vol)
    back = F.read_nvol(path)
    assert back.shape == vol.shape
    assert np.array_equal(back.view(np.uint32), vol.view(np.uint32))


@given(st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5)),
       st.integers(0, 2 ** 31))
@settings(max_examples=25, deadline=None)
def test_nvol_roundtrip_property(shape, seed):
    import tempfile, os

    rng = np.random.default_rng(seed)
    vol = rng.standard_normal(shape).astype(np.float32)
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "v.nvol")
        F.write_nvol(path, vol)
        assert np.array_equal(F.read_nvol(path), vol)


def test_nvol_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.nvol"
    path.write_bytes(b"XXXX" + b"\x00" * 20)
    with pytest.raises(DataError):
        F.read_nvol(path)


def test_nvol_rejects_truncation(tmp_path):
    path = tmp_path / "t.nvol"
    F.write_nvol(path, np.zeros((2, 2, 2), np.float32))
    blob = path.read_bytes()
    path.write_bytes(blob[:-4])
    with pytest.raises(DataError):
        F.read_nvol(path)


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_roundtrip_bit_identical(tmp_path):
    arch = M.lenet53d((12, 12, 12), conv_filters=(2, 2), kernel=3, dense_units=4)
    model = M.build_model(arch, seed=5)
    path = tmp_path / "m.ckpt"
    F.save_checkpoint(path, model, config_digest="abc")
    loaded, header = F.load_checkpoint(path)
    assert header["config_digest"] == "abc"
    assert header["seed"] == 5
    for a, b in zip(M.parameter_arrays(model), M.parameter_arrays(loaded)):
        assert np.array_equal(a, b)
        assert a.dtype == b.dtype
    assert loaded.arch == model.arch


def test_checkpoint_survives_training_state(tmp_path):
    # trained (non-initial) parameters round-trip too
    arch = M.lenet53d((12, 12, 12), conv_filters=(2, 2), kernel=3, dense_units=4)
    model = M.build_model(arch, seed=6)
    for p in M.parameter_arrays(model):
        p += np.random.default_rng(1).standard_normal(p.shape).astype(p.dtype)
    path = tmp_path / "m.ckpt"
    F.save_checkpoint(path, model)
    loaded, _ = F.load_checkpoint(path)
    for a, b in zip(M.parameter_arrays(model), M.parameter_arrays(loaded)):
        assert np.array_equal(a, b)


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"nope")
    with pytest.raises(DataError):
        F.load_checkpoint(path)


def test_checkpoint_rejects_truncated_blocks(tmp_path):
    arch = M.lenet53d((12, 12, 12), conv_filters=(2, 2), kernel=3, dense_units=4)
    model = M.build_model(arch, seed=7)
    path = tmp_path / "m.ckpt"
    F.save_checkpoint(path, model)
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(DataError):
        F.load_checkpoint(path)


# ---------------------------------------------------------------------------
# manifests


def make_records(n=3):
    out = []
    for i in range(n):
        out.append(SubjectRecord(
            subject_id=f"c{i:04d}", label="control" if i % 2 == 0 else "pd",
            binding_ratio=2.5 + i, scale=1.0 + 0.1 * i,
            rotation_deg=(1.0, -2.0, 0.5), translation=(0.0, 1.0, -1.0),
            path=f"volumes/c{i:04d}.nvol"))
    return out


def test_manifest_roundtrip(tmp_path):
    path = tmp_path / "manifest.csv"
    records = make_records()
    F.write_manifest(path, records)
    back, tag = F.read_manifest(path)
    assert tag is None
    assert [r.subject_id for r in back] == [r.subject_id for r in records]
    assert [r.label for r in back] == [r.label for r in records]
    assert back[0].rotation_deg == (1.0, -2.0, 0.5)


def test_manifest_tag_column(tmp_path):
    path = tmp_path / "manifest.csv"
    F.write_manifest(path, make_records(), tag="int_u")
    _, tag = F.read_manifest(path)
    assert tag == "int_u"
    assert path.read_text().splitlines()[0].endswith(",tag")


def test_manifest_rejects_bad_header(tmp_path):
    path = tmp_path / "manifest.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(DataError):
        F.read_manifest(path)


def test_manifest_rejects_unknown_label(tmp_path):
    path = tmp_path / "manifest.csv"
    records = make_records(1)
    records[0].label = "sick"
    F.write_manifest(path, records)
    with pytest.raises(DataError):
        F.read_manifest(path)


# ---------------------------------------------------------------------------
# config files


def test_config_parsing():
    text = """
# comment line
model = alexnet3d
epochs=30   # trailing comment
tag = int_u
"""
    values = F.parse_config_text(text)
    assert values == {"model": "alexnet3d", "epochs": "30", "tag": "int_u"}


def test_config_rejects_bad_line():
    with pytest.raises(DataError):
        F.parse_config_text("just words\n")


def test_config_digest_is_order_independent():
    a = F.config_digest({"x": "1", "y": "2"})
    b = F.config_digest({"y": "2", "x": "1"})
    assert a == b
    assert a != F.config_digest({"x": "1", "y": "3"})


def test_experiment_config_validation(tmp_path):
    from datcnn.config import ExperimentConfig

    cfg = ExperimentConfig.from_mapping(
        {"manifest": "m.csv", "tag": "int_u", "epochs": "3"})
    assert cfg.epochs == 3
    with pytest.raises(DataError):
        ExperimentConfig.from_mapping({"manifest": "m.csv", "tag": "bogus_u"})
    with pytest.raises(DataError):
        ExperimentConfig.from_mapping({"manifest": "m.csv", "mystery": "1"})
    with pytest.raises(DataError):
        ExperimentConfig.from_mapping({"manifest": "m.csv", "folds": "1"})


# ---------------------------------------------------------------------------
# misc writers


def test_pgm_writer(tmp_path):
    img = np.arange(12, dtype=np.float64).reshape(3, 4)
    path = tmp_path / "p.pgm"
    F.write_pgm(path, img)
    blob = path.read_bytes()
    assert blob.startswith(b"P5\n4 3\n255\n")
    pixels = blob.split(b"255\n", 1)[1]
    assert len(pixels) == 12
    assert pixels[0] == 0 and pixels[-1] == 255


def test_write_csv_deterministic_bytes(tmp_path):
    rows = [(1, "0.500000"), (2, "0.250000")]
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    F.write_csv(a, ("epoch", "loss"), rows)
    F.write_csv(b, ("epoch", "loss"), rows)
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text() == "epoch,loss\n1,0.500000\n2,0.250000\n"


def test_fmt_renders_nan():
    assert F.fmt(float("nan")) == "nan"
    assert F.fmt(0.25) == "0.250000"
