"""File formats: NVOL volumes, model checkpoints, manifests, config files.

NVOL is a minimal binary volume container: the magic ``NV01``, three
little-endian uint32 extents (dx, dy, dz), then dx*dy*dz little-endian
float32 values with x varying fastest. In memory a volume is a C-ordered
(D, H, W) array, so D maps to dz, H to dy and W to dx.

Checkpoints (magic ``PDW1``) store a JSON header describing the architecture
and parameter block shapes, followed by the raw little-endian parameter
bytes; a load reproduces the saved parameters bit for bit.

All writers go through a temp-file + rename so partially written outputs
never appear under their final name.
"""

import csv
import dataclasses
import hashlib
import io as _stdio
import json
import os
import struct
import tempfile

import numpy as np

from . import layers as L
from . import models as M
from .errors import DataError

NVOL_MAGIC = b"NV01"
CHECKPOINT_MAGIC = b"PDW1"
CHECKPOINT_VERSION = 1

MANIFEST_FIELDS = ("path", "label", "subject_id", "binding_ratio",
                   "scale", "rotation_deg", "translation")


def atomic_write_bytes(path, payload):
    path = os.fspath(path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# NVOL volumes


def write_nvol(path, vol):
    vol = np.asarray(vol)
    if vol.ndim != 3:
        raise ValueError("volumes must be 3-D")
    d, h, w = vol.shape
    header = NVOL_MAGIC + struct.pack("<III", w, h, d)
    data = np.ascontiguousarray(vol, dtype="<f4").tobytes()
    atomic_write_bytes(path, header + data)


def read_nvol(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != NVOL_MAGIC:
        raise DataError(f"{path}: not an NVOL file")
    dx, dy, dz = struct.unpack("<III", blob[4:16])
    if min(dx, dy, dz) < 1:
        raise DataError(f"{path}: invalid extents {(dx, dy, dz)}")
    expected = 16 + 4 * dx * dy * dz
    if len(blob) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", offset=16)
    return data.reshape(dz, dy, dx).astype(np.float32)


# ---------------------------------------------------------------------------
# checkpoints


def _arch_to_dict(arch):
    features = []
    for spec in arch.features:
        if isinstance(spec, M.ConvSpec):
            features.append({"kind": "conv", "filters": spec.filters,
                             "kernel": spec.kernel, "stride": spec.stride,
                             "padding": spec.padding})
        else:
            features.append({"kind": "pool", "block": spec.block})
    return {
        "name": arch.name,
        "activation": arch.activation,
        "input_shape": list(arch.input_shape),
        "features": features,
        "dense": [{"units": d.units, "dropout": d.dropout} for d in arch.dense],
        "classes": arch.classes,
    }


def _arch_from_dict(data):
    features = []
    for spec in data["features"]:
        if spec["kind"] == "conv":
            features.append(M.ConvSpec(spec["filters"], spec["kernel"],
                                       spec["stride"], spec["padding"]))
        else:
            features.append(M.PoolSpec(spec["block"]))
    dense = tuple(M.DenseSpec(d["units"], d["dropout"]) for d in data["dense"])
    return M.ArchitectureSpec(data["name"], data["activation"],
                              tuple(data["input_shape"]), tuple(features),
                              dense, data["classes"])


def save_checkpoint(path, model, config_digest=""):
    """Serialize a model's architecture and parameters."""
    blocks = M.parameter_arrays(model)
    header = {
        "arch": _arch_to_dict(model.arch),
        "seed": model.seed,
        "config_digest": config_digest,
        "blocks": [{"shape": list(b.shape), "dtype": str(b.dtype)} for b in blocks],
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = _stdio.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(head)))
    buf.write(head)
    for b in blocks:
        buf.write(np.ascontiguousarray(b).astype(b.dtype.newbyteorder("<")).tobytes())
    atomic_write_bytes(path, buf.getvalue())


def load_checkpoint(path):
    """Rebuild a model from a checkpoint; returns (model, header dict)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    version, head_len = struct.unpack("<II", blob[4:12])
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(blob[12:12 + head_len].decode("utf-8"))
    arch = _arch_from_dict(header["arch"])
    model = M.build_model(arch, header["seed"])
    blocks = M.parameter_arrays(model)
    if len(blocks) != len(header["blocks"]):
        raise DataError(f"{path}: parameter block count mismatch")
    offset = 12 + head_len
    for b, meta in zip(blocks, header["blocks"]):
        if list(b.shape) != meta["shape"]:
            raise DataError(f"{path}: block shape mismatch {meta['shape']}")
        dtype = np.dtype(meta["dtype"]).newbyteorder("<")
        nbytes = dtype.itemsize * b.size
        if offset + nbytes > len(blob):
            raise DataError(f"{path}: truncated checkpoint")
        b[...] = np.frombuffer(blob, dtype=dtype, count=b.size,
                               offset=offset).reshape(b.shape)
        offset += nbytes
    if offset != len(blob):
        raise DataError(f"{path}: trailing bytes in checkpoint")
    return model, header


# ---------------------------------------------------------------------------
# manifests


def _fmt_vec(values):
    return ";".join(f"{v:.6f}" for v in values)


def _parse_vec(text):
    return tuple(float(p) for p in text.split(";"))


def write_manifest(path, records, tag=None):
    """Write subject records as CSV; paths should be relative to the manifest."""
    fields = list(MANIFEST_FIELDS) + (["tag"] if tag is not None else [])
    out = _stdio.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(fields)
    for rec in records:
        row = [rec.path, rec.label, rec.subject_id,
               f"{rec.binding_ratio:.6f}", f"{rec.scale:.6f}",
               _fmt_vec(rec.rotation_deg), _fmt_vec(rec.translation)]
        if tag is not None:
            row.append(tag)
        writer.writerow(row)
    atomic_write_text(path, out.getvalue())


def read_manifest(path):
    """Parse a manifest CSV; returns (records, tag-or-None)."""
    from .phantom import SubjectRecord

    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read manifest: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: empty manifest")
    header = rows[0]
    if header[:len(MANIFEST_FIELDS)] != list(MANIFEST_FIELDS):
        raise DataError(f"{path}: unexpected manifest header {header}")
    has_tag = len(header) > len(MANIFEST_FIELDS) and header[len(MANIFEST_FIELDS)] == "tag"
    records, tags = [], set()
    for row in rows[1:]:
        if not row:
            continue
        try:
            rec = SubjectRecord(
                subject_id=row[2], label=row[1],
                binding_ratio=float(row[3]), scale=float(row[4]),
                rotation_deg=_parse_vec(row[5]), translation=_parse_vec(row[6]),
                path=row[0])
        except (IndexError, ValueError) as exc:
            raise DataError(f"{path}: malformed manifest row {row}") from exc
        if rec.label not in ("control", "pd"):
            raise DataError(f"{path}: unknown label {rec.label!r}")
        records.append(rec)
        if has_tag:
            tags.add(row[len(MANIFEST_FIELDS)])
    if not records:
        raise DataError(f"{path}: manifest has no subjects")
    if has_tag and len(tags) > 1:
        raise DataError(f"{path}: mixed preprocessing tags {sorted(tags)}")
    return records, (tags.pop() if has_tag else None)


def load_volumes(manifest_path, records):
    """Stack manifest volumes into (N, 1, D, H, W) float32 plus labels."""
    base = os.path.dirname(os.fspath(manifest_path))
    vols, labels = [], []
    for rec in records:
        vol = read_nvol(os.path.join(base, rec.path))
        vols.append(vol)
        labels.append(0 if rec.label == "control" else 1)
    shapes = {v.shape for v in vols}
    if len(shapes) != 1:
        raise DataError(f"volumes disagree on shape: {sorted(shapes)}")
    x = np.stack(vols)[:, None]
    return x, np.asarray(labels, dtype=np.intp)


# ---------------------------------------------------------------------------
# flat key=value configuration files


def parse_config_text(text):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def read_config(path):
    try:
        with open(path) as fh:
            return parse_config_text(fh.read())
    except OSError as exc:
        raise DataError(f"cannot read config: {exc}") from exc


def render_config(values):
    return "".join(f"{k}={values[k]}\n" for k in values)


def config_digest(values):
    return hashlib.sha256(render_config(dict(sorted(values.items())))
                          .encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# misc writers


def write_csv(path, header, rows):
    out = _stdio.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    atomic_write_text(path, out.getvalue())


def write_pgm(path, image):
    """8-bit binary PGM of a 2-D map, min-max scaled."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("PGM images must be 2-D")
    lo, hi = image.min(), image.max()
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    pixels = ((image - lo) * scale).round().astype(np.uint8)
    h, w = image.shape
    atomic_write_bytes(path, f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def fmt(x, places=6):
    """Fixed-point float rendering; NaN renders as 'nan'."""
    if isinstance(x, float) and np.isnan(x):
        return "nan"
    return f"{x:.{places}f}"
