"""Wiring for a full cross-validated training run: data in, result files out."""

import os

import numpy as np

from . import evaluate as E
from . import io as F
from . import models as M
from .config import ExperimentConfig
from .errors import DataError
from .preprocess import PipelineTag, apply_pipeline, validate_affine
from .training import TrainConfig


def load_transforms(spec, records):
    """Registration matrices per subject: 'identity' or a CSV of 12 entries.

    The CSV needs a header ``subject_id,a00..a23`` followed by one row per
    subject giving the upper three rows of the 4x4 matrix in row-major order.
    """
    if spec == "identity":
        return {rec.subject_id: np.eye(4) for rec in records}
    import csv

    try:
        with open(spec, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read transforms: {exc}") from exc
    if not rows or rows[0][:1] != ["subject_id"] or len(rows[0]) != 13:
        raise DataError(f"{spec}: expected header subject_id,a00..a23")
    out = {}
    for row in rows[1:]:
        if not row:
            continue
        try:
            a = np.eye(4)
            a[:3, :] = np.array([float(v) for v in row[1:13]]).reshape(3, 4)
        except ValueError as exc:
            raise DataError(f"{spec}: malformed row {row}") from exc
        out[row[0]] = validate_affine(a)
    missing = [rec.subject_id for rec in records if rec.subject_id not in out]
    if missing:
        raise DataError(f"{spec}: missing transforms for {missing[:5]}")
    return out


def prepare_dataset(manifest_path, tag, transforms_spec=""):
    """Load manifest volumes and ensure they carry the requested pipeline tag."""
    records, existing = F.read_manifest(manifest_path)
    x, labels = F.load_volumes(manifest_path, records)
    tag = PipelineTag.parse(tag) if isinstance(tag, str) else tag
    if existing is not None:
        if existing != tag.render():
            raise DataError(
                f"manifest is preprocessed as {existing!r}, run requests {tag.render()!r}")
        return x, labels, records
    transforms = None
    if tag.spatial == "w":
        if not transforms_spec:
            raise DataError("pipeline tag with spatial 'w' needs --transforms")
        transforms = load_transforms(transforms_spec, records)
    for i, rec in enumerate(records):
        matrix = transforms[rec.subject_id] if transforms else None
        x[i, 0] = apply_pipeline(x[i, 0], tag, matrix)
    return x, labels, records


def build_arch_for(config, input_shape):
    kwargs = {}
    filters = config.parsed_filters()
    if filters:
        kwargs["conv_filters"] = filters
    dense = config.parsed_dense()
    if dense:
        kwargs["dense_units"] = dense if len(dense) > 1 else dense[0]
    if config.kernel > 0:
        kwargs["kernel"] = config.kernel
    if config.dropout >= 0:
        kwargs["dropout"] = config.dropout
    try:
        return M.build_architecture(config.model, input_shape=tuple(input_shape),
                                    **kwargs)
    except (ValueError, TypeError) as exc:
        raise DataError(f"cannot build model {config.model!r}: {exc}") from exc


def run_training(config: ExperimentConfig, outdir):
    """Cross-validate per the config and write all result files to outdir."""
    x, labels, _ = prepare_dataset(config.manifest, config.tag, config.transforms)
    arch = build_arch_for(config, x.shape[2:])
    train_config = TrainConfig(
        epochs=config.epochs, batch_size=config.batch_size, loss=config.loss,
        learning_rate=config.learning_rate, optimizer=config.optimizer,
        class_weight_mode=config.class_weight_mode, seed=config.seed)
    result = E.cross_validate(x, labels, arch, train_config, tag=config.tag,
                              k=config.folds, seed=config.seed)
    write_run_outputs(outdir, config, result)
    return result


def write_run_outputs(outdir, config, result):
    os.makedirs(outdir, exist_ok=True)
    resolved = config.to_mapping()
    F.atomic_write_text(os.path.join(outdir, "config.txt"),
                        F.render_config(resolved))
    digest = F.config_digest(resolved)

    F.write_csv(os.path.join(outdir, "folds.csv"),
                ("fold", "acc", "sens", "spec", "f1", "bal_acc"),
                [(f.fold,) + tuple(F.fmt(v) for v in f.metrics.as_dict().values())
                 for f in result.folds])
    F.write_csv(os.path.join(outdir, "roc.csv"), ("fpr", "tpr"),
                [(F.fmt(px), F.fmt(py)) for px, py in result.roc.points])
    for fold in result.folds:
        F.write_csv(os.path.join(outdir, f"history_fold{fold.fold}.csv"),
                    ("epoch", "mean_loss", "train_accuracy"),
                    [(h["epoch"], F.fmt(h["mean_loss"]), F.fmt(h["train_accuracy"]))
                     for h in fold.history])
        F.save_checkpoint(os.path.join(outdir, f"fold{fold.fold}.ckpt"),
                          fold.model, digest)

    lines = [f"model={config.model} tag={config.tag} loss={config.loss} "
             f"auc={F.fmt(result.roc.auc, 3)}"]
    for name, (mean, std) in result.summary.items():
        lines.append(f"{name} {E.format_mean_std(mean, std)}")
    F.atomic_write_text(os.path.join(outdir, "summary.txt"),
                        "\n".join(lines) + "\n")
