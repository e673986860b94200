"""Command-line interface.

Subcommands cover the full experiment loop:

* ``phantom generate`` writes a synthetic two-class dataset,
* ``preprocess`` applies a spatial/intensity pipeline tag to a dataset,
* ``train`` runs stratified cross-validated training from a config file,
* ``saliency`` computes a gradient saliency map from a checkpoint,
* ``report`` merges training runs into a comparison table and plots.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

import argparse
import os
import sys

import numpy as np

from . import io as F
from . import phantom as P
from . import report as R
from . import saliency as S
from .config import ExperimentConfig
from .errors import DataError, NumericError
from .experiment import load_transforms, run_training
from .preprocess import PipelineTag, apply_pipeline

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _parse_shape(text):
    try:
        d, h, w = (int(p) for p in text.lower().split("x"))
        return d, h, w
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected DxHxW, got {text!r}")


def _parse_range(text):
    try:
        lo, hi = (float(p) for p in text.split(","))
        return lo, hi
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO,HI, got {text!r}")


def build_parser():
    parser = _Parser(prog="datcnn")
    sub = parser.add_subparsers(dest="command", required=True)

    ph = sub.add_parser("phantom", help="synthetic dataset tools")
    ph_sub = ph.add_subparsers(dest="phantom_command", required=True)
    gen = ph_sub.add_parser("generate", help="generate a phantom dataset")
    gen.add_argument("--out", required=True)
    gen.add_argument("--n-control", type=int, required=True)
    gen.add_argument("--n-pd", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--shape", type=_parse_shape, default=(24, 28, 24),
                     metavar="DxHxW")
    gen.add_argument("--scale-range", type=_parse_range, default=(0.5, 2.0),
                     metavar="LO,HI", help="global intensity scale range")
    gen.add_argument("--no-jitter", action="store_true",
                     help="disable pose jitter")
    gen.add_argument("--noise", type=float, default=0.05)
    gen.add_argument("--smoothing", type=float, default=0.7)
    gen.set_defaults(func=cmd_phantom_generate)

    pre = sub.add_parser("preprocess", help="apply a preprocessing pipeline")
    pre.add_argument("--manifest", required=True)
    pre.add_argument("--tag", required=True)
    pre.add_argument("--out", required=True)
    pre.add_argument("--transforms", default="",
                     help="'identity' or a per-subject transforms CSV")
    pre.set_defaults(func=cmd_preprocess)

    tr = sub.add_parser("train", help="cross-validated training")
    tr.add_argument("--config", required=True)
    tr.add_argument("--out", required=True)
    for key in ("manifest", "model", "tag", "loss", "optimizer",
                "class-weight-mode", "conv-filters", "dense-units",
                "transforms"):
        tr.add_argument(f"--{key}")
    for key in ("folds", "epochs", "batch-size", "seed"):
        tr.add_argument(f"--{key}", type=int)
    tr.add_argument("--learning-rate", type=float)
    tr.add_argument("--dropout", type=float)
    tr.set_defaults(func=cmd_train)

    sal = sub.add_parser("saliency", help="gradient saliency map")
    sal.add_argument("--checkpoint", required=True)
    sal.add_argument("--volume", required=True)
    sal.add_argument("--class", dest="target_class", type=int, required=True,
                     choices=(0, 1))
    sal.add_argument("--out", required=True)
    sal.set_defaults(func=cmd_saliency)

    rep = sub.add_parser("report", help="merge training runs")
    rep.add_argument("--results", required=True)
    rep.add_argument("--out", required=True)
    rep.set_defaults(func=cmd_report)
    return parser


def cmd_phantom_generate(args):
    if args.n_control < 1 or args.n_pd < 1:
        raise UsageError("--n-control and --n-pd must be >= 1")
    params = P.PhantomParams(
        shape=args.shape,
        intensity_scale=args.scale_range,
        rotation_deg=0.0 if args.no_jitter else 8.0,
        translation_vox=0.0 if args.no_jitter else 2.0,
        scale_jitter=(1.0, 1.0) if args.no_jitter else (0.95, 1.05),
        noise_sigma=args.noise,
        smoothing_sigma=args.smoothing,
    )
    voldir = os.path.join(args.out, "volumes")
    os.makedirs(voldir, exist_ok=True)
    records = []
    for vol, rec in P.generate_dataset(params, args.n_control, args.n_pd,
                                       args.seed):
        rec.path = f"volumes/{rec.subject_id}.nvol"
        F.write_nvol(os.path.join(args.out, rec.path), vol)
        records.append(rec)
    F.write_manifest(os.path.join(args.out, "manifest.csv"), records)
    print(f"wrote {len(records)} subjects to {args.out}")
    return EXIT_OK


def cmd_preprocess(args):
    try:
        tag = PipelineTag.parse(args.tag)
    except DataError as exc:
        raise UsageError(str(exc))
    records, existing = F.read_manifest(args.manifest)
    if existing is not None:
        raise DataError(f"manifest already preprocessed as {existing!r}")
    transforms = None
    if tag.spatial == "w":
        if not args.transforms:
            raise UsageError("spatial tag 'w' requires --transforms")
        transforms = load_transforms(args.transforms, records)
    base = os.path.dirname(args.manifest)
    voldir = os.path.join(args.out, "volumes")
    os.makedirs(voldir, exist_ok=True)
    for rec in records:
        vol = F.read_nvol(os.path.join(base, rec.path))
        matrix = transforms[rec.subject_id] if transforms else None
        out = apply_pipeline(vol, tag, matrix)
        rec.path = f"volumes/{rec.subject_id}.nvol"
        F.write_nvol(os.path.join(args.out, rec.path), out)
    F.write_manifest(os.path.join(args.out, "manifest.csv"), records,
                     tag=tag.render())
    print(f"preprocessed {len(records)} subjects with tag {tag.render()}")
    return EXIT_OK


_TRAIN_OVERRIDES = ("manifest", "model", "tag", "loss", "optimizer",
                    "class_weight_mode", "conv_filters", "dense_units",
                    "transforms", "folds", "epochs", "batch_size", "seed",
                    "learning_rate", "dropout")


def cmd_train(args):
    values = F.read_config(args.config)
    for key in _TRAIN_OVERRIDES:
        arg = getattr(args, key, None)
        if arg is not None:
            values[key] = str(arg)
    values.pop("outdir", None)
    config = ExperimentConfig.from_mapping(values)
    config.outdir = args.out
    result = run_training(config, args.out)
    for name, (mean, std) in result.summary.items():
        print(f"{name} {mean:.3f} [{std:.3f}]")
    print(f"auc {result.roc.auc:.3f}")
    return EXIT_OK


def cmd_saliency(args):
    model, _ = F.load_checkpoint(args.checkpoint)
    vol = F.read_nvol(args.volume)
    if tuple(vol.shape) != tuple(model.arch.input_shape):
        raise DataError(
            f"volume shape {vol.shape} does not match model input "
            f"{model.arch.input_shape}")
    smap = S.saliency_map(model, vol, args.target_class)
    proj = S.saliency_projection(smap)
    os.makedirs(args.out, exist_ok=True)
    F.write_nvol(os.path.join(args.out, "saliency.nvol"), smap)
    F.write_pgm(os.path.join(args.out, "projection.pgm"), proj)
    _projection_svg(os.path.join(args.out, "projection.svg"), proj)
    print(f"saliency map written to {args.out}")
    return EXIT_OK


def _projection_svg(path, proj):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(np.asarray(proj), cmap="inferno", origin="lower")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_report(args):
    runs = R.write_report(args.results, args.out)
    print(f"merged {len(runs)} runs into {args.out}")
    return EXIT_OK


class UsageError(Exception):
    pass


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"datcnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"datcnn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"datcnn: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
