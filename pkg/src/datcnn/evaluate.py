"""Confusion-matrix metrics, ROC/AUC and stratified cross-validation.

The positive class is the disease class (label 1). Metrics with a zero
denominator are undefined and reported as NaN, which renders as ``nan`` in
text output.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import models as M
from . import training as T
from .seeds import derive_seed


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class MetricsReport:
    acc: float
    sens: float
    spec: float
    f1: float
    balanced_acc: float

    def as_dict(self):
        return {"acc": self.acc, "sens": self.sens, "spec": self.spec,
                "f1": self.f1, "bal_acc": self.balanced_acc}


@dataclass(frozen=True)
class RocCurve:
    points: tuple   # ((1 - specificity, sensitivity), ...) from (0,0) to (1,1)
    auc: float


def confusion(predictions, labels):
    """Count the four confusion cells for binary predictions."""
    predictions = np.asarray(predictions, dtype=np.intp)
    labels = np.asarray(labels, dtype=np.intp)
    if predictions.shape != labels.shape:
        raise ValueError("predictions and labels must have equal length")
    if predictions.ndim != 1:
        raise ValueError("expected 1-D prediction and label arrays")
    for arr in (predictions, labels):
        if arr.size and (arr.min() < 0 or arr.max() > 1):
            raise ValueError("binary values expected")
    tp = int(np.sum((predictions == 1) & (labels == 1)))
    tn = int(np.sum((predictions == 0) & (labels == 0)))
    fp = int(np.sum((predictions == 1) & (labels == 0)))
    fn = int(np.sum((predictions == 0) & (labels == 1)))
    return ConfusionMatrix(tp, tn, fp, fn)


def _ratio(num, den):
    return num / den if den > 0 else float("nan")


def metrics(cm):
    """Accuracy, sensitivity, specificity, F1 and balanced accuracy.

    F1 uses 2TP / (2TP + FN + FP), which is defined (zero) when TP = 0 but
    errors exist; only a true 0/0 yields NaN.
    """
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    sens = _ratio(cm.tp, cm.tp + cm.fn)
    spec = _ratio(cm.tn, cm.tn + cm.fp)
    return MetricsReport(
        acc=(cm.tp + cm.tn) / cm.total,
        sens=sens,
        spec=spec,
        f1=_ratio(2 * cm.tp, 2 * cm.tp + cm.fn + cm.fp),
        balanced_acc=(sens + spec) / 2,
    )


def roc_and_auc(scores, labels):
    """ROC curve over a threshold sweep plus trapezoidal AUC.

    Equal scores are grouped into a single step, which makes the trapezoidal
    area match the pairwise ranking statistic with ties counted one half.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need at least one sample of each class")

    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    boundaries = np.nonzero(np.diff(s))[0]          # last index of each tie group
    group_ends = np.concatenate([boundaries, [len(s) - 1]])
    cum_tp = np.cumsum(y == 1)[group_ends]
    cum_fp = np.cumsum(y == 0)[group_ends]
    tpr = np.concatenate([[0.0], cum_tp / n_pos])
    fpr = np.concatenate([[0.0], cum_fp / n_neg])
    auc = float(np.trapezoid(tpr, fpr))
    points = tuple((float(x), float(t)) for x, t in zip(fpr, tpr))
    return RocCurve(points, auc)


def mann_whitney_auc(scores, labels):
    """Pairwise ranking statistic: fraction of correctly ordered
    positive/negative pairs, ties counted one half. Quadratic brute force."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


def stratified_folds(labels, k=10, seed=0):
    """Fold index per sample: shuffle within each class, deal round-robin."""
    labels = np.asarray(labels, dtype=np.intp)
    if k < 2:
        raise ValueError("need at least 2 folds")
    assignment = np.empty(len(labels), dtype=np.intp)
    rng = np.random.default_rng(seed)
    for cls in np.unique(labels):
        idx = np.nonzero(labels == cls)[0]
        if len(idx) < k:
            raise ValueError(f"class {cls} has fewer samples than folds")
        shuffled = rng.permutation(idx)
        assignment[shuffled] = np.arange(len(idx)) % k
    return assignment


@dataclass
class FoldResult:
    fold: int
    confusion: ConfusionMatrix
    metrics: MetricsReport
    history: list
    model: object
    test_indices: np.ndarray
    scores: np.ndarray


@dataclass
class CrossValResult:
    folds: list
    roc: RocCurve
    summary: dict       # metric name -> (mean, std)
    tag: str


def summarize(fold_metrics):
    """Mean and population std per metric; NaN folds propagate as NaN."""
    out = {}
    for name in ("acc", "sens", "spec", "f1", "bal_acc"):
        vals = np.array([m.as_dict()[name] for m in fold_metrics], dtype=np.float64)
        out[name] = (float(vals.mean()), float(vals.std()))
    return out


def format_mean_std(mean, std):
    return f"{mean:.3f} [{std:.3f}]"


def cross_validate(volumes, labels, arch, train_config, tag="no_u", k=10, seed=0):
    """Stratified k-fold cross-validation of one architecture.

    Trains on k-1 folds and evaluates the held-out fold with dropout off.
    Returns per-fold metrics, a pooled ROC over all held-out scores, and the
    mean [std] summary. Fold seeds derive from the run seed, so results are
    reproducible end to end.
    """
    volumes = np.asarray(volumes)
    labels = np.asarray(labels, dtype=np.intp)
    assignment = stratified_folds(labels, k, derive_seed(seed, "folds"))
    folds = []
    all_scores = np.empty(len(labels), dtype=np.float64)
    for i in range(k):
        test = np.nonzero(assignment == i)[0]
        train = np.nonzero(assignment != i)[0]
        fold_seed = derive_seed(seed, "fold", i)
        model = M.build_model(arch, fold_seed)
        cfg = replace(train_config, seed=fold_seed)
        trained, history = T.fit(model, volumes[train], labels[train], cfg)
        probs = T.predict_probs(trained, volumes[test])
        preds = probs.argmax(axis=1)
        cm = confusion(preds, labels[test])
        scores = probs[:, 1]
        all_scores[test] = scores
        folds.append(FoldResult(i, cm, metrics(cm), history, trained, test, scores))
    roc = roc_and_auc(all_scores, labels)
    return CrossValResult(folds, roc, summarize([f.metrics for f in folds]), tag)
