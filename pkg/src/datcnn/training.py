"""Loss functions, class weighting and the minibatch training loop."""

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import layers as L
from . import models as M
from .errors import NumericError
from .seeds import derive_seed

log = logging.getLogger(__name__)

LOSSES = ("cross_entropy", "logcosh")
PROB_FLOOR = 1e-12  # probabilities are clamped here before log()


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 64
    loss: str = "cross_entropy"
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    class_weights: tuple | None = None      # explicit per-class weights
    class_weight_mode: str = "inverse"      # inverse | literal | equal
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.class_weights is not None and any(w <= 0 for w in self.class_weights):
            raise ValueError("class weights must be positive")
        if self.class_weight_mode not in ("inverse", "literal", "equal"):
            raise ValueError(f"unknown class weight mode {self.class_weight_mode!r}")


def class_weights(counts, literal=False):
    """Per-class loss weights from class counts.

    The default is inverse-frequency weighting normalized to mean one,
    w_c = N_total / (n_classes * N_c), which up-weights the minority class.
    ``literal=True`` instead returns each class's share of the samples
    (proportional weighting), available for comparison.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.size == 0 or (counts < 1).any():
        raise ValueError("every class needs at least one sample")
    total = counts.sum()
    if literal:
        return counts / total
    return total / (counts.size * counts)


def loss_and_grad(kind, probs, labels, weights):
    """Mean weighted loss over a batch and its gradient w.r.t. the logits.

    ``probs`` are softmax outputs (rows sum to one); the softmax Jacobian is
    folded into the returned gradient, so it applies directly to the
    pre-softmax logits.
    """
    probs = np.asarray(probs)
    labels = np.asarray(labels, dtype=np.intp)
    weights = np.asarray(weights, dtype=np.float64)
    n, k = probs.shape
    if labels.shape != (n,):
        raise ValueError("labels must match the batch size")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError("labels outside the class range")
    w = weights[labels]
    p_true = probs[np.arange(n), labels].astype(np.float64)

    onehot = np.zeros((n, k), dtype=np.float64)
    onehot[np.arange(n), labels] = 1.0

    if kind == "cross_entropy":
        clamped = np.maximum(p_true, PROB_FLOOR)
        n_clamped = int((p_true < PROB_FLOOR).sum())
        if n_clamped:
            log.warning("clamped %d zero probabilities in cross-entropy", n_clamped)
        loss = float(np.mean(w * -np.log(clamped)))
        grad = (w[:, None] * (probs - onehot)) / n
    elif kind == "logcosh":
        r = p_true - 1.0
        loss = float(np.mean(w * np.log(np.cosh(r))))
        # d loss / d p_true, then through the softmax Jacobian row
        dldp = w * np.tanh(r) / n
        grad = dldp[:, None] * p_true[:, None] * (onehot - probs)
    else:
        raise ValueError(f"unknown loss {kind!r}")
    if not np.isfinite(loss):
        raise NumericError("non-finite loss")
    return loss, grad.astype(probs.dtype, copy=False)


# ---------------------------------------------------------------------------
# optimizers


def init_optimizer(kind, params):
    if kind == "sgd":
        return {"kind": "sgd"}
    return {
        "kind": "adam",
        "t": 0,
        "m": [np.zeros_like(p) for p in params],
        "v": [np.zeros_like(p) for p in params],
    }


def optimizer_step(state, params, grads, learning_rate,
                   beta1=0.9, beta2=0.999, eps=1e-8):
    """One update step; parameters are modified in place."""
    if len(params) != len(grads):
        raise ValueError("parameter / gradient count mismatch")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    if state["kind"] == "sgd":
        for p, g in zip(params, grads):
            p -= (learning_rate * g).astype(p.dtype, copy=False)
        return state
    state["t"] += 1
    t = state["t"]
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        g = g.astype(p.dtype, copy=False)
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * (g * g)
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        p -= (learning_rate * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype, copy=False)
    return state


# ---------------------------------------------------------------------------
# training loop


def clone_model(model):
    """Deep copy of a model's parameter arrays (descriptors are shared)."""
    copied = []
    for layer in model.layers:
        if isinstance(layer, (L.Conv3D, L.Dense)):
            copied.append(replace(layer, weights=layer.weights.copy(),
                                  bias=layer.bias.copy()))
        else:
            copied.append(layer)
    return M.Model(model.arch, copied, model.seed)


def predict_probs(model, x, batch_size=256):
    """Inference-mode class probabilities, evaluated in chunks."""
    outs = []
    for i in range(0, len(x), batch_size):
        outs.append(M.forward(model, x[i:i + batch_size], mode="infer"))
    return np.concatenate(outs, axis=0)


def accuracy(model, x, labels, batch_size=256):
    probs = predict_probs(model, x, batch_size)
    return float(np.mean(probs.argmax(axis=1) == labels))


def fit(model, x, labels, config):
    """Train a copy of the model; returns (trained model, per-epoch history).

    History rows are dicts with epoch (1-based), mean_loss (sample-weighted
    mean of the minibatch losses) and train_accuracy (inference-mode accuracy
    over the full training set). Shuffling, dropout and updates all derive
    from config.seed.
    """
    x = np.asarray(x)
    labels = np.asarray(labels, dtype=np.intp)
    n = len(x)
    if n == 0:
        raise ValueError("empty training set")
    if labels.shape != (n,):
        raise ValueError("labels must match the sample count")

    trained = clone_model(model)
    k = trained.arch.classes
    if config.class_weights is not None:
        weights = np.asarray(config.class_weights, dtype=np.float64)
    elif config.class_weight_mode == "equal":
        weights = np.ones(k)
    else:
        counts = np.bincount(labels, minlength=k)
        if (counts == 0).any():
            raise ValueError("every class needs samples or explicit weights")
        weights = class_weights(counts, literal=config.class_weight_mode == "literal")

    params = M.parameter_arrays(trained)
    state = init_optimizer(config.optimizer, params)
    rng = np.random.default_rng(derive_seed(config.seed, "shuffle"))
    history = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            step_seed = derive_seed(config.seed, "step", epoch, start)
            logits, caches = M._forward_cached(trained, x[batch], "train", step_seed)
            probs = L._softmax_rows(logits)
            loss, grad_logits = loss_and_grad(config.loss, probs, labels[batch], weights)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            loss_sum += loss * len(batch)
            _, layer_grads = M._backward_from_logits(trained, caches, grad_logits)
            grads = []
            for g in layer_grads:
                if g is not None:
                    grads.extend(g)
            if config.learning_rate > 0:
                optimizer_step(state, params, grads, config.learning_rate)
        L.check_finite_params(params)
        history.append({
            "epoch": epoch,
            "mean_loss": loss_sum / n,
            "train_accuracy": accuracy(trained, x, labels,
                                       batch_size=max(config.batch_size, 128)),
        })
    return trained, history
