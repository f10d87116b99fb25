"""Training, evaluation, random hyperparameter search and structured pruning."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .checkpoint import Checkpoint
from .data import Dataset
from .numcore import ops
from .numcore.nn import Parameter
from .numcore.optim import Adam
from .numcore.tensor import no_grad
from .sleepnet import SleepNet, SleepNetConfig, count_flops, default_channels
from .synthgen import derive_seed

log = logging.getLogger(__name__)

N_CLASSES = 6
# named RNG sub-streams under one training seed
STREAM_SPLIT = 11
STREAM_INIT = 12
STREAM_SHUFFLE = 13
STREAM_DROPOUT = 14
STREAM_HPO = 15


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    test_fraction: float = 0.2
    val_fraction: float = 0.1
    class_weighting: bool = True
    holdout_subject: int | None = None  # subject-held-out test set instead of a pooled split

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not (0 < self.test_fraction < 1 and 0 <= self.val_fraction < 1):
            raise ValueError("split fractions must lie in (0, 1)")


@dataclass
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def split(labels, config: TrainConfig = TrainConfig(), subjects=None) -> Split:
    """Stratified train/validation/test partition.

    Per class: ``round(n * test_fraction)`` epochs go to test, then
    ``round(rest * val_fraction)`` to validation (each at least one).
    With ``config.holdout_subject`` the test set is that subject's epochs
    and the stratified validation split is drawn from everyone else.
    """
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(derive_seed(config.seed, STREAM_SPLIT))
    train, val, test = [], [], []
    pool = np.arange(len(labels))
    if config.holdout_subject is not None:
        if subjects is None:
            raise ValueError("subject ids are required for a subject-held-out split")
        subjects = np.asarray(subjects)
        test = list(np.flatnonzero(subjects == config.holdout_subject))
        if not test:
            raise ValueError(f"subject {config.holdout_subject} has no epochs")
        pool = np.flatnonzero(subjects != config.holdout_subject)
    for c in range(N_CLASSES):
        idx = pool[labels[pool] == c]
        if len(idx) == 0:
            continue
        if len(idx) < 3:
            raise ValueError(f"class {c} has {len(idx)} epochs; at least 3 are needed")
        idx = rng.permutation(idx)
        n_test = 0 if config.holdout_subject is not None else max(1, int(round(len(idx) * config.test_fraction)))
        rest = len(idx) - n_test
        n_val = max(1, int(round(rest * config.val_fraction))) if config.val_fraction > 0 else 0
        test += list(idx[:n_test])
        val += list(idx[n_test : n_test + n_val])
        train += list(idx[n_test + n_val :])
    return Split(np.sort(np.asarray(train, dtype=np.int64)), np.sort(np.asarray(val, dtype=np.int64)),
                 np.sort(np.asarray(test, dtype=np.int64)))


def class_weights(labels: np.ndarray) -> np.ndarray:
    """Inverse-frequency weights normalised so a balanced set gets all ones."""
    counts = np.bincount(labels, minlength=N_CLASSES).astype(np.float64)
    w = np.zeros(N_CLASSES)
    present = counts > 0
    w[present] = len(labels) / (present.sum() * counts[present])
    return w


@dataclass
class TrainResult:
    model: SleepNet
    history: list[dict]
    split: Split
    best_epoch: int
    best_val_accuracy: float

    def checkpoint(self, **provenance) -> Checkpoint:
        return Checkpoint.from_model(self.model, **provenance)


def accuracy(model: SleepNet, x: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        return float("nan")
    return float(np.mean(model.predict_proba(x).argmax(axis=1) == y))


def _val_stats(model: SleepNet, x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    if len(y) == 0:
        return float("nan"), float("nan")
    p = model.predict_proba(x)
    loss = float(-np.mean(np.log(np.clip(p[np.arange(len(y)), y], 1e-12, None))))
    return float(np.mean(p.argmax(axis=1) == y)), loss


def train(
    model: SleepNet,
    dataset: Dataset,
    config: TrainConfig = TrainConfig(),
    split_: Split | None = None,
    on_epoch: Callable[[dict], None] | None = None,
    frozen: set[str] | None = None,
) -> TrainResult:
    """Minimise weighted cross-entropy with Adam; keep the best-validation weights.

    ``frozen`` names parameters that are left untouched. Model selection
    prefers higher validation accuracy, then lower validation loss; with an
    empty validation set the final weights are kept.
    """
    sp = split_ if split_ is not None else split(dataset.labels, config, dataset.subjects)
    x_all = dataset.inputs
    y_all = dataset.labels
    xtr, ytr = x_all[sp.train], y_all[sp.train]
    xva, yva = x_all[sp.val], y_all[sp.val]
    if len(ytr) == 0:
        raise ValueError("empty training set")
    weights = class_weights(ytr) if config.class_weighting else None

    shuffle_rng = np.random.default_rng(derive_seed(config.seed, STREAM_SHUFFLE))
    model.dropout_rng = np.random.default_rng(derive_seed(config.seed, STREAM_DROPOUT))
    params = {k: p for k, p in model.named_parameters().items() if not frozen or k not in frozen}
    opt = Adam(params, lr=config.learning_rate)

    history: list[dict] = []
    best = (-1.0, math.inf)
    best_state = {k: v.copy() for k, v in model.state_dict().items()}
    best_epoch = 0
    for epoch in range(1, config.epochs + 1):
        model.train()
        order = shuffle_rng.permutation(len(ytr))
        total, seen = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            b = order[start : start + config.batch_size]
            logits = model(xtr[b])
            loss = ops.cross_entropy(logits, ytr[b], weights)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss {value} at epoch {epoch}, batch starting {start} "
                    f"(lr={config.learning_rate}, batch_size={config.batch_size})"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += value * len(b)
            seen += len(b)
        model.eval()
        val_acc, val_loss = _val_stats(model, xva, yva)
        if len(yva) == 0 or (val_acc, -val_loss) > (best[0], -best[1]):
            best = (val_acc, val_loss)
            best_state = {k: v.copy() for k, v in model.state_dict().items()}
            best_epoch = epoch
        row = {
            "epoch": epoch,
            "loss": total / seen,
            "val_accuracy": val_acc,
            "val_loss": val_loss,
            "best_val_accuracy": best[0] if len(yva) else float("nan"),
        }
        history.append(row)
        log.debug("epoch %d loss %.4f val_acc %.4f", epoch, row["loss"], val_acc)
        if on_epoch is not None:
            on_epoch(row)
    model.load_state_dict(best_state)
    model.eval()
    model.dropout_rng = None
    return TrainResult(model, history, sp, best_epoch, best[0])


# -- evaluation ---------------------------------------------------------------------------

def roc_auc(scores: np.ndarray, labels: np.ndarray) -> dict:
    """One-vs-rest AUC per class by the rank statistic (ties count 1/2).

    Returns ``{"per_class": [auc or None, ...], "macro": mean of defined}``.
    A class without positives or negatives gets ``None``.
    """
    from scipy.stats import rankdata

    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim == 1:
        scores = np.stack([1 - scores, scores], axis=1)
    per = []
    for c in range(scores.shape[1]):
        pos = labels == c
        n_pos, n_neg = int(pos.sum()), int((~pos).sum())
        if n_pos == 0 or n_neg == 0:
            per.append(None)
            continue
        r = rankdata(scores[:, c])
        per.append(float((r[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)))
    defined = [a for a in per if a is not None]
    return {"per_class": per, "macro": float(np.mean(defined)) if defined else None}


def binary_auc(pos_scores, neg_scores) -> float:
    s = np.r_[np.asarray(pos_scores, float), np.asarray(neg_scores, float)]
    y = np.r_[np.ones(len(pos_scores), int), np.zeros(len(neg_scores), int)]
    return roc_auc(np.stack([1 - s, s], axis=1), y)["per_class"][1]


def roc_curve(scores: np.ndarray, positive: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, thresholds) sweeping the threshold down through distinct scores."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    order = np.argsort(-scores, kind="mergesort")
    s, p = scores[order], positive[order]
    distinct = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tp = np.cumsum(p)[distinct]
    fp = np.cumsum(~p)[distinct]
    n_pos, n_neg = max(p.sum(), 1), max((~p).sum(), 1)
    return np.r_[0.0, fp / n_neg], np.r_[0.0, tp / n_pos], np.r_[np.inf, s[distinct]]


@dataclass
class MetricsReport:
    confusion: np.ndarray
    per_class_accuracy: list[float | None]
    overall_accuracy: float
    balanced_accuracy: float
    auc: list[float | None]
    macro_auc: float | None
    flops: dict[str, int] = field(default_factory=dict)
    probabilities: np.ndarray | None = None
    labels: np.ndarray | None = None

    def summary(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("probabilities", "labels", "confusion")}
        d["confusion"] = self.confusion.tolist()
        return d


def metrics_from_probabilities(probs: np.ndarray, labels: np.ndarray, flops: dict | None = None) -> MetricsReport:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise ValueError("cannot evaluate on an empty test set")
    pred = probs.argmax(axis=1)
    conf = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(conf, (labels, pred), 1)
    rows = conf.sum(axis=1)
    per = [float(conf[c, c] / rows[c]) if rows[c] else None for c in range(N_CLASSES)]
    defined = [a for a in per if a is not None]
    auc = roc_auc(probs, labels)
    return MetricsReport(
        confusion=conf,
        per_class_accuracy=per,
        overall_accuracy=float(np.trace(conf) / conf.sum()),
        balanced_accuracy=float(np.mean(defined)),
        auc=auc["per_class"],
        macro_auc=auc["macro"],
        flops=dict(flops or {}),
        probabilities=probs,
        labels=labels,
    )


def evaluate(model: SleepNet | Checkpoint, dataset: Dataset) -> MetricsReport:
    if isinstance(model, Checkpoint):
        model = model.build()
    probs = model.predict_proba(dataset.inputs)
    return metrics_from_probabilities(probs, dataset.labels, count_flops(model.config))


# -- hyperparameter search -----------------------------------------------------------------

DEFAULT_SPACE = {
    "d_model": (32, 64, 128),
    "heads": (2, 4, 8),
    "resnet_blocks": (2, 3, 4),
    "learning_rate": (1e-4, 1e-2),  # log-uniform
    "batch_size": (16, 32, 64),
}


@dataclass
class HpoTrial:
    index: int
    d_model: int
    heads: int
    resnet_blocks: int
    learning_rate: float
    batch_size: int
    val_accuracy: float | None = None
    best_epoch: int | None = None

    def model_config(self, base: SleepNetConfig = SleepNetConfig()) -> SleepNetConfig:
        blocks = self.resnet_blocks if base.resnet_blocks else 0  # a ResNet-free base stays ResNet-free
        return base.with_(d_model=self.d_model, heads=self.heads, resnet_blocks=blocks,
                          resnet_channels=default_channels(blocks), resnet_inner=None)


def sample_trials(space: dict, budget: int, seed: int) -> list[HpoTrial]:
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = np.random.default_rng(derive_seed(seed, STREAM_HPO))
    lo, hi = space["learning_rate"]
    trials = []
    for i in range(budget):
        trials.append(HpoTrial(
            index=i,
            d_model=int(rng.choice(space["d_model"])),
            heads=int(rng.choice(space["heads"])),
            resnet_blocks=int(rng.choice(space["resnet_blocks"])),
            learning_rate=float(math.exp(rng.uniform(math.log(lo), math.log(hi)))),
            batch_size=int(rng.choice(space["batch_size"])),
        ))
    return trials


def hpo(
    dataset: Dataset,
    budget: int,
    space: dict = DEFAULT_SPACE,
    seed: int = 0,
    epochs: int = 10,
    base: SleepNetConfig = SleepNetConfig(),
    on_trial: Callable[[HpoTrial], None] | None = None,
) -> tuple[list[HpoTrial], HpoTrial]:
    """Uniform random search; every trial trains ``epochs`` epochs on one shared split."""
    trials = sample_trials(space, budget, seed)
    sp = split(dataset.labels, TrainConfig(seed=seed), dataset.subjects)
    for trial in trials:
        cfg = TrainConfig(epochs=epochs, batch_size=trial.batch_size, learning_rate=trial.learning_rate,
                          seed=derive_seed(seed, trial.index))
        model = SleepNet(trial.model_config(base), seed=derive_seed(cfg.seed, STREAM_INIT))
        res = train(model, dataset, cfg, sp)
        trial.val_accuracy = res.best_val_accuracy
        trial.best_epoch = res.best_epoch
        log.info("trial %d %s -> val %.3f", trial.index, trial, trial.val_accuracy)
        if on_trial is not None:
            on_trial(trial)
    best = max(trials, key=lambda t: (t.val_accuracy, -t.index))
    return trials, best


# -- structured pruning ----------------------------------------------------------------------

def _keep(importance: np.ndarray, fraction: float, where: str) -> np.ndarray:
    n = len(importance)
    n_remove = int(round(fraction * n))
    if n_remove >= n:
        raise ValueError(f"pruning {fraction:.0%} of {n} filters in {where} would empty the layer")
    order = np.argsort(importance, kind="stable")
    return np.sort(order[n_remove:])


def prune(model: SleepNet | Checkpoint, fraction: float = 0.5) -> SleepNet:
    """Remove the lowest-L1 conv filters from the ResNet stage.

    Two filter groups per block are ranked independently: the first conv's
    outputs, and (for blocks with a projection skip) the block outputs shared
    by the second conv and the skip conv. Blocks with an identity skip keep
    their output width because it is tied to the attention output. All
    downstream input slices (next block, classification head) follow.
    """
    if isinstance(model, Checkpoint):
        model = model.build()
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    cfg = model.config
    state = {k: v.copy() for k, v in model.state_dict().items()}
    blocks = model.resnet.blocks
    inner, outer = [], []
    prev_keep: np.ndarray | None = None

    def take(prefix: str, keep: np.ndarray) -> None:
        for name in ("weight", "bias", "running_mean", "running_var"):
            key = f"{prefix}.{name}"
            if key in state:
                state[key] = state[key][keep]

    for b, block in enumerate(blocks):
        p = f"resnet.blocks.{b}"
        if prev_keep is not None:
            state[f"{p}.conv1.weight"] = state[f"{p}.conv1.weight"][:, prev_keep]
            if block.projected:
                state[f"{p}.skip_conv.weight"] = state[f"{p}.skip_conv.weight"][:, prev_keep]
        w1 = state[f"{p}.conv1.weight"]
        keep_in = _keep(np.abs(w1).sum(axis=(1, 2)), fraction, f"block {b} conv1")
        take(f"{p}.conv1", keep_in)
        take(f"{p}.bn1", keep_in)
        state[f"{p}.conv2.weight"] = state[f"{p}.conv2.weight"][:, keep_in]
        inner.append(len(keep_in))
        if block.projected:
            imp = np.abs(state[f"{p}.conv2.weight"]).sum(axis=(1, 2)) + np.abs(state[f"{p}.skip_conv.weight"]).sum(axis=(1, 2))
            keep_out = _keep(imp, fraction, f"block {b} output")
            for sub in ("conv2", "bn2", "skip_conv", "skip_bn"):
                take(f"{p}.{sub}", keep_out)
            prev_keep = keep_out
        else:
            prev_keep = None
        outer.append(len(prev_keep) if prev_keep is not None else block.conv2.out_channels)
        c_in = cfg.resnet_input_channels if b == 0 else outer[b - 1]
        if block.projected and cfg.block_strides()[b] == 1 and c_in == outer[b]:
            raise ValueError(f"pruning would turn block {b}'s projection skip into an identity; use another fraction")
    if prev_keep is not None:
        state["head.weight"] = state["head.weight"][prev_keep]

    new_cfg = cfg.with_(resnet_channels=tuple(outer), resnet_inner=tuple(inner))
    pruned = SleepNet(new_cfg)
    pruned.load_state_dict(state)
    pruned.train(model.training)
    return pruned


def pruned_filter_fraction(before: SleepNetConfig, after: SleepNetConfig) -> float:
    """Share of ResNet conv filters (conv1, conv2, skip) removed."""

    def filters(cfg: SleepNetConfig) -> int:
        total, c_in = 0, cfg.resnet_input_channels
        for c_inner, c_out, s in zip(cfg.inner, cfg.resnet_channels, cfg.block_strides()):
            total += c_inner + c_out + (c_out if (s != 1 or c_in != c_out) else 0)
            c_in = c_out
        return total

    return 1.0 - filters(after) / filters(before)
