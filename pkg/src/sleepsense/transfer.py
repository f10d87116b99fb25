"""Few-shot adaptation to an unseen subject versus training from scratch."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .checkpoint import Checkpoint
from .data import Dataset
from .sleepnet import SleepNet, SleepNetConfig
from .synthgen import derive_seed
from .trainer import STREAM_INIT, Split, TrainConfig, metrics_from_probabilities, train

FINETUNE_EPOCHS = 30
FINETUNE_LR_SCALE = 0.1
N_CLASSES = 6
STREAM_SHOTS = 31


@dataclass
class TransferReport:
    pretrain_subjects: list[int]
    target_subject: int
    shots_per_class: int
    transfer_accuracy: float
    scratch_accuracy: float
    seed: int
    transfer_best_class: float = float("nan")
    scratch_best_class: float = float("nan")
    transfer_balanced: float = float("nan")
    scratch_balanced: float = float("nan")
    n_test: int = 0
    shot_indices: list[int] = field(default_factory=list, repr=False)
    test_indices: list[int] = field(default_factory=list, repr=False)

    @property
    def gain(self) -> float:
        return self.transfer_accuracy - self.scratch_accuracy

    def row(self) -> dict:
        d = asdict(self)
        d.pop("shot_indices")
        d.pop("test_indices")
        d["pretrain_subjects"] = " ".join(str(s) for s in self.pretrain_subjects)
        d["gain"] = self.gain
        return d

    def to_json(self) -> str:
        return json.dumps(self.row(), sort_keys=True)


def reports_to_csv(reports: list[TransferReport]) -> str:
    if not reports:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(reports[0].row()), lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue()


def few_shot_split(labels: np.ndarray, target_idx: np.ndarray, shots: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Pick ``shots`` target epochs per class; the rest of the target set is the test set."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    rng = np.random.default_rng(derive_seed(seed, STREAM_SHOTS))
    shot, test = [], []
    for c in range(N_CLASSES):
        idx = target_idx[labels[target_idx] == c]
        if len(idx) <= shots:
            raise ValueError(
                f"target subject has {len(idx)} epochs of class {c}; more than {shots} are needed "
                "so that a test set remains"
            )
        idx = rng.permutation(idx)
        shot += list(idx[:shots])
        test += list(idx[shots:])
    return np.sort(np.asarray(shot, dtype=np.int64)), np.sort(np.asarray(test, dtype=np.int64))


def pretrain(dataset: Dataset, target_subject: int, config: TrainConfig = TrainConfig(),
             model_config: SleepNetConfig = SleepNetConfig()) -> Checkpoint:
    """Train on every subject except the target; validation is drawn from the same pool."""
    pool = np.flatnonzero(dataset.subjects != target_subject)
    if len(pool) == 0:
        raise ValueError("no pretraining epochs outside the target subject")
    sub = dataset.subset(pool)
    # no test split: everything outside the validation share trains
    cfg = TrainConfig(**{**asdict(config), "test_fraction": 1e-9, "holdout_subject": None})
    from .trainer import split as _split

    sp = _split(sub.labels, cfg)
    sp = Split(np.sort(np.r_[sp.train, sp.test]), sp.val, np.zeros(0, dtype=np.int64))
    model = SleepNet(model_config, seed=derive_seed(config.seed, STREAM_INIT))
    res = train(model, sub, config, sp)
    subjects = sorted(int(s) for s in np.unique(sub.subjects))
    return Checkpoint.from_model(res.model, seed=config.seed, pretrain_subjects=subjects, target_subject=target_subject)


def _finetune(model: SleepNet, dataset: Dataset, shot_idx: np.ndarray, config: TrainConfig,
              frozen: set[str] | None) -> SleepNet:
    # all shot epochs train; with no validation set the final weights are kept
    sp = Split(np.arange(len(shot_idx)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
    return train(model, dataset.subset(shot_idx), config, sp, frozen=frozen).model


def run_transfer(
    dataset: Dataset,
    target_subject: int,
    shots: int = 15,
    config: TrainConfig = TrainConfig(),
    pretrained: Checkpoint | None = None,
    freeze_extractor: bool = False,
    finetune_epochs: int = FINETUNE_EPOCHS,
) -> TransferReport:
    """Pretrain without the target, then adapt on ``shots`` per class and compare with scratch.

    Both conditions train for ``finetune_epochs`` epochs on the identical shot
    set at ``0.1 * config.learning_rate`` (fine-tune) and
    ``config.learning_rate`` (scratch), and are scored on the identical
    remaining target epochs.
    """
    target_idx = np.flatnonzero(dataset.subjects == target_subject)
    if len(target_idx) == 0:
        raise ValueError(f"subject {target_subject} has no epochs")
    shot_idx, test_idx = few_shot_split(dataset.labels, target_idx, shots, config.seed)
    if pretrained is None:
        pretrained = pretrain(dataset, target_subject, config)
    pre_subjects = list(pretrained.provenance.get("pretrain_subjects", []))
    if target_subject in pre_subjects:
        raise ValueError("the pretrained model has seen the target subject")
    assert not set(shot_idx) & set(test_idx)

    ft_cfg = TrainConfig(**{**asdict(config), "epochs": finetune_epochs,
                            "learning_rate": config.learning_rate * FINETUNE_LR_SCALE,
                            "seed": derive_seed(config.seed, 1)})
    frozen = None
    base = pretrained.build()
    if freeze_extractor:
        frozen = {k for k in base.named_parameters() if not k.startswith("head.")}
    tuned = _finetune(base, dataset, shot_idx, ft_cfg, frozen)

    sc_cfg = TrainConfig(**{**asdict(config), "epochs": finetune_epochs, "seed": derive_seed(config.seed, 2)})
    scratch = SleepNet(pretrained.config, seed=derive_seed(sc_cfg.seed, STREAM_INIT))
    scratch = _finetune(scratch, dataset, shot_idx, sc_cfg, None)

    test = dataset.subset(test_idx)
    m_t = metrics_from_probabilities(tuned.predict_proba(test.inputs), test.labels)
    m_s = metrics_from_probabilities(scratch.predict_proba(test.inputs), test.labels)
    return TransferReport(
        pretrain_subjects=pre_subjects,
        target_subject=int(target_subject),
        shots_per_class=int(shots),
        transfer_accuracy=m_t.overall_accuracy,
        scratch_accuracy=m_s.overall_accuracy,
        seed=int(config.seed),
        transfer_best_class=max(a for a in m_t.per_class_accuracy if a is not None),
        scratch_best_class=max(a for a in m_s.per_class_accuracy if a is not None),
        transfer_balanced=m_t.balanced_accuracy,
        scratch_balanced=m_s.balanced_accuracy,
        n_test=len(test_idx),
        shot_indices=shot_idx.tolist(),
        test_indices=test_idx.tolist(),
    )


def sweep_shots(dataset: Dataset, target_subject: int, shot_list, config: TrainConfig = TrainConfig(),
                pretrained: Checkpoint | None = None, **kw) -> list[TransferReport]:
    if pretrained is None:
        pretrained = pretrain(dataset, target_subject, config)
    return [run_transfer(dataset, target_subject, s, config, pretrained, **kw) for s in shot_list]


def summarize(reports: list[TransferReport]) -> dict:
    """Mean and standard error of both accuracies over repeated runs."""
    t = np.array([r.transfer_accuracy for r in reports])
    s = np.array([r.scratch_accuracy for r in reports])

    def se(a):
        return float(a.std(ddof=1) / np.sqrt(len(a))) if len(a) > 1 else float("nan")

    return {"n": len(reports), "transfer_mean": float(t.mean()), "transfer_se": se(t),
            "scratch_mean": float(s.mean()), "scratch_se": se(s), "gain_mean": float((t - s).mean())}
