"""Command-line entry point: ``sleepsense <verb> [--config FILE] [--seed N] [--out DIR] ...``.

Settings resolve in order: built-in defaults, ``--config`` file (key=value
lines), ``SLEEPSENSE_<KEY>`` environment variables, then ``--set key=value``
and the dedicated flags. Every command writes its outputs plus a
``manifest.json`` into the output directory. Failures print one JSON object
on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("sleepsense")

ENV_PREFIX = "SLEEPSENSE_"
EXIT_ERROR = 1
EXIT_USAGE = 2


class CliError(Exception):
    """A user-facing failure; ``kind`` ends up in the error JSON."""

    def __init__(self, message: str, kind: str = "error", code: int = EXIT_ERROR):
        super().__init__(message)
        self.kind = kind
        self.code = code


# -- run configuration ----------------------------------------------------------------------

def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in str(text).replace(" ", "").split(",") if v != "")


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "out"
    # dataset
    counts: tuple[int, ...] = (728, 701, 262, 180, 102, 146)
    subjects: int = 7
    dataset_format: str = "text"
    placement_salt: int = 0
    # model
    d_model: int = 64
    heads: int = 4
    resnet_blocks: int = 3
    lstm_layers: int = 1
    frame_size: int = 10
    dropout: float = 0.1
    architecture: str = "full"  # full, transformer (no ResNet) or resnet (no encoder/attention)
    # training
    epochs: int = 60
    batch_size: int = 32
    learning_rate: float = 1e-3
    test_fraction: float = 0.2
    val_fraction: float = 0.1
    class_weighting: bool = True
    holdout_subject: int = 0  # 0 = pooled split
    # search / pruning
    hpo_budget: int = 20
    hpo_epochs: int = 10
    prune_fraction: float = 0.5
    retrain_epochs: int = 20
    # explanation
    smoothgrad_n: int = 50
    smoothgrad_sigma: float = 0.15
    saliency_epochs: int = 30
    tsne_perplexity: float = 30.0
    tsne_iterations: int = 1000
    tsne_points: int = 300
    # transfer
    target_subject: int = 7
    shots: tuple[int, ...] = (15,)
    transfer_seeds: int = 5
    pretrain_epochs: int = 20
    finetune_epochs: int = 30
    freeze_extractor: bool = False

    def validate(self) -> "RunConfig":
        checks = [
            (len(self.counts) == 6 and min(self.counts) >= 0, "counts must be 6 non-negative integers"),
            (self.subjects >= 1, "subjects must be >= 1"),
            (self.dataset_format in ("text", "binary"), "dataset_format must be text or binary"),
            (self.d_model >= 2 and self.heads >= 1 and self.d_model % self.heads == 0,
             "d_model must be a positive multiple of heads"),
            (self.d_model % 2 == 0, "d_model must be even (two LSTM directions)"),
            (self.resnet_blocks >= 1 and self.lstm_layers >= 1, "resnet_blocks and lstm_layers must be >= 1"),
            (self.architecture in ("full", "transformer", "resnet"),
             "architecture must be full, transformer or resnet"),
            (self.frame_size >= 1 and 1000 % self.frame_size == 0, "frame_size must divide 1000"),
            (0.0 <= self.dropout < 1.0, "dropout must lie in [0, 1)"),
            (self.epochs >= 0 and self.batch_size >= 1, "epochs >= 0 and batch_size >= 1 required"),
            (self.learning_rate >= 0, "learning_rate must be >= 0"),
            (0 < self.test_fraction < 1 and 0 <= self.val_fraction < 1, "split fractions out of range"),
            (self.holdout_subject >= 0, "holdout_subject must be >= 0"),
            (self.hpo_budget >= 1 and self.hpo_epochs >= 1, "hpo_budget and hpo_epochs must be >= 1"),
            (0 < self.prune_fraction < 1, "prune_fraction must lie in (0, 1)"),
            (self.retrain_epochs >= 0, "retrain_epochs must be >= 0"),
            (self.smoothgrad_n >= 1 and self.smoothgrad_sigma >= 0, "smoothgrad_n >= 1 and smoothgrad_sigma >= 0"),
            (self.saliency_epochs >= 1 and self.tsne_points >= 2, "saliency_epochs >= 1 and tsne_points >= 2"),
            (self.tsne_perplexity > 0 and self.tsne_iterations >= 1, "tsne_perplexity > 0 and tsne_iterations >= 1"),
            (len(self.shots) >= 1 and min(self.shots) >= 1, "shots must be positive integers"),
            (self.transfer_seeds >= 1, "transfer_seeds must be >= 1"),
            (self.pretrain_epochs >= 0 and self.finetune_epochs >= 0, "epoch budgets must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise CliError(msg, "config")
        return self

    def set(self, key: str, value: str) -> None:
        types = {f.name: f.type for f in fields(self)}
        if key not in types:
            raise CliError(f"unknown config key {key!r}", "config")
        kind = types[key]
        try:
            if kind == "bool":
                low = str(value).strip().lower()
                if low not in ("1", "0", "true", "false", "yes", "no"):
                    raise ValueError(value)
                v = low in ("1", "true", "yes")
            elif kind == "int":
                v = int(value)
            elif kind == "float":
                v = float(value)
            elif kind.startswith("tuple"):
                v = _ints(value)
            else:
                v = str(value)
        except ValueError as e:
            raise CliError(f"bad value for {key}: {value!r}", "config") from e
        setattr(self, key, v)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(map(str, v))
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def model_config(self):
        from .sleepnet import SleepNetConfig, ablation_config, default_channels

        base = SleepNetConfig(frame_size=self.frame_size, d_model=self.d_model, lstm_layers=self.lstm_layers,
                              heads=self.heads, resnet_blocks=self.resnet_blocks,
                              resnet_channels=default_channels(self.resnet_blocks), dropout=self.dropout)
        return ablation_config(self.architecture, base)

    def train_config(self, **over):
        from .trainer import TrainConfig

        kw = dict(epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate, seed=self.seed,
                  test_fraction=self.test_fraction, val_fraction=self.val_fraction,
                  class_weighting=self.class_weighting, holdout_subject=self.holdout_subject or None)
        kw.update(over)
        return TrainConfig(**kw)


def parse_config_text(text: str, cfg: RunConfig | None = None) -> RunConfig:
    cfg = cfg or RunConfig()
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"config line {n}: expected key=value, got {raw!r}", "config")
        k, v = line.split("=", 1)
        cfg.set(k.strip(), v.strip())
    return cfg


def resolve_config(args: argparse.Namespace, environ=None) -> RunConfig:
    environ = os.environ if environ is None else environ
    cfg = RunConfig()
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise CliError(f"config file not found: {path}", "io")
        parse_config_text(path.read_text(), cfg)
    names = {f.name for f in fields(cfg)}
    for key, value in sorted(environ.items()):
        if key.startswith(ENV_PREFIX):
            name = key[len(ENV_PREFIX):].lower()
            if name not in names:
                raise CliError(f"unknown config key {name!r} from environment variable {key}", "config")
            cfg.set(name, value)
    for item in args.set or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}", "config")
        k, v = item.split("=", 1)
        cfg.set(k.strip(), v.strip())
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    for key in ("count", "fraction", "epochs"):
        val = getattr(args, key, None)
        if val is not None:
            if key == "count":
                cfg.counts = (val,) * 6
            elif key == "fraction":
                cfg.prune_fraction = val
            else:
                cfg.epochs = val
    return cfg.validate()


# -- output helpers -------------------------------------------------------------------------

class Run:
    """Output directory bookkeeping for one command."""

    def __init__(self, command: str, cfg: RunConfig, argv: list[str]):
        self.command = command
        self.cfg = cfg
        self.argv = argv
        self.dir = Path(cfg.out)
        try:
            self.dir.mkdir(parents=True, exist_ok=True)
            probe = self.dir / ".write-test"
            probe.write_text("")
            probe.unlink()
        except OSError as e:
            raise CliError(f"output directory {self.dir} is not writable: {e}", "io") from e
        self.outputs: dict[str, str] = {}
        self.inputs: dict[str, str] = {}
        self.extra: dict = {}
        self.t0 = time.perf_counter()

    def path(self, name: str) -> Path:
        return self.dir / name

    def record(self, name: str) -> Path:
        p = self.path(name)
        self.outputs[name] = hashlib.sha256(p.read_bytes()).hexdigest()
        return p

    def write_text(self, name: str, text: str) -> Path:
        self.path(name).write_text(text)
        return self.record(name)

    def write_csv(self, name: str, header: list[str], rows) -> Path:
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_cell(v) for v in r])
        return self.record(name)

    def finish(self) -> dict:
        manifest = {
            "command": self.command,
            "argv": self.argv,
            "config": self.cfg.to_text(),
            "config_sha256": self.cfg.digest(),
            "seed": self.cfg.seed,
            "versions": {"sleepsense": __version__, "python": platform.python_version(), "numpy": np.__version__},
            "inputs": self.inputs,
            "outputs": dict(sorted(self.outputs.items())),
            **self.extra,
        }
        (self.dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        log.info("%s finished in %.1f s", self.command, time.perf_counter() - self.t0)
        return manifest


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _load_data(run: Run, path: str | None):
    from .storage import DatasetFormatError, file_sha256, load_dataset

    p = Path(path)
    if not p.is_file():
        raise CliError(f"dataset not found: {p}", "io")
    digest = file_sha256(p)
    manifest = p.parent / "manifest.json"
    if manifest.is_file():
        expected = json.loads(manifest.read_text()).get("outputs", {}).get(p.name)
        if expected is not None and expected != digest:
            raise CliError(f"checksum mismatch for {p}: manifest says {expected}, file is {digest}", "checksum")
    try:
        ds = load_dataset(p)
    except (DatasetFormatError, UnicodeDecodeError, ValueError) as e:
        raise CliError(f"invalid dataset {p}: {e}", "schema") from e
    run.inputs[str(p)] = digest
    return ds, digest


def _load_checkpoint(run: Run, path: str | None):
    from .checkpoint import Checkpoint, CheckpointError

    p = Path(path)
    if not p.is_file():
        raise CliError(f"checkpoint not found: {p}", "io")
    try:
        ck = Checkpoint.load(p)
        ck.build()
    except (CheckpointError, ValueError, KeyError, UnicodeDecodeError) as e:
        raise CliError(f"invalid checkpoint {p}: {e}", "schema") from e
    run.inputs[str(p)] = hashlib.sha256(p.read_bytes()).hexdigest()
    return ck


def _test_subset(ds, digest: str, ck, cfg: RunConfig):
    """Held-out test epochs when the checkpoint was trained on this very file, else everything."""
    from .trainer import TrainConfig, split

    prov = ck.provenance
    if prov.get("dataset_sha256") != digest or "split" not in prov:
        return ds, "all"
    tc = TrainConfig(**prov["split"])
    return ds.subset(split(ds.labels, tc, ds.subjects).test), "test"


# -- commands -------------------------------------------------------------------------------

def cmd_generate(run: Run, args) -> None:
    from .data import simulate_dataset
    from .storage import save_dataset
    from .synthgen import DatasetSpec, make_subjects

    cfg = run.cfg
    spec = DatasetSpec(tuple(cfg.counts), make_subjects(cfg.subjects, cfg.seed), cfg.seed)
    spec.validate()
    ds = simulate_dataset(spec, placement_salt=cfg.placement_salt, keep_meta=False)
    _ = ds.inputs  # fills the selected-channel column
    name = "dataset.slpd" if cfg.dataset_format == "binary" else "dataset.txt"
    save_dataset(ds, run.path(name))
    run.record(name)
    run.extra.update(records=len(ds), class_counts=list(ds.class_counts()), content_sha256=ds.content_hash())
    print(f"wrote {len(ds)} epochs to {run.path(name)}")


def cmd_train(run: Run, args) -> None:
    from . import plots
    from .checkpoint import Checkpoint
    from .sleepnet import SleepNet
    from .trainer import STREAM_INIT, train
    from .synthgen import derive_seed

    cfg = run.cfg
    ds, digest = _load_data(run, args.data)
    tc = cfg.train_config()
    model = SleepNet(cfg.model_config(), seed=derive_seed(cfg.seed, STREAM_INIT))
    res = train(model, ds, tc, on_epoch=lambda r: log.info("epoch %d loss %.4f val %.4f", r["epoch"], r["loss"], r["val_accuracy"]))
    split_keys = {k: v for k, v in dataclasses.asdict(tc).items()
                  if k in ("seed", "test_fraction", "val_fraction", "holdout_subject")}
    ck = Checkpoint.from_model(res.model, seed=cfg.seed, dataset_sha256=digest, split=split_keys,
                               best_epoch=res.best_epoch, best_val_accuracy=res.best_val_accuracy,
                               config_sha256=cfg.digest())
    ck.save(run.path("model.slpn"))
    run.record("model.slpn")
    keys = ["epoch", "loss", "val_accuracy", "val_loss", "best_val_accuracy"]
    run.write_csv("history.csv", keys, ([r[k] for k in keys] for r in res.history))
    if res.history:
        plots.history(res.history, run.path("history.png"))
        run.record("history.png")
    run.extra.update(best_epoch=res.best_epoch, best_val_accuracy=res.best_val_accuracy)
    print(f"best validation accuracy {res.best_val_accuracy:.4f} at epoch {res.best_epoch}")


def _write_metrics(run: Run, m, prefix: str = "") -> None:
    from . import plots
    from .synthgen import CLASS_NAMES
    from .trainer import roc_curve

    rows = [("overall_accuracy", m.overall_accuracy), ("balanced_accuracy", m.balanced_accuracy),
            ("macro_auc", m.macro_auc), ("n", int(m.confusion.sum()))]
    rows += [(f"accuracy_{n}", a) for n, a in zip(CLASS_NAMES, m.per_class_accuracy)]
    rows += [(f"auc_{n}", a) for n, a in zip(CLASS_NAMES, m.auc)]
    run.write_csv(f"{prefix}metrics.csv", ["metric", "value"], rows)
    run.write_csv(f"{prefix}confusion.csv", ["true"] + list(CLASS_NAMES),
                  ([CLASS_NAMES[i]] + m.confusion[i].tolist() for i in range(6)))
    curves, roc_rows = {}, []
    for c in range(6):
        pos = m.labels == c
        if pos.all() or not pos.any():
            continue
        fpr, tpr, thr = roc_curve(m.probabilities[:, c], pos)
        curves[c] = (fpr, tpr)
        roc_rows += [(CLASS_NAMES[c], f, t, th) for f, t, th in zip(fpr, tpr, thr)]
    run.write_csv(f"{prefix}roc.csv", ["class", "fpr", "tpr", "threshold"], roc_rows)
    if m.flops:
        run.write_csv(f"{prefix}flops.csv", ["component", "flops"], list(m.flops.items()))
    plots.confusion(m.confusion, run.path(f"{prefix}confusion.png"))
    run.record(f"{prefix}confusion.png")
    plots.roc(curves, m.auc, run.path(f"{prefix}roc.png"))
    run.record(f"{prefix}roc.png")


def cmd_eval(run: Run, args) -> None:
    from .trainer import evaluate

    ck = _load_checkpoint(run, args.checkpoint)
    ds, digest = _load_data(run, args.data)
    subset, which = _test_subset(ds, digest, ck, run.cfg)
    m = evaluate(ck, subset)
    _write_metrics(run, m)
    run.extra.update(evaluated_on=which, overall_accuracy=m.overall_accuracy, macro_auc=m.macro_auc)
    print(f"overall accuracy {m.overall_accuracy:.4f} on {len(subset)} epochs ({which})")


def cmd_hpo(run: Run, args) -> None:
    from . import plots
    from .trainer import hpo

    cfg = run.cfg
    ds, _ = _load_data(run, args.data)
    trials, best = hpo(ds, cfg.hpo_budget, seed=cfg.seed, epochs=cfg.hpo_epochs, base=cfg.model_config(),
                       on_trial=lambda t: log.info("trial %d val %.4f", t.index, t.val_accuracy))
    keys = ["index", "d_model", "heads", "resnet_blocks", "learning_rate", "batch_size", "val_accuracy", "best_epoch"]
    rows = [dataclasses.asdict(t) for t in trials]
    run.write_csv("trials.csv", keys, ([r[k] for k in keys] for r in rows))
    run.write_text("best.txt", "\n".join(f"{k}={v}" for k, v in dataclasses.asdict(best).items()) + "\n")
    plots.hpo_trials(rows, run.path("hpo.png"))
    run.record("hpo.png")
    share = float(np.mean([t.val_accuracy > 0.9 for t in trials]))
    run.extra.update(share_above_090=share, best_trial=best.index)
    print(f"{share:.0%} of {len(trials)} trials above 0.90 validation accuracy; best trial {best.index}")


def cmd_prune(run: Run, args) -> None:
    from . import plots
    from .checkpoint import Checkpoint
    from .sleepnet import count_flops, measure_flops
    from .trainer import TrainConfig, evaluate, prune, split, train

    cfg = run.cfg
    ck = _load_checkpoint(run, args.checkpoint)
    ds, digest = _load_data(run, args.data)
    base = ck.build()
    pruned = prune(base, cfg.prune_fraction)
    before, after = measure_flops(base), measure_flops(pruned)
    if before != count_flops(base.config) or after != count_flops(pruned.config):
        raise CliError("instrumented FLOPs disagree with the analytic count", "internal")
    if cfg.retrain_epochs > 0:
        prov = ck.provenance
        tc = TrainConfig(**prov["split"]) if prov.get("dataset_sha256") == digest and "split" in prov else cfg.train_config()
        tc = dataclasses.replace(tc, epochs=cfg.retrain_epochs, learning_rate=cfg.learning_rate, batch_size=cfg.batch_size)
        pruned = train(pruned, ds, tc, split(ds.labels, tc, ds.subjects)).model
    out = Checkpoint.from_model(pruned, **{**ck.provenance, "pruned_fraction": cfg.prune_fraction,
                                           "retrain_epochs": cfg.retrain_epochs})
    out.save(run.path("pruned.slpn"))
    run.record("pruned.slpn")
    run.write_csv("flops.csv", ["component", "baseline", "pruned", "ratio"],
                  ([k, before[k], after[k], after[k] / before[k]] for k in before))
    plots.flops_bars(before, after, run.path("flops.png"))
    run.record("flops.png")
    subset, which = _test_subset(ds, digest, ck, cfg)
    m0, m1 = evaluate(base, subset), evaluate(pruned, subset)
    run.write_csv("accuracy.csv", ["model", "overall_accuracy", "balanced_accuracy"],
                  [("baseline", m0.overall_accuracy, m0.balanced_accuracy),
                   ("pruned", m1.overall_accuracy, m1.balanced_accuracy)])
    ratio = after["total"] / before["total"]
    run.extra.update(flops_ratio=ratio, pruned_config=pruned.config.to_text(), evaluated_on=which)
    print(f"FLOPs {before['total']} -> {after['total']} ({ratio:.1%}); accuracy "
          f"{m0.overall_accuracy:.4f} -> {m1.overall_accuracy:.4f}")


def cmd_explain(run: Run, args) -> None:
    from . import plots
    from .explain import extract_features, saliency_window_contrast, separability, smoothgrad, tsne
    from .synthgen import CLASS_NAMES, BehaviourClass, DatasetSpec, make_subjects
    from .data import simulate_dataset
    from .synthgen import derive_seed

    cfg = run.cfg
    ck = _load_checkpoint(run, args.checkpoint)
    model = ck.build()
    ds, digest = _load_data(run, args.data)
    subset, which = _test_subset(ds, digest, ck, cfg)

    # saliency needs pause locations, so CSA epochs are regenerated with metadata
    n = cfg.saliency_epochs
    counts = [0] * 6
    counts[BehaviourClass.CSA] = n
    csa = simulate_dataset(DatasetSpec(tuple(counts), make_subjects(cfg.subjects, cfg.seed),
                                       derive_seed(cfg.seed, 41)))
    sal_rows, contrast = [], []
    for i in range(len(csa)):
        tr = smoothgrad(model, csa.inputs[i], int(BehaviourClass.CSA), cfg.smoothgrad_n, cfg.smoothgrad_sigma,
                        seed=derive_seed(cfg.seed, 42, i))
        pause = csa.meta[i]["pause"]
        inside, outside = saliency_window_contrast(tr.values, pause)
        contrast.append((i, pause[0], pause[1], inside, outside))
        sal_rows += [(i, t, float(csa.inputs[i][t]), v) for t, v in enumerate(tr.values)]
        if i < 3:
            plots.saliency(csa.inputs[i], tr.values, run.path(f"saliency_csa_{i}.svg"), title=f"CSA epoch {i}")
            run.record(f"saliency_csa_{i}.svg")
    run.write_csv("saliency.csv", ["epoch", "sample", "input", "saliency"], sal_rows)
    run.write_csv("saliency_pause.csv", ["epoch", "pause_start", "pause_stop", "mean_inside", "mean_outside"], contrast)

    if len(np.unique(subset.labels)) >= len(subset):
        log.warning("held-out split has %d epochs, too few to embed; using all epochs", len(subset))
        subset, which = ds, "all"
    rng = np.random.default_rng(derive_seed(cfg.seed, 43))
    idx = np.sort(rng.permutation(len(subset))[: cfg.tsne_points])
    pts = subset.subset(idx)
    perplexity = min(cfg.tsne_perplexity, (len(pts) - 1) / 3.0)
    sep = {}
    for source, data in (("raw", pts.inputs.astype(np.float64)), ("features", extract_features(model, pts.inputs))):
        emb = tsne(data, perplexity, cfg.tsne_iterations, seed=cfg.seed, source=source)
        sep[source] = separability(emb, pts.labels)
        run.write_csv(f"embedding_{source}.csv", ["x", "y", "label"],
                      ([x, y, CLASS_NAMES[c]] for (x, y), c in zip(emb.points.tolist(), pts.labels)))
        plots.embedding(emb.points, pts.labels, run.path(f"tsne_{source}.png"), title=f"t-SNE ({source})")
        run.record(f"tsne_{source}.png")
    run.write_csv("separability.csv", ["source", "silhouette"], list(sep.items()))
    inside = np.array([c[3] for c in contrast])
    outside = np.array([c[4] for c in contrast])
    run.extra.update(separability=sep, pause_saliency_ratio=float(inside.mean() / outside.mean()), evaluated_on=which)
    print(f"silhouette raw {sep['raw']:.3f} features {sep['features']:.3f}; "
          f"CSA pause/outside saliency {inside.mean() / outside.mean():.2f}")


def cmd_transfer(run: Run, args) -> None:
    from . import plots
    from .synthgen import derive_seed
    from .transfer import pretrain, reports_to_csv, run_transfer, summarize

    cfg = run.cfg
    ds, _ = _load_data(run, args.data)
    reports, summary_rows = [], []
    pre = pretrain(ds, cfg.target_subject, cfg.train_config(epochs=cfg.pretrain_epochs), cfg.model_config())
    pre.save(run.path("pretrained.slpn"))
    run.record("pretrained.slpn")
    for shots in cfg.shots:
        per = [run_transfer(ds, cfg.target_subject, shots, cfg.train_config(seed=derive_seed(cfg.seed, 51, s)), pre,
                            freeze_extractor=cfg.freeze_extractor, finetune_epochs=cfg.finetune_epochs)
               for s in range(cfg.transfer_seeds)]
        reports += per
        summary_rows.append({"shots": shots, **summarize(per)})
    run.write_text("transfer.csv", reports_to_csv(reports))
    run.write_text("transfer.json", json.dumps([r.row() for r in reports], indent=2, sort_keys=True) + "\n")
    keys = list(summary_rows[0])
    run.write_csv("transfer_summary.csv", keys, ([r[k] for k in keys] for r in summary_rows))
    plots.transfer_curve(summary_rows, run.path("transfer.png"))
    run.record("transfer.png")
    run.extra.update(summary=summary_rows)
    for r in summary_rows:
        print(f"{r['shots']} shots: transfer {r['transfer_mean']:.4f} scratch {r['scratch_mean']:.4f}")


def cmd_infer(run: Run, args) -> None:
    from .pipeline import model_input
    from .storage import parse_frame
    from .synthgen import CLASS_NAMES

    ck = _load_checkpoint(run, args.checkpoint)
    model = ck.build()
    src = args.input
    if src != "-" and not Path(src).is_file():
        raise CliError(f"input stream not found: {src}", "io")
    stream = sys.stdin if src == "-" else open(src)
    window: list[np.ndarray] = []
    malformed = frames = 0
    rows = []
    try:
        for line in stream:
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            frame = parse_frame(line)
            if frame is None:
                malformed += 1
                continue
            window.append(frame)
            frames += 1
            if len(window) == 1000:
                t0 = time.perf_counter()
                x, ch = model_input(np.stack(window, axis=1))
                p = model.predict_proba(x[None, :].astype(np.float32))[0]
                latency = (time.perf_counter() - t0) * 1e3
                c = int(p.argmax())
                row = (len(rows), frames - 1000, c, CLASS_NAMES[c], float(p[c]), ch, latency)
                rows.append(row)
                log.info("window %d -> %s (p=%.3f) in %.1f ms", row[0], row[3], row[4], latency)
                print(f"{row[0]},{row[1]},{c},{row[3]},{row[4]:.6f},{ch},{latency:.3f}", flush=True)
                window = []
    finally:
        if stream is not sys.stdin:
            stream.close()
    run.write_csv("infer.csv", ["window", "start_frame", "class", "class_name", "probability", "channel", "latency_ms"], rows)
    run.extra.update(windows=len(rows), frames=frames, malformed_frames=malformed, dropped_tail=len(window))
    if malformed:
        log.warning("skipped %d malformed frames", malformed)


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "hpo": cmd_hpo,
    "prune": cmd_prune,
    "explain": cmd_explain,
    "transfer": cmd_transfer,
    "infer": cmd_infer,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message, "usage", EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sleepsense", description="Synthetic sleep-behaviour monitoring pipeline.")
    p.add_argument("--version", action="version", version=f"sleepsense {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="key=value settings file")
        s.add_argument("--seed", type=int)
        s.add_argument("--out", help="output directory")
        s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "generate":
            s.add_argument("--count", type=int, help="epochs per class (all six classes)")
        if name in ("train", "eval", "hpo", "prune", "explain", "transfer"):
            s.add_argument("--data", help="dataset file")
        if name in ("eval", "prune", "explain", "infer"):
            s.add_argument("--checkpoint", help="model checkpoint")
        if name == "train":
            s.add_argument("--epochs", type=int)
        if name == "prune":
            s.add_argument("--fraction", type=float)
        if name == "infer":
            s.add_argument("--input", help="frame stream file, - for stdin")
    return p


REQUIRED_ARGS = {
    "train": ("data",),
    "eval": ("checkpoint", "data"),
    "hpo": ("data",),
    "prune": ("checkpoint", "data"),
    "explain": ("checkpoint", "data"),
    "transfer": ("data",),
    "infer": ("checkpoint", "input"),
}


def _check_required(args) -> None:
    # checked before any output directory is created
    for name in REQUIRED_ARGS.get(args.command, ()):
        if not getattr(args, name):
            raise CliError(f"--{name} is required for {args.command}", "usage", EXIT_USAGE)


def main(argv: list[str] | None = None, environ=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    command = None
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        _check_required(args)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
        cfg = resolve_config(args, environ)
        run = Run(command, cfg, argv)
        COMMANDS[command](run, args)
        run.finish()
        return 0
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    except CliError as e:
        _emit_error(command, e.kind, str(e))
        return e.code
    except Exception as e:  # noqa: BLE001 - every failure must surface as JSON
        _emit_error(command, type(e).__name__, str(e))
        return EXIT_ERROR


def _emit_error(command, kind, message) -> None:
    print(json.dumps({"ok": False, "command": command, "error": kind, "message": message}, sort_keys=True),
          file=sys.stderr)


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
