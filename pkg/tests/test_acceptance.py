"""End-to-end acceptance checks on the default synthetic pipeline.

Each test prints one ``criterion N PASS|FAIL`` line (also repeated in the
terminal summary). The expensive default training run is shared through a
module fixture.
"""

import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from sleepsense import sensorsim as ss
from sleepsense.checkpoint import Checkpoint
from sleepsense.data import simulate_dataset
from sleepsense.explain import extract_features, input_gradient, saliency_window_contrast, separability, smoothgrad, tsne
from sleepsense.numcore import ops
from sleepsense.numcore.gradcheck import grad_check
from sleepsense.pipeline import pearson, select_channel
from sleepsense.sleepnet import SleepNet, SleepNetConfig, count_flops, measure_flops
from sleepsense.storage import dumps_binary, dumps_text, loads_binary, loads_text
from sleepsense.synthgen import BehaviourClass, DatasetSpec, derive_seed, make_subjects, spectral_profile, synth_dataset
from sleepsense.trainer import STREAM_INIT, TrainConfig, binary_auc, evaluate, hpo, prune, train
from sleepsense.transfer import pretrain, run_transfer

pytestmark = pytest.mark.slow

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture(scope="module")
def dataset():
    ds = simulate_dataset(DatasetSpec.study_default(0))
    ds.inputs
    return ds


@pytest.fixture(scope="module")
def trained(dataset):
    t0 = time.perf_counter()
    res = train(SleepNet(seed=derive_seed(0, STREAM_INIT)), dataset, TrainConfig())
    return res, time.perf_counter() - t0


@pytest.fixture(scope="module")
def test_set(dataset, trained):
    return dataset.subset(trained[0].split.test)


def pair_count_auc(pos, neg):
    pos, neg = np.asarray(pos)[:, None], np.asarray(neg)[None, :]
    return float(((pos > neg).sum() + 0.5 * (pos == neg).sum()) / (pos.size * neg.size))


def test_c01_end_to_end_accuracy(trained, test_set, criterion):
    res, elapsed = trained
    m = evaluate(res.model, test_set)
    per = np.array(m.per_class_accuracy, dtype=float)
    ok = m.overall_accuracy >= 0.95 and per.min() >= 0.90 and elapsed <= 1800
    criterion(1, "end-to-end accuracy", ok,
              f"overall {m.overall_accuracy:.4f} (>= 0.95), per-class min {per.min():.4f} (>= 0.90) "
              f"{np.round(per, 3).tolist()}, balanced {m.balanced_accuracy:.4f}, "
              f"training {elapsed:.0f} s (<= 1800), best epoch {res.best_epoch}")
    assert ok


def test_c02_pruning(dataset, trained, test_set, criterion):
    res, _ = trained
    base = res.model
    ck = Checkpoint.from_model(base)
    pruned = prune(ck, 0.5)
    before, after = measure_flops(base), measure_flops(pruned)
    exact = before == count_flops(base.config) and after == count_flops(pruned.config)
    ratio = after["total"] / before["total"]
    retrained = train(pruned, dataset, TrainConfig(epochs=20), res.split).model
    acc0 = evaluate(base, test_set).overall_accuracy
    acc1 = evaluate(retrained, test_set).overall_accuracy
    ok = exact and ratio <= 0.70 and abs(acc1 - acc0) <= 0.02
    criterion(2, "pruning", ok,
              f"FLOPs {before['total']} -> {after['total']} = {ratio:.4f} of baseline (<= 0.70), "
              f"instrumented == analytic: {exact}; accuracy {acc0:.4f} -> {acc1:.4f} "
              f"(|diff| {abs(acc1 - acc0):.4f} <= 0.02)")
    assert ok


def _full_model_grad_check():
    """Every parameter tensor (sampled coordinates) plus the input of a reduced SleepNet, float64."""
    cfg = SleepNetConfig(d_model=8, heads=2, resnet_blocks=2, resnet_channels=(4, 8), frame_size=10, input_length=50)
    model = SleepNet(cfg, seed=0)
    model.eval()
    named = model.named_parameters()
    owners = []
    for name in named:
        *path, attr = name.split(".")
        obj = model
        for part in path:
            obj = obj[int(part)] if part.isdigit() else getattr(obj, part)
        owners.append((obj, attr))
    labels = [0, 3, 5]

    def loss(x, *params):
        for (obj, attr), p in zip(owners, params):
            setattr(obj, attr, p)
        return ops.cross_entropy(model(x), labels)

    x = np.random.default_rng(1).standard_normal((3, 50))
    inputs = [x] + [p.data.astype(np.float64) for p in named.values()]
    return grad_check(loss, inputs, tolerance=1e-4, max_coords=12, seed=2)


def test_c03_gradient_correctness(criterion):
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                           str(ROOT / "tests" / "test_numcore.py"), "-k", "grad"],
                          capture_output=True, text=True, cwd=ROOT, env={**os.environ, "PYTHONHASHSEED": "0"})
    report = _full_model_grad_check()
    elapsed = time.perf_counter() - t0
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok = proc.returncode == 0 and report.passed and elapsed <= 300
    criterion(3, "gradient correctness", ok,
              f"primitive checks [{summary}]; full model max rel error {report.max_rel_error:.2e} "
              f"over {report.checked} coordinates (< 1e-4); {elapsed:.0f} s (<= 300)")
    assert ok


def test_c04_channel_correlation(criterion):
    subjects = make_subjects(7, 0)
    items = synth_dataset(DatasetSpec((20,) * 6, subjects, 77))
    worst, invariant = 1.0, True
    rng = np.random.default_rng(4)
    for k, (trace, _, _) in enumerate(items[:120]):
        arr = ss.sample_array(derive_seed(4, k))
        cur = ss.simulate(trace, arr, noise_seed=k).currents
        for i in range(6):
            for j in range(i + 1, 6):
                worst = min(worst, pearson(cur[i], cur[j]))
        invariant &= select_channel(cur * rng.uniform(1e-3, 1e3)) == select_channel(cur)
    ok = worst > 0.9 and invariant
    criterion(4, "channel correlation", ok,
              f"min Pearson over 120 placements x 15 pairs {worst:.4f} (> 0.9); "
              f"select_channel scale-invariant: {invariant}")
    assert ok


def test_c05_positioning_free(trained, criterion):
    res, _ = trained
    accs = []
    for salt in range(1, 11):
        ds = simulate_dataset(DatasetSpec.study_default(0), placement_salt=salt, keep_meta=False)
        accs.append(evaluate(res.model, ds.subset(res.split.test)).overall_accuracy)
    spread = max(accs) - min(accs)
    ok = spread <= 0.02
    criterion(5, "placement robustness", ok,
              f"test accuracy over 10 fresh placements {min(accs):.4f}..{max(accs):.4f}, "
              f"spread {spread:.4f} (<= 0.02)")
    assert ok


def test_c06_transfer(criterion):
    ds = simulate_dataset(DatasetSpec((210,) * 6, make_subjects(7, 0), 0), keep_meta=False)
    pre = pretrain(ds, 7, TrainConfig(epochs=20))
    reps = [run_transfer(ds, 7, 15, TrainConfig(seed=s), pre) for s in range(5)]
    t = np.mean([r.transfer_accuracy for r in reps])
    s = np.mean([r.scratch_accuracy for r in reps])
    ok = t - s >= 0.05
    criterion(6, "few-shot transfer", ok,
              f"15 shots, subject 7, 5 seeds: transfer {t:.4f} vs scratch {s:.4f}, gap {t - s:.4f} (>= 0.05); "
              f"pretrained on subjects {reps[0].pretrain_subjects}, {reps[0].n_test} test epochs")
    assert ok


def test_c07_roc(trained, test_set, criterion):
    m = evaluate(trained[0].model, test_set)
    rng = np.random.default_rng(7)
    scores = np.round(rng.random(500), 3)  # rounding forces ties
    pos = rng.random(500) < 0.3
    err = abs(binary_auc(scores[pos], scores[~pos]) - pair_count_auc(scores[pos], scores[~pos]))
    ok = m.macro_auc >= 0.98 and err <= 1e-9
    criterion(7, "ROC", ok,
              f"macro AUC {m.macro_auc:.5f} (>= 0.98), per class {np.round(m.auc, 4).tolist()}; "
              f"rank AUC vs pair-count oracle on 500 scores |diff| {err:.1e} (<= 1e-9)")
    assert ok


def test_c08_hpo_robustness(dataset, criterion):
    t0 = time.perf_counter()
    trials, best = hpo(dataset, 20, seed=0, epochs=10)
    share = np.mean([t.val_accuracy > 0.90 for t in trials])
    ok = share >= 0.70
    low = [f"lr={t.learning_rate:.1e}/d={t.d_model}/acc={t.val_accuracy:.3f}" for t in trials if t.val_accuracy <= 0.90]
    criterion(8, "HPO robustness", ok,
              f"{share:.0%} of 20 trials > 0.90 validation accuracy (>= 70%); best trial {best.index} "
              f"val {best.val_accuracy:.4f}; below: {low}; {time.perf_counter() - t0:.0f} s")
    assert ok


def test_c09_explainability(trained, test_set, criterion):
    model = trained[0].model
    csa = simulate_dataset(DatasetSpec((0, 0, 0, 0, 30, 0), make_subjects(7, 0), 909))
    x0 = csa.inputs[0]
    sg = smoothgrad(model, x0, int(BehaviourClass.CSA), n=1, sigma=0.0)
    vanilla = input_gradient(model, x0[None, :], int(BehaviourClass.CSA))[0].astype(np.float64)
    bitwise = np.array_equal(sg.values, vanilla)

    inside, outside = [], []
    for i in range(len(csa)):
        tr = smoothgrad(model, csa.inputs[i], int(BehaviourClass.CSA), seed=i)
        a, b = saliency_window_contrast(tr.values, csa.meta[i]["pause"])
        inside.append(a)
        outside.append(b)
    diff = np.array(inside) - np.array(outside)
    t_res = stats.ttest_1samp(diff, 0.0, alternative="greater")
    lower = diff.mean() - stats.t.ppf(0.95, len(diff) - 1) * diff.std(ddof=1) / np.sqrt(len(diff))

    rng = np.random.default_rng(9)
    idx = np.sort(rng.permutation(len(test_set))[:300])
    pts = test_set.subset(idx)
    s_raw = separability(tsne(pts.inputs.astype(np.float64), seed=0, source="raw"), pts.labels)
    s_feat = separability(tsne(extract_features(model, pts.inputs), seed=0, source="features"), pts.labels)

    both = simulate_dataset(DatasetSpec((0, 0, 0, 50, 50, 0), make_subjects(7, 0), 910))
    f = extract_features(model, both.inputs)
    f_csa, f_brux = f[both.labels == 4], f[both.labels == 3]
    d_same = np.linalg.norm(f_csa[:, None] - f_csa[None], axis=-1)[np.triu_indices(50, 1)].mean()
    d_cross = np.linalg.norm(f_csa[:, None] - f_brux[None], axis=-1).mean()

    ok = bitwise and t_res.pvalue < 0.05 and lower > 0 and s_feat > s_raw and d_same < d_cross
    criterion(9, "explainability", ok,
              f"sigma=0,n=1 equals vanilla bit-for-bit: {bitwise}; 30 CSA epochs in-pause {np.mean(inside):.3e} vs "
              f"out {np.mean(outside):.3e}, one-sided p {t_res.pvalue:.1e}, 95% lower bound {lower:.2e} (> 0); "
              f"silhouette features {s_feat:.3f} vs raw {s_raw:.3f}; feature distance CSA-CSA {d_same:.3f} "
              f"< CSA-Bruxism {d_cross:.3f}")
    assert ok


def test_c10_determinism_and_round_trips(tmp_path, criterion):
    spec = DatasetSpec((12,) * 6, make_subjects(7, 0), 10)
    a, b = simulate_dataset(spec), simulate_dataset(spec)
    same_data = dumps_text(a) == dumps_text(b) and dumps_binary(a) == dumps_binary(b)

    cfg = SleepNetConfig(d_model=16, heads=2, resnet_blocks=2, resnet_channels=(16, 32))
    runs = []
    for _ in range(2):
        res = train(SleepNet(cfg, seed=3), a, TrainConfig(epochs=3, seed=3))
        runs.append((res.history, res.checkpoint(seed=3).to_bytes()))
    same_train = runs[0][0] == runs[1][0] and runs[0][1] == runs[1][1]

    text_rt = loads_text(dumps_text(a))
    bin_rt = loads_binary(dumps_binary(a))
    data_rt = all(
        np.array_equal(getattr(rt, k), getattr(a, k))
        for rt in (text_rt, bin_rt) for k in ("currents", "labels", "subjects", "selected")
    )
    ck = Checkpoint.from_bytes(runs[0][1])
    ck.save(tmp_path / "m.slpn")
    back = Checkpoint.load(tmp_path / "m.slpn")
    ck_rt = back.to_bytes() == runs[0][1] and all(np.array_equal(back.state[k], ck.state[k]) for k in ck.state)
    ok = same_data and same_train and data_rt and ck_rt
    criterion(10, "determinism and round-trips", ok,
              f"datasets byte-identical {same_data}; histories and checkpoints byte-identical {same_train}; "
              f"dataset text/binary round-trip exact {data_rt}; checkpoint round-trip exact {ck_rt}")
    assert ok


def test_c11_signal_physics(criterion):
    items = synth_dataset(DatasetSpec.study_default(0))
    low = min(sum(spectral_profile(tr)[:2]) for tr, _, _ in items)

    rng = np.random.default_rng(11)
    worst_r = 0.0
    for k in range(200):
        unit = ss.sample_array(k).channels[k % 6]
        eh, ev = rng.uniform(-0.01, 0.01, 2)
        inv = sum(1.0 / (unit.base_resistance_quarter * (1 + unit.gauge_factor * (wh * eh + wv * ev)))
                  for wh, wv in unit.orientation)
        worst_r = max(worst_r, abs(float(ss.channel_resistance(unit, eh, ev)) * inv - 1.0))

    worst_i = 0.0
    for k, (tr, _, _) in enumerate(items[:50]):
        arr = ss.sample_array(k)
        eps = ss.propagate(tr, arr, noise_seed=k)
        ro = ss.readout(arr, eps)
        r, _ = ss.resistances(arr, eps)
        worst_i = max(worst_i, float(np.max(np.abs(ro.currents * ss.lowpass(r) / ro.supply - 1.0))))
    ok = low >= 0.90 and worst_r <= 1e-12 and worst_i <= 1e-12
    criterion(11, "signal physics", ok,
              f"min power share below 10 Hz over {len(items)} epochs {low:.4f} (>= 0.90); channel_resistance vs "
              f"parallel-branch oracle max rel err {worst_r:.1e} (<= 1e-12); I*R/V - 1 max {worst_i:.1e}")
    assert ok
