import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sleepsense.synthgen import (
    STUDY_COUNTS,
    BehaviourClass,
    DatasetSpec,
    SubjectProfile,
    make_subjects,
    sign_change_rate,
    spectral_profile,
    summary_features,
    synth_dataset,
    synth_epoch,
)

SUBJECTS = make_subjects(7, 0)
EXTREMES = (
    SubjectProfile(subject_id=91, respiration_rate=0.40, amplitude_scale=2.0, jitter=0.3, seed=5),
    SubjectProfile(subject_id=92, respiration_rate=0.15, amplitude_scale=0.5, jitter=0.3, seed=6),
    SubjectProfile(subject_id=93, respiration_rate=0.15, amplitude_scale=2.0, jitter=0.0, seed=7),
)


def dft_power(x):
    """Direct O(N^2) one-sided DFT power of the mean-removed signal (FFT-free oracle)."""
    x = np.asarray(x, dtype=np.float64) - np.mean(x)
    n = len(x)
    k = np.arange(n // 2 + 1)
    basis = np.exp(-2j * np.pi * np.outer(k, np.arange(n)) / n)
    return k * 100.0 / n, np.abs(basis @ x) ** 2


def oracle_low_fraction(x, cutoff=10.0):
    f, p = dft_power(x)
    return p[f < cutoff].sum() / p.sum()


def rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


def test_class_codes_are_stable():
    assert [c.value for c in BehaviourClass] == [0, 1, 2, 3, 4, 5]
    assert [c.name for c in BehaviourClass] == ["NasalBreath", "MouthBreath", "Snoring", "Bruxism", "CSA", "OSA"]


@pytest.mark.parametrize("cls", list(BehaviourClass))
def test_epoch_is_deterministic_and_sized(cls):
    a = synth_epoch(cls, SubjectProfile(), 1234)
    b = synth_epoch(cls, SubjectProfile(), 1234)
    assert len(a) == 1000 and a.rate == 100
    np.testing.assert_array_equal(a.samples, b.samples)
    assert np.all(np.isfinite(a.samples))
    assert not np.array_equal(a.samples, synth_epoch(cls, SubjectProfile(), 1235).samples)


@pytest.mark.parametrize("rate", [0.149, 0.401, 1.0])
def test_rejects_respiration_rate_out_of_range(rate):
    with pytest.raises(ValueError):
        synth_epoch(BehaviourClass.NasalBreath, SubjectProfile(respiration_rate=rate), 0)


def test_nasal_power_below_10hz_against_dft_oracle():
    tr = synth_epoch(BehaviourClass.NasalBreath, SubjectProfile(), 7)
    frac = oracle_low_fraction(tr.samples)
    assert frac >= 0.90
    lo, mid, _ = spectral_profile(tr)
    assert lo + mid == pytest.approx(frac, abs=1e-9)


@pytest.mark.parametrize("cls", list(BehaviourClass))
def test_band_limit_for_every_class(cls):
    for prof in SUBJECTS + EXTREMES:
        for k in range(8):
            x = synth_epoch(cls, prof, k).samples
            assert oracle_low_fraction(x) >= 0.90


def test_csa_pause_is_flat_and_contiguous():
    for prof in SUBJECTS + EXTREMES:
        for k in range(10):
            tr = synth_epoch(BehaviourClass.CSA, prof, k)
            a, b = tr.meta["pause"]
            assert 300 <= b - a <= 600
            x = tr.samples
            outside = np.r_[x[:a], x[b:]]
            assert rms(x[a:b]) < 0.05 * rms(outside)


def test_osa_obstruction_is_erratic():
    for prof in SUBJECTS + EXTREMES:
        for k in range(10):
            tr = synth_epoch(BehaviourClass.OSA, prof, k)
            a, b = tr.meta["obstruction"]
            assert 300 <= b - a <= 600
            x = tr.samples
            assert sign_change_rate(x[a:b]) >= 3 * sign_change_rate(np.r_[x[:a], x[b:]])


def test_bruxism_bursts_tower_over_breathing():
    for prof in SUBJECTS + EXTREMES:
        for k in range(10):
            tr = synth_epoch(BehaviourClass.Bruxism, prof, k)
            bursts = tr.meta["bursts"]
            assert 1 <= len(bursts) <= 3
            for a, b in bursts:
                assert 50 <= b - a <= 200
                assert np.abs(tr.samples[a:b]).max() >= 3 * tr.meta["breath_peak"]
            assert spectral_profile(tr)[2] <= 0.10


def test_snoring_bursts_in_band():
    for prof in SUBJECTS + EXTREMES:
        tr = synth_epoch(BehaviourClass.Snoring, prof, 3)
        assert 4.0 <= tr.meta["snore_frequency"] <= 8.0
        assert len(tr.meta["snore_bursts"]) >= 1
        # the burst carrier shows up as a spectral peak in the 4-8 Hz band
        f, p = dft_power(tr.samples)
        band = (f >= 4) & (f <= 8)
        assert p[band].max() > 5 * np.median(p[(f >= 2) & (f < 10)])


def test_study_default_counts():
    spec = DatasetSpec.study_default(0)
    assert spec.counts == STUDY_COUNTS
    assert sum(spec.counts) == 2119
    assert len(spec.subjects) == 7


def test_empty_dataset():
    assert synth_dataset(DatasetSpec((0,) * 6, SUBJECTS, 0)) == []


def test_round_robin_assignment():
    items = synth_dataset(DatasetSpec((10,) * 6, SUBJECTS, 3))
    assert len(items) == 60
    per = np.bincount([sid for _, _, sid in items])[1:]
    assert sorted(set(per.tolist())) == [8, 9]
    assert np.bincount([int(c) for _, c, _ in items]).tolist() == [10] * 6


def test_dataset_is_deterministic():
    spec = DatasetSpec((2,) * 6, SUBJECTS, 11)
    a, b = synth_dataset(spec), synth_dataset(spec)
    for (ta, ca, sa), (tb, cb, sb) in zip(a, b):
        assert ca == cb and sa == sb
        np.testing.assert_array_equal(ta.samples, tb.samples)


def test_spec_validation():
    with pytest.raises(ValueError):
        DatasetSpec((1,) * 5, SUBJECTS).validate()
    with pytest.raises(ValueError):
        DatasetSpec((1, -1, 1, 1, 1, 1), SUBJECTS).validate()
    with pytest.raises(ValueError):
        DatasetSpec((1,) * 6, ()).validate()


def test_spectral_profile_pure_tones():
    t = np.arange(1000) / 100.0
    assert spectral_profile(np.sin(2 * np.pi * 1.0 * t))[0] == pytest.approx(1.0, abs=1e-9)
    assert spectral_profile(np.sin(2 * np.pi * 5.0 * t))[1] == pytest.approx(1.0, abs=1e-9)
    assert spectral_profile(np.sin(2 * np.pi * 20.0 * t))[2] == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(ValueError):
        spectral_profile(np.array([]))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=2, max_size=300))
def test_spectral_profile_is_a_distribution(values):
    fr = spectral_profile(np.array(values))
    assert all(v >= 0 for v in fr)
    assert sum(fr) == pytest.approx(1.0, abs=1e-9)


def test_nearest_centroid_separates_classes():
    rng = np.random.default_rng(0)
    X, y = [], []
    for k in range(100):
        prof = SUBJECTS[k % 7]
        for c in BehaviourClass:
            X.append(summary_features(synth_epoch(c, prof, 10_000 + k).samples))
            y.append(int(c))
    X, y = np.array(X), np.array(y)
    assert len(y) == 600
    X = (X - X.mean(0)) / X.std(0)
    idx = rng.permutation(len(y))
    tr, te = idx[:300], idx[300:]
    cent = np.stack([X[tr][y[tr] == c].mean(0) for c in range(6)])
    pred = np.argmin(((X[te][:, None, :] - cent[None]) ** 2).sum(-1), axis=1)
    assert np.mean(pred == y[te]) > 0.60
