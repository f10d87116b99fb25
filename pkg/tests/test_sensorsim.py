import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sleepsense import sensorsim as ss
from sleepsense.pipeline import pearson, select_channel
from sleepsense.synthgen import BehaviourClass, SubjectProfile, make_subjects, synth_epoch


def parallel_oracle(r0, gf, weights, eh, ev):
    """Channel resistance by explicit per-ring loop and reciprocal sum."""
    eh = min(max(eh, -0.05), 0.05)
    ev = min(max(ev, -0.05), 0.05)
    inv = 0.0
    for wh, wv in weights:
        inv += 1.0 / (r0 * (1.0 + gf * (wh * eh + wv * ev)))
    return 1.0 / inv


def iir_oracle(x, cutoff=20.0, rate=100.0):
    a = 1.0 - math.exp(-2 * math.pi * cutoff / rate)
    y = np.empty_like(x)
    prev = x[0]
    for i, v in enumerate(x):
        prev = prev + a * (v - prev)
        y[i] = prev
    return y


def test_quarter_ring_weights_geometry():
    w = np.array(ss.quarter_ring_weights())
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-15)
    np.testing.assert_allclose(w[0], [0.5 - 1 / np.pi, 0.5 + 1 / np.pi], atol=1e-15)
    np.testing.assert_allclose(w[1], [0.5 + 1 / np.pi, 0.5 - 1 / np.pi], atol=1e-15)


def test_channel_resistance_matches_parallel_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        unit = ss.ChannelUnit(40e3 * (1 + rng.uniform(-0.12, 0.12)), 100 * (1 + rng.uniform(-0.09, 0.09)))
        eh, ev = rng.uniform(-0.004, 0.004, size=2)
        got = float(ss.channel_resistance(unit, eh, ev))
        want = parallel_oracle(unit.base_resistance_quarter, unit.gauge_factor, unit.orientation, eh, ev)
        assert abs(got - want) <= 1e-12 * want


def test_unstrained_channel_is_quarter_resistance_over_four():
    assert float(ss.channel_resistance(ss.ChannelUnit(), 0.0, 0.0)) == pytest.approx(10e3, rel=1e-15)


def test_channel_resistance_rejects_nonphysical_strain():
    with pytest.raises(ValueError):
        ss.channel_resistance(ss.ChannelUnit(), -0.05, -0.05)


def test_clamp_counts_saturation():
    clipped, n = ss.clamp_strain(np.array([0.0, 0.06, -0.07, 0.05, -0.01]))
    assert n == 2
    np.testing.assert_array_equal(clipped, [0.0, 0.05, -0.05, 0.05, -0.01])


def test_sample_array_is_deterministic():
    assert ss.sample_array(42) == ss.sample_array(42)
    assert ss.sample_array(42) != ss.sample_array(43)


def test_unit_variation_within_bounds():
    dr, dg = [], []
    for s in range(1000):
        arr = ss.sample_array(s)
        for u in arr.channels:
            dr.append(abs(u.base_resistance_quarter / ss.NOMINAL_R_QUARTER - 1))
            dg.append(abs(u.gauge_factor / ss.NOMINAL_GAUGE_FACTOR - 1))
    assert max(dr) <= 0.1269
    assert max(dg) <= 0.0916
    assert max(dr) > 0.10  # the spread is actually used


def test_variation_disabled_is_nominal():
    arr = ss.sample_array(5, variation=False)
    for u in arr.channels:
        assert u.base_resistance_quarter == ss.NOMINAL_R_QUARTER
        assert u.gauge_factor == ss.NOMINAL_GAUGE_FACTOR


def test_placement_and_instance_validation():
    with pytest.raises(ValueError):
        ss.Placement(offset=1.5)
    with pytest.raises(ValueError):
        ss.Placement(tightness=0.2)
    with pytest.raises(ValueError):
        ss.ArrayInstance(tuple(ss.ChannelUnit() for _ in range(5)))
    with pytest.raises(ValueError):
        ss.ArrayInstance(tuple(ss.ChannelUnit() for _ in range(6)), coupling=(1, 1, 1, 1, 1, 0))
    with pytest.raises(ValueError):
        ss.ChannelUnit(gauge_factor=0)


def test_zero_trace_gives_noise_floor():
    eps = ss.propagate(np.zeros(1000), ss.sample_array(1), noise_seed=3)
    assert np.abs(eps).max() < 1e-4
    assert eps.std() > 0


def test_scaled_couplings_are_perfectly_correlated():
    arr = ss.ArrayInstance(tuple(ss.ChannelUnit() for _ in range(6)), coupling=(1, 0.8, 0.6, 0.5, 0.4, 0.3))
    x = synth_epoch(BehaviourClass.Snoring, SubjectProfile(), 0)
    eps = ss.propagate(x, arr, noise_seed=None)
    for i in range(6):
        for j in range(i + 1, 6):
            assert pearson(eps[i], eps[j]) == pytest.approx(1.0, abs=1e-12)


def test_strain_range_for_typical_breathing():
    x = synth_epoch(BehaviourClass.NasalBreath, SubjectProfile(amplitude_scale=1.0), 0).samples
    peak = np.abs(ss.source_to_strain(x)).max()
    assert 0.001 <= peak <= 0.05


def test_channels_stay_correlated_over_random_placements():
    subjects = make_subjects(7, 0)
    worst = 1.0
    for k in range(100):
        arr = ss.sample_array(1000 + k)
        tr = synth_epoch(BehaviourClass(k % 6), subjects[k % 7], k)
        cur = ss.simulate(tr, arr, noise_seed=k).currents
        eps = ss.propagate(tr, arr, noise_seed=k)
        for i in range(6):
            for j in range(i + 1, 6):
                worst = min(worst, pearson(cur[i], cur[j]), pearson(eps[i], eps[j]))
    assert worst > 0.9


def test_readout_is_ohms_law_after_lowpass():
    arr = ss.sample_array(9)
    tr = synth_epoch(BehaviourClass.OSA, SubjectProfile(), 4)
    eps = ss.propagate(tr, arr, noise_seed=1)
    ro = ss.readout(arr, eps)
    assert ro.supply == 1.0 and ro.rate == 100
    for k, unit in enumerate(arr.channels):
        r = np.array([parallel_oracle(unit.base_resistance_quarter, unit.gauge_factor, unit.orientation, e, 0.5 * e)
                      for e in eps[k]])
        np.testing.assert_allclose(ro.currents[k], 1.0 / iir_oracle(r), rtol=1e-12)
    assert np.all(ro.currents > 0)


def test_lowpass_gain_matches_measured_response():
    t = np.arange(4000) / 100.0
    for f in (1.0, 5.0, 10.0, 20.0):
        y = ss.lowpass(np.sin(2 * np.pi * f * t))
        measured = np.sqrt(2) * np.std(y[2000:])
        assert measured == pytest.approx(ss.lowpass_gain(f), rel=2e-3)
    # 1-10 Hz content passes with little loss
    assert ss.lowpass_gain(10.0) > 0.8


def test_wear_is_bounded_and_monotone():
    arr = ss.sample_array(3)
    assert ss.wear_factor(0) == 1.0
    prev = 1.0
    for n in range(0, 60, 5):
        f = ss.wear_factor(n)
        assert 0.9 <= f <= prev
        prev = f
    worn = ss.apply_wear(arr, 20)
    for a, b in zip(arr.channels, worn.channels):
        assert b.gauge_factor == pytest.approx(a.gauge_factor * ss.wear_factor(20))
    with pytest.raises(ValueError):
        ss.apply_wear(arr, -1)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32), st.floats(0.01, 1000.0))
def test_channel_choice_is_scale_invariant(seed, scale):
    arr = ss.sample_array(seed)
    tr = synth_epoch(BehaviourClass(seed % 6), SubjectProfile(), seed)
    cur = ss.simulate(tr, arr, noise_seed=seed).currents
    assert select_channel(cur * scale) == select_channel(cur)
