import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nr_rtt.channel import Measurement, simulate_measurement
from nr_rtt.estimators import (
    MfSearchGrid,
    default_search_grid,
    matched_filter_rtt,
    mf_objective,
    peak_detector_range,
    snr_estimate,
    steering,
)
from nr_rtt.numerology import SPEED_OF_LIGHT, SystemConfig, TaCode, range_to_rtt, ta_to_rtt
from nr_rtt.srs import ChannelEstimateVec

SYS = SystemConfig()
SYS_DENSE = SystemConfig(comb_size=1)
FS = SYS.sample_rate
DF = SYS.subcarrier_spacing


def meas(true_rtt, ta=0, snr=math.inf, seed=0, system=SYS, phase=None):
    return simulate_measurement(true_rtt, ta, snr, system, rng=np.random.default_rng(seed), phase=phase)


def oracle_objective(tau, batch):
    """Matched-filter objective with explicit per-bin loops."""
    total = 0.0
    for m in batch:
        acc = 0j
        for k in np.flatnonzero(m.estimate.mask):
            v = complex(np.exp(-2j * np.pi * k * DF * tau))
            t = complex(np.exp(-2j * np.pi * k * DF * m.tau_r))
            acc += v.conjugate() * t * complex(m.estimate.h_hat[k])
        total += abs(acc) ** 2
    return total / len(batch)


def test_objective_matches_loop_oracle():
    batch = [meas(range_to_rtt(90.0), ta=TaCode(2), snr=5.0, seed=s) for s in range(2)]
    for tau in (0.0, 4.1e-7, 6.0e-7, 6.3e-7):
        assert mf_objective(tau, batch) == pytest.approx(oracle_objective(tau, batch), rel=1e-9)


def test_objective_closed_form_peak():
    ta = TaCode(4)
    tau_r = ta_to_rtt(ta)
    res = 37.3e-9
    m = meas(tau_r + res, ta=ta, phase=1.1)
    s = int(m.estimate.mask.sum())
    assert mf_objective(tau_r + res, [m]) == pytest.approx(s**2, rel=1e-10)
    taus = tau_r + res + np.linspace(-30e-9, 30e-9, 121)
    obj = mf_objective(taus, [m])
    assert int(np.argmax(obj)) == 60


def test_objective_zero_estimates():
    z = ChannelEstimateVec(np.zeros(SYS.fft_size), meas(0.0).estimate.mask)
    m = Measurement(z, 0.0, TaCode(0), 0.0)
    assert np.all(mf_objective(np.linspace(0, 1e-6, 11), [m]) == 0)


def test_two_measurements_with_different_ta_align():
    true_rtt = range_to_rtt(60.0)
    a = meas(true_rtt, ta=TaCode(1), phase=0.3)
    b = meas(true_rtt, ta=TaCode(2), phase=2.0)
    taus = np.linspace(3.5e-7, 4.5e-7, 101)
    np.testing.assert_allclose(mf_objective(taus, [a, b]), mf_objective(taus, [a]), rtol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=2, max_size=6), st.floats(0, 2 * np.pi))
def test_coherence_invariance_under_ta_reassignment(codes, phase):
    true_rtt = range_to_rtt(59.0)
    batch = [meas(true_rtt, ta=TaCode(c), phase=phase + i) for i, c in enumerate(codes)]
    ref = [meas(true_rtt, ta=TaCode(1), phase=0.0)]
    taus = np.linspace(2e-7, 6e-7, 41)
    np.testing.assert_allclose(mf_objective(taus, batch), mf_objective(taus, ref), rtol=1e-9, atol=1e-6)


def test_objective_scaling():
    batch = [meas(range_to_rtt(10.0), snr=0.0, seed=s) for s in range(3)]
    taus = np.linspace(0, 2e-7, 33)
    base = mf_objective(taus, batch)
    g = 0.7 * np.exp(0.9j)
    scaled = [Measurement(ChannelEstimateVec(m.estimate.h_hat * g, m.estimate.mask), m.tau_r,
                          m.ta_code, m.slot_time) for m in batch]
    rotated = [Measurement(ChannelEstimateVec(m.estimate.h_hat * np.exp(2.1j), m.estimate.mask),
                           m.tau_r, m.ta_code, m.slot_time) for m in batch]
    np.testing.assert_allclose(mf_objective(taus, scaled), abs(g) ** 2 * base, rtol=1e-10)
    np.testing.assert_allclose(mf_objective(taus, rotated), base, rtol=1e-10)


def test_parseval_steering():
    k = np.flatnonzero(meas(0.0).estimate.mask)
    for tau in (0.0, 1.234e-7, 9e-6):
        assert np.sum(np.abs(steering(tau, k, DF)) ** 2) == pytest.approx(k.size, rel=1e-14)


def test_batch_validation():
    with pytest.raises(ValueError):
        mf_objective(0.0, [])
    a = meas(0.0)
    b = meas(0.0, system=SYS_DENSE)
    with pytest.raises(ValueError):
        mf_objective(0.0, [a, b])
    with pytest.raises(ValueError):
        peak_detector_range([])


def test_grid_validation():
    with pytest.raises(ValueError):
        MfSearchGrid(1e-6, 1e-6, 1e-9)
    with pytest.raises(ValueError):
        MfSearchGrid(0, 1e-6, 2e-6)
    with pytest.raises(ValueError):
        MfSearchGrid(0, 1e-6, 1e-9, refine="fine_grid")


def test_default_grid_window():
    ta = TaCode(5)
    m = meas(ta_to_rtt(ta), ta=ta)
    g = default_search_grid([m], SYS)
    assert g.tau_min == pytest.approx(ta_to_rtt(ta) - SYS.ta_step / 2)
    assert g.tau_max == pytest.approx(ta_to_rtt(ta) + SYS.ta_step / 2 + SYS.cp_duration)
    assert g.coarse_step == pytest.approx(1 / (8 * FS))
    assert default_search_grid([meas(0.0)], SYS).tau_min == 0.0


def test_mf_exact_on_grid_point():
    step = 1 / (8 * FS)
    grid = MfSearchGrid(0.0, 400 * step, step, refine="none")
    tau_true = 57 * step
    est = matched_filter_rtt([meas(tau_true)], grid)
    assert est.rtt == grid.points[57]
    par = matched_filter_rtt([meas(tau_true)], MfSearchGrid(0.0, 400 * step, step))
    assert abs(par.rtt - tau_true) < 1e-6 * step


@pytest.mark.parametrize("frac", [0.13, 0.37, 0.5, 0.81])
def test_parabolic_refine_vs_fine_bruteforce(frac):
    step = 1 / (8 * FS)
    tau_true = (40 + frac) * step
    batch = [meas(tau_true, phase=0.2), meas(tau_true, phase=1.7)]
    grid = MfSearchGrid(0.0, 200 * step, step)
    est = matched_filter_rtt(batch, grid)
    fine = np.arange(39 * step, 42 * step, step / 1000)
    brute = fine[int(np.argmax([oracle_objective(t, batch) for t in fine[::10]])) * 10]
    # second pass at the full 1000x resolution around the decimated winner
    local = fine[(fine > brute - step / 100) & (fine < brute + step / 100)]
    brute = local[int(np.argmax([oracle_objective(t, batch) for t in local]))]
    assert abs(est.rtt - brute) < step / 50
    assert abs(est.rtt - tau_true) < step / 50


def test_fine_grid_refine():
    step = 1 / (8 * FS)
    tau_true = 40.3 * step
    grid = MfSearchGrid(0.0, 100 * step, step, refine="fine_grid", fine_step=step / 100)
    est = matched_filter_rtt([meas(tau_true)], grid)
    assert abs(est.rtt - tau_true) <= step / 100


def test_mf_boundary_flag():
    step = 1 / (8 * FS)
    # main lobe (half-width ~27 ns) still rising at the window edge
    est = matched_filter_rtt([meas(108e-9)], MfSearchGrid(0.0, 100e-9, step))
    assert est.at_boundary
    assert est.rtt == pytest.approx(100e-9, abs=step)


def test_mf_range_consistency():
    est = matched_filter_rtt([meas(range_to_rtt(10.0))])
    assert est.range_m == pytest.approx(est.rtt * SPEED_OF_LIGHT / 2, rel=1e-15)
    assert est.method == "MF" and est.m_used == 1 and est.objective > 0


def test_pd_three_samples_dense():
    est = peak_detector_range([meas(3 / FS, system=SYS_DENSE)], system=SYS_DENSE)
    assert est.rtt * FS == pytest.approx(3.0)
    assert est.range_m == pytest.approx(3 * SPEED_OF_LIGHT / (2 * FS))
    assert abs(est.range_m - 9.7591) < 5e-4
    assert est.objective is None and est.method == "PD"


def test_pd_flat_gives_coarse_range():
    assert peak_detector_range([meas(0.0)]).rtt == 0.0
    ta = TaCode(7)
    est = peak_detector_range([meas(ta_to_rtt(ta), ta=ta)])
    assert est.rtt == pytest.approx(ta_to_rtt(ta), rel=1e-14)


def test_pd_uncompensated_is_literal_residual_average():
    ta = TaCode(7)
    res = 4 / FS
    m = meas(ta_to_rtt(ta) + res, ta=ta)
    est = peak_detector_range([m], compensate_coarse=False)
    assert est.rtt == pytest.approx(res)


@pytest.mark.parametrize("n", [0, 1, 5, 17, 100, 500, 767])
def test_pd_comb_aliasing_matches_dense(n):
    comb = peak_detector_range([meas(n / FS)], system=SYS)
    dense = peak_detector_range([meas(n / FS, system=SYS_DENSE)], system=SYS_DENSE)
    assert comb.rtt * FS == pytest.approx(n)
    assert dense.rtt * FS == pytest.approx(n)


def test_pd_averages_over_batch():
    batch = [meas(2 / FS), meas(3 / FS), meas(3 / FS), meas(4 / FS)]
    assert peak_detector_range(batch).rtt * FS == pytest.approx(3.0)


@pytest.mark.parametrize("n", [0, 2, 3, 9])
def test_mf_pd_agree_on_sample_grid(n):
    m = [meas(n / FS, phase=0.5)]
    mf, pd = matched_filter_rtt(m), peak_detector_range(m)
    assert abs(mf.range_m - pd.range_m) <= SPEED_OF_LIGHT / (2 * FS)


def test_snr_estimate_noiseless():
    batch = [meas(range_to_rtt(9.0), seed=s) for s in range(3)]
    assert snr_estimate(batch) == math.inf


@pytest.mark.parametrize("snr", [0.0, 25.0])
def test_snr_estimate_known_snr(snr):
    rng = np.random.default_rng(11)
    batch = [simulate_measurement(range_to_rtt(8.0), 0, snr, SYS, rng=rng) for _ in range(100)]
    assert abs(snr_estimate(batch) - snr) <= 1.0


@pytest.mark.slow
def test_mf_error_shrinks_with_m():
    rng = np.random.default_rng(2024)
    p90 = {}
    for M in (20, 60):
        errs = []
        for trial in range(200):
            d = 7 + trial % 5
            batch = [simulate_measurement(range_to_rtt(d), 0, -25.0, SYS, rng=rng) for _ in range(M)]
            errs.append(abs(matched_filter_rtt(batch).range_m - d))
        p90[M] = np.percentile(errs, 90)
    assert p90[60] <= p90[20]
