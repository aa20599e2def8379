import warnings

import numpy as np
import pytest
import scipy.linalg

from conftest import crandn
from radcine.phantom import (PhantomConfig, make_phantom_frame, resp_displacement, sample_radial,
                             simulate_coils, synth_physio)
from radcine.preprocess import (EmptyPhaseError, bin_cardiac, compute_dcf, estimate_noise_cov,
                                gate_respiratory, make_trajectory, phase_correct_spokes,
                                phase_correction_factors, prewhiten, select_spokes,
                                spoke_angles_deg, whiten_samples, whitening_factor)
from radcine.types import BinnedKSpace, PhysioTrace, RadialKSpace

GOLDEN = 180.0 * 2 / (1 + np.sqrt(5))


def _trace(triggers, bellows=None, rate=100.0, duration=None):
    triggers = np.asarray(triggers, float)
    duration = float(triggers[-1]) if duration is None else duration
    if bellows is None:
        bellows = np.zeros(int(duration * rate) + 1)
    return PhysioTrace(triggers, bellows, rate, duration)


# trajectories

def test_first_spoke_lies_on_kx():
    c = make_trajectory(3, 8, GOLDEN).coords[0]
    np.testing.assert_allclose(c[:, 0], 0.0, atol=1e-15)
    np.testing.assert_allclose(c[:, 1], (np.arange(8) - 4) / 8)


def test_golden_angle_increment():
    assert GOLDEN == pytest.approx(111.24611797, abs=1e-8)
    ang = spoke_angles_deg(2, GOLDEN)
    assert ang[1] == pytest.approx(111.246, abs=1e-3)
    c = make_trajectory(2, 8, GOLDEN).coords[1, -1]
    assert np.rad2deg(np.arctan2(c[0], c[1])) % 180 == pytest.approx(ang[1], abs=1e-9)


def test_right_angle_increment_wraps():
    np.testing.assert_allclose(spoke_angles_deg(4, 90.0), [0, 90, 0, 90])


def test_trajectory_in_range():
    c = make_trajectory(50, 33, GOLDEN).coords
    assert c.min() >= -0.5 and c.max() < 0.5


# noise covariance and whitening

def test_zero_noise_covariance():
    np.testing.assert_array_equal(estimate_noise_cov(np.zeros((100, 3), complex)), 0)


def test_white_noise_covariance(rng):
    n = crandn(rng, 100_000, 4) / np.sqrt(2)
    psi = estimate_noise_cov(n)
    assert np.linalg.norm(psi - np.eye(4)) / 2.0 <= 0.05


def test_correlated_channels_rank_one(rng):
    a = crandn(rng, 1000)
    psi = estimate_noise_cov(np.stack([a, 2j * a], axis=1))
    assert np.linalg.matrix_rank(psi, tol=1e-10 * np.abs(psi).max()) == 1


def test_too_few_noise_samples_warns(rng):
    with pytest.warns(RuntimeWarning):
        estimate_noise_cov(crandn(rng, 3, 4))


def test_non_finite_noise_rejected():
    n = np.zeros((10, 2), complex)
    n[3, 1] = np.nan
    with pytest.raises(ValueError):
        estimate_noise_cov(n)


def test_identity_whitening_is_a_no_op(rng):
    y = RadialKSpace(crandn(rng, 8, 5, 3), np.arange(5.0))
    np.testing.assert_allclose(prewhiten(y, np.eye(3)).data, y.data, rtol=1e-8)


def test_diagonal_whitening():
    s = np.ones((6, 2), complex)
    out = whiten_samples(s, np.diag([4.0, 1.0]))
    np.testing.assert_allclose(out[:, 0], 0.5, rtol=1e-8)
    np.testing.assert_allclose(out[:, 1], 1.0, rtol=1e-8)


def test_whitened_noise_is_white(rng):
    nc = 4
    A = crandn(rng, nc, nc) + 2 * np.eye(nc)
    calib = (crandn(rng, 100_000, nc) / np.sqrt(2)) @ A.T
    n = (crandn(rng, 100_000, nc) / np.sqrt(2)) @ A.T
    w = whiten_samples(n, estimate_noise_cov(calib))
    psi = estimate_noise_cov(w)
    assert np.linalg.norm(psi - np.eye(nc)) / np.linalg.norm(np.eye(nc)) <= 0.05


def test_whitening_is_invertible(rng):
    A = crandn(rng, 3, 3)
    psi = A @ A.conj().T + np.eye(3)
    L = whitening_factor(psi)
    x = crandn(rng, 50, 3)
    back = whiten_samples(x @ L.T, psi)
    assert np.linalg.norm(back - x) / np.linalg.norm(x) <= 1e-12


def test_ridge_makes_singular_covariance_usable():
    L = whitening_factor(np.zeros((2, 2)) + np.diag([1.0, 0.0]))
    assert np.all(np.isfinite(L))


# cardiac binning

def test_binning_examples():
    tr = _trace([0.0, 1.0, 2.0])
    bins = bin_cardiac(tr, np.array([0.55, 0.0, 0.9999, 1.0, 1.5]), 20)
    assert 0 in bins[11] and 1 in bins[0] and 2 in bins[19]
    assert 3 in bins[0] and 4 in bins[10]


def test_spokes_outside_triggers_dropped():
    tr = _trace([1.0, 2.0, 3.0], duration=4.0)
    bins = bin_cardiac(tr, np.array([0.5, 1.5, 3.0, 3.5]), 4)
    assert sorted(np.concatenate(bins).tolist()) == [1]


def test_bins_partition_and_balance():
    tr = _trace(np.arange(11.0))
    ts = (np.arange(400) + 0.5) * 0.025   # 40 spokes per RR, divisible by T
    bins = bin_cardiac(tr, ts, 20)
    allidx = np.concatenate(bins)
    assert np.array_equal(np.sort(allidx), np.arange(400))
    assert {len(b) for b in bins} == {20}


def test_binning_needs_two_triggers():
    with pytest.raises(ValueError):
        bin_cardiac(_trace([0.0], duration=1.0), np.array([0.5]), 4)


# respiratory gating

def test_keep_everything():
    tr = _trace([0.0, 10.0], bellows=np.sin(np.linspace(0, 10, 1001)))
    m = gate_respiratory(tr, np.linspace(0, 9.9, 50), 1.0)
    assert m.keep.all()


def test_sinusoidal_gating_keeps_low_surrogate():
    t = np.arange(1001) / 100
    tr = _trace([0.0, 10.0], bellows=np.sin(2 * np.pi * t / 4))
    ts = np.linspace(0, 9.99, 333)
    m = gate_respiratory(tr, ts, 0.5)
    s = np.interp(ts, t, tr.bellows_samples)
    assert s[m.keep].mean() < s[~m.keep].mean()


def test_constant_bellows_keeps_ties():
    tr = _trace([0.0, 10.0], bellows=np.full(1001, 0.3))
    m = gate_respiratory(tr, np.linspace(0, 9.9, 40), 0.5)
    assert m.keep.mean() >= 0.5


def test_gating_reduces_displacement():
    cfg = PhantomConfig(duration=20.0)
    tr = synth_physio(cfg)
    ts = np.arange(cfg.n_spokes) * cfg.tr
    m = gate_respiratory(tr, ts, 0.5)
    d = np.abs(resp_displacement(tr, ts, cfg))
    assert d[m.keep].mean() < d[~m.keep].mean()


def test_bad_keep_fraction():
    with pytest.raises(ValueError):
        gate_respiratory(_trace([0.0, 1.0]), np.array([0.5]), 0.0)


# spoke selection

def _kspace(rng, n_spokes=80, n_ro=8, nc=2):
    return (RadialKSpace(crandn(rng, n_ro, n_spokes, nc), np.arange(n_spokes) * 0.1),
            make_trajectory(n_spokes, n_ro, GOLDEN))


def test_select_partition_and_gather(rng):
    y, traj = _kspace(rng)
    bins = [np.arange(0, 80, 2), np.arange(1, 80, 2)]
    b = select_spokes(y, traj, bins)
    assert sum(b.counts()) == 80
    for idx, d, tr in zip(b.phase_index_sets, b.per_phase_data, b.per_phase_traj):
        np.testing.assert_array_equal(d, y.data[:, idx, :])
        np.testing.assert_array_equal(tr.coords, traj.coords[idx])


def test_select_undersampling_prefix(rng):
    y, traj = _kspace(rng)
    b = select_spokes(y, traj, [np.arange(40), np.arange(40, 80)], undersample_R=2)
    assert b.counts() == [20, 20]
    np.testing.assert_array_equal(b.phase_index_sets[0], np.arange(20))


def test_select_applies_mask(rng):
    y, traj = _kspace(rng)
    keep = np.arange(80) % 4 != 0
    b = select_spokes(y, traj, [np.arange(80)], keep)
    assert b.counts() == [60] and keep[b.phase_index_sets[0]].all()


def test_empty_phase_is_reported(rng):
    y, traj = _kspace(rng)
    with pytest.raises(EmptyPhaseError) as e:
        select_spokes(y, traj, [np.arange(80), np.array([], int)])
    assert e.value.phases == [1]


def test_mask_shape_mismatch(rng):
    y, traj = _kspace(rng)
    with pytest.raises(ValueError):
        select_spokes(y, traj, [np.arange(80)], np.ones(79, bool))


# density compensation

def test_dcf_ramp():
    traj = make_trajectory(10, 10, GOLDEN)   # k_r = -0.5 ... 0.4 step 0.1
    w = compute_dcf(traj).weights
    assert w[0, 9] == pytest.approx(2 * w[0, 7])     # 0.4 vs 0.2
    assert np.argmin(w[0]) == 5 and 0 < w[0, 5] < w[0, 6]
    assert w[0, 5] == pytest.approx(np.pi * 0.05 ** 2 / 10)


def test_dcf_halves_with_double_spokes():
    w1 = compute_dcf(make_trajectory(10, 16, GOLDEN)).weights
    w2 = compute_dcf(make_trajectory(20, 16, GOLDEN)).weights
    np.testing.assert_allclose(w2[:10], w1 / 2)


def test_dcf_rejects_non_radial():
    c = make_trajectory(4, 8, GOLDEN).coords.copy()
    c[1, 2] += 0.01
    from radcine.types import Trajectory
    with pytest.raises(ValueError):
        compute_dcf(Trajectory(c))


def test_dcf_sums_to_disc_area():
    w = compute_dcf(make_trajectory(200, 64, GOLDEN)).weights
    assert w.sum() == pytest.approx(np.pi * 0.5 ** 2, rel=0.02)


# phase correction

def _binned(data, traj):
    return BinnedKSpace((np.arange(data.shape[1]),), (data,), (traj,))


def test_aligned_spokes_unchanged(rng):
    traj = make_trajectory(6, 8, GOLDEN)
    d = crandn(rng, 8, 6, 3)
    # centre vectors that are positive multiples of one coil vector project
    # onto their own mean with zero phase
    v = crandn(rng, 3)
    d[4] = rng.uniform(0.5, 2.0, 6)[:, None] * v[None, :]
    out = phase_correct_spokes(_binned(d, traj)).per_phase_data[0]
    np.testing.assert_allclose(out, d, atol=1e-12)


def test_single_spoke_phase_removed(rng):
    traj = make_trajectory(4, 8, GOLDEN)
    d = np.ones((8, 4, 2), complex)
    d[:, 2] *= np.exp(0.7j)
    out = phase_correct_spokes(_binned(d, traj)).per_phase_data[0]
    ph = np.angle(out[4, :, 0])
    np.testing.assert_allclose(ph, ph[0], atol=1e-12)
    np.testing.assert_allclose(out[:, [0, 1, 3]], out[:, [0]].repeat(3, axis=1), atol=1e-12)


def test_zero_centre_is_flagged():
    traj = make_trajectory(3, 8, GOLDEN)
    d = np.ones((8, 3, 2), complex)
    d[4, 1] = 0
    f, flagged = phase_correction_factors(d, traj)
    assert flagged.tolist() == [False, True, False] and f[1] == 1


def test_random_phases_on_phantom():
    cfg = PhantomConfig(matrix_size=32, n_coils=4, noise_sigma=0.0, tr=0.1, duration=3.0,
                        heart_radius_range=(3.0, 5.0), peripheral_center=(-8.0, 10.0),
                        background_axes=(9.0, 11.0), heart_center=(1.0, -1.0))
    traj = make_trajectory(cfg.n_spokes, 32, GOLDEN)
    frame = make_phantom_frame(0.3, 0.0, cfg)
    y, _ = sample_radial(cfg, simulate_coils(4, 32), traj, synth_physio(cfg),
                         frame_fn=lambda ph, d: frame)
    rng = np.random.default_rng(5)
    d = y.data * np.exp(1j * rng.uniform(-np.pi, np.pi, y.n_spokes))[None, :, None]
    out = phase_correct_spokes(_binned(d, traj)).per_phase_data[0]
    assert np.std(np.angle(out[16, :, 0])) < 1e-6
