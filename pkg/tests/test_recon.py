import numpy as np
import pytest

from conftest import crandn
from radcine.nufft import nufft_forward, plan_nufft
from radcine.phantom import (GOLDEN_ANGLE_DEG, PhantomConfig, make_phantom_frame, sample_radial,
                             simulate_coils, synth_physio)
from radcine.preprocess import make_trajectory
from radcine.recon.cg import cg_solve_dc, dc_objective
from radcine.recon.igrasp import igrasp_reconstruct
from radcine.recon.resnet import (WeightFileError, layer_shapes, make_random_weights,
                                  read_weights, resnet_prox_infer, write_weights, zero_weights)
from radcine.recon.sense import (build_sense_operator, flatten_phase_data, sense_adjoint,
                                 sense_forward, single_phase_operator, unflatten_phase_data,
                                 weighted_data)
from radcine.recon.sensitivity import estimate_sensitivities, spokes_union
from radcine.recon.tv import temporal_diff, temporal_diff_adjoint, temporal_tv_prox
from radcine.recon.unrolled import ProxSpec, gridding_recon, unrolled_reconstruct
from radcine.types import BinnedKSpace, SensitivityMaps


def _maps(rng, nc, N):
    return SensitivityMaps.normalized(crandn(rng, nc, N, N) + 2.0)


def _binned(rng, N=16, n_ro=16, spokes=(8,), nc=2, images=None, noise=0.0):
    """Random or image-derived radial data per phase with interleaved golden-angle spokes."""
    T = len(spokes)
    traj = make_trajectory(sum(spokes), n_ro, GOLDEN_ANGLE_DEG)
    maps = _maps(rng, nc, N)
    sets, data, trajs = [], [], []
    start = 0
    for t, n in enumerate(spokes):
        idx = np.arange(start, start + n)
        start += n
        tr = traj.subset(idx)
        if images is None:
            d = crandn(rng, n_ro, n, nc)
        else:
            k = nufft_forward(plan_nufft(N, tr.flat(), 2.0, 6), maps.maps * images[t][None])
            d = unflatten_phase_data(k, n_ro) + noise * crandn(rng, n_ro, n, nc)
        sets.append(idx)
        data.append(d)
        trajs.append(tr)
    return BinnedKSpace(tuple(sets), tuple(data), tuple(trajs)), maps


def _dense(op, t=0):
    N = op.matrix_size
    cols = []
    for j in range(N * N):
        e = np.zeros(N * N, complex)
        e[j] = 1
        cols.append(sense_forward(op, e.reshape(N, N), t).reshape(-1))
    return np.stack(cols, axis=1)


# SENSE operator

def test_flatten_round_trip(rng):
    d = crandn(rng, 8, 5, 3)
    f = flatten_phase_data(d)
    assert f.shape == (3, 40)
    np.testing.assert_array_equal(unflatten_phase_data(f, 8), d)


def test_single_flat_coil_is_plain_nufft(rng):
    N = 16
    coords = make_trajectory(8, 16, GOLDEN_ANGLE_DEG).flat()
    op = single_phase_operator(SensitivityMaps(np.ones((1, N, N))), coords)
    x = crandn(rng, N, N)
    np.testing.assert_allclose(sense_forward(op, x)[0],
                               nufft_forward(plan_nufft(N, coords, 2.0, 6), x), atol=1e-12)


@pytest.mark.parametrize("use_dcf", [True, False])
def test_sense_dot_test(rng, use_dcf):
    b, maps = _binned(rng, spokes=(8, 9), nc=3)
    op = build_sense_operator(b, maps, use_dcf=use_dcf)
    for t in range(2):
        x = crandn(rng, 16, 16)
        y = crandn(rng, *op.data_shape(t))
        lhs = np.vdot(sense_forward(op, x, t), y)
        rhs = np.vdot(x, sense_adjoint(op, y, t))
        assert abs(lhs - rhs) / (np.linalg.norm(x) * np.linalg.norm(y)) <= 1e-6


def test_zero_image_zero_samples(rng):
    b, maps = _binned(rng)
    op = build_sense_operator(b, maps)
    assert not np.any(sense_forward(op, np.zeros((16, 16))))


def test_sense_shape_errors(rng):
    b, maps = _binned(rng)
    op = build_sense_operator(b, maps)
    with pytest.raises(ValueError):
        sense_forward(op, np.zeros((8, 8)))
    with pytest.raises(ValueError):
        sense_adjoint(op, np.zeros((2, 5)))


# CG data consistency

def test_cg_fixed_point(rng):
    b, maps = _binned(rng)
    op = build_sense_operator(b, maps)
    z = crandn(rng, 16, 16)
    y = sense_forward(op, z)
    for lam in (1e-3, 1.0):
        x, info = cg_solve_dc(op, y, z, lam, 10)
        np.testing.assert_allclose(x, z, atol=1e-10)
        assert info.iterations == 0


def test_cg_large_lambda_stays_at_z(rng):
    b, maps = _binned(rng)
    op = build_sense_operator(b, maps)
    z = crandn(rng, 16, 16)
    x, _ = cg_solve_dc(op, weighted_data(op, b)[0], z, 1e6, 10)
    assert np.linalg.norm(x - z) / np.linalg.norm(z) <= 1e-4


def test_cg_matches_dense_solve(rng):
    b, maps = _binned(rng, spokes=(8,), nc=2)
    op = build_sense_operator(b, maps)
    A = _dense(op)
    y = weighted_data(op, b)[0]
    z = crandn(rng, 16, 16)
    lam = 0.1
    M = A.conj().T @ A + lam * np.eye(256)
    ref = np.linalg.solve(M, A.conj().T @ y.reshape(-1) + lam * z.reshape(-1))
    x, _ = cg_solve_dc(op, y, z, lam, 50)
    assert np.linalg.norm(x.reshape(-1) - ref) / np.linalg.norm(ref) <= 1e-6


def test_cg_objective_non_increasing(rng):
    b, maps = _binned(rng, spokes=(10,), nc=3)
    op = build_sense_operator(b, maps)
    y = weighted_data(op, b)[0]
    z = crandn(rng, 16, 16)
    x, info = cg_solve_dc(op, y, z, 0.05, 15, track_objective=True)
    obj = np.array(info.objective)
    assert np.all(np.diff(obj) <= 1e-10 * obj[0])
    assert obj[-1] == pytest.approx(dc_objective(op, 0, y, z, 0.05, x))


def test_cg_fit_diagnostics_match_explicit(rng):
    b, maps = _binned(rng, spokes=(10,), nc=3)
    op = build_sense_operator(b, maps)
    y = weighted_data(op, b)[0]
    z = crandn(rng, 16, 16)
    x, info = cg_solve_dc(op, y, z, 0.2, 7)
    assert info.fit_start == pytest.approx(np.linalg.norm(sense_forward(op, z) - y), rel=1e-8)
    assert info.fit_end == pytest.approx(np.linalg.norm(sense_forward(op, x) - y), rel=1e-8)


def test_cg_rejects_bad_lambda(rng):
    b, maps = _binned(rng)
    op = build_sense_operator(b, maps)
    with pytest.raises(ValueError):
        cg_solve_dc(op, weighted_data(op, b)[0], np.zeros((16, 16)), 0.0, 3)


def test_cg_nan_aborts(rng):
    b, maps = _binned(rng)
    op = build_sense_operator(b, maps)
    z = np.zeros((16, 16), complex)
    z[3, 3] = np.nan
    with pytest.raises(FloatingPointError):
        cg_solve_dc(op, weighted_data(op, b)[0], z, 1.0, 3)


# temporal TV

def test_temporal_diff_adjoint(rng):
    x, q = crandn(rng, 5, 4, 4), crandn(rng, 5, 4, 4)
    assert np.vdot(temporal_diff(x), q) == pytest.approx(np.vdot(x, temporal_diff_adjoint(q)))


def test_tv_prox_zero_tau_identity(rng):
    x = crandn(rng, 6, 4, 4)
    np.testing.assert_array_equal(temporal_tv_prox(x, 0.0), x)


def test_tv_prox_constant_in_time(rng):
    x = np.repeat(crandn(rng, 1, 4, 4), 6, axis=0)
    np.testing.assert_allclose(temporal_tv_prox(x, 3.0), x, atol=1e-12)


def test_tv_prox_smooths_spike():
    x = np.zeros((6, 1, 1))
    x[1] = 10
    before = np.sum(np.abs(temporal_diff(x)) ** 2)
    for tau in (0.1, 1.0, 5.0):
        u = temporal_tv_prox(x, tau)
        assert np.sum(np.abs(temporal_diff(u)) ** 2) < before
        assert u.sum() == pytest.approx(x.sum())   # D^H q has zero mean along t


def test_tv_prox_converges_to_exact_two_point():
    # two frames, circular: exact prox moves each value toward the mean by min(2 tau, gap/2)
    x = np.array([0.0, 4.0]).reshape(2, 1, 1)
    u = temporal_tv_prox(x, 0.5, n_inner=200)
    np.testing.assert_allclose(u.ravel(), [1.0, 3.0], atol=1e-8)


def test_tv_prox_negative_tau():
    with pytest.raises(ValueError):
        temporal_tv_prox(np.zeros((3, 2, 2)), -1.0)


# iGRASP

def _constant_scene(rng, T=4, noise=0.0):
    N = 16
    y, x = np.mgrid[:N, :N] - N // 2
    img = np.exp(-(y ** 2 + x ** 2) / 20.0).astype(complex)
    return _binned(rng, spokes=(10,) * T, nc=3, images=[img] * T, noise=noise), img


def test_igrasp_objective_monotone(rng):
    (b, maps), _ = _constant_scene(rng, noise=0.05)
    _, info = igrasp_reconstruct(b, maps, lam_rel=0.02, n_iter=15)
    obj = np.array(info.objective)
    assert np.all(np.diff(obj) <= 0)
    assert obj[-1] < obj[0]


def test_igrasp_without_regularization(rng):
    (b, maps), _ = _constant_scene(rng, noise=0.05)
    _, info = igrasp_reconstruct(b, maps, lam_rel=0.0, n_iter=15)
    assert info.lam == 0 and np.all(np.diff(info.objective) <= 0)


def test_igrasp_more_tv_less_temporal_variance(rng):
    (b, maps), _ = _constant_scene(rng, noise=0.1)
    var = []
    for lam in (0.0, 0.01, 0.05):
        x, _ = igrasp_reconstruct(b, maps, lam_rel=lam, n_iter=15)
        var.append(float(np.var(x.frames, axis=0).sum()))
    assert var[0] >= var[1] >= var[2]


def test_igrasp_needs_spokes(rng):
    b, maps = _binned(rng, spokes=(4, 4))
    empty = BinnedKSpace((b.phase_index_sets[0], np.array([], int)),
                         (b.per_phase_data[0], np.zeros((16, 0, 2))),
                         (b.per_phase_traj[0], b.per_phase_traj[1].subset([])))
    with pytest.raises(ValueError):
        igrasp_reconstruct(empty, maps)


# ResNet proximal block

def test_zero_weights_identity(rng):
    x = crandn(rng, 3, 6, 6)
    np.testing.assert_array_equal(resnet_prox_infer(x, zero_weights(2, 4), 0.5), x)


def test_resnet_shift_equivariance(rng):
    w = make_random_weights(2, 4, 0.1, seed=3)
    x = crandn(rng, 4, 8, 8)
    shift = (1, 3, -2)
    a = np.roll(resnet_prox_infer(x, w, 0.25), shift, axis=(0, 1, 2))
    b = resnet_prox_infer(np.roll(x, shift, axis=(0, 1, 2)), w, 0.25)
    assert np.abs(a - b).max() <= 1e-5


def test_time_embedding_ignored_when_kernel_zero(rng):
    w = make_random_weights(1, 4, 0.1, seed=1)
    w.layers["head.weight"][:, 2] = 0
    x = crandn(rng, 3, 6, 6)
    np.testing.assert_array_equal(resnet_prox_infer(x, w, 0.0), resnet_prox_infer(x, w, 0.8))


def test_time_embedding_used(rng):
    w = make_random_weights(1, 4, 0.1, seed=1)
    x = crandn(rng, 3, 6, 6)
    assert not np.allclose(resnet_prox_infer(x, w, 0.0), resnet_prox_infer(x, w, 0.8))


def test_weight_file_round_trip(tmp_path):
    w = make_random_weights(2, 3, seed=4)
    back = read_weights(write_weights(tmp_path / "w.bin", w))
    assert (back.n_blocks, back.channels) == (2, 3)
    for name, a in w.layers.items():
        np.testing.assert_array_equal(back.layers[name], a)


def test_weight_file_errors(tmp_path):
    p = write_weights(tmp_path / "w.bin", make_random_weights(1, 2))
    raw = p.read_bytes()
    for bad in (raw[:4], raw[:-4], raw + b"\0\0\0\0"):
        q = tmp_path / "bad.bin"
        q.write_bytes(bad)
        with pytest.raises(WeightFileError):
            read_weights(q)


def test_weight_shape_mismatch(tmp_path):
    w = make_random_weights(1, 2)
    w.layers["tail.bias"] = np.zeros(3, np.float32)
    with pytest.raises(WeightFileError):
        resnet_prox_infer(np.zeros((2, 4, 4)), w, 0.0)


def test_layer_order():
    names = [n for n, _ in layer_shapes(1, 4)]
    assert names[0] == "head.weight" and names[-1] == "tail.bias" and len(names) == 8


# gridding and unrolled

def test_gridding_zero_and_linear(rng):
    b, maps = _binned(rng, spokes=(6, 6))
    zero = b.with_data([np.zeros_like(d) for d in b.per_phase_data])
    assert not np.any(gridding_recon(zero, maps).frames)
    b2, _ = _binned(rng, spokes=(6, 6))
    mix = b.with_data([2 * d1 - 1j * d2 for d1, d2 in zip(b.per_phase_data, b2.per_phase_data)])
    lhs = gridding_recon(mix, maps).frames
    rhs = 2 * gridding_recon(b, maps).frames - 1j * gridding_recon(b.with_data(b2.per_phase_data),
                                                                   maps).frames
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_unrolled_identity_single_unroll_is_cg(rng):
    b, maps = _binned(rng, spokes=(8, 8))
    op = build_sense_operator(b, maps)
    x, diags = unrolled_reconstruct(b, maps, ProxSpec("identity", K=1, lam=0.3, n_cg=6), op=op)
    x0 = gridding_recon(b, maps, op).frames
    ys = weighted_data(op, b)
    for t in range(2):
        ref, _ = cg_solve_dc(op, ys[t], x0[t], 0.3, 6, t)
        np.testing.assert_allclose(x.frames[t], ref, atol=1e-12)
    assert len(diags) == 1


def test_unrolled_dc_residual_not_above_prox_residual(rng):
    (b, maps), _ = _constant_scene(rng, noise=0.05)
    _, diags = unrolled_reconstruct(b, maps, ProxSpec("temporal_tv", tau=0.1, K=4))
    for d in diags:
        assert d.dc_residual <= d.prox_residual + 1e-12
        assert len(d.cg_rel_residual) == 4


def test_unrolled_small_lambda_reaches_least_squares(rng):
    b, maps = _binned(rng, spokes=(12,), nc=2)
    op = build_sense_operator(b, maps)
    A = _dense(op)
    y = weighted_data(op, b)[0].reshape(-1)
    ls = np.linalg.lstsq(A, y, rcond=None)[0]
    ls_res = np.linalg.norm(A @ ls - y)
    assert ls_res > 0.1 * np.linalg.norm(y)
    _, diags = unrolled_reconstruct(b, maps, ProxSpec("identity", K=8, lam=1e-6, n_cg=50), op=op)
    assert diags[-1].dc_residual <= 1.01 * ls_res


def test_prox_spec_validation(rng):
    b, maps = _binned(rng)
    for spec in (ProxSpec(K=0), ProxSpec(lam=0.0), ProxSpec(tau=-1.0), ProxSpec(kind="x"),
                 ProxSpec(kind="resnet")):
        with pytest.raises(ValueError):
            unrolled_reconstruct(b, maps, spec)


def test_unrolled_resnet_zero_weights_is_identity_prox(rng, tmp_path):
    b, maps = _binned(rng, spokes=(6, 6))
    p = write_weights(tmp_path / "z.bin", zero_weights(1, 2))
    a, _ = unrolled_reconstruct(b, maps, ProxSpec("resnet", K=2, weight_file=str(p)))
    c, _ = unrolled_reconstruct(b, maps, ProxSpec("identity", K=2))
    np.testing.assert_allclose(a.frames, c.frames, atol=1e-12)


# sensitivity estimation

def _full_phantom(nc, N=32, spokes=96):
    cfg = PhantomConfig(matrix_size=N, n_coils=nc, noise_sigma=0.0, tr=0.05,
                        duration=spokes * 0.05, heart_radius_range=(3.0, 5.0),
                        peripheral_center=(-8.0, 10.0), background_axes=(9.0, 11.0),
                        heart_center=(1.0, -1.0))
    traj = make_trajectory(cfg.n_spokes, N, GOLDEN_ANGLE_DEG)
    maps = simulate_coils(nc, N) if nc > 1 else SensitivityMaps(np.ones((1, N, N)))
    frame = make_phantom_frame(0.3, 0.0, cfg)
    y, _ = sample_radial(cfg, maps, traj, synth_physio(cfg), frame_fn=lambda ph, d: frame)
    return y, traj, maps, frame


def test_single_coil_sensitivity_is_unit():
    y, traj, _, frame = _full_phantom(1)
    est = estimate_sensitivities(y, traj, 32)
    inside = frame > 0.5
    np.testing.assert_allclose(np.abs(est.maps[0][inside]), 1.0, atol=1e-12)


def test_multicoil_sensitivity_accuracy():
    # default 64x64 phantom geometry
    cfg = PhantomConfig(noise_sigma=0.0, tr=0.01, duration=1.92)
    traj = make_trajectory(cfg.n_spokes, 64, GOLDEN_ANGLE_DEG)
    maps = simulate_coils(8, 64)
    frame = make_phantom_frame(0.3, 0.0, cfg)
    y, _ = sample_radial(cfg, maps, traj, synth_physio(cfg), frame_fn=lambda ph, d: frame)
    est = estimate_sensitivities(y, traj, 64)
    inside = frame > 0
    a, b = np.abs(est.maps[:, inside]), np.abs(maps.maps[:, inside])
    assert np.linalg.norm(a - b) / np.linalg.norm(b) <= 0.1
    rss = np.sqrt(np.sum(np.abs(est.maps) ** 2, axis=0))
    kept = rss > 0
    np.testing.assert_allclose(rss[kept], 1.0, atol=1e-6)


def test_sensitivity_errors(rng):
    y, traj, _, _ = _full_phantom(1, spokes=40)
    from radcine.types import RadialKSpace
    with pytest.raises(ValueError):
        estimate_sensitivities(RadialKSpace(np.zeros_like(y.data), y.spoke_timestamps), traj, 32)
    with pytest.raises(ValueError):
        estimate_sensitivities(RadialKSpace(y.data[:, :8], y.spoke_timestamps[:8]),
                               traj.subset(np.arange(8)), 32)


def test_spokes_union_restores_time_order(rng):
    b, _ = _binned(rng, spokes=(3, 4))
    swapped = BinnedKSpace(b.phase_index_sets[::-1], b.per_phase_data[::-1],
                           b.per_phase_traj[::-1])
    y, tr = spokes_union(swapped)
    np.testing.assert_array_equal(y.spoke_timestamps, np.arange(7))
    np.testing.assert_array_equal(y.data[:, :3], b.per_phase_data[0])
