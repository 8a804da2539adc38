import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from radar_sense.channel import effective_cluster_channels
from radar_sense.errors import DomainError, RankDeficientError, ShapeError
from radar_sense.scene import Target, build_clusters, paper_config, paper_targets
from radar_sense.stage1 import (
    GroupLassoOptions, default_rho_grid, detect_support, group_lasso_solve, group_soft_threshold,
    refit_support, rho_max, rho_sweep, write_trace)
from radar_sense.waveform import build_measurement_matrix, build_pilots, make_rng, observe

from conftest import PROPS, random_channel, small_config
from oracles import group_lasso_cvx, group_lasso_objective, kkt_violation

pytestmark = pytest.mark.property


def _instance(seed, M=2, N_P=24, L=4, structured=False, density=0.5, noise=0.0):
    cfg = small_config(M=M, N=32, N_P=N_P, L=L, p=1.0)
    rng = np.random.default_rng(seed)
    if structured:
        Th = build_measurement_matrix(build_pilots(cfg), cfg)
    else:
        Th = (rng.standard_normal((N_P * M, L * M * M)) + 1j * rng.standard_normal((N_P * M, L * M * M))) / 4
    h = random_channel(cfg, rng, density) * 1e4
    y = Th @ h.reshape(-1)
    y = y + noise * (rng.standard_normal(y.size) + 1j * rng.standard_normal(y.size))
    return cfg, Th, y, h


def test_soft_threshold_examples():
    v = np.array([1.0 + 2j, -3j])
    assert not np.any(group_soft_threshold(v, np.linalg.norm(v)))
    assert np.array_equal(group_soft_threshold(v, 0.0), v)
    u = np.array([3.0, 4.0]) * np.exp(0.7j)
    np.testing.assert_allclose(group_soft_threshold(u, 2.5), u / 2, rtol=1e-15)


@PROPS
@given(st.lists(st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False),
                min_size=1, max_size=8), st.floats(0, 2e3))
def test_soft_threshold_is_prox(vals, t):
    v = np.array(vals, dtype=complex)
    z = group_soft_threshold(v, t)
    nz = np.linalg.norm(z)
    # optimality of 0.5||z - v||^2 + t||z||
    if nz > 0:
        np.testing.assert_allclose(z - v + t * z / nz, 0, atol=1e-9 * (1 + np.abs(v).max()))
    else:
        assert np.linalg.norm(v) <= t * (1 + 1e-12)


def test_zero_measurement():
    cfg, Th, _, _ = _instance(0)
    res = group_lasso_solve(np.zeros(Th.shape[0]), Th, cfg, GroupLassoOptions(rho=1.0))
    assert not np.any(res.h_hat) and res.objective == 0 and res.support == frozenset()


def test_rho_max_zero_solution():
    # 12 x 8 instance: two groups of four
    cfg, Th, y, _ = _instance(4, M=2, N_P=6, L=2, density=1.0)
    assert Th.shape == (12, 8)
    A = np.sqrt(cfg.p) * Th
    want = max(np.linalg.norm((A.conj().T @ y)[i:i + 4]) for i in (0, 4))
    assert rho_max(y, Th, cfg) == pytest.approx(want, rel=1e-12)
    at = group_lasso_solve(y, Th, cfg, GroupLassoOptions(rho=want))
    assert not np.any(at.h_hat)
    assert kkt_violation(A, y, np.zeros(8), 4, want) == 0
    below = group_lasso_solve(y, Th, cfg, GroupLassoOptions(rho=0.9 * want))
    assert np.any(below.h_hat)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("structured", [False, True])
def test_matches_conic_oracle(seed, structured):
    cfg, Th, y, _ = _instance(seed, structured=structured, noise=0.05)
    A = np.sqrt(cfg.p) * Th
    for frac in (0.02, 0.2, 0.6):
        rho = frac * rho_max(y, Th, cfg)
        res = group_lasso_solve(y, Th, cfg, GroupLassoOptions(rho=rho))
        ref = group_lasso_objective(A, y, group_lasso_cvx(A, y, 4, rho), 4, rho)
        assert abs(res.objective - ref) <= 1e-6 * (1 + abs(ref))
        assert res.objective <= ref + 1e-9 * (1 + abs(ref))
        assert kkt_violation(A, y, res.h_hat.reshape(-1), 4, rho) <= 1e-6 * rho
        assert res.kkt_residual <= 1e-6 * rho


def test_tiny_single_group_noiseless():
    cfg = small_config(M=1, N=32, N_P=8, L=4, p=1.0)
    Th = build_measurement_matrix(build_pilots(cfg), cfg)
    h = np.zeros((4, 1, 1), complex)
    h[2] = 0.8 - 0.1j
    y = Th @ h.reshape(-1)
    rho = 0.01 * rho_max(y, Th, cfg)
    res = group_lasso_solve(y, Th, cfg, GroupLassoOptions(rho=rho))
    ref = group_lasso_objective(Th, y, group_lasso_cvx(Th, y, 1, rho), 1, rho)
    assert abs(res.objective - ref) <= 1e-6 * (1 + ref)
    assert res.support == frozenset({3})


@PROPS
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.9), st.booleans())
def test_objective_monotone(seed, frac, structured):
    cfg, Th, y, _ = _instance(seed, structured=structured, noise=0.1)
    rho = frac * rho_max(y, Th, cfg)
    res = group_lasso_solve(y, Th, cfg, GroupLassoOptions(rho=rho, trace=True, max_iters=2000))
    f = np.array([t[1] for t in res.trace])
    assert np.all(np.diff(f) <= 1e-12 * f[:-1] + 1e-15 * np.vdot(y, y).real)
    assert res.objective >= 0 and res.support <= set(range(1, cfg.L_max + 1))


def test_detect_support():
    cfg, Th, y, _ = _instance(1)
    res = group_lasso_solve(y, Th, cfg, GroupLassoOptions(rho=0.1 * rho_max(y, Th, cfg)))
    norms = res.group_norms
    assert detect_support(res) == frozenset(int(l) + 1 for l in np.flatnonzero(norms > 1e-3 * norms.max()))
    assert detect_support(res, threshold=np.inf) == frozenset()
    zero = group_lasso_solve(np.zeros_like(y), Th, cfg, GroupLassoOptions(rho=1.0))
    assert detect_support(zero) == frozenset()


def test_single_target_support():
    cfg = paper_config(4)
    h = effective_cluster_channels(build_clusters([Target(1, 55.0, 0.8)], cfg), cfg)
    obs = observe(h, cfg, make_rng(0), noiseless=True)
    path = rho_sweep(obs.y_P, obs.Theta_P, cfg)
    assert path.support == frozenset({6})


def test_reference_noiseless_path():
    cfg = paper_config(4)
    h = effective_cluster_channels(build_clusters(paper_targets(), cfg), cfg)
    obs = observe(h, cfg, make_rng(0), noiseless=True)
    path = rho_sweep(obs.y_P, obs.Theta_P, cfg)
    assert path.support == frozenset({3, 9})
    assert path.refit_residuals[path.selected] <= 1e-8 * np.linalg.norm(obs.y_P)
    np.testing.assert_allclose(path.h_refit, h, atol=1e-8 * np.abs(h).max())


def test_single_point_grid():
    cfg, Th, y, _ = _instance(2)
    top = rho_max(y, Th, cfg)
    path = rho_sweep(y, Th, cfg, rho_grid=[top])
    assert path.selected == 0 and path.support == frozenset()
    with pytest.raises(DomainError):
        rho_sweep(y, Th, cfg, rho_grid=[])
    with pytest.raises(DomainError):
        rho_sweep(y, Th, cfg, rho_grid=[2.0, 1.0])


def test_default_grid():
    cfg, Th, y, _ = _instance(2)
    g = default_rho_grid(y, Th, cfg)
    assert g.size == 12 and g[-1] == pytest.approx(rho_max(y, Th, cfg))
    assert g[0] == pytest.approx(1e-3 * g[-1])


def test_active_groups_shrink_along_path():
    # measured on i.i.d. Gaussian designs; not a theorem
    ok = 0
    for seed in range(100):
        cfg, Th, y, _ = _instance(seed, noise=0.05)
        path = rho_sweep(y, Th, cfg)
        sizes = [len(s) for s in path.supports]
        ok += all(a >= b for a, b in zip(sizes, sizes[1:]))
    assert ok >= 90


def test_cold_start_agrees():
    cfg, Th, y, _ = _instance(9, structured=True, noise=0.05)
    warm = rho_sweep(y, Th, cfg)
    cold = rho_sweep(y, Th, cfg, warm_start=False, workers=2)
    assert warm.supports == cold.supports
    for a, b in zip(warm.results, cold.results):
        assert a.objective == pytest.approx(b.objective, rel=1e-8, abs=1e-12)


def test_refit_examples():
    cfg, Th, y, h = _instance(3, N_P=12, structured=True, density=0.5)
    true = [l + 1 for l in range(cfg.L_max) if np.any(h[l])]
    np.testing.assert_allclose(refit_support(y, Th, true, cfg), h, atol=1e-9 * np.abs(h).max())
    assert not np.any(refit_support(y, Th, [], cfg))
    full = refit_support(y, Th, range(1, cfg.L_max + 1), cfg)
    ls = np.linalg.lstsq(np.sqrt(cfg.p) * Th, y, rcond=None)[0]
    np.testing.assert_allclose(full.reshape(-1), ls, atol=1e-10 * np.abs(ls).max())


def test_refit_rank_deficient_names_clusters():
    cfg, Th, y, _ = _instance(5, N_P=12)
    Th = Th.copy()
    Th[:, 4:8] = Th[:, 0:4]  # cluster 2 duplicates cluster 1
    with pytest.raises(RankDeficientError) as err:
        refit_support(y, Th, [1, 2, 3], cfg)
    assert set(err.value.clusters) == {1, 2}


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1))
def test_noiseless_exact_recovery(seed):
    cfg, Th, y, h = _instance(seed, N_P=16, structured=True, density=0.4)
    path = rho_sweep(y, Th, cfg)
    if not np.any(h):
        assert path.support == frozenset()
        return
    np.testing.assert_allclose(path.h_refit, h, atol=1e-8 * np.abs(h).max())


def test_options_and_shapes():
    with pytest.raises(DomainError):
        GroupLassoOptions(rho=-1.0)
    with pytest.raises(DomainError):
        GroupLassoOptions(max_iters=0)
    cfg, Th, y, _ = _instance(0, noise=0.1)
    with pytest.raises(ShapeError):
        group_lasso_solve(y[:-1], Th, cfg, GroupLassoOptions(rho=1.0))
    opts = GroupLassoOptions(rho=1e-3 * rho_max(y, Th, cfg), max_iters=1, polish=False)
    res = group_lasso_solve(y, Th, cfg, opts)
    assert not res.converged and res.iterations == 1


def test_ill_conditioned_path_is_certified():
    # noise only: every group is active at small rho and adjacent lags are coherent
    cfg = paper_config(4)
    obs = observe(np.zeros((cfg.L_max, 4, 4)), cfg, make_rng(0))
    path = rho_sweep(obs.y_P, obs.Theta_P, cfg)
    assert path.support == frozenset()
    for r, res in zip(path.rhos, path.results):
        assert res.converged and res.kkt_residual <= 1e-6 * r


def test_polish_matches_plain_descent():
    cfg, Th, y, _ = _instance(11, structured=True, noise=0.05)
    rho = 0.05 * rho_max(y, Th, cfg)
    a = group_lasso_solve(y, Th, cfg, GroupLassoOptions(rho=rho))
    b = group_lasso_solve(y, Th, cfg, GroupLassoOptions(rho=rho, polish=False, max_iters=200000))
    assert a.objective == pytest.approx(b.objective, rel=1e-9)
    assert a.support == b.support


def test_trace_file(tmp_path):
    cfg, Th, y, _ = _instance(0)
    res = group_lasso_solve(y, Th, cfg, GroupLassoOptions(rho=0.2 * rho_max(y, Th, cfg), trace=True))
    rows = list(csv.reader(write_trace(tmp_path / "t.csv", res).open()))
    assert rows[0] == ["iter", "objective", "max_group_norm", "kkt_residual"]
    assert len(rows) == res.iterations + 1
    assert float(rows[-1][1]) == pytest.approx(res.objective, rel=1e-12)
