import math

import numpy as np
import pytest
from scipy import stats

from dbmlab.dbm import (CouplingCoefficients, ParticleConfiguration, Trajectory, eps_matrix,
                        evolve_parabolic, extract_coupling, run_coupled_reference, run_dbm,
                        run_localized, run_regularized, shift_process, step_dbm, window_labels)
from dbmlab.errors import ContainmentError, StepSizeError
from dbmlab.matrix_flow import eigenvalues, gaussian_ensemble
from dbmlab.measures import semicircle_cdf, semicircle_density, semicircle_quantiles


def _frozen(points, labels, t1):
    return Trajectory([0.0, t1], np.vstack([points, points]), labels)


def test_single_particle_variance():
    # N = 1 is an OU process with stationary variance (2/(beta N)) / (2 * 1/2) = 1
    dt, n = 0.01, 100_000
    tr = run_dbm([0.0], (0.0, n * dt), dt=dt, beta=2.0, seed=3)
    x = tr.positions[1000:, 0]
    batches = x[: x.size // 50 * 50].reshape(50, -1)
    v = batches.var(axis=1) + (batches.mean(axis=1) - x.mean()) ** 2
    se = v.std(ddof=1) / math.sqrt(v.size)
    assert abs(x.var() - 1.0) <= 3 * se


def test_two_particles_noiseless_gap():
    N = 2
    state = ParticleConfiguration(np.array([-0.5, 0.5]))
    for _ in range(2500):
        state = step_dbm(state, 0.01, 2.0, np.zeros(N))
    assert state.gaps()[0] == pytest.approx(2 / math.sqrt(N), abs=1e-6)


@pytest.fixture(scope="module")
def gue200():
    return eigenvalues(gaussian_ensemble(200, 2, 0))


def test_run_dbm_from_gue_stays_semicircle(gue200):
    tr = run_dbm(gue200, (0.0, 1.0), beta=2.0, seed=1, stride=100)
    assert np.all(np.diff(tr.positions, axis=1) > 0)
    assert stats.kstest(tr.positions[-1], semicircle_cdf).statistic <= 0.08


def test_run_dbm_repeatable(gue200):
    a = run_dbm(gue200, (0.0, 0.01), beta=2.0, seed=5)
    b = run_dbm(gue200, (0.0, 0.01), beta=2.0, seed=5)
    c = run_dbm(gue200, (0.0, 0.01), beta=2.0, seed=6)
    assert np.array_equal(a.positions, b.positions)
    assert not np.array_equal(a.positions, c.positions)


def test_shift_process_identities(gue200):
    tr = run_dbm(gue200, (0.0, 0.01), beta=2.0, seed=5, stride=5)
    assert np.array_equal(shift_process(tr, 0.0, 0.0).positions, tr.positions)
    back = shift_process(shift_process(tr, 0.3, 0.004), -0.3, 0.004)
    assert np.max(np.abs(back.positions - tr.positions)) <= 1e-15
    sh = shift_process(tr, 0.3, 0.004)
    assert np.allclose(np.diff(sh.positions, axis=1), np.diff(tr.positions, axis=1), atol=1e-14)


def test_single_window_particle_is_centered():
    N, L = 21, 11
    _, outside = window_labels(L, 0, N)
    right = semicircle_quantiles(N)[L:]
    ext = _frozen(np.concatenate([-right[::-1], right]), outside, 40.0)
    tr = run_localized([0.0], ext, (L, 0), t_span=(0.0, 40.0), dt=1e-3, seed=2, stride=10)
    x = tr.positions[200:, 0]
    means = x[: x.size // 40 * 40].reshape(40, -1).mean(axis=1)
    assert abs(x.mean()) <= 4 * means.std(ddof=1) / math.sqrt(means.size)


def test_localized_matches_coupled_for_frozen_exterior():
    N, L, K = 60, 30, 5
    inside, outside = window_labels(L, K, N)
    g = semicircle_quantiles(N)
    ext = _frozen(g[outside - 1], outside, 0.05)
    a = run_localized(g[inside - 1], ext, (L, K), t_span=(0.0, 0.05), seed=9)
    b = run_coupled_reference(g[inside - 1], g[outside - 1], (L, K), t_span=(0.0, 0.05), seed=9)
    c = run_localized(g[inside - 1], ext, (L, K), t_span=(0.0, 0.05), seed=9)
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.positions, c.positions)


def test_localized_rigidity_against_frozen_quantiles():
    N, L, K = 400, 200, 20
    inside, outside = window_labels(L, K, N)
    g = semicircle_quantiles(N)
    T = N ** -0.2
    ext = _frozen(g[outside - 1], outside, T)
    ok = []
    for seed in range(50):
        tr = run_localized(g[inside - 1], ext, (L, K), t_span=(0.0, T), dt=0.1 / N, seed=seed,
                           stride=10)
        ok.append(np.max(np.abs(tr.positions - g[inside - 1])) <= 5 * math.log(N) / N)
    assert np.mean(ok) >= 0.95


def test_localized_rejects_start_outside():
    N, L, K = 30, 15, 2
    inside, outside = window_labels(L, K, N)
    g = semicircle_quantiles(N)
    ext = _frozen(g[outside - 1], outside, 0.01)
    x = g[inside - 1].copy()
    x[0] = g[L - K - 2] - 0.01
    x.sort()
    with pytest.raises(ContainmentError):
        run_localized(x, ext, (L, K), t_span=(0.0, 0.01))


def test_eps_matrix_antisymmetric():
    lab = np.arange(1, 12)
    e = eps_matrix(lab, lab, 1e-3, (3, 9))
    off = ~np.eye(lab.size, dtype=bool)
    assert np.array_equal((e + e.T)[off], np.zeros(off.sum()))
    assert e[0, 5] == 0 and e[5, 3] == 1e-3 and e[3, 5] == -1e-3


def test_regularized_close_to_unregularized():
    N, L, K = 200, 100, 5
    inside, outside = window_labels(L, K, N)
    T1 = 0.0
    T2 = K ** 2 / N
    ok = []
    for seed in range(20):
        lam = eigenvalues(gaussian_ensemble(N, 2, 1000 + seed))
        full = run_dbm(lam, (T1, T2), dt=0.1 / N, seed=seed)
        ext = full.select(outside)
        xh = run_regularized(lam[inside - 1], ext, (L, K), eps=1e-12, t_span=(T1, T2), dt=0.1 / N,
                             seed=seed)
        xb = xh.meta["xbar"]
        ok.append(np.max(np.abs(xh.positions - xb.positions)) <= 1e-5)
    assert np.mean(ok) >= 0.95


def test_coupling_coefficients_on_quantiles():
    N, L, K = 400, 200, 10
    inside, outside = window_labels(L, K, N)
    g = semicircle_quantiles(N)
    tr = Trajectory([0.0, 1e-3], np.vstack([g[inside - 1]] * 2), inside)
    ext = _frozen(g[outside - 1], outside, 1e-3)
    c = extract_coupling(tr, tr, ext, g[outside - 1])
    d = g[inside - 1][:, None] - g[inside - 1][None, :]
    off = ~np.eye(inside.size, dtype=bool)
    assert np.allclose(c.B[0][off], 1.0 / (N * d[off] ** 2), rtol=1e-12)
    assert np.all(c.B >= 0) and np.all(c.W >= 0)
    rho = semicircle_density(g[inside - 1])
    nn = np.array([c.B[0, i, i + 1] for i in range(inside.size - 1)])
    assert np.all(np.abs(nn / (N * rho[:-1] ** 2) - 1) <= 0.2)


def _coeffs(B, W, times=(0.0, 1.0)):
    nt = len(times)
    B = np.broadcast_to(B, (nt,) + B.shape).copy()
    W = np.broadcast_to(W, (nt,) + W.shape).copy()
    z = np.zeros_like(W)
    return CouplingCoefficients(np.array(times), B, W, z, z, 0.0, (0, 0))


def test_parabolic_constant():
    rng = np.random.default_rng(0)
    B = rng.uniform(0, 1, (6, 6))
    B = B + B.T
    np.fill_diagonal(B, 0)
    t, V = evolve_parabolic(_coeffs(B, np.zeros(6)), np.full(6, 0.7), t_span=(0, 1), dt=0.01)
    assert np.array_equal(V[-1], np.full(6, 0.7))


def test_parabolic_two_sites():
    b = 2.0
    B = np.array([[0, b], [b, 0.0]])
    t, V = evolve_parabolic(_coeffs(B, np.zeros(2)), [1.0, -1.0], t_span=(0, 1), dt=1e-4 / b)
    d = V[:, 0] - V[:, 1]
    assert np.max(np.abs(d - 2 * np.exp(-2 * b * t))) <= 1e-6


def test_parabolic_sup_nonincreasing():
    rng = np.random.default_rng(1)
    B = rng.uniform(0, 3, (8, 8))
    B = B + B.T
    np.fill_diagonal(B, 0)
    W = rng.uniform(0, 2, 8)
    t, V = evolve_parabolic(_coeffs(B, W), rng.normal(size=8), t_span=(0, 1), dt=0.01)
    sup = np.abs(V).max(axis=1)
    assert np.all(np.diff(sup) <= 1e-15)


def test_parabolic_step_size_error():
    B = np.array([[0, 100.0], [100.0, 0]])
    with pytest.raises(StepSizeError):
        evolve_parabolic(_coeffs(B, np.zeros(2)), [1.0, 0.0], t_span=(0, 1), dt=0.01)
    with pytest.raises(StepSizeError):
        evolve_parabolic(_coeffs(B, np.zeros(2)), [1.0, 0.0], t_span=(0, 1))
