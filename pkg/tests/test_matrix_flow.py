import math

import numpy as np
import pytest
from scipy import stats

from dbmlab.errors import SpecError
from dbmlab.flow import free_convolution_density
from dbmlab.matrix_flow import (WignerLikeSpec, band_profile, deformed_spec, eigenvalues,
                                empirical_stieltjes, gaussian_ensemble, local_law_residuals,
                                ou_closed_form, ou_path, ou_step, sample_matrix)
from dbmlab.measures import Measure1D, semicircle_cdf, semicircle_nodes


def test_gue_semicircle():
    lam = eigenvalues(gaussian_ensemble(500, 2, 0))
    assert stats.kstest(lam, semicircle_cdf).statistic <= 0.06


def test_equal_row_sum_profile_semicircle():
    spec = WignerLikeSpec(500, 1, S=band_profile(500, 60))
    assert spec.equal_row_sums
    lam = eigenvalues(sample_matrix(spec, 1))
    assert stats.kstest(lam, semicircle_cdf).statistic <= 0.06


def test_hermitian_exactly():
    for beta in (1, 2):
        H = gaussian_ensemble(50, beta, 3)
        assert np.array_equal(H, H.conj().T)
        H = ou_step(H, 0.01, 4)
        assert np.array_equal(H, H.conj().T)


def test_spec_errors():
    S = np.full((3, 3), 1 / 3)
    S[0, 1] = 0.5
    with pytest.raises(SpecError):
        WignerLikeSpec(3, 2, S=S)
    with pytest.raises(SpecError):
        WignerLikeSpec(2, 2, A=np.array([[0, 1.0], [0, 0]]))
    with pytest.raises(SpecError):
        eigenvalues(np.array([[0, 1.0], [0, 0]]))


def test_deformed_bimodal_matches_free_convolution():
    N, t = 500, 0.05
    H = ou_closed_form(sample_matrix(deformed_spec(N, 2), 5), t, 6)
    lam = eigenvalues(H)
    grid = np.linspace(-4, 4, 4001)
    dens = free_convolution_density(Measure1D.atomic([-1.0, 1.0]), math.exp(-t / 2), 1.0, grid)
    cdf = np.cumsum(dens.weights) * (grid[1] - grid[0])
    assert stats.kstest(lam, lambda x: np.interp(x, grid, cdf / cdf[-1])).statistic <= 0.06
    # two lobes with a dip at 0 in the limit law and in the sample
    assert dens.density(0.0) < 0.5 * dens.density(1.1)
    assert np.mean(np.abs(lam) < 0.2) < np.mean(np.abs(lam - 1.1) < 0.2)


def test_ou_step_zero_dt():
    H = gaussian_ensemble(20, 2, 0)
    assert np.array_equal(ou_step(H, 0.0, 1), H)


def test_ou_variance_from_zero():
    N, t, R = 50, 0.5, 20
    off = ~np.eye(N, dtype=bool)
    v = np.array([np.mean(np.abs(ou_path(np.zeros((N, N), complex), t, 100, r))[off] ** 2)
                  for r in range(R)])
    expect = -math.expm1(-t) / N
    assert abs(v.mean() - expect) <= 3 * v.std(ddof=1) / math.sqrt(R) + 1e-3 * expect


def test_closed_form_limits():
    H0 = gaussian_ensemble(40, 1, 0) + np.diag(np.linspace(-3, 3, 40))
    assert np.array_equal(ou_closed_form(H0, 0.0, 1), H0)
    H = ou_closed_form(H0, 50.0, 7)
    assert np.max(np.abs(H - gaussian_ensemble(40, 1, 7))) <= 1e-9


def test_closed_form_semigroup_moments():
    N, R, s, t = 100, 40, 0.3, 0.4
    H0 = np.diag(np.where(np.arange(N) % 2 == 0, 1.0, -1.0))
    a, b = [], []
    for r in range(R):
        la = eigenvalues(ou_closed_form(H0, s + t, 1000 + r))
        lb = eigenvalues(ou_closed_form(ou_closed_form(H0, s, 2000 + r), t, 3000 + r))
        a.append([np.mean(la ** p) for p in range(1, 5)])
        b.append([np.mean(lb ** p) for p in range(1, 5)])
    a, b = np.array(a), np.array(b)
    se = np.sqrt(a.var(0, ddof=1) / R + b.var(0, ddof=1) / R)
    assert np.all(np.abs(a.mean(0) - b.mean(0)) <= 4 * se)


def test_eigenvalue_examples():
    assert np.allclose(eigenvalues(np.diag([3.0, 1.0, 2.0])), [1, 2, 3], atol=1e-14)
    assert np.allclose(eigenvalues(np.array([[0, 1.0], [1, 0]])), [-1, 1], atol=1e-14)
    H = gaussian_ensemble(200, 2, 9)
    assert abs(np.sum(eigenvalues(H)) - np.trace(H).real) <= 1e-9


def test_eigenvalues_unitary_invariance():
    H = gaussian_ensemble(60, 2, 2)
    U = stats.unitary_group.rvs(60, random_state=3)
    assert np.max(np.abs(eigenvalues(H) - eigenvalues(U @ H @ U.conj().T))) <= 1e-9


def test_local_law_gue():
    spectra = [eigenvalues(gaussian_ensemble(500, 2, 100 + r)) for r in range(20)]
    rep = local_law_residuals(spectra, semicircle_nodes(1200), 0.5, 0.0, 0.5, [0.1])
    assert rep.passed["residual"] and rep.passed["counting"]


def test_empirical_stieltjes_single_delta():
    z = np.array([0.1 + 0.2j, -3 + 1e-3j])
    assert np.array_equal(empirical_stieltjes([0.3], z), 1.0 / (0.3 - z))
