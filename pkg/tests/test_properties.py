import math

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dbmlab.dbm import CouplingCoefficients, ParticleConfiguration, evolve_parabolic, step_dbm
from dbmlab.diagnostics import match_labeling
from dbmlab.measures import Measure1D, quantiles, stieltjes_transform
from dbmlab.report import DiagnosticsReport

SETTINGS = settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


@st.composite
def atomic_measures(draw):
    n = draw(st.integers(1, 8))
    pts = draw(st.lists(finite, min_size=n, max_size=n, unique=True))
    w = draw(st.lists(st.floats(0.01, 1.0), min_size=n, max_size=n))
    return Measure1D.atomic(pts, w)


@st.composite
def upper_points(draw):
    return complex(draw(finite), draw(st.floats(1e-3, 5.0)))


@SETTINGS
@given(atomic_measures())
def test_atomic_measures_normalized(mu):
    assert math.isclose(mu.weights.sum(), 1.0, abs_tol=1e-12)
    assert np.all(mu.weights >= 0)


@SETTINGS
@given(atomic_measures(), upper_points())
def test_stieltjes_maps_upper_half_plane(mu, z):
    m = stieltjes_transform(mu, z)
    assert m.imag > 0
    # |m| <= 1 / Im z for a probability measure
    assert abs(m) <= 1 / z.imag * (1 + 1e-12)


@SETTINGS
@given(atomic_measures(), st.integers(2, 60))
def test_quantiles_monotone(mu, N):
    q = np.asarray(quantiles(mu, N, np.arange(1, N + 1)), dtype=float)
    assert np.all(np.diff(q) >= 0)
    assert q[0] >= mu.points.min() and q[-1] <= mu.points.max()


@st.composite
def parabolic_problems(draw):
    K = draw(st.integers(2, 7))
    B = draw(arrays(float, (K, K), elements=st.floats(0, 3)))
    B = B + B.T
    np.fill_diagonal(B, 0)
    W = draw(arrays(float, K, elements=st.floats(0, 2)))
    v0 = draw(arrays(float, K, elements=finite))
    return B, W, v0


def _coeffs(B, W):
    z = np.zeros((2, B.shape[0]))
    return CouplingCoefficients(np.array([0.0, 1.0]), np.stack([B, B]), np.stack([W, W]), z, z, 0.0, (0, 0))


@SETTINGS
@given(parabolic_problems())
def test_parabolic_sum_conservation(prob):
    B, _, v0 = prob
    K = B.shape[0]
    dt = 0.4 / max(1.0, B.sum(1).max())
    t, V = evolve_parabolic(_coeffs(B, np.zeros(K)), v0, t_span=(0, 0.5), dt=dt)
    assert np.allclose(V.sum(1), v0.sum(), atol=1e-9 * (1 + np.abs(v0).sum()))


@SETTINGS
@given(parabolic_problems())
def test_parabolic_max_principle(prob):
    B, W, v0 = prob
    dt = 0.4 / max(1.0, (B.sum(1) + W).max())
    t, V = evolve_parabolic(_coeffs(B, W), v0, t_span=(0, 0.5), dt=dt)
    tol = 1e-12 * (1 + np.abs(v0).max())
    assert np.all(V.max(1) <= max(v0.max(), 0) + tol)
    assert np.all(V.min(1) >= min(v0.min(), 0) - tol)


@st.composite
def dbm_states(draw):
    N = draw(st.integers(2, 12))
    gaps = draw(arrays(float, N - 1, elements=st.floats(0.05, 1.0)))
    x = np.concatenate([[0.0], np.cumsum(gaps)])
    x = x - x.mean() + draw(finite)
    noise = draw(arrays(float, N, elements=st.floats(-3, 3)))
    dt = draw(st.floats(1e-5, 1e-3))
    return x, noise, dt


@SETTINGS
@given(dbm_states(), st.sampled_from([1.0, 2.0, 4.0]))
def test_dbm_step_keeps_order(state, beta):
    x, noise, dt = state
    new = step_dbm(ParticleConfiguration(x), dt, beta, noise).positions
    assert np.all(np.diff(new) > 0)


@SETTINGS
@given(dbm_states())
def test_dbm_step_reflection_consistency(state):
    # relabeling i -> N+1-i under x -> -x (with the noise mirrored) commutes with the step
    x, noise, dt = state
    a = step_dbm(ParticleConfiguration(x), dt, 2.0, noise).positions
    b = step_dbm(ParticleConfiguration(-x[::-1]), dt, 2.0, -noise[::-1]).positions
    assert np.allclose(a, -b[::-1], atol=1e-12 * (1 + np.abs(x).max()))


@SETTINGS
@given(dbm_states())
def test_dbm_center_of_mass_is_ou(state):
    # pair repulsions cancel in the sum, leaving the OU step for the mean
    x, noise, dt = state
    N = x.size
    new = step_dbm(ParticleConfiguration(x), dt, 2.0, noise).positions
    expect = x.mean() * (1 - dt / 2) + math.sqrt(2 / (2 * N)) * math.sqrt(dt) * noise.mean()
    # a bridged step splits the linear confinement, an O(dt^2) change
    assert math.isclose(new.mean(), expect, abs_tol=1e-9 + dt ** 2 * abs(x.mean()))


@SETTINGS
@given(st.dictionaries(st.sampled_from(["a", "b", "c"]), st.floats(-10, 10), min_size=3, max_size=3),
       st.dictionaries(st.sampled_from(["a", "b", "c"]), st.floats(-10, 10), min_size=1, max_size=3))
def test_report_flags_follow_thresholds(stats, new):
    rep = DiagnosticsReport("r", statistics=dict(stats), thresholds=dict(stats))
    rep.require("fa", "a", "<=", "a").require("fb", "b", ">=", "b").require("fc", "c", "<", "c")
    assert rep.passed == {"fa": True, "fb": True, "fc": False}
    rep2 = rep.with_thresholds(**new)
    assert rep2.statistics == rep.statistics
    th = {**stats, **new}
    assert rep2.passed == {"fa": stats["a"] <= th["a"], "fb": stats["b"] >= th["b"],
                           "fc": stats["c"] < th["c"]}
    back = DiagnosticsReport.from_dict(rep2.to_dict())
    assert back.passed == rep2.passed


@SETTINGS
@given(st.integers(60, 200), st.integers(-4, 4), st.floats(-0.3, 0.3))
def test_match_labeling_equivariance(n, k, jitter):
    lattice = np.arange(1, n + 1) / n
    w = (n // 3, 2 * n // 3)
    lam = lattice + (k + jitter) / n
    assert match_labeling(lam, lattice, w) == k
