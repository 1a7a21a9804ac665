import math

import numpy as np
import pytest

from dbmlab.errors import InvalidTransformError, MassLossError, SingularEvaluationError
from dbmlab.measures import (Measure1D, hilbert_transform, point_mass, poisson_kernel,
                             poisson_smooth, quantiles, semicircle, semicircle_cdf,
                             semicircle_density, semicircle_quantiles, semicircle_stieltjes,
                             stieltjes_invert, stieltjes_transform, tail_grid, uniform)


@pytest.fixture(scope="module")
def sc():
    return semicircle(n=8001)


def test_closed_form_semicircle_stieltjes_solves_quadratic():
    z = np.array([1j, 0.3 + 0.2j, -2.5 + 1e-3j, 3.0 + 0j])
    m = semicircle_stieltjes(z)
    assert np.allclose(m * m + z * m + 1, 0, atol=1e-13)
    assert np.all(m[:3].imag > 0)


def test_stieltjes_semicircle_at_i():
    # linear interpolation of the square-root edges limits accuracy; a fine grid reaches 1e-9
    assert stieltjes_transform(semicircle(n=400001), 1j) == pytest.approx(0.6180339887j, abs=1e-8)


def test_stieltjes_single_atom():
    z = 0.7 + 0.3j
    assert stieltjes_transform(point_mass(0.0), z) == pytest.approx(-1 / z, abs=1e-15)


def test_stieltjes_two_atoms():
    mu = Measure1D.atomic([-1.0, 1.0])
    assert stieltjes_transform(mu, 2j) == pytest.approx(0.4j, abs=1e-15)


def test_stieltjes_singular_points():
    with pytest.raises(SingularEvaluationError):
        stieltjes_transform(point_mass(0.5), 0.5)
    with pytest.raises(SingularEvaluationError):
        stieltjes_transform(semicircle(), 0.1)


def test_poisson_smooth_point_mass():
    grid = tail_grid(-1, 1, 40001)
    out = poisson_smooth(point_mass(0.0), 0.1, grid)
    E = np.linspace(-1, 1, 11)
    assert np.allclose(out.density(E), poisson_kernel(E, 0.1), rtol=1e-6, atol=0)
    assert np.trapezoid(out.weights, out.points) == pytest.approx(1.0, abs=1e-6)


def test_poisson_smooth_semigroup(sc):
    grid = tail_grid(-2, 2, 8001)
    bulk = np.linspace(-1.9, 1.9, 200)
    a = poisson_smooth(poisson_smooth(sc, 0.05, grid), 0.07, grid)
    b = poisson_smooth(sc, 0.12, grid)
    assert np.max(np.abs(a.density(bulk) - b.density(bulk))) <= 1e-6


def test_poisson_smooth_mass_loss():
    with pytest.raises(MassLossError):
        poisson_smooth(point_mass(0.0), 0.1, np.linspace(-1, 1, 101))


def test_hilbert_semicircle(sc):
    assert hilbert_transform(sc, 0.0) == pytest.approx(0.0, abs=1e-12)
    assert hilbert_transform(sc, 1.0) == pytest.approx(-0.5, abs=1e-6)
    assert hilbert_transform(sc, 3.0) == pytest.approx((-3 + math.sqrt(5)) / 2, abs=1e-6)


def test_quantiles_examples(sc):
    assert quantiles(sc, 2, 1) == pytest.approx(0.0, abs=1e-9)
    assert np.allclose(quantiles(uniform(0, 1), 4, [1, 2, 3, 4]), [0.25, 0.5, 0.75, 1.0], atol=1e-12)
    assert quantiles(sc, 4, 1) == pytest.approx(-0.8079, abs=1e-4)
    # closed-form oracle for the same level
    assert semicircle_cdf(semicircle_quantiles(4)[0]) == pytest.approx(0.25, abs=1e-14)


def test_quantiles_range():
    with pytest.raises(ValueError):
        quantiles(uniform(), 4, 0)


def test_invert_flat():
    grid = np.linspace(-1, 1, 201)
    out = stieltjes_invert(np.full(grid.size, 1j), grid, 0.0)
    assert out.meta["raw_mass"] == pytest.approx(2 / math.pi, abs=1e-12)
    assert np.allclose(out.weights, 0.5)  # renormalized 1/pi on an interval of length 2


def test_invert_roundtrip(sc):
    grid = np.linspace(-1.9, 1.9, 761)
    m = stieltjes_transform(sc, grid + 1e-4j)
    raw = m.imag / math.pi
    assert np.max(np.abs(raw - semicircle_density(grid))) <= 5e-3
    out = stieltjes_invert(m, grid, 1e-4)
    assert out.meta["eta_used"] == 1e-4


def test_invert_two_atoms():
    grid = tail_grid(-1, 1, 20001)
    mu = Measure1D.atomic([-0.5, 0.5])
    out = stieltjes_invert(stieltjes_transform(mu, grid + 0.05j), grid, 0.05)
    E = np.array([-0.5, -0.45, 0.5, 0.55])
    expect = 0.5 * (poisson_kernel(E + 0.5, 0.05) + poisson_kernel(E - 0.5, 0.05))
    assert np.allclose(out.density(E), expect, rtol=1e-5)


def test_invert_rejects_negative_imaginary():
    with pytest.raises(InvalidTransformError):
        stieltjes_invert(np.array([1j, -0.1j]), np.array([0.0, 1.0]), 0.1)


def test_measure_validation():
    with pytest.raises(ValueError):
        Measure1D("atomic", np.array([0.0, 1.0]), np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        Measure1D.gridded([0, 1], [0, 0])
    mu = Measure1D.atomic([1.0, 1.0, 2.0])
    assert mu.points.tolist() == [1.0, 2.0]
    assert mu.weights == pytest.approx([2 / 3, 1 / 3])
