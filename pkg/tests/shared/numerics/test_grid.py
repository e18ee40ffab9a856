import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from pydantic import ValidationError
from scipy.linalg import expm

from shared.numerics.grid import (
    Grid,
    GridError,
    GridMismatchError,
    NonFiniteValuesError,
    check_grid_function,
    cosine_transform,
    first_difference,
    flux_divergence,
    fourth_difference,
    heat_semigroup_apply,
    integrate,
    laplacian,
    laplacian_eigenvalues,
    laplacian_matrix,
    mean,
    restrict,
    second_difference,
    sobolev_norms,
    third_difference,
    w12_norm,
)


def test_grid_geometry():
    """
    Test the derived spacing, nodes and trapezoid weights.
    """
    grid = Grid(length=2.0, n=9)

    assert grid.h == pytest.approx(0.25)
    assert grid.nodes[0] == 0.0
    assert grid.nodes[-1] == 2.0
    assert grid.weights.sum() == pytest.approx(2.0)


@pytest.mark.parametrize("kwargs", [{"length": 0.0, "n": 16}, {"length": 1.0, "n": 7}])
def test_grid_rejects_invalid_parameters(kwargs):
    with pytest.raises(ValidationError):
        Grid(**kwargs)


def test_coarsen_shares_nodes():
    fine = Grid(length=1.0, n=65)
    coarse = fine.coarsen(2)

    assert coarse.n == 33
    np.testing.assert_array_equal(restrict(fine.nodes, 2), coarse.nodes)
    with pytest.raises(GridMismatchError):
        Grid(length=1.0, n=64).coarsen(2)


def test_check_grid_function_errors(grid):
    with pytest.raises(GridMismatchError):
        check_grid_function(grid, np.zeros(grid.n + 1))
    with pytest.raises(NonFiniteValuesError):
        check_grid_function(grid, np.full(grid.n, np.nan))


def test_laplacian_annihilates_constants(grid):
    np.testing.assert_allclose(laplacian(grid, np.full(grid.n, 3.0)), 0.0, atol=1e-10)


def test_flux_divergence_is_conservative(grid):
    """
    Test that the trapezoidal integral of (a p_x)_x vanishes.

    Steps:
      1. Build a positive coefficient and a non-symmetric profile.
      2. Integrate the discrete divergence.

    Expected:
      - The integral is zero up to roundoff.
    """
    x = grid.nodes
    a = 1.0 + x**2
    p = np.exp(x) * np.sin(3.0 * x)

    assert integrate(grid, flux_divergence(grid, a, p)) == pytest.approx(0.0, abs=1e-10)


def test_cosine_modes_are_eigenvectors(grid):
    lam = laplacian_eigenvalues(grid)
    for k in (0, 1, 5, grid.n - 1):
        phi = np.cos(k * np.pi * grid.nodes / grid.length)
        np.testing.assert_allclose(
            laplacian(grid, phi), -lam[k] * phi, atol=1e-9 * max(1.0, lam[k])
        )


@pytest.mark.parametrize("t", [0.01, 0.1, 1.0])
def test_heat_semigroup_matches_matrix_exponential(t):
    """
    Test that the DCT semigroup equals expm(t * Delta_h) on a small grid.

    Steps:
      1. Build the dense Neumann Laplacian for n = 16.
      2. Apply scipy.linalg.expm and the spectral semigroup to a random field.

    Expected:
      - Max-norm difference below 1e-12.
    """
    grid = Grid(length=1.0, n=16)
    rng = np.random.default_rng(7)
    p = rng.uniform(-1.0, 1.0, grid.n)

    exact = expm(t * laplacian_matrix(grid)) @ p
    spectral = heat_semigroup_apply(grid, 1.0, t, p)

    assert np.max(np.abs(spectral - exact)) <= 1e-12


def test_heat_semigroup_identity_and_errors(grid):
    p = np.cos(np.pi * grid.nodes)

    np.testing.assert_array_equal(heat_semigroup_apply(grid, 1.0, 0.0, p), p)
    with pytest.raises(GridError):
        heat_semigroup_apply(grid, -1.0, 0.1, p)


@settings(max_examples=40, deadline=None)
@given(
    p=arrays(np.float64, 17, elements=st.floats(-1.0, 1.0)),
    t=st.floats(0.0, 1.0),
)
def test_heat_semigroup_keeps_mean_and_max_principle(p, t):
    """
    Property: the semigroup preserves the mean and does not increase max|p|.
    """
    grid = Grid(length=1.0, n=17)
    q = heat_semigroup_apply(grid, 0.3, t, p)

    assert mean(grid, q) == pytest.approx(mean(grid, p), abs=1e-12)
    assert np.max(np.abs(q)) <= np.max(np.abs(p)) + 1e-12


def test_differences_exact_on_polynomials(grid):
    """
    Test that every difference operator is exact, boundary rows included,
    on a polynomial its stencils reproduce.

    Expected:
      - d/dx x^2 = 2x, d2/dx2 x^3 = 6x, d3/dx3 x^3 = 6, d4/dx4 x^4 = 24.
    """
    x = grid.nodes

    np.testing.assert_allclose(first_difference(grid, x**2), 2.0 * x, atol=1e-10)
    np.testing.assert_allclose(second_difference(grid, x**3), 6.0 * x, atol=1e-8)
    np.testing.assert_allclose(third_difference(grid, x**3), 6.0, rtol=1e-6)
    np.testing.assert_allclose(fourth_difference(grid, x**4), 24.0, rtol=1e-5)


def test_third_difference_is_odd_at_both_ends(grid):
    x = grid.nodes
    d3 = third_difference(grid, (x - 0.5) ** 3)

    np.testing.assert_allclose(d3, 6.0, rtol=1e-6)


def test_integrate_and_mean(grid):
    x = grid.nodes

    assert integrate(grid, x) == pytest.approx(0.5)
    assert mean(grid, np.full(grid.n, 2.5)) == pytest.approx(2.5)


def test_h1_seminorm_matches_laplacian_form(grid):
    """
    Test the summation-by-parts identity |p|_H1^2 = -int p Delta_h p.
    """
    x = grid.nodes
    p = np.cos(2.0 * np.pi * x) + 0.3 * x**3

    norms = sobolev_norms(grid, p)

    assert norms.h1_seminorm**2 == pytest.approx(
        -integrate(grid, p * laplacian(grid, p)), rel=1e-12
    )
    assert norms.w12 == pytest.approx(w12_norm(grid, p))
    assert norms.w22 >= norms.w12 >= norms.l2


def test_w12_of_cosine_mode(grid):
    """
    Test ||phi_k||_W12^2 = (1 + lambda_k) ||phi_k||^2 for a discrete mode.
    """
    k = 3
    phi = np.cos(k * np.pi * grid.nodes)
    lam = laplacian_eigenvalues(grid)[k]

    assert w12_norm(grid, phi) ** 2 == pytest.approx(
        (1.0 + lam) * integrate(grid, phi * phi), rel=1e-12
    )


def test_cosine_transform_of_constant(grid):
    coefficients = cosine_transform(np.ones(grid.n))

    assert coefficients[0] != 0.0
    np.testing.assert_allclose(coefficients[1:], 0.0, atol=1e-12)


def test_restrict_rejects_incompatible_factor():
    with pytest.raises(GridMismatchError):
        restrict(np.zeros(10), 2)
