"""
Discrete calculus on a uniform node-centred grid with zero-flux boundaries.

Conventions used throughout the package:

* nodes x_i = i*h, i = 0..n-1, h = L/(n-1); the endpoints are grid nodes;
* quadrature is the trapezoidal rule (weights h/2 at the ends, h inside);
* the Neumann Laplacian Delta_h is `flux_divergence` with a == 1. Its
  boundary rows treat the end node as a half cell with zero outer flux,
  which is the same as an even reflection p_{-1} = p_1;
* Delta_h is diagonalised by the DCT-I basis phi_k(x_i) = cos(k*pi*i/(n-1)),
  k = 0..n-1, with eigenvalues -lambda_k,
  lambda_k = (4/h^2) * sin^2(k*pi / (2(n-1))).
  `scipy.fft.dct(type=1)` and `scipy.fft.idct(type=1)` (norm=None) are an
  exact inverse pair for that basis, so the heat semigroup is applied as
  idct(exp(-kappa*t*lambda) * dct(p)).
"""

import numpy as np
from numpy.typing import NDArray
from pydantic import Field
from pydantic.dataclasses import dataclass
from scipy import fft

GridFunction = NDArray[np.float64]


class GridError(Exception):
    """Base class for grid calculus errors."""


class GridMismatchError(GridError):
    """Raised when a grid function does not live on the expected grid."""


class NonFiniteValuesError(GridError):
    """Raised when a grid function contains NaN or Inf entries."""


@dataclass(frozen=True)
class Grid:
    """
    Uniform grid on the interval [0, length] with n nodes.

    The last node is exactly `length`; `h` is derived, never stored.
    """

    length: float = Field(gt=0)
    n: int = Field(ge=8)

    @property
    def h(self) -> float:
        return self.length / (self.n - 1)

    @property
    def nodes(self) -> GridFunction:
        return np.linspace(0.0, self.length, self.n)

    @property
    def weights(self) -> GridFunction:
        w = np.full(self.n, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w

    def coarsen(self, factor: int) -> "Grid":
        """Grid that shares every `factor`-th node of this one."""
        if factor < 1 or (self.n - 1) % factor:
            raise GridMismatchError(
                f"n-1={self.n - 1} is not divisible by factor {factor}"
            )
        return Grid(length=self.length, n=(self.n - 1) // factor + 1)


@dataclass(frozen=True)
class SobolevNorms:
    """Discrete Sobolev norms of a single grid function."""

    l2: float
    linf: float
    h1_seminorm: float
    h2_seminorm: float
    w2inf: float
    w12: float
    w22: float


def check_grid_function(grid: Grid, p, name: str = "p") -> GridFunction:
    """
    Coerce `p` to a float vector and verify it belongs to `grid`.

    Raises:
        GridMismatchError: wrong shape.
        NonFiniteValuesError: NaN or Inf entries.
    """
    arr = np.asarray(p, dtype=np.float64)
    if arr.shape != (grid.n,):
        raise GridMismatchError(
            f"{name} has shape {arr.shape}, expected ({grid.n},)"
        )
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValuesError(f"{name} contains non-finite values")
    return arr


def flux_divergence_bands(
    grid: Grid, a
) -> tuple[GridFunction, GridFunction, GridFunction]:
    """
    Tridiagonal stencil of p -> (a p_x)_x as (lower, diag, upper).

    Row i reads lower[i]*p[i-1] + diag[i]*p[i] + upper[i]*p[i+1];
    lower[0] and upper[-1] are zero. Face coefficients are arithmetic
    means of neighbouring node values.
    """
    a = check_grid_function(grid, a, "a")
    h2 = grid.h * grid.h
    faces = 0.5 * (a[:-1] + a[1:]) / h2

    lower = np.zeros(grid.n)
    upper = np.zeros(grid.n)
    upper[:-1] = faces
    lower[1:] = faces
    # half cells at the ends: zero outer flux over a cell of width h/2
    upper[0] *= 2.0
    lower[-1] *= 2.0
    diag = -(lower + upper)
    return lower, diag, upper


def apply_bands(
    bands: tuple[GridFunction, GridFunction, GridFunction], p: GridFunction
) -> GridFunction:
    lower, diag, upper = bands
    out = diag * p
    out[1:] += lower[1:] * p[:-1]
    out[:-1] += upper[:-1] * p[1:]
    return out


def flux_divergence(grid: Grid, a, p) -> GridFunction:
    """
    Conservative second-order discretisation of (a p_x)_x.

    The trapezoid-weighted sum of the result telescopes to zero.

    Raises:
        GridMismatchError: if `a` or `p` is not on `grid`.
    """
    p = check_grid_function(grid, p)
    return apply_bands(flux_divergence_bands(grid, a), p)


def laplacian(grid: Grid, p) -> GridFunction:
    """Neumann Laplacian Delta_h, i.e. flux_divergence with a == 1."""
    return flux_divergence(grid, np.ones(grid.n), p)


def laplacian_matrix(grid: Grid) -> NDArray[np.float64]:
    """Dense matrix of Delta_h."""
    lower, diag, upper = flux_divergence_bands(grid, np.ones(grid.n))
    return np.diag(diag) + np.diag(lower[1:], -1) + np.diag(upper[:-1], 1)


def first_difference(grid: Grid, p) -> GridFunction:
    """Centred first difference; one-sided second order at the ends."""
    p = check_grid_function(grid, p)
    h = grid.h
    out = np.empty_like(p)
    out[1:-1] = (p[2:] - p[:-2]) / (2.0 * h)
    out[0] = (-3.0 * p[0] + 4.0 * p[1] - p[2]) / (2.0 * h)
    out[-1] = (3.0 * p[-1] - 4.0 * p[-2] + p[-3]) / (2.0 * h)
    return out


def face_difference(grid: Grid, p) -> GridFunction:
    """(p[i+1] - p[i]) / h on the n-1 cell faces."""
    p = check_grid_function(grid, p)
    return np.diff(p) / grid.h


def second_difference(grid: Grid, p) -> GridFunction:
    """Centred second difference; one-sided second order at the ends."""
    p = check_grid_function(grid, p)
    h2 = grid.h**2
    out = np.empty_like(p)
    out[1:-1] = (p[2:] - 2.0 * p[1:-1] + p[:-2]) / h2
    out[0] = (2.0 * p[0] - 5.0 * p[1] + 4.0 * p[2] - p[3]) / h2
    out[-1] = (2.0 * p[-1] - 5.0 * p[-2] + 4.0 * p[-3] - p[-4]) / h2
    return out


_THIRD_FORWARD = np.array([-2.5, 9.0, -12.0, 7.0, -1.5])
_FOURTH_FORWARD = np.array([3.0, -14.0, 26.0, -24.0, 11.0, -2.0])


def third_difference(grid: Grid, p) -> GridFunction:
    """
    Centred third difference in the interior.

    The two outermost nodes at each end use one-sided stencils; the
    result there is only first-order accurate for generic data.
    """
    p = check_grid_function(grid, p)
    h3 = grid.h**3
    out = np.empty_like(p)
    out[2:-2] = (p[4:] - 2.0 * p[3:-1] + 2.0 * p[1:-3] - p[:-4]) / (2.0 * h3)
    m = len(_THIRD_FORWARD)
    for i in (0, 1):
        out[i] = _THIRD_FORWARD @ p[i : i + m] / h3
    # odd derivative: mirrored stencil changes sign
    for i in (grid.n - 2, grid.n - 1):
        out[i] = -(_THIRD_FORWARD @ p[i - m + 1 : i + 1][::-1]) / h3
    return out


def fourth_difference(grid: Grid, p) -> GridFunction:
    """Centred five-point fourth difference, one-sided near the ends."""
    p = check_grid_function(grid, p)
    h4 = grid.h**4
    out = np.empty_like(p)
    out[2:-2] = (
        p[:-4] - 4.0 * p[1:-3] + 6.0 * p[2:-2] - 4.0 * p[3:-1] + p[4:]
    ) / h4
    m = len(_FOURTH_FORWARD)
    for i in (0, 1):
        out[i] = _FOURTH_FORWARD @ p[i : i + m] / h4
    for i in (grid.n - 2, grid.n - 1):
        out[i] = _FOURTH_FORWARD @ p[i - m + 1 : i + 1][::-1] / h4
    return out


def integrate(grid: Grid, p) -> float:
    """Trapezoidal quadrature over [0, L]."""
    p = check_grid_function(grid, p)
    return float(grid.weights @ p)


def mean(grid: Grid, p) -> float:
    return integrate(grid, p) / grid.length


def sobolev_norms(grid: Grid, p) -> SobolevNorms:
    """
    L2, Linf, H1/H2 seminorms and the W^{1,2}, W^{2,2}, W^{2,inf} norms.

    The H1 seminorm uses face differences, so that
    h1_seminorm**2 == integrate(-p * laplacian(p)) holds exactly.
    """
    p = check_grid_function(grid, p)
    l2_sq = integrate(grid, p * p)
    h1_sq = float(grid.h * np.sum(face_difference(grid, p) ** 2))
    pxx = second_difference(grid, p)
    h2_sq = integrate(grid, pxx * pxx)
    w2inf = max(
        float(np.max(np.abs(p))),
        float(np.max(np.abs(first_difference(grid, p)))),
        float(np.max(np.abs(pxx))),
    )
    return SobolevNorms(
        l2=float(np.sqrt(l2_sq)),
        linf=float(np.max(np.abs(p))),
        h1_seminorm=float(np.sqrt(h1_sq)),
        h2_seminorm=float(np.sqrt(h2_sq)),
        w2inf=w2inf,
        w12=float(np.sqrt(l2_sq + h1_sq)),
        w22=float(np.sqrt(l2_sq + h1_sq + h2_sq)),
    )


def w12_norm(grid: Grid, p) -> float:
    p = check_grid_function(grid, p)
    h1_sq = grid.h * np.sum(face_difference(grid, p) ** 2)
    return float(np.sqrt(integrate(grid, p * p) + h1_sq))


def laplacian_eigenvalues(grid: Grid) -> GridFunction:
    """lambda_k >= 0 such that Delta_h phi_k = -lambda_k phi_k."""
    k = np.arange(grid.n)
    return (4.0 / grid.h**2) * np.sin(k * np.pi / (2.0 * (grid.n - 1))) ** 2


def cosine_transform(p, axis: int = -1) -> NDArray[np.float64]:
    return fft.dct(np.asarray(p, dtype=np.float64), type=1, axis=axis)


def inverse_cosine_transform(c, axis: int = -1) -> NDArray[np.float64]:
    return fft.idct(np.asarray(c, dtype=np.float64), type=1, axis=axis)


def heat_semigroup_apply(grid: Grid, kappa: float, t: float, p) -> GridFunction:
    """
    Apply exp(t * kappa * Delta_h) exactly through the DCT-I basis.

    Raises:
        GridError: if `kappa` or `t` is negative.
    """
    if kappa < 0 or t < 0:
        raise GridError(f"kappa={kappa} and t={t} must be non-negative")
    p = check_grid_function(grid, p)
    if kappa == 0 or t == 0:
        return p.copy()
    symbols = np.exp(-t * kappa * laplacian_eigenvalues(grid))
    return inverse_cosine_transform(symbols * cosine_transform(p))


def restrict(p, factor: int) -> GridFunction:
    """Injection onto the grid sharing every `factor`-th node."""
    arr = np.asarray(p, dtype=np.float64)
    if factor < 1 or (arr.shape[-1] - 1) % factor:
        raise GridMismatchError(
            f"length {arr.shape[-1]} cannot be restricted by factor {factor}"
        )
    return arr[..., ::factor].copy()
