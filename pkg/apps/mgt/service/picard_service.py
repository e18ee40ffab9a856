"""
Duhamel fixed-point construction for the regularized system (eps > 0).

On [0, T] the maps

    Phi1 = S_eps(t) w0 + int S_eps(t-s) [d_x(gamma v_x + ghat u_x) - alpha w] ds
    Phi2 = S_eps(t) v0 + int S_eps(t-s) w ds
    Phi3 = S_eps(t) u0 + int S_eps(t-s) v ds
    Phi4 = S_D(t) theta0 + int S_D(t-s) heating(theta) v_x^2 ds

are iterated from the constant-in-time extension of the initial data. S is
the discrete Neumann heat semigroup; time integrals are evaluated mode by
mode with the trapezoidal rule.
"""

import logging
import math
from typing import Callable, Optional

import numpy as np
from scipy.optimize import bisect, brentq, minimize_scalar

from apps.mgt.service.dynamics_service import NonFiniteStateError
from shared.models.material import CoefficientSet
from shared.models.picard import (
    PicardConfig,
    PicardIterate,
    PicardResult,
    SemigroupConstants,
    SmallnessRoots,
)
from shared.models.state import InitialData
from shared.numerics.grid import (
    Grid,
    GridMismatchError,
    cosine_transform,
    first_difference,
    flux_divergence,
    integrate,
    inverse_cosine_transform,
    laplacian_eigenvalues,
    w12_norm,
)

logger = logging.getLogger(__name__)

T_MIN = 1e-8
T_SAMPLES = 64
CONSECUTIVE_EXPANSIONS = 3


class PicardError(Exception):
    """Base class for PicardService errors."""


class NoContractionError(PicardError):
    """Raised when the fixed-point map fails to contract repeatedly."""

    def __init__(self, message: str, result: PicardResult):
        super().__init__(message)
        self.result = result


class MaxIterExceededError(PicardError):
    """Raised when the tolerance is not reached within max_iter iterations."""

    def __init__(self, message: str, result: PicardResult):
        super().__init__(message)
        self.result = result


def _linf(grid: Grid, p: np.ndarray) -> float:
    return float(np.max(np.abs(p)))


def sup_weighted_norm(
    grid: Grid,
    kappa: float,
    phi: np.ndarray,
    power: float,
    norm: Callable[[Grid, np.ndarray], float],
) -> float:
    """
    max over t in (0, 1] of t^power * norm(e^{kappa t Lap_h} phi).

    Log-spaced samples locate the peak; a bounded Brent search in log t
    polishes it.
    """
    coefficients = cosine_transform(phi)
    lam = laplacian_eigenvalues(grid)

    def weighted(log_t: float) -> float:
        t = math.exp(log_t)
        p = inverse_cosine_transform(np.exp(-kappa * t * lam) * coefficients)
        return t**power * norm(grid, p)

    log_ts = np.linspace(math.log(T_MIN), 0.0, T_SAMPLES)
    values = np.array([weighted(s) for s in log_ts])
    i = int(np.argmax(values))
    best = float(values[i])
    lo, hi = log_ts[max(i - 1, 0)], log_ts[min(i + 1, T_SAMPLES - 1)]
    res = minimize_scalar(
        lambda s: -weighted(s), bounds=(lo, hi), method="bounded"
    )
    return max(best, -float(res.fun))


def _coefficient_sups(c: CoefficientSet, R: float) -> tuple[float, float]:
    """sup|gamma| + sup|ghat| and sup(heating)^+ on [-R, R]."""
    theta = np.linspace(-R, R, 2049)
    G = float(
        np.max(np.abs(c.gamma.clamped(theta))) + np.max(np.abs(c.ghat.clamped(theta)))
    )
    return G, max(0.0, float(np.max(c.heating.clamped(theta))))


def smallness_roots(
    R: float,
    sg: SemigroupConstants,
    c: CoefficientSet,
    alpha: Optional[float] = None,
) -> SmallnessRoots:
    """
    Horizon granted by each smallness condition on its own:

        flux:         4 c3 G R T^(1/4) + alpha R T <= 1
        velocity:     2 c1 R T^(1/2) <= 1
        displacement: R T <= 1
        heating:      2 c2 sup(heating) R^2 T^(1/2) <= 1

    with G = sup|gamma| + sup|ghat| on [-R, R] (constant continuation below
    zero). A condition that never binds yields inf.
    """
    alpha = c.alpha if alpha is None else alpha
    G, heating_sup = _coefficient_sups(c, R)

    flux_only = math.inf if G == 0 else (1.0 / (4.0 * sg.c3 * G * R)) ** 4
    if alpha > 0:
        upper = min(flux_only, 1.0 / (alpha * R))
        flux = brentq(
            lambda T: 4.0 * sg.c3 * G * R * T**0.25 + alpha * R * T - 1.0,
            0.0,
            upper,
            xtol=1e-300,
            rtol=1e-14,
        )
    else:
        flux = flux_only

    return SmallnessRoots(
        flux=float(flux),
        velocity=(1.0 / (2.0 * sg.c1 * R)) ** 2,
        displacement=1.0 / R,
        heating=(
            math.inf
            if heating_sup == 0
            else (1.0 / (2.0 * sg.c2 * heating_sup * R**2)) ** 2
        ),
    )


def compute_T0(
    R: float,
    sg: SemigroupConstants,
    c: CoefficientSet,
    alpha: Optional[float] = None,
) -> float:
    """
    Largest T0 in (0, 1] satisfying every smallness condition, bisected in
    log T to 1e-12.
    """
    if R < 1:
        raise ValueError(f"R must be at least 1 (got {R})")
    roots = smallness_roots(R, sg, c, alpha)
    alpha = c.alpha if alpha is None else alpha
    G, heating_sup = _coefficient_sups(c, R)

    def excess(log_t: float) -> float:
        T = math.exp(log_t)
        return (
            max(
                4.0 * sg.c3 * G * R * T**0.25 + alpha * R * T,
                2.0 * sg.c1 * R * math.sqrt(T),
                R * T,
                2.0 * sg.c2 * heating_sup * R**2 * math.sqrt(T),
            )
            - 1.0
        )

    if excess(0.0) <= 0:
        return 1.0
    finite = [
        r
        for r in (roots.flux, roots.velocity, roots.displacement, roots.heating)
        if math.isfinite(r)
    ]
    lo = math.log(0.5 * min(finite))
    T0 = math.exp(bisect(excess, lo, 0.0, xtol=1e-12))
    logger.debug("T0=%g (binding condition: %s)", T0, roots.binding())
    return T0


class PicardService:
    """
    Semigroup constants, smallness horizon and the fixed-point iteration.
    """

    def __init__(
        self,
        grid: Grid,
        coefficients: CoefficientSet,
        rng: Optional[np.random.Generator] = None,
        n_trials: int = 8,
    ):
        self.grid = grid
        self.c = coefficients
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.n_trials = n_trials
        logger.debug("PicardService initialized (n=%d)", grid.n)

    def estimate_semigroup_constants(
        self, eps: float, D: Optional[float] = None
    ) -> SemigroupConstants:
        """
        Empirical c1, c2, c3 for this grid.

        c1 and c3 use the viscosity eps, c2 the diffusivity D. Trial
        functions are cosine modes and random fields (c1), point masses
        (c2), and sine modes and windowed random fields vanishing at both
        ends (c3).
        """
        if eps <= 0:
            raise ValueError(f"eps must be positive (got {eps})")
        D = self.c.diffusivity if D is None else D
        grid = self.grid
        x, L = grid.nodes, grid.length
        lam = laplacian_eigenvalues(grid)

        # c1: cosine modes in closed form, ||phi_k||_W12^2 = (1 + lam_k) ||phi_k||^2
        c1 = 0.0
        for k in range(grid.n):
            phi = np.cos(k * np.pi * x / L)
            l2 = math.sqrt(integrate(grid, phi * phi))
            c1 = max(c1, _sup_sqrt_decay(eps * lam[k]) * math.sqrt(1.0 + lam[k]) * l2)
        for _ in range(self.n_trials):
            phi = self.rng.uniform(-1.0, 1.0, grid.n)
            phi /= np.max(np.abs(phi))
            c1 = max(c1, sup_weighted_norm(grid, eps, phi, 0.5, w12_norm))

        c2 = self._point_mass_constant(D)

        c3 = 0.0
        window = np.sin(np.pi * x / L)
        trials = [
            np.sin(k * np.pi * x / L)
            for k in np.unique(np.geomspace(1, grid.n - 2, 24).astype(int))
        ]
        trials += [
            window * self.rng.standard_normal(grid.n) for _ in range(self.n_trials)
        ]
        for phi in trials:
            l2 = math.sqrt(integrate(grid, phi * phi))
            if l2 == 0:
                continue
            dphi = first_difference(grid, phi)
            c3 = max(c3, sup_weighted_norm(grid, eps, dphi, 0.75, _linf) / l2)

        logger.info("Semigroup constants: c1=%g c2=%g c3=%g", c1, c2, c3)
        return SemigroupConstants(c1=c1, c2=c2, c3=c3)

    def _point_mass_constant(self, kappa: float) -> float:
        """sup_t t^(1/2) ||e^{kappa t Lap_h}||_{L1 -> Linf} over t in (0, 1]."""
        grid = self.grid
        lam = laplacian_eigenvalues(grid)
        basis = cosine_transform(np.eye(grid.n), axis=0)
        weights = grid.weights

        def weighted(log_t: float) -> float:
            t = math.exp(log_t)
            kernel = inverse_cosine_transform(
                np.exp(-kappa * t * lam)[:, None] * basis, axis=0
            )
            return math.sqrt(t) * float(np.max(np.abs(kernel) / weights[None, :]))

        log_ts = np.linspace(math.log(T_MIN), 0.0, T_SAMPLES)
        values = np.array([weighted(s) for s in log_ts])
        i = int(np.argmax(values))
        res = minimize_scalar(
            lambda s: -weighted(s),
            bounds=(log_ts[max(i - 1, 0)], log_ts[min(i + 1, T_SAMPLES - 1)]),
            method="bounded",
        )
        return max(float(values[i]), -float(res.fun))

    def configure(
        self,
        init: InitialData,
        eps: float,
        horizon_fraction: float = 0.5,
        n_time: int = 65,
        max_iter: int = 50,
        tol: float = 1e-12,
        sg: Optional[SemigroupConstants] = None,
    ) -> tuple[PicardConfig, SemigroupConstants]:
        """
        R = ||initial data||_X0 + 1, T0 from the smallness conditions and
        T = horizon_fraction * T0.
        """
        sg = sg or self.estimate_semigroup_constants(eps)
        R = self.x0_norm(self._constant_extension(init, np.zeros(1))) + 1.0
        T0 = compute_T0(R, sg, self.c)
        cfg = PicardConfig(
            eps=eps,
            R=R,
            T0=T0,
            T=horizon_fraction * T0,
            n_time=n_time,
            max_iter=max_iter,
            tol=tol,
        )
        logger.info("Picard horizon: R=%g T0=%g T=%g", R, T0, cfg.T)
        return cfg, sg

    def duhamel_map(
        self, iterate: PicardIterate, init: InitialData, eps: float
    ) -> PicardIterate:
        """
        One application of (Phi1, Phi2, Phi3, Phi4) at the iterate's times.

        Raises:
            GridMismatchError: iterate or initial data live on another grid.
            NonFiniteStateError: the image contains NaN or inf.
        """
        grid, c = self.grid, self.c
        times = np.asarray(iterate.times, dtype=np.float64)
        shape = (len(times), grid.n)
        for name in ("w", "v", "u", "theta"):
            if np.shape(getattr(iterate, name)) != shape:
                raise GridMismatchError(
                    f"iterate field {name} has shape "
                    f"{np.shape(getattr(iterate, name))}, expected {shape}"
                )
        if init.grid != grid:
            raise GridMismatchError("initial data live on a different grid")

        theta = iterate.theta
        flux = np.array(
            [
                flux_divergence(grid, c.gamma.clamped(th), v)
                + flux_divergence(grid, c.ghat.clamped(th), u)
                for th, v, u in zip(theta, iterate.v, iterate.u)
            ]
        )
        vx = np.array([first_difference(grid, v) for v in iterate.v])
        vx[:, 0] = vx[:, -1] = 0.0
        heating = c.heating.clamped(theta) * vx**2

        w_new = self._duhamel(times, eps, init.u0tt, flux - c.alpha * iterate.w)
        v_new = self._duhamel(times, eps, init.u0t, iterate.w)
        u_new = self._duhamel(times, eps, init.u0, iterate.v)
        theta_new = self._duhamel(times, c.diffusivity, init.theta0, heating)

        image = PicardIterate(
            times=times, w=w_new, v=v_new, u=u_new, theta=theta_new
        )
        for name in ("w", "v", "u", "theta"):
            if not np.all(np.isfinite(getattr(image, name))):
                raise NonFiniteStateError(f"Duhamel image of {name} is not finite")
        return image

    def _duhamel(
        self, times: np.ndarray, kappa: float, p0: np.ndarray, forcing: np.ndarray
    ) -> np.ndarray:
        """S(t) p0 + int_0^t S(t - s) forcing(s) ds at every sample time."""
        lam = laplacian_eigenvalues(self.grid)
        p0_hat = cosine_transform(p0)
        f_hat = cosine_transform(forcing, axis=1)

        out = np.empty_like(f_hat)
        acc = np.zeros_like(p0_hat)
        out[0] = p0_hat
        for j in range(1, len(times)):
            dt = times[j] - times[j - 1]
            decay = np.exp(-kappa * lam * dt)
            acc = decay * acc + 0.5 * dt * (decay * f_hat[j - 1] + f_hat[j])
            out[j] = np.exp(-kappa * lam * times[j]) * p0_hat + acc
        return inverse_cosine_transform(out, axis=1)

    def x0_norm(self, q: PicardIterate) -> float:
        """sup_t max(||w||_inf, ||v||_W12, ||u||_W12, ||theta||_inf)."""
        grid = self.grid
        return max(
            max(
                float(np.max(np.abs(w))),
                w12_norm(grid, v),
                w12_norm(grid, u),
                float(np.max(np.abs(th))),
            )
            for w, v, u, th in zip(q.w, q.v, q.u, q.theta)
        )

    def x0_distance(self, a: PicardIterate, b: PicardIterate) -> float:
        return self.x0_norm(
            PicardIterate(
                times=a.times,
                w=a.w - b.w,
                v=a.v - b.v,
                u=a.u - b.u,
                theta=a.theta - b.theta,
            )
        )

    def picard_solve(self, init: InitialData, cfg: PicardConfig) -> PicardResult:
        """
        Iterate the Duhamel maps until successive iterates are tol-close.

        Raises:
            NoContractionError: three consecutive ratios >= 1.
            MaxIterExceededError: tol not reached within max_iter.
        """
        times = np.linspace(0.0, cfg.T, cfg.n_time)
        current = self._constant_extension(init, times)
        differences: list[float] = []
        ratios: list[float] = []
        ball: list[float] = []
        expansions = 0

        def result(converged: bool) -> PicardResult:
            return PicardResult(
                iterate=current,
                differences=differences,
                ratios=ratios,
                ball_norms=ball,
                converged=converged,
            )

        logger.info(
            "Picard solve started (T=%g, n_time=%d, R=%g)", cfg.T, cfg.n_time, cfg.R
        )
        for k in range(cfg.max_iter):
            image = self.duhamel_map(current, init, cfg.eps)
            diff = self.x0_distance(image, current)
            current = image
            differences.append(diff)
            ball.append(self.x0_norm(image))
            if len(differences) > 1:
                ratios.append(diff / differences[-2])
                expansions = expansions + 1 if ratios[-1] >= 1 else 0
            logger.debug("Picard iteration %d: diff=%g", k + 1, diff)
            if diff <= cfg.tol:
                logger.info("Picard solve converged after %d iterations", k + 1)
                return result(True)
            if expansions >= CONSECUTIVE_EXPANSIONS:
                raise NoContractionError(
                    f"ratio >= 1 for {expansions} consecutive iterations "
                    f"(last {ratios[-1]:g})",
                    result(False),
                )
        raise MaxIterExceededError(
            f"no convergence in {cfg.max_iter} iterations "
            f"(last difference {differences[-1]:g})",
            result(False),
        )

    def _constant_extension(
        self, init: InitialData, times: np.ndarray
    ) -> PicardIterate:
        m = len(times)

        def tile(p):
            return np.tile(np.asarray(p, dtype=np.float64), (m, 1))

        return PicardIterate(
            times=np.asarray(times, dtype=np.float64),
            w=tile(init.u0tt),
            v=tile(init.u0t),
            u=tile(init.u0),
            theta=tile(init.theta0),
        )


def _sup_sqrt_decay(rate: float) -> float:
    """max over t in (0, 1] of t^(1/2) e^{-rate t}."""
    if rate <= 0.5:
        return math.exp(-rate)
    return math.sqrt(1.0 / (2.0 * math.e * rate))
