import logging
from typing import Callable, Optional, Union

import numpy as np
from scipy.interpolate import CubicSpline

from shared.models.material import CoefficientSet, ValidationReport, ZenerMaterial
from shared.models.run_config import InitialFieldSpec
from shared.models.state import InitialData
from shared.numerics.grid import (
    Grid,
    first_difference,
    laplacian,
    mean,
)
from shared.numerics.laws import ScalarLaw

logger = logging.getLogger(__name__)

FieldSource = Union[InitialFieldSpec, Callable[[np.ndarray], np.ndarray], float, None]


class ModelError(Exception):
    """Base class for ModelService errors."""


class InvalidMaterialError(ModelError):
    """Raised when Zener parameters violate a physical invariant."""


class NegativeTemperatureError(ModelError):
    """Raised when the initial temperature is negative at some node."""


class IncompatibleBoundaryError(ModelError):
    """Raised when initial data cannot be made Neumann compatible."""


def _relative_gap(exact, approx) -> float:
    scale = np.maximum(np.maximum(np.abs(exact), np.abs(approx)), 1.0)
    return float(np.max(np.abs(exact - approx) / scale))


class ModelService:
    """
    Material parametrisation, coefficient validation and initial data.

    The service is stateless apart from its sampling settings, so one
    instance can be shared by parallel experiment workers.
    """

    def __init__(self, validation_samples: int = 1000, fd_step: float = 1e-5):
        if validation_samples < 1000:
            raise ValueError("validation needs at least 1000 samples")
        self.validation_samples = validation_samples
        self.fd_step = fd_step
        logger.debug(
            "ModelService initialized (samples=%d, fd_step=%g)",
            validation_samples,
            fd_step,
        )

    def zener_to_coefficients(self, m: ZenerMaterial) -> CoefficientSet:
        """
        Map Zener parameters onto the coefficients of the MGT/heat system.

        alpha = 1/tau_rel, gamma = c/rho, ghat = c/(rho tau_rel),
        heating = (tau_ret - tau_rel) c, diffusivity unchanged.
        tau_rel == tau_ret is accepted and yields a system without heating.

        Raises:
            InvalidMaterialError: listing every violated invariant.
        """
        problems = []
        for name in ("tau_rel", "tau_ret", "density", "diffusivity", "theta_max"):
            value = getattr(m, name)
            if not np.isfinite(value) or value <= 0:
                problems.append(f"{name} must be positive (got {value})")
        if not problems and m.tau_rel > m.tau_ret:
            problems.append("tau_rel < tau_ret required")
        if not problems:
            theta = np.linspace(0.0, m.theta_max, self.validation_samples)
            c_min = float(np.min(m.stiffness.value(theta)))
            if not c_min > 0:
                problems.append(
                    f"stiffness must be positive on [0, {m.theta_max}] "
                    f"(min {c_min:g})"
                )
        if problems:
            logger.warning("Rejected material: %s", "; ".join(problems))
            raise InvalidMaterialError("; ".join(problems))

        coefficients = CoefficientSet(
            alpha=1.0 / m.tau_rel,
            diffusivity=m.diffusivity,
            gamma=m.stiffness.scaled(1.0 / m.density),
            ghat=m.stiffness.scaled(1.0 / (m.density * m.tau_rel)),
            heating=m.stiffness.scaled(m.tau_ret - m.tau_rel),
        )
        logger.info(
            "Zener material mapped: alpha=%g diffusivity=%g heating factor=%g",
            coefficients.alpha,
            coefficients.diffusivity,
            m.tau_ret - m.tau_rel,
        )
        return coefficients

    def validate_coefficients(
        self, c: CoefficientSet, theta_max: float
    ) -> ValidationReport:
        """
        Sample the coefficients on [0, theta_max].

        The report passes iff min gamma > 0, min ghat > 0 and min heating >= 0.
        Derivative consistency is measured but does not decide the outcome.
        """
        if theta_max <= 0:
            raise ValueError(f"theta_max must be positive (got {theta_max})")
        theta = np.linspace(0.0, theta_max, self.validation_samples)

        def minimum(law: ScalarLaw) -> tuple[float, float]:
            values = law.value(theta)
            i = int(np.argmin(values))
            return float(values[i]), float(theta[i])

        min_gamma, at_gamma = minimum(c.gamma)
        min_ghat, at_ghat = minimum(c.ghat)
        min_heating, at_heating = minimum(c.heating)

        errors = {
            "gamma.d1": self.derivative_error(c.gamma.value, c.gamma.d1, theta),
            "gamma.d2": self.derivative_error(c.gamma.d1, c.gamma.d2, theta),
            "ghat.d1": self.derivative_error(c.ghat.value, c.ghat.d1, theta),
            "ghat.d2": self.derivative_error(c.ghat.d1, c.ghat.d2, theta),
            "heating.d1": self.derivative_error(
                c.heating.value, c.heating.d1, theta
            ),
        }

        failures = []
        if not min_gamma > 0:
            failures.append(f"gamma={min_gamma:g} at theta={at_gamma:g}")
        if not min_ghat > 0:
            failures.append(f"ghat={min_ghat:g} at theta={at_ghat:g}")
        if not min_heating >= 0:
            failures.append(f"heating={min_heating:g} at theta={at_heating:g}")
        if failures:
            logger.warning("Coefficient validation failed: %s", ", ".join(failures))

        return ValidationReport(
            theta_max=theta_max,
            samples=len(theta),
            min_gamma=min_gamma,
            argmin_gamma=at_gamma,
            min_ghat=min_ghat,
            argmin_ghat=at_ghat,
            min_heating=min_heating,
            argmin_heating=at_heating,
            derivative_errors=errors,
            failures=failures,
        )

    def derivative_error(
        self,
        f: Callable[[np.ndarray], np.ndarray],
        df: Callable[[np.ndarray], np.ndarray],
        theta: np.ndarray,
    ) -> float:
        """Worst relative gap between df and a centred difference of f."""
        step = self.fd_step * np.maximum(1.0, np.abs(theta))
        fd = (f(theta + step) - f(theta - step)) / (2.0 * step)
        return _relative_gap(df(theta), fd)

    def make_initial_data(
        self,
        grid: Grid,
        u0: FieldSource = None,
        u0t: FieldSource = None,
        u0tt: FieldSource = None,
        theta0: FieldSource = None,
        remove_means: bool = True,
        project_boundary: bool = True,
    ) -> InitialData:
        """
        Evaluate initial profiles at the grid nodes.

        Each profile is an InitialFieldSpec, a callable of the node array, a
        number or None (zero). The steps are:

        1. Check that u0, u0t and theta0 are flat at both ends and, with
           `project_boundary`, replace their endpoint values so that the
           one-sided second-order endpoint differences vanish.
        2. Subtract the means of u0, u0t and u0tt if `remove_means` is set.
        3. Check theta0 >= 0.

        Raises:
            IncompatibleBoundaryError: the endpoint correction exceeds
                10 h^2 max(1, ||p||_inf), i.e. the profile has a genuine
                nonzero slope at the boundary.
            NegativeTemperatureError: theta0 < 0 at some node.
        """
        x = grid.nodes
        fields = {
            name: self._evaluate(grid, source, x, name)
            for name, source in (
                ("u0", u0),
                ("u0t", u0t),
                ("u0tt", u0tt),
                ("theta0", theta0),
            )
        }

        for name in ("u0", "u0t", "theta0"):
            projected = self._project_neumann(grid, fields[name], name)
            if project_boundary:
                fields[name] = projected

        if remove_means:
            for name in ("u0", "u0t", "u0tt"):
                fields[name] = fields[name] - mean(grid, fields[name])

        theta_min = float(np.min(fields["theta0"]))
        if theta_min < 0:
            i = int(np.argmin(fields["theta0"]))
            raise NegativeTemperatureError(
                f"theta0={theta_min:g} < 0 at x={x[i]:g}"
            )

        logger.debug(
            "Initial data ready on n=%d (remove_means=%s)", grid.n, remove_means
        )
        return InitialData(
            grid=grid,
            u0=fields["u0"],
            u0t=fields["u0t"],
            u0tt=fields["u0tt"],
            theta0=fields["theta0"],
            means_removed=remove_means,
        )

    def estimate_theta_bound(
        self, init: InitialData, c: CoefficientSet, margin: float = 1.0
    ) -> float:
        """
        M = 8 (||theta0||_inf + ||theta0_t||_inf) + margin, where
        theta0_t = D Lap_h theta0 + heating(theta0) (v0_x)^2.
        """
        grid = init.grid
        v0x = first_difference(grid, init.u0t)
        v0x[0] = v0x[-1] = 0.0
        theta_t = (
            c.diffusivity * laplacian(grid, init.theta0)
            + c.heating.clamped(init.theta0) * v0x**2
        )
        bound = float(np.max(np.abs(init.theta0))) + float(np.max(np.abs(theta_t)))
        return 8.0 * bound + margin

    @staticmethod
    def _evaluate(grid: Grid, source: FieldSource, x: np.ndarray, name: str):
        if source is None:
            return np.zeros(grid.n)
        if isinstance(source, (int, float)):
            return np.full(grid.n, float(source))
        if isinstance(source, InitialFieldSpec):
            return _evaluate_spec(grid, source, x)
        values = np.asarray(source(x), dtype=np.float64)
        if values.shape == ():
            values = np.full(grid.n, float(values))
        if values.shape != (grid.n,) or not np.all(np.isfinite(values)):
            raise ModelError(f"{name} did not evaluate to {grid.n} finite values")
        return values

    @staticmethod
    def _project_neumann(grid: Grid, p: np.ndarray, name: str) -> np.ndarray:
        q = p.copy()
        q[0] = (4.0 * p[1] - p[2]) / 3.0
        q[-1] = (4.0 * p[-2] - p[-3]) / 3.0
        allowed = 10.0 * grid.h**2 * max(1.0, float(np.max(np.abs(p))))
        correction = max(abs(q[0] - p[0]), abs(q[-1] - p[-1]))
        if correction > allowed:
            raise IncompatibleBoundaryError(
                f"{name} needs an endpoint correction of {correction:g} "
                f"(allowed {allowed:g}); its boundary slope is not zero"
            )
        return q


def _evaluate_spec(
    grid: Grid, spec: InitialFieldSpec, x: np.ndarray
) -> np.ndarray:
    match spec.kind:
        case "constant":
            return np.full(grid.n, spec.value)
        case "cosine":
            k = np.arange(len(spec.coefficients))
            modes = np.cos(np.outer(x, k) * np.pi / grid.length)
            return modes @ np.asarray(spec.coefficients, dtype=np.float64)
        case "tabulated":
            spline = CubicSpline(spec.abscissae, spec.values)
            return np.asarray(spline(x), dtype=np.float64)
    raise ModelError(f"unknown profile kind {spec.kind!r}")


def material_from_config(cfg) -> ZenerMaterial:
    """ZenerMaterial from the `material` section of a RunConfig."""
    return ZenerMaterial(
        tau_rel=cfg.tau_rel,
        tau_ret=cfg.tau_ret,
        stiffness=cfg.stiffness.build(),
        density=cfg.density,
        diffusivity=cfg.diffusivity,
        theta_max=cfg.theta_max,
    )


def coefficients_from_config(
    cfg, model: Optional[ModelService] = None
) -> CoefficientSet:
    """CoefficientSet from either material form of a RunConfig."""
    if cfg.kind == "zener":
        return (model or ModelService()).zener_to_coefficients(
            material_from_config(cfg)
        )
    return CoefficientSet(
        alpha=cfg.alpha,
        diffusivity=cfg.diffusivity,
        gamma=cfg.gamma.build(),
        ghat=cfg.ghat.build(),
        heating=cfg.heating.build(),
    )
