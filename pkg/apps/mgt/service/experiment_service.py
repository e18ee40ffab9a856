import dataclasses
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from apps.mgt.service.diagnostics_service import (
    BlowupMonitor,
    DiagnosticsService,
    fit_gronwall_constant,
)
from apps.mgt.service.dynamics_service import (
    BlowupSuspectedError,
    DynamicsService,
    ManufacturedSolution,
    NonFiniteStateError,
)
from apps.mgt.service.model_service import ModelService
from shared.config.config import Config
from shared.models.experiment import (
    BlowupOutcome,
    HarmonicLossReport,
    SweepResult,
    TwinRunResult,
)
from shared.models.material import CoefficientSet, ZenerMaterial
from shared.models.state import (
    EvolutionParams,
    InitialData,
    SourceTerms,
    State,
    Trajectory,
)
from shared.numerics.grid import Grid, integrate, laplacian_eigenvalues, restrict
from shared.numerics.laws import ScalarLaw

logger = logging.getLogger(__name__)

InitFactory = Callable[[Grid], InitialData]

FIELDS = ("u", "v", "w", "theta")
MANUFACTURED_UNDERSHOOT_TOL = 1e-2
FINAL_ONLY = 10**9


class ExperimentError(Exception):
    """Raised for inconsistent experiment requests and failed run checks."""


def fit_order(values: Sequence[float], errors: Sequence[float]):
    """
    Least-squares slope of log(error) against log(value).

    Returns (order, rms residual), or (None, None) with fewer than two
    usable points.
    """
    pairs = [
        (v, e)
        for v, e in zip(values, errors)
        if v > 0 and e > 0 and math.isfinite(e)
    ]
    if len(pairs) < 2:
        return None, None
    x = np.log([p[0] for p in pairs])
    y = np.log([p[1] for p in pairs])
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.sqrt(np.mean((slope * x + intercept - y) ** 2)))
    return float(slope), residual


def modal_reference(
    grid: Grid,
    mode: int,
    c: CoefficientSet,
    amplitudes: tuple[float, float, float],
    times: Sequence[float],
    eps: float = 0.0,
    theta: float = 0.0,
    continuum: bool = False,
) -> np.ndarray:
    """
    Amplitudes (a, b, c) of u, u_t, u_tt along cos(mode pi x / L).

    Integrates a' = b - eps lam a, b' = c - eps lam b,
    c' = -lam (gamma b + ghat a) - alpha c - eps lam c with DOP853; for
    eps = 0 this is a''' + alpha a'' = -lam (gamma a' + ghat a). lam is the
    eigenvalue of the grid Laplacian, or (mode pi / L)^2 when `continuum`.
    Coefficients are frozen at `theta`.
    """
    if continuum:
        lam = (mode * math.pi / grid.length) ** 2
    else:
        lam = float(laplacian_eigenvalues(grid)[mode])
    gamma = float(c.gamma.value(theta))
    ghat = float(c.ghat.value(theta))
    alpha = c.alpha
    matrix = np.array(
        [
            [-eps * lam, 1.0, 0.0],
            [0.0, -eps * lam, 1.0],
            [-lam * ghat, -lam * gamma, -alpha - eps * lam],
        ]
    )
    times = np.asarray(times, dtype=np.float64)
    scale = max(1.0, float(np.max(np.abs(amplitudes))))
    sol = solve_ivp(
        lambda t, y: matrix @ y,
        (0.0, float(times[-1])),
        np.asarray(amplitudes, dtype=np.float64),
        method="DOP853",
        t_eval=times,
        rtol=1e-12,
        atol=1e-14 * scale,
    )
    if not sol.success:
        raise ExperimentError(f"modal reference failed: {sol.message}")
    return sol.y.T


def _field_errors(a: State, b: State, pick=None) -> dict[str, float]:
    pick = pick or (lambda p: p)
    return {
        name: float(np.max(np.abs(getattr(a, name) - pick(getattr(b, name)))))
        for name in FIELDS
    }


def _total(errors: dict[str, float]) -> float:
    finite = [e for e in errors.values() if not math.isnan(e)]
    return max(finite) if finite else float("nan")


def _mode_amplitudes(init: InitialData, mode: int) -> tuple[float, float, float]:
    grid = init.grid
    phi = np.cos(mode * math.pi * grid.nodes / grid.length)
    norm = integrate(grid, phi * phi)
    return tuple(
        integrate(grid, np.asarray(p) * phi) / norm
        for p in (init.u0, init.u0t, init.u0tt)
    )


class ExperimentService:
    """
    Verification campaigns built on the dynamics and diagnostics services.

    Independent runs of a sweep execute on a thread pool; results are
    returned in a fixed order regardless of completion order.
    """

    def __init__(
        self,
        coefficients: CoefficientSet,
        model: Optional[ModelService] = None,
        max_workers: Optional[int] = None,
        blowup_threshold: Optional[float] = None,
        blowup_growth: Optional[float] = None,
    ):
        config = Config()
        self.c = coefficients
        self.model = model or ModelService()
        self.max_workers = max_workers or config.max_workers
        self.blowup_threshold = blowup_threshold or config.blowup_threshold
        self.blowup_growth = blowup_growth or config.blowup_growth
        logger.debug("ExperimentService initialized (workers=%d)", self.max_workers)

    def _map(self, fn, items: Iterable):
        items = list(items)
        with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
            return list(pool.map(fn, items))

    def _run(
        self,
        grid: Grid,
        init: InitialData,
        params: EvolutionParams,
        coefficients: Optional[CoefficientSet] = None,
        src: Optional[SourceTerms] = None,
        monitors=(),
    ) -> Trajectory:
        dynamics = DynamicsService(grid, coefficients or self.c)
        return dynamics.evolve(init, params, src, monitors)

    def eps_sweep(
        self, init: InitialData, eps_list: Sequence[float], params: EvolutionParams
    ) -> SweepResult:
        """
        Sup-in-time max-norm distance of each eps run to the eps = 0 run.

        Results are ordered by decreasing eps; the order is the log-log slope
        of the distance against eps.
        """
        values = sorted({float(e) for e in eps_list}, reverse=True)
        runs = [0.0] + [e for e in values if e > 0]
        trajectories = dict(
            zip(
                runs,
                self._map(
                    lambda e: self._run(
                        init.grid, init, dataclasses.replace(params, eps=e)
                    ),
                    runs,
                ),
            )
        )
        reference = trajectories[0.0]

        field_errors = []
        for e in values:
            traj = trajectories[e]
            per_snapshot = [
                _field_errors(a, b)
                for a, b in zip(traj.snapshots, reference.snapshots)
            ]
            field_errors.append(
                {name: max(p[name] for p in per_snapshot) for name in FIELDS}
            )
        errors = [_total(f) for f in field_errors]
        if any(b >= a for a, b in zip(errors, errors[1:])):
            logger.warning("eps sweep distances not strictly decreasing: %s", errors)
        order, residual = fit_order(values, errors)
        logger.info("eps sweep finished: order=%s", order)
        return SweepResult(
            parameter="eps",
            values=values,
            errors=errors,
            field_errors=field_errors,
            order=order,
            order_residual=residual,
        )

    def grid_refinement(
        self,
        init_factory: InitFactory,
        params: EvolutionParams,
        n_list: Sequence[int],
        reference: str = "finest",
        length: float = 1.0,
        mode: int = 1,
    ) -> SweepResult:
        """
        Errors at t_end on each grid against the finest run (restricted to
        the coarse nodes), the manufactured solution or the continuum modal
        solution; the order is the slope against h.
        """
        n_list = sorted(set(n_list))
        grids = [Grid(length=length, n=n) for n in n_list]
        final_params = dataclasses.replace(params, cadence=FINAL_ONLY)

        if reference == "manufactured":
            final_params = self._manufactured_params(final_params)

            def run(grid: Grid):
                mms = ManufacturedSolution(grid, self.c)
                exact = mms.exact(0.0)
                init = InitialData(
                    grid=grid, u0=exact.u, u0t=exact.v, u0tt=exact.w, theta0=exact.theta
                )
                traj = self._run(grid, init, final_params, src=mms.source_terms())
                return _field_errors(traj.final, mms.exact(traj.final.t))

            field_errors = self._map(run, grids)
            measured = grids
        elif reference == "modal":

            def run(grid: Grid):
                init = init_factory(grid)
                traj = self._run(grid, init, final_params)
                return self._modal_errors(init, traj.final, final_params, mode, True)

            field_errors = self._map(run, grids)
            measured = grids
        elif reference == "finest":
            if len(grids) < 2:
                raise ExperimentError("finest-grid reference needs at least two grids")
            finals = self._map(
                lambda g: self._run(g, init_factory(g), final_params).final, grids
            )
            fine = finals[-1]
            field_errors = []
            for grid, final in zip(grids[:-1], finals[:-1]):
                if (fine.grid.n - 1) % (grid.n - 1):
                    raise ExperimentError(
                        f"n={grid.n} does not share nodes with n={fine.grid.n}"
                    )
                factor = (fine.grid.n - 1) // (grid.n - 1)
                field_errors.append(
                    _field_errors(final, fine, lambda p: restrict(p, factor))
                )
            measured = grids[:-1]
        else:
            raise ExperimentError(f"unknown reference {reference!r}")

        h = [g.h for g in measured]
        errors = [_total(f) for f in field_errors]
        order, residual = fit_order(h, errors)
        logger.info("Grid refinement (%s) finished: order=%s", reference, order)
        return SweepResult(
            parameter="n",
            values=[float(g.n) for g in measured],
            errors=errors,
            field_errors=field_errors,
            order=order,
            order_residual=residual,
        )

    def time_refinement(
        self,
        init: InitialData,
        params: EvolutionParams,
        dt_list: Sequence[float],
        reference: str = "finest",
        mode: int = 1,
    ) -> SweepResult:
        """
        Errors at t_end for each dt against the smallest-dt run, the
        manufactured solution or the discrete modal solution (which
        carries no spatial error); the order is the slope against dt.
        """
        dt_values = sorted({float(d) for d in dt_list}, reverse=True)
        grid = init.grid
        base = dataclasses.replace(params, cadence=FINAL_ONLY)
        src = None
        if reference == "manufactured":
            base = self._manufactured_params(base)
            mms = ManufacturedSolution(grid, self.c)
            exact = mms.exact(0.0)
            init = InitialData(
                grid=grid, u0=exact.u, u0t=exact.v, u0tt=exact.w, theta0=exact.theta
            )
            src = mms.source_terms()

        finals = self._map(
            lambda dt: self._run(
                grid, init, dataclasses.replace(base, dt=dt), src=src
            ).final,
            dt_values,
        )

        if reference == "finest":
            if len(dt_values) < 2:
                raise ExperimentError("finest-dt reference needs at least two steps")
            field_errors = [_field_errors(f, finals[-1]) for f in finals[:-1]]
            measured = dt_values[:-1]
        elif reference == "manufactured":
            field_errors = [_field_errors(f, mms.exact(f.t)) for f in finals]
            measured = dt_values
        elif reference == "modal":
            field_errors = [
                self._modal_errors(init, f, base, mode, False) for f in finals
            ]
            measured = dt_values
        else:
            raise ExperimentError(f"unknown reference {reference!r}")

        errors = [_total(f) for f in field_errors]
        order, residual = fit_order(measured, errors)
        logger.info("Time refinement (%s) finished: order=%s", reference, order)
        return SweepResult(
            parameter="dt",
            values=list(measured),
            errors=errors,
            field_errors=field_errors,
            order=order,
            order_residual=residual,
        )

    def _manufactured_params(self, params: EvolutionParams) -> EvolutionParams:
        if params.eps != 0:
            raise ExperimentError("the manufactured solution is defined for eps = 0")
        return dataclasses.replace(
            params,
            undershoot_tol=max(params.undershoot_tol, MANUFACTURED_UNDERSHOOT_TOL),
        )

    def _modal_errors(
        self,
        init: InitialData,
        final: State,
        params: EvolutionParams,
        mode: int,
        continuum: bool,
    ) -> dict[str, float]:
        """Errors of u, v, w at t_end relative to the sup in time of each amplitude."""
        grid = init.grid
        amplitudes = _mode_amplitudes(init, mode)
        times = np.linspace(0.0, final.t, 201)
        theta_ref = float(np.mean(init.theta0))
        path = modal_reference(
            grid, mode, self.c, amplitudes, times, params.eps, theta_ref, continuum
        )
        phi = np.cos(mode * math.pi * grid.nodes / grid.length)
        errors = {}
        for k, name in enumerate(("u", "v", "w")):
            scale = float(np.max(np.abs(path[:, k])))
            gap = float(np.max(np.abs(getattr(final, name) - path[-1, k] * phi)))
            errors[name] = gap / scale if scale > 0 else gap
        errors["theta"] = float("nan")
        return errors

    def twin_run_uniqueness(
        self,
        init_factory: InitFactory,
        grid: Grid,
        params: EvolutionParams,
        pairing: str = "grids",
        perturbation: float = 0.0,
        theta_margin: float = 1.0,
        b2: float = 1.0,
        start_tol: float = 1e-10,
    ) -> TwinRunResult:
        """
        Difference functional between two runs from the same data.

        pairing "grids" compares n with 2(n-1)+1 nodes, "schemes" the
        semi-implicit and RK4 schemes, "dt" the step dt with dt/2. A nonzero
        `perturbation` adds perturbation * cos(pi x / L) to u0 of the second
        run.

        Raises:
            ExperimentError: unknown pairing, or unperturbed twins whose
                y_diff(0) exceeds `start_tol`.
        """
        init_a = init_factory(grid)
        params_b = params
        grid_b = grid
        if pairing == "grids":
            grid_b = Grid(length=grid.length, n=2 * (grid.n - 1) + 1)
        elif pairing == "schemes":
            other = (
                "explicit_rk4" if params.scheme == "semi_implicit" else "semi_implicit"
            )
            params_b = dataclasses.replace(params, scheme=other)
        elif pairing == "dt":
            params_b = dataclasses.replace(
                params, dt=params.dt / 2.0, cadence=2 * params.cadence
            )
        else:
            raise ExperimentError(f"unknown pairing {pairing!r}")
        init_b = init_a if grid_b is grid else init_factory(grid_b)
        if perturbation:
            bump = perturbation * np.cos(math.pi * grid_b.nodes / grid_b.length)
            init_b = dataclasses.replace(init_b, u0=np.asarray(init_b.u0) + bump)

        traj_a, traj_b = self._map(
            lambda job: self._run(*job),
            [(grid, init_a, params), (grid_b, init_b, params_b)],
        )

        M = self.model.estimate_theta_bound(init_a, self.c, theta_margin)
        thetas = np.concatenate(
            [traj_a.stack("theta").ravel(), traj_b.stack("theta").ravel()]
        )
        observed = (float(np.min(thetas)), float(np.max(thetas)))
        diagnostics = DiagnosticsService(grid, self.c)
        consts = diagnostics.estimate_k_constants(
            max(M, observed[1]), observed_range=observed, b2=b2
        )
        series = diagnostics.difference_functional(traj_a, traj_b, consts)
        if not perturbation and series.values[0] > start_tol:
            raise ExperimentError(
                f"twins from the same data start apart: y_diff(0)="
                f"{series.values[0]:g} > {start_tol:g}"
            )

        result = TwinRunResult(
            pairing=pairing,
            times=series.times.tolist(),
            y_diff=series.values.tolist(),
            y_diff0=float(series.values[0]),
            sup_y_diff=series.sup(),
            gronwall_constant=fit_gronwall_constant(series.times, series.values),
        )
        logger.info(
            "Twin run (%s): y_diff(0)=%g sup=%g C=%g",
            pairing,
            result.y_diff0,
            result.sup_y_diff,
            result.gronwall_constant,
        )
        return result

    def blowup_demo(
        self,
        init: InitialData,
        growth: ScalarLaw,
        amplitude: float,
        params: EvolutionParams,
    ) -> BlowupOutcome:
        """
        Run with gamma = ghat = heating = `growth` and initial velocity
        amplitude * cos(pi x / L), the blow-up monitor armed.

        A non-finite state counts as blow-up at the time it was detected.
        """
        grid = init.grid
        coefficients = CoefficientSet(
            alpha=self.c.alpha,
            diffusivity=self.c.diffusivity,
            gamma=growth,
            ghat=growth,
            heating=growth,
        )
        data = dataclasses.replace(
            init, u0t=amplitude * np.cos(math.pi * grid.nodes / grid.length)
        )
        monitor = BlowupMonitor(
            DiagnosticsService(grid, coefficients),
            threshold=self.blowup_threshold,
            growth=self.blowup_growth,
        )
        try:
            self._run(grid, data, params, coefficients, monitors=[monitor])
        except BlowupSuspectedError as e:
            return BlowupOutcome(
                status="blowup",
                amplitude=amplitude,
                t_end=params.t_end,
                t_star=e.t,
                monitor_value=e.value,
                reason=str(e),
            )
        except NonFiniteStateError as e:
            t_star = e.t
            if t_star is None:
                t_star = monitor.history[-1][0] if monitor.history else 0.0
            return BlowupOutcome(
                status="blowup",
                amplitude=amplitude,
                t_end=params.t_end,
                t_star=t_star,
                monitor_value=monitor.peak,
                reason=f"non-finite state: {e}",
            )
        return BlowupOutcome(
            status="completed",
            amplitude=amplitude,
            t_end=params.t_end,
            monitor_value=monitor.peak,
        )

    def blowup_amplitude_sweep(
        self,
        init: InitialData,
        growth: ScalarLaw,
        amplitudes: Sequence[float],
        params: EvolutionParams,
    ) -> list[BlowupOutcome]:
        """
        Blow-up demos ordered by amplitude.

        Raises:
            ExperimentError: a larger amplitude trips later than a smaller one.
        """
        amplitudes = sorted(set(float(a) for a in amplitudes))
        outcomes = self._map(
            lambda a: self.blowup_demo(init, growth, a, params), amplitudes
        )
        trips = [o.t_star if o.t_star is not None else math.inf for o in outcomes]
        if any(b > a for a, b in zip(trips, trips[1:])):
            raise ExperimentError(
                f"trip times increase with amplitude: {list(zip(amplitudes, trips))}"
            )
        return outcomes

    def harmonic_loss_check(
        self,
        m: ZenerMaterial,
        omega: float,
        amplitude: float,
        samples: int = 256,
    ) -> HarmonicLossReport:
        """
        Period averages for the strain S = A sin(omega t) at constant
        stiffness c = c(0).

        The stored power c S S_t averages to zero. Under T_t ~ c S_t the
        power T S_t reduces to c S S_t + (tau_ret - tau_rel) c S_t^2, whose
        average is (tau_ret - tau_rel) c omega^2 A^2 / 2. The periodic
        steady state of the Zener law gives the exact average as well.
        """
        if omega <= 0:
            raise ExperimentError(f"omega must be positive (got {omega})")
        c = float(m.stiffness.value(0.0))
        A = amplitude
        t = np.arange(samples) * (2.0 * math.pi / omega) / samples
        S = A * np.sin(omega * t)
        S_t = A * omega * np.cos(omega * t)

        stored = float(np.mean(c * S * S_t))
        loss = float(np.mean((m.tau_ret - m.tau_rel) * c * S_t**2))
        power = float(
            np.mean(c * S * S_t + m.tau_ret * c * S_t**2 - m.tau_rel * S_t * (c * S_t))
        )
        expected = (m.tau_ret - m.tau_rel) * c * omega**2 * A**2 / 2.0

        S_hat = -1j * A
        T_hat = c * (1 + 1j * omega * m.tau_ret) / (1 + 1j * omega * m.tau_rel) * S_hat
        T = np.real(T_hat * np.exp(1j * omega * t))
        power_exact = float(np.mean(T * S_t))

        scale = abs(c) * A**2 * omega
        passed = abs(stored) <= 1e-10 * scale and abs(power - expected) <= 1e-8 * max(
            abs(expected), scale
        )
        if not passed:
            logger.warning(
                "Harmonic loss check failed: <P>=%g expected %g", power, expected
            )
        return HarmonicLossReport(
            omega=omega,
            amplitude=A,
            mean_stored=stored,
            mean_power=power,
            mean_loss=loss,
            expected_loss=expected,
            mean_power_exact=power_exact,
            passed=passed,
        )
