import logging
import math
from typing import Iterable, Optional

import numpy as np
from scipy.optimize import minimize_scalar

from apps.mgt.service.dynamics_service import BlowupSuspectedError, DynamicsService
from shared.models.diagnostics import (
    ConstantsEstimate,
    DiagnosticsRow,
    EnergyReport,
    EnergyTerms,
    TimeSeries,
)
from shared.models.material import CoefficientSet
from shared.models.state import State, Trajectory
from shared.numerics.grid import (
    Grid,
    GridMismatchError,
    apply_bands,
    face_difference,
    first_difference,
    flux_divergence_bands,
    integrate,
    mean,
    restrict,
    second_difference,
    sobolev_norms,
    third_difference,
    w12_norm,
)

logger = logging.getLogger(__name__)

Y_FLOOR = 1e-14
INFLATION = 0.01


class DiagnosticsError(Exception):
    """Base class for DiagnosticsService errors."""


class DegenerateCoefficientError(DiagnosticsError):
    """Raised when gamma or ghat is not positive on [0, M]."""


class InsufficientSamplesError(DiagnosticsError):
    """Raised when a trajectory has too few snapshots for a time derivative."""


class TimeMismatchError(DiagnosticsError):
    """Raised when two trajectories are not sampled at the same times."""


def _extremum(f, theta: np.ndarray, largest: bool) -> float:
    """Sampled extremum of f, polished by a bounded scalar search."""
    values = f(theta)
    i = int(np.argmax(values) if largest else np.argmin(values))
    best = float(values[i])
    lo, hi = theta[max(i - 1, 0)], theta[min(i + 1, len(theta) - 1)]
    if hi > lo:
        sign = -1.0 if largest else 1.0
        res = minimize_scalar(
            lambda t: sign * float(f(np.array([t]))[0]),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-12 * max(1.0, abs(hi))},
        )
        polished = sign * float(res.fun)
        best = max(best, polished) if largest else min(best, polished)
    return best


def _bounds(f, theta: np.ndarray) -> tuple[float, float]:
    """(inf, sup) of f widened by 1% of min(spread, |extremum|)."""
    lo = _extremum(f, theta, largest=False)
    hi = _extremum(f, theta, largest=True)
    spread = hi - lo
    return (
        lo - INFLATION * min(spread, abs(lo)),
        hi + INFLATION * min(spread, abs(hi)),
    )


def _abs_bound(f, theta: np.ndarray) -> float:
    return _bounds(lambda t: np.abs(f(t)), theta)[1]


def _faces(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a[:-1] + a[1:])


def fit_gronwall_constant(times, y_diff) -> float:
    """
    Smallest C >= 0 with y(t) <= y(0) e^{C t} at every sample.

    Returns inf when y(0) = 0 but y later becomes positive.
    """
    times = np.asarray(times, dtype=np.float64)
    y = np.asarray(y_diff, dtype=np.float64)
    y0 = y[0]
    later = times > times[0]
    if y0 <= 0:
        return math.inf if np.any(y[later] > 0) else 0.0
    with np.errstate(divide="ignore"):
        rates = np.log(np.maximum(y[later], 1e-300) / y0) / (
            times[later] - times[0]
        )
    return float(max(0.0, np.max(rates, initial=0.0)))


def riccati_horizon(y0: float, k13: float) -> tuple[float, float]:
    """
    N = 2 (y0 + 1) and the horizon T0 = 1 / (k13 N^2 + k13 N) on which a
    solution of y' <= k13 (y^2 + y) starting at y0 stays below N.
    """
    n_bound = 2.0 * (y0 + 1.0)
    if k13 <= 0:
        return n_bound, math.inf
    return n_bound, 1.0 / (k13 * n_bound**2 + k13 * n_bound)


class DiagnosticsService:
    """
    Energy functionals, identity residuals and monitors along trajectories.

    All derivatives are the grid's divided differences and all integrals
    its trapezoidal quadrature, so every quantity is computed the same way
    in every diagnostic.
    """

    def __init__(self, grid: Grid, coefficients: CoefficientSet):
        self.grid = grid
        self.c = coefficients
        logger.debug("DiagnosticsService initialized (n=%d)", grid.n)

    def estimate_k_constants(
        self,
        M: float,
        observed_range: Optional[tuple[float, float]] = None,
        b2: float = 1.0,
        samples: int = 4096,
    ) -> ConstantsEstimate:
        """
        Bounds k1..k10 of the coefficients on [0, M] and the derived weights.

        Raises:
            DegenerateCoefficientError: min gamma <= 0 or min ghat <= 0.
        """
        if M <= 0:
            raise ValueError(f"M must be positive (got {M})")
        theta = np.linspace(0.0, M, max(samples, 4096))
        c = self.c

        raw_gamma = float(np.min(c.gamma.value(theta)))
        raw_ghat = float(np.min(c.ghat.value(theta)))
        if raw_gamma <= 0 or raw_ghat <= 0:
            raise DegenerateCoefficientError(
                f"min gamma={raw_gamma:g}, min ghat={raw_ghat:g} on [0, {M:g}]"
            )

        k1, k2 = _bounds(c.gamma.value, theta)
        k3, k4 = _bounds(c.ghat.value, theta)
        k5 = max(0.0, _bounds(c.heating.value, theta)[1])
        k6 = _abs_bound(c.gamma.d1, theta)
        k7 = _abs_bound(c.ghat.d1, theta)
        k8 = _abs_bound(c.gamma.d2, theta)
        k9 = _abs_bound(c.ghat.d2, theta)
        k10 = _abs_bound(c.heating.d1, theta)

        B = 4.0 * k4**2 / k1
        k12 = max(2.0, 4.0 / k1, 4.0 / B, 1.0 / k3)

        lo, hi = observed_range if observed_range is not None else (0.0, M)
        observed = np.linspace(max(lo, 0.0), max(hi, lo, 0.0), 4096)
        inf_gamma = _bounds(c.gamma.clamped, observed)[0]
        sup_ghat = _bounds(c.ghat.clamped, observed)[1]
        B1 = 4.0 * sup_ghat**2 / inf_gamma

        logger.debug("Constants on [0, %g]: k1=%g k4=%g B=%g k12=%g", M, k1, k4, B, k12)
        return ConstantsEstimate(
            M=M, k1=k1, k2=k2, k3=k3, k4=k4, k5=k5, k6=k6, k7=k7, k8=k8, k9=k9,
            k10=k10, B=B, k12=k12, B1=B1, B2=b2,
        )

    def energy_y(
        self, s: State, consts: ConstantsEstimate, eps: float
    ) -> EnergyReport:
        """
        y = 1/2 int w_x^2 + 1/2 int gamma v_xx^2 + int ghat u_xx v_xx
            + B/2 int u_xx^2 + eps int ghat u_xxx^2,

        with the lower bound (||w_x||^2 + ||v_xx||^2 + ||u_xx||^2
        + eps ||u_xxx||^2) / k12 that y dominates whenever theta <= M.
        """
        grid = s.grid
        gamma = self.c.gamma.clamped(s.theta)
        ghat = self.c.ghat.clamped(s.theta)
        wx = first_difference(grid, s.w)
        vxx = second_difference(grid, s.v)
        uxx = second_difference(grid, s.u)
        uxxx = third_difference(grid, s.u)

        terms = EnergyTerms(
            acceleration=0.5 * integrate(grid, wx * wx),
            damping=0.5 * integrate(grid, gamma * vxx * vxx),
            coupling=integrate(grid, ghat * uxx * vxx),
            stiffness=0.5 * consts.B * integrate(grid, uxx * uxx),
            viscous=eps * integrate(grid, ghat * uxxx * uxxx),
        )
        seminorms = (
            integrate(grid, wx * wx)
            + integrate(grid, vxx * vxx)
            + integrate(grid, uxx * uxx)
            + eps * integrate(grid, uxxx * uxxx)
        )
        return EnergyReport(
            t=s.t,
            y=float(sum(terms.as_tuple())),
            terms=terms,
            lower_bound=seminorms / consts.k12,
        )

    def energy_identity_residual(
        self, traj: Trajectory, eps: float
    ) -> TimeSeries:
        """
        Defect of the energy balance

            d/dt {1/2 int w_x^2 + 1/2 int gamma v_xx^2 + int ghat u_xx v_xx
                  + eps int ghat u_xxx^2} + dissipation = coupling

        at every snapshot, in the summation-by-parts form of the scheme.
        v_xx and u_xx are the conservative Laplacian; w_x and u_xxx are face
        differences. The derivative of the bracket along the semi-discrete
        equations splits into the alpha and eps terms (dissipation) and the
        rest (coupling), with theta_t from the temperature equation. The
        balance is exact for the semi-discrete system, so the residual is a
        time discretization error. The recorded bracket is differentiated
        with second-order differences over the snapshots.

        Raises:
            InsufficientSamplesError: fewer than 3 snapshots.
        """
        if len(traj) < 3:
            raise InsufficientSamplesError(
                f"identity residual needs 3 snapshots, got {len(traj)}"
            )
        dynamics = DynamicsService(traj.grid, self.c)
        brackets, balances = [], []
        for s in traj.snapshots:
            bracket, dissipation, coupling = self._identity_parts(
                dynamics, s, eps
            )
            brackets.append(bracket)
            balances.append(dissipation - coupling)
        times = traj.times
        rate = np.gradient(np.array(brackets), times, edge_order=2)
        return TimeSeries(times=times, values=rate + np.array(balances))

    def _identity_parts(
        self, dynamics: DynamicsService, s: State, eps: float
    ) -> tuple[float, float, float]:
        """(bracket, dissipation, coupling) at one snapshot."""
        grid, c = s.grid, self.c
        lap = flux_divergence_bands(grid, np.ones(grid.n))
        du, dv, dw, dtheta = dynamics.rhs(s, eps)
        lossy = (
            eps * apply_bands(lap, s.u),
            eps * apply_bands(lap, s.v),
            eps * apply_bands(lap, s.w) - c.alpha * s.w,
            np.zeros(grid.n),
        )
        bracket = self._bracket(s, lap, eps)
        dissipation = -self._bracket_rate(s, lap, eps, lossy)
        coupling = self._bracket_rate(
            s, lap, eps, (du - lossy[0], dv - lossy[1], dw - lossy[2], dtheta)
        )
        return bracket, dissipation, coupling

    def _bracket(self, s: State, lap, eps: float) -> float:
        grid, c = s.grid, self.c
        h = grid.h
        g = c.gamma.clamped(s.theta)
        gh = c.ghat.clamped(s.theta)
        uxx, vxx = apply_bands(lap, s.u), apply_bands(lap, s.v)
        wx = face_difference(grid, s.w)
        uxxx = face_difference(grid, uxx)
        return (
            0.5 * h * float(np.sum(wx * wx))
            + 0.5 * integrate(grid, g * vxx * vxx)
            + integrate(grid, gh * uxx * vxx)
            + eps * h * float(np.sum(_faces(gh) * uxxx * uxxx))
        )

    def _bracket_rate(self, s: State, lap, eps: float, tendency) -> float:
        """Derivative of the bracket at s in the direction `tendency`."""
        grid, c = s.grid, self.c
        h = grid.h
        du, dv, dw, dtheta = tendency
        g, g1 = c.gamma.clamped(s.theta), c.gamma.clamped_d1(s.theta)
        gh, gh1 = c.ghat.clamped(s.theta), c.ghat.clamped_d1(s.theta)

        uxx, vxx = apply_bands(lap, s.u), apply_bands(lap, s.v)
        uxx_t, vxx_t = apply_bands(lap, du), apply_bands(lap, dv)
        wx, wx_t = face_difference(grid, s.w), face_difference(grid, dw)
        uxxx = face_difference(grid, uxx)
        uxxx_t = face_difference(grid, uxx_t)

        return (
            h * float(np.sum(wx * wx_t))
            + integrate(grid, g * vxx * vxx_t)
            + 0.5 * integrate(grid, g1 * dtheta * vxx * vxx)
            + integrate(grid, gh * (uxx_t * vxx + uxx * vxx_t))
            + integrate(grid, gh1 * dtheta * uxx * vxx)
            + 2.0 * eps * h * float(np.sum(_faces(gh) * uxxx * uxxx_t))
            + eps * h * float(np.sum(_faces(gh1 * dtheta) * uxxx * uxxx))
        )

    def riccati_monitor(
        self, traj: Trajectory, consts: ConstantsEstimate, eps: float
    ) -> float:
        """
        Least k13 >= 0 with y' + k1 eps int v_xxx^2 <= k13 (y^2 + y) on every
        sampled interval. Intervals touching y <= 1e-14 are skipped.

        Raises:
            InsufficientSamplesError: fewer than 2 snapshots.
        """
        ratios = self._riccati_ratios(traj, consts, eps)
        positive = ratios[np.isfinite(ratios)]
        return float(max(0.0, np.max(positive, initial=0.0)))

    def _riccati_ratios(
        self, traj: Trajectory, consts: ConstantsEstimate, eps: float
    ) -> np.ndarray:
        if len(traj) < 2:
            raise InsufficientSamplesError(
                f"Riccati fit needs 2 snapshots, got {len(traj)}"
            )
        y = np.array([self.energy_y(s, consts, eps).y for s in traj.snapshots])
        vxxx_sq = np.array(
            [
                integrate(s.grid, third_difference(s.grid, s.v) ** 2)
                for s in traj.snapshots
            ]
        )
        t = traj.times
        ratios = np.full(len(t) - 1, np.nan)
        for k in range(len(t) - 1):
            if y[k] <= Y_FLOOR or y[k + 1] <= Y_FLOOR:
                continue
            growth = (y[k + 1] - y[k]) / (t[k + 1] - t[k])
            dissipation = consts.k1 * eps * 0.5 * (vxxx_sq[k] + vxxx_sq[k + 1])
            scale = 0.5 * (y[k] ** 2 + y[k] + y[k + 1] ** 2 + y[k + 1])
            ratios[k] = (growth + dissipation) / scale
        return ratios

    def hessian_growth_check(self, traj: Trajectory, eps: float) -> float:
        """
        Worst defect of 1/2 d/dt int u_xx^2 + eps int u_xxx^2
        <= 1/2 int u_xx^2 + 1/2 int v_xx^2 over the sampled intervals.

        Raises:
            InsufficientSamplesError: fewer than 2 snapshots.
        """
        if len(traj) < 2:
            raise InsufficientSamplesError(
                f"growth check needs 2 snapshots, got {len(traj)}"
            )
        uxx_sq, uxxx_sq, vxx_sq = [], [], []
        for s in traj.snapshots:
            uxx_sq.append(integrate(s.grid, second_difference(s.grid, s.u) ** 2))
            uxxx_sq.append(integrate(s.grid, third_difference(s.grid, s.u) ** 2))
            vxx_sq.append(integrate(s.grid, second_difference(s.grid, s.v) ** 2))
        uxx_sq, uxxx_sq, vxx_sq = map(np.array, (uxx_sq, uxxx_sq, vxx_sq))

        def avg(a):
            return 0.5 * (a[1:] + a[:-1])

        t = traj.times
        defect = (
            0.5 * np.diff(uxx_sq) / np.diff(t)
            + eps * avg(uxxx_sq)
            - 0.5 * avg(uxx_sq)
            - 0.5 * avg(vxx_sq)
        )
        return float(np.max(defect))

    def difference_functional(
        self,
        traj_a: Trajectory,
        traj_b: Trajectory,
        consts: ConstantsEstimate,
    ) -> TimeSeries:
        """
        y_diff = 1/2 int d_tt^2 + 1/2 int gamma(theta_A) d_xt^2
                 + int ghat(theta_A) d_x d_xt + B1/2 int d_x^2
                 + B2/2 int delta^2

        with d = u_A - u_B and delta = theta_A - theta_B. Runs on different
        grids are compared at the nodes of the coarser one.

        Raises:
            GridMismatchError: the grids do not share nodes.
            TimeMismatchError: the snapshot times differ.
        """
        ta, tb = traj_a.times, traj_b.times
        if len(ta) != len(tb) or not np.allclose(ta, tb, rtol=1e-12, atol=1e-14):
            raise TimeMismatchError(
                f"snapshot times differ ({len(ta)} vs {len(tb)} samples)"
            )
        grid, pick_a, pick_b = _common_grid(traj_a.grid, traj_b.grid)

        values = []
        for sa, sb in zip(traj_a.snapshots, traj_b.snapshots):
            d = pick_a(sa.u) - pick_b(sb.u)
            d_t = pick_a(sa.v) - pick_b(sb.v)
            d_tt = pick_a(sa.w) - pick_b(sb.w)
            delta = pick_a(sa.theta) - pick_b(sb.theta)
            theta_a = pick_a(sa.theta)
            d_x = first_difference(grid, d)
            d_xt = first_difference(grid, d_t)
            values.append(
                0.5 * integrate(grid, d_tt * d_tt)
                + 0.5 * integrate(grid, self.c.gamma.clamped(theta_a) * d_xt**2)
                + integrate(grid, self.c.ghat.clamped(theta_a) * d_x * d_xt)
                + 0.5 * consts.B1 * integrate(grid, d_x * d_x)
                + 0.5 * consts.B2 * integrate(grid, delta * delta)
            )
        return TimeSeries(times=ta, values=np.array(values))

    def blowup_monitor(self, s: State) -> float:
        """||v||_{W22} + ||w||_{W12} + ||theta||_{W2inf}."""
        return (
            sobolev_norms(s.grid, s.v).w22
            + w12_norm(s.grid, s.w)
            + sobolev_norms(s.grid, s.theta).w2inf
        )

    def diagnostics_rows(
        self,
        traj: Trajectory,
        consts: ConstantsEstimate,
        eps: float,
        include: Iterable[str] = ("energy", "identity", "riccati", "blowup"),
    ) -> list[DiagnosticsRow]:
        """Rows of the diagnostics CSV stream, one per snapshot."""
        include = set(include)
        n_snap = len(traj)
        nan = float("nan")

        residual = np.full(n_snap, nan)
        if "identity" in include and n_snap >= 3:
            residual = self.energy_identity_residual(traj, eps).values

        k13 = np.full(n_snap, nan)
        if "riccati" in include and n_snap >= 2:
            ratios = np.nan_to_num(
                self._riccati_ratios(traj, consts, eps), nan=0.0
            )
            k13[0] = 0.0
            k13[1:] = np.maximum.accumulate(np.maximum(ratios, 0.0))

        rows = []
        for i, s in enumerate(traj.snapshots):
            if "energy" in include:
                report = self.energy_y(s, consts, eps)
                y, terms = report.y, report.terms.as_tuple()
            else:
                y, terms = nan, (nan,) * 5
            rows.append(
                DiagnosticsRow(
                    t=s.t,
                    mean_u=mean(s.grid, s.u),
                    mean_v=mean(s.grid, s.v),
                    mean_w=mean(s.grid, s.w),
                    min_theta=float(np.min(s.theta)),
                    y=y,
                    y_terms=terms,
                    identity_residual=float(residual[i]),
                    k13_fitted=float(k13[i]),
                    blowup_monitor=(
                        self.blowup_monitor(s) if "blowup" in include else nan
                    ),
                )
            )
        return rows


class BlowupMonitor:
    """
    Evolution monitor for the extensibility criterion.

    Trips when the norm exceeds `threshold` or grows by `growth` relative to
    its first (nonzero) value.
    """

    def __init__(
        self,
        diagnostics: DiagnosticsService,
        threshold: float = 1e6,
        growth: float = 1e3,
    ):
        self.diagnostics = diagnostics
        self.threshold = threshold
        self.growth = growth
        self.initial: Optional[float] = None
        self.history: list[tuple[float, float]] = []

    @property
    def peak(self) -> float:
        return max((v for _, v in self.history), default=0.0)

    def __call__(self, s: State) -> None:
        value = self.diagnostics.blowup_monitor(s)
        self.history.append((s.t, value))
        if self.initial is None:
            self.initial = value
        grown = self.initial > 0 and value >= self.growth * self.initial
        if value > self.threshold or grown or not math.isfinite(value):
            raise BlowupSuspectedError(
                f"blow-up monitor {value:g} at t={s.t:g} "
                f"(initial {self.initial:g})",
                value=value,
                t=s.t,
            )


def _common_grid(a: Grid, b: Grid):
    """Coarser of two nested grids and the injections onto it."""
    if a.length != b.length:
        raise GridMismatchError(f"lengths differ: {a.length} vs {b.length}")

    def identity(p):
        return np.asarray(p, dtype=np.float64)

    if a.n == b.n:
        return a, identity, identity
    fine, coarse = (a, b) if a.n > b.n else (b, a)
    if (fine.n - 1) % (coarse.n - 1):
        raise GridMismatchError(f"grids n={a.n} and n={b.n} do not share nodes")
    factor = (fine.n - 1) // (coarse.n - 1)

    def inject(p):
        return restrict(p, factor)

    if fine is a:
        return coarse, inject, identity
    return coarse, identity, inject
