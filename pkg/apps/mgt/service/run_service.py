import dataclasses
import json
import logging
import math
import time
from pathlib import Path
from typing import Any, Optional

import numpy as np
from pydantic import TypeAdapter, ValidationError

from apps.mgt.repository.output_repository import (
    OutputRepository,
    OutputRepositoryError,
    config_hash,
)
from apps.mgt.service.diagnostics_service import (
    BlowupMonitor,
    DiagnosticsError,
    DiagnosticsService,
    riccati_horizon,
)
from apps.mgt.service.dynamics_service import (
    BlowupSuspectedError,
    DynamicsError,
    DynamicsService,
)
from apps.mgt.service.experiment_service import ExperimentError, ExperimentService
from apps.mgt.service.model_service import (
    ModelError,
    ModelService,
    coefficients_from_config,
    material_from_config,
)
from apps.mgt.service.picard_service import PicardError, PicardService
from shared.config.config import Config
from shared.models.diagnostics import DiagnosticsRow
from shared.models.material import CoefficientSet
from shared.models.run_config import RunConfig
from shared.models.state import EvolutionParams, InitialData, Trajectory
from shared.numerics.grid import Grid, GridError
from shared.numerics.laws import ConstantLaw

logger = logging.getLogger(__name__)

_RUN_CONFIG = TypeAdapter(RunConfig)

# pydantic error types that describe the shape of the document rather than
# the physics it encodes
_SCHEMA_TYPES = (
    "extra_forbidden",
    "missing",
    "literal_error",
    "union_tag_invalid",
    "union_tag_not_found",
    "model_type",
    "dataclass_type",
    "dataclass_exact_type",
)

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_BLOWUP = 4
EXIT_NO_CONTRACTION = 5


class ConfigError(Exception):
    """Base class for run configuration errors."""


class ParseError(ConfigError):
    """Raised when the configuration is not well-formed JSON."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class SchemaError(ConfigError):
    """Raised for unknown, missing or mistyped keys."""

    def __init__(self, message: str, path: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class ConfigValidationError(ConfigError):
    """Raised when a value is well-typed but physically out of bounds."""


def _is_schema_error(error_type: str) -> bool:
    return error_type in _SCHEMA_TYPES or error_type.endswith(("_type", "_parsing"))


def _loc(error: dict) -> str:
    return ".".join(str(part) for part in error.get("loc", ())) or "<root>"


def parse_config(source: str | Path) -> RunConfig:
    """
    Parse and validate a JSON run configuration.

    `source` is a path or the JSON text itself.

    Raises:
        ParseError: malformed JSON, with line and column.
        SchemaError: unknown, missing or mistyped key, with its path.
        ConfigValidationError: out-of-bounds value.
        OSError: the file cannot be read.
    """
    if isinstance(source, Path) or not str(source).lstrip().startswith("{"):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = str(source)

    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, e.lineno, e.colno) from e

    try:
        return _RUN_CONFIG.validate_python(document)
    except ValidationError as e:
        errors = e.errors()
        schema = [err for err in errors if _is_schema_error(err["type"])]
        if schema:
            first = schema[0]
            raise SchemaError(first["msg"], _loc(first)) from e
        messages = "; ".join(f"{_loc(err)}: {err['msg']}" for err in errors)
        raise ConfigValidationError(messages) from e


def dump_config(cfg: RunConfig) -> dict:
    """Configuration with defaults filled, as plain JSON data."""
    return _RUN_CONFIG.dump_python(cfg, mode="json")


def exit_code_for(error: BaseException) -> int:
    """Process exit status for an error raised during a run."""
    if isinstance(error, BlowupSuspectedError):
        return EXIT_BLOWUP
    if isinstance(error, PicardError):
        return EXIT_NO_CONTRACTION
    if isinstance(error, DynamicsError):
        return EXIT_SOLVER
    if isinstance(
        error,
        (
            ConfigError,
            ModelError,
            DiagnosticsError,
            ExperimentError,
            GridError,
            ValidationError,
            ValueError,
        ),
    ):
        return EXIT_CONFIG
    return EXIT_IO


def _dump(obj: Any) -> Any:
    return TypeAdapter(type(obj)).dump_python(obj, mode="python")


class RunService:
    """
    Executes one validated RunConfig and writes its artifacts.

    The selector decides which campaign runs; every campaign ends with a
    summary JSON holding the configuration echo, its hash, the outcome and
    the wall time, also when it fails.
    """

    def __init__(
        self,
        config: RunConfig,
        repository: OutputRepository,
        settings: Optional[Config] = None,
        model: Optional[ModelService] = None,
    ):
        self.config = config
        self.repository = repository
        self.settings = settings or Config()
        self.model = model or ModelService()
        logger.info(
            "RunService initialized (selector=%s, output=%s)",
            config.experiment.selector,
            repository.directory,
        )

    def run(self) -> int:
        """Run the selected campaign; returns the process exit status."""
        cfg = self.config
        echo = dump_config(cfg)
        summary: dict[str, Any] = {
            "selector": cfg.experiment.selector,
            "config": echo,
            "config_hash": config_hash(echo),
        }
        started = time.perf_counter()
        handler = {
            "run": self._run_evolution,
            "sweep-eps": self._run_eps_sweep,
            "refine": self._run_refinement,
            "twins": self._run_twins,
            "picard": self._run_picard,
            "blowup": self._run_blowup,
            "materials": self._run_materials,
        }[cfg.experiment.selector]

        try:
            code = handler(summary)
        except OutputRepositoryError:
            raise
        except Exception as e:
            code = exit_code_for(e)
            if code == EXIT_IO:
                raise
            logger.error("Run failed (%s): %s", type(e).__name__, e)
            summary["error"] = {"type": type(e).__name__, "message": str(e)}
            self._attach_partial(e, summary)

        summary["exit_code"] = code
        summary["status"] = "ok" if code == EXIT_OK else "failed"
        summary["wall_time"] = time.perf_counter() - started
        self.repository.write_json("summary.json", summary)
        logger.info("Run finished with exit code %d", code)
        return code

    def _attach_partial(self, e: Exception, summary: dict) -> None:
        result = getattr(e, "result", None)
        if isinstance(e, PicardError) and result is not None:
            self._write_picard(result, summary)

    # shared building blocks

    def _grid(self) -> Grid:
        return Grid(length=self.config.domain.length, n=self.config.grid.n)

    def _coefficients(self) -> CoefficientSet:
        return coefficients_from_config(self.config.material, self.model)

    def _init(self, grid: Grid) -> InitialData:
        spec = self.config.initial
        return self.model.make_initial_data(
            grid,
            u0=spec.u0,
            u0t=spec.u0t,
            u0tt=spec.u0tt,
            theta0=spec.theta0,
            remove_means=spec.remove_means,
            project_boundary=spec.project_boundary,
        )

    def _params(self) -> EvolutionParams:
        ev, mon = self.config.evolution, self.config.monitors
        return EvolutionParams(
            eps=ev.eps,
            dt=ev.dt,
            t_end=ev.t_end,
            scheme=ev.scheme,
            safety=ev.safety,
            time_discretization=ev.time_discretization,
            coefficient_update=ev.coefficient_update,
            cadence=mon.cadence,
            undershoot_tol=mon.undershoot_tol or self.settings.undershoot_tol,
        )

    def _experiments(self, c: CoefficientSet) -> ExperimentService:
        mon = self.config.monitors
        return ExperimentService(
            c,
            model=self.model,
            max_workers=self.settings.max_workers,
            blowup_threshold=mon.blowup_threshold or self.settings.blowup_threshold,
            blowup_growth=mon.blowup_growth or self.settings.blowup_growth,
        )

    def _csv_enabled(self) -> bool:
        return "csv" in self.config.output.formats

    # campaigns

    def _run_evolution(self, summary: dict) -> int:
        grid, c = self._grid(), self._coefficients()
        init = self._init(grid)
        params = self._params()
        mon = self.config.monitors
        diagnostics = DiagnosticsService(grid, c)
        monitors = []
        if "blowup" in mon.diagnostics:
            monitors.append(
                BlowupMonitor(
                    diagnostics,
                    threshold=mon.blowup_threshold or self.settings.blowup_threshold,
                    growth=mon.blowup_growth or self.settings.blowup_growth,
                )
            )
        try:
            traj = DynamicsService(grid, c).evolve(init, params, monitors=monitors)
        except BlowupSuspectedError as e:
            summary["outcome"] = {
                "status": "blowup",
                "t_star": e.t,
                "monitor_value": e.value,
            }
            if e.trajectory is not None and len(e.trajectory) > 0:
                self._write_trajectory(e.trajectory, summary, init, c)
            raise
        summary["outcome"] = {"status": "completed", "t_end": traj.final.t}
        self._write_trajectory(traj, summary, init, c)
        return EXIT_OK

    def _write_trajectory(
        self,
        traj: Trajectory,
        summary: dict,
        init: InitialData,
        c: CoefficientSet,
    ) -> None:
        """Diagnostics CSV, snapshot CSVs and the diagnostic summary entries."""
        cfg = self.config
        mon = cfg.monitors
        grid = traj.grid
        diagnostics = DiagnosticsService(grid, c)
        eps = cfg.evolution.eps

        thetas = traj.stack("theta")
        observed = (float(np.min(thetas)), float(np.max(thetas)))
        M = max(
            self.model.estimate_theta_bound(init, c, mon.theta_margin), observed[1]
        )
        consts = diagnostics.estimate_k_constants(
            M, observed_range=observed, b2=mon.b2
        )
        summary["constants"] = _dump(consts)

        rows = diagnostics.diagnostics_rows(traj, consts, eps, mon.diagnostics)
        report: dict[str, Any] = {"snapshots": len(traj)}
        if "energy" in mon.diagnostics:
            slack = min(
                r.y - diagnostics.energy_y(s, consts, eps).lower_bound
                for r, s in zip(rows, traj.snapshots)
            )
            report["energy_bound_slack"] = slack
        if "identity" in mon.diagnostics and len(traj) >= 3:
            residual = diagnostics.energy_identity_residual(traj, eps)
            report["identity_residual_l1"] = residual.l1_norm()
        if "riccati" in mon.diagnostics and len(traj) >= 2:
            k13 = diagnostics.riccati_monitor(traj, consts, eps)
            y0 = rows[0].y
            n_bound, horizon = riccati_horizon(y0, k13)
            report.update(k13=k13, riccati_bound=n_bound, riccati_horizon=horizon)
        if "hessian" in mon.diagnostics and len(traj) >= 2:
            report["hessian_growth_defect"] = diagnostics.hessian_growth_check(
                traj, eps
            )
        summary["diagnostics"] = report

        if not self._csv_enabled():
            return
        self.repository.write_csv(
            "diagnostics.csv", DiagnosticsRow.HEADER, [r.as_row() for r in rows]
        )
        if cfg.output.snapshots:
            every = max(1, cfg.output.snapshot_cadence // mon.cadence)
            last = len(traj) - 1
            for i, s in enumerate(traj.snapshots):
                if i % every and i != last:
                    continue
                self.repository.write_csv(
                    f"snapshot_{i:06d}.csv",
                    ("x", "u", "v", "w", "theta"),
                    np.column_stack([grid.nodes, s.u, s.v, s.w, s.theta]).tolist(),
                )

    def _run_eps_sweep(self, summary: dict) -> int:
        grid, c = self._grid(), self._coefficients()
        init = self._init(grid)
        result = self._experiments(c).eps_sweep(
            init, self.config.experiment.sweep_eps.eps_list, self._params()
        )
        summary["outcome"] = {"status": "completed", "order": result.order}
        summary["sweeps"] = {"eps": _dump(result)}
        self._write_sweep("sweep_eps.csv", "eps", result)
        return EXIT_OK

    def _run_refinement(self, summary: dict) -> int:
        cfg = self.config.experiment.refine
        grid, c = self._grid(), self._coefficients()
        experiments = self._experiments(c)
        params = self._params()
        sweeps = {}
        grid_result = experiments.grid_refinement(
            self._init,
            params,
            cfg.n_list,
            reference=cfg.reference,
            length=grid.length,
            mode=cfg.mode,
        )
        sweeps["grid"] = _dump(grid_result)
        self._write_sweep("refine_grid.csv", "n", grid_result)
        if cfg.dt_list:
            time_result = experiments.time_refinement(
                self._init(grid),
                params,
                cfg.dt_list,
                reference=cfg.reference,
                mode=cfg.mode,
            )
            sweeps["time"] = _dump(time_result)
            self._write_sweep("refine_time.csv", "dt", time_result)
        summary["sweeps"] = sweeps
        summary["outcome"] = {
            "status": "completed",
            "orders": {k: v["order"] for k, v in sweeps.items()},
        }
        return EXIT_OK

    def _write_sweep(self, name: str, parameter: str, result) -> None:
        if self._csv_enabled():
            self.repository.write_csv(
                name,
                (parameter, "error", "error_u", "error_v", "error_w", "error_theta"),
                result.rows(),
            )

    def _run_twins(self, summary: dict) -> int:
        cfg = self.config.experiment.twins
        mon = self.config.monitors
        grid, c = self._grid(), self._coefficients()
        result = self._experiments(c).twin_run_uniqueness(
            self._init,
            grid,
            self._params(),
            pairing=cfg.pairing,
            perturbation=cfg.perturbation,
            theta_margin=mon.theta_margin,
            b2=mon.b2,
            start_tol=cfg.start_tol,
        )
        summary["outcome"] = {
            "status": "completed",
            "y_diff0": result.y_diff0,
            "sup_y_diff": result.sup_y_diff,
            "gronwall_constant": result.gronwall_constant,
        }
        if self._csv_enabled():
            self.repository.write_csv(
                "twins.csv", ("t", "y_diff"), list(zip(result.times, result.y_diff))
            )
        return EXIT_OK

    def _run_picard(self, summary: dict) -> int:
        cfg = self.config.experiment.picard
        eps = self.config.evolution.eps
        if eps <= 0:
            raise ConfigValidationError("the Picard construction needs eps > 0")
        grid, c = self._grid(), self._coefficients()
        init = self._init(grid)
        picard = PicardService(grid, c, rng=np.random.default_rng(self.config.seed))
        pcfg, sg = picard.configure(
            init,
            eps,
            horizon_fraction=cfg.horizon_fraction,
            n_time=cfg.n_time,
            max_iter=cfg.max_iter,
            tol=cfg.tol,
        )
        summary["picard"] = {"config": _dump(pcfg), "semigroup_constants": _dump(sg)}
        result = picard.picard_solve(init, pcfg)
        self._write_picard(result, summary)
        summary["outcome"] = {
            "status": "completed",
            "iterations": result.iterations,
            "converged": result.converged,
        }
        return EXIT_OK

    def _write_picard(self, result, summary: dict) -> None:
        summary.setdefault("picard", {}).update(
            differences=result.differences,
            ratios=result.ratios,
            ball_norms=result.ball_norms,
        )
        if not self._csv_enabled():
            return
        rows = [
            (
                k + 1,
                d,
                result.ratios[k - 1] if k > 0 else math.nan,
                result.ball_norms[k],
            )
            for k, d in enumerate(result.differences)
        ]
        self.repository.write_csv(
            "picard.csv", ("iteration", "difference", "ratio", "ball_norm"), rows
        )

    def _run_blowup(self, summary: dict) -> int:
        cfg = self.config.experiment.blowup
        grid, c = self._grid(), self._coefficients()
        init = self._init(grid)
        params = self._params()
        experiments = self._experiments(c)

        outcomes = experiments.blowup_amplitude_sweep(
            init, cfg.growth.build(), cfg.amplitudes, params
        )
        control = experiments.blowup_demo(
            init, ConstantLaw(1.0), cfg.control_amplitude, params
        )
        tripped = [o for o in outcomes if o.status == "blowup"]
        summary["outcome"] = {
            "status": "blowup" if tripped else "completed",
            "t_star": tripped[0].t_star if tripped else None,
            "runs": [_dump(o) for o in outcomes],
            "control": _dump(control),
        }
        if self._csv_enabled():
            self.repository.write_csv(
                "blowup.csv",
                ("amplitude", "tripped", "t_star", "monitor_value"),
                [
                    (
                        o.amplitude,
                        o.status == "blowup",
                        math.nan if o.t_star is None else o.t_star,
                        math.nan if o.monitor_value is None else o.monitor_value,
                    )
                    for o in outcomes
                ],
            )
        return EXIT_BLOWUP if tripped else EXIT_OK

    def _run_materials(self, summary: dict) -> int:
        material_cfg = self.config.material
        if material_cfg.kind != "zener":
            raise ConfigValidationError("the materials report needs a zener material")
        cfg = self.config.experiment.materials
        material = material_from_config(material_cfg)
        c = self.model.zener_to_coefficients(material)
        report = self.model.validate_coefficients(c, material.theta_max)
        harmonic = self._experiments(c).harmonic_loss_check(
            material, cfg.omega, cfg.amplitude
        )
        summary["materials"] = {
            "coefficients": {
                "alpha": c.alpha,
                "diffusivity": c.diffusivity,
                "gamma": repr(c.gamma),
                "ghat": repr(c.ghat),
                "heating": repr(c.heating),
            },
            "validation": _dump(report) | {"passed": report.passed},
            "harmonic_loss": _dump(harmonic),
        }
        passed = report.passed and harmonic.passed
        summary["outcome"] = {"status": "completed" if passed else "rejected"}
        return EXIT_OK if passed else EXIT_CONFIG


def with_overrides(
    cfg: RunConfig, selector: Optional[str] = None, seed: Optional[int] = None
) -> RunConfig:
    """Copy of `cfg` with the CLI's selector and seed applied."""
    if selector is not None:
        cfg = dataclasses.replace(
            cfg, experiment=dataclasses.replace(cfg.experiment, selector=selector)
        )
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    return cfg
