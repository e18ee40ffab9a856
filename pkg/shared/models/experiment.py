from typing import Literal, Optional

from pydantic import Field
from pydantic.dataclasses import dataclass

BlowupStatus = Literal["completed", "blowup"]


@dataclass
class SweepResult:
    """
    Errors of a parameter sweep and the fitted log-log slope.

    `field_errors` keeps the per-field errors (u, v, w, theta) behind each
    entry of `errors`, which is their maximum. `order` is None when fewer
    than two positive errors are available.
    """

    parameter: str
    values: list[float]
    errors: list[float]
    field_errors: list[dict[str, float]] = Field(default_factory=list)
    order: Optional[float] = None
    order_residual: Optional[float] = None

    def rows(self) -> list[list[float]]:
        out = []
        for value, error, fields in zip(
            self.values, self.errors, self.field_errors or [{}] * len(self.values)
        ):
            out.append(
                [
                    value,
                    error,
                    fields.get("u", float("nan")),
                    fields.get("v", float("nan")),
                    fields.get("w", float("nan")),
                    fields.get("theta", float("nan")),
                ]
            )
        return out


@dataclass
class TwinRunResult:
    """Difference functional of two runs from the same initial data."""

    pairing: str
    times: list[float]
    y_diff: list[float]
    y_diff0: float
    sup_y_diff: float
    gronwall_constant: float


@dataclass
class BlowupOutcome:
    """
    Result of one run with the blow-up monitor armed.

    `t_star` and `monitor_value` are set when the run was aborted.
    """

    status: BlowupStatus
    amplitude: float
    t_end: float
    t_star: Optional[float] = None
    monitor_value: Optional[float] = None
    reason: Optional[str] = None


@dataclass(frozen=True)
class HarmonicLossReport:
    """
    Period averages for the harmonic strain S(t) = A sin(omega t).

    `mean_power_exact` uses the periodic steady-state stress of the Zener
    law instead of the approximation T_t ~ c S_t.
    """

    omega: float
    amplitude: float
    mean_stored: float
    mean_power: float
    mean_loss: float
    expected_loss: float
    mean_power_exact: float
    passed: bool
