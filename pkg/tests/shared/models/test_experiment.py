import math

from shared.models.experiment import BlowupOutcome, SweepResult


def test_sweep_rows_with_field_errors():
    result = SweepResult(
        parameter="eps",
        values=[1e-2, 1e-3],
        errors=[2e-2, 2e-3],
        field_errors=[
            {"u": 1e-2, "v": 2e-2, "w": 1e-3, "theta": 5e-3},
            {"u": 1e-3, "v": 2e-3, "w": 1e-4, "theta": 5e-4},
        ],
        order=1.0,
        order_residual=0.0,
    )

    assert result.rows()[1] == [1e-3, 2e-3, 1e-3, 2e-3, 1e-4, 5e-4]


def test_sweep_rows_without_field_errors():
    """
    Test that missing per-field errors are written as NaN.
    """
    result = SweepResult(parameter="n", values=[33.0], errors=[1e-3])

    row = result.rows()[0]

    assert row[:2] == [33.0, 1e-3]
    assert all(math.isnan(v) for v in row[2:])
    assert result.order is None


def test_blowup_outcome_defaults():
    outcome = BlowupOutcome(status="completed", amplitude=0.1, t_end=1.0)

    assert outcome.t_star is None
    assert outcome.reason is None
