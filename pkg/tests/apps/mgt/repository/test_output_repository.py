import json
import math

import numpy as np
import pytest

from apps.mgt.repository.output_repository import (
    OutputRepository,
    OutputRepositoryError,
    canonical_json,
    config_hash,
    format_value,
    jsonable,
)


@pytest.fixture
def repository(tmp_path):
    return OutputRepository(tmp_path / "out")


@pytest.mark.parametrize(
    "value, text",
    [
        (0.1, "0.10000000000000001"),
        (1.0, "1"),
        (math.nan, "nan"),
        (math.inf, "inf"),
        (True, "1"),
        (False, "0"),
        (None, ""),
        (17, "17"),
        ("mode", "mode"),
    ],
)
def test_format_value(value, text):
    assert format_value(value) == text


def test_jsonable_names_non_finite_values():
    """
    Test that nested non-finite floats and numpy scalars become JSON-safe.

    Expected:
      - nan, inf and -inf become strings.
      - numpy scalars become Python numbers.
      - Tuples become lists and keys become strings.
    """
    payload = {
        "a": [math.nan, (math.inf, -math.inf)],
        1: np.float64(2.5),
        "n": np.int64(3),
    }

    assert jsonable(payload) == {
        "a": ["nan", ["inf", "-inf"]],
        "1": 2.5,
        "n": 3,
    }


def test_config_hash_ignores_key_order():
    a = {"grid": {"n": 33}, "seed": 1}
    b = {"seed": 1, "grid": {"n": 33}}

    assert canonical_json(a) == '{"grid":{"n":33},"seed":1}'
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash({"grid": {"n": 65}, "seed": 1})


def test_write_csv_uses_crlf_and_full_precision(repository):
    """
    Test the CSV layout.

    Steps:
      1. Write a header and two rows into a directory that does not exist yet.

    Expected:
      - The directory is created.
      - Records end with CRLF and floats round-trip exactly.
    """
    rows = [(0.0, 1 / 3), (0.1, math.nan)]

    path = repository.write_csv("table.csv", ("t", "y"), rows)

    data = path.read_bytes()
    assert data == (
        b"t,y\r\n"
        b"0,0.33333333333333331\r\n"
        b"0.10000000000000001,nan\r\n"
    )
    assert float(data.split(b"\r\n")[1].split(b",")[1]) == 1 / 3


def test_write_csv_rejects_ragged_rows(repository):
    with pytest.raises(OutputRepositoryError, match="row of 1 values for 2 columns"):
        repository.write_csv("table.csv", ("t", "y"), [(0.0,)])

    assert not (repository.directory / "table.csv").exists()


def test_write_csv_overwrites_previous_file(repository):
    repository.write_csv("table.csv", ("t",), [(1,), (2,)])

    path = repository.write_csv("table.csv", ("t",), [(3,)])

    assert path.read_bytes() == b"t\r\n3\r\n"
    assert [p.name for p in repository.directory.iterdir()] == ["table.csv"]


def test_write_json(repository):
    path = repository.write_json("summary.json", {"b": math.inf, "a": [1, 2]})

    text = path.read_text(encoding="utf-8")
    assert text.endswith("\n")
    assert json.loads(text) == {"a": [1, 2], "b": "inf"}
    assert text.index('"a"') < text.index('"b"')


def test_write_failure_is_wrapped(tmp_path):
    """
    Test that an OSError becomes OutputRepositoryError.

    Steps:
      1. Point the repository at a path occupied by a regular file.
    """
    blocker = tmp_path / "blocker"
    blocker.write_text("x", encoding="utf-8")
    repository = OutputRepository(blocker)

    with pytest.raises(OutputRepositoryError, match="cannot write") as info:
        repository.write_json("summary.json", {})

    assert isinstance(info.value.__cause__, OSError)
