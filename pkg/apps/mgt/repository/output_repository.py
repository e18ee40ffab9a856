import csv
import hashlib
import io
import json
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Sequence

logger = logging.getLogger(__name__)


class OutputRepositoryError(Exception):
    """
    Raised when an artifact cannot be written.

    Wraps the underlying `OSError` so that callers handle every persistence
    failure through one exception type.
    """


def format_value(value: Any) -> str:
    """Text of one CSV cell; floats keep 17 significant digits."""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return format(value, ".17g")
    if value is None:
        return ""
    return str(value)


def jsonable(value: Any) -> Any:
    """Replace non-finite floats by their names so the document stays valid JSON."""
    if isinstance(value, float) and not math.isfinite(value):
        return "nan" if math.isnan(value) else ("inf" if value > 0 else "-inf")
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if hasattr(value, "item") and callable(value.item):
        return jsonable(value.item())
    return value


def canonical_json(payload: Any) -> str:
    return json.dumps(jsonable(payload), sort_keys=True, separators=(",", ":"))


def config_hash(payload: Any) -> str:
    """sha256 of the canonical JSON text of `payload`."""
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


class OutputRepository:
    """
    Repository responsible for the CSV and JSON artifacts of one run.

    Every file is written to a temporary sibling first and moved into place
    with `os.replace`, so readers never observe a partial file and a re-run
    overwrites the previous artifacts.
    """

    def __init__(self, directory: Path | str):
        """
        Args:
            directory: Target directory; created on first write.
        """
        self.directory = Path(directory)
        logger.debug("OutputRepository initialized (%s)", self.directory)

    def write_csv(
        self,
        name: str,
        header: Sequence[str],
        rows: Iterable[Sequence[Any]],
    ) -> Path:
        """
        Write a CSV table with a fixed header.

        Args:
            name: File name inside the output directory.
            header: Column names, written as the first record.
            rows: Records; floats are written with 17 significant digits.

        Returns:
            Path: The written file.

        Raises:
            OutputRepositoryError: If the file cannot be written.
        """
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\r\n")
        writer.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise OutputRepositoryError(
                    f"{name}: row of {len(row)} values for {len(header)} columns"
                )
            writer.writerow([format_value(v) for v in row])
        return self._atomic_write(name, buffer.getvalue())

    def write_json(self, name: str, payload: Any) -> Path:
        """
        Write `payload` as indented JSON.

        Raises:
            OutputRepositoryError: If the file cannot be written.
        """
        text = json.dumps(jsonable(payload), indent=2, sort_keys=True) + "\n"
        return self._atomic_write(name, text)

    def _atomic_write(self, name: str, text: str) -> Path:
        target = self.directory / name
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=self.directory, prefix=f".{name}.")
            try:
                with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
                    f.write(text)
                os.replace(tmp, target)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise
        except OSError as e:
            raise OutputRepositoryError(f"cannot write {target}: {e}") from e
        logger.debug("Wrote %s", target)
        return target
