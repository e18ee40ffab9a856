import os
from dataclasses import dataclass, field


def _env(name: str, default: str) -> str:
    return os.getenv(name, default)


@dataclass
class Config:
    """
    Process-level settings for the simulator and its CLI.

    Values are read from the environment when the object is created, so a
    `.env` file loaded by the CLI (or `monkeypatch.setenv` in tests) takes
    effect for every new instance.
    """

    output_dir: str = field(default_factory=lambda: _env("MGT_OUTPUT_DIR", "out"))
    log_level: str = field(default_factory=lambda: _env("MGT_LOG_LEVEL", "INFO"))
    max_workers: int = field(
        default_factory=lambda: int(_env("MGT_MAX_WORKERS", "4"))
    )
    blowup_threshold: float = field(
        default_factory=lambda: float(_env("MGT_BLOWUP_THRESHOLD", "1e6"))
    )
    blowup_growth: float = field(
        default_factory=lambda: float(_env("MGT_BLOWUP_GROWTH", "1e3"))
    )
    undershoot_tol: float = field(
        default_factory=lambda: float(_env("MGT_UNDERSHOOT_TOL", "1e-6"))
    )
