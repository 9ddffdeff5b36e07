import os
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, fields, replace
from functools import lru_cache
from pathlib import Path
from typing import Optional

from ncgg.errors import ValidationError

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parents[1] / "config.toml"

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


@dataclass(frozen=True)
class Settings:
    """Tunable defaults shared by the solvers, the experiment suites and the CLI."""

    epsilon: float = 0.1
    max_rounds: int = 200000
    schedule: str = "stale-only"
    initial_state: str = "random"
    dp_cell_budget: int = 10_000_000
    ukp_capacity_limit: int = 30
    fw_iterations: int = 10000
    database_url: str = "sqlite:///ncgg_runs.db"
    log_level: str = "INFO"
    seed: Optional[int] = None


def _env_overrides(settings):
    """Apply NCGG_* environment variables on top of file settings."""
    overrides = {}

    seed = os.getenv('NCGG_SEED')
    if seed:
        try:
            overrides['seed'] = int(seed)
        except ValueError:
            raise ValidationError(f"NCGG_SEED must be an integer, got {seed!r}")

    database_url = os.getenv('NCGG_DATABASE_URL')
    if database_url:
        overrides['database_url'] = database_url

    log_level = os.getenv('NCGG_LOG_LEVEL')
    if log_level:
        overrides['log_level'] = log_level.upper()

    return replace(settings, **overrides) if overrides else settings


def load_settings(path=None):
    """
    Load settings from the [ncgg] table of a TOML file.

    Args:
        path: Config file; falls back to NCGG_CONFIG, then the repository config.toml.

    Returns:
        Settings: File values over built-in defaults, then environment overrides.
    """
    if path is None:
        path = os.getenv('NCGG_CONFIG') or DEFAULT_CONFIG_PATH
    path = Path(path)

    values = {}
    if path.exists():
        with path.open('rb') as fh:
            document = tomllib.load(fh)
        values = document.get('ncgg', {})

    known = {f.name for f in fields(Settings)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ValidationError(f"Unknown settings in {path}: {', '.join(unknown)}")

    return _env_overrides(Settings(**values))


@lru_cache(maxsize=1)
def get_settings():
    """Get the cached process-wide settings."""
    return load_settings()


_logging_configured = False


def configure_logging(level=None):
    """Configure root logging once; later calls only adjust the level."""
    global _logging_configured
    level = (level or get_settings().log_level).upper()

    if not _logging_configured:
        logging.basicConfig(format=LOG_FORMAT)
        _logging_configured = True

    logging.getLogger().setLevel(level)
