import logging
from dataclasses import dataclass

import colorlog
from decouple import config as decouple_config

LOG_FORMAT = (
    "%(log_color)s%(levelname)-8s%(reset)s %(blue)s%(name)s%(reset)s %(message)s"
)
LOG_COLORS = {
    "DEBUG": "cyan",
    "INFO": "green",
    "WARNING": "yellow",
    "ERROR": "red",
    "CRITICAL": "bold_red",
}


@dataclass(frozen=True)
class Settings:
    log_level: str
    seed: int
    lmax: int
    scaling: float
    restarts: int
    variant: int
    s: float
    iterations: int
    dense_cap: int
    jobs: int


def _env_str(key: str, default: str) -> str:
    return str(decouple_config(key, default=default))


def _env_int(key: str, default: int) -> int:
    return int(str(decouple_config(key, default=str(default))))


def _env_float(key: str, default: float) -> float:
    return float(str(decouple_config(key, default=str(default))))


def load_settings() -> Settings:
    return Settings(
        log_level=_env_str("COMPAT_LOG_LEVEL", "INFO"),
        seed=_env_int("COMPAT_SEED", 0),
        lmax=_env_int("COMPAT_LMAX", 5),
        scaling=_env_float("COMPAT_LAMBDA", 10.0),
        restarts=_env_int("COMPAT_RESTARTS", 10),
        variant=_env_int("COMPAT_VARIANT", 1),
        s=_env_float("COMPAT_S", 0.5),
        iterations=_env_int("COMPAT_ITERATIONS", 10),
        dense_cap=_env_int("COMPAT_DENSE_CAP", 2000),
        jobs=_env_int("COMPAT_JOBS", 1),
    )


def setup_logging(log_level: str) -> None:
    numeric_level = getattr(logging, log_level.upper(), logging.INFO)
    handler = colorlog.StreamHandler()
    handler.setFormatter(
        colorlog.ColoredFormatter(LOG_FORMAT, log_colors=LOG_COLORS)
    )
    root = logging.getLogger()
    root.handlers.clear()
    root.addHandler(handler)
    root.setLevel(numeric_level)
