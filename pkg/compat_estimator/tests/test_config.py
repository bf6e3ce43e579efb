from __future__ import annotations

import logging
from collections.abc import Iterator

import colorlog
import pytest

from compat_estimator.config import load_settings, setup_logging
from compat_estimator.types import EstimatorConfig


@pytest.fixture
def root_logger() -> Iterator[logging.Logger]:
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield root
    root.handlers[:] = handlers
    root.setLevel(level)


def test_settings_defaults(monkeypatch: pytest.MonkeyPatch) -> None:
    for key in ("COMPAT_LOG_LEVEL", "COMPAT_LMAX", "COMPAT_LAMBDA", "COMPAT_JOBS"):
        monkeypatch.delenv(key, raising=False)
    settings = load_settings()
    assert settings.log_level == "INFO"
    assert settings.lmax == 5
    assert settings.scaling == 10.0
    assert settings.jobs == 1


def test_settings_from_environment(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv("COMPAT_LAMBDA", "2.5")
    monkeypatch.setenv("COMPAT_RESTARTS", "4")
    monkeypatch.setenv("COMPAT_DENSE_CAP", "500")
    settings = load_settings()
    assert settings.scaling == 2.5
    assert settings.restarts == 4
    assert settings.dense_cap == 500


def test_setup_logging_installs_colored_handler(root_logger: logging.Logger) -> None:
    setup_logging("debug")
    assert root_logger.level == logging.DEBUG
    assert len(root_logger.handlers) == 1
    assert isinstance(root_logger.handlers[0].formatter, colorlog.ColoredFormatter)


def test_setup_logging_unknown_level_falls_back_to_info(
    root_logger: logging.Logger,
) -> None:
    setup_logging("chatty")
    assert root_logger.level == logging.INFO


def test_estimator_delta_default_scales_with_classes() -> None:
    assert EstimatorConfig().delta_for(3) == pytest.approx(0.7 / 9)
    assert EstimatorConfig(delta=0.01).delta_for(3) == 0.01
