import json
import logging

import pytest

from convflat.core.config import Settings
from convflat.logging_config import JsonFormatter, PropsTextFormatter, setup_logging

# --- Fixtures ---


@pytest.fixture
def log_record():
    """Provides a LogRecord carrying structured props."""
    record = logging.LogRecord(
        name="convflat.training.trainer",
        level=logging.WARNING,
        pathname=__file__,
        lineno=7,
        msg="Training diverged",
        args=(),
        exc_info=None,
    )
    record.props = {"epoch": 3, "loss": float("nan")}
    return record


@pytest.fixture
def restore_root_logger():
    """Puts the root logger's handlers and level back after the test."""
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield root
    root.handlers[:] = handlers
    root.setLevel(level)


# --- Test Cases ---


def test_json_formatter_flattens_props(log_record):
    entry = json.loads(JsonFormatter().format(log_record))
    assert entry["message"] == "Training diverged"
    assert entry["level"] == "WARNING"
    assert entry["logger_name"] == "convflat.training.trainer"
    assert entry["epoch"] == 3
    assert entry["loss"] == "nan"


def test_text_formatter_appends_props(log_record):
    line = PropsTextFormatter("%(levelname)s %(message)s").format(log_record)
    assert line == "WARNING Training diverged | epoch=3 loss=nan"


def test_setup_logging_installs_one_stderr_handler(restore_root_logger):
    setup_logging("debug", "text")
    setup_logging("warning", "json")

    assert restore_root_logger.level == logging.WARNING
    assert len(restore_root_logger.handlers) == 1
    assert isinstance(restore_root_logger.handlers[0].formatter, JsonFormatter)


def test_setup_logging_rejects_unknown_level(restore_root_logger):
    with pytest.raises(ValueError, match="Invalid log level"):
        setup_logging("chatty")


def test_settings_read_prefixed_environment(monkeypatch):
    monkeypatch.setenv("CONVFLAT_SEED", "17")
    monkeypatch.setenv("CONVFLAT_RECORD_TIMING", "false")
    monkeypatch.setenv("CONVFLAT_JOBS", "3")
    cfg = Settings()

    assert cfg.SEED == 17
    assert cfg.RECORD_TIMING is False
    assert cfg.resolved_jobs() == 3
    assert cfg.DENSE_HESSIAN_CAP == 2048
