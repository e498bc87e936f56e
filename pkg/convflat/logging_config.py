import json
import logging
import math
import sys
from datetime import UTC, datetime

from convflat.core.config import settings

TEXT_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def _json_safe(value: object) -> object:
    # json.dumps writes NaN/Infinity, which is not JSON
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


class JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        log_entry = {
            "timestamp": datetime.fromtimestamp(record.created, UTC).isoformat(),
            "level": record.levelname,
            "message": record.getMessage(),
            "logger_name": record.name,
            "func_name": record.funcName,
            "line_no": record.lineno,
        }
        if record.exc_info:
            log_entry["exception"] = self.formatException(record.exc_info)
        props = getattr(record, "props", None)
        if isinstance(props, dict):
            log_entry.update({k: _json_safe(v) for k, v in props.items()})
        return json.dumps(log_entry, default=str)


class PropsTextFormatter(logging.Formatter):
    """Plain text lines with the structured props appended as key=value."""

    def format(self, record: logging.LogRecord) -> str:
        line = super().format(record)
        props = getattr(record, "props", None)
        if isinstance(props, dict) and props:
            line += " | " + " ".join(f"{k}={v}" for k, v in props.items())
        return line


def setup_logging(log_level: str | None = None, log_format: str | None = None) -> None:
    log_level = (log_level or settings.LOG_LEVEL).upper()
    numeric_level = getattr(logging, log_level, None)
    if not isinstance(numeric_level, int):
        raise ValueError(f"Invalid log level: {log_level}")

    root_logger = logging.getLogger()
    root_logger.setLevel(numeric_level)

    # Remove default handlers
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    fmt = log_format or settings.LOG_FORMAT
    formatter: logging.Formatter = (
        JsonFormatter() if fmt == "json" else PropsTextFormatter(TEXT_FORMAT)
    )

    # stderr: stdout carries the CLI's human-readable tables
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(formatter)
    root_logger.addHandler(console_handler)

    # Example of adding props to a log record:
    # logger = logging.getLogger(__name__)
    # logger.info("Run finished", extra={"props": {"seed": 3, "epochs": 41}})
