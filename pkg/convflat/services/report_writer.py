"""CSV/JSON output for benchmark, training, sweep and stop-comparison results.

CSV cells carry full precision (17 significant digits); the human-readable
benchmark table uses 4.
"""

import csv
import json
import logging
import math
from collections.abc import Iterable, Sequence
from enum import Enum
from pathlib import Path
from types import TracebackType
from typing import Any, TextIO

from pydantic import BaseModel

from convflat.core.exceptions import ValidationError
from convflat.schemas.records import MethodSummary

logger = logging.getLogger(__name__)


def format_cell(value: Any) -> str:
    """Render one CSV cell; None becomes an empty cell."""
    if value is None:
        return ""
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return f"{value:.17g}"
    return str(value)


def _remove_partial(path: Path) -> None:
    try:
        path.unlink(missing_ok=True)
        logger.info(f"Removed partial output {path}")
    except OSError as e:
        logger.error(f"Could not remove partial output {path}: {e}")


class CsvReportWriter:
    """Writes rows under a fixed header, flushing after every row.

    Used as a context manager. If the block raises an ``Exception`` the file is
    removed; on ``KeyboardInterrupt`` the rows written so far are kept, so an
    interrupted sweep remains usable.
    """

    def __init__(self, path: str | Path, columns: Sequence[str]):
        self.path = Path(path)
        self.columns = tuple(columns)
        self._fh: TextIO | None = None
        self._writer: csv.DictWriter | None = None
        self.rows_written = 0

    def __enter__(self) -> "CsvReportWriter":
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("w", newline="", encoding="utf-8")
        self._writer = csv.DictWriter(self._fh, fieldnames=self.columns, lineterminator="\n")
        self._writer.writeheader()
        self._fh.flush()
        return self

    def write(self, row: dict[str, Any] | BaseModel) -> None:
        if self._writer is None or self._fh is None:
            raise RuntimeError("CsvReportWriter used outside its context")
        data = row.as_row() if hasattr(row, "as_row") else dict(row)  # type: ignore[union-attr]
        missing = [c for c in self.columns if c not in data]
        if missing:
            raise ValidationError("Row is missing CSV columns", errors={"missing": missing})
        self._writer.writerow({c: format_cell(data[c]) for c in self.columns})
        self._fh.flush()
        self.rows_written += 1

    def write_all(self, rows: Iterable[dict[str, Any] | BaseModel]) -> None:
        for row in rows:
            self.write(row)

    def __exit__(
        self,
        exc_type: type[BaseException] | None,
        exc: BaseException | None,
        tb: TracebackType | None,
    ) -> None:
        if self._fh is not None:
            self._fh.close()
        if exc_type is not None and issubclass(exc_type, Exception):
            _remove_partial(self.path)
        elif exc_type is not None:
            logger.warning(
                f"Interrupted; kept {self.rows_written} rows in {self.path}",
                extra={"props": {"rows": self.rows_written}},
            )


def write_csv(
    path: str | Path, columns: Sequence[str], rows: Iterable[dict[str, Any] | BaseModel]
) -> int:
    with CsvReportWriter(path, columns) as writer:
        writer.write_all(rows)
    logger.info(f"Wrote {writer.rows_written} rows to {path}")
    return writer.rows_written


def _json_value(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_json(path: str | Path, payload: BaseModel | dict[str, Any]) -> None:
    """Write a flat JSON object; non-finite floats become null."""
    target = Path(path)
    data = payload.model_dump(mode="json") if isinstance(payload, BaseModel) else payload
    text = json.dumps({k: _json_value(v) for k, v in data.items()}, indent=2) + "\n"
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text, encoding="utf-8")
    except Exception:
        _remove_partial(target)
        raise
    logger.info(f"Wrote {target}")


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _sig4(value: float | None) -> str:
    if value is None:
        return "-"
    return f"{value:.4g}"


def render_bench_table(summaries: Sequence[MethodSummary]) -> str:
    """Mean ± std per method, 4 significant figures; skipped methods show 'skipped'."""
    header = f"{'method':<16}{'trace':>24}{'abs error':>24}{'flatness':>24}{'time (s)':>12}"
    lines = [header, "-" * len(header)]
    for s in summaries:
        if s.skipped:
            lines.append(f"{s.method.value:<16}{'skipped (over cap)':>24}")
            continue
        trace = f"{_sig4(s.trace_mean)} ± {_sig4(s.trace_std)}"
        err = (
            f"{_sig4(s.abs_err_mean)} ± {_sig4(s.abs_err_std)}"
            if s.abs_err_mean is not None
            else "-"
        )
        flat = f"{_sig4(s.flatness_mean)} ± {_sig4(s.flatness_std)}"
        lines.append(
            f"{s.method.value:<16}{trace:>24}{err:>24}{flat:>24}{_sig4(s.time_mean_s):>12}"
        )
    return "\n".join(lines)
