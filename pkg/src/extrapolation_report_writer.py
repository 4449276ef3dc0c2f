"""Report emission: key: value text, one-row CSV, and the Markdown summary."""

import io
import logging
import math
import sys
from pathlib import Path
from typing import Iterable, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd

from src.extrapolation_errors import InvalidInput, IoError, NonFiniteResult

logger = logging.getLogger(__name__)

FORMATS = ("text", "csv")
CSV_FLOAT_FORMAT = "%.17g"


def _plain(value):
    if isinstance(value, np.generic):
        return value.item()
    return value


def format_value(value) -> str:
    """Shortest round-trip repr for floats, ``inf`` for infinity; NaN is an error."""
    value = _plain(value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            raise NonFiniteResult("NaN in report")
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    if isinstance(value, (list, tuple, np.ndarray)):
        return " ".join(format_value(v) for v in np.ravel(np.asarray(value, dtype=object)))
    return str(value)


def _check_finite(result: Mapping[str, object]) -> None:
    for key, value in result.items():
        value = _plain(value)
        if isinstance(value, float) and math.isnan(value):
            raise NonFiniteResult(f"NaN in report field {key!r}")


def render_report(result: Mapping[str, object], fmt: str = "text") -> str:
    if fmt not in FORMATS:
        raise InvalidInput(f"format must be one of {FORMATS}, got {fmt!r}")
    _check_finite(result)
    if fmt == "text":
        return "".join(f"{key}: {format_value(value)}\n" for key, value in result.items())
    row = {}
    for key, value in result.items():
        value = _plain(value)
        row[key] = format_value(value) if isinstance(value, (list, tuple, np.ndarray)) else value
    buffer = io.StringIO()
    pd.DataFrame([row], columns=list(result.keys())).to_csv(buffer, index=False, float_format=CSV_FLOAT_FORMAT)
    return buffer.getvalue()


def emit_report(result: Mapping[str, object], fmt: str = "text", path: Optional[Union[str, Path]] = None) -> str:
    """Write the report to ``path`` (stdout when None) and return the rendered text."""
    text = render_report(result, fmt)
    if path is None:
        sys.stdout.write(text)
        return text
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot write report to {path}: {e}") from e
    logger.info(f"report written to {path}")
    return text


def check_writable(path: Union[str, Path]) -> None:
    """Fail before any computation if ``path`` cannot be created."""
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise IoError(f"output directory does not exist: {parent}")
    if Path(path).is_dir():
        raise IoError(f"output path is a directory: {path}")


def build_table(df: pd.DataFrame) -> str:
    headers = [str(c) for c in df.columns]
    lines = ["| " + " | ".join(headers) + " |", "|" + "|".join(["---"] * len(headers)) + "|"]
    for _, row in df.iterrows():
        lines.append("| " + " | ".join(format_value(row[c]) for c in df.columns) + " |")
    return "\n".join(lines)


def build_key_value_table(result: Mapping[str, object]) -> str:
    lines = ["| 字段 | 取值 |", "|---|---|"]
    for key, value in result.items():
        lines.append(f"| {key} | {format_value(value)} |")
    return "\n".join(lines)


def generate_markdown_summary(
    sections: Iterable[Tuple[str, Union[Mapping[str, object], pd.DataFrame]]],
    path: Union[str, Path],
    title: str = "外推误差比证书汇总报告",
) -> Path:
    """Markdown report with one section per (heading, result) pair."""
    lines: list[str] = []
    lines.append(f"# {title}")
    lines.append("")
    for heading, content in sections:
        lines.append(f"## {heading}")
        if isinstance(content, pd.DataFrame):
            lines.append(build_table(content))
        else:
            lines.append(build_key_value_table(content))
        lines.append("")

    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines))
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e
    return path
