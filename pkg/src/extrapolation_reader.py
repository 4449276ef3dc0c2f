"""Text-format loaders for joint tables, point sets, specs and flat configs."""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.extrapolation_discrete import DiscreteJoint
from src.extrapolation_errors import ConfigError, InvalidInput, IoError
from src.extrapolation_gaussian import BlockGaussianSpec, CorrelationSpec

logger = logging.getLogger(__name__)

RENORMALIZE_TOL = 1e-6
CORRELATION_KEYS = ("sigma", "cov", "means", "stds")
BLOCK_KEYS = ("sigma12",)


def _read_lines(path) -> List[str]:
    path = Path(path)
    try:
        return path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e


def _strip_comment(line: str) -> str:
    return line.split("#", 1)[0].strip()


def _read_cells(path) -> Tuple[Tuple[int, ...], np.ndarray]:
    """
    读取 `arities: r1 ... rk` 格式的表格文件

    Args:
        path: 文件路径；表头之后每行 `i1 ... ik value`，下标从 1 开始，未列出的格子为 0

    Returns:
        tuple: (arities, 稠密数组)
    """
    arities: Optional[Tuple[int, ...]] = None
    table = None
    seen = set()
    for lineno, raw in enumerate(_read_lines(path), start=1):
        line = _strip_comment(raw)
        if not line:
            continue
        if arities is None:
            head, sep, rest = line.partition(":")
            if not sep or head.strip() != "arities":
                raise InvalidInput(f"{path}:{lineno}: expected header 'arities: r1 ... rk'")
            try:
                arities = tuple(int(tok) for tok in rest.split())
            except ValueError:
                raise InvalidInput(f"{path}:{lineno}: arities must be integers") from None
            if len(arities) < 2 or any(r < 1 for r in arities):
                raise InvalidInput(f"{path}:{lineno}: need at least two positive arities")
            table = np.zeros(arities)
            continue
        tokens = line.split()
        if len(tokens) != len(arities) + 1:
            raise InvalidInput(f"{path}:{lineno}: expected {len(arities)} indices and a value")
        try:
            index = tuple(int(tok) - 1 for tok in tokens[:-1])
            value = float(tokens[-1])
        except ValueError:
            raise InvalidInput(f"{path}:{lineno}: malformed cell line {line!r}") from None
        if any(not 0 <= i < r for i, r in zip(index, arities)):
            raise InvalidInput(f"{path}:{lineno}: index {tokens[:-1]} outside arities {arities}")
        if index in seen:
            raise InvalidInput(f"{path}:{lineno}: cell {tokens[:-1]} listed twice")
        seen.add(index)
        table[index] = value
    if arities is None:
        raise InvalidInput(f"{path}: missing 'arities:' header")
    return arities, table


def read_joint(path) -> DiscreteJoint:
    _, table = _read_cells(path)
    return DiscreteJoint(table)


def read_label_table(path, arities: Optional[Sequence[int]] = None) -> np.ndarray:
    """Label table y(x) in the joint-table format (any real values)."""
    found, table = _read_cells(path)
    if arities is not None and tuple(arities) != found:
        raise InvalidInput(f"{path}: label arities {found} do not match {tuple(arities)}")
    return table


def write_joint(J: DiscreteJoint, path) -> None:
    lines = ["arities: " + " ".join(str(r) for r in J.arities)]
    for index in zip(*np.nonzero(J.table)):
        cell = " ".join(str(i + 1) for i in index)
        lines.append(f"{cell} {float(J.table[index])!r}")
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def read_points(path) -> np.ndarray:
    """Whitespace-separated vectors, one per line, renormalized to unit length."""
    _read_lines(path)
    try:
        frame = pd.read_csv(path, sep=r"\s+", header=None, comment="#", dtype=np.float64,
                            float_precision="round_trip")
    except pd.errors.EmptyDataError:
        return np.zeros((0, 0))
    except (ValueError, pd.errors.ParserError) as e:
        raise InvalidInput(f"{path}: malformed point file: {e}") from e
    X = frame.to_numpy()
    if not np.all(np.isfinite(X)):
        raise InvalidInput(f"{path}: points must be finite (one vector per line, equal lengths)")
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0.0):
        raise InvalidInput(f"{path}: zero vector cannot be normalized")
    deviation = float(np.max(np.abs(norms - 1.0)))
    if deviation > RENORMALIZE_TOL:
        logger.warning(f"{path}: points deviate from unit norm by up to {deviation:.3g}; renormalizing")
    return X / norms[:, None]


def write_points(X, path) -> None:
    try:
        pd.DataFrame(np.asarray(X)).to_csv(path, sep=" ", header=False, index=False, float_format="%.17g")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def read_vector(path) -> np.ndarray:
    """All numbers in a file, in order, as one vector."""
    tokens = " ".join(_strip_comment(line) for line in _read_lines(path)).split()
    try:
        return np.array([float(tok) for tok in tokens])
    except ValueError:
        raise InvalidInput(f"{path}: expected whitespace-separated numbers") from None


def read_key_value_config(path) -> Dict[str, str]:
    """
    读取扁平 `key = value` 配置文件

    Args:
        path: UTF-8 文本，`#` 之后为注释

    Returns:
        dict: 键到原始字符串值的映射；重复键或格式错误抛出 ConfigError
    """
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(_read_lines(path), start=1):
        line = _strip_comment(raw)
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def parse_vector(text: str, name: str = "vector") -> np.ndarray:
    try:
        return np.array([float(tok) for tok in text.replace(",", " ").split()])
    except ValueError:
        raise ConfigError(f"{name}: expected numbers, got {text!r}") from None


def parse_matrix(text: str, name: str = "matrix") -> np.ndarray:
    """Rows separated by ';', entries by whitespace or ','."""
    rows = [parse_vector(row, name) for row in text.split(";") if row.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ConfigError(f"{name}: rows must be non-empty and of equal length")
    return np.vstack(rows)


def _reject_unknown(values: Dict[str, str], allowed: Sequence[str], path) -> None:
    for key in values:
        if key not in allowed:
            raise ConfigError(f"{path}: unknown key {key!r} (allowed: {', '.join(allowed)})")


def correlation_spec_from_mapping(values: Dict[str, str], source: str = "spec") -> CorrelationSpec:
    _reject_unknown(values, CORRELATION_KEYS, source)
    if ("sigma" in values) == ("cov" in values):
        raise ConfigError(f"{source}: give exactly one of 'sigma' or 'cov'")
    means = parse_vector(values["means"], "means") if "means" in values else None
    if "cov" in values:
        if "stds" in values:
            raise ConfigError(f"{source}: 'stds' is implied by 'cov'")
        return CorrelationSpec.from_covariance(parse_matrix(values["cov"], "cov"), means)
    stds = parse_vector(values["stds"], "stds") if "stds" in values else None
    return CorrelationSpec(parse_matrix(values["sigma"], "sigma"), means=means, stds=stds)


def read_correlation_spec(path) -> CorrelationSpec:
    return correlation_spec_from_mapping(read_key_value_config(path), str(path))


def read_block_spec(path) -> BlockGaussianSpec:
    values = read_key_value_config(path)
    _reject_unknown(values, BLOCK_KEYS, path)
    if "sigma12" not in values:
        raise ConfigError(f"{path}: missing 'sigma12'")
    return BlockGaussianSpec(parse_matrix(values["sigma12"], "sigma12"))
