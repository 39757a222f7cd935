"""CSV ingestion and serialization for datasets, cross-sections and bound grids.

Dataset files have the header `t,p_1..p_K,x_1..x_K`; cross-section files
`X,P,Y,W_1..W_d`. Floats are written with 17 significant digits so a written
file re-reads to identical values. Infinite values use the tokens inf / -inf.
"""

import json
import math
import re
import sys
from pathlib import Path
from typing import Any, TextIO

import numpy as np
import pandas as pd

from quasilinear_welfare.common.logging import get_logger
from quasilinear_welfare.domain.model import Dataset, validate
from quasilinear_welfare.estimation.kernel import CrossSection, EstimationError

logger = get_logger(__name__)

FLOAT_FORMAT = "%.17g"
HEADER_LINE = 1


class InputFormatError(ValueError):
    """Raised when an input file cannot be parsed; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")


def _read_frame(path: Path | str) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=False)
    except pd.errors.EmptyDataError as e:
        raise InputFormatError("empty file", line=HEADER_LINE) from e
    except pd.errors.ParserError as e:
        raise InputFormatError(f"malformed CSV: {e}") from e
    except FileNotFoundError as e:
        raise InputFormatError(f"file not found: {path}") from e

    frame.columns = [str(c).strip() for c in frame.columns]
    if frame.empty:
        raise InputFormatError("no data rows after the header", line=HEADER_LINE + 1)
    return frame


def _numeric(frame: pd.DataFrame, columns: list[str]) -> np.ndarray:
    """Convert `columns` to float, reporting the first unparsable cell by file line."""
    values = np.empty((len(frame), len(columns)))
    for j, name in enumerate(columns):
        raw = frame[name].str.strip()
        parsed = pd.to_numeric(raw, errors="coerce")
        bad = parsed.isna() & ~raw.str.lower().eq("nan")
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            cell = raw.iloc[row]
            what = "empty value" if not isinstance(cell, str) or cell == "" else f"cannot parse {cell!r} as a number"
            raise InputFormatError(f"{what} in column {name}", line=row + HEADER_LINE + 1)
        values[:, j] = parsed.to_numpy(dtype=np.float64)
    return values


def _indexed_columns(columns: list[str], prefix: str) -> list[str]:
    pattern = re.compile(rf"^{prefix}_(\d+)$")
    found = sorted((int(m.group(1)), c) for c in columns if (m := pattern.match(c)))
    indices = [i for i, _ in found]
    if indices != list(range(1, len(indices) + 1)):
        raise InputFormatError(f"columns {prefix}_1..{prefix}_n must be numbered consecutively", line=HEADER_LINE)
    return [c for _, c in found]


def read_dataset(path: Path | str) -> Dataset:
    """Read and validate a dataset CSV.

    Raises:
        InputFormatError: bad header, unparsable cell, wrong t column or a
            violated dataset invariant (the line of the first offending row is reported)
    """
    frame = _read_frame(path)
    columns = list(frame.columns)
    if not columns or columns[0] != "t":
        raise InputFormatError("first column must be t", line=HEADER_LINE)
    price_cols = _indexed_columns(columns, "p")
    quantity_cols = _indexed_columns(columns, "x")
    if not price_cols or len(price_cols) != len(quantity_cols):
        raise InputFormatError(
            f"need p_1..p_K and x_1..x_K with K >= 1, got {len(price_cols)} price and "
            f"{len(quantity_cols)} quantity columns",
            line=HEADER_LINE,
        )
    extra = set(columns) - {"t", *price_cols, *quantity_cols}
    if extra:
        raise InputFormatError(f"unexpected columns: {sorted(extra)}", line=HEADER_LINE)

    t = _numeric(frame, ["t"])[:, 0]
    expected = np.arange(1, len(frame) + 1)
    if not np.array_equal(t, expected):
        row = int(np.flatnonzero(t != expected)[0])
        raise InputFormatError(f"t must count 1..T, found {t[row]:g}", line=row + HEADER_LINE + 1)

    dataset = Dataset(prices=_numeric(frame, price_cols), quantities=_numeric(frame, quantity_cols))
    violations = validate(dataset)
    if violations:
        first = violations[0]
        line = first.row + HEADER_LINE if first.row is not None else None
        raise InputFormatError(str(first), line=line)

    logger.info("Read dataset with T=%d, K=%d from %s", dataset.T, dataset.K, path)
    return dataset


def dataset_frame(dataset: Dataset) -> pd.DataFrame:
    frame = pd.DataFrame({"t": np.arange(1, dataset.T + 1)})
    for k in range(dataset.K):
        frame[f"p_{k + 1}"] = dataset.prices[:, k]
    for k in range(dataset.K):
        frame[f"x_{k + 1}"] = dataset.quantities[:, k]
    return frame


def read_cross_section(path: Path | str) -> CrossSection:
    """Read a cross-section CSV (`X,P,Y,W_1..W_d`, d may be 0)."""
    frame = _read_frame(path)
    columns = list(frame.columns)
    if columns[:3] != ["X", "P", "Y"]:
        raise InputFormatError("header must start with X,P,Y", line=HEADER_LINE)
    covariates = _indexed_columns(columns, "W")
    if len(columns) != 3 + len(covariates):
        raise InputFormatError(f"unexpected columns: {columns[3:]}", line=HEADER_LINE)

    values = _numeric(frame, ["X", "P", "Y"])
    nonpositive = np.flatnonzero(values[:, 1] <= 0)
    if nonpositive.size:
        raise InputFormatError("nonpositive price", line=int(nonpositive[0]) + HEADER_LINE + 1)
    W = _numeric(frame, covariates) if covariates else np.zeros((len(frame), 0))
    try:
        cs = CrossSection(X=values[:, 0], P=values[:, 1], Y=values[:, 2], W=W)
    except EstimationError as e:
        raise InputFormatError(str(e)) from e

    logger.info("Read cross-section with n=%d, d_W=%d from %s", cs.n, cs.d_w, path)
    return cs


def cross_section_frame(cs: CrossSection) -> pd.DataFrame:
    frame = pd.DataFrame({"X": cs.X, "P": cs.P, "Y": cs.Y})
    for j in range(cs.d_w):
        frame[f"W_{j + 1}"] = cs.W[:, j]
    return frame


def write_frame(frame: pd.DataFrame, output: Path | str | TextIO | None = None) -> None:
    """Write a frame as CSV to `output` (stdout when None)."""
    target = sys.stdout if output is None else output
    frame.to_csv(target, index=False, float_format=FLOAT_FORMAT, na_rep="nan", lineterminator="\n")
    if output is not None:
        logger.info("Wrote %d rows to %s", len(frame), output)


def write_dataset(dataset: Dataset, output: Path | str | TextIO | None = None) -> None:
    write_frame(dataset_frame(dataset), output)


def write_cross_section(cs: CrossSection, output: Path | str | TextIO | None = None) -> None:
    write_frame(cross_section_frame(cs), output)


def json_safe(value: Any) -> Any:
    """Replace non-finite floats by the inf / -inf / nan tokens; numpy scalars become Python ones."""
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return "nan" if math.isnan(value) else ("inf" if value > 0 else "-inf")
    if isinstance(value, dict):
        return {str(k): json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [json_safe(v) for v in value]
    return value


def write_json(report: Any, output: Path | str | TextIO | None = None) -> None:
    text = json.dumps(json_safe(report), indent=2) + "\n"
    if output is None:
        sys.stdout.write(text)
    elif isinstance(output, (str, Path)):
        Path(output).write_text(text)
        logger.info("Wrote report to %s", output)
    else:
        output.write(text)
