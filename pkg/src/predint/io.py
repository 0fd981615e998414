"""CSV ingestion/export and the bundled example datasets."""

from __future__ import annotations

import csv
import io
import math
from importlib import resources
from pathlib import Path

import numpy as np

from .conversion import BinaryStudySet
from .errors import DataError, DomainError
from .model import StudySet

DATASETS = ("sbp", "cisapride")
BINARY_COLUMNS = ("m1", "n1", "m2", "n2")


def _number(cell: str, col: str, line: int) -> float:
    try:
        x = float(cell)
    except (TypeError, ValueError):
        raise DataError(f"row {line}: column {col!r} is not numeric ({cell!r})") from None
    if not math.isfinite(x):
        raise DataError(f"row {line}: column {col!r} is not finite ({cell!r})")
    return x


def _integer(cell: str, col: str, line: int) -> int:
    x = _number(cell, col, line)
    if x != int(x):
        raise DataError(f"row {line}: column {col!r} must be an integer ({cell!r})")
    return int(x)


def parse_text(text: str, source: str = "<input>") -> StudySet | BinaryStudySet:
    """Parse CSV text with a header row.

    Columns ``y`` plus exactly one of ``se``/``v`` give a :class:`StudySet`;
    columns ``m1, n1, m2, n2`` give a :class:`BinaryStudySet`.  ``label`` is
    optional in both layouts.  Row numbers in error messages count the
    header as row 1.
    """
    if not text.strip():
        raise DataError(f"{source}: empty file")
    reader = csv.reader(io.StringIO(text))
    rows = [r for r in reader if r and any(c.strip() for c in r)]
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise DataError(f"{source}: duplicate column names in header")
    body = rows[1:]
    if not body:
        raise DataError(f"{source}: no data rows")
    cols = {name: i for i, name in enumerate(header)}
    labels = [] if "label" in cols else None

    def cell(row, name, line):
        idx = cols[name]
        if idx >= len(row):
            raise DataError(f"row {line}: missing value for column {name!r}")
        return row[idx].strip()

    if "y" in cols:
        has_se, has_v = "se" in cols, "v" in cols
        if has_se == has_v:
            raise DataError(f"{source}: specify exactly one of the columns 'se' or 'v'")
        scale_col = "se" if has_se else "v"
        y, scale = [], []
        for line, row in enumerate(body, start=2):
            y.append(_number(cell(row, "y", line), "y", line))
            x = _number(cell(row, scale_col, line), scale_col, line)
            if x <= 0:
                raise DataError(f"row {line}: {scale_col} must be > 0 (got {x})")
            scale.append(x)
            if labels is not None:
                labels.append(cell(row, "label", line))
        sigma = np.array(scale) if has_se else np.sqrt(scale)
        try:
            return StudySet(y, sigma, labels)
        except DomainError as exc:
            raise DataError(f"{source}: {exc}") from None

    if all(c in cols for c in BINARY_COLUMNS):
        counts = {c: [] for c in BINARY_COLUMNS}
        for line, row in enumerate(body, start=2):
            vals = {c: _integer(cell(row, c, line), c, line) for c in BINARY_COLUMNS}
            for arm in ("1", "2"):
                m, n = vals["m" + arm], vals["n" + arm]
                if n < 1:
                    raise DataError(f"row {line}: n{arm} must be >= 1 (got {n})")
                if not 0 <= m <= n:
                    raise DataError(f"row {line}: need 0 <= m{arm} <= n{arm} (got {m}/{n})")
            for c in BINARY_COLUMNS:
                counts[c].append(vals[c])
            if labels is not None:
                labels.append(cell(row, "label", line))
        return BinaryStudySet(*(counts[c] for c in BINARY_COLUMNS), labels=labels)

    raise DataError(f"{source}: header must contain 'y' with 'se' or 'v', or the columns m1, n1, m2, n2")


def parse_csv(path) -> StudySet | BinaryStudySet:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from None
    return parse_text(text, str(path))


def dataset_text(name: str) -> str:
    if name not in DATASETS:
        raise DataError(f"unknown dataset {name!r}; available: {', '.join(DATASETS)}")
    return resources.files("predint").joinpath("data", f"{name}.csv").read_text(encoding="utf-8")


def load_dataset(name: str) -> StudySet | BinaryStudySet:
    return parse_text(dataset_text(name), name)


def studies_to_csv(s: StudySet) -> str:
    """CSV text (``y,se[,label]``) that parses back to identical floats."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if s.labels is None:
        writer.writerow(["y", "se"])
        writer.writerows([repr(float(a)), repr(float(b))] for a, b in zip(s.y, s.sigma))
    else:
        writer.writerow(["y", "se", "label"])
        writer.writerows(
            [repr(float(a)), repr(float(b)), lab] for a, b, lab in zip(s.y, s.sigma, s.labels)
        )
    return buf.getvalue()


def write_csv(s: StudySet, path) -> None:
    Path(path).write_text(studies_to_csv(s), encoding="utf-8")
