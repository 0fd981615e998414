"""Effect sizes and standard errors from 2x2 binary outcome tables."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .model import StudySet

EFFECT_TYPES = ("logOR", "logRR", "RD")


def _counts(a) -> np.ndarray:
    arr = np.asarray(a)
    if arr.ndim != 1:
        raise DomainError("counts must be 1-d vectors")
    if arr.dtype.kind == "f":
        if np.any(~np.isfinite(arr)) or np.any(arr != np.round(arr)):
            raise DomainError("counts must be integers")
    elif arr.dtype.kind not in "iu":
        raise DomainError("counts must be integers")
    return arr.astype(np.int64)


@dataclass(frozen=True, eq=False)
class BinaryStudySet:
    """Events ``m`` out of ``n`` patients in treatment (1) and control (2) arms."""

    m1: np.ndarray
    n1: np.ndarray
    m2: np.ndarray
    n2: np.ndarray
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        m1, n1, m2, n2 = (_counts(x) for x in (self.m1, self.n1, self.m2, self.n2))
        if not (m1.shape == n1.shape == m2.shape == n2.shape):
            raise DomainError("m1, n1, m2, n2 must have equal lengths")
        if np.any(n1 < 1) or np.any(n2 < 1):
            raise DomainError("every arm needs at least one patient")
        if np.any(m1 < 0) or np.any(m2 < 0) or np.any(m1 > n1) or np.any(m2 > n2):
            raise DomainError("events must satisfy 0 <= m <= n")
        labels = None if self.labels is None else tuple(str(x) for x in self.labels)
        if labels is not None and len(labels) != m1.size:
            raise DomainError("labels must have one entry per study")
        for name, arr in zip(("m1", "n1", "m2", "n2"), (m1, n1, m2, n2)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "labels", labels)

    @property
    def k(self) -> int:
        return int(self.m1.size)

    def swapped(self) -> "BinaryStudySet":
        return BinaryStudySet(self.m2, self.n2, self.m1, self.n1, self.labels)


def effect_sizes(b: BinaryStudySet, type: str = "logOR") -> tuple[np.ndarray, np.ndarray]:
    """Per-study effect estimates and within-study variances.

    Continuity corrections are applied to every table, not only those with
    empty cells: +0.5 on all four cells for logOR, +0.5 on events and totals
    for logRR, and the 1/16, 1/8 adjustment in the RD variance (the RD point
    estimate itself uses raw proportions).
    """
    m1, n1, m2, n2 = (x.astype(float) for x in (b.m1, b.n1, b.m2, b.n2))
    if type == "logOR":
        a, bb, c, d = m1 + 0.5, n1 - m1 + 0.5, m2 + 0.5, n2 - m2 + 0.5
        y = np.log((a / bb) * (d / c))
        var = 1 / a + 1 / bb + 1 / c + 1 / d
    elif type == "logRR":
        y = np.log((m1 + 0.5) * (n2 + 0.5) / ((n1 + 0.5) * (m2 + 0.5)))
        var = 1 / (m1 + 0.5) - 1 / (n1 + 0.5) + 1 / (m2 + 0.5) - 1 / (n2 + 0.5)
    elif type == "RD":
        y = m1 / n1 - m2 / n2

        def pvar(m, n):
            return (m + 1 / 16) / (n + 1 / 8) * ((n - m) + 1 / 16) / (n + 1 / 8) / n

        var = pvar(m1, n1) + pvar(m2, n2)
    else:
        raise DomainError(f"unknown effect type {type!r}; expected one of {EFFECT_TYPES}")
    return y, var


def convert_bin(b: BinaryStudySet, type: str = "logOR") -> StudySet:
    y, var = effect_sizes(b, type)
    bad = np.flatnonzero(~(var > 0))
    if bad.size:
        # the logRR variance cancels exactly when every patient in both arms has an event
        i = int(bad[0])
        name = b.labels[i] if b.labels else f"study {i + 1}"
        raise DomainError(f"{type} variance is zero for {name} ({b.m1[i]}/{b.n1[i]} vs {b.m2[i]}/{b.n2[i]})")
    return StudySet(y, np.sqrt(var), b.labels)
