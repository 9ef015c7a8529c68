"""Data model, CSV ingestion and validation for truncated survival data.

A subject is observed as ``(t, l, r, z)``: event time ``t``, left truncation
time ``l`` and right truncation time ``r``, with ``l <= t <= r``. Missing
truncation on one side is written as the sentinel ``-inf`` (left) or ``inf``
(right). In memory the sentinels are IEEE infinities and the dataset also
carries boolean masks, so no code path ever mistakes them for large finite
numbers.
"""

from __future__ import annotations

import csv
import hashlib
import math
import re
import warnings
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    EmptyDataset,
    MissingColumn,
    NonNumericCell,
    TruncationViolation,
    ValidationError,
)

NEG_INF_TOKEN = "-inf"
POS_INF_TOKEN = "inf"
MODES = ("double", "left-only", "right-only", "none")


@dataclass(frozen=True)
class SubjectRecord:
    """One observed unit.

    Attributes
    ----------
    t : float
        Event time, finite and strictly positive.
    l : float
        Left truncation time; ``-inf`` when the subject is not left truncated.
    r : float
        Right truncation time; ``inf`` when the subject is not right truncated.
    z : tuple of float
        Covariate vector.
    """

    t: float
    l: float
    r: float
    z: tuple

    @property
    def left_finite(self) -> bool:
        return math.isfinite(self.l)

    @property
    def right_finite(self) -> bool:
        return math.isfinite(self.r)

    def is_observable(self) -> bool:
        return self.l <= self.t <= self.r


def _check_row(i: int, t: float, l: float, r: float, z) -> None:
    """Raise TruncationViolation for row ``i`` (1-based) if it is inadmissible."""
    if not (math.isfinite(t) and t > 0):
        raise TruncationViolation(i, f"event time {t!r} must be finite and > 0")
    if math.isnan(l) or l == math.inf:
        raise TruncationViolation(i, f"left truncation time {l!r} is not a valid value")
    if math.isnan(r) or r == -math.inf:
        raise TruncationViolation(i, f"right truncation time {r!r} is not a valid value")
    if not l <= t <= r:
        raise TruncationViolation(i, f"left <= time <= right fails ({l!r}, {t!r}, {r!r})")
    if not all(math.isfinite(v) for v in z):
        raise TruncationViolation(i, "covariates must be finite")


def distinct_failure_times(records) -> tuple[np.ndarray, float]:
    """Ordered distinct event times and their maximum.

    Parameters
    ----------
    records : sequence of SubjectRecord, or array of event times

    Returns
    -------
    times : ndarray
        Strictly increasing distinct event times ``t_1 < ... < t_d``.
    tau : float
        ``t_d``.
    """
    if isinstance(records, np.ndarray):
        t = records.astype(float).ravel()
    else:
        t = np.array([rec.t for rec in records], dtype=float)
    if t.size == 0:
        raise EmptyDataset()
    times = np.unique(t)
    return times, float(times[-1])


class TruncatedDataset:
    """Validated, immutable collection of truncated survival records.

    Parameters
    ----------
    time, left, right : array_like, shape (n,)
        Event and truncation times. Use ``-np.inf`` / ``np.inf`` for absent
        truncation.
    z : array_like, shape (n, p) or (n,)
        Covariates.
    covariate_names : sequence of str, optional
    skipped : sequence of (row, reason), optional
        Rows dropped at ingestion; kept for reporting only.

    Notes
    -----
    Arrays are copied and made read-only, so a dataset can be shared across
    threads and processes without copying.
    """

    def __init__(self, time, left, right, z, covariate_names=None, skipped=()):
        t = np.array(time, dtype=float).ravel()
        l = np.array(left, dtype=float).ravel()
        r = np.array(right, dtype=float).ravel()
        zz = np.array(z, dtype=float)
        if zz.ndim == 1:
            zz = zz.reshape(-1, 1)
        n = t.size
        if n == 0:
            raise EmptyDataset()
        if l.size != n or r.size != n or zz.shape[0] != n:
            raise ValidationError("time, left, right and z must have the same length")
        if zz.shape[1] < 1:
            raise ValidationError("at least one covariate is required")
        bad = ~(np.isfinite(t) & (t > 0) & (l <= t) & (t <= r) & (l < np.inf) & (r > -np.inf))
        bad |= ~np.all(np.isfinite(zz), axis=1)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            _check_row(i + 1, t[i], l[i], r[i], zz[i])
        for a in (t, l, r, zz):
            a.setflags(write=False)
        self.time, self.left, self.right, self.z = t, l, r, zz
        p = zz.shape[1]
        if covariate_names is None:
            covariate_names = [f"z{k + 1}" for k in range(p)]
        if len(covariate_names) != p:
            raise ValidationError("covariate_names length does not match z")
        self.covariate_names = tuple(covariate_names)
        self.skipped = tuple(skipped)

    @classmethod
    def from_records(cls, records: Sequence[SubjectRecord], covariate_names=None):
        if len(records) == 0:
            raise EmptyDataset()
        p = len(records[0].z)
        for i, rec in enumerate(records, start=1):
            if len(rec.z) != p:
                raise ValidationError(f"row {i}: covariate dimension {len(rec.z)} != {p}")
        return cls(
            [r.t for r in records],
            [r.l for r in records],
            [r.r for r in records],
            np.array([r.z for r in records], dtype=float).reshape(len(records), p),
            covariate_names,
        )

    # -- basic shape --------------------------------------------------------

    @property
    def n(self) -> int:
        return self.time.size

    @property
    def p(self) -> int:
        return self.z.shape[1]

    def __len__(self):
        return self.n

    def __repr__(self):
        return f"TruncatedDataset(n={self.n}, p={self.p}, d={self.d}, mode={self.mode!r})"

    @property
    def records(self) -> list[SubjectRecord]:
        return [
            SubjectRecord(float(t), float(l), float(r), tuple(float(v) for v in z))
            for t, l, r, z in zip(self.time, self.left, self.right, self.z)
        ]

    # -- derived quantities -------------------------------------------------

    @cached_property
    def distinct_times(self) -> np.ndarray:
        times = np.unique(self.time)
        times.setflags(write=False)
        return times

    @property
    def d(self) -> int:
        return self.distinct_times.size

    @property
    def tau(self) -> float:
        return float(self.distinct_times[-1])

    @cached_property
    def left_finite(self) -> np.ndarray:
        return np.isfinite(self.left)

    @cached_property
    def right_finite(self) -> np.ndarray:
        return np.isfinite(self.right)

    @cached_property
    def mode(self) -> str:
        no_right = not self.right_finite.any()
        no_left = not self.left_finite.any()
        if no_left and no_right:
            return "none"
        if no_right:
            return "left-only"
        if no_left:
            return "right-only"
        return "double"

    @cached_property
    def event_index(self) -> np.ndarray:
        """Position of each ``T_i`` among the distinct times (0-based)."""
        return np.searchsorted(self.distinct_times, self.time).astype(np.int64)

    @cached_property
    def left_index(self) -> np.ndarray:
        """Number of distinct times strictly below ``L_i``."""
        return np.searchsorted(self.distinct_times, self.left, side="left").astype(np.int64)

    @cached_property
    def right_index(self) -> np.ndarray:
        """Number of distinct times at or below ``R_i``."""
        return np.searchsorted(self.distinct_times, self.right, side="right").astype(np.int64)

    # -- derived datasets ---------------------------------------------------

    def take(self, idx) -> "TruncatedDataset":
        """Dataset made of rows ``idx`` (duplicates allowed, as in a bootstrap)."""
        idx = np.asarray(idx, dtype=np.int64)
        return TruncatedDataset(
            self.time[idx], self.left[idx], self.right[idx], self.z[idx], self.covariate_names
        )

    def digest(self) -> str:
        """SHA-256 of the numeric content; stable across platforms."""
        h = hashlib.sha256()
        for a in (self.time, self.left, self.right, self.z):
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        h.update(",".join(self.covariate_names).encode())
        return h.hexdigest()


# -- CSV I/O --------------------------------------------------------------------


@dataclass
class Schema:
    """Column-name map for CSV files."""

    time: str = "time"
    left: str = "left"
    right: str = "right"
    covariates: Sequence[str] | None = None  # None: every column named z1, z2, ...

    @classmethod
    def coerce(cls, schema) -> "Schema":
        if schema is None:
            return cls()
        if isinstance(schema, Schema):
            return schema
        return cls(**dict(schema))


_ZCOL = re.compile(r"^z(\d+)$")


def _parse_cell(text: str, row: int, col: str, neg: str, pos: str, allow_neg: bool, allow_pos: bool):
    s = text.strip()
    if s == neg and allow_neg:
        return -math.inf
    if s == pos and allow_pos:
        return math.inf
    try:
        v = float(s)
    except ValueError:
        raise NonNumericCell(row, col, text) from None
    if not math.isfinite(v):
        # only the configured sentinel tokens may denote infinity
        raise NonNumericCell(row, col, text)
    return v


def load_dataset(
    path,
    schema: Schema | Mapping | None = None,
    sentinels: tuple[str, str] = (NEG_INF_TOKEN, POS_INF_TOKEN),
    skip_invalid: bool = False,
) -> TruncatedDataset:
    """Read and validate a CSV file of truncated survival data.

    Parameters
    ----------
    path : str or Path
    schema : Schema or mapping, optional
        Column names. Defaults to ``time,left,right`` plus every ``z<k>`` column.
    sentinels : (str, str)
        Text tokens for minus and plus infinity.
    skip_invalid : bool
        Drop rows that fail the ``left <= time <= right`` check instead of
        raising. Dropped rows are listed in ``dataset.skipped`` and a warning
        is emitted.

    Raises
    ------
    MissingColumn, NonNumericCell, TruncationViolation, EmptyDataset
        Rows are numbered from 1 for the first data line after the header.
    """
    schema = Schema.coerce(schema)
    neg, pos = sentinels
    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyDataset("file is empty (no header row)") from None
        rows = [row for row in reader if row and any(c.strip() for c in row)]

    for col in (schema.time, schema.left, schema.right):
        if col not in header:
            raise MissingColumn(col)
    if schema.covariates is None:
        zcols = sorted((h for h in header if _ZCOL.match(h)), key=lambda h: int(_ZCOL.match(h)[1]))
        if not zcols:
            raise MissingColumn("z1")
    else:
        zcols = list(schema.covariates)
        for col in zcols:
            if col not in header:
                raise MissingColumn(col)
    pos_of = {h: k for k, h in enumerate(header)}

    T, L, R, Z, skipped = [], [], [], [], []
    for i, row in enumerate(rows, start=1):
        if len(row) < len(header):
            raise NonNumericCell(i, header[len(row)], "")

        def cell(col, allow_neg=False, allow_pos=False):
            return _parse_cell(row[pos_of[col]], i, col, neg, pos, allow_neg, allow_pos)

        t = cell(schema.time)
        l = cell(schema.left, allow_neg=True, allow_pos=True)
        r = cell(schema.right, allow_neg=True, allow_pos=True)
        z = [cell(c) for c in zcols]
        try:
            _check_row(i, t, l, r, z)
        except TruncationViolation as exc:
            if not skip_invalid:
                raise
            skipped.append((i, str(exc)))
            continue
        T.append(t)
        L.append(l)
        R.append(r)
        Z.append(z)
    if skipped:
        warnings.warn(f"skipped {len(skipped)} invalid row(s): first is row {skipped[0][0]}")
    if not T:
        raise EmptyDataset("no valid records in file")
    return TruncatedDataset(T, L, R, np.array(Z, dtype=float), zcols, skipped)


def _fmt(v: float, neg: str, pos: str) -> str:
    if v == math.inf:
        return pos
    if v == -math.inf:
        return neg
    return repr(float(v))


def write_dataset(
    dataset: TruncatedDataset,
    path,
    schema: Schema | Mapping | None = None,
    sentinels: tuple[str, str] = (NEG_INF_TOKEN, POS_INF_TOKEN),
) -> None:
    """Write a dataset as CSV. Finite values use ``repr`` so reloading is exact."""
    schema = Schema.coerce(schema)
    neg, pos = sentinels
    zcols = list(schema.covariates) if schema.covariates is not None else list(dataset.covariate_names)
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([schema.time, schema.left, schema.right, *zcols])
        for t, l, r, z in zip(dataset.time, dataset.left, dataset.right, dataset.z):
            w.writerow([_fmt(t, neg, pos), _fmt(l, neg, pos), _fmt(r, neg, pos), *(_fmt(v, neg, pos) for v in z)])
