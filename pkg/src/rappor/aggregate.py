"""Fold randomized reports into per-cohort bit counts.

The counts matrix has one row per cohort: the report total for that cohort
followed by, for each bit position, how many of its reports had the bit
set.  Accumulation is order-independent and merges are elementwise sums,
so shards can be counted separately and combined.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from .encoder import Report
from .errors import (
    BitLengthMismatch,
    CohortOutOfRange,
    InvariantViolation,
    MalformedRow,
    ShapeMismatch,
)
from .params import RapporParams


@dataclass
class CountsMatrix:
    """Per-cohort report totals (n) and per-bit set counts (bits, m x k)."""

    n: np.ndarray
    bits: np.ndarray

    def __post_init__(self):
        self.n = np.asarray(self.n, dtype=np.int64)
        self.bits = np.asarray(self.bits, dtype=np.int64)
        if self.bits.ndim != 2 or self.n.shape != (self.bits.shape[0],):
            raise ShapeMismatch(
                f"n has shape {self.n.shape}, bits has shape {self.bits.shape}"
            )

    @property
    def m(self) -> int:
        return self.bits.shape[0]

    @property
    def k(self) -> int:
        return self.bits.shape[1]

    @property
    def total_reports(self) -> int:
        return int(self.n.sum())

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, CountsMatrix)
            and np.array_equal(self.n, other.n)
            and np.array_equal(self.bits, other.bits)
        )


def zero_counts(m: int, k: int) -> CountsMatrix:
    return CountsMatrix(n=np.zeros(m, dtype=np.int64), bits=np.zeros((m, k), dtype=np.int64))


def accumulate(reports: Iterable[Report], params: RapporParams) -> CountsMatrix:
    counts = zero_counts(params.m, params.k)
    add_reports(counts, reports, params)
    return counts


def add_reports(
    counts: CountsMatrix, reports: Iterable[Report], params: RapporParams
) -> None:
    """Fold reports into an existing matrix in place."""
    if params.k <= 64:
        _add_reports_packed(counts, reports, params)
        return
    for report in reports:
        _check(report, params)
        counts.n[report.cohort] += 1
        for index in report.irr.set_indices():
            counts.bits[report.cohort, index] += 1


def _check(report: Report, params: RapporParams) -> None:
    if not 0 <= report.cohort < params.m:
        raise CohortOutOfRange(
            f"cohort {report.cohort} outside [0, {params.m}) for client {report.client!r}"
        )
    if report.irr.length != params.k:
        raise BitLengthMismatch(
            f"report has {report.irr.length} bits, expected {params.k}"
        )


def _add_reports_packed(
    counts: CountsMatrix, reports: Iterable[Report], params: RapporParams
) -> None:
    # Unpack whole batches of <=64-bit vectors at once; noisy filters are
    # dense enough that per-bit Python loops dominate otherwise.
    cohorts: list[int] = []
    words: list[int] = []
    for report in reports:
        _check(report, params)
        cohorts.append(report.cohort)
        words.append(report.irr.bits)
    if not cohorts:
        return
    packed = np.array(words, dtype=np.uint64)
    unpacked = np.unpackbits(
        packed.view(np.uint8).reshape(-1, 8), axis=1, bitorder="little"
    )[:, : params.k]
    cohort_arr = np.asarray(cohorts)
    counts.n += np.bincount(cohort_arr, minlength=params.m)
    np.add.at(counts.bits, cohort_arr, unpacked.astype(np.int64))


def merge(a: CountsMatrix, b: CountsMatrix) -> CountsMatrix:
    if a.bits.shape != b.bits.shape:
        raise ShapeMismatch(f"cannot merge {a.bits.shape} with {b.bits.shape}")
    return CountsMatrix(n=a.n + b.n, bits=a.bits + b.bits)


def counts_to_csv(counts: CountsMatrix) -> str:
    lines = []
    for j in range(counts.m):
        row = [str(int(counts.n[j]))] + [str(int(x)) for x in counts.bits[j]]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def write_counts(counts: CountsMatrix, path: Union[str, Path]) -> None:
    Path(path).write_text(counts_to_csv(counts), encoding="utf-8", newline="")


def read_counts(path: Union[str, Path]) -> CountsMatrix:
    """Parse a headerless m x (k+1) integer matrix, checking c <= n per row."""
    n_rows: list[int] = []
    bit_rows: list[list[int]] = []
    width = None
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) < 2:
                raise MalformedRow(lineno, "need a report total plus bit counts")
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise MalformedRow(
                    lineno, f"expected {width} columns, found {len(row)}"
                )
            try:
                values = [int(x) for x in row]
            except ValueError as exc:
                raise MalformedRow(lineno, str(exc)) from exc
            if values[0] < 0 or any(v < 0 for v in values[1:]):
                raise MalformedRow(lineno, "counts cannot be negative")
            if any(v > values[0] for v in values[1:]):
                raise InvariantViolation(
                    f"line {lineno}: bit count exceeds report total {values[0]}"
                )
            n_rows.append(values[0])
            bit_rows.append(values[1:])
    if not n_rows:
        raise MalformedRow(0, f"no rows in {path}")
    return CountsMatrix(n=np.array(n_rows), bits=np.array(bit_rows))
