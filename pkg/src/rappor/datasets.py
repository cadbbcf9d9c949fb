"""Dataset ingestion, seeded sub-sampling, and synthetic populations."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .errors import (
    EmptyDataset,
    InsufficientReports,
    InsufficientUsers,
    InvalidParams,
    MalformedRow,
)

DATASET_HEADER = ["client", "value"]


@dataclass(frozen=True)
class Dataset:
    records: tuple[tuple[str, str], ...]
    provenance: str = "unknown"
    seed: int | None = None

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class TrueHistogram:
    counts: dict[str, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def distinct(self) -> int:
        return len(self.counts)


def ingest_csv(
    path: Union[str, Path],
    client_column: int = 1,
    value_column: int = 2,
    has_header: bool = True,
) -> Dataset:
    """Extract (client, value) pairs from two 1-based columns of a CSV file.

    Blank lines are dropped; a row missing either column, or carrying an
    empty field there, is malformed.
    """
    if client_column < 1 or value_column < 1:
        raise InvalidParams("column", "column indices are 1-based")
    records: list[tuple[str, str]] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if has_header and lineno == 1:
                continue
            if len(row) < max(client_column, value_column):
                raise MalformedRow(
                    lineno, f"row has {len(row)} columns, need {max(client_column, value_column)}"
                )
            client = row[client_column - 1]
            value = row[value_column - 1]
            if not client or not value:
                raise MalformedRow(lineno, "empty client or value field")
            records.append((client, value))
    if not records:
        raise EmptyDataset(f"no records in {path}")
    return Dataset(records=tuple(records), provenance=str(path))


def subsample(
    dataset: Dataset, num_users: int, reports_per_user: int, seed: int
) -> Dataset:
    """Pick num_users clients uniformly, then reports_per_user records each.

    Clients are sorted before sampling so the draw depends only on the seed,
    not on input order.
    """
    by_client: dict[str, list[tuple[str, str]]] = {}
    for record in dataset.records:
        by_client.setdefault(record[0], []).append(record)
    clients = sorted(by_client)
    if len(clients) < num_users:
        raise InsufficientUsers(
            f"dataset has {len(clients)} clients, {num_users} requested"
        )
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(clients), size=num_users, replace=False)
    records: list[tuple[str, str]] = []
    for idx in chosen:
        client = clients[int(idx)]
        rows = by_client[client]
        if len(rows) < reports_per_user:
            raise InsufficientReports(client, len(rows), reports_per_user)
        picked = rng.choice(len(rows), size=reports_per_user, replace=False)
        records.extend(rows[int(i)] for i in sorted(picked))
    return Dataset(
        records=tuple(records),
        provenance=f"subsample({dataset.provenance}, {num_users}x{reports_per_user})",
        seed=seed,
    )


def candidate_name(rank: int, width: int = 4) -> str:
    return f"cand_{rank:0{width}d}"


def synth_zipf(
    num_candidates: int, n: int, exponent: float, seed: int
) -> tuple[Dataset, TrueHistogram]:
    """Draw n records i.i.d. from a Zipf law over a finite candidate list.

    Rank r is drawn with probability proportional to r^-exponent; every
    record gets its own synthetic client.
    """
    if num_candidates < 1:
        raise InvalidParams("num_candidates", "need at least one candidate")
    if n < 1:
        raise InvalidParams("n", "need at least one record")
    if exponent <= 0:
        raise InvalidParams("exponent", "exponent must be positive")
    width = max(4, len(str(num_candidates)))
    names = [candidate_name(r, width) for r in range(1, num_candidates + 1)]
    weights = np.arange(1, num_candidates + 1, dtype=float) ** -exponent
    weights /= weights.sum()
    rng = np.random.default_rng(seed)
    draws = rng.choice(num_candidates, size=n, p=weights)
    client_width = max(7, len(str(n)))
    records = tuple(
        (f"u{i + 1:0{client_width}d}", names[int(d)]) for i, d in enumerate(draws)
    )
    dataset = Dataset(
        records=records,
        provenance=f"zipf(s={exponent}, candidates={num_candidates})",
        seed=seed,
    )
    return dataset, true_histogram(dataset)


def zipf_candidates(num_candidates: int) -> list[str]:
    width = max(4, len(str(num_candidates)))
    return [candidate_name(r, width) for r in range(1, num_candidates + 1)]


def true_histogram(dataset: Dataset) -> TrueHistogram:
    return TrueHistogram(counts=dict(Counter(v for _, v in dataset.records)))


def write_dataset(dataset: Dataset, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DATASET_HEADER)
        writer.writerows(dataset.records)


def read_dataset(path: Union[str, Path]) -> Dataset:
    return ingest_csv(path, client_column=1, value_column=2, has_header=True)


def write_uniques(values: list[str], path: Union[str, Path]) -> None:
    Path(path).write_text(
        "\n".join(values) + "\n" if values else "", encoding="utf-8", newline=""
    )
