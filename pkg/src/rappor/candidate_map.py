"""Candidate-string hash map: the decoder's sparse design structure.

Each known candidate is hashed into every cohort exactly as a client would
Bloom-encode it, and the resulting bit indices are stored as global
1-indexed positions ``cohort * k + bit + 1``.  A candidate's row always
holds m*h positions; when its h hashes collide inside a cohort the shared
position simply repeats, keeping the arity fixed.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Union

from .encoder import bloom_indices
from .errors import DuplicateCandidate, EmptyCandidateList, MalformedRow
from .params import RapporParams

CANDIDATE_HEADER_LINE = "PackageName"


@dataclass(frozen=True)
class CandidateMap:
    candidates: tuple[str, ...]
    positions: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if len(self.candidates) != len(self.positions):
            raise MalformedRow(0, "candidates and position rows differ in length")

    @property
    def arity(self) -> int:
        return len(self.positions[0]) if self.positions else 0

    def row(self, candidate: str) -> tuple[int, ...]:
        return self.positions[self.candidates.index(candidate)]


def load_candidates(path: Union[str, Path]) -> list[str]:
    """Read one candidate per line, dropping blanks and a stray header."""
    out: list[str] = []
    seen = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        value = line.strip()
        if not value or value == CANDIDATE_HEADER_LINE:
            continue
        if value in seen:
            raise DuplicateCandidate(value)
        seen.add(value)
        out.append(value)
    if not out:
        raise EmptyCandidateList(f"no candidates in {path}")
    return out


def build_map(candidates: list[str], params: RapporParams) -> CandidateMap:
    """Hash every candidate into every cohort; positions are 1-indexed.

    A collision repeats its position so every row keeps exactly m*h entries.
    """
    if not candidates:
        raise EmptyCandidateList("cannot build a map from zero candidates")
    rows = []
    for value in candidates:
        positions = []
        for cohort in range(params.m):
            indices = bloom_indices(value, cohort, params.k, params.h)
            positions.extend(cohort * params.k + b + 1 for b in indices)
        rows.append(tuple(positions))
    return CandidateMap(candidates=tuple(candidates), positions=tuple(rows))


def cohort_bit_set(cmap: CandidateMap, candidate: str, cohort: int, k: int) -> set[int]:
    """Distinct bit indices the map assigns a candidate within one cohort."""
    lo, hi = cohort * k + 1, (cohort + 1) * k
    return {pos - 1 - cohort * k for pos in cmap.row(candidate) if lo <= pos <= hi}


def map_to_csv(cmap: CandidateMap) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for candidate, positions in zip(cmap.candidates, cmap.positions):
        writer.writerow([candidate, *positions])
    return buf.getvalue()


def write_map(cmap: CandidateMap, path: Union[str, Path]) -> None:
    Path(path).write_text(map_to_csv(cmap), encoding="utf-8", newline="")


def read_map(
    path: Union[str, Path], *, expected_arity: int | None = None
) -> CandidateMap:
    """Parse a headerless map file; every row must carry the same arity."""
    candidates: list[str] = []
    rows: list[tuple[int, ...]] = []
    arity = expected_arity
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) < 2:
                raise MalformedRow(lineno, "row needs a candidate and positions")
            try:
                positions = tuple(int(x) for x in row[1:])
            except ValueError as exc:
                raise MalformedRow(lineno, str(exc)) from exc
            if any(pos < 1 for pos in positions):
                raise MalformedRow(lineno, "positions are 1-indexed")
            if arity is None:
                arity = len(positions)
            elif len(positions) != arity:
                raise MalformedRow(
                    lineno, f"expected {arity} positions, found {len(positions)}"
                )
            candidates.append(row[0])
            rows.append(positions)
    if not candidates:
        raise EmptyCandidateList(f"no rows in {path}")
    return CandidateMap(candidates=tuple(candidates), positions=tuple(rows))
