"""Recover per-candidate frequencies from noisy bit counts.

Three stages:

1. debias: invert the marginal observation law per bit.  If a cohort of
   n reports shows c set bits at some position, the estimated number of
   reports whose true filter had the bit set is (c - p*.n) / (q* - p*).
   Negative values are kept; clipping here would bias the regression.
2. nnls: fit the debiased counts against the candidate map with
   non-negative least squares (Lawson-Hanson active set).  The constraint
   does the clipping where it belongs, on the coefficients.
3. detect: a candidate is reported when its scaled estimate clears a
   Bonferroni-corrected normal quantile of its standard error.

A candidate appearing once sets its bits in exactly one cohort, so its
coefficient estimates its per-cohort count; scaling by the cohort count m
yields the population total under uniform cohort assignment.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from statistics import NormalDist
from typing import Union

import numpy as np

from .aggregate import CountsMatrix
from .candidate_map import CandidateMap
from .errors import DegenerateNoise, MaxIterations, ShapeMismatch
from .params import RapporParams, effective_probabilities

RESULTS_HEADER = ["string", "estimate", "std_error", "detected"]


@dataclass(frozen=True)
class DebiasedBitCounts:
    """Estimated true set-bit counts per (cohort, bit), flattened cohort-major."""

    y: np.ndarray
    n: np.ndarray


@dataclass(frozen=True)
class DecodedEntry:
    string: str
    estimate: float
    std_error: float
    detected: bool


@dataclass(frozen=True)
class DecodedDistribution:
    entries: tuple[DecodedEntry, ...]
    total_reports: int
    cohorts: int
    filter_bits: int

    def by_string(self) -> dict[str, DecodedEntry]:
        return {e.string: e for e in self.entries}


def debias(counts: CountsMatrix, params: RapporParams) -> DebiasedBitCounts:
    """Invert the per-bit observation law; raw values, no clipping."""
    p_star, q_star = effective_probabilities(params)
    spread = q_star - p_star
    if spread <= 0:
        raise DegenerateNoise(
            f"q* - p* = {spread}; counts carry no recoverable signal"
        )
    y = (counts.bits - p_star * counts.n[:, None]) / spread
    return DebiasedBitCounts(y=y.ravel(), n=counts.n.copy())


def nnls(
    design: np.ndarray,
    y: np.ndarray,
    tol: float = 1e-8,
    max_iter: int | None = None,
) -> np.ndarray:
    """Minimize ||design @ beta - y||^2 subject to beta >= 0.

    Lawson-Hanson active-set iteration.  The entering coefficient is the
    most negative gradient component, lowest index on ties, so runs are
    reproducible.  At return the Karush-Kuhn-Tucker conditions hold within
    tol * ||y||: near-zero gradient on the support, non-negative gradient
    off it.  Raises MaxIterations after 10 pivots per column by default.
    """
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    if design.ndim != 2 or y.shape != (design.shape[0],):
        raise ShapeMismatch(
            f"design {design.shape} incompatible with y {y.shape}"
        )
    n_cols = design.shape[1]
    limit = max_iter if max_iter is not None else 10 * n_cols
    threshold = tol * float(np.linalg.norm(y))

    beta = np.zeros(n_cols)
    support = np.zeros(n_cols, dtype=bool)
    # w is the negative gradient: positive entries mean the objective still
    # improves by growing that coefficient.
    w = design.T @ y
    iterations = 0
    while True:
        candidates = np.where(~support, w, -np.inf)
        best = int(np.argmax(candidates))
        if candidates[best] <= threshold:
            break
        support[best] = True
        while True:
            iterations += 1
            if iterations > limit:
                raise MaxIterations(limit)
            trial = np.zeros(n_cols)
            trial[support], *_ = np.linalg.lstsq(design[:, support], y, rcond=None)
            if trial[support].min() > 0:
                beta = trial
                break
            # Step toward the trial point until the first coefficient hits
            # zero, then drop every coefficient that reached the boundary.
            # A coefficient already at zero (denominator zero) pins the step
            # at zero and is pruned below.
            shrinking = support & (trial <= 0)
            gaps = beta[shrinking] - trial[shrinking]
            ratios = np.where(gaps > 0, beta[shrinking] / np.where(gaps > 0, gaps, 1.0), 0.0)
            alpha = float(ratios.min())
            beta = beta + alpha * (trial - beta)
            support &= beta > max(threshold, 1e-300)
            beta[~support] = 0.0
        w = design.T @ (y - design @ beta)
    return beta


def decode(
    counts: CountsMatrix,
    cmap: CandidateMap,
    params: RapporParams,
    *,
    alpha: float = 0.05,
    min_reports: float = 1.0,
    per_cohort_scaling: bool = False,
    tol: float = 1e-8,
) -> DecodedDistribution:
    """Estimate each candidate's total count plus a detection verdict.

    alpha is the family-wise false-positive budget, split evenly over the
    candidate list (Bonferroni); min_reports suppresses detections whose
    estimate is smaller than that many appearances.
    """
    n_candidates = len(cmap.candidates)
    expected_arity = params.m * params.h
    if cmap.arity != expected_arity:
        raise ShapeMismatch(
            f"map rows carry {cmap.arity} positions, params imply {expected_arity}"
        )
    debiased = debias(counts, params)
    y = debiased.y
    total_rows = params.m * params.k

    if per_cohort_scaling:
        # Fit per-report rates instead of per-cohort counts; robust when
        # cohort sizes are uneven, at the price of mixing cohort variances.
        safe_n = np.maximum(debiased.n, 1)
        y = (debiased.y.reshape(params.m, params.k) / safe_n[:, None]).ravel()
        scale = float(counts.total_reports)
    else:
        scale = float(params.m)

    # Only positions some candidate can touch constrain the fit; the rest
    # contribute a constant residual handled separately.
    used = sorted({pos - 1 for row in cmap.positions for pos in row})
    row_of = {pos: i for i, pos in enumerate(used)}
    design = np.zeros((len(used), n_candidates))
    for s, row in enumerate(cmap.positions):
        for pos in set(row):
            design[row_of[pos - 1], s] = 1.0

    y_used = y[used]
    beta = nnls(design, y_used, tol=tol)
    estimates = scale * beta

    support = beta > 0
    residual = y_used - design @ beta
    unused_sq = float(y @ y) - float(y_used @ y_used)
    rss = float(residual @ residual) + unused_sq
    dof = total_rows - int(support.sum())
    sigma2 = rss / dof if dof > 0 else 0.0

    std_errors = np.zeros(n_candidates)
    if support.any() and sigma2 > 0:
        sub = design[:, support]
        covariance = sigma2 * np.linalg.pinv(sub.T @ sub)
        std_errors[support] = np.sqrt(np.clip(np.diag(covariance), 0.0, None))

    z = NormalDist().inv_cdf(1.0 - alpha / (2.0 * n_candidates))
    # Tiny slack so an exactly-recovered integer count sitting on the
    # min_reports boundary is not lost to rounding.
    floor = min_reports - 1e-9
    entries = []
    for s, name in enumerate(cmap.candidates):
        estimate = float(estimates[s])
        se = float(std_errors[s])
        detected = estimate > z * scale * se and estimate >= floor
        entries.append(
            DecodedEntry(
                string=name, estimate=estimate, std_error=se, detected=detected
            )
        )
    entries.sort(key=lambda e: (-e.estimate, e.string))
    return DecodedDistribution(
        entries=tuple(entries),
        total_reports=counts.total_reports,
        cohorts=params.m,
        filter_bits=params.k,
    )


def kkt_violation(design: np.ndarray, y: np.ndarray, beta: np.ndarray) -> float:
    """Largest Karush-Kuhn-Tucker violation, for verification."""
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    gradient = design.T @ (design @ beta - y)
    on_support = np.abs(gradient[beta > 0]) if (beta > 0).any() else np.array([0.0])
    off_support = -gradient[beta == 0] if (beta == 0).any() else np.array([0.0])
    return float(max(on_support.max(initial=0.0), off_support.max(initial=0.0)))


def _format_float(x: float) -> str:
    if math.isinf(x) or math.isnan(x):
        return str(x)
    return repr(float(x))


def results_to_csv(dist: DecodedDistribution) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULTS_HEADER)
    for entry in dist.entries:
        writer.writerow(
            [
                entry.string,
                _format_float(entry.estimate),
                _format_float(entry.std_error),
                "true" if entry.detected else "false",
            ]
        )
    return buf.getvalue()


def write_results(dist: DecodedDistribution, path: Union[str, Path]) -> None:
    Path(path).write_text(results_to_csv(dist), encoding="utf-8", newline="")
