"""Mechanism parameters and the privacy budget they buy.

A randomized-response deployment is fully described by six numbers: the
Bloom filter width ``k``, the hash count ``h``, the cohort count ``m``, the
permanent-response lie probability ``f``, and the instantaneous-response
probabilities ``p`` (report 1 for a true 0) and ``q`` (report 1 for a true 1).

Two derived probabilities tie the mechanism to its differential-privacy
budget.  Observing a set bit in a report, conditioned on the original Bloom
bit, happens with

    q* = f/2 * (p + q) + (1 - f) * q        (true bit was 1)
    p* = f/2 * (p + q) + (1 - f) * p        (true bit was 0)

The one-report budget is

    eps_1 = h * ln( q*(1 - p*) / (p*(1 - q*)) )

and the lifetime bound contributed by the permanent response alone is

    eps_inf = 2h * ln( (1 - f/2) / (f/2) ).

All logarithms are natural, so budgets are in nats.  The three bundled
reference configurations land at eps_1 of 0.1003, 1.0743 and 10.0184,
spanning strong, medium and weak privacy.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Union

import numpy as np

from .errors import InvalidParams, NoMatch

PARAMS_HEADER = ["k", "h", "m", "p", "q", "f"]


@dataclass(frozen=True)
class RapporParams:
    """The six mechanism parameters."""

    k: int = 32
    h: int = 2
    m: int = 64
    f: float = 0.5
    p: float = 0.5
    q: float = 0.75


@dataclass(frozen=True)
class PrivacyProfile:
    """Derived probabilities and budgets for one parameter set."""

    p_star: float
    q_star: float
    epsilon_one: float
    epsilon_infinity: float


#: Published reference configurations, strongest privacy first.  Their
#: one-report budgets evaluate to 0.1003, 1.0743 and 10.0184 nats.
REFERENCE_PARAMS = {
    "high": RapporParams(k=32, h=2, m=64, f=0.75, p=0.5, q=0.55),
    "medium": RapporParams(k=32, h=2, m=64, f=0.5, p=0.5, q=0.75),
    "low": RapporParams(k=32, h=2, m=64, f=0.01, p=0.05, q=0.9),
}


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def validate(params: RapporParams, *, require_pow2_k: bool = True) -> RapporParams:
    """Check every structural invariant, returning the params unchanged.

    Raises InvalidParams naming the first offending field.  ``require_pow2_k``
    can be dropped for experimental filter sizes.
    """
    if params.k < 1:
        raise InvalidParams("k", "filter size must be positive")
    if require_pow2_k and not is_power_of_two(params.k):
        raise InvalidParams("k", "filter size must be a power of two")
    if params.h < 1:
        raise InvalidParams("h", "hash count must be positive")
    if params.h > params.k:
        raise InvalidParams("h", "hash count cannot exceed filter size")
    if params.m < 1:
        raise InvalidParams("m", "cohort count must be positive")
    if not 0.0 <= params.f <= 1.0:
        raise InvalidParams("f", "lie probability must lie in [0, 1]")
    if not 0.0 <= params.p <= 1.0:
        raise InvalidParams("p", "noise probability must lie in [0, 1]")
    if not 0.0 <= params.q <= 1.0:
        raise InvalidParams("q", "truth probability must lie in [0, 1]")
    if params.q <= params.p:
        raise InvalidParams("q", "q must exceed p")
    return params


def effective_probabilities(params: RapporParams) -> tuple[float, float]:
    """Return (p*, q*): the end-to-end probabilities of observing a set bit."""
    base = 0.5 * params.f * (params.p + params.q)
    p_star = base + (1.0 - params.f) * params.p
    q_star = base + (1.0 - params.f) * params.q
    return p_star, q_star


def epsilon_one(params: RapporParams) -> float:
    """One-report privacy budget in nats.

    Returns math.inf when the noise is degenerate (p* = 0 or q* = 1), in
    which case a single report can be fully revealing.
    """
    p_star, q_star = effective_probabilities(params)
    if p_star <= 0.0 or q_star >= 1.0:
        return math.inf
    return params.h * math.log(q_star * (1.0 - p_star) / (p_star * (1.0 - q_star)))


def epsilon_infinity(params: RapporParams) -> float:
    """Lifetime budget of the permanent response; math.inf when f = 0."""
    if params.f <= 0.0:
        return math.inf
    half_f = 0.5 * params.f
    return 2.0 * params.h * math.log((1.0 - half_f) / half_f)


def privacy_profile(params: RapporParams) -> PrivacyProfile:
    p_star, q_star = effective_probabilities(params)
    return PrivacyProfile(
        p_star=p_star,
        q_star=q_star,
        epsilon_one=epsilon_one(params),
        epsilon_infinity=epsilon_infinity(params),
    )


def find_params(
    target_epsilon: float,
    *,
    f_step: float = 0.05,
    p_step: float = 0.05,
    q_step: float = 0.05,
    h: int = 2,
    tolerance: float = 0.1,
    k: int = 32,
    m: int = 64,
    limit: int | None = None,
) -> list[tuple[RapporParams, float]]:
    """Enumerate grid points whose one-report budget lands near a target.

    The grid covers multiples of each step in [0, 1] with q > p.  Matches are
    sorted by |eps_1 - target|, ties broken by ascending f, then p, then q,
    so results are reproducible.  Raises NoMatch when the grid holds nothing
    within tolerance.
    """
    if target_epsilon <= 0:
        raise InvalidParams("target_epsilon", "target must be positive")
    if min(f_step, p_step, q_step) <= 0:
        raise InvalidParams("grid", "step sizes must be positive")

    def axis(step: float) -> np.ndarray:
        return np.round(np.arange(0.0, 1.0 + step / 2, step), 10)

    f, p, q = np.meshgrid(axis(f_step), axis(p_step), axis(q_step), indexing="ij")
    keep = q > p
    f, p, q = f[keep], p[keep], q[keep]

    base = 0.5 * f * (p + q)
    p_star = base + (1.0 - f) * p
    q_star = base + (1.0 - f) * q
    with np.errstate(divide="ignore", invalid="ignore"):
        eps = h * np.log(q_star * (1.0 - p_star) / (p_star * (1.0 - q_star)))
    gap = np.abs(eps - target_epsilon)
    hit = np.isfinite(eps) & (gap <= tolerance)
    idx = np.flatnonzero(hit)
    if idx.size == 0:
        raise NoMatch(
            f"no grid point within {tolerance} of epsilon={target_epsilon}"
        )
    order = np.lexsort((q[idx], p[idx], f[idx], gap[idx]))
    idx = idx[order]
    if limit is not None:
        idx = idx[:limit]
    return [
        (
            RapporParams(k=k, h=h, m=m, f=float(f[i]), p=float(p[i]), q=float(q[i])),
            float(eps[i]),
        )
        for i in idx
    ]


def _format_number(x: Union[int, float]) -> str:
    if isinstance(x, int):
        return str(x)
    return repr(float(x))


def params_to_csv(params: RapporParams) -> str:
    """Canonical two-line CSV form: header ``k,h,m,p,q,f`` then the values."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PARAMS_HEADER)
    writer.writerow(
        [
            _format_number(params.k),
            _format_number(params.h),
            _format_number(params.m),
            _format_number(params.p),
            _format_number(params.q),
            _format_number(params.f),
        ]
    )
    return buf.getvalue()


def write_params(params: RapporParams, path: Union[str, Path]) -> None:
    Path(path).write_text(params_to_csv(params), encoding="utf-8", newline="")


def params_from_csv(text: str) -> RapporParams:
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r]
    if len(rows) != 2 or rows[0] != PARAMS_HEADER:
        raise InvalidParams("file", "expected header k,h,m,p,q,f and one data row")
    raw = rows[1]
    if len(raw) != 6:
        raise InvalidParams("file", f"expected 6 values, found {len(raw)}")
    try:
        return RapporParams(
            k=int(raw[0]),
            h=int(raw[1]),
            m=int(raw[2]),
            p=float(raw[3]),
            q=float(raw[4]),
            f=float(raw[5]),
        )
    except ValueError as exc:
        raise InvalidParams("file", str(exc)) from exc


def read_params(path: Union[str, Path]) -> RapporParams:
    return params_from_csv(Path(path).read_text(encoding="utf-8"))


def with_one_time_noise(params: RapporParams) -> RapporParams:
    """Return a copy with p = 0, q = 1, the collapse used by one-time modes."""
    return replace(params, p=0.0, q=1.0)
