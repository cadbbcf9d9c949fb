"""Request/response schemas for the aggregation service."""

from __future__ import annotations

import math
from typing import Literal, Optional

from pydantic import BaseModel, Field

from ..params import PrivacyProfile, RapporParams


class ParamsModel(BaseModel):
    k: int = 32
    h: int = 2
    m: int = 64
    f: float = 0.5
    p: float = 0.5
    q: float = 0.75

    def to_params(self) -> RapporParams:
        return RapporParams(k=self.k, h=self.h, m=self.m, f=self.f, p=self.p, q=self.q)

    @classmethod
    def from_params(cls, params: RapporParams) -> "ParamsModel":
        return cls(k=params.k, h=params.h, m=params.m, f=params.f, p=params.p, q=params.q)


def _finite_or_none(x: float) -> Optional[float]:
    return None if math.isinf(x) or math.isnan(x) else x


class ProfileResponse(BaseModel):
    """Derived privacy quantities; unbounded budgets come back as null."""

    params: ParamsModel
    p_star: float
    q_star: float
    epsilon_one: Optional[float]
    epsilon_infinity: Optional[float]

    @classmethod
    def build(cls, params: RapporParams, profile: PrivacyProfile) -> "ProfileResponse":
        return cls(
            params=ParamsModel.from_params(params),
            p_star=profile.p_star,
            q_star=profile.q_star,
            epsilon_one=_finite_or_none(profile.epsilon_one),
            epsilon_infinity=_finite_or_none(profile.epsilon_infinity),
        )


class SearchRequest(BaseModel):
    target_epsilon: float = Field(gt=0)
    h: int = 2
    f_step: float = 0.05
    p_step: float = 0.05
    q_step: float = 0.05
    tolerance: float = 0.1
    limit: int = 10


class SearchMatch(BaseModel):
    params: ParamsModel
    epsilon: float


class SearchResponse(BaseModel):
    matches: list[SearchMatch]


class EncodeValueRequest(BaseModel):
    """Encode one value the way a client library would."""

    params: ParamsModel
    client: str
    value: str
    mode: str = "standard"
    master_seed: int = 0
    index: int = 0
    audit: bool = False


class ReportModel(BaseModel):
    client: str
    cohort: int
    irr: str
    bloom: Optional[str] = None
    prr: Optional[str] = None


class EncodeValueResponse(BaseModel):
    report: ReportModel


class SessionCreateRequest(BaseModel):
    params: ParamsModel
    candidates: Optional[list[str]] = None


class SessionCreateResponse(BaseModel):
    session_id: str


class SessionInfoResponse(BaseModel):
    session_id: str
    params: ParamsModel
    total_reports: int
    candidates: Optional[list[str]]


class SubmitReportsRequest(BaseModel):
    reports: list[ReportModel]


class SubmitReportsResponse(BaseModel):
    accepted: int
    total_reports: int


class CountsResponse(BaseModel):
    m: int
    k: int
    n: list[int]
    bits: list[list[int]]


class SessionDecodeRequest(BaseModel):
    alpha: float = 0.05
    min_reports: float = 1.0


class DecodedEntryModel(BaseModel):
    string: str
    estimate: float
    std_error: float
    detected: bool


class DecodeResponse(BaseModel):
    entries: list[DecodedEntryModel]
    total_reports: int


class EncodeJobRequest(BaseModel):
    dataset_path: str
    params_path: str
    out_dir: str
    mode: str = "standard"
    seed: int = 0
    audit: bool = True
    workers: Optional[int] = None


class EncodeJobResponse(BaseModel):
    reports: int
    reports_path: str
    true_values_path: str


class AggregateJobRequest(BaseModel):
    reports_path: str
    params_path: str
    out_path: str


class AggregateJobResponse(BaseModel):
    reports: int
    cohorts: int
    out_path: str


class MapJobRequest(BaseModel):
    candidates_path: str
    params_path: str
    out_path: str


class MapJobResponse(BaseModel):
    candidates: int
    out_path: str


class DecodeJobRequest(BaseModel):
    counts_path: str
    map_path: str
    params_path: str
    out_path: str
    alpha: float = 0.05
    min_reports: float = 1.0


class DecodeJobResponse(BaseModel):
    entries: list[DecodedEntryModel]
    detected: int
    out_path: str


class SynthJobRequest(BaseModel):
    num_candidates: int = 150
    n: int = Field(gt=0)
    exponent: float = 1.2
    seed: int = 0
    out_path: str
    uniques_path: Optional[str] = None


class SynthJobResponse(BaseModel):
    records: int
    distinct: int
    out_path: str


class ExperimentJobRequest(BaseModel):
    config_path: str
    out_dir: str
    seeds: Optional[list[int]] = None
    workers: Optional[int] = None


class SummaryRowModel(BaseModel):
    population: int
    epsilon: float
    true_strings: Optional[float]
    rappor_strings: Optional[float]
    accurate80: Optional[float]
    proportion: Optional[float]
    seeds: list[int]


class ExperimentJobResponse(BaseModel):
    summary: list[SummaryRowModel]
    scenarios: int
    failures: list[str]
    summary_path: str
    plot_path: str


class HealthResponse(BaseModel):
    status: Literal["ok"]
    version: str
