"""Local-differential-privacy telemetry toolkit.

Client-side randomized encoding of strings into noisy Bloom-filter reports,
server-side aggregation into per-cohort bit counts, statistical decoding of
candidate frequencies, and an experiment harness for privacy/utility
studies.  A FastAPI service (rappor.service) exposes the pipeline to
clients; the ``rappor`` CLI is a thin client of that service.
"""

from .aggregate import CountsMatrix, accumulate, merge, read_counts, write_counts
from .candidate_map import CandidateMap, build_map, load_candidates, read_map, write_map
from .datasets import (
    Dataset,
    TrueHistogram,
    ingest_csv,
    subsample,
    synth_zipf,
    true_histogram,
)
from .decoder import DecodedDistribution, debias, decode, nnls
from .encoder import (
    BitVector,
    EncoderMode,
    Report,
    assign_cohort,
    bloom_encode,
    encode_report,
    irr,
    prr,
)
from .errors import RapporError
from .experiment import GridSpec, ScenarioSpec, evaluate, run_grid, run_scenario
from .params import (
    PrivacyProfile,
    RapporParams,
    REFERENCE_PARAMS,
    effective_probabilities,
    epsilon_infinity,
    epsilon_one,
    find_params,
    privacy_profile,
    read_params,
    validate,
    write_params,
)

__version__ = "0.1.0"

__all__ = [
    "BitVector",
    "CandidateMap",
    "CountsMatrix",
    "Dataset",
    "DecodedDistribution",
    "EncoderMode",
    "GridSpec",
    "PrivacyProfile",
    "RapporError",
    "RapporParams",
    "REFERENCE_PARAMS",
    "Report",
    "ScenarioSpec",
    "TrueHistogram",
    "accumulate",
    "assign_cohort",
    "bloom_encode",
    "build_map",
    "debias",
    "decode",
    "effective_probabilities",
    "encode_report",
    "epsilon_infinity",
    "epsilon_one",
    "evaluate",
    "find_params",
    "ingest_csv",
    "irr",
    "load_candidates",
    "merge",
    "nnls",
    "privacy_profile",
    "prr",
    "read_counts",
    "read_map",
    "read_params",
    "run_grid",
    "run_scenario",
    "subsample",
    "synth_zipf",
    "true_histogram",
    "validate",
    "write_counts",
    "write_map",
    "write_params",
]
