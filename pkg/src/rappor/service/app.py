"""HTTP facade over the toolkit.

Two kinds of endpoints:

* collection sessions: clients POST randomized reports and the service
  folds them straight into a counts matrix, never storing raw values;
  an analyst can fetch counts or trigger a decode at any time.
* file jobs: batch pipeline stages (encode/aggregate/map/decode/synth/
  experiment) operating on paths visible to the service process, for the
  CLI and local automation.

Parameter math (validation, budgets, search) is exposed inline.
"""

from __future__ import annotations

import math
import threading
import uuid
from dataclasses import replace
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import aggregate as agg
from .. import candidate_map as cm
from .. import datasets as ds
from .. import decoder as dec
from .. import encoder as enc
from .. import experiment as ex
from .. import params as pr
from ..errors import RapporError
from . import models as m

API_VERSION = "0.1.0"


class Session:
    """One collection round: fixed params, a growing counts matrix."""

    def __init__(self, params: pr.RapporParams, candidates: list[str] | None):
        self.params = params
        self.candidates = candidates
        self.counts = agg.zero_counts(params.m, params.k)
        self.lock = threading.Lock()


def _report_from_model(model: m.ReportModel) -> enc.Report:
    return enc.Report(
        client=model.client,
        cohort=model.cohort,
        irr=enc.BitVector.from_string(model.irr),
        bloom=enc.BitVector.from_string(model.bloom) if model.bloom else None,
        prr=enc.BitVector.from_string(model.prr) if model.prr else None,
    )


def _report_to_model(report: enc.Report) -> m.ReportModel:
    return m.ReportModel(
        client=report.client,
        cohort=report.cohort,
        irr=report.irr.to_string(),
        bloom=report.bloom.to_string() if report.bloom else None,
        prr=report.prr.to_string() if report.prr else None,
    )


def create_app() -> FastAPI:
    app = FastAPI(title="rappor-toolkit", version=API_VERSION)
    sessions: dict[str, Session] = {}

    @app.exception_handler(RapporError)
    async def _domain_error(_: Request, exc: RapporError) -> JSONResponse:
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(FileNotFoundError)
    async def _missing_file(_: Request, exc: FileNotFoundError) -> JSONResponse:
        return JSONResponse(
            status_code=400, content={"detail": f"file not found: {exc.filename}"}
        )

    @app.get("/healthz", response_model=m.HealthResponse)
    def healthz():
        return m.HealthResponse(status="ok", version=API_VERSION)

    # -- parameter math -------------------------------------------------

    @app.post("/params/validate", response_model=m.ParamsModel)
    def validate_params(body: m.ParamsModel):
        return m.ParamsModel.from_params(pr.validate(body.to_params()))

    @app.post("/params/profile", response_model=m.ProfileResponse)
    def params_profile(body: m.ParamsModel):
        params = pr.validate(body.to_params())
        return m.ProfileResponse.build(params, pr.privacy_profile(params))

    @app.post("/params/search", response_model=m.SearchResponse)
    def params_search(body: m.SearchRequest):
        matches = pr.find_params(
            body.target_epsilon,
            f_step=body.f_step,
            p_step=body.p_step,
            q_step=body.q_step,
            h=body.h,
            tolerance=body.tolerance,
            limit=body.limit,
        )
        return m.SearchResponse(
            matches=[
                m.SearchMatch(params=m.ParamsModel.from_params(p), epsilon=e)
                for p, e in matches
            ]
        )

    # -- client-side helper ----------------------------------------------

    @app.post("/encode/value", response_model=m.EncodeValueResponse)
    def encode_value(body: m.EncodeValueRequest):
        params = pr.validate(body.params.to_params())
        mode = enc.EncoderMode.parse(body.mode)
        secret = enc.derive_user_secret(body.master_seed, body.client)
        rng = enc.report_rng(body.master_seed, body.index)
        report = enc.encode_report(
            body.client, body.value, params, mode, secret, rng, audit=body.audit
        )
        return m.EncodeValueResponse(report=_report_to_model(report))

    # -- collection sessions ----------------------------------------------

    @app.post("/sessions", response_model=m.SessionCreateResponse, status_code=201)
    def create_session(body: m.SessionCreateRequest):
        params = pr.validate(body.params.to_params())
        session_id = uuid.uuid4().hex
        sessions[session_id] = Session(params, body.candidates)
        return m.SessionCreateResponse(session_id=session_id)

    def _get_session(session_id: str) -> Session:
        session = sessions.get(session_id)
        if session is None:
            raise RapporError(f"unknown session {session_id!r}")
        return session

    @app.get("/sessions/{session_id}", response_model=m.SessionInfoResponse)
    def session_info(session_id: str):
        session = _get_session(session_id)
        return m.SessionInfoResponse(
            session_id=session_id,
            params=m.ParamsModel.from_params(session.params),
            total_reports=session.counts.total_reports,
            candidates=session.candidates,
        )

    @app.post(
        "/sessions/{session_id}/reports", response_model=m.SubmitReportsResponse
    )
    def submit_reports(session_id: str, body: m.SubmitReportsRequest):
        session = _get_session(session_id)
        reports = [_report_from_model(r) for r in body.reports]
        with session.lock:
            agg.add_reports(session.counts, reports, session.params)
            total = session.counts.total_reports
        return m.SubmitReportsResponse(accepted=len(reports), total_reports=total)

    @app.get("/sessions/{session_id}/counts", response_model=m.CountsResponse)
    def session_counts(session_id: str):
        session = _get_session(session_id)
        with session.lock:
            counts = agg.CountsMatrix(
                n=session.counts.n.copy(), bits=session.counts.bits.copy()
            )
        return m.CountsResponse(
            m=counts.m,
            k=counts.k,
            n=[int(x) for x in counts.n],
            bits=[[int(x) for x in row] for row in counts.bits],
        )

    @app.post("/sessions/{session_id}/decode", response_model=m.DecodeResponse)
    def session_decode(session_id: str, body: m.SessionDecodeRequest):
        session = _get_session(session_id)
        if not session.candidates:
            raise RapporError("session has no candidate list to decode against")
        with session.lock:
            counts = agg.CountsMatrix(
                n=session.counts.n.copy(), bits=session.counts.bits.copy()
            )
        cmap = cm.build_map(session.candidates, session.params)
        dist = dec.decode(
            counts, cmap, session.params, alpha=body.alpha, min_reports=body.min_reports
        )
        return m.DecodeResponse(
            entries=[
                m.DecodedEntryModel(
                    string=e.string,
                    estimate=e.estimate,
                    std_error=e.std_error,
                    detected=e.detected,
                )
                for e in dist.entries
            ],
            total_reports=dist.total_reports,
        )

    @app.delete("/sessions/{session_id}", status_code=204)
    def delete_session(session_id: str):
        _get_session(session_id)
        del sessions[session_id]

    # -- file jobs ---------------------------------------------------------

    @app.post("/jobs/encode", response_model=m.EncodeJobResponse)
    def job_encode(body: m.EncodeJobRequest):
        params = pr.validate(pr.read_params(body.params_path))
        mode = enc.EncoderMode.parse(body.mode)
        dataset = ds.read_dataset(body.dataset_path)
        out_dir = Path(body.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        reports_path = out_dir / "reports.csv"
        true_values_path = out_dir / "true_values.csv"
        written = 0
        with open(reports_path, "w", encoding="utf-8", newline="") as rep_fh, open(
            true_values_path, "w", encoding="utf-8", newline=""
        ) as tv_fh:
            rep_fh.write(enc.REPORTS_HEADER + "\n")
            tv_fh.write(enc.TRUE_VALUES_HEADER + "\n")
            for chunk in enc.iter_encoded_chunks(
                dataset.records,
                params,
                mode,
                body.seed,
                audit=body.audit,
                workers=body.workers,
            ):
                rep_fh.write("".join(enc.report_row(r) + "\n" for r in chunk))
                tv_fh.write(
                    "".join(
                        f"{enc.csv_quote(r.client)},{r.cohort},{enc.csv_quote(v)}\n"
                        for r, (_, v) in zip(
                            chunk, dataset.records[written : written + len(chunk)]
                        )
                    )
                )
                written += len(chunk)
        return m.EncodeJobResponse(
            reports=written,
            reports_path=str(reports_path),
            true_values_path=str(true_values_path),
        )

    @app.post("/jobs/aggregate", response_model=m.AggregateJobResponse)
    def job_aggregate(body: m.AggregateJobRequest):
        params = pr.validate(pr.read_params(body.params_path))
        reports = enc.read_reports(body.reports_path)
        counts = agg.accumulate(reports, params)
        agg.write_counts(counts, body.out_path)
        return m.AggregateJobResponse(
            reports=counts.total_reports, cohorts=counts.m, out_path=body.out_path
        )

    @app.post("/jobs/map", response_model=m.MapJobResponse)
    def job_map(body: m.MapJobRequest):
        params = pr.validate(pr.read_params(body.params_path))
        candidates = cm.load_candidates(body.candidates_path)
        cmap = cm.build_map(candidates, params)
        cm.write_map(cmap, body.out_path)
        return m.MapJobResponse(candidates=len(candidates), out_path=body.out_path)

    @app.post("/jobs/decode", response_model=m.DecodeJobResponse)
    def job_decode(body: m.DecodeJobRequest):
        params = pr.validate(pr.read_params(body.params_path))
        counts = agg.read_counts(body.counts_path)
        cmap = cm.read_map(body.map_path, expected_arity=params.m * params.h)
        dist = dec.decode(
            counts, cmap, params, alpha=body.alpha, min_reports=body.min_reports
        )
        dec.write_results(dist, body.out_path)
        entries = [
            m.DecodedEntryModel(
                string=e.string,
                estimate=e.estimate,
                std_error=e.std_error,
                detected=e.detected,
            )
            for e in dist.entries
        ]
        return m.DecodeJobResponse(
            entries=entries,
            detected=sum(1 for e in dist.entries if e.detected),
            out_path=body.out_path,
        )

    @app.post("/jobs/synth", response_model=m.SynthJobResponse)
    def job_synth(body: m.SynthJobRequest):
        dataset, histogram = ds.synth_zipf(
            body.num_candidates, body.n, body.exponent, body.seed
        )
        ds.write_dataset(dataset, body.out_path)
        if body.uniques_path:
            ds.write_uniques(ds.zipf_candidates(body.num_candidates), body.uniques_path)
        return m.SynthJobResponse(
            records=len(dataset), distinct=histogram.distinct, out_path=body.out_path
        )

    @app.post("/jobs/experiment", response_model=m.ExperimentJobResponse)
    def job_experiment(body: m.ExperimentJobRequest):
        grid = ex.parse_grid_config(body.config_path, body.out_dir)
        if body.seeds:
            grid = replace(grid, seeds=tuple(body.seeds))
        result = ex.run_grid(grid, workers=body.workers)
        summary = [
            m.SummaryRowModel(
                population=row.population,
                epsilon=row.epsilon,
                true_strings=None if math.isnan(row.true_strings) else row.true_strings,
                rappor_strings=None
                if math.isnan(row.rappor_strings)
                else row.rappor_strings,
                accurate80=None if math.isnan(row.accurate80) else row.accurate80,
                proportion=row.proportion,
                seeds=list(row.seeds),
            )
            for row in result.summary
        ]
        out_dir = Path(body.out_dir)
        return m.ExperimentJobResponse(
            summary=summary,
            scenarios=len(result.scenarios),
            failures=[
                f"N{population} eps{epsilon} seed{seed}: {message}"
                for population, epsilon, seed, message in result.failures
            ],
            summary_path=str(out_dir / "summary.csv"),
            plot_path=str(out_dir / "plot.csv"),
        )

    return app
