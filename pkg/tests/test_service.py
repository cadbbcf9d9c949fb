import pytest
from fastapi.testclient import TestClient

from rappor import aggregate as agg
from rappor import datasets as ds
from rappor import encoder as enc
from rappor import params as pr
from rappor.service import create_app

MEDIUM = {"k": 32, "h": 2, "m": 64, "f": 0.5, "p": 0.5, "q": 0.75}


@pytest.fixture
def client():
    with TestClient(create_app()) as tc:
        yield tc


class TestHealthAndParams:
    def test_healthz(self, client):
        body = client.get("/healthz").json()
        assert body["status"] == "ok"

    def test_profile_reference_budget(self, client):
        response = client.post("/params/profile", json=MEDIUM)
        assert response.status_code == 200
        body = response.json()
        assert body["p_star"] == pytest.approx(0.5625)
        assert body["q_star"] == pytest.approx(0.6875)
        assert body["epsilon_one"] == pytest.approx(1.0743, abs=5e-4)
        assert body["epsilon_infinity"] == pytest.approx(4.3944, abs=5e-4)

    def test_unbounded_budget_serializes_as_null(self, client):
        noiseless = dict(MEDIUM, f=0.0, p=0.0, q=1.0)
        body = client.post("/params/profile", json=noiseless).json()
        assert body["epsilon_one"] is None
        assert body["epsilon_infinity"] is None

    def test_invalid_params_rejected(self, client):
        bad = dict(MEDIUM, q=0.5)  # q == p
        response = client.post("/params/validate", json=bad)
        assert response.status_code == 400
        assert "exceed" in response.json()["detail"]

    def test_search_finds_reference_row(self, client):
        request = {"target_epsilon": 1.0, "tolerance": 0.1, "limit": 2000}
        body = client.post("/params/search", json=request).json()
        combos = {
            (m["params"]["f"], m["params"]["p"], m["params"]["q"])
            for m in body["matches"]
        }
        assert (0.5, 0.5, 0.75) in combos

    def test_search_no_match_is_400(self, client):
        request = {"target_epsilon": 50.0, "tolerance": 0.01}
        assert client.post("/params/search", json=request).status_code == 400


class TestEncodeValue:
    def test_matches_library_encoding(self, client):
        request = {
            "params": MEDIUM,
            "client": "u1",
            "value": "dog",
            "mode": "standard",
            "master_seed": 42,
            "index": 7,
            "audit": True,
        }
        body = client.post("/encode/value", json=request).json()
        report = body["report"]
        expected = enc.encode_report(
            "u1",
            "dog",
            pr.REFERENCE_PARAMS["medium"],
            enc.EncoderMode.STANDARD,
            enc.derive_user_secret(42, "u1"),
            enc.report_rng(42, 7),
            audit=True,
        )
        assert report["cohort"] == expected.cohort == 24
        assert report["irr"] == expected.irr.to_string()
        assert report["bloom"] == expected.bloom.to_string()


class TestSessions:
    def _create(self, client, candidates=None):
        request = {"params": MEDIUM, "candidates": candidates}
        response = client.post("/sessions", json=request)
        assert response.status_code == 201
        return response.json()["session_id"]

    def _submit_dataset(self, client, session_id, records, seed=0):
        reports = enc.encode_records(
            records, pr.REFERENCE_PARAMS["medium"], enc.EncoderMode.STANDARD, seed
        )
        payload = {
            "reports": [
                {"client": r.client, "cohort": r.cohort, "irr": r.irr.to_string()}
                for r in reports
            ]
        }
        response = client.post(f"/sessions/{session_id}/reports", json=payload)
        assert response.status_code == 200
        return reports, response.json()

    def test_full_collection_round(self, client):
        candidates = ds.zipf_candidates(20)
        session_id = self._create(client, candidates)

        dataset, hist = ds.synth_zipf(20, 3000, 1.2, seed=5)
        reports, body = self._submit_dataset(client, session_id, dataset.records, seed=5)
        assert body == {"accepted": 3000, "total_reports": 3000}

        counts_body = client.get(f"/sessions/{session_id}/counts").json()
        expected = agg.accumulate(reports, pr.REFERENCE_PARAMS["medium"])
        assert counts_body["n"] == expected.n.tolist()
        assert counts_body["bits"] == expected.bits.tolist()

        decode_body = client.post(
            f"/sessions/{session_id}/decode", json={"alpha": 0.05}
        ).json()
        assert decode_body["total_reports"] == 3000
        by_name = {e["string"]: e for e in decode_body["entries"]}
        top = hist.counts["cand_0001"]
        assert by_name["cand_0001"]["detected"]
        assert by_name["cand_0001"]["estimate"] == pytest.approx(top, rel=0.5)

    def test_incremental_submission_accumulates(self, client):
        session_id = self._create(client)
        dataset, _ = ds.synth_zipf(5, 200, 1.0, seed=6)
        self._submit_dataset(client, session_id, dataset.records[:120], seed=6)
        _, body = self._submit_dataset(client, session_id, dataset.records[120:], seed=7)
        assert body["total_reports"] == 200

    def test_bad_report_rejected(self, client):
        session_id = self._create(client)
        payload = {"reports": [{"client": "u1", "cohort": 99, "irr": "0" * 32}]}
        response = client.post(f"/sessions/{session_id}/reports", json=payload)
        assert response.status_code == 400

    def test_decode_without_candidates_rejected(self, client):
        session_id = self._create(client)
        response = client.post(f"/sessions/{session_id}/decode", json={})
        assert response.status_code == 400

    def test_delete_session(self, client):
        session_id = self._create(client)
        assert client.delete(f"/sessions/{session_id}").status_code == 204
        assert client.get(f"/sessions/{session_id}").status_code == 400


class TestFileJobs:
    def test_pipeline_through_jobs(self, client, tmp_path):
        params_path = tmp_path / "params.csv"
        pr.write_params(pr.REFERENCE_PARAMS["low"], params_path)

        synth = client.post(
            "/jobs/synth",
            json={
                "num_candidates": 25,
                "n": 2000,
                "exponent": 1.2,
                "seed": 3,
                "out_path": str(tmp_path / "dataset.csv"),
                "uniques_path": str(tmp_path / "uniques.txt"),
            },
        ).json()
        assert synth["records"] == 2000

        encode = client.post(
            "/jobs/encode",
            json={
                "dataset_path": str(tmp_path / "dataset.csv"),
                "params_path": str(params_path),
                "out_dir": str(tmp_path),
                "mode": "standard",
                "seed": 3,
                "workers": 1,
            },
        ).json()
        assert encode["reports"] == 2000

        aggregate = client.post(
            "/jobs/aggregate",
            json={
                "reports_path": encode["reports_path"],
                "params_path": str(params_path),
                "out_path": str(tmp_path / "counts.csv"),
            },
        ).json()
        assert aggregate["reports"] == 2000 and aggregate["cohorts"] == 64

        mapped = client.post(
            "/jobs/map",
            json={
                "candidates_path": str(tmp_path / "uniques.txt"),
                "params_path": str(params_path),
                "out_path": str(tmp_path / "map.csv"),
            },
        ).json()
        assert mapped["candidates"] == 25

        decoded = client.post(
            "/jobs/decode",
            json={
                "counts_path": str(tmp_path / "counts.csv"),
                "map_path": str(tmp_path / "map.csv"),
                "params_path": str(params_path),
                "out_path": str(tmp_path / "results.csv"),
            },
        ).json()
        assert decoded["detected"] >= 1
        assert (tmp_path / "results.csv").exists()

    def test_experiment_job(self, client, tmp_path):
        cfg = tmp_path / "grid.cfg"
        cfg.write_text(
            "populations = 400\nepsilons = 10.018\nseeds = 1,2\ncandidates = 15\n"
        )
        body = client.post(
            "/jobs/experiment",
            json={
                "config_path": str(cfg),
                "out_dir": str(tmp_path / "grid"),
                "workers": 1,
            },
        ).json()
        assert body["scenarios"] == 2
        assert len(body["summary"]) == 1
        assert body["failures"] == []
        assert (tmp_path / "grid" / "summary.csv").exists()

    def test_missing_file_is_400(self, client, tmp_path):
        response = client.post(
            "/jobs/aggregate",
            json={
                "reports_path": str(tmp_path / "nope.csv"),
                "params_path": str(tmp_path / "nope2.csv"),
                "out_path": str(tmp_path / "out.csv"),
            },
        )
        assert response.status_code == 400
        assert "not found" in response.json()["detail"]
