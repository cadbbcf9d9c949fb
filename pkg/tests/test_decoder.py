import itertools
import random

import numpy as np
import pytest

from rappor import aggregate as agg
from rappor import candidate_map as cm
from rappor import datasets as ds
from rappor import decoder as dec
from rappor import encoder as enc
from rappor import params as pr
from rappor.errors import DegenerateNoise, ShapeMismatch

from conftest import kkt_violation_bound, rebuild_design


NOISELESS = pr.RapporParams(k=64, h=2, m=16, f=0.0, p=0.0, q=1.0)


class TestDebias:
    def test_noiseless_passthrough(self):
        counts = agg.CountsMatrix(
            n=np.array([10, 20]), bits=np.array([[3, 0, 7], [5, 20, 1]])
        )
        params = pr.RapporParams(k=3, h=1, m=2, f=0.0, p=0.0, q=1.0)
        out = dec.debias(params=pr.validate(params, require_pow2_k=False), counts=counts)
        assert np.allclose(out.y, counts.bits.ravel())

    def test_pure_noise_level_maps_to_zero(self, medium_params):
        p_star, _ = pr.effective_probabilities(medium_params)
        n = 1000
        counts = agg.zero_counts(medium_params.m, medium_params.k)
        counts.n[:] = n
        counts.bits[:] = int(p_star * n)
        out = dec.debias(counts, medium_params)
        assert np.allclose(out.y, (int(p_star * n) - p_star * n) / 0.125)

    def test_degenerate_noise_rejected(self):
        counts = agg.zero_counts(2, 4)
        params = pr.RapporParams(k=4, h=1, m=2, f=1.0, p=0.3, q=0.9)
        with pytest.raises(DegenerateNoise):
            dec.debias(counts, params)

    def test_unbiased_under_binomial_observation(self, medium_params):
        # One bit held by x of n reports; the debiased estimate averages to x.
        rng = np.random.default_rng(0)
        p_star, q_star = pr.effective_probabilities(medium_params)
        x, n, trials = 2000, 50_000, 100
        draws = rng.binomial(x, q_star, trials) + rng.binomial(n - x, p_star, trials)
        estimates = []
        for c in draws:
            counts = agg.CountsMatrix(n=np.array([n]), bits=np.array([[c]]))
            one_bit = pr.RapporParams(
                k=1, h=1, m=1,
                f=medium_params.f, p=medium_params.p, q=medium_params.q,
            )
            estimates.append(dec.debias(counts, one_bit).y[0])
        var_c = x * q_star * (1 - q_star) + (n - x) * p_star * (1 - p_star)
        sigma_mean = (var_c**0.5 / (q_star - p_star)) / trials**0.5
        assert abs(np.mean(estimates) - x) < 3 * sigma_mean


def brute_force_nnls(design: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Try every support set; keep the best feasible least-squares fit."""
    n = design.shape[1]
    best, best_rss = np.zeros(n), float(y @ y)
    for size in range(1, n + 1):
        for subset in itertools.combinations(range(n), size):
            sub = design[:, subset]
            coef, *_ = np.linalg.lstsq(sub, y, rcond=None)
            if (coef < 0).any():
                continue
            resid = y - sub @ coef
            rss = float(resid @ resid)
            if rss < best_rss - 1e-12:
                best_rss = rss
                best = np.zeros(n)
                best[list(subset)] = coef
    return best


class TestNnls:
    def test_identity_nonnegative(self):
        y = np.array([1.0, 0.0, 3.5, 2.0])
        assert np.allclose(dec.nnls(np.eye(4), y), y)

    def test_identity_clips_negatives(self):
        y = np.array([1.0, -2.0, 3.5, -0.1])
        assert np.allclose(dec.nnls(np.eye(4), y), np.maximum(y, 0.0))

    def test_recovers_known_coefficients(self):
        rng = np.random.default_rng(5)
        design = (rng.random((12, 4)) < 0.4).astype(float)
        design[:, 0] += np.eye(12, 4)[:, 0]  # guarantee a nonzero column
        truth = np.array([3.0, 0.0, 1.5, 0.7])
        y = design @ truth
        got = dec.nnls(design, y)
        assert np.allclose(design @ got, y, atol=1e-8)

    def test_matches_exhaustive_enumeration(self):
        rng = np.random.default_rng(17)
        for _ in range(15):
            rows = rng.integers(6, 14)
            cols = rng.integers(1, 5)
            design = (rng.random((rows, cols)) < 0.5).astype(float)
            y = rng.normal(0, 2, rows)
            got = dec.nnls(design, y)
            expected = brute_force_nnls(design, y)
            resid_got = y - design @ got
            resid_exp = y - design @ expected
            # Compare objective values; ties in beta can differ legally.
            assert float(resid_got @ resid_got) <= float(resid_exp @ resid_exp) + 1e-9
            assert kkt_violation_bound(design, y, got)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            dec.nnls(np.eye(3), np.zeros(4))

    def test_zero_target_returns_zero(self):
        assert not dec.nnls(np.ones((5, 3)), np.zeros(5)).any()


def _noiseless_pipeline(values: list[str], candidates: list[str], params):
    records = [(f"u{i}", v) for i, v in enumerate(values)]
    reports = enc.encode_records(records, params, enc.EncoderMode.ONE_TIME, 0)
    counts = agg.accumulate(reports, params)
    cmap = cm.build_map(candidates, params)
    return counts, cmap


class TestDecode:
    def test_single_candidate_exact(self):
        # "c0" maps cleanly (two distinct bits in every cohort) at these dims.
        counts, cmap = _noiseless_pipeline(["c0"] * 500, ["c0"], NOISELESS)
        dist = dec.decode(counts, cmap, NOISELESS)
        entry = dist.entries[0]
        assert entry.estimate == pytest.approx(500, abs=1e-6)
        assert entry.detected

    def test_all_zero_counts(self, medium_params):
        counts = agg.zero_counts(medium_params.m, medium_params.k)
        cmap = cm.build_map(["a", "b", "c"], medium_params)
        dist = dec.decode(counts, cmap, medium_params)
        assert all(e.estimate == 0 for e in dist.entries)
        assert not any(e.detected for e in dist.entries)

    def test_scale_equivariance_noiseless(self):
        candidates = ["c0", "c1", "c3"]
        base_values = ["c0"] * 40 + ["c1"] * 10 + ["c3"] * 5
        counts1, cmap = _noiseless_pipeline(base_values, candidates, NOISELESS)
        counts3 = agg.CountsMatrix(n=counts1.n * 3, bits=counts1.bits * 3)
        est1 = {e.string: e.estimate for e in dec.decode(counts1, cmap, NOISELESS).entries}
        est3 = {e.string: e.estimate for e in dec.decode(counts3, cmap, NOISELESS).entries}
        for name in candidates:
            assert est3[name] == pytest.approx(3 * est1[name], rel=1e-9, abs=1e-9)

    def test_kkt_holds_on_noisy_decode(self, medium_params):
        dataset, _ = ds.synth_zipf(30, 3000, 1.2, seed=3)
        reports = enc.encode_records(
            dataset.records, medium_params, enc.EncoderMode.STANDARD, 3
        )
        counts = agg.accumulate(reports, medium_params)
        candidates = ds.zipf_candidates(30)
        cmap = cm.build_map(candidates, medium_params)
        dist = dec.decode(counts, cmap, medium_params)
        design, used = rebuild_design(cmap, medium_params)
        y = dec.debias(counts, medium_params).y[used]
        beta = np.array(
            [dist.by_string()[c].estimate / medium_params.m for c in candidates]
        )
        assert kkt_violation_bound(design, y, beta)

    def test_detected_implies_positive_estimate(self, medium_params):
        dataset, _ = ds.synth_zipf(20, 2000, 1.2, seed=4)
        reports = enc.encode_records(
            dataset.records, medium_params, enc.EncoderMode.STANDARD, 4
        )
        counts = agg.accumulate(reports, medium_params)
        cmap = cm.build_map(ds.zipf_candidates(20), medium_params)
        for entry in dec.decode(counts, cmap, medium_params).entries:
            assert entry.estimate >= 0
            if entry.detected:
                assert entry.estimate > 0

    def test_results_ordering_and_csv(self, tmp_path):
        counts, cmap = _noiseless_pipeline(
            ["c0"] * 30 + ["c1"] * 50, ["c0", "c1", "c3"], NOISELESS
        )
        dist = dec.decode(counts, cmap, NOISELESS)
        names = [e.string for e in dist.entries]
        assert names == ["c1", "c0", "c3"]  # descending estimate
        path = tmp_path / "results.csv"
        dec.write_results(dist, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "string,estimate,std_error,detected"
        assert lines[1].startswith("c1,")

    def test_map_params_mismatch_rejected(self, medium_params):
        counts = agg.zero_counts(medium_params.m, medium_params.k)
        wrong = pr.RapporParams(k=32, h=1, m=64, f=0.5, p=0.5, q=0.75)
        cmap = cm.build_map(["a"], wrong)
        with pytest.raises(ShapeMismatch):
            dec.decode(counts, cmap, medium_params)

    def test_per_cohort_scaling_noiseless(self):
        counts, cmap = _noiseless_pipeline(["c0"] * 200, ["c0"], NOISELESS)
        dist = dec.decode(counts, cmap, NOISELESS, per_cohort_scaling=True)
        assert dist.entries[0].estimate == pytest.approx(200, rel=0.05)
