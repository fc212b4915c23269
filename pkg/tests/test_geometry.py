"""Curvature data model tests: identity suite, Weyl projection, JSON
interchange, and the metric expansion (gauge traces, parity, divergence)."""

import json

import numpy as np
import pytest

from halfbubble.errors import DomainError, InputFormatError
from halfbubble.geometry import (CurvaturePoint, check_dim, eval_metric_inverse,
                                 generate_sample, load_curvature_file, make_battery,
                                 metric_det, metric_divergence, metric_expansion,
                                 rnnnn_total, save_curvature_file, validate_curvature,
                                 weyl_norm_consistency, weyl_part)


def fit_slope(x, y):
    return float(np.polyfit(np.log(np.asarray(x)), np.log(np.abs(np.asarray(y))), 1)[0])


class TestCheckDim:
    def test_supported(self):
        assert check_dim(11) == 11
        assert check_dim(15) == 15

    def test_low_rejected(self):
        with pytest.raises(DomainError):
            check_dim(10)

    def test_allow_low_warns(self):
        with pytest.warns(RuntimeWarning):
            assert check_dim(8, allow_low=True) == 8

    def test_too_low_always_rejected(self):
        with pytest.raises(DomainError):
            check_dim(6, allow_low=True)


class TestCurvaturePoint:
    def test_structural_validation(self):
        n = 11
        m = n - 1
        with pytest.raises(InputFormatError):
            CurvaturePoint("x", n, np.zeros((m, m, m)), np.zeros((m, m)), 0, 0, 0, 1)
        with pytest.raises(InputFormatError):
            CurvaturePoint("x", n, np.zeros((m, m, m, m)), np.zeros((m, 3)), 0, 0, 0, 1)
        with pytest.raises(InputFormatError):
            CurvaturePoint("x", n, np.zeros((m, m, m, m)), np.zeros((m, m)),
                           np.nan, 0, 0, 1)

    def test_arrays_read_only(self):
        p = generate_sample(11, seed=0)
        with pytest.raises(ValueError):
            p.Rbar[0, 0, 0, 0] = 1.0
        with pytest.raises(ValueError):
            p.S[0, 0] = 1.0


class TestSamplesAndValidation:
    @pytest.mark.parametrize("seed", [0, 1, 17])
    def test_samples_pass_all_checks(self, seed):
        p = generate_sample(11, seed=seed, scale=0.8)
        report = validate_curvature(p, tol=1e-12)
        assert report.passed, [c.name for c in report.failures()]

    def test_sample_norms(self):
        p = generate_sample(11, seed=3, scale=0.5)
        assert np.linalg.norm(p.S.ravel()) == pytest.approx(0.5, rel=1e-12)
        assert np.linalg.norm(p.Rbar.ravel()) == pytest.approx(0.5, rel=1e-12)
        assert p.Rnnnn == pytest.approx(-2 * 0.25, rel=1e-12)

    def test_tampered_antisymmetry_detected(self):
        p = generate_sample(11, seed=4)
        R = p.Rbar.copy()
        R[0, 0, 1, 2] += 0.1  # breaks antisymmetry in (i,k)
        bad = CurvaturePoint("bad", p.n, R, p.S, p.D2, p.Rnnnn, p.Wbar2, p.gamma)
        report = validate_curvature(bad)
        assert not report.passed
        assert any(c.name.startswith("rbar_antisym") for c in report.failures())

    def test_tampered_trace_detected(self):
        p = generate_sample(11, seed=5)
        S = p.S + 0.05 * np.eye(p.m)
        bad = CurvaturePoint("bad", p.n, p.Rbar, S, p.D2, p.Rnnnn, p.Wbar2, p.gamma)
        assert any(c.name == "s_traceless" for c in validate_curvature(bad).failures())

    def test_tampered_rnnnn_detected(self):
        p = generate_sample(11, seed=6)
        bad = CurvaturePoint("bad", p.n, p.Rbar, p.S, p.D2, p.Rnnnn + 0.3,
                             p.Wbar2, p.gamma)
        assert any(c.name == "rnnnn_identity" for c in validate_curvature(bad).failures())

    def test_rii_convention(self):
        p = generate_sample(11, seed=7)
        assert rnnnn_total(p, "summed") == p.Rnnnn
        assert rnnnn_total(p, "per_index") == p.Rnnnn * p.m
        with pytest.raises(DomainError):
            rnnnn_total(p, "bogus")
        # a point stored in per-index convention passes only under that flag
        per = CurvaturePoint("per", p.n, p.Rbar, p.S, p.D2, p.Rnnnn / p.m,
                             p.Wbar2, p.gamma)
        assert not validate_curvature(per, rii_convention="summed").passed
        assert validate_curvature(per, rii_convention="per_index").passed

    def test_battery_deterministic(self):
        a = make_battery(11, 3, seed=42)
        b = make_battery(11, 3, seed=42)
        assert [p.label for p in a] == ["battery-00", "battery-01", "battery-02"]
        for pa, pb in zip(a, b):
            assert np.array_equal(pa.Rbar, pb.Rbar)
            assert pa.gamma == pb.gamma
        for p in a:
            assert validate_curvature(p).passed


class TestWeyl:
    def test_projection_kills_traces(self):
        rng = np.random.default_rng(0)
        m = 10
        # random tensor with curvature symmetries but nonzero Ricci part
        h = 0.5 * (rng.standard_normal((m, m)) + rng.standard_normal((m, m)).T)
        T = (np.einsum("ij,kl->ikjl", h, h) + np.einsum("kl,ij->ikjl", h, h)
             - np.einsum("il,kj->ikjl", h, h) - np.einsum("kj,il->ikjl", h, h))
        W = weyl_part(T)
        assert np.linalg.norm(np.einsum("ikil->kl", W)) < 1e-12 * np.linalg.norm(W.ravel())

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        m = 10
        h = 0.5 * (rng.standard_normal((m, m)) + rng.standard_normal((m, m)).T)
        k = 0.5 * (rng.standard_normal((m, m)) + rng.standard_normal((m, m)).T)
        T = (np.einsum("ij,kl->ikjl", h, k) + np.einsum("kl,ij->ikjl", h, k)
             - np.einsum("il,kj->ikjl", h, k) - np.einsum("kj,il->ikjl", h, k))
        W = weyl_part(T)
        assert np.allclose(weyl_part(W), W, atol=1e-13 * np.linalg.norm(W.ravel()))

    def test_samples_consistent(self):
        for seed in (0, 9):
            p = generate_sample(11, seed=seed)
            assert weyl_norm_consistency(p) < 1e-12


class TestJsonInterchange:
    def test_round_trip(self, tmp_path):
        pts = make_battery(11, 2, seed=7)
        path = tmp_path / "pts.json"
        save_curvature_file(path, 11, pts)
        n, back = load_curvature_file(path)
        assert n == 11
        assert len(back) == 2
        for a, b in zip(pts, back):
            assert a.label == b.label
            assert np.array_equal(a.Rbar, b.Rbar)
            assert np.array_equal(a.S, b.S)
            assert (a.D2, a.Rnnnn, a.Wbar2, a.gamma) == (b.D2, b.Rnnnn, b.Wbar2, b.gamma)

    def test_unknown_top_field_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"n": 11, "points": [], "extra": 1}))
        with pytest.raises(InputFormatError, match="unknown top-level"):
            load_curvature_file(path)

    def test_unknown_point_field_rejected(self, tmp_path):
        pts = make_battery(11, 1, seed=7)
        path = tmp_path / "bad.json"
        save_curvature_file(path, 11, pts)
        data = json.loads(path.read_text())
        data["points"][0]["surprise"] = 2.0
        path.write_text(json.dumps(data))
        with pytest.raises(InputFormatError, match="unknown fields"):
            load_curvature_file(path)

    def test_missing_field_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"n": 11, "points": [{"label": "x"}]}))
        with pytest.raises(InputFormatError, match="missing"):
            load_curvature_file(path)

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(InputFormatError, match="not valid JSON"):
            load_curvature_file(path)

    def test_non_integer_n(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"n": 11.0, "points": []}))
        with pytest.raises(InputFormatError, match="integer"):
            load_curvature_file(path)


class TestMetricExpansion:
    def direction(self, m, seed=0):
        rng = np.random.default_rng(seed)
        z0 = rng.standard_normal(m)
        y = np.concatenate([z0, [abs(rng.standard_normal()) + 0.5]])
        y /= np.linalg.norm(y)
        return y[:m], y[m]

    def test_identity_at_origin(self):
        p = generate_sample(11, seed=0)
        me = metric_expansion(p, seed=1)
        g = eval_metric_inverse(me, 0.0, np.zeros(p.m))
        assert np.array_equal(g, np.eye(p.m))

    def test_block_parity(self):
        # degree-d block flips sign as (-1)^d under y -> -y
        p = generate_sample(11, seed=1)
        me = metric_expansion(p, seed=2)
        z0, t0 = self.direction(p.m, 3)
        z0, t0 = 0.3 * z0, 0.3 * t0
        for deg in (2, 3, 4):
            blk_plus = (eval_metric_inverse(me, t0, z0, through_degree=deg)
                        - eval_metric_inverse(me, t0, z0, through_degree=deg - 1))
            blk_minus = (eval_metric_inverse(me, -t0, -z0, through_degree=deg)
                         - eval_metric_inverse(me, -t0, -z0, through_degree=deg - 1))
            sign = (-1.0) ** deg
            assert np.allclose(blk_minus, sign * blk_plus, atol=1e-14)

    def test_gauge_trace_mechanism(self):
        p = generate_sample(11, seed=2)
        me = metric_expansion(p, seed=3, mode="gauge")
        m = p.m
        # solved traces
        assert abs(np.trace(me.T5) - p.Rnnnn) < 1e-12
        assert np.allclose(np.einsum("iik->k", me.S1), 0.0, atol=1e-13)
        assert abs(np.trace(me.S1n)) < 1e-13
        assert np.allclose(np.einsum("iikl->kl", me.T4), 0.0, atol=1e-12)
        assert np.einsum("ijij->", me.T4) == pytest.approx(p.D2, abs=1e-10)
        assert np.allclose(np.einsum("iik->k", me.T3), 0.0, atol=1e-13)

    @pytest.mark.parametrize("mode,lo,hi", [("gauge", 4.5, 8.0), ("zero", 4.5, 8.0),
                                            ("free", 2.7, 3.3)])
    def test_det_slope(self, mode, lo, hi):
        p = generate_sample(11, seed=3)
        me = metric_expansion(p, seed=4, mode=mode)
        z0, t0 = self.direction(p.m, 5)
        eps = np.geomspace(0.03, 0.3, 7)
        vals = np.array([float(metric_det(me, e * t0, e * z0)) - 1.0 for e in eps])
        slope = fit_slope(eps, vals)
        assert lo <= slope <= hi, f"mode={mode}: det slope {slope}"

    def test_tampered_rnnnn_breaks_gauge(self):
        # if the stored Rnnnn violates the -2||S||^2 identity, the volume
        # normalization fails at quartic order: det slope drops to 4
        p = generate_sample(11, seed=4)
        bad = CurvaturePoint("bad", p.n, p.Rbar, p.S, p.D2, p.Rnnnn + 3.0,
                             p.Wbar2, p.gamma)
        me = metric_expansion(bad, seed=5, mode="gauge")
        z0, t0 = self.direction(p.m, 6)
        eps = np.geomspace(0.01, 0.1, 7)
        vals = np.array([float(metric_det(me, e * t0, e * z0)) - 1.0 for e in eps])
        slope = fit_slope(eps, vals)
        assert 3.7 <= slope <= 4.3, f"det slope {slope}"

    def test_divergence_against_fd(self):
        p = generate_sample(11, seed=5)
        m = p.m
        for mode in ("gauge", "free"):
            me = metric_expansion(p, seed=6, mode=mode)
            rng = np.random.default_rng(7)
            z0 = 0.4 * rng.standard_normal(m)
            t0 = 0.3
            got = metric_divergence(me, t0, z0)
            h = 1e-6
            fd = np.zeros(m)
            for i in range(m):
                e = np.zeros(m)
                e[i] = h
                gp = eval_metric_inverse(me, t0, z0 + e)
                gm = eval_metric_inverse(me, t0, z0 - e)
                fd += (gp[i, :] - gm[i, :]) / (2 * h)
            assert np.allclose(got, fd, rtol=5e-7, atol=1e-9), mode

    def test_pd_guard(self):
        p = generate_sample(11, seed=6, scale=1.0)
        me = metric_expansion(p, seed=7, mode="zero")
        lam_min = float(np.min(np.linalg.eigvalsh(p.S)))
        assert lam_min < 0
        t_bad = np.sqrt(2.0 / abs(lam_min))
        with pytest.raises(DomainError, match="positive definite"):
            eval_metric_inverse(me, t_bad, np.zeros(p.m), through_degree=2, check_pd=True)
        g = eval_metric_inverse(me, 0.05, np.zeros(p.m), through_degree=2, check_pd=True)
        assert g.shape == (p.m, p.m)

    def test_batch_matches_single(self):
        p = generate_sample(11, seed=8)
        me = metric_expansion(p, seed=9)
        rng = np.random.default_rng(10)
        z = 0.3 * rng.standard_normal((5, p.m))
        t = 0.2 * np.abs(rng.standard_normal(5))
        batch = eval_metric_inverse(me, t, z)
        for i in range(5):
            single = eval_metric_inverse(me, t[i], z[i])
            assert np.allclose(batch[i], single, rtol=1e-14, atol=1e-16)
        dbatch = metric_divergence(me, t, z)
        for i in range(5):
            assert np.allclose(dbatch[i], metric_divergence(me, t[i], z[i]),
                               rtol=1e-13, atol=1e-16)

    def test_modes_exclusive(self):
        p = generate_sample(11, seed=9)
        with pytest.raises(DomainError):
            metric_expansion(p, seed=0, mode="wild")
