"""Energy coefficients and slope experiments.

Closed-form Beta oracles for A and B, Monte Carlo oracles for the G terms,
assembly identities for phi, and the two slope experiments on shared
big-domain corrector solutions.
"""

import dataclasses
import math

import numpy as np
import pytest
from scipy.special import beta as beta_fn

from halfbubble.bubble import eval_U_grad
from halfbubble.corrector import GridConfig, solve_vq
from halfbubble.energy import (
    ReducedCoefficients,
    SlopeExperiment,
    compute_A,
    compute_A_boundary,
    compute_A_gradient,
    compute_B,
    compute_G_terms,
    compute_phi,
    cutoff_chi,
    energy_csv_header,
    energy_csv_row,
    residual_slope,
    verify_A4_L2_L3_identity,
)
from halfbubble.errors import BudgetError, DomainError, ValidationFailure
from halfbubble.geometry import generate_sample, metric_expansion
from halfbubble.quadrature import (
    MomentKey,
    mc_halfspace,
    moment,
    sphere_area,
)

DIMS = (11, 13, 15)


def zero_curvature_point(n):
    pt = generate_sample(n, seed=0)
    m = n - 1
    return dataclasses.replace(
        pt, S=np.zeros((m, m)), Rbar=np.zeros((m, m, m, m)),
        D2=0.0, Rnnnn=0.0, Wbar2=0.0)


@pytest.fixture(scope="module")
def point11():
    return generate_sample(11, seed=1)


@pytest.fixture(scope="module")
def sol11(point11):
    return solve_vq(point11)


@pytest.fixture(scope="module")
def sol11_big(point11):
    grid = GridConfig(n_t=192, n_r=192, t_max=160.0, r_max=160.0)
    return solve_vq(point11, grid=grid, richardson=True)


# ---------------------------------------------------------------------------


class TestProfileConstants:
    @pytest.mark.parametrize("n", DIMS)
    def test_A_matches_beta_oracle(self, n):
        boundary_oracle = sphere_area(n - 2) * 0.5 * beta_fn(
            (n - 1) / 2.0, (n - 1) / 2.0)
        oracle = (n - 2.0) / (2.0 * (n - 1.0)) * boundary_oracle
        assert compute_A(n) == pytest.approx(oracle, rel=1e-8)

    @pytest.mark.parametrize("n", DIMS)
    def test_A_positive(self, n):
        assert compute_A(n) > 0.0

    @pytest.mark.parametrize("n", DIMS)
    def test_gradient_route_matches_beta_oracle(self, n):
        oracle = (n - 2.0) ** 2 * sphere_area(n - 2) * 0.5 \
            * beta_fn((n - 1) / 2.0, (n - 1) / 2.0) / (n - 2.0)
        assert compute_A_gradient(n) == pytest.approx(oracle, rel=1e-8)

    @pytest.mark.parametrize("n", DIMS)
    def test_divergence_theorem_ties_the_two_routes(self, n):
        # 2D half-space quadrature against 1D boundary quadrature;
        # independent code paths, tied by the divergence theorem
        grad = compute_A_gradient(n)
        boundary = compute_A_boundary(n)
        assert grad == pytest.approx((n - 2.0) * boundary, rel=1e-8)

    @pytest.mark.parametrize("n", DIMS)
    def test_B_matches_beta_oracle(self, n):
        oracle = 0.25 * sphere_area(n - 2) * beta_fn(
            (n - 1) / 2.0, (n - 3) / 2.0)
        assert compute_B(n) == pytest.approx(oracle, rel=1e-8)

    def test_B_positive(self):
        for n in DIMS:
            assert compute_B(n) > 0.0

    def test_B_rejects_low_dimension(self):
        with pytest.raises(DomainError):
            compute_B(4)

    def test_B_stable_under_node_doubling(self):
        # fixed-panel Gauss evaluation of the same radial integrand at two
        # node counts; doubling must not move the value beyond 1e-10
        n = 11

        def gauss_value(order):
            edges = np.concatenate([[0.0], np.geomspace(0.05, 60.0, 60)])
            x, w = np.polynomial.legendre.leggauss(order)
            total = 0.0
            for a, b in zip(edges[:-1], edges[1:]):
                mid, half = 0.5 * (a + b), 0.5 * (b - a)
                r = mid + half * x
                total += half * np.sum(w * r ** (n - 2)
                                       * (1 + r * r) ** (-(n - 2.0)))
            tail = 60.0 ** (n - 2 - 2 * (n - 2) + 1) / (n - 3.0)
            return 0.5 * sphere_area(n - 2) * total, tail

        v1, tail = gauss_value(10)
        v2, _ = gauss_value(20)
        assert abs(v1 - v2) <= 1e-10 * abs(v2)
        assert abs(v2 - compute_B(n)) <= 1e-8 * abs(v2) + tail


class TestGTerms:
    def test_G1_identically_zero(self, point11):
        G1, _, _ = compute_G_terms(point11)
        assert G1 == 0.0

    @pytest.mark.parametrize("n", DIMS)
    def test_closed_forms(self, n):
        pt = generate_sample(n, seed=2)
        I2, _ = moment(n, MomentKey(n, 2, 4))
        _, G2, G3 = compute_G_terms(pt)
        assert G2 == pytest.approx(
            (n - 2.0) ** 2 / (n * n - 1.0) * I2 * pt.D2, rel=1e-12)
        assert G3 == pytest.approx(
            6.0 * (n - 2.0) / (n * n - 1.0) * I2 * pt.s_norm_sq(), rel=1e-12)

    def test_G3_nonnegative_on_battery(self):
        for n in DIMS:
            for seed in range(4):
                _, _, G3 = compute_G_terms(generate_sample(n, seed=seed))
                assert G3 >= 0.0

    def test_G3_mc_oracle(self, point11):
        # defining integral: sum_i (1/12)(c_i + 8 (S^2)_ii) int t^4 (dU_i)^2
        # with a synthetic diagonal c summing to Rnnnn = -2 ||S||^2
        pt = point11
        n = pt.n
        m = n - 1
        rng = np.random.default_rng(7)
        c = rng.normal(size=m)
        c += (pt.Rnnnn - c.sum()) / m
        weights = (c + 8.0 * np.diag(pt.S @ pt.S)) / 12.0

        def integrand(t, z):
            gu = eval_U_grad(n, t, z)[:, :m]
            return t ** 4 * np.einsum("i,bi->b", weights, gu ** 2)

        est = mc_halfspace(n, integrand, n_samples=400000, seed=3,
                           t_scale=1.5, z_scale=1.5)
        _, _, G3 = compute_G_terms(pt)
        assert est.std_error <= 0.05 * abs(G3)
        assert abs(est.mean - G3) <= 3.0 * est.std_error

    def test_G2_mc_oracle(self, point11):
        # defining integral: (n-2)^2/2 int T_ijkl z_i z_j z_k z_l t^2 Q^-n
        # with the gauge-mode quartic tensor: nn-trace free, contraction D2
        pt = point11
        n = pt.n
        m = n - 1
        T4 = metric_expansion(pt, seed=0, mode="gauge").T4
        assert np.einsum("ijij->", T4) == pytest.approx(pt.D2, rel=1e-10)
        assert np.abs(np.einsum("iikl->kl", T4)).max() < 1e-12
        T4r = T4.reshape(m * m, m * m)

        def integrand(t, z):
            Q = (1.0 + t) ** 2 + np.einsum("bi,bi->b", z, z)
            zz = (z[:, :, None] * z[:, None, :]).reshape(len(z), m * m)
            quart = np.einsum("bq,bq->b", zz @ T4r, zz)
            return 0.5 * (n - 2.0) ** 2 * t ** 2 * quart * Q ** (-float(n))

        est = mc_halfspace(n, integrand, n_samples=10 ** 6, seed=4,
                           t_scale=1.0, z_scale=1.0)
        _, G2, _ = compute_G_terms(pt)
        assert est.std_error <= 0.35 * abs(G2)
        assert abs(est.mean - G2) <= 3.0 * est.std_error


class TestPhi:
    def test_record_fields_and_assembly(self, point11, sol11):
        co = compute_phi(point11, sol11)
        n = co.n
        term_R = (n - 2.0) * (n - 8.0) / (4.0 * (n * n - 1.0)) \
            * point11.Rnnnn * co.I2
        term_W = -(n - 2.0) / (96.0 * (n - 1.0) ** 2) * point11.Wbar2 * co.I4
        assert co.phi == pytest.approx(0.5 * co.pairing + term_R + term_W,
                                       rel=1e-14)
        assert co.label == point11.label
        assert co.B > 0 and co.A > 0 and co.G3 >= 0

    def test_phi_negative_on_battery(self):
        for n in DIMS:
            for seed in (1, 2, 3):
                pt = generate_sample(n, seed=seed)
                co = compute_phi(pt, solve_vq(pt))
                assert co.phi < 0.0

    def test_weyl_denominator_variants(self, point11, sol11):
        co_sq = compute_phi(point11, sol11, weyl_denominator="96(n-1)^2")
        co_lin = compute_phi(point11, sol11, weyl_denominator="96(n-1)")
        n = point11.n
        # the two variants differ exactly by the (n-1) factor on the Weyl term
        diff_oracle = -(n - 2.0) * point11.Wbar2 * co_sq.I4 / 96.0 \
            * (1.0 / (n - 1.0) - 1.0 / (n - 1.0) ** 2)
        assert co_lin.phi - co_sq.phi == pytest.approx(diff_oracle, rel=1e-12)
        assert co_lin.phi < co_sq.phi < 0.0

    def test_weyl_denominator_rejects_unknown(self, point11, sol11):
        with pytest.raises(DomainError):
            compute_phi(point11, sol11, weyl_denominator="96n")

    def test_zero_curvature_gives_zero_phi(self):
        pt = zero_curvature_point(11)
        co = compute_phi(pt, solve_vq(pt))
        assert co.phi == 0.0 and co.pairing == 0.0
        assert co.G2 == 0.0 and co.G3 == 0.0

    def test_weyl_only_point_strictly_negative(self):
        pt = dataclasses.replace(zero_curvature_point(11), Wbar2=1.0)
        co = compute_phi(pt, solve_vq(pt))
        assert co.pairing == 0.0
        assert co.phi < 0.0

    def test_phi_linear_in_Rnnnn_and_Wbar2(self, sol11, point11):
        def phi_at(**kw):
            return compute_phi(dataclasses.replace(point11, **kw), sol11).phi

        base = phi_at(Rnnnn=0.0)
        a, b = -0.7, -1.9
        assert phi_at(Rnnnn=a) + phi_at(Rnnnn=b) - base == pytest.approx(
            phi_at(Rnnnn=a + b), rel=1e-12)
        base_w = phi_at(Wbar2=0.0)
        assert phi_at(Wbar2=0.25) + phi_at(Wbar2=1.5) - base_w == \
            pytest.approx(phi_at(Wbar2=1.75), rel=1e-12)

    def test_pairing_enters_with_factor_half(self, point11, sol11):
        co = compute_phi(point11, sol11)
        co_ref = compute_phi(dataclasses.replace(point11), sol11)
        assert co.phi == co_ref.phi
        # remove the closed-form terms; what is left is pairing / 2
        n = co.n
        term_R = (n - 2.0) * (n - 8.0) / (4.0 * (n * n - 1.0)) \
            * point11.Rnnnn * co.I2
        term_W = -(n - 2.0) / (96.0 * (n - 1.0) ** 2) * point11.Wbar2 * co.I4
        assert co.phi - term_R - term_W == pytest.approx(0.5 * co.pairing,
                                                         rel=1e-12)

    def test_positive_phi_raises_validation_failure(self, point11, sol11):
        # force a positive assembly by flipping Rnnnn to a large positive
        # value: the invariant phi <= 0 must be enforced, not silently kept
        bad = dataclasses.replace(point11, Rnnnn=50.0)
        with pytest.raises(ValidationFailure):
            compute_phi(bad, sol11)


class TestCutoff:
    def test_plateau_and_support(self):
        s = np.array([0.0, 0.2, 0.5])
        assert np.all(cutoff_chi(s) == 1.0)
        assert np.all(cutoff_chi(np.array([1.0, 1.7, 30.0])) == 0.0)

    def test_derivatives_match_finite_differences(self):
        # stay clear of the joins: chi is C^2 there but the third
        # derivative jumps, which poisons the second central difference
        s = np.linspace(0.3, 1.2, 37)
        h = 1e-4
        s = s[(np.abs(s - 0.5) > 5 * h) & (np.abs(s - 1.0) > 5 * h)]
        d1 = (cutoff_chi(s + h) - cutoff_chi(s - h)) / (2 * h)
        d2 = (cutoff_chi(s + h) - 2 * cutoff_chi(s) + cutoff_chi(s - h)) / h ** 2
        assert np.abs(cutoff_chi(s, 1) - d1).max() < 1e-6
        assert np.abs(cutoff_chi(s, 2) - d2).max() < 1e-5

    def test_c2_join(self):
        for s in (0.5, 1.0):
            for order in (1, 2):
                assert cutoff_chi(np.array([s]), order)[0] == 0.0

    def test_monotone(self):
        s = np.linspace(0.0, 1.0, 101)
        assert np.all(np.diff(cutoff_chi(s)) <= 0.0)


class TestSlopeExperimentType:
    def test_rejects_short_ladder(self):
        with pytest.raises(DomainError):
            SlopeExperiment(deltas=np.geomspace(0.01, 0.5, 4),
                            values=np.ones(4), slope=1.0, intercept=0.0,
                            band=0.1)

    def test_rejects_narrow_ladder(self):
        with pytest.raises(DomainError):
            SlopeExperiment(deltas=np.geomspace(0.05, 0.5, 6),
                            values=np.ones(6), slope=1.0, intercept=0.0,
                            band=0.1)

    def test_accepts_conforming_ladder(self):
        exp = SlopeExperiment(deltas=np.geomspace(0.01, 0.5, 7),
                              values=np.ones(7), slope=1.0, intercept=0.0,
                              band=0.1)
        assert exp.status == "ok"

    def test_degenerate_skips_ladder_checks(self):
        exp = SlopeExperiment(deltas=np.array([0.1]), values=np.array([0.0]),
                              slope=float("nan"), intercept=float("nan"),
                              band=float("nan"), status="degenerate")
        assert exp.status == "degenerate"


class TestIdentityExperiment:
    def test_slope_and_coefficient(self, point11, sol11_big):
        exp = verify_A4_L2_L3_identity(point11, sol11_big)
        assert exp.status == "ok"
        assert exp.slope >= 4.5
        assert exp.slope - exp.band > 4.2
        c4, target = exp.extras["c4_fit"], exp.extras["c4_target"]
        assert abs(c4 - target) <= 0.02 * abs(target)
        assert target == pytest.approx(0.5 * sol11_big.pairing(), rel=1e-14)

    def test_taylor_region_never_clipped(self, point11, sol11_big):
        exp = verify_A4_L2_L3_identity(point11, sol11_big)
        assert exp.extras["taylor_ratio_max"] < 0.5

    def test_zero_curvature_is_degenerate(self):
        pt = zero_curvature_point(11)
        sol = solve_vq(pt)
        exp = verify_A4_L2_L3_identity(pt, sol)
        assert exp.status == "degenerate"
        assert np.all(exp.values == 0.0)

    def test_small_grid_rejected_for_deep_ladder(self, point11, sol11):
        with pytest.raises(DomainError):
            verify_A4_L2_L3_identity(point11, sol11)


class TestResidualSlope:
    def test_slope_in_window(self, point11, sol11_big):
        exp = residual_slope(point11, sol11_big, mc_samples=60000, seed=0,
                             with_cancellation=False)
        assert exp.status == "ok"
        assert 2.7 <= exp.slope <= 3.3

    def test_v_omission_degrades_slope_to_two(self, point11, sol11_big):
        exp = residual_slope(point11, sol11_big, mc_samples=40000, seed=0,
                             include_v=False, with_cancellation=False)
        assert abs(exp.slope - 2.0) <= 0.3

    def test_cancellation_one_order_faster(self, point11, sol11_big):
        exp = residual_slope(point11, sol11_big, mc_samples=40000, seed=0,
                             with_cancellation=True)
        fast = exp.extras["cancel_slope_sum"]
        each = max(exp.extras["cancel_slope_v"],
                   exp.extras["cancel_slope_metric"])
        assert fast >= each + 0.8

    def test_zero_curvature_degenerate(self):
        pt = zero_curvature_point(11)
        sol = solve_vq(pt)
        exp = residual_slope(pt, sol, mc_samples=1000, seed=0)
        assert exp.status == "degenerate"

    def test_budget_error_on_starved_sampler(self, point11, sol11_big):
        with pytest.raises(BudgetError):
            residual_slope(point11, sol11_big, mc_samples=1500, seed=0,
                           deltas=np.geomspace(0.015, 0.5, 5),
                           max_rel_error=0.05, with_cancellation=False)

    def test_bound_column_combines_eps_and_delta_cubed(self, point11,
                                                       sol11_big):
        deltas = np.geomspace(0.02, 0.7, 5)
        exp = residual_slope(point11, sol11_big, eps=0.1, deltas=deltas,
                             mc_samples=4000, seed=1, max_rel_error=1.0,
                             with_cancellation=False)
        assert np.allclose(exp.extras["eps_column"], 0.1)
        assert np.allclose(exp.extras["bound_column"],
                           0.1 * deltas + deltas ** 3)
        tied = residual_slope(point11, sol11_big, eps=0.1, tie_eps=True,
                              deltas=deltas, mc_samples=4000, seed=1,
                              max_rel_error=1.0, with_cancellation=False)
        assert np.allclose(tied.extras["eps_column"], deltas ** 3)
        assert np.allclose(tied.extras["bound_column"],
                           deltas ** 4 + deltas ** 3)


class TestCsvExport:
    def test_header(self):
        assert energy_csv_header() == ("label,n,A,B,I2,I4,pairing,G2,G3,phi,"
                                       "slope_residual,slope_identity")

    def test_row_roundtrip(self):
        co = ReducedCoefficients(label="q7", n=11, A=1.5, B=2.5, I2=0.25,
                                 I4=4.0, G2=-0.5, G3=0.75, pairing=-2e-5,
                                 phi=-1e-5)
        row = energy_csv_row(co, slope_residual=3.01, slope_identity=5.9)
        parts = row.split(",")
        assert parts[0] == "q7" and parts[1] == "11"
        assert float(parts[2]) == 1.5 and float(parts[9]) == -1e-5
        assert float(parts[10]) == 3.01 and float(parts[11]) == 5.9

    def test_row_with_missing_slopes(self):
        co = ReducedCoefficients(label="p", n=11, A=1.0, B=1.0, I2=1.0,
                                 I4=1.0, G2=0.0, G3=0.0, pairing=0.0,
                                 phi=0.0)
        row = energy_csv_row(co)
        assert row.endswith(",,")

    def test_record_rejects_bad_invariants(self):
        with pytest.raises(ValidationFailure):
            ReducedCoefficients(label="x", n=11, A=1.0, B=-1.0, I2=1.0,
                                I4=1.0, G2=0.0, G3=0.0, pairing=0.0, phi=0.0)
        with pytest.raises(ValidationFailure):
            ReducedCoefficients(label="x", n=11, A=1.0, B=1.0, I2=1.0,
                                I4=1.0, G2=0.0, G3=-0.5, pairing=0.0,
                                phi=0.0)
