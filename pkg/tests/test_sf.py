import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize

from postamp.model import ModelParams, Variant, make_instance, sample_goe
from postamp.amp import run_amp_z2
from postamp.sf import (
    AsymmetryError,
    DiagLowRank,
    RankError,
    b_def_residual,
    build_conditioning,
    build_from_constraints,
    compare_objectives,
    constraint_residual,
    g_amp,
    g_sf,
    maximize_sf_objective,
    onsager_bidiagonal,
    sf_objective,
    solve_B_SF,
    verify_conditional_identity,
)
from postamp.tap import TapContext


def synthetic(n=120, k=5, seed=0):
    rng = np.random.default_rng(seed)
    W = sample_goe(n, seed)
    R = rng.standard_normal((n, k))
    B0 = onsager_bidiagonal(rng.uniform(0.2, 1.0, k))
    return W, R, W @ R, B0


class TestBSF:
    def test_bidiagonal_layout(self):
        B0 = onsager_bidiagonal(np.array([9.0, 1.0, 2.0, 3.0]))
        expected = np.zeros((4, 4))
        expected[0, 1], expected[1, 2], expected[2, 3] = 1.0, 2.0, 3.0
        np.testing.assert_array_equal(B0, expected)

    def test_solves_defining_equation(self):
        _, R, S, B0 = synthetic()
        B = solve_B_SF(R, S, B0)
        assert b_def_residual(R, S, B) <= 1e-12

    def test_unique_solution_with_symmetric_remainder(self):
        # any B with R^T R B + B^T R^T R = R^T S differs from B_SF by (R^T R)^{-1} times a skew matrix
        _, R, S, B0 = synthetic(seed=1)
        B = solve_B_SF(R, S, B0)
        np.testing.assert_allclose(R.T @ R @ (B - B0), (R.T @ R @ (B - B0)).T, atol=1e-10)

    def test_asymmetric_constraints_rejected(self, rng):
        _, R, _, B0 = synthetic()
        with pytest.raises(AsymmetryError):
            solve_B_SF(R, rng.standard_normal(R.shape), B0)

    def test_rank_deficient_rejected(self):
        W, R, _, B0 = synthetic()
        R[:, 2] = R[:, 1]
        with pytest.raises(RankError):
            build_from_constraints(R, W @ R, B0)


class TestConditionalIdentities:
    def test_synthetic_exact(self):
        W, R, S, B0 = synthetic(n=150, k=6, seed=2)
        cond = build_from_constraints(R, S, B0)
        assert constraint_residual(W, cond) <= 1e-14
        rep = verify_conditional_identity(W, cond)
        assert rep["relative_residual"] <= 1e-12
        assert rep["T_SF_R_minus_G_SF"] <= 1e-12
        assert cond.diagnostics["b_def_residual"] <= 1e-12

    def test_on_amp_trace(self, small_run):
        inst, trace, _ = small_run
        cond = build_conditioning(trace, W=inst.W)
        assert cond.diagnostics["WR_minus_S"] <= 1e-12
        assert cond.diagnostics["b_def_residual"] <= 1e-8
        assert verify_conditional_identity(inst.W, cond)["relative_residual"] <= 1e-8

    def test_T_gap_closed_form(self, small_run):
        # T - T_SF = R (B_SF - B0) (R^T R)^{-1} R^T
        _, trace, _ = small_run
        cond = build_conditioning(trace)
        R = cond.R
        D = R @ (cond.B_SF - cond.B0) @ np.linalg.solve(R.T @ R, R.T)
        np.testing.assert_allclose(cond.T_gap_op(), np.linalg.norm(D, 2), rtol=1e-8)

    def test_T_equals_scaled_G_over_M(self, small_run, rng):
        _, trace, _ = small_run
        cond = build_conditioning(trace)
        v = rng.standard_normal(trace.n)
        M = trace.M
        ref = trace.G @ np.linalg.solve(M.T @ M, M.T @ v) / trace.lam
        np.testing.assert_allclose(cond.apply_T(v), ref, rtol=1e-8, atol=1e-10)

    def test_needs_two_iterates(self):
        inst = make_instance(ModelParams(30, 1.5, 0.3), seed=0)
        with pytest.raises(ValueError):
            build_conditioning(run_amp_z2(inst, 1))

    def test_surrogate_fields_agree_on_col_R(self, small_run, rng):
        _, trace, _ = small_run
        cond = build_conditioning(trace)
        xi = rng.standard_normal(trace.n)
        v = cond.Q @ rng.standard_normal(trace.k)
        gap = g_amp(cond, v, xi) - g_sf(cond, v, xi)
        np.testing.assert_allclose(gap, np.sqrt(trace.n) * (cond.apply_T(v) - cond.apply_T_SF(v)), atol=1e-9)


@st.composite
def diag_low_rank(draw):
    seed = draw(st.integers(0, 2**31))
    n, r = draw(st.integers(5, 40)), draw(st.integers(1, 4))
    rng = np.random.default_rng(seed)
    d = rng.normal(size=n)
    V = rng.normal(size=(n, r))
    C = rng.normal(size=(r, r))
    C = C + C.T + np.diag(np.sign(rng.normal(size=r)) * 0.5)
    return d, V, C


class TestDiagLowRank:
    @given(diag_low_rank())
    def test_top_matches_dense(self, args):
        d, V, C = args
        op = DiagLowRank(d, V, C)
        dense = np.diag(d) + V @ C @ V.T
        ev, EV = np.linalg.eigh(dense)
        res = op.top()
        if res is None:
            assert ev[-1] <= d.max() + 1e-8
            return
        mu, v = res
        np.testing.assert_allclose(mu, ev[-1], atol=1e-9 * max(1, abs(ev[-1])))
        np.testing.assert_allclose(dense @ v, mu * v, atol=1e-6 * max(1, abs(mu)))

    @given(diag_low_rank(), st.floats(0.01, 3.0))
    def test_count_above(self, args, offset):
        d, V, C = args
        op = DiagLowRank(d, V, C)
        mu = d.max() + offset
        ev = np.linalg.eigvalsh(np.diag(d) + V @ C @ V.T)
        if np.min(np.abs(ev - mu)) > 1e-8:
            assert op.count_above(mu) == int(np.sum(ev > mu))

    def test_matvec_and_quad(self, rng):
        d, V, C = rng.normal(size=10), rng.normal(size=(10, 2)), np.array([[1.0, 0.3], [0.3, -2.0]])
        op = DiagLowRank(d, V, C)
        A = np.diag(d) + V @ C @ V.T
        v = rng.normal(size=10)
        np.testing.assert_allclose(op.matvec(v), A @ v)
        np.testing.assert_allclose(op.quad(v), v @ A @ v)


@pytest.fixture(scope="module")
def tiny():
    inst = make_instance(ModelParams(40, 1.5, 0.3, Variant.AMS), seed=7)
    trace = run_amp_z2(inst, 4)
    ctx = TapContext.from_instance(inst)
    return inst, trace, ctx, build_conditioning(trace)


class TestObjectives:
    def test_maximiser_beats_direct_search(self, tiny):
        inst, trace, ctx, cond = tiny
        u = trace.m(3)
        xi = np.random.default_rng(0).standard_normal(cond.n)
        res = maximize_sf_objective(cond, ctx, u, xi, n_restarts=10)
        np.testing.assert_allclose(sf_objective(cond, ctx, u, res["v"], xi), res["value"], rtol=1e-10)

        def neg(w):
            return -sf_objective(cond, ctx, u, w / np.linalg.norm(w), xi)

        rng = np.random.default_rng(1)
        best = max(-minimize(neg, rng.standard_normal(cond.n), method="BFGS").fun for _ in range(10))
        assert res["value"] >= best - 1e-7 * max(1, abs(best))

    def test_values_monotone_per_restart(self, tiny):
        _, trace, ctx, cond = tiny
        xi = np.random.default_rng(2).standard_normal(cond.n)
        res = maximize_sf_objective(cond, ctx, trace.m(3), xi, n_restarts=3)
        for hist in res["traces"]:
            assert np.all(np.diff(hist) >= -1e-12 * max(1, abs(hist[-1])))

    def test_compare_goe_side_exact(self, tiny):
        _, trace, ctx, cond = tiny
        rep = compare_objectives(ctx, trace, cond, [trace.m(3), np.zeros(cond.n)], n_restarts=3)
        for row in rep["points"]:
            np.testing.assert_allclose(row["goe_check"], row["goe_max"], rtol=1e-8)
            np.testing.assert_allclose(row["sf_check"], row["sf_max"], rtol=1e-8)
        assert rep["goe_sup"] == max(r["goe_max"] for r in rep["points"])


class TestSpecialCases:
    def test_half_projection_is_already_a_solution(self):
        _, R, S, _ = synthetic(seed=3)
        half = 0.5 * np.linalg.solve(R.T @ R, R.T @ S)
        np.testing.assert_allclose(solve_B_SF(R, S, half), half, atol=1e-12)
        np.testing.assert_allclose(solve_B_SF(R, S, np.zeros_like(half)), half, atol=1e-12)

    def test_constraints_symmetric(self, small_run):
        _, trace, _ = small_run
        cond = build_conditioning(trace)
        A = cond.R.T @ cond.S
        assert np.abs(A - A.T).max() <= 1e-10 * np.abs(A).max()

    def test_full_conditioning(self):
        W, R, S, B0 = synthetic(n=20, k=20, seed=4)
        cond = build_from_constraints(R, S, B0)
        T = cond.T_SF_dense()
        np.testing.assert_allclose(T + T.T, W, atol=1e-10)

    def test_identity_holds_for_every_solution(self, rng):
        # B_SF + (R^T R)^{-1} K with K skew also solves the defining equation
        W, R, S, B0 = synthetic(seed=5)
        cond = build_from_constraints(R, S, B0)
        K = rng.standard_normal((5, 5))
        B = cond.B_SF + np.linalg.solve(R.T @ R, K - K.T)
        assert b_def_residual(R, S, B) <= 1e-12
        other = dataclasses.replace(cond, B_SF=B, G_SF=S - R @ B)
        assert verify_conditional_identity(W, other)["relative_residual"] <= 1e-12

    def test_annihilation(self, small_run, rng):
        _, trace, _ = small_run
        cond = build_conditioning(trace)
        v = cond.project_perp(rng.standard_normal(trace.n))
        np.testing.assert_allclose(cond.apply_T_SF(v), 0.0, atol=1e-12)
        np.testing.assert_allclose(cond.apply_T(v), 0.0, atol=1e-12)

    def test_g_amp_projections(self, small_run, rng):
        _, trace, _ = small_run
        cond = build_conditioning(trace)
        xi = rng.standard_normal(trace.n)
        v = trace.M[:, 0] / np.linalg.norm(trace.M[:, 0])
        np.testing.assert_allclose(g_amp(cond, v, xi), np.sqrt(trace.n) * cond.apply_T(v), atol=1e-10)
        w = cond.project_perp(rng.standard_normal(trace.n))
        np.testing.assert_allclose(g_amp(cond, w, xi), np.linalg.norm(w) * xi, atol=1e-10)

    def test_g_amp_moments(self):
        inst = make_instance(ModelParams(2000, 1.5, 0.3), seed=2)
        cond = build_conditioning(run_amp_z2(inst, 12))
        rng = np.random.default_rng(6)
        v = rng.standard_normal(2000)
        v /= np.linalg.norm(v)
        g = g_amp(cond, v, rng.standard_normal(2000))
        assert abs(g.mean()) <= 4 / np.sqrt(2000)
        assert abs(g.var() - 1.0) <= 0.1
