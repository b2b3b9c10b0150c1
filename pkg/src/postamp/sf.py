"""Conditional Sudakov-Fernique objects built from an AMP trajectory.

The trajectory reveals the linear constraints ``W R = S`` with ``R = lam M``
and ``S = G + lam M B0``, where ``B0`` carries the Onsager coefficients on
its first superdiagonal. Everything n x n (``T``, ``T_SF``, projectors) is
applied through n x k factors built from a thin QR decomposition of ``R``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .amp import AmpTrace
from .model import substream

log = logging.getLogger(__name__)


class RankError(ValueError):
    """The iterate matrix does not have full column rank."""


class AsymmetryError(ValueError):
    """``R^T S`` is not symmetric, so no symmetric ``W`` satisfies ``W R = S``."""


def onsager_bidiagonal(onsager: np.ndarray) -> np.ndarray:
    """``B0[s-1, s] = b_s`` for ``s = 1..k-1``."""
    k = len(onsager)
    B0 = np.zeros((k, k))
    idx = np.arange(1, k)
    B0[idx - 1, idx] = onsager[1:]
    return B0


def _rel_asymmetry(A: np.ndarray) -> float:
    scale = max(np.abs(A).max(), np.finfo(float).tiny)
    return float(np.abs(A - A.T).max() / scale)


def solve_B_SF(
    R: np.ndarray, S: np.ndarray, B0: np.ndarray, rcond: float = 1e-10, sym_tol: float = 1e-8
) -> np.ndarray:
    """``B0 + (R^T R)^{-1} (R^T S - R^T R B0 - B0^T R^T R) / 2``.

    Solves ``R^T S = (R^T R) B + B^T (R^T R)`` whenever ``R^T S`` is
    symmetric and ``R`` has full column rank. The inverse is applied through
    the triangular factor of ``R = QU`` (error grows like ``cond(R)``, not
    ``cond(R)^2``); a pseudo-inverse with cutoff ``rcond`` is used when ``U``
    is numerically singular.
    """
    RtR = R.T @ R
    RtS = R.T @ S
    asym = _rel_asymmetry(RtS)
    if asym > sym_tol:
        raise AsymmetryError(f"R^T S relative asymmetry {asym:.3e} exceeds {sym_tol:.1e}")
    C = RtS - RtR @ B0 - B0.T @ RtR
    U = np.linalg.qr(R, mode="r")
    d = np.abs(np.diag(U))
    if d.min() > rcond * d.max():
        X = sla.solve_triangular(U, sla.solve_triangular(U, C, trans="T"))
        return B0 + 0.5 * X
    return B0 + 0.5 * sla.pinv(RtR, rtol=rcond) @ C


def b_def_residual(R: np.ndarray, S: np.ndarray, B: np.ndarray) -> float:
    """Max-entry residual of ``R^T S = R^T R B + B^T R^T R`` relative to ``|R^T S|_max``."""
    RtR, RtS = R.T @ R, R.T @ S
    res = RtS - RtR @ B - B.T @ RtR
    return float(np.abs(res).max() / np.abs(RtS).max())


@dataclass(frozen=True, eq=False)
class ConditioningData:
    """Constraint pair, both B matrices and factored ``T``, ``T_SF``.

    ``T_SF = G_SF (R^T R)^{-1} R^T`` and ``T = G (R^T R)^{-1} R^T`` (equal to
    ``lam^{-1} G (M^T M)^{-1} M^T``) are stored as ``left @ Q^T`` with ``Q``
    the orthonormal basis of ``col(R)``.
    """

    R: np.ndarray
    S: np.ndarray
    B0: np.ndarray
    B_SF: np.ndarray
    G_SF: np.ndarray
    Q: np.ndarray
    U: np.ndarray
    G: np.ndarray | None = None
    lam: float | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.R.shape[0]

    @property
    def k(self) -> int:
        return self.R.shape[1]

    def _left(self, A: np.ndarray) -> np.ndarray:
        # A (R^T R)^{-1} R^T = A U^{-1} Q^T
        return sla.solve_triangular(self.U, A.T, trans="T").T

    @property
    def T_SF_left(self) -> np.ndarray:
        return self._left(self.G_SF)

    @property
    def T_left(self) -> np.ndarray:
        if self.G is None:
            raise ValueError("T needs the AMP G matrix")
        return self._left(self.G)

    def apply_T_SF(self, v: np.ndarray) -> np.ndarray:
        return self.T_SF_left @ (self.Q.T @ v)

    def apply_T(self, v: np.ndarray) -> np.ndarray:
        return self.T_left @ (self.Q.T @ v)

    def project_perp(self, v: np.ndarray) -> np.ndarray:
        return v - self.Q @ (self.Q.T @ v)

    def T_SF_dense(self) -> np.ndarray:
        return self.T_SF_left @ self.Q.T

    def B_gap_op(self) -> float:
        return float(np.linalg.norm(self.B_SF - self.B0, 2))

    def T_gap_op(self) -> float:
        """``|T - T_SF|_op``; note ``T - T_SF = R (B_SF - B0)(R^T R)^{-1} R^T``."""
        return float(np.linalg.norm(self._left(self.G - self.G_SF), 2))


def build_from_constraints(
    R: np.ndarray,
    S: np.ndarray,
    B0: np.ndarray,
    G: np.ndarray | None = None,
    lam: float | None = None,
    rank_tol: float = 1e-8,
    rcond: float = 1e-10,
) -> ConditioningData:
    R = np.asarray(R, dtype=float)
    S = np.asarray(S, dtype=float)
    n, k = R.shape
    Q, U = np.linalg.qr(R)
    smin = np.linalg.svd(U, compute_uv=False).min()
    if smin <= rank_tol * np.sqrt(n):
        raise RankError(f"smallest singular value {smin:.3e} <= {rank_tol:.0e} sqrt(n)")
    B_SF = solve_B_SF(R, S, B0, rcond)
    G_SF = S - R @ B_SF
    diag = {
        "sigma_min_R": float(smin),
        "cond_R": float(np.linalg.cond(U)),
        "RtS_asymmetry": _rel_asymmetry(R.T @ S),
        "b_def_residual": b_def_residual(R, S, B_SF),
    }
    return ConditioningData(R, S, np.asarray(B0, float), B_SF, G_SF, Q, U, G, lam, diag)


def build_conditioning(trace: AmpTrace, W: np.ndarray | None = None, **kw) -> ConditioningData:
    """Constraint data ``R = lam M``, ``S = G + lam M B0`` from a Z2 trace.

    If ``W`` is given, ``|W R - S|_max`` relative to ``|W|_max |R|_max`` is
    recorded in the diagnostics.
    """
    if trace.k < 2:
        raise ValueError("conditioning needs k >= 2")
    lam = trace.lam
    smin_M = np.linalg.svd(trace.M, compute_uv=False).min()
    if smin_M <= 1e-8 * np.sqrt(trace.n):
        raise RankError(f"M is rank deficient (sigma_min {smin_M:.3e})")
    R = lam * trace.M
    B0 = onsager_bidiagonal(np.asarray(trace.onsager))
    S = trace.G + R @ B0
    cond = build_from_constraints(R, S, B0, G=np.asarray(trace.G), lam=lam, **kw)
    if W is not None:
        cond.diagnostics["WR_minus_S"] = constraint_residual(W, cond)
    return cond


def constraint_residual(W: np.ndarray, cond: ConditioningData) -> float:
    return float(np.abs(W @ cond.R - cond.S).max() / (np.abs(W).max() * np.abs(cond.R).max()))


def verify_conditional_identity(W: np.ndarray, cond: ConditioningData) -> dict:
    """Frobenius residual of ``W - P W P = T_SF + T_SF^T`` (``P`` = projector off col(R)).

    Uses ``W - P W P = W Pr + Pr W - Pr W Pr`` with ``Pr = Q Q^T``.
    """
    Q = cond.Q
    WQ = W @ Q
    lhs = WQ @ Q.T
    lhs += lhs.T
    lhs -= Q @ ((Q.T @ WQ) @ Q.T)
    T = cond.T_SF_dense()
    lhs -= T
    lhs -= T.T
    wf = float(np.linalg.norm(W))
    res = float(np.linalg.norm(lhs))
    return {
        "frobenius_residual": res,
        "W_frobenius": wf,
        "relative_residual": res / wf,
        "T_SF_R_minus_G_SF": float(
            np.abs(cond.apply_T_SF(cond.R) - cond.G_SF).max() / np.abs(cond.G_SF).max()
        ),
    }


def g_amp(cond: ConditioningData, v: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """``sqrt(n) T v + |P_perp v| xi``."""
    return np.sqrt(cond.n) * cond.apply_T(v) + np.linalg.norm(cond.project_perp(v)) * xi


def g_sf(cond: ConditioningData, v: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """``sqrt(n) T_SF v + |P_perp v| P_perp xi``."""
    return np.sqrt(cond.n) * cond.apply_T_SF(v) + np.linalg.norm(cond.project_perp(v)) * cond.project_perp(xi)


class DiagLowRank:
    """Symmetric ``diag(d) + V C V^T`` with small invertible symmetric ``C``.

    The top eigenpair is located exactly: for ``mu >= max(d)`` the number of
    eigenvalues above ``mu`` equals ``#pos(V^T (mu - d)^{-1} V - C^{-1}) - #neg(C)``
    (Haynsworth inertia additivity on the bordered matrix), so locating the
    top eigenvalue needs only r x r eigenvalue problems.
    """

    def __init__(self, d: np.ndarray, V: np.ndarray, C: np.ndarray):
        self.d = np.asarray(d, float)
        self.V = np.asarray(V, float)
        self.C = np.asarray(C, float)
        self.Cinv = np.linalg.inv(self.C)
        self.neg_C = int(np.sum(np.linalg.eigvalsh(self.C) < 0))

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.d * v + self.V @ (self.C @ (self.V.T @ v))

    def quad(self, v: np.ndarray) -> float:
        a = self.V.T @ v
        return float(self.d @ v**2 + a @ self.C @ a)

    def _secular(self, mu: float) -> np.ndarray:
        Vs = self.V / (mu - self.d)[:, None]
        return self.V.T @ Vs - self.Cinv

    def _count(self, w: np.ndarray) -> int:
        scale = max(np.abs(w).max(), 1.0)
        return int(np.sum(w > 1e-13 * scale)) - self.neg_C

    def count_above(self, mu: float) -> int:
        return self._count(np.linalg.eigvalsh(self._secular(mu)))

    def top(self, lower: float | None = None, tol: float = 1e-12, max_iter: int = 200):
        """Largest eigenvalue and unit eigenvector; ``None`` if it is not above ``max(d)``.

        Safeguarded Newton on the secular eigenvalue that crosses zero at the
        top eigenvalue, kept inside an inertia-certified bracket.
        ``lower`` is any known lower bound (e.g. a Rayleigh quotient).
        """
        dmax = self.d.max()
        lo = dmax + 1e-12 * max(1.0, abs(dmax))
        if lower is not None and lower > lo and self.count_above(lower - 1e-9 * max(1.0, abs(lower))) > 0:
            lo = lower - 1e-9 * max(1.0, abs(lower))
        elif self.count_above(lo) == 0:
            return None
        step = 1e-3 * max(1.0, abs(lo))
        hi = lo + step
        while self.count_above(hi) > 0:
            lo, step = hi, 4 * step
            hi = lo + step
        mu = hi
        idx = -(self.neg_C + 1)
        for _ in range(max_iter):
            Vs = self.V / (mu - self.d)[:, None]
            w, Z = np.linalg.eigh(self.V.T @ Vs - self.Cinv)
            if self._count(w) > 0:
                lo = mu
            else:
                hi = mu
            a = Z[:, idx]
            slope = np.sum((Vs @ a) ** 2)
            mu_new = mu + w[idx] / slope
            if not lo < mu_new < hi:
                mu_new = 0.5 * (lo + hi)
            done = abs(mu_new - mu) <= tol * max(1.0, abs(mu)) or hi - lo <= tol * max(1.0, abs(mu))
            mu = mu_new
            if done:
                break
        Vs = self.V / (mu - self.d)[:, None]
        w, Z = np.linalg.eigh(self.V.T @ Vs - self.Cinv)
        v = Vs @ Z[:, np.argmin(np.abs(w))]
        v /= np.linalg.norm(v)
        return mu, v


def _f_pieces(ctx, u):
    from .tap import _f_matrix_terms

    return _f_matrix_terms(ctx, u)


def sf_objective(cond: ConditioningData, ctx, u: np.ndarray, v: np.ndarray, xi: np.ndarray) -> float:
    """``(2 lam / sqrt(n)) <g_AMP(v), v> + f_x(v, u)``."""
    from .tap import f_x

    lam = ctx.lam
    return float(2 * lam / np.sqrt(cond.n) * (g_amp(cond, v, xi) @ v) + f_x(ctx, v, u))


def goe_objective(ctx, u: np.ndarray, v: np.ndarray) -> float:
    """``lam v^T W v + f_x(v, u)``."""
    from .tap import f_x

    return float(ctx.lam * (v @ (ctx.instance.W @ v)) + f_x(ctx, v, u))


def maximize_sf_objective(
    cond: ConditioningData,
    ctx,
    u: np.ndarray,
    xi: np.ndarray,
    n_restarts: int = 20,
    max_alternations: int = 200,
    seed: int = 0,
    tol: float = 1e-9,
) -> dict:
    """Multi-restart maximisation of the SF-side objective over unit ``v``.

    Writes ``|P v| <xi, v>`` (``P`` the projector off ``col(M)``, sign fixed by
    ``v -> -v``) as ``max_w <w, P v><xi, v>`` over unit ``w`` and alternates
    an exact top eigenpair in ``v`` with the closed-form ``w = P v / |P v|``.
    The alternation converges linearly, so every few steps an extrapolated
    ``w`` is tried and kept only if the objective improves. Values never
    decrease and every reported value is attained, so the result is a lower
    bound on the supremum.
    """
    n, lam = cond.n, ctx.lam
    c = 2 * lam / np.sqrt(n)
    diag, shift, rank_one = _f_pieces(ctx, u)
    k = cond.k
    base_cols = [cond.T_left, cond.Q] + [w[:, None] for _, w in rank_one]
    rr = len(base_cols) - 2 + 2 * k + 2
    C = np.zeros((rr, rr))
    C[:k, k : 2 * k] = lam * np.eye(k)
    C[k : 2 * k, :k] = lam * np.eye(k)
    for j, (cr, _) in enumerate(rank_one):
        C[2 * k + j, 2 * k + j] = cr
    C[rr - 2, rr - 1] = C[rr - 1, rr - 2] = c / 2
    d = diag + shift

    def step(w, v_prev):
        op = DiagLowRank(d, np.column_stack(base_cols + [w, xi]), C)
        res = op.top(lower=None if v_prev is None else op.quad(v_prev))
        if res is None:
            log.debug("top eigenvalue not separated from the diagonal; dense fallback")
            ev, EV = np.linalg.eigh(np.diag(d) + op.V @ C @ op.V.T)
            res = (ev[-1], EV[:, -1])
        v = res[1] if xi @ res[1] >= 0 else -res[1]
        pv = cond.project_perp(v)
        val = float(op.quad(v) - c * (w @ pv) * (xi @ v) + c * np.linalg.norm(pv) * (xi @ v))
        return val, v, pv

    rng = substream(seed, "sf-restarts")
    best, traces = None, []
    for _ in range(n_restarts):
        w = cond.project_perp(rng.standard_normal(n))
        w /= np.linalg.norm(w)
        w_old, val, v, hist = None, -np.inf, None, []
        for it in range(max_alternations):
            cand = step(w, v)
            if hist and cand[0] < val + tol * max(1.0, abs(val)):
                if cand[0] > val:
                    val, v = cand[0], cand[1]
                    hist.append(val)
                break
            val, v, pv = cand
            hist.append(val)
            w_old, w = w, pv / np.linalg.norm(pv)
            if it >= 3 and it % 3 == 0:
                d1, d0 = hist[-1] - hist[-2], hist[-2] - hist[-3]
                if d0 > 0 and 0 < d1 < d0:
                    beta = min(d1 / (d0 - d1), 20.0)
                    we = cond.project_perp(w + beta * (w - w_old))
                    we /= np.linalg.norm(we)
                    ext = step(we, v)
                    if ext[0] > val:
                        val, v = ext[0], ext[1]
                        hist.append(val)
                        w_old, w = we, ext[2] / np.linalg.norm(ext[2])
        traces.append(hist)
        if best is None or val > best[0]:
            best = (val, v)
    return {"value": best[0], "v": best[1], "restart_values": [h[-1] for h in traces], "traces": traces}


def compare_objectives(
    ctx,
    trace: AmpTrace,
    cond: ConditioningData,
    probe_points: list[np.ndarray],
    xi_seed: int = 0,
    n_restarts: int = 20,
    n_directions: int = 20,
) -> dict:
    """GOE-side and SF-side maxima over unit ``v`` at each probe point ``u``.

    The GOE side is exact: ``sup_v lam v^T W v + f_x(v, u) = -lambda_min(n H(u))``.
    """
    from .tap import lambda_min

    n = cond.n
    xi = substream(xi_seed, "sf-xi").standard_normal(n)
    rows, guess, v0 = [], None, None
    for i, u in enumerate(probe_points):
        lm, v0 = lambda_min(ctx, u, "shift-invert", v0, guess=guess)
        guess = lm
        sf = maximize_sf_objective(cond, ctx, u, xi, n_restarts=n_restarts, seed=xi_seed + i)
        rows.append(
            {
                "point": i,
                "goe_max": -lm,
                "goe_check": goe_objective(ctx, u, v0),
                "sf_max": sf["value"],
                "sf_check": sf_objective(cond, ctx, u, sf["v"], xi),
                "sf_restart_values": sf["restart_values"],
            }
        )
    dirs = substream(xi_seed, "sf-directions").standard_normal((n_directions, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    coupling = max(np.linalg.norm(g_amp(cond, d, xi) - g_sf(cond, d, xi)) / np.sqrt(n) for d in dirs)
    return {
        "T_gap_op": cond.T_gap_op(),
        "B_gap_op": cond.B_gap_op(),
        "P_R_xi_over_sqrt_n": float(np.linalg.norm(xi - cond.project_perp(xi)) / np.sqrt(n)),
        "coupling_gap": float(coupling),
        "points": rows,
        "goe_sup": max(r["goe_max"] for r in rows),
        "sf_sup": max(r["sf_max"] for r in rows),
    }
