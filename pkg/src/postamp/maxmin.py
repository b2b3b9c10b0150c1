"""Scalar max-min certificate for local strong convexity.

All expectations are over ``G ~ N(0, lam^2 q_inf)`` and, for the AMS
variant, an independent ``G0 ~ N(0, 1)``, with
``M = tanh(gamma_inf + G + chi sqrt(gamma0) G0)``. The Gaussian ``Xi`` is
integrated out analytically. ``w = (1/(1 - M^2) - alpha_v)^{-1}`` is
evaluated as ``(1 - M^2) / (1 - alpha_v (1 - M^2))``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize

from .quadrature import DEFAULT_ORDER, gh_nodes, order_for
from .state_evolution import FixedPointConstants, solve_fixed_point, tanh_moment


@dataclass(frozen=True)
class ScalarParams:
    lam: float
    gamma0: float
    chi: int
    gamma_inf: float
    q_inf: float
    b_inf: float
    quadrature_order: int = DEFAULT_ORDER

    @classmethod
    def from_fixed_point(cls, fp: FixedPointConstants) -> "ScalarParams":
        return cls(fp.lam, fp.gamma0, fp.chi, fp.gamma_inf, fp.q_inf, fp.b_inf, fp.quadrature_order)

    @classmethod
    def solve(cls, lam: float, gamma0: float, chi: int, order: int | None = None) -> "ScalarParams":
        """Solve the fixed point; raises ``RegimeError`` when only the trivial one exists."""
        return cls.from_fixed_point(solve_fixed_point(lam, gamma0, chi, order))

    def consistency_residuals(self) -> dict:
        g, o = self.gamma_inf, self.quadrature_order
        return {
            "q_vs_E_tanh": abs(self.q_inf - tanh_moment(1, g, o)),
            "q_vs_E_tanh2": abs(self.q_inf - tanh_moment(2, g, o)),
            "b_vs_E_tanh3": abs(self.b_inf - tanh_moment(3, g, o)),
            "b_vs_E_tanh4": abs(self.b_inf - tanh_moment(4, g, o)),
        }


@dataclass(frozen=True)
class MaxMinQuery:
    rho: float = 0.0
    u: float = 0.0
    alpha_rho: float = 0.0
    alpha_u: float = 0.0
    alpha_v: float = 0.0

    def __post_init__(self):
        if not self.alpha_v < 1:
            raise ValueError(f"alpha_v must be < 1, got {self.alpha_v}")

    @property
    def x(self) -> np.ndarray:
        return np.array([self.rho, self.u, self.alpha_rho, self.alpha_u])


class _Nodes:
    """Quadrature nodes for ``(G, M)`` and their weights (1-d for FMM, 2-d for AMS)."""

    _cache: dict = {}

    def __new__(cls, p: ScalarParams, order: int | None = None):
        if order is None:
            order = p.quadrature_order if p.chi == 0 else max(120, order_for(p.gamma_inf, 120))
        key = (p.lam, p.gamma0, p.chi, p.gamma_inf, p.q_inf, order)
        if key not in cls._cache:
            obj = super().__new__(cls)
            z, w = gh_nodes(order)
            sd = np.sqrt(p.lam**2 * p.q_inf)
            if p.chi == 0:
                G, wt = sd * z, w
                M = np.tanh(p.gamma_inf + G)
            else:
                z1, z2 = np.meshgrid(z, z, indexing="ij")
                G = sd * z1.ravel()
                M = np.tanh(p.gamma_inf + G + np.sqrt(p.gamma0) * z2.ravel())
                wt = np.outer(w, w).ravel()
            obj.G, obj.M, obj.w = G, M, wt
            cls._cache[key] = obj
        return cls._cache[key]

    def E(self, values) -> float:
        return float(self.w @ values)


def _weight(M: np.ndarray, alpha_v: float) -> np.ndarray:
    s = 1 - M**2
    return s / (1 - alpha_v * s)


def theta_closed_form(g, m, xi, u_point, query: MaxMinQuery, params: ScalarParams):
    """Supremum over ``v`` of the concave quadratic defining ``Theta``."""
    if not query.alpha_v < 1:
        raise ValueError("alpha_v must be < 1")
    u_point = np.asarray(u_point, dtype=float)
    if np.any(np.abs(u_point) >= 1):
        raise ValueError("|u| must be < 1")
    lam, sq = params.lam, np.sqrt(params.q_inf)
    rho = query.rho
    num = 2 * lam * (rho / (lam * sq) * g + np.sqrt(1 - rho**2) * xi) + query.alpha_rho * m / sq + query.alpha_u
    return num**2 / (4 * (1 / (1 - u_point**2) - query.alpha_v))


def theta_objective(v, g, m, xi, u_point, query: MaxMinQuery, params: ScalarParams):
    """The quadratic in ``v`` whose supremum is ``Theta``."""
    lam, sq, rho = params.lam, np.sqrt(params.q_inf), query.rho
    lin = 2 * lam * (rho / (lam * sq) * g + np.sqrt(1 - rho**2) * xi) + query.alpha_rho * m / sq + query.alpha_u
    return lin * v - v**2 / (1 - u_point**2) + query.alpha_v * v**2


def L_value(query: MaxMinQuery, params: ScalarParams, order: int | None = None) -> float:
    p, q = params, params.q_inf
    nd = _Nodes(p, order)
    w = _weight(nd.M, query.alpha_v)
    a = 2 * query.rho * nd.G / np.sqrt(q) + query.alpha_rho * nd.M / np.sqrt(q) + query.alpha_u
    e_theta = nd.E((4 * p.lam**2 * (1 - query.rho**2) + a**2) * w / 4)
    return float(
        p.lam**2 * query.u**2
        - p.lam**2 * (1 - q)
        + (1 - p.chi) * 2 * p.lam**2 * q * query.rho**2
        - query.alpha_rho * query.rho
        - query.alpha_u * query.u
        - query.alpha_v
        + e_theta
    )


def L_constant(alpha_v: float, params: ScalarParams, order: int | None = None) -> float:
    """``L(0,0;0,0,alpha_v) = -lam^2 (1 - q) - alpha_v + lam^2 E[w]``."""
    nd = _Nodes(params, order)
    return float(-params.lam**2 * (1 - params.q_inf) - alpha_v + params.lam**2 * nd.E(_weight(nd.M, alpha_v)))


def A_matrices(alpha_v: float, params: ScalarParams, order: int | None = None):
    """Blocks ``(A11, A12, A22)`` with ``L = x^T A x + L_constant`` for ``x = (rho, u, a_rho, a_u)``."""
    if not alpha_v < 1:
        raise ValueError("alpha_v must be < 1")
    p, q, lam = params, params.q_inf, params.lam
    nd = _Nodes(p, order)
    G, M = nd.G, nd.M
    w = _weight(M, alpha_v)
    sq = np.sqrt(q)
    A11 = np.array(
        [[(1 - p.chi) * 2 * lam**2 * q + nd.E((G**2 / q - lam**2) * w), 0.0], [0.0, lam**2]]
    )
    A12 = np.array([[-0.5 + nd.E(G * M * w) / (2 * q), nd.E(G * w) / (2 * sq)], [0.0, -0.5]])
    EMw = nd.E(M * w) / sq
    A22 = 0.25 * np.array([[nd.E(M**2 * w) / q, EMw], [EMw, nd.E(w)]])
    return A11, A12, A22


def A_matrices_closed_form(params: ScalarParams):
    """The ``alpha_v = 0`` blocks written with ``q_inf`` and ``b_inf`` only."""
    p, q, b, lam = params, params.q_inf, params.b_inf, params.lam
    t = 1 - 4 * q + 3 * b
    A11 = np.array([[(1 - p.chi) * 2 * lam**2 * q - 2 * lam**4 * q * t, 0.0], [0.0, lam**2]])
    A12 = 0.5 * np.array([[-1 + lam**2 * t, -2 * lam**2 * np.sqrt(q) * (q - b)], [0.0, -1.0]])
    r = 1 - b / q
    A22 = 0.25 * np.array([[r, np.sqrt(q) * r], [np.sqrt(q) * r, 1 - q]])
    return A11, A12, A22


def ibp_identities(params: ScalarParams, order: int | None = None) -> np.ndarray:
    """Residuals of the four Gaussian integration-by-parts identities."""
    p, q, b, lam = params, params.q_inf, params.b_inf, params.lam
    nd = _Nodes(p, order)
    G, M = nd.G, nd.M
    v = lam**2 * q
    return np.abs(
        np.array(
            [
                nd.E(G * M) - v * (1 - q),
                nd.E(G * M**2) - 2 * v * (q - b),
                nd.E(G * M**3) - 3 * v * (q - b),
                nd.E(G**2 * (1 - M**2)) - (v - v * q - 2 * lam**4 * q**2 * (1 - 4 * q + 3 * b)),
            ]
        )
    )


@dataclass
class SchurCertificate:
    c1: float
    c2: float
    schur: float
    schur_alt: float
    block_vs_closed: float
    chain: tuple
    verdict: bool


def schur_certificate(params: ScalarParams) -> SchurCertificate:
    """Closed-form ``c1``, ``c2`` and the sign conditions ``c2 > 0``, ``c1 + q c2 < 0``.

    ``block_vs_closed`` compares ``A11 - A12 A22^{-1} A21`` (from quadrature
    blocks) to ``[[c1, sqrt(q) c2], [sqrt(q) c2, -c2]]``, relative to the
    largest closed-form entry when that exceeds one.
    """
    p, q, b, lam, chi = params, params.q_inf, params.b_inf, params.lam, params.chi
    e = 1 - 2 * q + b
    r = 1 - b / q
    c1 = (-(1 - q) + 2 * lam**2 * e**2 - lam**4 * e**2 * (1 - 3 * q + 2 * b)) / (r * e) - 2 * chi * lam**2 * q
    c2 = 1 / e - lam**2
    schur = c1 + q * c2
    f = 1 - lam**2 * e
    schur_alt = -q * lam**2 * f - f**2 / r - 2 * chi * lam**2 * q
    A11, A12, A22 = A_matrices(0.0, p)
    block = A11 - A12 @ np.linalg.solve(A22, A12.T)
    closed = np.array([[c1, np.sqrt(q) * c2], [np.sqrt(q) * c2, -c2]])
    chain = (e, 1 - q, 1 / lam**2)
    return SchurCertificate(
        c1=float(c1),
        c2=float(c2),
        schur=float(schur),
        schur_alt=float(schur_alt),
        block_vs_closed=float(np.abs(block - closed).max() / max(1.0, np.abs(closed).max())),
        chain=tuple(float(c) for c in chain),
        verdict=bool(c2 > 0 and schur < 0),
    )


def _inner_min(P: np.ndarray, A11, A12, A22, box: float):
    """Exact ``min_{alpha in [-box, box]^2}`` of ``x^T A x`` for each row ``p`` of ``P``.

    Returns values and minimisers. The unconstrained minimiser is used when
    it lies in the box; otherwise the minimum of the convex quadratic is on
    an edge, where it is a clamped 1-d minimisation.
    """
    P = np.atleast_2d(P)
    lin = 2 * P @ A12  # gradient contribution: alpha^T A22 alpha + lin . alpha
    base = np.einsum("ij,jk,ik->i", P, A11, P)
    star = -0.5 * np.linalg.solve(A22, lin.T).T
    inside = np.all(np.abs(star) <= box, axis=1)

    def f(al):
        return base + np.einsum("ij,jk,ik->i", al, A22, al) + np.sum(lin * al, axis=1)

    best_val = np.where(inside, f(star), np.inf)
    best_al = np.where(inside[:, None], star, np.nan)
    for fixed_idx in (0, 1):
        free = 1 - fixed_idx
        for sgn in (-box, box):
            al = np.empty_like(star)
            al[:, fixed_idx] = sgn
            # d/d a_free: 2 A22[free,free] a + 2 A22[free,fixed] sgn + lin_free = 0
            a = -(2 * A22[free, fixed_idx] * sgn + lin[:, free]) / (2 * A22[free, free])
            al[:, free] = np.clip(a, -box, box)
            val = f(al)
            upd = (~inside) & (val < best_val)
            best_val = np.where(upd, val, best_val)
            best_al = np.where(upd[:, None], al, best_al)
    return best_val, best_al


@dataclass
class MarginRow:
    alpha_v: float
    sup_value: float
    argmax_rho: float
    argmax_u: float
    inner_alpha_rho: float
    inner_alpha_u: float
    L_origin: float
    attained_at_origin: bool
    inner_interior: bool
    box: float
    margin: float


@dataclass
class MarginResult:
    alpha_v_star: float | None
    margin_c: float
    rows: list[MarginRow] = field(default_factory=list)
    certified: bool = False

    def to_dict(self) -> dict:
        return {
            "alpha_v_star": self.alpha_v_star,
            "margin_c": self.margin_c,
            "certified": self.certified,
            "rows": [asdict(r) for r in self.rows],
        }


def envelope(rho_u: np.ndarray, alpha_v: float, params: ScalarParams, box: float = 10.0, blocks=None):
    """``min_{(a_rho, a_u) in box} L(rho, u; a_rho, a_u, alpha_v)`` for rows of ``rho_u``."""
    A11, A12, A22 = blocks if blocks is not None else A_matrices(alpha_v, params)
    vals, als = _inner_min(np.atleast_2d(rho_u), A11, A12, A22, box)
    return vals + L_constant(alpha_v, params), als


def dual_box(blocks, floor: float = 10.0, slack: float = 1.05) -> float:
    """Half-width of a square dual box holding every unconstrained inner minimiser.

    The minimiser ``-A22^{-1} A21 p`` is linear in ``p``, so its extremes
    over ``[-1, 1]^2`` are at the corners.
    """
    _, A12, A22 = blocks
    corners = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=float)
    star = -np.linalg.solve(A22, A12.T @ corners.T).T
    return float(max(floor, slack * np.abs(star).max()))


def margin_search(
    params: ScalarParams,
    alpha_v_grid=None,
    grid_points: int = 201,
    box: float | str = "auto",
    tol: float = 1e-9,
) -> MarginResult:
    """Search ``alpha_v`` for the largest certified margin.

    For each ``alpha_v`` the outer supremum over ``(rho, u) in [-1, 1]^2`` is
    found on a ``grid_points``-square grid and polished with a bounded
    quasi-Newton run; the inner minimum over the dual box is exact. The
    margin is ``-sup``; a row certifies only if the supremum sits at the
    origin with inner minimiser at the origin and the margin exceeds ``tol``.

    ``box="auto"`` sizes the dual box per ``alpha_v`` with :func:`dual_box`
    (at least ``[-10, 10]^2``); a float fixes the half-width.
    """
    if alpha_v_grid is None:
        alpha_v_grid = np.round(np.arange(0.0, 0.3 + 1e-12, 0.01), 10)
    r = np.linspace(-1, 1, grid_points)
    RR, UU = np.meshgrid(r, r, indexing="ij")
    P = np.column_stack([RR.ravel(), UU.ravel()])
    h = r[1] - r[0]
    rows = []
    for av in alpha_v_grid:
        blocks = A_matrices(float(av), params)
        half = dual_box(blocks) if box == "auto" else float(box)
        vals, _ = envelope(P, av, params, half, blocks)
        i = int(np.argmax(vals))
        x0 = P[i]
        res = minimize(
            lambda z: -envelope(z, av, params, half, blocks)[0][0],
            x0,
            method="L-BFGS-B",
            bounds=[(-1, 1), (-1, 1)],
        )
        cand = [(vals[i], x0)]
        if res.success or np.isfinite(res.fun):
            cand.append((-res.fun, res.x))
        sup, arg = max(cand, key=lambda t: t[0])
        L0 = L_constant(float(av), params)
        if L0 >= sup - tol:
            sup, arg = max(sup, L0), np.zeros(2)
        _, al = envelope(arg, av, params, half, blocks)
        at_origin = bool(np.all(np.abs(arg) < h / 2))
        rows.append(
            MarginRow(
                alpha_v=float(av),
                sup_value=float(sup),
                argmax_rho=float(arg[0]),
                argmax_u=float(arg[1]),
                inner_alpha_rho=float(al[0, 0]),
                inner_alpha_u=float(al[0, 1]),
                L_origin=float(L0),
                attained_at_origin=at_origin,
                inner_interior=bool(np.all(np.abs(al) < half)),
                box=half,
                margin=float(-sup),
            )
        )
    good = [row for row in rows if row.attained_at_origin and row.margin > tol]
    if not good:
        best = max(rows, key=lambda row: row.margin)
        return MarginResult(None, best.margin, rows, certified=False)
    best = max(good, key=lambda row: row.margin)
    return MarginResult(best.alpha_v, best.margin, rows, certified=True)


def theta_brute_force(g, m, xi, u_point, query: MaxMinQuery, params: ScalarParams, half_width=50.0, step=1e-3):
    """Grid maximisation of the ``Theta`` quadratic over ``v``."""
    v = np.arange(-half_width, half_width + step / 2, step)
    return float(theta_objective(v, g, m, xi, u_point, query, params).max())


def dL_dalpha_v(params: ScalarParams, h: float = 1e-5) -> dict:
    """Slope of ``alpha_v -> L(0,0;0,0,alpha_v)`` at zero, by central differences and exactly."""
    fd = (L_constant(h, params) - L_constant(-h, params)) / (2 * h)
    nd = _Nodes(params)
    exact = -1 + params.lam**2 * nd.E((1 - nd.M**2) ** 2)
    return {"finite_difference": float(fd), "exact": float(exact), "bound": -1 + params.lam**2 * (1 - params.q_inf)}


def _random_queries(rng, count, alpha_v=None):
    for _ in range(count):
        yield MaxMinQuery(
            rho=rng.uniform(-1, 1),
            u=rng.uniform(-1, 1),
            alpha_rho=rng.uniform(-2, 2),
            alpha_u=rng.uniform(-2, 2),
            alpha_v=rng.uniform(-0.5, 0.5) if alpha_v is None else alpha_v,
        )


def representation_residual(params: ScalarParams, alpha_v: float = 0.1, count: int = 50, seed: int = 0) -> float:
    """Largest gap between ``L_value`` and the block quadratic form over random queries."""
    rng = np.random.default_rng(seed)
    A11, A12, A22 = A_matrices(alpha_v, params)
    A = np.block([[A11, A12], [A12.T, A22]])
    c = L_constant(alpha_v, params)
    return float(
        max(abs(L_value(q, params) - (q.x @ A @ q.x + c)) for q in _random_queries(rng, count, alpha_v))
    )


def theta_check(params: ScalarParams, count: int = 100, seed: int = 0, step: float = 1e-3) -> dict:
    """Closed-form versus grid-maximised ``Theta`` on random inputs.

    A grid of spacing ``step`` misses the maximum of a quadratic with
    curvature ``c`` by at most ``c (step/2)^2``; ``worst_ratio`` is the
    largest gap in units of that bound, so values at most one agree within
    grid resolution.
    """
    rng = np.random.default_rng(seed)
    worst_gap, worst_ratio = 0.0, 0.0
    for q in _random_queries(rng, count):
        g, m, xi = rng.standard_normal(3)
        m = np.tanh(m)
        u = rng.uniform(-0.9, 0.9)
        gap = theta_closed_form(g, m, xi, u, q, params) - theta_brute_force(g, m, xi, u, q, params, step=step)
        bound = (1 / (1 - u**2) - q.alpha_v) * (step / 2) ** 2 + 1e-12
        worst_gap = max(worst_gap, abs(gap))
        worst_ratio = max(worst_ratio, abs(gap) / bound)
    return {"max_gap": float(worst_gap), "worst_ratio": float(worst_ratio)}


def maxmin_report(params: ScalarParams, alpha_v_grid=None, theta_inputs: int = 100, seed: int = 0) -> dict:
    """Every certificate quantity for one parameter set, with pass flags."""
    L0 = L_value(MaxMinQuery(), params)
    ibp = ibp_identities(params)
    quad = A_matrices(0.0, params)
    closed = A_matrices_closed_form(params)
    blocks_gap = max(float(np.abs(a - b).max()) for a, b in zip(quad, closed))
    a22_eigs = np.linalg.eigvalsh(quad[2])
    cert = schur_certificate(params)
    slope = dL_dalpha_v(params)
    margin = margin_search(params, alpha_v_grid)
    rep = representation_residual(params, seed=seed)
    theta_gap = theta_check(params, theta_inputs, seed)
    perturbed = None
    if margin.alpha_v_star is not None:
        val, _ = envelope(np.array([0.05, 0.05]), margin.alpha_v_star, params,
                          dual_box(A_matrices(margin.alpha_v_star, params)))
        perturbed = {"value": float(val[0]), "origin": L_constant(margin.alpha_v_star, params)}
    consistency = params.consistency_residuals()
    checks = {
        "L_origin_zero": abs(L0) <= 1e-10,
        "ibp_identities": bool(ibp.max() <= 1e-7),
        "closed_form_blocks": blocks_gap <= 1e-8,
        "A22_positive_definite": bool(a22_eigs.min() > 0),
        "schur_verdict": cert.verdict,
        "schur_block_identity": cert.block_vs_closed <= 1e-8,
        "c2_chain": bool(cert.chain[0] < cert.chain[1] < cert.chain[2]),
        "slope_negative": slope["finite_difference"] < 0 and slope["finite_difference"] < slope["bound"] + 1e-3,
        "margin_positive": margin.certified and margin.margin_c > 0,
        "origin_locally_maximal": perturbed is not None and perturbed["value"] < perturbed["origin"],
        "representation_identity": rep <= 1e-8,
        "theta_closed_form": theta_gap["worst_ratio"] <= 1,
        "fixed_point_consistency": max(consistency.values()) <= 1e-8,
    }
    return {
        "params": asdict(params),
        "L_origin": L0,
        "ibp_residuals": ibp.tolist(),
        "A0_quadrature": [b.tolist() for b in quad],
        "A0_closed_form": [b.tolist() for b in closed],
        "A0_gap": blocks_gap,
        "A22_eigenvalues": a22_eigs.tolist(),
        "schur": asdict(cert),
        "slope_alpha_v": slope,
        "representation_residual": rep,
        "theta_check": theta_gap,
        "perturbed_origin_check": perturbed,
        "consistency_residuals": consistency,
        "margin": margin.to_dict(),
        "checks": checks,
        "passed": all(checks.values()),
    }
