"""TAP free energy: value, gradient, Hessian, convexity probe, stationary point.

Both variants share ``F(m) = -(lam/2n) m^T Y m - (1/n) sum h(m_i) - extra(m)``:

* FMM: ``extra = (lam^2/4) (1 - Q(m))^2``
* AMS: ``extra = <y, m>/n + lam^2 (1 - q_inf)(1 + q_inf - 2 Q(m)) / 4``

with ``h`` the binary entropy and ``Q(m) = |m|^2/n``.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import LinearOperator, eigsh
from scipy.special import entr

from .amp import AmpTrace
from .model import ModelInstance, Variant, substream

log = logging.getLogger(__name__)


class DomainError(ValueError):
    """A point outside ``[-1 + clamp_delta, 1 - clamp_delta]^n``."""


@dataclass(frozen=True, eq=False)
class TapContext:
    instance: ModelInstance
    q_inf: float | None = None
    clamp_delta: float = 1e-9

    def __post_init__(self):
        if self.variant is Variant.AMS:
            if self.q_inf is None or not 0 < self.q_inf < 1:
                raise ValueError(f"AMS needs q_inf in (0, 1), got {self.q_inf}")

    @classmethod
    def from_instance(cls, instance: ModelInstance, q_inf: float | None = None, **kw) -> "TapContext":
        """Context with ``q_inf`` from the fixed point when not supplied."""
        if q_inf is None:
            from .state_evolution import solve_fixed_point

            p = instance.params
            q_inf = solve_fixed_point(p.lam, p.gamma0, p.chi).q_inf
        return cls(instance, q_inf, **kw)

    @property
    def variant(self) -> Variant:
        return self.instance.params.variant

    @property
    def lam(self) -> float:
        return self.instance.params.lam

    @property
    def n(self) -> int:
        return self.instance.n


def _check_domain(ctx: TapContext, m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape != (ctx.n,):
        raise ValueError(f"expected a vector of length {ctx.n}, got shape {m.shape}")
    worst = np.max(np.abs(m))
    if not worst <= 1 - ctx.clamp_delta:
        raise DomainError(f"max |m_i| = {worst!r} exceeds 1 - {ctx.clamp_delta}")
    return m


def binary_entropy(m: np.ndarray) -> np.ndarray:
    return entr((1 + m) / 2) + entr((1 - m) / 2)


def free_energy(ctx: TapContext, m: np.ndarray) -> float:
    m = _check_domain(ctx, m)
    n, lam = ctx.n, ctx.lam
    Q = m @ m / n
    val = -lam / (2 * n) * (m @ (ctx.instance.Y @ m)) - binary_entropy(m).sum() / n
    if ctx.variant is Variant.FMM:
        val -= lam**2 / 4 * (1 - Q) ** 2
    else:
        q = ctx.q_inf
        val -= ctx.instance.y @ m / n + lam**2 * (1 - q) * (1 + q - 2 * Q) / 4
    return float(val)


def gradient(ctx: TapContext, m: np.ndarray, z: np.ndarray | None = None) -> np.ndarray:
    """Exact gradient of :func:`free_energy`.

    ``z`` may carry ``atanh(m)`` when ``m = tanh(z)`` is known, avoiding the
    cancellation of ``atanh`` near the boundary.
    """
    m = _check_domain(ctx, m)
    n, lam = ctx.n, ctx.lam
    atanh_m = np.arctanh(m) if z is None else z
    g = -lam / n * (ctx.instance.Y @ m) + atanh_m / n
    if ctx.variant is Variant.FMM:
        g += lam**2 / n * (1 - m @ m / n) * m
    else:
        g += -ctx.instance.y / n + lam**2 / n * (1 - ctx.q_inf) * m
    return g


def gradient_from_trace(ctx: TapContext, trace: AmpTrace, k: int) -> np.ndarray:
    """``grad F(m^{k-1})`` rebuilt from the AMP increment ``z^k - z^{k-1}``.

    FMM: ``-(z^k - z^{k-1})/n + lam^2 (1 - Q)(m^{k-1} - m^{k-2})/n``; AMS adds
    ``lam^2 (Q - q_inf) m^{k-1}/n`` with ``Q = Q(m^{k-1})``.
    """
    n, lam = ctx.n, ctx.lam
    m1, m2 = trace.m(k - 1), trace.m(k - 2)
    Q = m1 @ m1 / n
    g = -(trace.Z[:, k] - trace.Z[:, k - 1]) / n + lam**2 / n * (1 - Q) * (m1 - m2)
    if ctx.variant is Variant.AMS:
        g += lam**2 / n * (Q - ctx.q_inf) * m1
    return g


def _f_matrix_terms(ctx: TapContext, u: np.ndarray):
    """Pieces of ``f_x(v, u)`` as (diag, scalar shift, rank-one list)."""
    n, lam = ctx.n, ctx.lam
    diag = -1.0 / (1 - u**2)
    x = ctx.instance.x.astype(float)
    rank_one = [(lam**2 / n, x)]
    if ctx.variant is Variant.FMM:
        shift = -lam**2 * (1 - u @ u / n)
        rank_one.append((2 * lam**2 / n, u))
    else:
        shift = -lam**2 * (1 - ctx.q_inf)
    return diag, shift, rank_one


def f_x(ctx: TapContext, v: np.ndarray, u: np.ndarray) -> float:
    """Spike-plus-diagonal part of the Hessian quadratic form."""
    diag, shift, rank_one = _f_matrix_terms(ctx, u)
    return float(diag @ v**2 + shift * (v @ v) + sum(c * (w @ v) ** 2 for c, w in rank_one))


def hessian_quadratic_form(ctx: TapContext, u: np.ndarray, v: np.ndarray) -> float:
    """``v^T H(u) v = -(lam v^T W v + f_x(v, u)) / n``."""
    u = _check_domain(ctx, u)
    v = np.asarray(v, dtype=float)
    return -(ctx.lam * (v @ (ctx.instance.W @ v)) + f_x(ctx, v, u)) / ctx.n


def hessian_matrix(ctx: TapContext, u: np.ndarray, path: str = "direct") -> np.ndarray:
    """Dense Hessian of ``F`` at ``u``.

    ``path="direct"`` differentiates the free energy written with ``Y``;
    ``path="decomposed"`` assembles ``-(lam W + f_x)/n``.
    """
    u = _check_domain(ctx, u)
    n, lam = ctx.n, ctx.lam
    if path == "direct":
        H = -lam / n * ctx.instance.Y
        d = 1.0 / (1 - u**2)
        if ctx.variant is Variant.FMM:
            d = d + lam**2 * (1 - u @ u / n)
            H = H - 2 * lam**2 / n**2 * np.outer(u, u)
        else:
            d = d + lam**2 * (1 - ctx.q_inf)
        H[np.diag_indices(n)] += d / n
        return H
    if path == "decomposed":
        diag, shift, rank_one = _f_matrix_terms(ctx, u)
        Fm = sum(c * np.outer(w, w) for c, w in rank_one)
        Fm[np.diag_indices(n)] += diag + shift
        return -(lam * ctx.instance.W + Fm) / n
    raise ValueError(f"unknown path {path!r}")


def gradient_check(
    ctx: TapContext,
    n_points: int = 20,
    n_directions: int = 3,
    seed: int = 0,
    h: float = 1e-5,
    radius: float = 0.9,
) -> dict:
    """Central-difference check of :func:`gradient` along random directions.

    Points are uniform on ``[-radius, radius]^n``. The error of each
    directional derivative is taken relative to ``|grad F| |d|``.
    """
    rng = substream(seed, "gradient-check")
    errs = []
    for _ in range(n_points):
        m = rng.uniform(-radius, radius, ctx.n)
        g = gradient(ctx, m)
        for _ in range(n_directions):
            d = rng.standard_normal(ctx.n)
            d *= (1 - radius) / (2 * np.abs(d).max())
            fd = (free_energy(ctx, m + h * d) - free_energy(ctx, m - h * d)) / (2 * h)
            errs.append(abs(fd - g @ d) / (np.linalg.norm(g) * np.linalg.norm(d)))
    return {"max_rel_error": float(max(errs)), "median_rel_error": float(np.median(errs)), "count": len(errs)}


def hessian_decomposition_residual(ctx: TapContext, u: np.ndarray) -> float:
    """Relative Frobenius gap between the two Hessian assemblies."""
    Hd = hessian_matrix(ctx, u, "direct")
    return float(np.linalg.norm(Hd - hessian_matrix(ctx, u, "decomposed")) / np.linalg.norm(Hd))


def lambda_min(
    ctx: TapContext,
    u: np.ndarray,
    method: str = "shift-invert",
    v0: np.ndarray | None = None,
    guess: float | None = None,
) -> tuple[float, np.ndarray]:
    """Smallest eigenvalue (and eigenvector) of ``n * H(u)``.

    ``"dense"`` is a full LAPACK solve. ``"shift-invert"`` finds a shift
    ``sigma`` for which ``n H - sigma I`` admits a Cholesky factor (so every
    eigenvalue exceeds ``sigma``) and runs Lanczos on the inverse; the
    eigenvalue nearest above ``sigma`` is then the minimum. ``guess`` (for
    example the value at a nearby point) places the shift close below it.
    Plain Lanczos on ``n H`` converges very slowly because the entropy
    curvature spreads the top of the spectrum.
    """
    if method == "dense":
        H = ctx.n * hessian_matrix(ctx, u)
        w, V = sla.eigh(H, subset_by_index=[0, 0], overwrite_a=True, check_finite=False)
        return float(w[0]), V[:, 0]
    if method == "shift-invert":
        n = ctx.n
        H = n * hessian_matrix(ctx, u)
        step = 0.05 if guess is None else max(0.05, 0.1 * abs(guess))
        sigma = (0.0 if guess is None else guess) - step
        diag = np.diag(H).copy()
        for _ in range(60):
            H[np.diag_indices(n)] = diag - sigma
            try:
                factor = sla.cho_factor(H, check_finite=False)
                break
            except np.linalg.LinAlgError:
                step *= 2
                sigma -= step
        else:
            raise np.linalg.LinAlgError("no shift below the spectrum found")
        H[np.diag_indices(n)] = diag
        inv = LinearOperator((n, n), matvec=lambda x: sla.cho_solve(factor, x.ravel(), check_finite=False),
                             dtype=float)
        w, V = eigsh(H, k=1, sigma=sigma, which="LM", OPinv=inv, v0=v0, tol=1e-12)
        return float(w[0]), V[:, 0]
    raise ValueError(f"unknown method {method!r}")


@dataclass
class ProbePoint:
    point_id: int
    kind: str
    radius: float
    lam_min: float
    n_clipped: int


@dataclass
class ConvexityReport:
    """Sampled lower envelope of ``lambda_min(n * Hessian)`` over a ball.

    This is a probe, not a certificate of the infimum.
    """

    k: int
    epsilon: float
    seed: int
    method: str
    points: list[ProbePoint] = field(default_factory=list)
    worst_point: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def global_min(self) -> float:
        return min(p.lam_min for p in self.points)

    @property
    def margin_estimate(self) -> float:
        return self.global_min

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "epsilon": self.epsilon,
            "seed": self.seed,
            "method": self.method,
            "n_points": self.n_points,
            "global_min": self.global_min,
            "margin_estimate": self.margin_estimate,
            "points": [asdict(p) for p in self.points],
        }

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["point_id", "kind", "radius", "lam_min", "n_clipped"])
            for p in self.points:
                w.writerow([p.point_id, p.kind, p.radius, p.lam_min, p.n_clipped])
        return path


def ball_points(center: np.ndarray, epsilon: float, n_points: int, seed: int, clip_margin: float = 1e-6):
    """Center, then alternately boundary and interior points of ``{|u - c|/sqrt(n) <= eps}``.

    Yields ``(kind, radius, u, n_clipped)``; coordinates are clipped into
    ``[-1 + clip_margin, 1 - clip_margin]`` and the clip count is reported.
    """
    n = center.shape[0]
    rng = substream(seed, "ball-probe")
    lim = 1 - clip_margin
    yield "center", 0.0, center.copy(), 0
    for i in range(1, n_points):
        d = rng.standard_normal(n)
        d *= np.sqrt(n) / np.linalg.norm(d)
        if i % 2 == 1:
            kind, r = "boundary", epsilon
        else:
            kind, r = "interior", epsilon * rng.uniform()
        u = center + r * d
        clipped = int(np.count_nonzero(np.abs(u) > lim))
        yield kind, r, np.clip(u, -lim, lim), clipped


def convexity_probe(
    ctx: TapContext,
    trace: AmpTrace,
    k: int,
    epsilon: float,
    n_points: int,
    seed: int = 0,
    m_star: np.ndarray | None = None,
    method: str = "shift-invert",
) -> ConvexityReport:
    """``lambda_min(n * Hessian)`` at sampled points of the ball around ``m^{k-1}``.

    ``n_points`` counts the center; ``m_star`` adds points halfway to and at
    the stationary point. Shift-invert runs are warm-started from the
    previous point's eigenpair.
    """
    if trace.k < k:
        raise ValueError(f"trace has {trace.k} iterates, need {k}")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    center = trace.m(k - 1)
    report = ConvexityReport(k=k, epsilon=epsilon, seed=seed, method=method)
    pts = list(ball_points(center, epsilon, 1 if epsilon == 0 else n_points, seed))
    if m_star is not None and epsilon > 0:
        for t in (0.5, 1.0):
            u = center + t * (m_star - center)
            pts.append(("toward_stationary", float(np.linalg.norm(u - center) / np.sqrt(ctx.n)), u, 0))
    v0, val = None, None
    for i, (kind, r, u, nc) in enumerate(pts):
        if method == "dense":
            val, v0 = lambda_min(ctx, u, method)
        else:
            val, v0 = lambda_min(ctx, u, method, v0, guess=val)
        if not report.points or val < report.global_min:
            report.worst_point = u
        report.points.append(ProbePoint(i, kind, float(r), val, nc))
    return report


def _phi(ctx: TapContext, z: np.ndarray) -> float:
    m = np.tanh(z)
    n, lam = ctx.n, ctx.lam
    # h(tanh z) = log(2 cosh z) - z tanh z, stable for large |z|
    logcosh = np.logaddexp(z, -z)
    ent = (logcosh - z * m).sum()
    val = -lam / (2 * n) * (m @ (ctx.instance.Y @ m)) - ent / n
    Q = m @ m / n
    if ctx.variant is Variant.FMM:
        val -= lam**2 / 4 * (1 - Q) ** 2
    else:
        q = ctx.q_inf
        val -= ctx.instance.y @ m / n + lam**2 * (1 - q) * (1 + q - 2 * Q) / 4
    return float(val)


def _pd_factor(H: np.ndarray):
    """Cholesky factor of ``H + shift I`` with the smallest tried shift >= 0."""
    n = H.shape[0]
    d = np.diag(H).copy()
    shift, scale = 0.0, max(np.abs(d).max(), 1.0 / n) * 1e-8
    for _ in range(80):
        try:
            H[np.diag_indices(n)] = d + shift
            return sla.cho_factor(H, overwrite_a=True, check_finite=False), shift
        except np.linalg.LinAlgError:
            shift = scale if shift == 0 else 4 * shift
    raise np.linalg.LinAlgError("could not regularise the Hessian")


def _newton(ctx, z, tol, max_iter, factor=None, refresh=0.25):
    """Damped Newton for ``F`` carried out in ``z = atanh(m)``.

    The direction is the Newton step of ``F`` in ``m`` (whose Hessian is
    positive definite in the convex region) mapped to ``dz = dm / (1 - m^2)``;
    the iterate ``tanh(z)`` can never leave the open cube. A supplied
    Cholesky factor is reused while the gradient norm keeps contracting
    (``refresh`` is the largest accepted contraction ratio while a
    factor is reused). Returns ``(z, iterations, factorizations, converged,
    grad_norm, factor)``.
    """
    n_fact = 0
    zmax = np.arctanh(1 - 2 * ctx.clamp_delta)
    gm = gradient(ctx, np.tanh(z), z=z)
    gnorm = np.linalg.norm(gm)
    it = 0
    fresh = False
    while gnorm > tol and it < max_iter:
        m = np.tanh(z)
        if factor is None:
            factor, _ = _pd_factor(hessian_matrix(ctx, m))
            n_fact += 1
            fresh = True
        dm = -sla.cho_solve(factor, gm, check_finite=False)
        p = dm / (1 - m**2)
        phi0 = _phi(ctx, z)
        slope = gm @ dm
        t = 1.0
        while True:
            z_new = z + t * p
            if np.max(np.abs(z_new)) > zmax and t >= 1e-8:
                t *= 0.5
                continue
            gm_new = gradient(ctx, np.tanh(z_new), z=z_new)
            gn_new = np.linalg.norm(gm_new)
            phi1 = _phi(ctx, z_new)
            if phi1 <= phi0 + 1e-4 * t * slope or gn_new < gnorm or t < 1e-8:
                break
            t *= 0.5
        it += 1
        log.debug("newton it=%d t=%.3g |g|=%.3e phi=%.12f", it, t, gn_new, phi1)
        contraction = gn_new / gnorm if gnorm > 0 else 0.0
        z, gm, gnorm = z_new, gm_new, gn_new
        if (contraction > (0.25 if fresh else refresh)) or t < 1:
            if fresh and t < 1e-8:
                break
            factor, fresh = None, False
        else:
            fresh = False
    return z, it, n_fact, bool(gnorm <= tol), float(gnorm), factor


def find_stationary_point(
    ctx: TapContext,
    m_init: np.ndarray,
    epsilon: float,
    tol: float = 1e-10,
    max_iter: int = 100,
    n_restarts: int = 10,
    seed: int = 0,
    center: np.ndarray | None = None,
) -> tuple[np.ndarray, dict]:
    """Stationary point of ``F`` near ``m_init`` by Newton in ``z = atanh(m)``.

    Restarts begin at random points of the ball of radius ``epsilon`` around
    ``center`` (default ``m_init``) and reuse the Hessian factor from the
    main solve while it keeps contracting.
    """
    m_init = _check_domain(ctx, m_init)
    center = m_init if center is None else center
    n = ctx.n
    z, iters, nf, conv, gnorm, factor = _newton(ctx, np.arctanh(m_init), tol, max_iter)
    m_star = np.tanh(z)
    diag = {
        "converged": conv,
        "iterations": iters,
        "factorizations": nf,
        "grad_norm": gnorm,
        "distance_from_init": float(np.linalg.norm(m_star - m_init) / np.sqrt(n)),
        "distance_from_center": float(np.linalg.norm(m_star - center) / np.sqrt(n)),
        "max_abs": float(np.max(np.abs(m_star))),
        "in_ball": bool(np.linalg.norm(m_star - center) / np.sqrt(n) <= epsilon),
    }
    if not conv:
        log.warning("Newton stopped at gradient norm %.3e after %d steps", gnorm, iters)
    starts = list(ball_points(center, epsilon, n_restarts + 1, seed))[1:] if n_restarts else []
    dists, r_iters, r_conv = [], [], []
    for _, _, u, _ in starts:
        zr, it_r, _, c_r, _, _ = _newton(ctx, np.arctanh(u), tol, max_iter, factor=factor, refresh=0.7)
        dists.append(float(np.linalg.norm(np.tanh(zr) - m_star) / np.sqrt(n)))
        r_iters.append(it_r)
        r_conv.append(c_r)
    diag.update(
        {
            "restart_distances": dists,
            "restart_iterations": r_iters,
            "restart_converged": r_conv,
            "restart_spread": max(dists) if dists else 0.0,
        }
    )
    return m_star, diag
