"""State evolution for Z2 AMP and for general AMP with separable denoisers.

Conventions
-----------
``gammas[s]`` is the effective signal-to-noise of ``z^s`` (so ``gammas[0]`` is
the side-information strength). ``overlaps[s] = (gammas[s+1] - chi*gamma0) / lam**2``
is the predicted limit of ``Q(m^s) = |m^s|^2 / n`` and of ``<x, m^s>/n``.
``K`` is the k x k covariance of ``(g^1, ..., g^k)`` and ``Gamma[s, t] =
gammas[min(s, t) + 1]`` (zero-based indices).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .quadrature import gaussian_expectation, gaussian_expectation_2d, order_for

log = logging.getLogger(__name__)


class RegimeError(ValueError):
    """Parameters for which only the trivial fixed point exists."""


def _tanh_sq(t):
    return np.tanh(t) ** 2


def tanh_moment(power: int, gamma: float, order: int | None = None) -> float:
    """E[tanh(gamma + sqrt(gamma) G)^power]; ``order=None`` picks ``order_for(gamma)``."""
    order = order or order_for(gamma)
    return gaussian_expectation(lambda t: np.tanh(t) ** power, gamma, gamma, order)


def se_map(gamma: float, lam: float, gamma0: float, chi: int, order: int | None = None) -> float:
    """One step of the scalar recursion: lam^2 E[tanh^2(g + sqrt(g) G)] + chi*gamma0."""
    order = order or order_for(gamma)
    return lam**2 * gaussian_expectation(_tanh_sq, gamma, gamma, order) + chi * gamma0


@dataclass(frozen=True, eq=False)
class SeCurve:
    lam: float
    gamma0: float
    chi: int
    gammas: np.ndarray
    overlaps: np.ndarray
    K: np.ndarray
    Gamma: np.ndarray
    quadrature_order: int

    @property
    def k(self) -> int:
        return len(self.overlaps)

    @property
    def K_closed_form(self) -> np.ndarray:
        """``Gamma - chi*gamma0``; equals ``K`` for the AMS variant only."""
        return self.Gamma - self.chi * self.gamma0

    @property
    def onsager(self) -> np.ndarray:
        """Predicted limits ``lam * (1 - q_s)`` of the Onsager coefficients."""
        return self.lam * (1.0 - self.overlaps)

    def rows(self) -> list[dict]:
        out = []
        for s, g in enumerate(self.gammas):
            out.append(
                {
                    "s": s,
                    "gamma": float(g),
                    "q": float(self.overlaps[s]) if s < self.k else None,
                }
            )
        return out


@dataclass(frozen=True)
class FixedPointConstants:
    gamma_inf: float
    q_inf: float
    b_inf: float
    K_inf: float
    residual: float
    lam: float
    gamma0: float
    chi: int
    quadrature_order: int

    def identity_residuals(self) -> dict:
        """Deviations of the tanh-moment identities at the fixed point."""
        g, o = self.gamma_inf, self.quadrature_order
        return {
            "q_minus_E_tanh": abs(self.q_inf - tanh_moment(1, g, o)),
            "b_minus_E_tanh3": abs(self.b_inf - tanh_moment(3, g, o)),
            "K_inf_minus_lam2_q": abs(self.K_inf - self.lam**2 * self.q_inf),
        }

    def to_dict(self) -> dict:
        return {
            "gamma_inf": self.gamma_inf,
            "q_inf": self.q_inf,
            "b_inf": self.b_inf,
            "K_inf": self.K_inf,
            "residual": self.residual,
            "lam2_one_minus_q": self.lam**2 * (1 - self.q_inf),
        }


def _covariance_recursion(gammas, lam, gamma0, chi, k, order_2d):
    """Covariance of (g^1..g^k) from K[s,t] = lam^2 E[M_s M_t].

    M_0 = tanh(gamma0 + sqrt(gamma0) G0) for both variants; for s >= 1,
    M_s = tanh(gamma_s + G_s + chi sqrt(gamma0) G0). Writing N_s for the full
    noise of z^s, Cov(N_0, N_t) = chi*gamma0 and Cov(N_s, N_t) = K[s-1, t-1]
    + chi*gamma0 for s, t >= 1.
    """
    K = np.zeros((k, k))
    prod = lambda a, b: np.tanh(a) * np.tanh(b)
    for s in range(k):
        K[s, s] = gammas[s + 1] - chi * gamma0
        for t in range(s):
            var_s, var_t = gammas[s], gammas[t]
            if t == 0:
                c = chi * gamma0
            else:
                c = K[s - 1, t - 1] + chi * gamma0
            # quadrature noise can push c past Cauchy-Schwarz once iterates are almost collinear
            c = min(c, np.sqrt(var_s * var_t))
            cov = np.array([[var_s, c], [c, var_t]])
            val = gaussian_expectation_2d(prod, cov, np.array([gammas[s], gammas[t]]), order_2d)
            K[s, t] = K[t, s] = lam**2 * val
    return K


def run_recursion(
    lam: float,
    gamma0: float,
    chi: int,
    k: int,
    order: int | None = None,
    order_2d: int | None = None,
) -> SeCurve:
    """Iterate the gamma recursion k times and assemble overlaps, K and Gamma."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if chi not in (0, 1):
        raise ValueError("chi must be 0 or 1")
    order = order or order_for(lam**2 + chi * gamma0)
    order_2d = order_2d or order_for(lam**2 + chi * gamma0, base=100)
    gammas = np.empty(k + 1)
    gammas[0] = gamma0
    for s in range(k):
        gammas[s + 1] = se_map(gammas[s], lam, gamma0, chi, order)
        if not np.isfinite(gammas[s + 1]):
            raise FloatingPointError(f"non-finite gamma at step {s + 1}")
    overlaps = (gammas[1:] - chi * gamma0) / lam**2
    idx = np.arange(k)
    Gamma = gammas[np.minimum.outer(idx, idx) + 1]
    K = _covariance_recursion(gammas, lam, gamma0, chi, k, order_2d)
    for arr in (gammas, overlaps, Gamma, K):
        arr.setflags(write=False)
    return SeCurve(lam, gamma0, chi, gammas, overlaps, K, Gamma, order)


def solve_fixed_point(
    lam: float,
    gamma0: float,
    chi: int,
    order: int | None = None,
    damping: float = 0.5,
    tol: float = 1e-12,
    max_damped: int = 500,
) -> FixedPointConstants:
    """Nontrivial root of gamma = lam^2 E[tanh^2(gamma + sqrt(gamma) G)] + chi*gamma0.

    Damped iteration started from the upper bound ``lam^2 + chi*gamma0``
    (the map is increasing and concave, so iterates decrease monotonically
    to the largest root), with a bracketing fallback.
    """
    if chi == 0:
        if not lam > 1:
            raise RegimeError(f"FMM needs lambda > 1 for a nontrivial fixed point (got {lam})")
    elif chi == 1:
        if not (lam > 0 and gamma0 > 0):
            raise RegimeError(f"AMS needs lambda > 0 and gamma0 > 0 (got {lam}, {gamma0})")
    else:
        raise ValueError("chi must be 0 or 1")

    order = order or order_for(lam**2 + chi * gamma0)

    def excess(g):
        return g - se_map(g, lam, gamma0, chi, order)

    g = lam**2 + chi * gamma0
    converged = False
    for _ in range(max_damped):
        g_new = (1 - damping) * g + damping * se_map(g, lam, gamma0, chi, order)
        if abs(excess(g_new)) <= tol:
            g, converged = g_new, True
            break
        g = g_new
    if not converged:
        log.info("damped iteration stalled at residual %.3e; bracketing", abs(excess(g)))
        lo = chi * gamma0 + 1e-12 if chi else 1e-8
        g = brentq(excess, lo, lam**2 + chi * gamma0 + 1e-12, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    q = tanh_moment(2, g, order)
    b = tanh_moment(4, g, order)
    return FixedPointConstants(
        gamma_inf=float(g),
        q_inf=float(q),
        b_inf=float(b),
        K_inf=float(g - chi * gamma0),
        residual=float(abs(excess(g))),
        lam=float(lam),
        gamma0=float(gamma0),
        chi=int(chi),
        quadrature_order=order,
    )


@dataclass(frozen=True, eq=False)
class SeSample:
    M: np.ndarray  # (N, k): M_0 .. M_{k-1}
    G: np.ndarray  # (N, k): G_1 .. G_k
    G0: np.ndarray
    Xi: np.ndarray

    @property
    def count(self) -> int:
        return self.G0.shape[0]

    def rows(self) -> np.ndarray:
        """(N, 2k+1) rows ordered like the AMP empirical measure: m, g, g0."""
        return np.column_stack([self.M, self.G, self.G0])


def psd_root(K: np.ndarray, rtol: float = 1e-9) -> np.ndarray:
    """Matrix ``L`` with ``L @ L.T == K`` for positive semidefinite ``K``.

    Cholesky when it succeeds. Late iterates are almost collinear, so ``K``
    becomes numerically singular at long horizons; then an eigendecomposition
    with negative round-off eigenvalues clipped to zero is used instead.

    Raises
    ------
    numpy.linalg.LinAlgError
        If an eigenvalue is below ``-rtol * max eigenvalue``.
    """
    try:
        return np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        pass
    evals, evecs = np.linalg.eigh(0.5 * (K + K.T))
    if evals.min() < -rtol * max(1.0, evals.max()):
        raise np.linalg.LinAlgError(
            f"covariance is not positive semidefinite (min eigenvalue {evals.min():.3e})"
        )
    return evecs * np.sqrt(np.clip(evals, 0.0, None))


def sample_se(curve: SeCurve, N: int, seed: int) -> SeSample:
    """Draw N rows from the idealised joint law of the first k AMP iterates."""
    from .model import substream

    L = psd_root(curve.K)
    k = curve.k
    G = substream(seed, "se-gaussians").standard_normal((N, k)) @ L.T
    G0 = substream(seed, "se-g0").standard_normal(N)
    Xi = substream(seed, "se-xi").standard_normal(N)
    M = np.empty((N, k))
    side = curve.chi * np.sqrt(curve.gamma0) * G0
    M[:, 0] = np.tanh(curve.gamma0 + np.sqrt(curve.gamma0) * G0)
    for s in range(1, k):
        M[:, s] = np.tanh(curve.gammas[s] + G[:, s - 1] + side)
    return SeSample(M=M, G=G, G0=G0, Xi=Xi)


Denoiser = Callable[[np.ndarray], np.ndarray]


def generic_se(
    denoisers: Sequence[Denoiser],
    k: int,
    N: int,
    seed: int,
    h: float = 1e-5,
) -> tuple[np.ndarray, np.ndarray]:
    """Monte-Carlo state evolution for ``g^{s+1} = W m^s - sum_j b_sj m^{j-1}``.

    ``denoisers[s]`` maps an ``(N, s+1)`` array with columns ``G_0..G_s`` to
    ``M_s``. Returns ``(K, b)`` where ``K`` is the k x k covariance of
    ``(G_1..G_k)`` and ``b[s, j-1] = E[d f_s / d G_j]`` for ``1 <= j <= s``
    (row 0 is zero). Derivatives are central differences with step ``h``.
    """
    from .model import substream

    if k < 1 or len(denoisers) < k:
        raise ValueError("need k >= 1 and at least k denoisers")
    Z = substream(seed, "generic-se").standard_normal((N, k + 1))
    cols = np.empty((N, k + 1))
    cols[:, 0] = Z[:, 0]
    K = np.zeros((k, k))
    b = np.zeros((k, k))
    Ms = []
    for t in range(k):
        if t > 0:
            Kt = K[:t, :t]
            try:
                L = np.linalg.cholesky(Kt)
            except np.linalg.LinAlgError as exc:
                evals = np.linalg.eigvalsh(Kt)
                raise np.linalg.LinAlgError(
                    f"K_<= {t} not positive definite (min eigenvalue {evals.min():.3e})"
                ) from exc
            # Cholesky prefixes are stable, so earlier columns are unchanged.
            cols[:, 1 : t + 1] = Z[:, 1 : t + 1] @ L.T
        args = cols[:, : t + 1]
        Mt = np.asarray(denoisers[t](args), dtype=float)
        Ms.append(Mt)
        for s in range(t + 1):
            K[t, s] = K[s, t] = np.mean(Mt * Ms[s])
        for j in range(1, t + 1):
            up, dn = args.copy(), args.copy()
            up[:, j] += h
            dn[:, j] -= h
            b[t, j - 1] = np.mean((denoisers[t](up) - denoisers[t](dn)) / (2 * h))
    return K, b


def z2_generic_denoisers(curve: SeCurve) -> list[Denoiser]:
    """Z2 tanh denoisers written for the unit-scale generic iteration.

    The generic iterate is ``g_Z2 / lam``; the denoiser multiplies back.
    """
    lam, g0, chi, gam = curve.lam, curve.gamma0, curve.chi, curve.gammas

    def make(s):
        if s == 0:
            return lambda G: np.tanh(g0 + np.sqrt(g0) * G[:, 0])
        return lambda G: np.tanh(gam[s] + lam * G[:, s] + chi * np.sqrt(g0) * G[:, 0])

    return [make(s) for s in range(curve.k)]
