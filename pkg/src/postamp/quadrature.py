"""Gauss-Hermite expectations under Gaussian laws.

Every scalar expectation in the package is an integral against a normal
density. With probabilists' Hermite nodes ``z_i`` and weights ``w_i``
normalised so that ``sum(w) == 1``,

    E[f(mean + sqrt(variance) * G)]  ~=  sum_i w_i f(mean + sqrt(variance) * z_i),

exact whenever ``f`` is a polynomial of degree below ``2 * order``.
"""
from __future__ import annotations

from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import roots_hermitenorm

DEFAULT_ORDER = 200
MAX_AUTO_ORDER = 1600


def order_for(variance: float, base: int = DEFAULT_ORDER) -> int:
    """Node count for ``tanh``-type integrands at the given variance.

    ``tanh`` has poles at distance ``pi/2`` from the real axis, which sit
    ``pi / (2 sqrt(variance))`` from the real axis in standardised units, so
    the rule needs more nodes as the variance grows. ``base`` nodes are used
    up to variance 2, then the count grows linearly (rounded up to 100).
    """
    if variance <= 2:
        return base
    return int(min(MAX_AUTO_ORDER, 100 * np.ceil(base * variance / 200)))


@lru_cache(maxsize=32)
def gh_nodes(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for the standard normal measure (weights sum to one)."""
    if order < 2:
        raise ValueError(f"quadrature order must be >= 2, got {order}")
    z, w = roots_hermitenorm(order)
    w = w / w.sum()
    z.setflags(write=False)
    w.setflags(write=False)
    return z, w


def gaussian_expectation(
    integrand: Callable[[np.ndarray], np.ndarray],
    mean: float = 0.0,
    variance: float = 1.0,
    order: int = DEFAULT_ORDER,
) -> float:
    """E[integrand(mean + sqrt(variance) * G)] for G ~ N(0, 1).

    Parameters
    ----------
    integrand : callable
        Vectorised scalar function.
    mean, variance : float
        Parameters of the Gaussian argument. ``variance == 0`` returns
        ``integrand(mean)``.
    order : int
        Number of Gauss-Hermite nodes.

    Raises
    ------
    ValueError
        On negative variance or non-finite integrand values at the nodes.
    """
    if variance < 0:
        raise ValueError(f"variance must be nonnegative, got {variance}")
    if variance == 0:
        val = np.asarray(integrand(np.asarray([float(mean)])), dtype=float)
        if not np.all(np.isfinite(val)):
            raise ValueError("integrand is not finite at the mean")
        return float(val[0])
    z, w = gh_nodes(order)
    vals = np.asarray(integrand(mean + np.sqrt(variance) * z), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("integrand returned non-finite values at quadrature nodes")
    return float(np.dot(w, vals))


def gaussian_expectation_2d(
    integrand: Callable[[np.ndarray, np.ndarray], np.ndarray],
    cov: np.ndarray,
    mean: np.ndarray | None = None,
    order: int = 100,
) -> float:
    """E[integrand(X1, X2)] for (X1, X2) ~ N(mean, cov), tensor-product rule.

    ``cov`` only needs to be positive semidefinite: the square root is taken
    through an eigendecomposition so degenerate (rank-one or zero)
    covariances are handled.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (2, 2):
        raise ValueError("cov must be 2x2")
    mean = np.zeros(2) if mean is None else np.asarray(mean, dtype=float)
    evals, evecs = np.linalg.eigh(0.5 * (cov + cov.T))
    if evals.min() < -1e-9 * max(1.0, abs(evals.max())):
        raise ValueError("cov is not positive semidefinite")
    root = evecs * np.sqrt(np.clip(evals, 0.0, None))
    z, w = gh_nodes(order)
    z1, z2 = np.meshgrid(z, z, indexing="ij")
    x1 = mean[0] + root[0, 0] * z1 + root[0, 1] * z2
    x2 = mean[1] + root[1, 0] * z1 + root[1, 1] * z2
    vals = np.asarray(integrand(x1, x2), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("integrand returned non-finite values at quadrature nodes")
    return float(np.einsum("i,j,ij->", w, w, vals))


def product_rule_2d(order: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flattened tensor grid ``(z1, z2, weight)`` for two independent N(0, 1)."""
    z, w = gh_nodes(order)
    z1, z2 = np.meshgrid(z, z, indexing="ij")
    return z1.ravel(), z2.ravel(), np.outer(w, w).ravel()
