"""AMP for Z2 synchronisation (both variants) and general separable AMP."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .model import ModelInstance, Variant, substream
from .state_evolution import SeCurve, SeSample


@dataclass(frozen=True, eq=False)
class AmpTrace:
    """Full record of ``k`` AMP iterations.

    ``M[:, s] = m^s`` for ``s = 0..k-1``; ``Z[:, s] = z^s`` for ``s = 0..k``
    with ``z^0 = y``; ``G[:, s-1] = g^s`` for ``s = 1..k``;
    ``onsager[s] = lam * (1 - Q(m^s))``.
    """

    M: np.ndarray
    Z: np.ndarray
    G: np.ndarray
    onsager: np.ndarray
    x: np.ndarray
    g0: np.ndarray
    variant: Variant
    lam: float
    gamma0: float
    seed: int

    @property
    def k(self) -> int:
        return self.M.shape[1]

    @property
    def n(self) -> int:
        return self.M.shape[0]

    @property
    def Q(self) -> np.ndarray:
        return np.einsum("is,is->s", self.M, self.M) / self.n

    @property
    def overlaps(self) -> np.ndarray:
        return self.x @ self.M / self.n

    def m(self, s: int) -> np.ndarray:
        """``m^s``; ``m^{-1}`` is the zero vector."""
        if s < 0:
            return np.zeros(self.n)
        return self.M[:, s]


def run_amp_z2(instance: ModelInstance, k: int) -> AmpTrace:
    """Run ``k`` iterations of the unified AMP recursion from ``z^0 = y``.

    ``z^{s+1} = lam Y m^s + chi y - lam b_s m^{s-1}`` with
    ``b_s = lam (1 - Q(m^s))``; ``g^{s+1}`` is the same update with ``W`` in
    place of ``Y`` and without the side term.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    p = instance.params
    n, lam, chi = instance.n, p.lam, p.chi
    M = np.empty((n, k))
    Z = np.empty((n, k + 1))
    G = np.empty((n, k))
    b = np.empty(k)
    Z[:, 0] = instance.y
    m_prev = np.zeros(n)
    for s in range(k):
        m = np.tanh(Z[:, s])
        M[:, s] = m
        b[s] = lam * (1.0 - m @ m / n)
        Z[:, s + 1] = lam * (instance.Y @ m) + chi * instance.y - lam * b[s] * m_prev
        G[:, s] = lam * (instance.W @ m) - lam * b[s] * m_prev
        if not (np.all(np.isfinite(Z[:, s + 1])) and np.all(np.isfinite(G[:, s]))):
            raise FloatingPointError(f"non-finite AMP iterate at step {s + 1}")
        m_prev = m
    for a in (M, Z, G, b):
        a.setflags(write=False)
    return AmpTrace(M, Z, G, b, instance.x, instance.g_side, p.variant, p.lam, p.gamma0, instance.seed)


@dataclass(frozen=True, eq=False)
class GenericTrace:
    """General AMP record: ``M[:, s] = m^s`` and ``G[:, s] = g^s`` (``g^0`` given)."""

    M: np.ndarray
    G: np.ndarray
    onsager: np.ndarray

    @property
    def k(self) -> int:
        return self.M.shape[1]


def run_amp_generic(
    denoisers: Sequence[Callable[[np.ndarray], np.ndarray]],
    onsager_coeffs: np.ndarray,
    W: np.ndarray,
    g0: np.ndarray,
    k: int,
) -> GenericTrace:
    """``g^{s+1} = W m^s - sum_{j=1}^s b[s, j-1] m^{j-1}`` with ``m^s = f_s(g^0..g^s)``.

    ``denoisers[s]`` receives the ``(n, s+1)`` stack of ``g^0..g^s``.
    """
    W = np.asarray(W, dtype=float)
    g0 = np.asarray(g0, dtype=float)
    n = g0.shape[0]
    b = np.asarray(onsager_coeffs, dtype=float)
    if W.shape != (n, n):
        raise ValueError(f"W has shape {W.shape}, expected {(n, n)}")
    if b.shape[0] < k or b.shape[1] < k or len(denoisers) < k:
        raise ValueError("need k denoisers and a k x k Onsager matrix")
    M = np.empty((n, k))
    G = np.empty((n, k + 1))
    G[:, 0] = g0
    for s in range(k):
        m = np.asarray(denoisers[s](G[:, : s + 1]), dtype=float)
        if m.shape != (n,):
            raise ValueError(f"denoiser {s} returned shape {m.shape}")
        M[:, s] = m
        G[:, s + 1] = W @ m - M[:, :s] @ b[s, :s]
    return GenericTrace(M=M, G=G, onsager=b[:k, :k].copy())


def z2_as_generic(trace: AmpTrace):
    """Denoisers and Onsager matrix under which the general iteration replays ``trace``.

    The general iterate is ``g_Z2 / lam``; the deterministic spike shift of
    ``z^s`` is read off the trace.
    """
    lam, g0, chi, k = trace.lam, trace.gamma0, trace.variant.chi, trace.k
    shift = lam**2 * trace.overlaps  # shift[s-1] multiplies x in z^s
    x = trace.x

    def make(s):
        if s == 0:
            return lambda G: np.tanh(g0 * x + np.sqrt(g0) * G[:, 0])
        c = shift[s - 1]
        return lambda G: np.tanh(c * x + lam * G[:, s] + chi * (g0 * x + np.sqrt(g0) * G[:, 0]))

    b = np.zeros((k, k))
    for s in range(1, k):
        b[s, s - 1] = trace.onsager[s]
    return [make(s) for s in range(k)], b


@dataclass(frozen=True, eq=False)
class EmpiricalJoint:
    """Row-stacked empirical measure: columns ``m^0..m^{k-1}, g^1..g^k, g0, x``."""

    rows: np.ndarray
    k: int

    @classmethod
    def from_trace(cls, trace: AmpTrace) -> "EmpiricalJoint":
        return cls(np.column_stack([trace.M, trace.G, trace.g0, trace.x]), trace.k)

    def gauge_fixed(self) -> np.ndarray:
        """Rows multiplied by ``x_i`` (the sign symmetry), without the x column."""
        k = self.k
        x = self.rows[:, -1:]
        out = self.rows[:, :-1].copy()
        out[:, : 2 * k] *= x
        return out

    def moments(self) -> dict:
        r = self.rows
        return {"mean": r.mean(axis=0), "second": r.T @ r / r.shape[0]}


def sliced_w2(a: np.ndarray, b: np.ndarray, n_directions: int = 64, seed: int = 0) -> float:
    """Sliced Wasserstein-2 distance between two empirical measures on R^d.

    Each 1-d distance is the exact quantile-coupling cost, which handles
    unequal sample sizes by merging the cumulative-weight breakpoints.
    """
    a, b = np.atleast_2d(a), np.atleast_2d(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError("dimension mismatch")
    dirs = substream(seed, "sliced-w2").standard_normal((n_directions, a.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa, pb = np.sort(a @ dirs.T, axis=0), np.sort(b @ dirs.T, axis=0)
    na, nb = pa.shape[0], pb.shape[0]
    levels = np.union1d(np.arange(1, na + 1) / na, np.arange(1, nb + 1) / nb)
    widths = np.diff(np.concatenate([[0.0], levels]))
    mid = levels - widths / 2
    ia = np.minimum((mid * na).astype(int), na - 1)
    ib = np.minimum((mid * nb).astype(int), nb - 1)
    costs = widths @ (pa[ia] - pb[ib]) ** 2
    return float(np.sqrt(costs.mean()))


def empirical_vs_se(
    trace: AmpTrace,
    curve: SeCurve,
    sample: SeSample | None = None,
    n_directions: int = 64,
    seed: int = 0,
) -> dict:
    """Discrepancies between one AMP trace and its state-evolution prediction."""
    if curve.k < trace.k:
        raise ValueError(f"curve has k={curve.k} < trace k={trace.k}")
    k, n = trace.k, trace.n
    K = curve.K[:k, :k]
    MtM = trace.M.T @ trace.M / n
    GtG = trace.G.T @ trace.G / n
    q = curve.overlaps[:k]
    report = {
        "k": k,
        "n": n,
        "Q": trace.Q.tolist(),
        "q_se": q.tolist(),
        "overlap": trace.overlaps.tolist(),
        "onsager": trace.onsager.tolist(),
        "onsager_se": (trace.lam * (1 - q)).tolist(),
        "max_abs_Q_gap": float(np.max(np.abs(trace.Q - q))),
        "max_abs_overlap_gap": float(np.max(np.abs(trace.overlaps - q))),
        "max_abs_onsager_gap": float(np.max(np.abs(trace.onsager - trace.lam * (1 - q)))),
        "MtM_gap": float(np.max(np.abs(MtM - K / trace.lam**2))),
        "GtG_gap": float(np.max(np.abs(GtG - K))),
        "geometry_gap": float(np.max(np.abs(MtM - GtG / trace.lam**2))),
        "g_column_means": trace.G.mean(axis=0).tolist(),
    }
    if sample is not None:
        rows = EmpiricalJoint.from_trace(trace).gauge_fixed()
        srows = np.column_stack([sample.M[:, :k], sample.G[:, :k], sample.G0])
        report["sliced_w2"] = sliced_w2(rows, srows, n_directions, seed)
        half = srows.shape[0] // 2
        report["sliced_w2_floor"] = sliced_w2(srows[:half], srows[half:], n_directions, seed)
    return report


SUMMARY_COLUMNS = ("s", "Q", "q_se", "overlap", "onsager", "g_sq_norm")


def trace_summary_rows(trace: AmpTrace, curve: SeCurve | None = None) -> list[dict]:
    """One row per iteration; ``g_sq_norm`` refers to ``g^{s+1}``."""
    Q, ov = trace.Q, trace.overlaps
    gn = np.einsum("is,is->s", trace.G, trace.G) / trace.n
    rows = []
    for s in range(trace.k):
        rows.append(
            {
                "s": s,
                "Q": float(Q[s]),
                "q_se": float(curve.overlaps[s]) if curve is not None else float("nan"),
                "overlap": float(ov[s]),
                "onsager": float(trace.onsager[s]),
                "g_sq_norm": float(gn[s]),
            }
        )
    return rows


def write_trace_csv(path, trace: AmpTrace, curve: SeCurve | None = None) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        w.writeheader()
        w.writerows(trace_summary_rows(trace, curve))
    return path


def save_trace(path, trace: AmpTrace) -> Path:
    path = Path(path)
    np.savez_compressed(
        path,
        M=trace.M,
        Z=trace.Z,
        G=trace.G,
        onsager=trace.onsager,
        x=trace.x,
        g0=trace.g0,
        meta=np.array([trace.lam, trace.gamma0, trace.seed, trace.variant.chi], dtype=float),
    )
    return path


def load_trace(path) -> AmpTrace:
    with np.load(path) as d:
        lam, gamma0, seed, chi = d["meta"]
        return AmpTrace(
            d["M"], d["Z"], d["G"], d["onsager"], d["x"], d["g0"],
            Variant.AMS if chi == 1 else Variant.FMM, float(lam), float(gamma0), int(seed),
        )
