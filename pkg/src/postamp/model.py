"""Z2-synchronization instances: GOE noise, spike, side information.

GOE normalisation used throughout: off-diagonal entries have variance 1/n,
diagonal entries variance 2/n, so the bulk spectrum fills [-2, 2] and the
rank-one spike (lambda/n) x x^T separates from it exactly when lambda > 1.
"""
from __future__ import annotations

import enum
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GOE_CONVENTION = "GOE(n): off-diagonal variance 1/n, diagonal variance 2/n"


class Variant(str, enum.Enum):
    """Which AMP / TAP pair is used; ``chi`` switches the side-information term."""

    FMM = "FMM"
    AMS = "AMS"

    @property
    def chi(self) -> int:
        return 0 if self is Variant.FMM else 1


def substream(seed: int, tag: str) -> np.random.Generator:
    """Independent generator keyed by ``(seed, tag)``.

    New consumers pick a new tag; existing draws are never perturbed.
    """
    key = zlib.crc32(tag.encode("utf8"))
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(key,)))


@dataclass(frozen=True)
class ModelParams:
    n: int
    lam: float
    gamma0: float
    variant: Variant = Variant.AMS
    fix_spike_to_ones: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"n must be an integer >= 2, got {self.n}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if not self.gamma0 >= 0:
            raise ValueError(f"gamma0 must be nonnegative, got {self.gamma0}")

    @property
    def chi(self) -> int:
        return self.variant.chi

    def to_dict(self) -> dict:
        return {
            "n": int(self.n),
            "lam": float(self.lam),
            "gamma0": float(self.gamma0),
            "variant": self.variant.value,
            "fix_spike_to_ones": bool(self.fix_spike_to_ones),
        }


@dataclass(frozen=True, eq=False)
class ModelInstance:
    params: ModelParams
    x: np.ndarray
    W: np.ndarray
    Y: np.ndarray
    y: np.ndarray
    g_side: np.ndarray
    seed: int
    convention: str = field(default=GOE_CONVENTION)

    @property
    def n(self) -> int:
        return self.params.n


def sample_goe(n: int, seed: int | np.random.Generator) -> np.ndarray:
    """Symmetric n x n GOE matrix, bitwise symmetric by construction."""
    if int(n) != n or n < 2:
        raise ValueError(f"n must be an integer >= 2, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed, "goe")
    A = rng.standard_normal((n, n))
    W = A + A.T
    W *= 1.0 / np.sqrt(2.0 * n)
    return W


def make_instance(params: ModelParams, seed: int) -> ModelInstance:
    """Draw (x, W, g) from disjoint sub-streams of ``seed`` and assemble Y, y."""
    n, lam, gamma0 = params.n, params.lam, params.gamma0
    W = sample_goe(n, substream(seed, "goe"))
    if params.fix_spike_to_ones:
        x = np.ones(n)
    else:
        x = substream(seed, "spike").choice(np.array([-1.0, 1.0]), size=n)
    g_side = substream(seed, "side").standard_normal(n)
    Y = (lam / n) * np.outer(x, x) + W
    y = gamma0 * x + np.sqrt(gamma0) * g_side
    for arr in (x, W, Y, y, g_side):
        arr.setflags(write=False)
    return ModelInstance(params=params, x=x, W=W, Y=Y, y=y, g_side=g_side, seed=int(seed))


def save_instance(path: str | Path, inst: ModelInstance) -> None:
    """Compressed npz keyed by seed. Y and y are rebuilt on load."""
    p = inst.params
    np.savez_compressed(
        path,
        seed=inst.seed,
        n=p.n,
        lam=p.lam,
        gamma0=p.gamma0,
        variant=p.variant.value,
        fix_spike_to_ones=p.fix_spike_to_ones,
        x=inst.x,
        W=inst.W,
        g_side=inst.g_side,
    )


def load_instance(path: str | Path) -> ModelInstance:
    with np.load(path) as f:
        params = ModelParams(
            n=int(f["n"]),
            lam=float(f["lam"]),
            gamma0=float(f["gamma0"]),
            variant=Variant(str(f["variant"])),
            fix_spike_to_ones=bool(f["fix_spike_to_ones"]),
        )
        x, W, g_side = f["x"], f["W"], f["g_side"]
        seed = int(f["seed"])
    Y = (params.lam / params.n) * np.outer(x, x) + W
    y = params.gamma0 * x + np.sqrt(params.gamma0) * g_side
    return ModelInstance(params=params, x=x, W=W, Y=Y, y=y, g_side=g_side, seed=seed)
