"""Experiment configuration, per-seed pipelines, acceptance checks and reports.

A run is described by an :class:`ExperimentConfig` (a versioned JSON
document) and produces a :class:`RunReport`. Reports are deterministic for a
fixed configuration apart from the ``timestamp`` and ``timings`` keys.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .amp import empirical_vs_se, run_amp_z2
from .maxmin import ScalarParams, maxmin_report
from .model import GOE_CONVENTION, ModelParams, Variant, make_instance
from .quadrature import order_for
from .sf import build_conditioning, compare_objectives, verify_conditional_identity
from .state_evolution import RegimeError, run_recursion, sample_se, solve_fixed_point
from .tap import (
    TapContext,
    convexity_probe,
    find_stationary_point,
    gradient_check,
    hessian_decomposition_residual,
    lambda_min,
)

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
FORMATS = ("json", "csv", "svg")
EIGENSOLVERS = ("shift-invert", "dense")
STAGES = ("amp", "sf", "tap", "compare")
VOLATILE_KEYS = ("timestamp", "timings")


class ConfigError(ValueError):
    """A configuration that violates a module precondition."""


def parse_seeds(text: str) -> list[int]:
    """``"0:20"`` (half-open range) or ``"1,4,9"``."""
    text = text.strip()
    if ":" in text:
        lo, hi = (int(t) for t in text.split(":"))
        return list(range(lo, hi))
    return [int(t) for t in text.split(",") if t.strip()]


# Nested document layout: section -> config attribute names.
_SECTIONS = {
    "model": ("n", "lam", "gamma0", "variant"),
    "run": (
        "k",
        "epsilon",
        "probe_points",
        "newton_restarts",
        "sf_restarts",
        "grad_check_points",
        "eigensolver",
        "quadrature_order",
    ),
    "maxmin": ("alpha_v_max", "alpha_v_step"),
    "sweep": ("sweep_lam", "sweep_n", "sweep_stage"),
    "output": ("out_dir", "formats"),
}


@dataclass
class ExperimentConfig:
    n: int = 2000
    lam: float = 1.5
    gamma0: float = 0.3
    variant: str = "AMS"
    k: int = 12
    epsilon: float = 0.05
    probe_points: int = 50
    newton_restarts: int = 10
    sf_restarts: int = 20
    grad_check_points: int = 20
    eigensolver: str = "shift-invert"
    quadrature_order: int | None = None
    seeds: list[int] = field(default_factory=lambda: list(range(20)))
    alpha_v_max: float = 0.3
    alpha_v_step: float = 0.01
    sweep_lam: list[float] = field(default_factory=list)
    sweep_n: list[int] = field(default_factory=list)
    sweep_stage: str = "sf-verify"
    out_dir: str = "results"
    formats: list[str] = field(default_factory=lambda: ["json"])
    workers: int = 1
    version: int = CONFIG_VERSION

    @property
    def chi(self) -> int:
        return Variant(self.variant).chi

    @property
    def model_params(self) -> ModelParams:
        return ModelParams(self.n, self.lam, self.gamma0, Variant(self.variant))

    @property
    def alpha_v_grid(self) -> np.ndarray:
        count = int(round(self.alpha_v_max / self.alpha_v_step))
        return np.round(np.arange(count + 1) * self.alpha_v_step, 12)

    def effective_order(self) -> int:
        return self.quadrature_order or order_for(self.lam**2 + self.chi * self.gamma0)

    def validate(self) -> "ExperimentConfig":
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version}")
        try:
            Variant(self.variant)
            self.model_params
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.k < 2:
            raise ConfigError("k must be >= 2")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.probe_points < 1 or self.newton_restarts < 0 or self.sf_restarts < 1:
            raise ConfigError("probe, restart and point counts must be positive")
        if self.eigensolver not in EIGENSOLVERS:
            raise ConfigError(f"eigensolver must be one of {EIGENSOLVERS}")
        if self.quadrature_order is not None and self.quadrature_order < 2:
            raise ConfigError("quadrature_order must be >= 2")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not (self.alpha_v_step > 0 and 0 <= self.alpha_v_max < 1):
            raise ConfigError("alpha_v grid must lie in [0, 1)")
        if bad := set(self.formats) - set(FORMATS):
            raise ConfigError(f"unknown formats {sorted(bad)}")
        if self.sweep_stage not in ("amp", "sf-verify", "tap-probe", "full"):
            raise ConfigError(f"unknown sweep stage {self.sweep_stage!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        return self

    def to_dict(self) -> dict:
        doc = {"version": self.version, "seeds": list(self.seeds), "workers": self.workers}
        for section, names in _SECTIONS.items():
            doc[section] = {name: getattr(self, name) for name in names}
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        flat = {}
        for key, value in doc.items():
            if key in _SECTIONS:
                flat.update(value)
            else:
                flat[key] = value
        if isinstance(flat.get("seeds"), str):
            flat["seeds"] = parse_seeds(flat["seeds"])
        elif isinstance(flat.get("seeds"), dict):
            flat["seeds"] = list(range(flat["seeds"]["start"], flat["seeds"]["stop"]))
        if unknown := set(flat) - known:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**flat)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))


def _summary(values) -> dict:
    arr = np.asarray(values, dtype=float)
    return {
        "median": float(np.median(arr)),
        "p5": float(np.percentile(arr, 5)),
        "p95": float(np.percentile(arr, 95)),
        "min": float(arr.min()),
        "max": float(arr.max()),
        "count": int(arr.size),
    }


def _flatten(record: dict, prefix: str = "") -> dict:
    out = {}
    for key, value in record.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(_flatten(value, name + "."))
        elif isinstance(value, (bool, np.bool_)):
            out[name] = bool(value)
        elif isinstance(value, (int, float, np.integer, np.floating)):
            out[name] = float(value)
    return out


def aggregate(per_seed: list[dict]) -> dict:
    """Median and 5th/95th percentiles of every numeric scalar in the seed records."""
    flats = [_flatten(r) for r in per_seed if "error" not in r]
    keys = sorted({k for f in flats for k in f if k != "seed"})
    return {k: _summary([f[k] for f in flats if k in f]) for k in keys}


@dataclass
class Criterion:
    name: str
    passed: bool
    value: float | None
    threshold: str
    detail: str = ""


@dataclass
class RunReport:
    command: str
    config: dict
    per_seed: list[dict] = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    criteria: list[Criterion] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    convention: str = GOE_CONVENTION
    quadrature_order: int | None = None

    @property
    def passed(self) -> bool:
        return not self.errors and all(c.passed for c in self.criteria)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d

    def dumps(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True)

    def summary_lines(self) -> list[str]:
        lines = []
        for c in self.criteria:
            val = "n/a" if c.value is None else f"{c.value:.4g}"
            lines.append(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {val} (need {c.threshold}) {c.detail}".rstrip())
        for e in self.errors:
            lines.append(f"ERROR {e.get('stage', '?')}: {e.get('message')}")
        return lines


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if np.isfinite(x) else str(x)
    return obj


def strip_volatile(doc: dict) -> dict:
    """Report payload without the wall-clock keys, for determinism checks."""
    return {k: v for k, v in doc.items() if k not in VOLATILE_KEYS}


# ---------------------------------------------------------------- per-seed work


def seed_pipeline(cfg: ExperimentConfig, seed: int, stages=STAGES) -> dict:
    """All per-seed measurements for the requested stages.

    ``compare`` needs ``tap`` and ``sf``, which are then run as well.
    """
    stages = set(stages)
    if "compare" in stages:
        stages |= {"tap", "sf"}
    t0 = time.perf_counter()
    timings = {}
    rec: dict = {"seed": int(seed)}
    inst = make_instance(cfg.model_params, seed)
    trace = run_amp_z2(inst, cfg.k)
    timings["amp"] = time.perf_counter() - t0

    if "amp" in stages:
        t = time.perf_counter()
        curve = run_recursion(cfg.lam, cfg.gamma0, cfg.chi, cfg.k, cfg.quadrature_order)
        cmp = empirical_vs_se(trace, curve, sample_se(curve, cfg.n, seed), seed=seed)
        rec["amp"] = {key: cmp[key] for key in (
            "max_abs_Q_gap", "max_abs_overlap_gap", "max_abs_onsager_gap",
            "MtM_gap", "GtG_gap", "geometry_gap", "sliced_w2", "sliced_w2_floor",
        )}
        rec["amp"]["Q"] = cmp["Q"]
        timings["se_compare"] = time.perf_counter() - t

    cond = None
    if "sf" in stages:
        t = time.perf_counter()
        cond = build_conditioning(trace, inst.W)
        ident = verify_conditional_identity(inst.W, cond)
        rec["sf"] = {
            "WR_minus_S": cond.diagnostics["WR_minus_S"],
            "b_def_residual": cond.diagnostics["b_def_residual"],
            "reconstruction_residual": ident["relative_residual"],
            "T_SF_R_minus_G_SF": ident["T_SF_R_minus_G_SF"],
            "B_gap_op": cond.B_gap_op(),
            "T_gap_op": cond.T_gap_op(),
            "cond_R": cond.diagnostics["cond_R"],
        }
        timings["sf"] = time.perf_counter() - t

    if "tap" in stages:
        t = time.perf_counter()
        fp = solve_fixed_point(cfg.lam, cfg.gamma0, cfg.chi, cfg.quadrature_order)
        ctx = TapContext(inst, fp.q_inf)
        center = trace.m(cfg.k - 1)
        m_star, sdiag = find_stationary_point(
            ctx, center, cfg.epsilon, n_restarts=cfg.newton_restarts, seed=seed
        )
        timings["stationary"] = time.perf_counter() - t
        t = time.perf_counter()
        probe = convexity_probe(ctx, trace, cfg.k, cfg.epsilon, cfg.probe_points, seed, m_star, cfg.eigensolver)
        origin, _ = lambda_min(ctx, np.zeros(cfg.n), cfg.eigensolver)
        timings["probe"] = time.perf_counter() - t
        grad = gradient_check(ctx, n_points=cfg.grad_check_points, seed=seed)
        rec["tap"] = {
            "probe_min": probe.global_min,
            "probe_points": probe.n_points,
            "origin_lam_min": origin,
            "stationary": {k: v for k, v in sdiag.items() if not isinstance(v, list)},
            "gradient_check": grad,
            "hessian_decomposition_residual": hessian_decomposition_residual(ctx, center),
        }
        rec["tap"]["stationary_ok"] = bool(
            sdiag["converged"]
            and sdiag["grad_norm"] <= 1e-10
            and sdiag["distance_from_init"] <= cfg.epsilon / 2
            and sdiag["max_abs"] < 1
            and sdiag["restart_spread"] <= 1e-6
            and all(sdiag["restart_converged"])
        )
        if "compare" in stages:
            t = time.perf_counter()
            pts = [center, m_star, probe.worst_point]
            res = compare_objectives(ctx, trace, cond, pts, xi_seed=seed, n_restarts=cfg.sf_restarts)
            rec["compare"] = {
                "goe_sup": res["goe_sup"],
                "sf_sup": res["sf_sup"],
                "sf_minus_goe": res["sf_sup"] - res["goe_sup"],
                "coupling_gap": res["coupling_gap"],
                "P_R_xi_over_sqrt_n": res["P_R_xi_over_sqrt_n"],
            }
            timings["compare"] = time.perf_counter() - t
    rec["timings"] = timings
    return rec


def _safe_seed(args) -> dict:
    cfg, seed, stages = args
    try:
        return seed_pipeline(cfg, seed, stages)
    except (RegimeError, ConfigError):
        raise
    except Exception as exc:  # recorded per seed so later seeds still run
        log.exception("seed %d failed", seed)
        return {"seed": int(seed), "error": f"{type(exc).__name__}: {exc}"}


def run_seeds(cfg: ExperimentConfig, stages) -> list[dict]:
    jobs = [(cfg, s, tuple(stages)) for s in cfg.seeds]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            out = list(pool.map(_safe_seed, jobs))
    else:
        out = [_safe_seed(j) for j in jobs]
    return sorted(out, key=lambda r: r["seed"])


# ---------------------------------------------------------------- criteria


def _fraction(per_seed, get) -> tuple[float, int]:
    vals = [bool(get(r)) for r in per_seed if "error" not in r]
    return (float(np.mean(vals)) if vals else 0.0), len(vals)


def _median(per_seed, get) -> float:
    return float(np.median([get(r) for r in per_seed if "error" not in r]))


def _max(per_seed, get) -> float:
    return float(max(get(r) for r in per_seed if "error" not in r))


def amp_criteria(per_seed) -> list[Criterion]:
    q = _median(per_seed, lambda r: r["amp"]["max_abs_Q_gap"])
    g = _median(per_seed, lambda r: r["amp"]["GtG_gap"])
    return [
        Criterion("amp_se_overlap", q <= 0.05, q, "median max_s |Q - q_s| <= 0.05"),
        Criterion("amp_se_covariance", g <= 0.1, g, "median max-entry |G^T G/n - K| <= 0.1"),
    ]


def sf_identity_criteria(per_seed) -> list[Criterion]:
    out = []
    for key in ("WR_minus_S", "b_def_residual", "reconstruction_residual"):
        v = _max(per_seed, lambda r: r["sf"][key])
        out.append(Criterion(f"sf_{key}", v <= 1e-8, v, "max over seeds <= 1e-8 (relative)"))
    return out


def sf_gap_criteria(per_seed) -> list[Criterion]:
    b = _median(per_seed, lambda r: r["sf"]["B_gap_op"])
    t = _median(per_seed, lambda r: r["sf"]["T_gap_op"])
    return [
        Criterion("sf_B_gap", b <= 0.1, b, "median |B_SF - B0|_op <= 0.1"),
        Criterion("sf_T_gap", t <= 0.1, t, "median |T - T_SF|_op <= 0.1"),
    ]


def tap_criteria(per_seed, variant: str) -> list[Criterion]:
    pos, m = _fraction(per_seed, lambda r: r["tap"]["probe_min"] > 0)
    neg, _ = _fraction(per_seed, lambda r: r["tap"]["origin_lam_min"] < 0)
    stat, _ = _fraction(per_seed, lambda r: r["tap"]["stationary_ok"])
    grad = _max(per_seed, lambda r: r["tap"]["gradient_check"]["max_rel_error"])
    hess = _max(per_seed, lambda r: r["tap"]["hessian_decomposition_residual"])
    return [
        Criterion("local_convexity", pos >= 0.95, pos, ">= 0.95 of seeds with min probe lambda_min > 0", f"{m} seeds"),
        Criterion(
            f"origin_contrast_{variant}", neg >= 0.95, neg, ">= 0.95 of seeds with lambda_min(nH(0)) < 0", f"{m} seeds"
        ),
        Criterion("unique_stationary_point", stat >= 0.95, stat, ">= 0.95 of seeds", f"{m} seeds"),
        Criterion("gradient_finite_difference", grad <= 1e-6, grad, "max relative error <= 1e-6"),
        Criterion("hessian_decomposition", hess <= 1e-10, hess, "relative residual <= 1e-10"),
    ]


def compare_criteria(per_seed) -> list[Criterion]:
    dom, m = _fraction(per_seed, lambda r: r["compare"]["sf_minus_goe"] >= -0.05)
    neg, _ = _fraction(per_seed, lambda r: r["compare"]["sf_sup"] < 0 and r["compare"]["goe_sup"] < 0)
    return [
        Criterion("surrogate_dominance", dom >= 0.95, dom, ">= 0.95 of seeds with sf_sup >= goe_sup - 0.05", f"{m} seeds"),
        Criterion("surrogate_negative", neg >= 0.95, neg, ">= 0.95 of seeds with both suprema < 0", f"{m} seeds"),
    ]


def maxmin_criteria(report: dict) -> list[Criterion]:
    return [Criterion(f"maxmin_{k}", bool(v), None, "true") for k, v in report["checks"].items()]


# ---------------------------------------------------------------- commands


def _finish(report: RunReport, t0: float) -> RunReport:
    seed_times = {str(r["seed"]): r.pop("timings") for r in report.per_seed if "timings" in r}
    if seed_times:
        report.timings["per_seed"] = seed_times
    report.aggregates = aggregate(report.per_seed)
    report.errors += [{"stage": f"seed {r['seed']}", "message": r["error"]} for r in report.per_seed if "error" in r]
    report.timings["total"] = time.perf_counter() - t0
    return report


def _new_report(command: str, cfg: ExperimentConfig) -> RunReport:
    return RunReport(command=command, config=cfg.to_dict(), quadrature_order=cfg.effective_order())


def cmd_se(cfg: ExperimentConfig) -> RunReport:
    t0 = time.perf_counter()
    report = _new_report("se", cfg)
    fp = solve_fixed_point(cfg.lam, cfg.gamma0, cfg.chi, cfg.quadrature_order)
    curve = run_recursion(cfg.lam, cfg.gamma0, cfg.chi, cfg.k, cfg.quadrature_order)
    ident = fp.identity_residuals()
    off = ~np.eye(cfg.k, dtype=bool)
    cross = float(np.abs(curve.K - curve.K_closed_form)[off].max()) if cfg.chi == 1 else None
    report.extra = {
        "fixed_point": fp.to_dict(),
        "identity_residuals": ident,
        "curve": curve.rows(),
        "K": curve.K.tolist(),
        "cross_moment_gap": cross,
    }
    report.criteria = [
        Criterion("fixed_point_residual", fp.residual <= 1e-10, fp.residual, "<= 1e-10"),
        Criterion("q_identity", ident["q_minus_E_tanh"] <= 1e-8, ident["q_minus_E_tanh"], "<= 1e-8"),
        Criterion("b_identity", ident["b_minus_E_tanh3"] <= 1e-8, ident["b_minus_E_tanh3"], "<= 1e-8"),
        Criterion("stability", fp.lam**2 * (1 - fp.q_inf) < 1, fp.lam**2 * (1 - fp.q_inf), "lam^2 (1 - q) < 1"),
    ]
    if cross is not None:
        report.criteria.append(Criterion("cross_moment_identity", cross <= 1e-6, cross, "<= 1e-6"))
    return _finish(report, t0)


def cmd_amp(cfg: ExperimentConfig) -> RunReport:
    t0 = time.perf_counter()
    report = _new_report("amp", cfg)
    report.per_seed = run_seeds(cfg, ("amp",))
    if any("error" not in r for r in report.per_seed):
        report.criteria = amp_criteria(report.per_seed)
    return _finish(report, t0)


def cmd_tap_probe(cfg: ExperimentConfig) -> RunReport:
    t0 = time.perf_counter()
    report = _new_report("tap-probe", cfg)
    report.per_seed = run_seeds(cfg, ("tap",))
    if any("error" not in r for r in report.per_seed):
        report.criteria = tap_criteria(report.per_seed, cfg.variant)
    return _finish(report, t0)


def cmd_sf_verify(cfg: ExperimentConfig) -> RunReport:
    t0 = time.perf_counter()
    report = _new_report("sf-verify", cfg)
    report.per_seed = run_seeds(cfg, ("sf",))
    if any("error" not in r for r in report.per_seed):
        report.criteria = sf_identity_criteria(report.per_seed) + sf_gap_criteria(report.per_seed)
    return _finish(report, t0)


def cmd_maxmin(cfg: ExperimentConfig) -> RunReport:
    t0 = time.perf_counter()
    report = _new_report("maxmin", cfg)
    params = ScalarParams.solve(cfg.lam, cfg.gamma0, cfg.chi, cfg.quadrature_order)
    report.extra = maxmin_report(params, cfg.alpha_v_grid)
    report.criteria = maxmin_criteria(report.extra)
    return _finish(report, t0)


def cmd_full(cfg: ExperimentConfig) -> RunReport:
    """Every stage on every seed plus the scalar certificate.

    Stage failures are recorded and the remaining stages still run.
    """
    t0 = time.perf_counter()
    report = _new_report("full", cfg)
    for name, fn in (("se", cmd_se), ("maxmin", cmd_maxmin)):
        try:
            sub = fn(cfg)
            report.extra[name] = sub.extra
            report.criteria += sub.criteria
        except RegimeError:
            raise
        except Exception as exc:
            report.errors.append({"stage": name, "message": f"{type(exc).__name__}: {exc}"})
    report.per_seed = run_seeds(cfg, STAGES)
    ok = [r for r in report.per_seed if "error" not in r]
    if ok:
        report.criteria += (
            amp_criteria(ok)
            + sf_identity_criteria(ok)
            + sf_gap_criteria(ok)
            + tap_criteria(ok, cfg.variant)
            + compare_criteria(ok)
        )
    return _finish(report, t0)


_STAGE_COMMANDS = {"amp": cmd_amp, "sf-verify": cmd_sf_verify, "tap-probe": cmd_tap_probe, "full": cmd_full}


def cmd_sweep(cfg: ExperimentConfig) -> RunReport:
    """Run ``sweep_stage`` over the grid ``sweep_lam x sweep_n``.

    Regime errors at a grid point are recorded and the sweep continues. With
    an ``n`` grid and an SF stage, the medians of both SF gaps must decrease
    in ``n``.
    """
    t0 = time.perf_counter()
    report = _new_report("sweep", cfg)
    lams = cfg.sweep_lam or [cfg.lam]
    ns = sorted(cfg.sweep_n or [cfg.n])
    rows = []
    for lam in lams:
        for n in ns:
            sub_cfg = ExperimentConfig.from_dict({**cfg.to_dict()})
            sub_cfg.lam, sub_cfg.n = float(lam), int(n)
            row = {"lam": float(lam), "n": int(n)}
            try:
                sub = _STAGE_COMMANDS[cfg.sweep_stage](sub_cfg.validate())
            except (RegimeError, ConfigError) as exc:
                row["error"] = str(exc)
                report.errors.append({"stage": f"lam={lam}, n={n}", "message": str(exc)})
                rows.append(row)
                continue
            row["passed"] = sub.passed
            row["medians"] = {k: v["median"] for k, v in sub.aggregates.items()}
            row["criteria"] = [asdict(c) for c in sub.criteria]
            rows.append(row)
    report.extra = {"grid": rows}
    if len(ns) > 1 and cfg.sweep_stage in ("sf-verify", "full"):
        for lam in lams:
            sel = [r for r in rows if r["lam"] == float(lam) and "error" not in r]
            for key in ("sf.B_gap_op", "sf.T_gap_op"):
                meds = [r["medians"][key] for r in sel]
                dec = bool(np.all(np.diff(meds) < 0))
                report.criteria.append(
                    Criterion(f"{key}_decreasing_lam{lam}", dec, meds[-1] if meds else None,
                              "medians decrease in n", f"medians {np.round(meds, 4).tolist()}")
                )
                report.criteria.append(
                    Criterion(f"{key}_at_largest_n_lam{lam}", bool(meds and meds[-1] <= 0.1),
                              meds[-1] if meds else None, "<= 0.1 at largest n")
                )
    return _finish(report, t0)


COMMANDS = {
    "se": cmd_se,
    "amp": cmd_amp,
    "tap-probe": cmd_tap_probe,
    "sf-verify": cmd_sf_verify,
    "maxmin": cmd_maxmin,
    "full": cmd_full,
    "sweep": cmd_sweep,
}


# ---------------------------------------------------------------- output


def write_report(report: RunReport, out_dir, formats) -> list[Path]:
    """Write the report in each format; raises ``OSError`` if the directory is unusable."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = report.command.replace("-", "_")
    written = []
    if "json" in formats:
        p = out / f"{stem}.json"
        p.write_text(report.dumps() + "\n")
        written.append(p)
    if "csv" in formats:
        p = out / f"{stem}.csv"
        _write_csv(report, p)
        written.append(p)
    if "svg" in formats:
        p = _write_svg(report, out / f"{stem}.svg")
        if p is not None:
            written.append(p)
    return written


def _write_csv(report: RunReport, path: Path) -> None:
    if report.per_seed:
        rows = [_flatten(r) for r in report.per_seed]
    elif report.command == "se":
        rows = report.extra["curve"]
    elif report.command == "maxmin":
        rows = report.extra["margin"]["rows"]
    elif report.command == "sweep":
        rows = [{"lam": r["lam"], "n": r["n"], **r.get("medians", {})} for r in report.extra["grid"]]
    else:
        rows = [asdict(c) for c in report.criteria]
    cols = sorted({k for r in rows for k in r if not k.startswith("timings")})
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)


def _write_svg(report: RunReport, path: Path) -> Path | None:
    """Line plot of gamma_s (``se``) or margin versus alpha_v (``maxmin``)."""
    if report.command == "se":
        rows = report.extra["curve"]
        x, y, xl, yl = [r["s"] for r in rows], [r["gamma"] for r in rows], "s", "gamma_s"
    elif report.command in ("maxmin", "full") and "margin" in report.extra.get("maxmin", report.extra):
        rows = report.extra.get("maxmin", report.extra)["margin"]["rows"]
        x, y, xl, yl = [r["alpha_v"] for r in rows], [r["margin"] for r in rows], "alpha_v", "margin"
    else:
        log.info("no figure defined for %s", report.command)
        return None
    try:
        import matplotlib
    except ImportError:
        log.warning("matplotlib not installed; skipping %s", path.name)
        return None

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "postamp"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(x, y, marker="o", ms=3)
    ax.set_xlabel(xl)
    ax.set_ylabel(yl)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
