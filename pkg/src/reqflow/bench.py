"""Numerical-stability benchmarks and Monte Carlo checks of the rectification theory.

Report files
------------
Round-trip CSV (``RoundTripReport.write_csv``)::

    offset,phi,quat_error,matrix_error,trials

Marginal CSV (``MarginalReport.write_csv``), one row per time::

    t,ks_models_translation,ks_models_angle,ks_interpolant_translation,ks_interpolant_angle

Transport CSV (``TransportReport.rows``), one row per component::

    cost,component,before_mean,before_se,after_mean,after_se,n_before,n_after

Floats are written with ``repr`` so files are byte-stable for a fixed seed.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .interpolants import angular_velocity, matrix_geodesic, slerp_additive, slerp_additive_normalized, slerp_exp
from .model import CouplingPair, ModelParams, as_endpoint_model, make_pairs, sample_noise, stack_pairs
from .quat import (
    angle_of,
    exp_map,
    geodesic_distance,
    hamilton_product,
    log_map,
    mat_exp,
    mat_log,
    matrix_to_quat,
    quat_to_matrix,
)
from .so3_stats import IgsoConfig
from .solvers import SolverConfig, integrate_batch

DEFAULT_OFFSETS = tuple(10.0 ** -k for k in range(1, 8))
DEFAULT_NAN_PROBE = (0.0, 1e-12, 1e-9, 1e-8, 1e-7, 1e-6, 1e-3, 1.0, np.pi - 1e-3, np.pi)
# matrix route counts as degraded once its error is this many times the quaternion route's
DEGRADE_FACTOR = 1e3
COSTS = ("sq_norm", "norm")


def _random_axes(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


# ---------------------------------------------------------------- round trips


def roundtrip_quat(omega) -> np.ndarray:
    """``|omega - log(exp(omega))|`` through the quaternion route (broadcasts)."""
    omega = np.asarray(omega, dtype=float)
    return np.linalg.norm(omega - log_map(exp_map(omega)), axis=-1)


def roundtrip_matrix(omega) -> np.ndarray:
    """Same round trip through the rotation matrix and the naive matrix log."""
    omega = np.asarray(omega, dtype=float)
    return np.linalg.norm(omega - mat_log(mat_exp(omega)), axis=-1)


@dataclass(frozen=True)
class RoundTripRecord:
    offset: float
    phi: float
    quat_error: float
    matrix_error: float
    trials: int


@dataclass
class RoundTripReport:
    records: list[RoundTripRecord]

    @property
    def quat_beats_matrix(self) -> bool:
        return all(r.quat_error < r.matrix_error for r in self.records)

    def gaps(self) -> list[float]:
        return [r.matrix_error / max(r.quat_error, np.finfo(float).tiny) for r in self.records]

    def summary(self) -> dict:
        return {
            "records": len(self.records),
            "quat_beats_matrix": self.quat_beats_matrix,
            "max_quat_error": max(r.quat_error for r in self.records),
            "min_gap": min(self.gaps()),
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["offset", "phi", "quat_error", "matrix_error", "trials"])
            for r in self.records:
                w.writerow([repr(r.offset), repr(r.phi), repr(r.quat_error), repr(r.matrix_error), r.trials])


def run_roundtrip_bench(
    angle_offsets: Sequence[float] = DEFAULT_OFFSETS, trials_per_angle: int = 100, rng=None
) -> RoundTripReport:
    """Mean round-trip errors at ``phi = pi - offset`` over random axes."""
    rng = rng if rng is not None else np.random.default_rng(0)
    records = []
    for offset in angle_offsets:
        phi = np.pi - offset
        omega = phi * _random_axes(rng, trials_per_angle)
        records.append(RoundTripRecord(
            offset=float(offset),
            phi=float(phi),
            quat_error=float(np.mean(roundtrip_quat(omega))),
            matrix_error=float(np.mean(roundtrip_matrix(omega))),
            trials=trials_per_angle,
        ))
    return RoundTripReport(records)


# ---------------------------------------------------------------- small angles and path agreement


@dataclass(frozen=True)
class NanProbeRow:
    phi: float
    dtype: str
    exp_finite: bool
    additive_finite: bool


def probe_small_angle_nan(phis: Sequence[float] = DEFAULT_NAN_PROBE, dtype=np.float64, t: float = 0.5,
                          axis=(1.0, 2.0, 3.0)) -> list[NanProbeRow]:
    """Evaluate both SLERP forms at ``t`` between identity and a rotation by ``phi``.

    The pair is built directly in ``dtype`` so that ``cos(phi/2)`` rounds the
    way a stored quaternion of that precision would.
    """
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    rows = []
    for phi in phis:
        q0 = np.array([1.0, 0.0, 0.0, 0.0], dtype=dtype)
        q1 = exp_map(phi * axis).astype(dtype)
        with np.errstate(all="ignore"):
            exp_out = slerp_exp(q0.astype(float), q1.astype(float), t)
            add_out = slerp_additive(q0, q1, t)
        rows.append(NanProbeRow(float(phi), np.dtype(dtype).name,
                                bool(np.all(np.isfinite(exp_out))), bool(np.all(np.isfinite(add_out)))))
    return rows


def matrix_degraded(phi: float, trials: int = 100, rng=None) -> bool:
    """True when the matrix round trip is ``DEGRADE_FACTOR`` times worse than the quaternion one.

    The quaternion error is floored at ``eps * phi`` so an exact zero does not
    make every angle look degraded.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    omega = phi * _random_axes(rng, trials)
    q_err = max(float(np.mean(roundtrip_quat(omega))), np.finfo(float).eps * phi)
    return float(np.mean(roundtrip_matrix(omega))) > DEGRADE_FACTOR * q_err


@dataclass(frozen=True)
class PathAgreement:
    phi: float
    additive_vs_exp: float
    matrix_vs_exp: float

    @property
    def worst(self) -> float:
        return max(self.additive_vs_exp, self.matrix_vs_exp)


def path_agreement(phis: Sequence[float], t_grid=None, trials: int = 20, rng=None) -> list[PathAgreement]:
    """Largest angular gap between the three interpolants over random pairs ``phi`` apart."""
    rng = rng if rng is not None else np.random.default_rng(0)
    t_grid = np.round(np.arange(0.0, 1.0 + 1e-12, 0.1), 12) if t_grid is None else np.asarray(t_grid)
    out = []
    for phi in phis:
        q0 = exp_map(rng.uniform(0, np.pi, (trials, 1)) * _random_axes(rng, trials))
        q1 = hamilton_product(q0, exp_map(phi * _random_axes(rng, trials)))
        r0, r1 = quat_to_matrix(q0), quat_to_matrix(q1)
        add_gap = mat_gap = 0.0
        for t in t_grid:
            ref = slerp_exp(q0, q1, t)
            add = slerp_additive_normalized(q0, q1, t)
            mat = matrix_to_quat(matrix_geodesic(r0, r1, t))
            add_gap = max(add_gap, float(np.max(geodesic_distance(ref, add))))
            mat_gap = max(mat_gap, float(np.max(geodesic_distance(ref, mat))))
        out.append(PathAgreement(float(phi), add_gap, mat_gap))
    return out


# ---------------------------------------------------------------- marginals


@dataclass(frozen=True)
class MarginalRecord:
    t: float
    ks_models_translation: float
    ks_models_angle: float
    ks_interpolant_translation: float
    ks_interpolant_angle: float


@dataclass
class MarginalReport:
    """Per-time KS statistics.

    ``ks_models_*`` compare the two models' ODE states at time ``t`` (fresh
    noise for each). ``ks_interpolant_*`` compare the second model's ODE
    state with the geodesic interpolant of the coupling the first model
    induces, which is the process a rectified model is meant to reproduce.
    """

    records: list[MarginalRecord]
    sample_count: int

    def worst_interpolant(self) -> float:
        return max(max(r.ks_interpolant_translation, r.ks_interpolant_angle) for r in self.records)

    def at(self, t: float) -> MarginalRecord:
        for r in self.records:
            if abs(r.t - t) < 1e-12:
                return r
        raise KeyError(t)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(MarginalRecord.__dataclass_fields__))
            for r in self.records:
                w.writerow([repr(v) for v in asdict(r).values()])


def _ks(a, b) -> float:
    return float(stats.ks_2samp(a, b).statistic)


def _grid_index(t: float, steps: int) -> int:
    k = int(round(t * steps))
    if abs(k - t * steps) > 1e-9 or not 0 <= k <= steps:
        raise ValueError(f"time {t} is not on the {steps}-step solver grid")
    return k


def verify_marginal_preservation(
    model_before: ModelParams,
    model_after: ModelParams,
    sample_count: int,
    time_grid: Sequence[float],
    rng: np.random.Generator,
    *,
    solver: SolverConfig = SolverConfig(steps=200, scheduler_enabled=False),
    igso: IgsoConfig = IgsoConfig(),
) -> MarginalReport:
    """KS statistics on translation norm and rotation angle at each time in ``time_grid``."""
    idx = [_grid_index(t, solver.steps) for t in time_grid]
    xa, qa = sample_noise(sample_count, rng, igso)
    xb, qb = sample_noise(sample_count, rng, igso)
    xa1, qa1, path_a = integrate_batch(as_endpoint_model(model_before), xa, qa, solver, return_path=True)
    _, _, path_b = integrate_batch(as_endpoint_model(model_after), xb, qb, solver, return_path=True)
    records = []
    for t, k in zip(time_grid, idx):
        _, x_a, q_a = path_a[k]
        _, x_b, q_b = path_b[k]
        x_i = (1 - t) * xa + t * xa1
        q_i = slerp_exp(qa, qa1, t)
        nb, ab = np.linalg.norm(x_b, axis=1), angle_of(q_b)
        records.append(MarginalRecord(
            t=float(t),
            ks_models_translation=_ks(np.linalg.norm(x_a, axis=1), nb),
            ks_models_angle=_ks(angle_of(q_a), ab),
            ks_interpolant_translation=_ks(np.linalg.norm(x_i, axis=1), nb),
            ks_interpolant_angle=_ks(angle_of(q_i), ab),
        ))
    return MarginalReport(records, sample_count)


# ---------------------------------------------------------------- transport cost


@dataclass(frozen=True)
class CostEstimate:
    mean: float
    se: float


@dataclass
class TransportReport:
    cost: str
    before: dict[str, CostEstimate]
    after: dict[str, CostEstimate]
    n_before: int
    n_after: int
    extra: dict = field(default_factory=dict)

    def margin(self, component: str) -> float:
        """``after - before`` in units of the combined standard error."""
        b, a = self.before[component], self.after[component]
        se = np.hypot(b.se, a.se)
        return (a.mean - b.mean) / se if se > 0 else (0.0 if a.mean == b.mean else np.sign(a.mean - b.mean) * np.inf)

    def not_worse(self, k: float = 2.0, components=("translation", "rotation")) -> bool:
        return all(self.margin(c) <= k for c in components)

    def strictly_better(self, k: float = 2.0, components=("translation", "rotation")) -> bool:
        return all(self.margin(c) < -k for c in components)

    def rows(self) -> list[list]:
        out = []
        for comp in self.before:
            b, a = self.before[comp], self.after[comp]
            out.append([self.cost, comp, repr(b.mean), repr(b.se), repr(a.mean), repr(a.se), self.n_before, self.n_after])
        return out

    def to_dict(self) -> dict:
        return {
            "cost": self.cost,
            "n_before": self.n_before,
            "n_after": self.n_after,
            "before": {k: asdict(v) for k, v in self.before.items()},
            "after": {k: asdict(v) for k, v in self.after.items()},
            **self.extra,
        }


TRANSPORT_HEADER = ["cost", "component", "before_mean", "before_se", "after_mean", "after_se", "n_before", "n_after"]


def _apply_cost(d: np.ndarray, cost: str) -> np.ndarray:
    if cost == "sq_norm":
        return d * d
    if cost == "norm":
        return d
    raise ValueError(f"cost must be one of {COSTS}, got {cost!r}")


def transport_costs(x0, q0, x1, q1, cost: str) -> dict[str, np.ndarray]:
    """Per-pair costs ``c(x1 - x0)`` and ``c(log(q0^-1 ⊗ q1))``.

    The rotation argument is the half-angle log, i.e. half the rotation vector.
    """
    dx = np.linalg.norm(np.asarray(x1) - np.asarray(x0), axis=-1)
    dq = np.linalg.norm(angular_velocity(q0, q1), axis=-1) / 2
    trans, rot = _apply_cost(dx, cost), _apply_cost(dq, cost)
    return {"translation": trans, "rotation": rot, "total": trans + rot}


def _estimate(values: np.ndarray) -> CostEstimate:
    n = len(values)
    se = float(np.std(values, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return CostEstimate(float(np.mean(values)), se)


def verify_cost_reduction(pairs_before: Sequence[CouplingPair], pairs_after: Sequence[CouplingPair],
                          cost: str) -> TransportReport:
    if not pairs_before or not pairs_after:
        raise ValueError("both pair lists must be nonempty")
    before = transport_costs(*stack_pairs(pairs_before), cost)
    after = transport_costs(*stack_pairs(pairs_after), cost)
    return TransportReport(
        cost=cost,
        before={k: _estimate(v) for k, v in before.items()},
        after={k: _estimate(v) for k, v in after.items()},
        n_before=len(pairs_before),
        n_after=len(pairs_after),
    )


def independent_pairs(x0, q0, x1, q1, rng: np.random.Generator) -> list[CouplingPair]:
    """Pair noise with a random permutation of the targets."""
    perm = rng.permutation(len(x1))
    return make_pairs(x0, q0, np.asarray(x1)[perm], np.asarray(q1)[perm])


def model_pairs(model: ModelParams, x0, q0, solver: SolverConfig) -> list[CouplingPair]:
    x1, q1 = integrate_batch(as_endpoint_model(model), x0, q0, solver)
    return make_pairs(x0, q0, x1, q1)


def verify_scheduler_cost(gamma: float, pairs: Sequence[CouplingPair], model: ModelParams, cost: str = "sq_norm",
                          steps: int = 200) -> TransportReport:
    """Cost of ``pairs`` against the coupling ``model`` induces from the same noise under scheduled inference.

    ``pairs`` should be the coupling ``model`` was trained on (in law).
    """
    x0, q0, _, _ = stack_pairs(pairs)
    after = model_pairs(model, x0, q0, SolverConfig(steps=steps, gamma=gamma, scheduler_enabled=True))
    report = verify_cost_reduction(pairs, after, cost)
    report.extra["gamma"] = gamma
    return report


# ---------------------------------------------------------------- aggregate verification


@dataclass(frozen=True)
class VerifyConfig:
    samples: int = 1000
    pair_count: int = 4000
    time_grid: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    steps: int = 200
    gamma: float = 10.0
    limit_gamma: float = 0.01
    ks_threshold: float = 0.1
    se_factor: float = 2.0


def one_step_error(model: ModelParams, x0, q0, metric: Callable) -> float:
    """Mean of translation + rotation error after a single Euler step."""
    x1, q1 = integrate_batch(as_endpoint_model(model), x0, q0, SolverConfig(steps=1, scheduler_enabled=False))
    dx, dq = metric(x1, q1)
    return float(np.mean(dx + dq))


def run_verification(before: ModelParams, after: ModelParams, sample_targets: Callable, rng: np.random.Generator,
                     cfg: VerifyConfig = VerifyConfig(), metric: Callable | None = None,
                     igso: IgsoConfig = IgsoConfig()) -> dict:
    """Every check on a trained/rectified model pair; returns a JSON-ready verdict document.

    ``sample_targets(n, rng)`` draws ``(x1, q1)`` from the data distribution;
    ``metric(x, q)`` (optional) scores samples for the one-step comparison.
    """
    solver = SolverConfig(steps=cfg.steps, scheduler_enabled=False)
    checks: dict[str, dict] = {}

    marg = verify_marginal_preservation(before, after, cfg.samples, cfg.time_grid, rng, solver=solver, igso=igso)
    t_end = marg.at(1.0)
    checks["marginals"] = {
        "pass": bool(marg.worst_interpolant() < cfg.ks_threshold
                     and max(t_end.ks_models_translation, t_end.ks_models_angle) < cfg.ks_threshold),
        "threshold": cfg.ks_threshold,
        "records": [asdict(r) for r in marg.records],
    }

    x0, q0 = sample_noise(cfg.pair_count, rng, igso)
    pairs_q = model_pairs(before, x0, q0, solver)
    pairs_r = model_pairs(after, x0, q0, solver)
    x1, q1 = sample_targets(cfg.pair_count, rng)
    pairs_ind = independent_pairs(x0, q0, x1, q1, rng)
    for cost in COSTS:
        rep = verify_cost_reduction(pairs_q, pairs_r, cost)
        checks[f"cost_{cost}"] = {"pass": rep.not_worse(cfg.se_factor), **rep.to_dict()}
        sched = verify_scheduler_cost(cfg.gamma, pairs_ind, before, cost, cfg.steps)
        checks[f"scheduler_cost_{cost}"] = {"pass": sched.not_worse(cfg.se_factor), **sched.to_dict()}
    limit = verify_scheduler_cost(cfg.limit_gamma, pairs_ind, before, "sq_norm", cfg.steps)
    checks["scheduler_limit"] = {"pass": True, "report_only": True, **limit.to_dict()}

    probe = probe_small_angle_nan()
    zero = [r for r in probe if r.phi == 0.0][0]
    checks["nan_probe"] = {
        "pass": bool(all(r.exp_finite for r in probe) and not zero.additive_finite),
        "rows": [asdict(r) for r in probe],
    }

    if metric is not None:
        xs, qs = sample_noise(cfg.samples, rng, igso)
        e_before, e_after = one_step_error(before, xs, qs, metric), one_step_error(after, xs, qs, metric)
        checks["one_step"] = {"pass": bool(e_after < e_before), "before": e_before, "after": e_after}

    return {"pass": all(c["pass"] for c in checks.values()), "checks": checks}


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
