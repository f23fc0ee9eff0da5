"""Choosing how real the twin fleet needs to be.

A small network maps the cost coefficients (alpha, beta, zeta, eta) to a
twin noise level delta and a physical-vehicle count k. It is trained by
gradient ascent on estimated utility: the rate term comes from an
empirical performance surface (trained-and-evaluated DQN runs on a
(delta, k) grid, bilinearly interpolated, differentiated by central
finite differences), the cost terms are analytic.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import dqn_trainer as dqn
from . import neural as nn
from .fleet import DeploymentPlan, TwinEconomics, construction_cost, utility
from .mdp_env import EnvConfig
from .neural import Network, NumericError

__all__ = [
    "PerformanceSurface",
    "TunerOutput",
    "TUNER_INPUT_SCALES",
    "TUNER_HIDDEN_DIMS",
    "build_surface",
    "save_surface",
    "load_surface",
    "interpolate_rate",
    "surface_gradient",
    "normalize_econ",
    "map_raw_outputs",
    "tuner_forward",
    "objective_gradient",
    "tuner_update",
    "train_tuner",
    "select_plan",
    "estimate_plan_utility",
    "best_grid_plan",
]

log = logging.getLogger(__name__)

# reference scales that bring typical economics inputs to O(1)
TUNER_INPUT_SCALES = {"alpha": 10.0, "beta": 2.0, "zeta": 5.0, "eta": 2.0}

TUNER_HIDDEN_DIMS = (32, 32)


@dataclass
class PerformanceSurface:
    """Mean evaluated sum rate on a rectilinear (delta, k) grid.

    mean_rate[i, j] is the seed-averaged all-physical evaluation of a policy
    trained with twin noise deltas[i] and ks[j] physical UAVs. Cells whose
    training failed hold nan and count 0 seeds.
    """

    deltas: np.ndarray
    ks: np.ndarray
    mean_rate: np.ndarray = field(repr=False)
    std_err: np.ndarray = field(repr=False)
    seeds: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.deltas = np.asarray(self.deltas, dtype=np.float64)
        self.ks = np.asarray(self.ks, dtype=np.float64)
        if self.deltas.ndim != 1 or self.ks.ndim != 1 or not len(self.deltas) or not len(self.ks):
            raise ValueError("deltas and ks must be non-empty 1-D grids")
        if np.any(np.diff(self.deltas) <= 0) or np.any(np.diff(self.ks) <= 0):
            raise ValueError("grid axes must be strictly increasing")
        if np.any(self.deltas < 0):
            raise ValueError("deltas must be >= 0")
        shape = (len(self.deltas), len(self.ks))
        if self.mean_rate.shape != shape or self.std_err.shape != shape or self.seeds.shape != shape:
            raise ValueError(f"cell arrays must have shape {shape}")

    @property
    def hull(self) -> tuple[float, float, float, float]:
        """(delta_min, delta_max, k_min, k_max)."""
        return (
            float(self.deltas[0]),
            float(self.deltas[-1]),
            float(self.ks[0]),
            float(self.ks[-1]),
        )


@dataclass(frozen=True)
class TunerOutput:
    """A fidelity choice: twin noise delta, relaxed count and fielded count."""

    delta: float
    k_continuous: float
    k_quantized: int

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")
        if abs(self.k_quantized - self.k_continuous) > 0.5 + 1e-12:
            raise ValueError(
                f"k_quantized {self.k_quantized} not the half-up rounding of "
                f"{self.k_continuous}"
            )


def _cell_class(plan_delta: float, k: int, m: int):
    """Training-equivalence key: zero twin noise or an all-physical split both
    reproduce the noiseless run exactly, so such cells share one training."""
    if k == m or plan_delta == 0.0:
        return "physical"
    return (plan_delta, k)


def _train_cell(env_cfg: EnvConfig, train_cfg: dqn.TrainConfig, delta: float,
                k: int, seed: int) -> float:
    cfg = replace(env_cfg, plan=DeploymentPlan(env_cfg.m_uavs, k, delta))
    return dqn.train(cfg, replace(train_cfg, seed=seed)).final_eval


def build_surface(
    env_cfg: EnvConfig,
    train_cfg: dqn.TrainConfig,
    deltas,
    ks,
    seeds_per_cell: int,
    workers: int = 1,
) -> PerformanceSurface:
    """Train and evaluate one DQN per (delta, k, seed) and aggregate per cell.

    Every cell uses the same seed list (train_cfg.seed + 0 .. + n-1), which
    pairs the comparisons across cells and lets physically equivalent cells
    (k = M, or delta = 0) share a single training. Cells whose training dies
    numerically are marked invalid rather than failing the build.
    """
    if seeds_per_cell < 1:
        raise ValueError(f"seeds_per_cell must be >= 1, got {seeds_per_cell}")
    deltas = np.asarray(sorted(set(float(d) for d in deltas)))
    ks_int = sorted(set(int(k) for k in ks))
    m = env_cfg.m_uavs
    if any(not 0 <= k <= m for k in ks_int):
        raise ValueError(f"ks must lie in [0, {m}], got {ks_int}")
    if np.any(deltas < 0):
        raise ValueError("deltas must be >= 0")

    seeds = [train_cfg.seed + j for j in range(seeds_per_cell)]
    classes = {}
    for d in deltas:
        for k in ks_int:
            classes.setdefault(_cell_class(d, k, m), (d, k))
    tasks = [(key, d, k, s) for key, (d, k) in sorted(classes.items(), key=repr)
             for s in seeds]

    results: dict = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {
                key_seed: pool.submit(_train_cell, env_cfg, train_cfg, d, k, s)
                for (key, d, k, s) in tasks
                for key_seed in [(key, s)]
            }
            for key_seed, fut in futures.items():
                try:
                    results[key_seed] = fut.result()
                except NumericError:
                    results[key_seed] = math.nan
    else:
        for key, d, k, s in tasks:
            try:
                results[(key, s)] = _train_cell(env_cfg, train_cfg, d, k, s)
            except NumericError:
                results[(key, s)] = math.nan

    shape = (len(deltas), len(ks_int))
    mean_rate = np.full(shape, np.nan)
    std_err = np.zeros(shape)
    counts = np.zeros(shape, dtype=np.int64)
    for i, d in enumerate(deltas):
        for j, k in enumerate(ks_int):
            key = _cell_class(d, k, m)
            vals = [results[(key, s)] for s in seeds]
            vals = [v for v in vals if math.isfinite(v)]
            if not vals:
                log.warning("surface cell (delta=%g, k=%d) invalid", d, k)
                continue
            counts[i, j] = len(vals)
            mean_rate[i, j] = float(np.mean(vals))
            if len(vals) > 1:
                std_err[i, j] = float(np.std(vals, ddof=1) / math.sqrt(len(vals)))
    return PerformanceSurface(deltas, np.array(ks_int, dtype=np.float64),
                              mean_rate, std_err, counts)


def save_surface(surf: PerformanceSurface, path):
    with open(path, "w", newline="") as f:
        out = csv.writer(f, lineterminator="\n")
        out.writerow(["delta", "k", "mean_rate", "std_err", "seeds"])
        for i, d in enumerate(surf.deltas):
            for j, k in enumerate(surf.ks):
                mean = surf.mean_rate[i, j]
                out.writerow([
                    repr(float(d)), repr(float(k)),
                    "" if math.isnan(mean) else repr(float(mean)),
                    repr(float(surf.std_err[i, j])), int(surf.seeds[i, j]),
                ])


def load_surface(path) -> PerformanceSurface:
    rows = []
    with open(path, newline="") as f:
        for rec in csv.DictReader(f):
            rows.append((
                float(rec["delta"]), float(rec["k"]),
                float(rec["mean_rate"]) if rec["mean_rate"] else math.nan,
                float(rec["std_err"]), int(rec["seeds"]),
            ))
    deltas = sorted(set(r[0] for r in rows))
    ks = sorted(set(r[1] for r in rows))
    shape = (len(deltas), len(ks))
    mean_rate = np.full(shape, np.nan)
    std_err = np.zeros(shape)
    counts = np.zeros(shape, dtype=np.int64)
    for d, k, mean, se, n in rows:
        i, j = deltas.index(d), ks.index(k)
        mean_rate[i, j], std_err[i, j], counts[i, j] = mean, se, n
    return PerformanceSurface(np.array(deltas), np.array(ks), mean_rate, std_err, counts)


def _bracket(axis: np.ndarray, x: float) -> tuple[int, float]:
    """Cell index i and fraction t such that x = axis[i] + t*(axis[i+1]-axis[i])."""
    if len(axis) == 1:
        return 0, 0.0
    i = int(np.searchsorted(axis, x, side="right")) - 1
    i = min(max(i, 0), len(axis) - 2)
    return i, (x - axis[i]) / (axis[i + 1] - axis[i])


def interpolate_rate(surf: PerformanceSurface, delta: float, k: float) -> float:
    """Bilinear interpolation of the cell means. Queries outside the grid
    hull, or touching an invalid cell, are rejected."""
    d0, d1, k0, k1 = surf.hull
    if not (d0 <= delta <= d1 and k0 <= k <= k1):
        raise ValueError(
            f"query (delta={delta}, k={k}) outside surface hull {surf.hull}"
        )
    i, td = _bracket(surf.deltas, delta)
    j, tk = _bracket(surf.ks, k)
    i2 = i + 1 if len(surf.deltas) > 1 else i
    j2 = j + 1 if len(surf.ks) > 1 else j
    corners = surf.mean_rate[[i, i, i2, i2], [j, j2, j, j2]]
    if not np.all(np.isfinite(corners)):
        raise ValueError(
            f"query (delta={delta}, k={k}) touches an invalid surface cell"
        )
    top = corners[0] * (1 - tk) + corners[1] * tk
    bot = corners[2] * (1 - tk) + corners[3] * tk
    return float(top * (1 - td) + bot * td)


def surface_gradient(surf: PerformanceSurface, delta: float, k: float) -> tuple[float, float]:
    """(dR/ddelta, dR/dk) of the interpolated surface by central finite
    differences, falling back to one-sided stencils at the hull boundary.
    Degenerate axes (a single grid line) have zero derivative."""
    d0, d1, k0, k1 = surf.hull
    if not (d0 <= delta <= d1 and k0 <= k <= k1):
        raise ValueError(
            f"gradient query (delta={delta}, k={k}) outside surface hull {surf.hull}"
        )

    def axis_deriv(axis, lo, hi, x, f):
        if len(axis) == 1:
            return 0.0
        h = 1e-3 * float(np.min(np.diff(axis)))
        a, b = max(lo, x - h), min(hi, x + h)
        return (f(b) - f(a)) / (b - a)

    gd = axis_deriv(surf.deltas, d0, d1, delta,
                    lambda d: interpolate_rate(surf, d, k))
    gk = axis_deriv(surf.ks, k0, k1, k,
                    lambda kk: interpolate_rate(surf, delta, kk))
    return gd, gk


def normalize_econ(econ: TwinEconomics) -> np.ndarray:
    """Tuner input features: (alpha, beta, zeta, eta) over their reference scales."""
    s = TUNER_INPUT_SCALES
    return np.array([
        econ.alpha / s["alpha"], econ.beta / s["beta"],
        econ.zeta / s["zeta"], econ.eta / s["eta"],
    ])


def _sigmoid(x: float) -> float:
    return 0.5 * (math.tanh(0.5 * x) + 1.0)


def map_raw_outputs(raw: np.ndarray, m_uavs: int) -> TunerOutput:
    """Constrain the two raw head outputs: delta = ln(1 + e^x) >= 0,
    k = M * logistic(y) in [0, M], fielded count rounded half-up."""
    x, y = float(raw[0]), float(raw[1])
    if not (math.isfinite(x) and math.isfinite(y)):
        raise NumericError(f"non-finite tuner head outputs ({x}, {y})")
    delta = float(np.logaddexp(0.0, x))  # softplus, overflow-safe
    k_cont = m_uavs * _sigmoid(y)
    k_quant = min(int(math.floor(k_cont + 0.5)), m_uavs)
    return TunerOutput(delta=delta, k_continuous=k_cont, k_quantized=k_quant)


def tuner_forward(g: Network, econ: TwinEconomics, m_uavs: int) -> TunerOutput:
    """Run the tuner network on an economics vector."""
    return map_raw_outputs(nn.forward(g, normalize_econ(econ)), m_uavs)


def objective_gradient(
    econ: TwinEconomics,
    surf: PerformanceSurface,
    delta: float,
    k: float,
) -> tuple[float, float, bool]:
    """Gradient of estimated utility w.r.t. (delta, k).

    Utility = eta * R(delta, k) - alpha * e^(beta*delta) - zeta * k, so the
    gradient is (eta*dR/ddelta - alpha*beta*e^(beta*delta), eta*dR/dk - zeta).
    Rate gradients are only defined on the surface hull: out-of-hull points
    are projected onto it (flagged in the third return slot); the analytic
    cost derivative is taken at the true delta.
    """
    d0, d1, k0, k1 = surf.hull
    dp = min(max(delta, d0), d1)
    kp = min(max(k, k0), k1)
    projected = (dp != delta) or (kp != k)
    if projected:
        log.debug("objective_gradient: query (%.4g, %.4g) projected to (%.4g, %.4g)",
                  delta, k, dp, kp)
    dr_dd, dr_dk = surface_gradient(surf, dp, kp)
    gd = econ.eta * dr_dd - econ.alpha * econ.beta * math.exp(econ.beta * delta)
    gk = econ.eta * dr_dk - econ.zeta
    return gd, gk, projected


def tuner_update(
    g: Network,
    econ: TwinEconomics,
    surf: PerformanceSurface,
    lr_g: float,
    m_uavs: int,
) -> tuple[TunerOutput, tuple[float, float], bool]:
    """One ascent step on estimated utility.

    The (delta, k) gradient is chained through the output maps
    (d(softplus)/dx = logistic(x), d(M*logistic)/dy = M*s*(1-s)) into the
    network parameters. Returns the pre-step output, the (delta, k)
    gradient, and whether the query needed projection onto the hull.
    """
    x_in = normalize_econ(econ)
    raw, trace = nn.forward_trace(g, x_in)
    out = map_raw_outputs(raw, m_uavs)
    gd, gk, projected = objective_gradient(econ, surf, out.delta, out.k_continuous)
    sx = _sigmoid(float(raw[0]))
    sy = _sigmoid(float(raw[1]))
    out_grad = np.array([gd * sx, gk * m_uavs * sy * (1.0 - sy)])
    grads = nn.backward_from_trace(g, trace, out_grad)
    nn.param_step(g, grads, lr_g, direction="ascend")
    return out, (gd, gk), projected


def train_tuner(
    g: Network,
    econ: TwinEconomics,
    surf: PerformanceSurface,
    m_uavs: int,
    lr_g: float = 1e-2,
    steps: int = 500,
) -> TunerOutput:
    """Run ``steps`` ascent updates in place and return the final output."""
    for _ in range(steps):
        tuner_update(g, econ, surf, lr_g, m_uavs)
    return tuner_forward(g, econ, m_uavs)


def select_plan(g: Network, econ: TwinEconomics, m_uavs: int) -> DeploymentPlan:
    """Deployment plan realising the tuner's current choice."""
    out = tuner_forward(g, econ, m_uavs)
    return DeploymentPlan(m_uavs, out.k_quantized, out.delta)


def estimate_plan_utility(
    econ: TwinEconomics, surf: PerformanceSurface, plan: DeploymentPlan
) -> float:
    """Utility of a plan with the rate term read off the surface (delta
    clamped to the hull for the lookup)."""
    d0, d1, k0, k1 = surf.hull
    rate = interpolate_rate(
        surf,
        min(max(plan.twin_noise_delta, d0), d1),
        min(max(float(plan.physical_k), k0), k1),
    )
    return utility(econ, plan, rate)


def best_grid_plan(
    surf: PerformanceSurface, econ: TwinEconomics, m_uavs: int
) -> tuple[DeploymentPlan, float]:
    """Brute-force argmax of utility over the surface's grid nodes."""
    best = None
    for i, d in enumerate(surf.deltas):
        for j, k in enumerate(surf.ks):
            if not math.isfinite(surf.mean_rate[i, j]):
                continue
            plan = DeploymentPlan(m_uavs, int(k), float(d))
            u = utility(econ, plan, float(surf.mean_rate[i, j]))
            if best is None or u > best[1]:
                best = (plan, u)
    if best is None:
        raise ValueError("surface has no valid cells")
    return best
