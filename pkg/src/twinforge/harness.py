"""Experiment orchestration: configs, scheme runs, sweeps and reports.

Configs are flat ``key = value`` text under ``[section]`` headers; unknown
keys are rejected with line numbers so sweeps can't silently run with a
typo. Three deployment schemes are comparable: ``physical_only`` (all
vehicles real), ``fixed_dt`` (a hand-picked twin split), and ``tuned_dt``
(split chosen by the fidelity tuner against a performance surface).
Outputs are deterministic: identical (seed, config) reruns produce
byte-identical CSVs.
"""

from __future__ import annotations

import json
import logging
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from . import dqn_trainer as dqn
from . import neural as nn
from . import twin_tuner as tuner
from .channel import ChannelParams, MovementConfig
from .dqn_trainer import LogRow, TrainConfig, TrainResult
from .fleet import DeploymentPlan, TwinEconomics, construction_cost, deployment_cost
from .mdp_env import EnvConfig
from .neural import NumericError

__all__ = [
    "ConfigError",
    "SchemeSettings",
    "TunerSettings",
    "RunSettings",
    "ExperimentConfig",
    "UtilityRow",
    "SweepResult",
    "UTILITY_COLUMNS",
    "DELTA_SENTINEL",
    "parse_config",
    "config_from_text",
    "render_config",
    "effective_econ",
    "fit_tuner",
    "ensure_surface",
    "run_scheme",
    "sweep",
    "emit_report",
    "load_utility_csv",
    "load_convergence_csv",
]

log = logging.getLogger(__name__)

SCHEME_NAMES = ("physical_only", "fixed_dt", "tuned_dt")
SWEEP_PARAMS = ("none", "alpha", "beta", "cost_weight")
DELTA_SENTINEL = "n/a"

UTILITY_COLUMNS = (
    "scheme",
    "sweep_param",
    "sweep_value",
    "seed",
    "k",
    "delta",
    "mean_sum_rate",
    "construction_cost",
    "deployment_cost",
    "utility",
    "status",
)


class ConfigError(ValueError):
    """Malformed or inconsistent experiment config."""


# ---------------------------------------------------------------- config ---

def _parse_bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _parse_list(elem):
    def parse(s: str):
        s = s.strip()
        return tuple(elem(p.strip()) for p in s.split(",") if p.strip()) if s else ()
    return parse


def _choice(*options):
    def parse(s: str):
        if s not in options:
            raise ValueError(f"expected one of {options}, got {s!r}")
        return s
    return parse


# section -> key -> (default string, parser). "auto"/"" specials noted inline.
_SCHEMA = {
    "env": {
        "n_users": ("100", int),
        "m_uavs": ("4", int),
        "horizon_t": ("100", int),
        "reward_noise_mode": ("per_link", _choice("per_link", "aggregate")),
        "uav_altitude": ("5.0", float),
    },
    "channel": {
        "bandwidth_b": ("1.0", float),
        "pathloss_const_g0": ("1e-4", float),
        "ref_distance_l0": ("1.0", float),
        "pathloss_exp_theta": ("2.0", float),
        "tx_power_p": ("0.1", float),
        "noise_power_sigma2": ("1e-13", float),
    },
    "movement": {
        "speed_v": ("8.0", float),
        "slot_dt": ("1.0", float),
        "bound_w": ("100.0", float),
        "bound_h": ("100.0", float),
    },
    "train": {
        "episodes": ("2000", int),
        "gamma": ("0.9", float),
        "lr_q": ("1e-3", float),
        "batch": ("64", int),
        "buffer_capacity": ("10000", int),
        "eps_start": ("1.0", float),
        "eps_end": ("0.05", float),
        "eps_decay_fraction": ("0.5", float),
        "target_sync_every": ("100", int),
        "eval_every": ("20", int),
        "eval_episodes": ("5", int),
        "hidden_dims": ("256,256", _parse_list(int)),
        "reward_scale": ("auto", str),  # "auto" or a positive float
    },
    "econ": {
        "alpha": ("2.0", float),
        "beta": ("-1.0", float),
        "zeta": ("1.0", float),
        "eta": ("1.0", float),
    },
    "scheme": {
        "name": ("physical_only", _choice(*SCHEME_NAMES)),
        "fixed_k": ("0", int),
        "fixed_delta": ("0.9", float),
    },
    "tuner": {
        "deltas": ("0.0,0.4,0.8,1.2,1.6", _parse_list(float)),
        "ks": ("", _parse_list(int)),  # empty: 0..M
        "seeds_per_cell": ("3", int),
        "lr_g": ("0.01", float),
        "steps": ("500", int),
        "restarts": ("3", int),
        "hidden_dims": ("32,32", _parse_list(int)),
        "seed": ("7919", int),
    },
    "run": {
        "seeds": ("0,1,2,3,4", _parse_list(int)),
        "schemes": ("physical_only,fixed_dt,tuned_dt", _parse_list(str)),
        "sweep_param": ("none", _choice(*SWEEP_PARAMS)),
        "sweep_values": ("", _parse_list(float)),
        "noise_counts_physical": ("false", _parse_bool),
        "undiscounted_td": ("false", _parse_bool),
        "workers": ("1", int),
    },
}


@dataclass(frozen=True)
class SchemeSettings:
    name: str
    fixed_k: int
    fixed_delta: float


@dataclass(frozen=True)
class TunerSettings:
    deltas: tuple[float, ...]
    ks: tuple[int, ...]
    seeds_per_cell: int
    lr_g: float
    steps: int
    restarts: int
    hidden_dims: tuple[int, ...]
    seed: int


@dataclass(frozen=True)
class RunSettings:
    seeds: tuple[int, ...]
    schemes: tuple[str, ...]
    sweep_param: str
    sweep_values: tuple[float, ...]
    noise_counts_physical: bool
    undiscounted_td: bool
    workers: int


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvConfig  # carries an all-physical placeholder plan
    train: TrainConfig
    econ: TwinEconomics
    scheme: SchemeSettings
    tuner: TunerSettings
    run: RunSettings


def parse_config(path) -> ExperimentConfig:
    """Parse and validate a config file. Missing keys take their defaults;
    unknown sections/keys, bad values and violated constraints raise
    ConfigError with the offending line number."""
    with open(path) as f:
        return config_from_text(f.read(), source=str(path))


def config_from_text(text: str, source: str = "<config>") -> ExperimentConfig:
    raw: dict[tuple[str, str], str] = {}
    lines: dict[tuple[str, str], int] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if body.startswith("[") and body.endswith("]"):
            section = body[1:-1].strip()
            if section not in _SCHEMA:
                raise ConfigError(
                    f"{source}:{lineno}: unknown section [{section}]"
                )
            continue
        if "=" not in body:
            raise ConfigError(
                f"{source}:{lineno}: expected 'key = value', got {body!r}"
            )
        if section is None:
            raise ConfigError(
                f"{source}:{lineno}: key outside of any [section]"
            )
        key, value = (part.strip() for part in body.split("=", 1))
        if key not in _SCHEMA[section]:
            raise ConfigError(
                f"{source}:{lineno}: unknown key {key!r} in section [{section}]"
            )
        if (section, key) in raw:
            raise ConfigError(
                f"{source}:{lineno}: duplicate key {key!r} in section [{section}]"
            )
        raw[(section, key)] = value
        lines[(section, key)] = lineno

    def where(section: str, key: str) -> str:
        if (section, key) in lines:
            return f"{source}:{lines[(section, key)]}: "
        return f"{source}: "

    values: dict[tuple[str, str], object] = {}
    for section, keys in _SCHEMA.items():
        for key, (default, parse) in keys.items():
            text_value = raw.get((section, key), default)
            try:
                values[(section, key)] = parse(text_value)
            except ValueError as e:
                raise ConfigError(
                    f"{where(section, key)}bad value for [{section}] {key}: {e}"
                ) from e

    def v(section, key):
        return values[(section, key)]

    def build(section, key, ctor, *args, **kwargs):
        try:
            return ctor(*args, **kwargs)
        except ValueError as e:
            raise ConfigError(f"{where(section, key)}{e}") from e

    channel = build("channel", "bandwidth_b", ChannelParams,
                    bandwidth_b=v("channel", "bandwidth_b"),
                    pathloss_const_g0=v("channel", "pathloss_const_g0"),
                    ref_distance_l0=v("channel", "ref_distance_l0"),
                    pathloss_exp_theta=v("channel", "pathloss_exp_theta"),
                    tx_power_p=v("channel", "tx_power_p"),
                    noise_power_sigma2=v("channel", "noise_power_sigma2"))
    movement = build("movement", "speed_v", MovementConfig,
                     speed_v=v("movement", "speed_v"),
                     slot_dt=v("movement", "slot_dt"),
                     bound_w=v("movement", "bound_w"),
                     bound_h=v("movement", "bound_h"))
    m = v("env", "m_uavs")
    env_cfg = build("env", "n_users", EnvConfig,
                    n_users=v("env", "n_users"), m_uavs=m,
                    horizon_t=v("env", "horizon_t"),
                    channel=channel, movement=movement,
                    plan=DeploymentPlan(max(m, 1), max(m, 1), 0.0),
                    reward_noise_mode=v("env", "reward_noise_mode"),
                    uav_altitude=v("env", "uav_altitude"))

    scale_text = v("train", "reward_scale")
    if scale_text == "auto":
        reward_scale = None
    else:
        try:
            reward_scale = float(scale_text)
        except ValueError as e:
            raise ConfigError(
                f"{where('train', 'reward_scale')}bad value for [train] "
                f"reward_scale: expected 'auto' or a number, got {scale_text!r}"
            ) from e
    train_cfg = build("train", "episodes", TrainConfig,
                      episodes=v("train", "episodes"),
                      gamma=v("train", "gamma"), lr_q=v("train", "lr_q"),
                      batch=v("train", "batch"),
                      buffer_capacity=v("train", "buffer_capacity"),
                      eps_start=v("train", "eps_start"),
                      eps_end=v("train", "eps_end"),
                      eps_decay_fraction=v("train", "eps_decay_fraction"),
                      target_sync_every=v("train", "target_sync_every"),
                      eval_every=v("train", "eval_every"),
                      eval_episodes=v("train", "eval_episodes"),
                      hidden_dims=v("train", "hidden_dims"),
                      reward_scale=reward_scale)

    econ = build("econ", "beta", TwinEconomics,
                 alpha=v("econ", "alpha"), beta=v("econ", "beta"),
                 zeta=v("econ", "zeta"), eta=v("econ", "eta"))

    scheme = SchemeSettings(v("scheme", "name"), v("scheme", "fixed_k"),
                            v("scheme", "fixed_delta"))
    if not 0 <= scheme.fixed_k <= m:
        raise ConfigError(
            f"{where('scheme', 'fixed_k')}fixed_k must be in [0, {m}], "
            f"got {scheme.fixed_k}"
        )
    if scheme.fixed_delta < 0:
        raise ConfigError(
            f"{where('scheme', 'fixed_delta')}fixed_delta must be >= 0"
        )

    ks = v("tuner", "ks") or tuple(range(m + 1))
    if any(not 0 <= k <= m for k in ks):
        raise ConfigError(
            f"{where('tuner', 'ks')}tuner ks must lie in [0, {m}], got {ks}"
        )
    deltas = v("tuner", "deltas")
    if not deltas or any(d < 0 for d in deltas):
        raise ConfigError(
            f"{where('tuner', 'deltas')}tuner deltas must be non-empty and >= 0"
        )
    for sec, key, minimum in (("tuner", "seeds_per_cell", 1),
                              ("tuner", "steps", 1),
                              ("tuner", "restarts", 1),
                              ("run", "workers", 1)):
        if v(sec, key) < minimum:
            raise ConfigError(
                f"{where(sec, key)}[{sec}] {key} must be >= {minimum}"
            )
    if v("tuner", "lr_g") <= 0:
        raise ConfigError(f"{where('tuner', 'lr_g')}[tuner] lr_g must be > 0")
    tuner_cfg = TunerSettings(
        deltas=tuple(sorted(set(deltas))), ks=tuple(sorted(set(ks))),
        seeds_per_cell=v("tuner", "seeds_per_cell"), lr_g=v("tuner", "lr_g"),
        steps=v("tuner", "steps"), restarts=v("tuner", "restarts"),
        hidden_dims=v("tuner", "hidden_dims"), seed=v("tuner", "seed"))

    schemes = v("run", "schemes")
    for s in schemes:
        if s not in SCHEME_NAMES:
            raise ConfigError(
                f"{where('run', 'schemes')}unknown scheme {s!r}, "
                f"expected from {SCHEME_NAMES}"
            )
    if not schemes:
        raise ConfigError(f"{where('run', 'schemes')}[run] schemes is empty")
    seeds = v("run", "seeds")
    if not seeds:
        raise ConfigError(f"{where('run', 'seeds')}[run] seeds is empty")
    sweep_param = v("run", "sweep_param")
    sweep_values = v("run", "sweep_values")
    if sweep_param != "none":
        if not sweep_values:
            raise ConfigError(
                f"{where('run', 'sweep_values')}sweep_param={sweep_param} "
                "needs non-empty sweep_values"
            )
        if sweep_param == "beta" and any(b > 0 for b in sweep_values):
            raise ConfigError(
                f"{where('run', 'sweep_values')}beta sweep values must be <= 0"
            )
        if sweep_param in ("alpha", "cost_weight") and any(x < 0 for x in sweep_values):
            raise ConfigError(
                f"{where('run', 'sweep_values')}{sweep_param} sweep values "
                "must be >= 0"
            )
    run_cfg = RunSettings(seeds=seeds, schemes=schemes, sweep_param=sweep_param,
                          sweep_values=sweep_values,
                          noise_counts_physical=v("run", "noise_counts_physical"),
                          undiscounted_td=v("run", "undiscounted_td"),
                          workers=v("run", "workers"))

    return ExperimentConfig(env=env_cfg, train=train_cfg, econ=econ,
                            scheme=scheme, tuner=tuner_cfg, run=run_cfg)


def render_config(cfg: ExperimentConfig) -> str:
    """Canonical text form of a resolved config (parses back to itself)."""

    def fmt(x):
        if isinstance(x, bool):
            return "true" if x else "false"
        if isinstance(x, tuple):
            return ",".join(fmt(e) for e in x)
        if isinstance(x, float):
            return repr(x)
        return str(x)

    e, c, mv, t = cfg.env, cfg.env.channel, cfg.env.movement, cfg.train
    values = {
        "env": {
            "n_users": e.n_users, "m_uavs": e.m_uavs, "horizon_t": e.horizon_t,
            "reward_noise_mode": e.reward_noise_mode,
            "uav_altitude": e.uav_altitude,
        },
        "channel": {
            "bandwidth_b": c.bandwidth_b,
            "pathloss_const_g0": c.pathloss_const_g0,
            "ref_distance_l0": c.ref_distance_l0,
            "pathloss_exp_theta": c.pathloss_exp_theta,
            "tx_power_p": c.tx_power_p,
            "noise_power_sigma2": c.noise_power_sigma2,
        },
        "movement": {
            "speed_v": mv.speed_v, "slot_dt": mv.slot_dt,
            "bound_w": mv.bound_w, "bound_h": mv.bound_h,
        },
        "train": {
            "episodes": t.episodes, "gamma": t.gamma, "lr_q": t.lr_q,
            "batch": t.batch, "buffer_capacity": t.buffer_capacity,
            "eps_start": t.eps_start, "eps_end": t.eps_end,
            "eps_decay_fraction": t.eps_decay_fraction,
            "target_sync_every": t.target_sync_every,
            "eval_every": t.eval_every, "eval_episodes": t.eval_episodes,
            "hidden_dims": t.hidden_dims,
            "reward_scale": "auto" if t.reward_scale is None else t.reward_scale,
        },
        "econ": {
            "alpha": cfg.econ.alpha, "beta": cfg.econ.beta,
            "zeta": cfg.econ.zeta, "eta": cfg.econ.eta,
        },
        "scheme": {
            "name": cfg.scheme.name, "fixed_k": cfg.scheme.fixed_k,
            "fixed_delta": cfg.scheme.fixed_delta,
        },
        "tuner": {
            "deltas": cfg.tuner.deltas, "ks": cfg.tuner.ks,
            "seeds_per_cell": cfg.tuner.seeds_per_cell,
            "lr_g": cfg.tuner.lr_g, "steps": cfg.tuner.steps,
            "restarts": cfg.tuner.restarts,
            "hidden_dims": cfg.tuner.hidden_dims, "seed": cfg.tuner.seed,
        },
        "run": {
            "seeds": cfg.run.seeds, "schemes": cfg.run.schemes,
            "sweep_param": cfg.run.sweep_param,
            "sweep_values": cfg.run.sweep_values,
            "noise_counts_physical": cfg.run.noise_counts_physical,
            "undiscounted_td": cfg.run.undiscounted_td,
            "workers": cfg.run.workers,
        },
    }
    chunks = []
    for section, keys in values.items():
        chunks.append(f"[{section}]")
        chunks.extend(f"{k} = {fmt(val)}" for k, val in keys.items())
        chunks.append("")
    return "\n".join(chunks)


# ----------------------------------------------------------------- runs ---

@dataclass
class UtilityRow:
    scheme: str
    sweep_param: str
    sweep_value: float | None
    seed: int
    k: int
    delta: float | None  # None renders as the n/a sentinel (all-physical)
    mean_sum_rate: float
    construction_cost: float
    deployment_cost: float
    utility: float
    status: str


@dataclass
class SweepResult:
    rows: list[UtilityRow]
    convergence: list[LogRow]
    surface: tuner.PerformanceSurface | None = None
    trainings: dict = field(default_factory=dict, repr=False)
    by_cell: dict = field(default_factory=dict, repr=False)  # (value, scheme, seed) -> TrainResult
    plans: dict = field(default_factory=dict)
    wall_time_s: float = 0.0


def effective_econ(econ: TwinEconomics, sweep_param: str, value: float | None) -> TwinEconomics:
    """Economics for one sweep point. cost_weight scales the two cost
    coefficients together; alpha and beta replace the single coefficient."""
    if value is None or sweep_param == "none":
        return econ
    if sweep_param == "cost_weight":
        return replace(econ, alpha=econ.alpha * value, zeta=econ.zeta * value)
    if sweep_param == "alpha":
        return replace(econ, alpha=value)
    if sweep_param == "beta":
        return replace(econ, beta=value)
    raise ValueError(f"unknown sweep_param {sweep_param!r}")


def ensure_surface(cfg: ExperimentConfig, workers: int | None = None,
                   surface_path=None) -> tuner.PerformanceSurface:
    """Load a persisted performance surface, or train it from the config grid."""
    if surface_path is not None:
        return tuner.load_surface(surface_path)
    return tuner.build_surface(
        cfg.env, replace(cfg.train, seed=cfg.tuner.seed),
        cfg.tuner.deltas, cfg.tuner.ks, cfg.tuner.seeds_per_cell,
        workers=workers or cfg.run.workers,
    )


def fit_tuner(cfg: ExperimentConfig, econ: TwinEconomics,
              surf: tuner.PerformanceSurface) -> tuple[nn.Network, DeploymentPlan]:
    """Train the fidelity tuner for one economics point.

    Plain ascent from a handful of deterministic restarts; the candidate
    whose quantized plan scores the best surface-estimated utility wins
    (ties to the earliest restart). This keeps the selection out of flat
    sigmoid-saturation regions without touching the update rule itself.
    """
    m = cfg.env.m_uavs
    best = None
    for r in range(cfg.tuner.restarts):
        g = nn.init_network((4, *cfg.tuner.hidden_dims, 2),
                            seed=cfg.tuner.seed + r)
        try:
            tuner.train_tuner(g, econ, surf, m, lr_g=cfg.tuner.lr_g,
                              steps=cfg.tuner.steps)
            plan = tuner.select_plan(g, econ, m)
        except NumericError:
            log.warning("tuner restart %d diverged, skipping", r)
            continue
        score = tuner.estimate_plan_utility(econ, surf, plan)
        if best is None or score > best[0]:
            best = (score, g, plan)
    if best is None:
        raise NumericError("every tuner restart diverged")
    return best[1], best[2]


def _plan_for(cfg: ExperimentConfig, scheme: str,
              tuned_plan: DeploymentPlan | None) -> DeploymentPlan:
    m = cfg.env.m_uavs
    if scheme == "physical_only":
        return DeploymentPlan(m, m, 0.0)
    if scheme == "fixed_dt":
        return DeploymentPlan(m, cfg.scheme.fixed_k, cfg.scheme.fixed_delta)
    if scheme == "tuned_dt":
        if tuned_plan is None:
            raise ValueError("tuned_dt requires a fitted tuner plan")
        return tuned_plan
    raise ValueError(f"unknown scheme {scheme!r}")


def _train_key(plan: DeploymentPlan, seed: int):
    """Cache key for one training; plans that provably produce identical
    trajectories (all physical, or zero twin noise) collapse to one run."""
    if plan.physical_k == plan.total_uavs_m or plan.twin_noise_delta == 0.0:
        return ("physical", seed)
    return (plan.physical_k, plan.twin_noise_delta, seed)


def _run_training(env_cfg: EnvConfig, train_cfg: TrainConfig,
                  plan: DeploymentPlan, seed: int, scheme_id: str,
                  undiscounted: bool, noise_k: bool) -> TrainResult | None:
    cfg = replace(env_cfg, plan=plan)
    try:
        return dqn.train(cfg, replace(train_cfg, seed=seed),
                         scheme_id=scheme_id, undiscounted_td=undiscounted,
                         noise_counts_physical=noise_k)
    except NumericError:
        return None


def _scheme_id(scheme: str, plan: DeploymentPlan) -> str:
    if scheme == "physical_only":
        return scheme
    return f"{scheme}(k={plan.physical_k},d={plan.twin_noise_delta:.4g})"


_UNSET = object()


def run_scheme(cfg: ExperimentConfig, scheme: str, seed: int,
               sweep_value: float | None = None,
               surface: tuner.PerformanceSurface | None = None,
               _training=_UNSET,
               _plan: DeploymentPlan | None = None) -> tuple[UtilityRow, TrainResult | None]:
    """Run one (scheme, seed) cell and report its utility row.

    tuned_dt fits the tuner against ``surface`` (built on demand when not
    given) and trains at the selected plan; the other schemes train at their
    declared split. A training that dies numerically yields a ``failed`` row
    rather than an exception.
    """
    econ = effective_econ(cfg.econ, cfg.run.sweep_param, sweep_value)
    if _plan is not None:
        plan = _plan
    elif scheme == "tuned_dt":
        if surface is None:
            surface = ensure_surface(cfg)
        _, plan = fit_tuner(cfg, econ, surface)
    else:
        plan = _plan_for(cfg, scheme, None)

    result = _training if _training is not _UNSET else _run_training(
        cfg.env, cfg.train, plan, seed, _scheme_id(scheme, plan),
        cfg.run.undiscounted_td, cfg.run.noise_counts_physical)

    cc = construction_cost(econ, plan)
    dc = deployment_cost(econ, plan)
    if result is None or not math.isfinite(result.final_eval):
        rate, util, status = math.nan, math.nan, "failed"
    else:
        rate = result.final_eval
        util = econ.eta * rate - cc - dc
        status = "ok"
    row = UtilityRow(
        scheme=scheme, sweep_param=cfg.run.sweep_param, sweep_value=sweep_value,
        seed=seed, k=plan.physical_k,
        delta=None if scheme == "physical_only" else plan.twin_noise_delta,
        mean_sum_rate=rate, construction_cost=cc, deployment_cost=dc,
        utility=util, status=status,
    )
    return row, result


def sweep(cfg: ExperimentConfig, workers: int | None = None,
          surface_path=None) -> SweepResult:
    """Cartesian product of sweep values x schemes x seeds.

    Work is deduplicated before running: distinct (plan, seed) trainings are
    computed once (physical-equivalent plans collapse), then every cell is
    assembled from the shared results in a fixed order, so the output is
    byte-stable and independent of the worker count.
    """
    t0 = time.perf_counter()
    workers = workers if workers is not None else cfg.run.workers
    values = list(cfg.run.sweep_values) if cfg.run.sweep_param != "none" else [None]
    surface = None
    plans: dict[float | None, DeploymentPlan] = {}
    if "tuned_dt" in cfg.run.schemes:
        surface = ensure_surface(cfg, workers=workers, surface_path=surface_path)
        for value in values:
            econ = effective_econ(cfg.econ, cfg.run.sweep_param, value)
            _, plans[value] = fit_tuner(cfg, econ, surface)

    cells = [(value, scheme, seed) for value in values
             for scheme in cfg.run.schemes for seed in cfg.run.seeds]
    tasks: dict = {}
    for value, scheme, seed in cells:
        plan = _plan_for(cfg, scheme, plans.get(value))
        key = _train_key(plan, seed)
        tasks.setdefault(key, (plan, seed, _scheme_id(scheme, plan)))

    ordered = sorted(tasks.items(), key=lambda item: repr(item[0]))
    if workers > 1 and len(ordered) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = {key: pool.submit(_run_training, cfg.env, cfg.train, plan,
                                     seed, sid, cfg.run.undiscounted_td,
                                     cfg.run.noise_counts_physical)
                    for key, (plan, seed, sid) in ordered}
            results = {key: fut.result() for key, fut in futs.items()}
    else:
        results = {key: _run_training(cfg.env, cfg.train, plan, seed, sid,
                                      cfg.run.undiscounted_td, cfg.run.noise_counts_physical)
                   for key, (plan, seed, sid) in ordered}

    rows: list[UtilityRow] = []
    convergence: list[LogRow] = []
    by_cell: dict = {}
    logged = set()
    for value, scheme, seed in cells:
        plan = _plan_for(cfg, scheme, plans.get(value))
        result = results[_train_key(plan, seed)]
        by_cell[(value, scheme, seed)] = result
        row, _ = run_scheme(cfg, scheme, seed, sweep_value=value,
                            surface=surface, _training=result, _plan=plan)
        rows.append(row)
        sid = _scheme_id(scheme, plan)
        if result is not None and (sid, seed) not in logged:
            logged.add((sid, seed))
            convergence.extend(result.log)
    return SweepResult(rows=rows, convergence=convergence, surface=surface,
                       trainings=results, by_cell=by_cell, plans=plans,
                       wall_time_s=time.perf_counter() - t0)


# --------------------------------------------------------------- reports ---

def _fmt_cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float) and not math.isfinite(x):
        return ""
    return repr(float(x))


def write_utility_csv(rows: list[UtilityRow], path):
    import csv

    with open(path, "w", newline="") as f:
        out = csv.writer(f, lineterminator="\n")
        out.writerow(UTILITY_COLUMNS)
        for r in rows:
            out.writerow([
                r.scheme, r.sweep_param, _fmt_cell(r.sweep_value), r.seed, r.k,
                DELTA_SENTINEL if r.delta is None else repr(float(r.delta)),
                _fmt_cell(r.mean_sum_rate), _fmt_cell(r.construction_cost),
                _fmt_cell(r.deployment_cost), _fmt_cell(r.utility), r.status,
            ])


def load_utility_csv(path) -> list[UtilityRow]:
    import csv

    rows = []
    with open(path, newline="") as f:
        for rec in csv.DictReader(f):
            rows.append(UtilityRow(
                scheme=rec["scheme"], sweep_param=rec["sweep_param"],
                sweep_value=float(rec["sweep_value"]) if rec["sweep_value"] else None,
                seed=int(rec["seed"]), k=int(rec["k"]),
                delta=None if rec["delta"] == DELTA_SENTINEL else float(rec["delta"]),
                mean_sum_rate=float(rec["mean_sum_rate"]) if rec["mean_sum_rate"] else math.nan,
                construction_cost=float(rec["construction_cost"]) if rec["construction_cost"] else math.nan,
                deployment_cost=float(rec["deployment_cost"]) if rec["deployment_cost"] else math.nan,
                utility=float(rec["utility"]) if rec["utility"] else math.nan,
                status=rec["status"],
            ))
    return rows


def load_convergence_csv(path) -> list[LogRow]:
    import csv

    rows = []
    with open(path, newline="") as f:
        for rec in csv.DictReader(f):
            rows.append(LogRow(
                episode=int(rec["episode"]),
                train_return=float(rec["train_return"]),
                eval_sum_rate=float(rec["eval_sum_rate"]) if rec["eval_sum_rate"] else None,
                moving_avg_200=float(rec["moving_avg_200"]),
                epsilon=float(rec["epsilon"]),
                seed=int(rec["seed"]), scheme_id=rec["scheme_id"],
            ))
    return rows


def _audit_rows(cfg: ExperimentConfig, rows: list[UtilityRow]):
    """Re-derive every ok row's utility from its own stored fields; any
    mismatch means the emit path corrupted something, so fail loudly."""
    for r in rows:
        if r.status != "ok":
            continue
        expected = cfg.econ.eta * r.mean_sum_rate - r.construction_cost - r.deployment_cost
        if expected != r.utility:
            raise RuntimeError(
                f"utility audit failed for {r.scheme} seed {r.seed} "
                f"value {r.sweep_value}: {r.utility} != {expected}"
            )


def _chart_utility(rows: list[UtilityRow], sweep_param: str, path):
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "twinforge"
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4.5))
    schemes = sorted({r.scheme for r in rows})
    for scheme in schemes:
        pts: dict[float, list[float]] = {}
        for r in rows:
            if r.scheme == scheme and r.status == "ok" and r.sweep_value is not None:
                pts.setdefault(r.sweep_value, []).append(r.utility)
        if not pts:
            continue
        xs = sorted(pts)
        ax.plot(xs, [float(np.mean(pts[x])) for x in xs], marker="o", label=scheme)
    ax.set_xlabel(sweep_param)
    ax.set_ylabel("utility (seed mean)")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _chart_convergence(rows: list[LogRow], path):
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "twinforge"
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4.5))
    by_scheme: dict[str, dict[int, list[float]]] = {}
    for r in rows:
        by_scheme.setdefault(r.scheme_id, {}).setdefault(r.episode, []).append(
            r.moving_avg_200)
    for sid in sorted(by_scheme):
        eps = sorted(by_scheme[sid])
        ax.plot(eps, [float(np.mean(by_scheme[sid][e])) for e in eps], label=sid)
    ax.set_xlabel("episode")
    ax.set_ylabel("sum rate, moving average (seed mean)")
    ax.grid(True, alpha=0.3)
    if by_scheme:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit_report(cfg: ExperimentConfig, result: SweepResult, out_dir):
    """Write utility.csv, convergence.csv, charts, the resolved config echo
    and a manifest into ``out_dir``. Audits utilities before writing."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    _audit_rows(cfg, result.rows)
    paths = {}

    paths["utility"] = os.path.join(out_dir, "utility.csv")
    write_utility_csv(result.rows, paths["utility"])
    paths["convergence"] = os.path.join(out_dir, "convergence.csv")
    dqn.write_convergence_csv(result.convergence, paths["convergence"])
    if result.surface is not None:
        paths["surface"] = os.path.join(out_dir, "surface.csv")
        tuner.save_surface(result.surface, paths["surface"])
    if cfg.run.sweep_param != "none" and result.rows:
        paths["utility_chart"] = os.path.join(out_dir, "utility_vs_sweep.svg")
        _chart_utility(result.rows, cfg.run.sweep_param, paths["utility_chart"])
    if result.convergence:
        paths["convergence_chart"] = os.path.join(out_dir, "convergence.svg")
        _chart_convergence(result.convergence, paths["convergence_chart"])

    paths["config"] = os.path.join(out_dir, "resolved.cfg")
    with open(paths["config"], "w") as f:
        f.write(render_config(cfg))

    n_failed = sum(r.status != "ok" for r in result.rows)
    manifest = {
        "tool": f"twinforge {__version__}",
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seeds": list(cfg.run.seeds),
        "schemes": list(cfg.run.schemes),
        "sweep_param": cfg.run.sweep_param,
        "sweep_values": list(cfg.run.sweep_values),
        "rows": len(result.rows),
        "rows_failed": n_failed,
        "wall_time_s": round(result.wall_time_s, 3),
        "outputs": sorted(os.path.basename(p) for p in paths.values()),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return paths
