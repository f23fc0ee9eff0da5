"""Episodic MDP for a fleet of UAVs serving ground users.

State: static user positions plus current UAV positions. Action: one joint
index in [0, 4^M) decoding to a cardinal heading per UAV. Reward: sum over
users of the best per-UAV rate, where virtual twins report noisy rates.
Episodes run a fixed number of slots from the hangar.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import channel as ch
from .channel import ChannelParams, MovementConfig, Position
from .fleet import DeploymentPlan

__all__ = [
    "WorldState",
    "JointAction",
    "EnvConfig",
    "sample_users",
    "reset",
    "encode_state",
    "decode_action",
    "sum_rate",
    "step",
    "evaluate_physical",
]

HEADING_STEP = math.pi / 2.0  # action digits 0..3 -> 0/90/180/270 degrees


@dataclass(eq=False)
class WorldState:
    """Positions as float64 arrays: users (N, 3) with z=0, uavs (M, 3)."""

    users: np.ndarray = field(repr=False)
    uavs: np.ndarray = field(repr=False)
    slot_t: int = 0


@dataclass(frozen=True)
class JointAction:
    """Joint move of the whole fleet, encoded base-4 (UAV 0 = least
    significant digit, digit d = heading d*90 degrees)."""

    index: int


@dataclass(frozen=True)
class EnvConfig:
    n_users: int
    m_uavs: int
    horizon_t: int
    channel: ChannelParams
    movement: MovementConfig
    plan: DeploymentPlan
    reward_noise_mode: str = "per_link"
    uav_altitude: float = 5.0

    def __post_init__(self):
        if self.n_users < 1:
            raise ValueError(f"n_users must be >= 1, got {self.n_users}")
        if self.m_uavs < 1:
            raise ValueError(f"m_uavs must be >= 1, got {self.m_uavs}")
        if self.horizon_t < 1:
            raise ValueError(f"horizon_t must be >= 1, got {self.horizon_t}")
        if self.uav_altitude <= 0:
            raise ValueError(f"uav_altitude must be > 0, got {self.uav_altitude}")
        if self.reward_noise_mode not in ("per_link", "aggregate"):
            raise ValueError(
                "reward_noise_mode must be 'per_link' or 'aggregate', "
                f"got {self.reward_noise_mode!r}"
            )
        if self.plan.total_uavs_m != self.m_uavs:
            raise ValueError(
                f"plan covers {self.plan.total_uavs_m} UAVs but env has {self.m_uavs}"
            )

    @property
    def n_actions(self) -> int:
        return 4**self.m_uavs

    @property
    def state_dim(self) -> int:
        return 2 * self.n_users + 2 * self.m_uavs


def sample_users(cfg: EnvConfig, rng: np.random.Generator) -> np.ndarray:
    """Draw N user positions uniformly in the service rectangle (ground level)."""
    unit = rng.uniform(0.0, 1.0, size=(cfg.n_users, 2))
    users = np.zeros((cfg.n_users, 3))
    users[:, 0] = unit[:, 0] * cfg.movement.bound_w
    users[:, 1] = unit[:, 1] * cfg.movement.bound_h
    return users


def reset(cfg: EnvConfig, rng: np.random.Generator, users: np.ndarray | None = None) -> WorldState:
    """Fresh episode: every UAV at the hangar corner (0, 0, altitude), slot 0.

    User positions are drawn from ``rng`` unless an existing layout is
    passed in; training reuses one layout for all episodes of an experiment
    by sampling it once from the experiment seed.
    """
    if users is None:
        users = sample_users(cfg, rng)
    uavs = np.zeros((cfg.m_uavs, 3))
    uavs[:, 2] = cfg.uav_altitude
    return WorldState(users=users, uavs=uavs, slot_t=0)


def encode_state(w: WorldState, cfg: EnvConfig) -> np.ndarray:
    """Feature vector of length 2N + 2M: user (x, y) pairs then UAV (x, y)
    pairs, each normalised by the service-area bounds into [0, 1]."""
    scale = np.array([cfg.movement.bound_w, cfg.movement.bound_h])
    return np.concatenate(
        [(w.users[:, :2] / scale).ravel(), (w.uavs[:, :2] / scale).ravel()]
    )


def decode_action(action: JointAction | int, m_uavs: int) -> list[float]:
    """Per-UAV headings (radians) from the joint index's base-4 digits."""
    idx = action.index if isinstance(action, JointAction) else int(action)
    if not 0 <= idx < 4**m_uavs:
        raise ValueError(f"action index {idx} outside [0, {4 ** m_uavs})")
    headings = []
    for _ in range(m_uavs):
        headings.append((idx % 4) * HEADING_STEP)
        idx //= 4
    return headings


def sum_rate(
    w: WorldState,
    cfg: EnvConfig,
    rng: np.random.Generator,
    noise_counts_physical: bool = False,
) -> float:
    """Sum over users of the best rate offered by any UAV.

    Physical UAVs contribute exact rates; virtual twins contribute noisy
    ones (variance delta per link) in ``per_link`` mode. ``aggregate`` mode
    instead perturbs the noiseless total with a single Gaussian of variance
    (M - K) * delta, or K * delta with ``noise_counts_physical``.
    """
    diff = w.users[:, None, :] - w.uavs[None, :, :]
    dists = np.sqrt((diff * diff).sum(axis=2))
    rates = ch.rate_real(cfg.channel, dists)
    k = cfg.plan.physical_k
    if cfg.reward_noise_mode == "per_link":
        virt = rates[:, k:] + rng.normal(
            0.0, math.sqrt(cfg.plan.twin_noise_delta), size=rates[:, k:].shape
        )
        rates = np.concatenate([rates[:, :k], np.maximum(virt, 0.0)], axis=1)
        return float(rates.max(axis=1).sum())
    total = float(rates.max(axis=1).sum())
    virtual = k if noise_counts_physical else cfg.plan.total_uavs_m - k
    return total + float(rng.normal(0.0, math.sqrt(virtual * cfg.plan.twin_noise_delta)))


def step(
    w: WorldState,
    action: JointAction | int,
    cfg: EnvConfig,
    rng: np.random.Generator,
    noise_counts_physical: bool = False,
) -> tuple[WorldState, float, bool]:
    """Advance one slot: move every UAV along its decoded heading, then pay
    the sum rate of the new state as reward. Raises if the episode is over."""
    if w.slot_t >= cfg.horizon_t:
        raise RuntimeError(f"episode already done at slot {w.slot_t}")
    headings = decode_action(action, cfg.m_uavs)
    uavs = np.empty_like(w.uavs)
    for i, heading in enumerate(headings):
        p = ch.move(Position(*w.uavs[i]), heading, cfg.movement)
        uavs[i] = (p.x, p.y, p.z)
    w2 = WorldState(users=w.users, uavs=uavs, slot_t=w.slot_t + 1)
    reward = sum_rate(w2, cfg, rng, noise_counts_physical=noise_counts_physical)
    return w2, reward, w2.slot_t == cfg.horizon_t


def evaluate_physical(
    cfg: EnvConfig,
    policy,
    episodes: int,
    rng: np.random.Generator,
    users: np.ndarray | None = None,
) -> float:
    """Mean over episodes of the time-averaged sum rate under ``policy``,
    measured with every UAV physical (no twin noise, whatever the plan).

    ``policy`` maps a feature vector to a JointAction deterministically.
    """
    if episodes < 1:
        raise ValueError(f"episodes must be >= 1, got {episodes}")
    phys = replace(
        cfg,
        plan=DeploymentPlan(cfg.m_uavs, cfg.m_uavs, 0.0),
        reward_noise_mode="per_link",
    )
    if users is None:
        users = sample_users(phys, rng)
    total = 0.0
    for _ in range(episodes):
        w = reset(phys, rng, users=users)
        done = False
        ep = 0.0
        while not done:
            w, r, done = step(w, policy(encode_state(w, phys)), phys, rng)
            ep += r
        total += ep / phys.horizon_t
    return total / episodes
