"""Deep Q-learning for the joint UAV control problem.

Uniform replay, hard target-network syncs, linear epsilon decay, one mean
semi-gradient step per environment slot. Rewards are normalised for the
updates but logged and evaluated in raw rate units. Every run is fully
reproducible from (seed, config): exploration, twin noise, replay sampling
and init each get their own tagged generator.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import mdp_env as env
from . import neural as nn
from .mdp_env import EnvConfig, JointAction
from .neural import Network, NumericError

__all__ = [
    "Transition",
    "ReplayBuffer",
    "TrainConfig",
    "LogRow",
    "TrainResult",
    "select_action",
    "epsilon_at",
    "td_update",
    "sync_target",
    "greedy_policy",
    "auto_reward_scale",
    "train",
    "write_convergence_csv",
    "CONVERGENCE_COLUMNS",
]

# tags for the per-purpose random streams derived from the experiment seed
_USERS, _EXPLORE, _NOISE, _SAMPLE = 11, 13, 17, 19

MOVING_AVG_WINDOW = 200

CONVERGENCE_COLUMNS = (
    "episode",
    "train_return",
    "eval_sum_rate",
    "moving_avg_200",
    "epsilon",
    "seed",
    "scheme_id",
)


@dataclass
class Transition:
    s: np.ndarray
    a: JointAction
    r: float
    s_next: np.ndarray
    done: bool


class ReplayBuffer:
    """Fixed-capacity ring buffer, oldest transition evicted first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._data: list[Transition] = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._data)

    def push(self, t: Transition):
        if len(self._data) < self.capacity:
            self._data.append(t)
        else:
            self._data[self._next] = t
            self._next = (self._next + 1) % self.capacity

    def sample(self, batch: int, rng: np.random.Generator) -> list[Transition]:
        """Uniform sample with replacement."""
        if not self._data:
            raise RuntimeError("cannot sample from an empty replay buffer")
        if batch < 1:
            raise ValueError(f"batch must be >= 1, got {batch}")
        idx = rng.integers(0, len(self._data), size=batch)
        return [self._data[i] for i in idx]


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 2000
    gamma: float = 0.9
    lr_q: float = 1e-3
    batch: int = 64
    buffer_capacity: int = 10_000
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.5
    target_sync_every: int = 100
    eval_every: int = 20
    eval_episodes: int = 5
    hidden_dims: tuple[int, ...] = (256, 256)
    reward_scale: float | None = None  # None: normalise by N * B * peak link rate
    seed: int = 0

    def __post_init__(self):
        if self.episodes < 0:
            raise ValueError(f"episodes must be >= 0, got {self.episodes}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.lr_q <= 0:
            raise ValueError(f"lr_q must be > 0, got {self.lr_q}")
        if self.batch < 1 or self.buffer_capacity < 1:
            raise ValueError("batch and buffer_capacity must be >= 1")
        if not 0.0 <= self.eps_end <= self.eps_start <= 1.0:
            raise ValueError(
                f"need 0 <= eps_end <= eps_start <= 1, got "
                f"({self.eps_start}, {self.eps_end})"
            )
        if not 0.0 < self.eps_decay_fraction <= 1.0:
            raise ValueError(
                f"eps_decay_fraction must be in (0, 1], got {self.eps_decay_fraction}"
            )
        if self.target_sync_every < 1:
            raise ValueError(
                f"target_sync_every must be >= 1, got {self.target_sync_every}"
            )
        if self.eval_every < 0 or self.eval_episodes < 1:
            raise ValueError("eval_every must be >= 0 and eval_episodes >= 1")
        if not self.hidden_dims or any(d < 1 for d in self.hidden_dims):
            raise ValueError(f"hidden_dims must be positive, got {self.hidden_dims}")
        if self.reward_scale is not None and self.reward_scale <= 0:
            raise ValueError(f"reward_scale must be > 0, got {self.reward_scale}")


@dataclass
class LogRow:
    episode: int
    train_return: float
    eval_sum_rate: float | None
    moving_avg_200: float
    epsilon: float
    seed: int
    scheme_id: str


@dataclass
class TrainResult:
    policy: Network
    log: list[LogRow]
    final_eval: float
    numeric_errors: int = 0


def epsilon_at(cfg: TrainConfig, episode_idx: int) -> float:
    """Exploration rate at a 0-based episode index: linear from eps_start to
    eps_end over the first eps_decay_fraction of the run, then flat."""
    decay_eps = max(1, round(cfg.eps_decay_fraction * cfg.episodes))
    frac = min(1.0, max(0.0, episode_idx / decay_eps))
    return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac


def select_action(
    q: Network, feature_vec: np.ndarray, epsilon: float, rng: np.random.Generator
) -> JointAction:
    """Epsilon-greedy over the Q head; greedy ties break to the lowest index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    n_actions = q.layer_dims[-1]
    if rng.random() < epsilon:
        return JointAction(int(rng.integers(n_actions)))
    return JointAction(int(np.argmax(nn.forward(q, feature_vec))))


def td_update(
    q: Network,
    q_target: Network,
    batch: list[Transition],
    gamma: float,
    lr_q: float,
    undiscounted_td: bool = False,
) -> float:
    """One mean semi-gradient step on the squared TD error of a batch.

    Targets are r + gamma * max_a' Q_target(s', a'), with no bootstrap on
    terminal transitions. ``undiscounted_td`` drops gamma from the target,
    turning it into a plain one-step lookahead.
    Returns the batch mean squared TD error. Raises NumericError (applying
    nothing) if any target or gradient is non-finite.
    """
    if not batch:
        raise ValueError("td_update needs a non-empty batch")
    b = len(batch)
    s = np.stack([t.s for t in batch])
    s_next = np.stack([t.s_next for t in batch])
    acts = np.array([t.a.index for t in batch])
    r = np.array([t.r for t in batch])
    done = np.array([t.done for t in batch])

    bootstrap = nn.forward(q_target, s_next).max(axis=1)
    disc = 1.0 if undiscounted_td else gamma
    targets = r + np.where(done, 0.0, disc * bootstrap)
    if not np.all(np.isfinite(targets)):
        raise NumericError("non-finite TD target, update skipped")

    out, trace = nn.forward_trace(q, s)
    td = targets - out[np.arange(b), acts]
    if not np.all(np.isfinite(td)):
        raise NumericError("non-finite TD error, update skipped")
    # dL/d(output) for L = 0.5 * mean(td^2): only the acted entries are hit
    out_grad = np.zeros_like(out)
    out_grad[np.arange(b), acts] = -td / b
    grads = nn.backward_from_trace(q, trace, out_grad)
    nn.param_step(q, grads, lr_q, direction="descend")
    return float(np.mean(td * td))


def sync_target(q: Network, q_target: Network):
    """Hard-copy the online parameters into the target network."""
    if q.layer_dims != q_target.layer_dims:
        raise ValueError(
            f"topology mismatch: {q.layer_dims} vs {q_target.layer_dims}"
        )
    for src, dst in zip(q.weights, q_target.weights):
        np.copyto(dst, src)
    for src, dst in zip(q.biases, q_target.biases):
        np.copyto(dst, src)


def greedy_policy(q: Network):
    """Deterministic argmax policy over the Q head."""

    def policy(feature_vec: np.ndarray) -> JointAction:
        return JointAction(int(np.argmax(nn.forward(q, feature_vec))))

    return policy


def auto_reward_scale(cfg: EnvConfig) -> float:
    """Default reward normaliser: N * B * (rate at the closest possible
    approach, a UAV directly above a user). Scaled training rewards then sit
    in (0, 1], keeping Q magnitudes friendly to the default learning rate."""
    from .channel import rate_real

    return cfg.n_users * rate_real(cfg.channel, cfg.uav_altitude)


def experiment_users(env_cfg: EnvConfig, seed: int) -> np.ndarray:
    """The fixed user layout of an experiment seed (shared by training,
    evaluation and any later snapshot scoring)."""
    return env.sample_users(env_cfg, np.random.default_rng((seed, _USERS)))


def train(
    env_cfg: EnvConfig,
    cfg: TrainConfig,
    scheme_id: str = "",
    undiscounted_td: bool = False,
    noise_counts_physical: bool = False,
) -> TrainResult:
    """Run the full DQN loop and return the trained policy plus the log.

    Per episode: epsilon-greedy rollout from the hangar, one td_update per
    slot once the buffer holds a batch, target sync every
    ``target_sync_every`` environment steps. Every ``eval_every`` episodes
    the greedy policy is scored by an all-physical evaluation. Numeric
    failures skip the offending update and are counted, not fatal.
    """
    rng_users = np.random.default_rng((cfg.seed, _USERS))
    rng_explore = np.random.default_rng((cfg.seed, _EXPLORE))
    rng_noise = np.random.default_rng((cfg.seed, _NOISE))
    rng_sample = np.random.default_rng((cfg.seed, _SAMPLE))

    dims = (env_cfg.state_dim, *cfg.hidden_dims, env_cfg.n_actions)
    q = nn.init_network(dims, seed=cfg.seed)
    q_target = nn.clone_network(q)
    users = env.sample_users(env_cfg, rng_users)  # == experiment_users(env_cfg, seed)
    scale = cfg.reward_scale if cfg.reward_scale is not None else auto_reward_scale(env_cfg)

    buffer = ReplayBuffer(cfg.buffer_capacity)
    log: list[LogRow] = []
    window: deque[float] = deque(maxlen=MOVING_AVG_WINDOW)
    numeric_errors = 0
    step_count = 0

    for ep in range(cfg.episodes):
        eps = epsilon_at(cfg, ep)
        w = env.reset(env_cfg, rng_noise, users=users)
        s = env.encode_state(w, env_cfg)
        ep_return = 0.0
        done = False
        while not done:
            a = select_action(q, s, eps, rng_explore)
            w, r, done = env.step(w, a, env_cfg, rng_noise, noise_counts_physical=noise_counts_physical)
            s_next = env.encode_state(w, env_cfg)
            buffer.push(Transition(s, a, r / scale, s_next, done))
            if len(buffer) >= cfg.batch:
                try:
                    td_update(q, q_target, buffer.sample(cfg.batch, rng_sample),
                              cfg.gamma, cfg.lr_q, undiscounted_td=undiscounted_td)
                except NumericError:
                    numeric_errors += 1
            step_count += 1
            if step_count % cfg.target_sync_every == 0:
                sync_target(q, q_target)
            s = s_next
            ep_return += r

        train_return = ep_return / env_cfg.horizon_t
        window.append(train_return)
        eval_rate = None
        if cfg.eval_every > 0 and (ep + 1) % cfg.eval_every == 0:
            eval_rate = env.evaluate_physical(
                env_cfg, greedy_policy(q), cfg.eval_episodes,
                np.random.default_rng(0), users=users,
            )
        log.append(LogRow(
            episode=ep + 1,
            train_return=train_return,
            eval_sum_rate=eval_rate,
            moving_avg_200=float(np.mean(window)),
            epsilon=eps,
            seed=cfg.seed,
            scheme_id=scheme_id,
        ))

    final_eval = env.evaluate_physical(
        env_cfg, greedy_policy(q), cfg.eval_episodes,
        np.random.default_rng(0), users=users,
    )
    return TrainResult(policy=q, log=log, final_eval=final_eval,
                       numeric_errors=numeric_errors)


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def write_convergence_csv(rows: list[LogRow], path):
    """Stable text form of a convergence log: shortest round-trip float
    representations, LF line endings, blank eval column on non-eval rows."""
    with open(path, "w", newline="") as f:
        out = csv.writer(f, lineterminator="\n")
        out.writerow(CONVERGENCE_COLUMNS)
        for r in rows:
            out.writerow([
                r.episode, _fmt(r.train_return), _fmt(r.eval_sum_rate),
                _fmt(r.moving_avg_200), _fmt(r.epsilon), r.seed, r.scheme_id,
            ])
