"""Fleet composition and the economics of running virtual twins.

A fleet of M UAVs is split into K physical vehicles and M-K virtual twins.
Twins are cheap to deploy but their reported rates carry measurement noise
(variance delta); building a lower-noise twin costs more.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "TwinEconomics",
    "DeploymentPlan",
    "construction_cost",
    "deployment_cost",
    "utility",
    "split_fleet",
]


@dataclass(frozen=True)
class TwinEconomics:
    """Cost/benefit coefficients for a deployment.

    Attributes:
        alpha: twin construction cost scale (>= 0).
        beta: noise-cost exponent (<= 0); more negative means low-noise
            twins get cheap faster.
        zeta: per-physical-UAV deployment cost (>= 0).
        eta: weight converting mean sum rate into utility units (> 0).
    """

    alpha: float
    beta: float
    zeta: float
    eta: float = 1.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.beta > 0:
            raise ValueError(f"beta must be <= 0, got {self.beta}")
        if self.zeta < 0:
            raise ValueError(f"zeta must be >= 0, got {self.zeta}")
        if self.eta <= 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")


@dataclass(frozen=True)
class DeploymentPlan:
    """How the M-vehicle fleet is realised: K physical, M-K twins at noise delta."""

    total_uavs_m: int
    physical_k: int
    twin_noise_delta: float

    def __post_init__(self):
        if self.total_uavs_m < 1:
            raise ValueError(f"total_uavs_m must be >= 1, got {self.total_uavs_m}")
        if not 0 <= self.physical_k <= self.total_uavs_m:
            raise ValueError(
                f"physical_k must be in [0, {self.total_uavs_m}], got {self.physical_k}"
            )
        if self.twin_noise_delta < 0:
            raise ValueError(
                f"twin_noise_delta must be >= 0, got {self.twin_noise_delta}"
            )

    @property
    def virtual_count(self) -> int:
        return self.total_uavs_m - self.physical_k


def construction_cost(econ: TwinEconomics, plan: DeploymentPlan) -> float:
    """Cost of building the twin environment: alpha * exp(beta * delta).

    Lower twin noise costs more (beta <= 0). An all-physical plan (K = M)
    needs no twin environment at all and costs nothing.
    """
    if plan.physical_k == plan.total_uavs_m:
        return 0.0
    return econ.alpha * math.exp(econ.beta * plan.twin_noise_delta)


def deployment_cost(econ: TwinEconomics, plan: DeploymentPlan) -> float:
    """Cost of fielding the physical vehicles: zeta * K."""
    return econ.zeta * plan.physical_k


def utility(econ: TwinEconomics, plan: DeploymentPlan, mean_sum_rate: float) -> float:
    """Net benefit of a deployment: eta * rate - construction - deployment."""
    return (
        econ.eta * mean_sum_rate
        - construction_cost(econ, plan)
        - deployment_cost(econ, plan)
    )


def split_fleet(plan: DeploymentPlan) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """UAV indices by realisation: the first K are physical, the rest virtual."""
    idx = tuple(range(plan.total_uavs_m))
    return idx[: plan.physical_k], idx[plan.physical_k :]
