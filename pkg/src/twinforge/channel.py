"""Air-to-ground channel model and UAV kinematics.

Distances are metres, powers are watts, rates are in units of the configured
bandwidth (bits/s for bandwidth in Hz, bits/s/Hz when bandwidth is 1).
All rate functions accept scalars or numpy arrays of distances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Position",
    "ChannelParams",
    "MovementConfig",
    "distance",
    "snr",
    "rate_real",
    "rate_virtual",
    "move",
]


@dataclass(frozen=True)
class Position:
    """A point in 3-D space (metres). Ground users have z=0, UAVs fly at fixed z."""

    x: float
    y: float
    z: float = 0.0


@dataclass(frozen=True)
class ChannelParams:
    """Link-budget constants for the free-space path-loss channel.

    Attributes:
        bandwidth_b: channel bandwidth. With 1.0 the rates come out in
            bits/s/Hz, with 1e6 in bits/s over a 1 MHz channel.
        pathloss_const_g0: reference channel gain at ref_distance_l0.
        ref_distance_l0: reference distance for g0 (m).
        pathloss_exp_theta: path-loss exponent (>= 1).
        tx_power_p: transmit power (W).
        noise_power_sigma2: receiver noise power (W).
    """

    bandwidth_b: float = 1.0
    pathloss_const_g0: float = 1e-4
    ref_distance_l0: float = 1.0
    pathloss_exp_theta: float = 2.0
    tx_power_p: float = 0.1
    noise_power_sigma2: float = 1e-13

    def __post_init__(self):
        for name in (
            "bandwidth_b",
            "pathloss_const_g0",
            "ref_distance_l0",
            "tx_power_p",
            "noise_power_sigma2",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.pathloss_exp_theta < 1:
            raise ValueError(
                f"pathloss_exp_theta must be >= 1, got {self.pathloss_exp_theta}"
            )


@dataclass(frozen=True)
class MovementConfig:
    """Per-slot UAV motion: constant speed, four cardinal headings, hard walls."""

    speed_v: float = 8.0
    slot_dt: float = 1.0
    bound_w: float = 100.0
    bound_h: float = 100.0

    def __post_init__(self):
        if self.speed_v <= 0:
            raise ValueError(f"speed_v must be > 0, got {self.speed_v}")
        if self.slot_dt <= 0:
            raise ValueError(f"slot_dt must be > 0, got {self.slot_dt}")
        if self.bound_w <= 0 or self.bound_h <= 0:
            raise ValueError(
                f"bounds must be > 0, got ({self.bound_w}, {self.bound_h})"
            )


def distance(a: Position, b: Position) -> float:
    """Euclidean distance between two positions (m)."""
    return math.sqrt((a.x - b.x) ** 2 + (a.y - b.y) ** 2 + (a.z - b.z) ** 2)


def snr(params: ChannelParams, dist):
    """Receive SNR over a link of length ``dist``.

    snr = g0 * (L0 / dist)^theta * p / sigma^2.  ``dist`` may be a positive
    scalar or an array of positive distances.
    """
    dist = np.asarray(dist, dtype=np.float64)
    if np.any(dist <= 0):
        raise ValueError("link distance must be > 0")
    ratio = params.ref_distance_l0 / dist
    out = (
        params.pathloss_const_g0
        * ratio**params.pathloss_exp_theta
        * params.tx_power_p
        / params.noise_power_sigma2
    )
    return float(out) if out.ndim == 0 else out


def rate_real(params: ChannelParams, dist):
    """Shannon rate of a physical (noiseless-measurement) link: B*log2(1+snr)."""
    out = params.bandwidth_b * np.log2(1.0 + snr(params, dist))
    return float(out) if np.ndim(out) == 0 else out


def rate_virtual(params: ChannelParams, dist, delta: float, rng: np.random.Generator):
    """Rate reported by a virtual twin of the link: the real rate plus zero-mean
    Gaussian measurement noise of variance ``delta``, floored at zero.

    ``delta`` is a variance, so the additive noise has std sqrt(delta).
    With delta=0 the result equals :func:`rate_real` bit for bit.
    """
    if delta < 0:
        raise ValueError(f"noise variance delta must be >= 0, got {delta}")
    real = rate_real(params, dist)
    noise = rng.normal(0.0, math.sqrt(delta), size=np.shape(dist))
    out = np.maximum(real + noise, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def move(pos: Position, heading: float, cfg: MovementConfig) -> Position:
    """Advance one slot at constant speed along ``heading`` (radians,
    measured from +x), clamping x/y to the rectangle [0, W] x [0, H].
    Altitude is unchanged."""
    step = cfg.speed_v * cfg.slot_dt
    x = min(max(pos.x + step * math.cos(heading), 0.0), cfg.bound_w)
    y = min(max(pos.y + step * math.sin(heading), 0.0), cfg.bound_h)
    return Position(x, y, pos.z)
