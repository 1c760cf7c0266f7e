"""Composite step reward: geodesic progress, barrier-condition shaping,
smoothness, terminal events, and soft speed/altitude limits.

The navigation term rewards clipped progress along the precomputed
geodesic potential; the safety term penalizes violation of the barrier
condition ``hdot + gamma * h >= 0`` built on the ESDF, clipped below at
delta_min so a bad state cannot blow up the value function. All terms are
pure functions over immutable fields and are safe to call from parallel
episode workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import AttitudeCommand
from .fields import ScalarField, interpolate_many


@dataclass(frozen=True)
class RewardWeights:
    """Coefficients alpha_1..alpha_7 of the weighted reward sum."""

    navigation: float = 1.0
    safety: float = 0.5
    smooth: float = 0.1
    collision: float = 10.0
    success: float = 10.0
    speed: float = 0.05
    height: float = 0.05

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.navigation,
                self.safety,
                self.smooth,
                self.collision,
                self.success,
                self.speed,
                self.height,
            ]
        )


@dataclass(frozen=True)
class NavRewardParams:
    lam: float = 1.0  # scaling factor
    clip_c: float = 0.5  # progress clamp bound (field units, m)

    def __post_init__(self):
        if self.lam <= 0 or self.clip_c <= 0:
            raise ValueError("lam and clip_c must be positive")


@dataclass(frozen=True)
class SafetyRewardParams:
    gamma_cbf: float = 1.0  # 1/s
    d_safe: float = 0.4  # m
    delta_min: float = -2.0  # lower clip on the penalty

    def __post_init__(self):
        if self.gamma_cbf <= 0 or self.d_safe < 0 or self.delta_min >= 0:
            raise ValueError("need gamma_cbf > 0, d_safe >= 0, delta_min < 0")


@dataclass(frozen=True)
class SmoothRewardParams:
    w_mag: float = 0.5
    w_delta: float = 0.5
    f_max: float = 2.5 * 9.81
    tilt_max: float = 0.6


@dataclass(frozen=True)
class TerminalLimits:
    v_target: float = 3.0  # m/s, soft ceiling on speed
    z_low: float = 0.3  # altitude band (m)
    z_high: float = 2.7
    success_radius: float = 5.0  # m, from the training setup


@dataclass(frozen=True)
class StepEvents:
    collision: bool = False


@dataclass(frozen=True)
class RewardBreakdown:
    navigation: float
    safety: float
    smooth: float
    collision: float
    success: float
    speed: float
    height: float
    total: float

    def terms(self) -> np.ndarray:
        return np.array(
            [
                self.navigation,
                self.safety,
                self.smooth,
                self.collision,
                self.success,
                self.speed,
                self.height,
            ]
        )


def nav_reward(phi: ScalarField, p_prev, p_cur, params: NavRewardParams) -> float:
    """Clipped potential progress: lam * clamp(V_prev - V_cur, -C, C)."""
    if phi.kind != "geodesic":
        raise ValueError("nav_reward requires a geodesic-kind field")
    values, _, _ = interpolate_many(phi, np.stack([np.asarray(p_prev, dtype=float),
                                                   np.asarray(p_cur, dtype=float)]))
    delta = float(np.clip(values[0] - values[1], -params.clip_c, params.clip_c))
    return params.lam * delta


def nav_reward_batch(
    fields_by_scene: dict,
    env_to_scene,
    p_prev: np.ndarray,
    p_cur: np.ndarray,
    params: NavRewardParams,
) -> np.ndarray:
    """Per-env navigation rewards, each env scored against its own scene's
    potential field. Output order matches env order."""
    scene_ids = np.asarray(env_to_scene)
    p_prev = np.atleast_2d(np.asarray(p_prev, dtype=float))
    p_cur = np.atleast_2d(np.asarray(p_cur, dtype=float))
    if not (len(scene_ids) == len(p_prev) == len(p_cur)):
        raise ValueError("env_to_scene, p_prev, p_cur must have equal length")

    out = np.empty(len(scene_ids))
    for scene in np.unique(scene_ids):
        key = scene.item() if hasattr(scene, "item") else scene
        if key not in fields_by_scene:
            raise KeyError(f"no potential field for scene {key!r}")
        phi = fields_by_scene[key]
        if phi.kind != "geodesic":
            raise ValueError(f"field for scene {key!r} is not geodesic-kind")
        mask = scene_ids == scene
        vp, _, _ = interpolate_many(phi, p_prev[mask])
        vc, _, _ = interpolate_many(phi, p_cur[mask])
        out[mask] = params.lam * np.clip(vp - vc, -params.clip_c, params.clip_c)
    return out


def safety_reward(esdf: ScalarField, p, v, params: SafetyRewardParams) -> float:
    """Barrier-condition penalty: clip(hdot + gamma * h, delta_min, 0).

    h = d(p) - d_safe with d the interpolated ESDF; hdot = grad d . v.
    Zero whenever the continuous-time barrier condition already holds.
    """
    if esdf.kind != "esdf":
        raise ValueError("safety_reward requires an esdf-kind field")
    values, grads, _ = interpolate_many(esdf, np.asarray(p, dtype=float)[None, :])
    h = values[0] - params.d_safe
    hdot = float(grads[0] @ np.asarray(v, dtype=float))
    return float(np.clip(hdot + params.gamma_cbf * h, params.delta_min, 0.0))


def smooth_reward(
    a_t: AttitudeCommand, a_prev: AttitudeCommand, params: SmoothRewardParams
) -> float:
    """Penalty on command magnitude and command change, on normalized
    commands (thrust / f_max; roll, pitch / tilt_max; yaw / pi)."""
    scale = np.array([params.f_max, params.tilt_max, params.tilt_max, np.pi])
    at = a_t.as_array() / scale
    ap = a_prev.as_array() / scale
    mag = float(at @ at)
    delta = float((at - ap) @ (at - ap))
    return -(params.w_mag * mag + params.w_delta * delta)


def terminal_and_shaping(
    state, goal, events: StepEvents, limits: TerminalLimits
) -> tuple[float, float, float, float]:
    """Terminal signals and soft limits: (collision, success, speed, height).

    collision = -1 on a collision event; success = +1 inside the goal
    radius; speed penalizes only the excess above v_target; height
    penalizes quadratically outside the [z_low, z_high] band.
    """
    collision = -1.0 if events.collision else 0.0
    dist = float(np.linalg.norm(np.asarray(state.p, dtype=float) - np.asarray(goal, dtype=float)))
    success = 1.0 if dist <= limits.success_radius else 0.0
    speed_excess = max(0.0, float(np.linalg.norm(state.v)) - limits.v_target)
    speed = -(speed_excess**2)
    z = float(state.p[2])
    dz = max(0.0, limits.z_low - z, z - limits.z_high)
    height = -(dz**2)
    return collision, success, speed, height


def total_reward(
    navigation: float,
    safety: float,
    smooth: float,
    collision: float,
    success: float,
    speed: float,
    height: float,
    weights: RewardWeights,
) -> RewardBreakdown:
    """Combine the seven terms; total is exactly the weighted sum."""
    terms = np.array([navigation, safety, smooth, collision, success, speed, height])
    total = float(weights.as_array() @ terms)
    return RewardBreakdown(
        navigation=navigation,
        safety=safety,
        smooth=smooth,
        collision=collision,
        success=success,
        speed=speed,
        height=height,
        total=total,
    )
