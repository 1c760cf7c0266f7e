"""Privileged baseline: descend the geodesic potential at a target speed.

Exercises the fields end to end without any learning: desired velocity is
the negated normalized potential gradient scaled to v_target, tracked by a
proportional acceleration law and converted to a thrust-attitude command
with yaw facing the motion direction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dynamics import AttitudeCommand, DynamicsParams, QuadState, accel_to_command
from ..fields import ScalarField, interpolate


@dataclass(frozen=True)
class BaselineGains:
    k_v: float = 2.5  # velocity-tracking gain (1/s)
    a_max: float = 8.0  # acceleration clip (m/s^2)
    clearance_gain: float = 0.0  # optional slowdown near obstacles; 0 = off
    grad_eps: float = 1e-6  # below this gradient norm the goal is reached


def geodesic_baseline(
    state: QuadState,
    phi: ScalarField,
    esdf: ScalarField,
    v_target: float,
    gains: BaselineGains,
    dyn: DynamicsParams,
) -> AttitudeCommand:
    """Steer along -grad(potential); hover once the goal cell is reached.

    The interpolated potential is a cone near the goal, so the gradient
    never strictly vanishes; treat a remaining cost below one voxel (or a
    numerically zero gradient) as arrival."""
    sample = interpolate(phi, state.p)
    grad = sample.gradient
    norm = float(np.linalg.norm(grad))
    if norm < gains.grad_eps or sample.value <= np.sqrt(3.0) * phi.resolution:
        return AttitudeCommand.hover(g=dyn.g)

    speed = v_target
    if gains.clearance_gain > 0:
        clearance = interpolate(esdf, state.p).value
        speed *= float(np.clip(gains.clearance_gain * clearance, 0.3, 1.0))

    v_des = -grad / norm * speed
    a_des = gains.k_v * (v_des - state.v)
    a_norm = float(np.linalg.norm(a_des))
    if a_norm > gains.a_max:
        a_des *= gains.a_max / a_norm
    yaw = float(np.arctan2(v_des[1], v_des[0]))
    return accel_to_command(a_des, yaw, dyn)
