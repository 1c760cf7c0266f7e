"""Quadrotor point-mass dynamics under thrust-plus-attitude commands.

The vehicle tracks commanded Euler attitude through a first-order lag
(stand-in for the delegated inner-loop controller) and integrates
translation with semi-implicit Euler substeps at the 100 Hz control rate.
Also houses the sim-to-real randomizations: the actuation-delay buffer
(commands averaged over a 60-80 ms window), observation noise, and
+-10% multiplicative action noise.

Attitude convention: ZYX Euler (yaw-pitch-roll), body z is the thrust
axis. All operations are pure functions of (state, command, params, rng).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Deque, Tuple

import numpy as np

GRAVITY = 9.81
_EZ = np.array([0.0, 0.0, 1.0])


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    w = (a + np.pi) % (2.0 * np.pi) - np.pi
    return np.pi if w == -np.pi else float(w)


def euler_zyx_to_rotation(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Body-to-world rotation from ZYX Euler angles: Rz(yaw)Ry(pitch)Rx(roll)."""
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def rotation_to_euler_zyx(R: np.ndarray) -> Tuple[float, float, float]:
    """Inverse of euler_zyx_to_rotation (pitch in [-pi/2, pi/2])."""
    pitch = float(np.arcsin(np.clip(-R[2, 0], -1.0, 1.0)))
    roll = float(np.arctan2(R[2, 1], R[2, 2]))
    yaw = float(np.arctan2(R[1, 0], R[0, 0]))
    return roll, pitch, yaw


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues map: rotation vector -> rotation matrix."""
    theta = float(np.linalg.norm(w))
    K = np.array(
        [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
    )
    if theta < 1e-10:
        return np.eye(3) + K + 0.5 * (K @ K)
    A = np.sin(theta) / theta
    B = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + A * K + B * (K @ K)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector of R; handles the near-0 and near-pi branches."""
    tr = float(np.trace(R))
    cos_theta = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    if theta < 1e-10:
        return 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta > np.pi - 1e-6:
        # axis from the dominant diagonal of (R + I) / 2
        M = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(M), 0.0))
        k = int(np.argmax(axis))
        if axis[k] > 0:
            axis = M[:, k] / axis[k]
            n = np.linalg.norm(axis)
            if n > 0:
                axis = axis / n
        return theta * axis
    vee = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return theta / np.sin(theta) * vee


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Project onto SO(3) via polar decomposition (det +1)."""
    U, _, Vt = np.linalg.svd(R)
    out = U @ Vt
    if np.linalg.det(out) < 0:
        U = U.copy()
        U[:, -1] = -U[:, -1]
        out = U @ Vt
    return out


@dataclass(frozen=True)
class QuadState:
    """Position (m), world-frame velocity (m/s), body-to-world rotation."""

    p: np.ndarray
    v: np.ndarray
    R: np.ndarray

    @classmethod
    def hover_at(cls, p) -> "QuadState":
        return cls(p=np.asarray(p, dtype=float), v=np.zeros(3), R=np.eye(3))

    @property
    def v_body(self) -> np.ndarray:
        """Velocity expressed in the body frame."""
        return self.R.T @ self.v

    def is_finite(self) -> bool:
        return bool(
            np.all(np.isfinite(self.p))
            and np.all(np.isfinite(self.v))
            and np.all(np.isfinite(self.R))
        )


@dataclass(frozen=True)
class AttitudeCommand:
    """Mass-normalized collective thrust (m/s^2) plus Euler attitude refs."""

    f_n: float
    roll: float
    pitch: float
    yaw: float

    @classmethod
    def hover(cls, yaw: float = 0.0, g: float = GRAVITY) -> "AttitudeCommand":
        return cls(f_n=g, roll=0.0, pitch=0.0, yaw=yaw)

    def as_array(self) -> np.ndarray:
        return np.array([self.f_n, self.roll, self.pitch, self.yaw])

    @classmethod
    def from_array(cls, a) -> "AttitudeCommand":
        return cls(f_n=float(a[0]), roll=float(a[1]), pitch=float(a[2]), yaw=float(a[3]))

    def clamped(self, params: "DynamicsParams") -> "AttitudeCommand":
        return AttitudeCommand(
            f_n=float(np.clip(self.f_n, 0.0, params.f_max)),
            roll=float(np.clip(self.roll, -params.tilt_max, params.tilt_max)),
            pitch=float(np.clip(self.pitch, -params.tilt_max, params.tilt_max)),
            yaw=wrap_angle(self.yaw),
        )

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.as_array())))


@dataclass(frozen=True)
class DynamicsParams:
    g: float = GRAVITY
    tau_att: float = 0.15  # attitude-tracking time constant (s)
    drag_coeff: float = 0.05  # linear drag (1/s); 0 for oracle tests
    dt_ctrl: float = 0.01  # control period (s), 100 Hz
    substeps: int = 5
    f_max: float = 2.5 * GRAVITY
    tilt_max: float = 0.6

    def __post_init__(self):
        if self.tau_att <= 0 or self.dt_ctrl <= 0 or self.substeps < 1:
            raise ValueError("tau_att and dt_ctrl must be positive, substeps >= 1")


def step(state: QuadState, cmd: AttitudeCommand, params: DynamicsParams) -> QuadState:
    """Propagate one control tick (dt_ctrl) with semi-implicit Euler substeps.

    The attitude relaxes toward the commanded Euler attitude with first-order
    dynamics of time constant tau_att (exact discrete pole per substep, so a
    constant reference realizes angle_ref * (1 - exp(-t/tau)) along a single
    axis). Commands outside their bounds are clamped, never rejected.
    """
    if not state.is_finite() or not cmd.is_finite():
        raise ValueError("non-finite state or command fed to dynamics step")
    cmd = cmd.clamped(params)
    R_ref = euler_zyx_to_rotation(cmd.roll, cmd.pitch, cmd.yaw)

    h = params.dt_ctrl / params.substeps
    k = 1.0 - np.exp(-h / params.tau_att)
    p, v, R = state.p.copy(), state.v.copy(), state.R.copy()
    for _ in range(params.substeps):
        err = so3_log(R.T @ R_ref)
        if err[0] != 0.0 or err[1] != 0.0 or err[2] != 0.0:
            R = R @ so3_exp(k * err)
        a = cmd.f_n * R[:, 2] - params.g * _EZ - params.drag_coeff * v
        v = v + h * a
        p = p + h * v
    R = orthonormalize(R)
    return QuadState(p=p, v=v, R=R)


def command_to_accel(cmd: AttitudeCommand, params: DynamicsParams) -> np.ndarray:
    """Steady-state net acceleration requested by a command (m/s^2)."""
    R = euler_zyx_to_rotation(cmd.roll, cmd.pitch, cmd.yaw)
    return cmd.f_n * R[:, 2] - params.g * _EZ


def accel_to_command(a_des, yaw_ref: float, params: DynamicsParams) -> AttitudeCommand:
    """Unique (f_n, roll, pitch) realizing a_des at the given yaw, clamped.

    Exact inverse of command_to_accel on the unclamped region. A request
    whose thrust vector (a_des + g e_z) has non-positive z-component is
    degenerate (inverted thrust): returns the minimum-tilt free-fall
    command (f_n = 0, level attitude).
    """
    t = np.asarray(a_des, dtype=float) + params.g * _EZ
    if t[2] <= 0.0:
        return AttitudeCommand(f_n=0.0, roll=0.0, pitch=0.0, yaw=wrap_angle(yaw_ref))
    f_n = float(np.linalg.norm(t))
    cy, sy = np.cos(yaw_ref), np.sin(yaw_ref)
    tx = cy * t[0] + sy * t[1]
    ty = -sy * t[0] + cy * t[1]
    tz = t[2]
    roll = float(np.arcsin(np.clip(-ty / f_n, -1.0, 1.0)))
    pitch = float(np.arctan2(tx, tz))
    return AttitudeCommand(f_n=f_n, roll=roll, pitch=pitch, yaw=yaw_ref).clamped(params)


@dataclass
class DelayBuffer:
    """Ring of timestamped commands emulating system-level actuation latency.

    ``window`` is resampled once per episode from [0.06, 0.08] s when delay
    randomization is on. The buffer keeps slightly more history than one
    window so the averaging set is never starved.
    """

    window: float
    entries: Deque[Tuple[float, AttitudeCommand]] = field(default_factory=deque)

    def push(self, t: float, cmd: AttitudeCommand) -> None:
        self.entries.append((t, cmd))
        horizon = t - 2.0 * self.window
        while len(self.entries) > 1 and self.entries[0][0] < horizon:
            self.entries.popleft()

    def __len__(self) -> int:
        return len(self.entries)


def delayed_command(buffer: DelayBuffer, now: float) -> AttitudeCommand:
    """Component-wise mean of all commands stamped within [now - window, now]."""
    if not buffer.entries:
        raise ValueError("delayed_command on an empty buffer")
    lo = now - buffer.window
    stack = [cmd.as_array() for (t, cmd) in buffer.entries if lo <= t <= now]
    if not stack:
        # caller skipped pushes for over a window; degrade to the newest entry
        return buffer.entries[-1][1]
    return AttitudeCommand.from_array(np.mean(stack, axis=0))


@dataclass(frozen=True)
class NoiseModel:
    """Sim-to-real perturbations applied to observations and actions."""

    pos_sigma: float = 0.0  # additive Gaussian on position (m)
    vel_scale_sigma: float = 0.0  # multiplicative Gaussian on velocity
    att_sigma: float = 0.0  # rotational perturbation angle (rad)
    action_frac: float = 0.10  # uniform +-fraction on each command component
    depth_dropout_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.pos_sigma, self.vel_scale_sigma, self.att_sigma) < 0:
            raise ValueError("noise sigmas must be >= 0")
        if not 0.0 <= self.action_frac < 1.0:
            raise ValueError("action_frac must lie in [0, 1)")

    @classmethod
    def disabled(cls) -> "NoiseModel":
        return cls(action_frac=0.0)


def perturb_observation(
    state: QuadState, noise: NoiseModel, rng: np.random.Generator
) -> QuadState:
    """Noisy proprioception: additive position, multiplicative velocity,
    small random rotation about a uniformly random axis.

    Draw order is fixed (position, velocity scale, axis, angle) so rng
    streams stay aligned regardless of which sigmas are zero.
    """
    dp = rng.normal(0.0, noise.pos_sigma, size=3) if noise.pos_sigma > 0 else (rng.normal(size=3) * 0.0)
    vs = rng.normal(0.0, noise.vel_scale_sigma, size=3) if noise.vel_scale_sigma > 0 else (rng.normal(size=3) * 0.0)
    axis = rng.normal(size=3)
    angle = rng.normal(0.0, noise.att_sigma) if noise.att_sigma > 0 else (rng.normal() * 0.0)

    R = state.R
    if angle != 0.0:
        n = np.linalg.norm(axis)
        axis = axis / n if n > 0 else _EZ
        R = state.R @ so3_exp(angle * axis)
    return QuadState(p=state.p + dp, v=state.v * (1.0 + vs), R=R)


def perturb_action(
    cmd: AttitudeCommand,
    noise: NoiseModel,
    rng: np.random.Generator,
    params: DynamicsParams | None = None,
) -> AttitudeCommand:
    """Scale each command component by an independent Uniform(1-f, 1+f) draw."""
    factors = rng.uniform(1.0 - noise.action_frac, 1.0 + noise.action_frac, size=4)
    out = AttitudeCommand.from_array(cmd.as_array() * factors)
    return out.clamped(params) if params is not None else replace(out, yaw=wrap_angle(out.yaw))
