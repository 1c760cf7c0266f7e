"""Deployment-time safety filter: project commanded acceleration onto the
set where every obstacle's second-order barrier condition holds.

Per obstacle point o the barrier is h = ||r||^2 - r_safe^2 with
r = p - o (obstacle to UAV, so hdot = 2 r.v and hddot = 2||v||^2 + 2 r.a
hold verbatim for static obstacles). Requiring
hddot + alpha_1 hdot + alpha_0 h >= 0 is affine in the acceleration:
(2 r) . a >= -2||v||^2 - alpha_1 hdot - alpha_0 h, one row per point.

The QP min 1/2 ||a - a_raw||^2 subject to those rows and an infinity-norm
acceleration box is solved by a feasibility fast path, a closed-form
single-constraint projection, or Hildreth dual coordinate ascent. An
infeasible program triggers an emergency brake instead of silently
returning a violating point.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import List, Sequence

import numpy as np

from .dynamics import AttitudeCommand, DynamicsParams, QuadState, accel_to_command, command_to_accel
from .sensing import PointCloud, nearest_points

_FEAS_TOL = 1e-9
_KKT_TOL = 1e-8
_MAX_HILDRETH_ITERS = 500


@dataclass(frozen=True)
class ShieldParams:
    alpha_0: float = 4.0  # 1/s^2
    alpha_1: float = 4.0  # 1/s; (4, 4) is critically damped with roots at -2
    r_safe: float = 0.4  # m
    k_obstacles: int = 8
    accel_bound: float = 13.0  # m/s^2 box bound, ~f_max * sin(tilt_max)

    def __post_init__(self):
        if self.alpha_0 <= 0 or self.alpha_1 <= 0:
            raise ValueError("alpha_0 and alpha_1 must be positive")
        if self.alpha_1**2 < 4.0 * self.alpha_0:
            raise ValueError(
                "alpha_1^2 >= 4 alpha_0 required (real nonpositive barrier roots)"
            )
        if self.k_obstacles < 1 or self.accel_bound <= 0:
            raise ValueError("k_obstacles >= 1 and accel_bound > 0 required")


@dataclass(frozen=True)
class ShieldConstraint:
    """One linearized barrier row: a_row . a >= b."""

    a_row: np.ndarray
    b: float
    h: float
    source_point: np.ndarray
    degenerate: bool = False  # obstacle point coincides with the UAV


@dataclass(frozen=True)
class ShieldResult:
    a_star: np.ndarray
    modified: bool
    active_constraints: List[int]
    feasible: bool
    solve_residual: float


def build_constraints(
    obstacle_points: Sequence, p, v, params: ShieldParams
) -> List[ShieldConstraint]:
    """Assemble one barrier row per obstacle point (typically the k nearest)."""
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    obs = np.atleast_2d(np.asarray(obstacle_points, dtype=float))
    r = p[None, :] - obs
    r_norm2 = np.einsum("ij,ij->i", r, r)
    h = r_norm2 - params.r_safe**2
    hdot = 2.0 * (r @ v)
    b = -2.0 * float(v @ v) - params.alpha_1 * hdot - params.alpha_0 * h
    degenerate = r_norm2 < 1e-12
    return [
        ShieldConstraint(
            a_row=2.0 * r[i],
            b=float(b[i]),
            h=float(h[i]),
            source_point=obs[i].copy(),
            degenerate=bool(degenerate[i]),
        )
        for i in range(len(obs))
    ]


def solve_qp(
    a_raw, constraints: Sequence[ShieldConstraint], accel_bound: float
) -> ShieldResult:
    """Minimum-deviation projection of a_raw onto the constrained set.

    Solution path: (i) a_raw already feasible; (ii) closed-form projection
    when exactly one row is violated and the projection satisfies the rest;
    (iii) Hildreth dual coordinate ascent over barrier plus box rows, to a
    KKT residual below 1e-8 or 500 sweeps. An empty intersection returns
    feasible=False with a least-violation iterate for the caller's
    emergency path.
    """
    a_raw = np.asarray(a_raw, dtype=float)
    A = np.array([c.a_row for c in constraints], dtype=float).reshape(-1, 3)
    b = np.array([c.b for c in constraints], dtype=float)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b)) and np.all(np.isfinite(a_raw))):
        raise ValueError("non-finite QP data")

    def box_ok(a):
        return np.all(np.abs(a) <= accel_bound + _FEAS_TOL)

    def violations(a):
        if A.size == 0:
            gap = np.zeros(0)
        else:
            gap = b - A @ a
        box_gap = np.abs(a) - accel_bound
        return max(float(gap.max(initial=0.0)), float(box_gap.max(initial=0.0)))

    if A.size == 0:
        a = np.clip(a_raw, -accel_bound, accel_bound)
        modified = not np.array_equal(a, a_raw)
        return ShieldResult(a if modified else a_raw.copy(), modified, [], True, 0.0)

    slack = A @ a_raw - b
    if float(slack.min()) >= -_FEAS_TOL and box_ok(a_raw):
        return ShieldResult(a_raw.copy(), False, [], True, 0.0)

    violated = np.nonzero(slack < -_FEAS_TOL)[0]
    if violated.size == 1 and box_ok(a_raw):
        i = int(violated[0])
        row = A[i]
        nrm2 = float(row @ row)
        if nrm2 > 1e-18:
            a_proj = a_raw + row * (b[i] - float(row @ a_raw)) / nrm2
            if float((A @ a_proj - b).min()) >= -_FEAS_TOL and box_ok(a_proj):
                return ShieldResult(a_proj, True, [i], True, 0.0)

    # general case: dual coordinate ascent with the box folded in as rows;
    # problems are tiny (<= k_obstacles + 6 rows) so plain-float sweeps beat
    # numpy scalar dispatch by a wide margin in the closed-loop filter
    eye = np.eye(3)
    A_full = np.vstack([A, eye, -eye])
    b_full = np.concatenate([b, np.full(6, -accel_bound)])
    m = A_full.shape[0]
    diag = np.einsum("ij,ij->i", A_full, A_full)

    if np.any((diag < 1e-18) & (b_full > _FEAS_TOL)):
        a_lv = np.clip(a_raw, -accel_bound, accel_bound)
        return ShieldResult(a_lv, True, [], False, violations(a_lv))

    rows = A_full.tolist()
    bs = b_full.tolist()
    ds = diag.tolist()
    lam = [0.0] * m
    ax, ay, az = float(a_raw[0]), float(a_raw[1]), float(a_raw[2])

    residual = np.inf
    for _ in range(_MAX_HILDRETH_ITERS):
        for i in range(m):
            if ds[i] < 1e-18:
                continue
            rx, ry, rz = rows[i]
            gap = rx * ax + ry * ay + rz * az - bs[i]
            new_lam = lam[i] - gap / ds[i]
            if new_lam < 0.0:
                new_lam = 0.0
            delta = new_lam - lam[i]
            if delta != 0.0:
                lam[i] = new_lam
                ax += delta * rx
                ay += delta * ry
                az += delta * rz
        residual = 0.0
        for i in range(m):
            rx, ry, rz = rows[i]
            gap = rx * ax + ry * ay + rz * az - bs[i]
            if -gap > residual:
                residual = -gap
            slackness = lam[i] * gap
            if slackness < 0.0:
                slackness = -slackness
            if slackness > residual:
                residual = slackness
        if residual < _KKT_TOL:
            break

    a = np.array([ax, ay, az])
    feasible = violations(a) <= 1e-6
    if not feasible:
        a = np.clip(a, -accel_bound, accel_bound)
        return ShieldResult(a, True, [], False, violations(a))
    active = [i for i in range(len(constraints)) if lam[i] > 1e-10]
    modified = bool(np.linalg.norm(a - a_raw) > 0)
    return ShieldResult(a if modified else a_raw.copy(), modified, active, True, residual)


@dataclass(frozen=True)
class ShieldStepInfo:
    """Per-call diagnostics for the shield log."""

    modified: bool = False
    emergency: bool = False
    feasible: bool = True
    h_min: float = np.inf
    deviation: float = 0.0
    active_count: int = 0


def emergency_command(
    state: QuadState, params: ShieldParams, dyn: DynamicsParams, yaw: float
) -> AttitudeCommand:
    """Maximum deceleration opposing the current velocity (hover if at rest)."""
    speed = float(np.linalg.norm(state.v))
    if speed < 1e-3:
        return AttitudeCommand.hover(yaw=yaw, g=dyn.g)
    a_des = -params.accel_bound * state.v / speed
    return accel_to_command(a_des, yaw, dyn)


def filter_command(
    cmd_raw: AttitudeCommand,
    state: QuadState,
    cloud: PointCloud,
    params: ShieldParams,
    dyn: DynamicsParams,
) -> AttitudeCommand:
    """HOCBF correction loop: constraints from the nearest cloud points, QP
    projection in acceleration space, yaw preserved. See filter_command_ex
    for the variant with diagnostics."""
    cmd, _ = filter_command_ex(cmd_raw, state, cloud, params, dyn)
    return cmd


def filter_command_ex(
    cmd_raw: AttitudeCommand,
    state: QuadState,
    cloud: PointCloud,
    params: ShieldParams,
    dyn: DynamicsParams,
) -> tuple[AttitudeCommand, ShieldStepInfo]:
    if len(cloud) == 0:
        return cmd_raw, ShieldStepInfo()

    pts = nearest_points(cloud, state.p, params.k_obstacles)
    constraints = build_constraints(pts, state.p, state.v, params)
    h_min = min(c.h for c in constraints)
    if any(c.degenerate for c in constraints):
        cmd = emergency_command(state, params, dyn, cmd_raw.yaw)
        return cmd, ShieldStepInfo(
            modified=True, emergency=True, feasible=False, h_min=h_min, active_count=0
        )

    a_raw = command_to_accel(cmd_raw, dyn)
    result = solve_qp(a_raw, constraints, params.accel_bound)
    if not result.feasible:
        cmd = emergency_command(state, params, dyn, cmd_raw.yaw)
        dev = float(np.linalg.norm(command_to_accel(cmd, dyn) - a_raw))
        return cmd, ShieldStepInfo(
            modified=True, emergency=True, feasible=False, h_min=h_min, deviation=dev
        )
    if not result.modified:
        return cmd_raw, ShieldStepInfo(h_min=h_min)

    cmd = accel_to_command(result.a_star, cmd_raw.yaw, dyn)
    info = ShieldStepInfo(
        modified=True,
        feasible=True,
        h_min=h_min,
        deviation=float(np.linalg.norm(result.a_star - a_raw)),
        active_count=len(result.active_constraints),
    )
    return cmd, info
