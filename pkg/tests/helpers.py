"""Shared test oracles: brute-force QP solver and the double-integrator
closed-loop harness for shield forward-invariance checks."""

import numpy as np

from shieldnav.shield import ShieldParams, build_constraints, solve_qp


def qp_oracle_objective(a_raw, A, b, bound, grid_n=21):
    """Grid search over the acceleration box refined by SLSQP.

    Returns the best objective value 0.5 * ||a - a_raw||^2 found, or None
    when the sampled region appears infeasible.
    """
    from scipy.optimize import minimize

    axes = np.linspace(-bound, bound, grid_n)
    X, Y, Z = np.meshgrid(axes, axes, axes, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    feas = np.all(pts @ A.T >= b[None, :] - 1e-12, axis=1)
    if not feas.any():
        return None
    cand = pts[feas]
    obj = 0.5 * np.sum((cand - a_raw) ** 2, axis=1)
    best = cand[np.argmin(obj)]
    best_obj = float(obj.min())

    cons = [
        {"type": "ineq", "fun": (lambda x, i=i: float(A[i] @ x - b[i]))}
        for i in range(len(b))
    ]
    for start in (best, np.clip(a_raw, -bound, bound)):
        res = minimize(
            lambda x: 0.5 * float((x - a_raw) @ (x - a_raw)),
            start,
            method="SLSQP",
            bounds=[(-bound, bound)] * 3,
            constraints=cons,
            options={"maxiter": 200, "ftol": 1e-12},
        )
        # accept any iterate that is feasible to tolerance, even when SLSQP
        # reports a benign line-search termination
        if np.all(A @ res.x >= b - 1e-6) and np.all(np.abs(res.x) <= bound + 1e-6):
            best_obj = min(best_obj, 0.5 * float((res.x - a_raw) @ (res.x - a_raw)))
    return best_obj


def random_feasible_qp(rng, n_constraints, bound=13.0):
    """Random constraint set guaranteed non-empty inside the box."""
    x0 = rng.uniform(-0.5 * bound, 0.5 * bound, size=3)
    A = rng.normal(size=(n_constraints, 3))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    A *= rng.uniform(0.5, 4.0, size=(n_constraints, 1))
    slack = rng.uniform(0.0, 6.0, size=n_constraints)
    b = A @ x0 - slack
    a_raw = rng.uniform(-bound, bound, size=3)
    return A, b, a_raw


def run_double_integrator_trial(
    seed,
    shield_on,
    params=None,
    n_steps=1000,
    dt=0.01,
    speed0=2.0,
):
    """Drive a double integrator straight at an obstacle cluster with a PD
    pull toward a goal placed behind a chosen obstacle point.

    Returns the minimum clearance min_t min_o ||p - o|| over the rollout.
    With the shield on, the HOCBF filter projects the PD acceleration each
    tick (emergency braking on infeasibility); with it off, the raw
    acceleration is applied.
    """
    rng = np.random.default_rng(seed)
    if params is None:
        params = ShieldParams(r_safe=0.5, k_obstacles=8, accel_bound=13.0)

    k = int(rng.integers(3, 9))
    obstacles = rng.uniform(-0.8, 0.8, size=(k, 3))
    p = np.array([-3.0, 0.0, 0.0]) + rng.uniform(-0.3, 0.3, size=3)
    v = rng.normal(size=3)
    v *= speed0 * rng.random() / max(1e-9, np.linalg.norm(v))
    target_obs = obstacles[int(rng.integers(k))]
    goal = p + 2.2 * (target_obs - p)  # straight path runs through the obstacle

    kp, kd = 2.5, 1.5
    min_clear = np.inf
    for _ in range(n_steps):
        a_raw = kp * (goal - p) - kd * v
        a_raw = np.clip(a_raw, -params.accel_bound, params.accel_bound)
        if shield_on:
            constraints = build_constraints(obstacles, p, v, params)
            result = solve_qp(a_raw, constraints, params.accel_bound)
            if result.feasible:
                a = result.a_star
            else:
                speed = np.linalg.norm(v)
                a = -params.accel_bound * v / speed if speed > 1e-9 else np.zeros(3)
        else:
            a = a_raw
        v = v + dt * a
        p = p + dt * v
        clear = float(np.linalg.norm(obstacles - p, axis=1).min())
        min_clear = min(min_clear, clear)
    return min_clear
