"""Benchmark harness CLI: scene generation, training, evaluation, the
reward-mode ablation grid, shield demos, and tidy plot data.

Verbs:
    gen-scene    write grid + ESDF + geodesic blobs per configured scene
    train        PPO per the config; checkpoint + per-iteration curves CSV
    eval         trials per (scene, target speed, shield flag); CSV + JSON
    ablate       train+eval across reward modes incl. the shielded variant
    filter-demo  scripted unsafe run at a wall, shield off/on/empty traces
    plot-data    episode records -> tidy (method, speed, metric, value)

Exit codes: 0 ok, 2 config error, 3 training divergence. All artifacts are
deterministic functions of (config, seed) in single-worker mode.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from .config import (
    ConfigError,
    ExperimentConfig,
    SceneEntry,
    build_bundle,
    load_config,
    make_env,
    with_reward_mode,
)
from .dynamics import accel_to_command
from .fields import compute_esdf, compute_geodesic, interpolate, load_field, save_field
from .gridworld import generate_scene, load_grid, save_grid
from .policy import (
    MlpPolicy,
    TrainingDivergence,
    act,
    collect_rollouts,
    compute_gae,
    load_checkpoint,
    ppo_update,
    save_checkpoint,
)
from .policy.network import Adam
from .policy.simenv import SceneBundle, SimEnv

OUTCOMES = ("success", "collision", "timeout", "shield_emergency")


def _fmt(x) -> str:
    return repr(float(x))


@dataclass
class EpisodeRecord:
    seed: int
    scene_id: str
    method: str
    target_speed: float
    shield: bool
    trial: int
    outcome: str
    duration: float  # sim seconds
    path_length: float
    mean_speed: float
    min_clearance: float
    interventions: int

    CSV_FIELDS = (
        "seed scene_id method target_speed shield trial outcome duration "
        "path_length mean_speed min_clearance interventions"
    ).split()

    def row(self) -> List[str]:
        return [
            str(self.seed),
            self.scene_id,
            self.method,
            _fmt(self.target_speed),
            str(int(self.shield)),
            str(self.trial),
            self.outcome,
            _fmt(self.duration),
            _fmt(self.path_length),
            _fmt(self.mean_speed),
            _fmt(self.min_clearance),
            str(self.interventions),
        ]


def write_records(path: Path, records: List[EpisodeRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EpisodeRecord.CSV_FIELDS)
        for rec in records:
            writer.writerow(rec.row())


def read_records(path) -> List[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- scene caching -------------------------------------------------------------


def scene_paths(out_dir: Path, scene_id: str):
    base = out_dir / "scenes"
    return base / f"{scene_id}.grid", base / f"{scene_id}.esdf", base / f"{scene_id}.phi"


def cmd_gen_scene(cfg: ExperimentConfig, out_dir: Path) -> int:
    """Write grid + ESDF + geodesic potential blobs for every scene."""
    (out_dir / "scenes").mkdir(parents=True, exist_ok=True)
    for entry in cfg.scenes:
        grid_p, esdf_p, phi_p = scene_paths(out_dir, entry.scene_id)
        grid = generate_scene(entry.spec)
        esdf = compute_esdf(grid)
        phi = compute_geodesic(grid, entry.spec.goal, cfg.inflation_radius, esdf=esdf)
        save_grid(grid, grid_p)
        save_field(esdf, esdf_p)
        save_field(phi, phi_p)
        print(f"scene {entry.scene_id}: dims={grid.dims} occupied={grid.occupied_count()}")
    return 0


def load_bundle(cfg: ExperimentConfig, entry: SceneEntry, out_dir: Path) -> SceneBundle:
    """Bundle from cached blobs when present, otherwise computed in memory."""
    grid_p, esdf_p, phi_p = scene_paths(out_dir, entry.scene_id)
    if grid_p.exists():
        grid = load_grid(grid_p)
        if cfg.reward_mode != "distance" and esdf_p.exists() and phi_p.exists():
            from .fields import euclidean_goal_field  # noqa: F401 (parity with build_bundle)

            esdf = load_field(esdf_p, kind="esdf")
            phi = load_field(phi_p, kind="geodesic")
            return SceneBundle(
                scene_id=entry.scene_id,
                grid=grid,
                esdf=esdf,
                phi=phi,
                goal=np.asarray(entry.spec.goal, dtype=float),
                spawn_lo=np.asarray(entry.spec.spawn_region[0], dtype=float),
                spawn_hi=np.asarray(entry.spec.spawn_region[1], dtype=float),
            )
        return build_bundle(cfg, entry, grid=grid)
    return build_bundle(cfg, entry)


# -- training ------------------------------------------------------------------

CURVE_FIELDS = (
    "iteration mean_return success_rate episodes nav safety smooth collision "
    "success speed height policy_loss value_loss entropy approx_kl clip_fraction"
).split()


def cmd_train(cfg: ExperimentConfig, out_dir: Path) -> int:
    """Run PPO per the config; emits checkpoint.ckpt and curves.csv."""
    train_entries = cfg.train_scenes()
    if not train_entries:
        raise ConfigError("no scenes with role='train' in config")
    out_dir.mkdir(parents=True, exist_ok=True)

    bundles = [load_bundle(cfg, e, out_dir) for e in train_entries]
    envs = []
    for k in range(cfg.ppo.num_envs):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 101, k]))
        envs.append(make_env(cfg, bundles[k % len(bundles)], rng, training=True))

    policy = MlpPolicy.create(
        cfg.features.obs_dim, cfg.features.priv_dim, cfg.ppo,
        cfg.dynamics.f_max, cfg.dynamics.tilt_max, hover_thrust=cfg.dynamics.g,
    )
    optimizer = Adam(
        policy.actor.parameters() + policy.critic.parameters(), cfg.ppo.learning_rate
    )
    update_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 777]))

    ckpt_path = out_dir / "checkpoint.ckpt"
    curves_path = out_dir / "curves.csv"
    with open(curves_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_FIELDS)
        for it in range(cfg.ppo.iterations):
            buf, summary = collect_rollouts(
                envs, policy, shield_enabled=False, cfg=cfg.ppo, reset=(it == 0)
            )
            compute_gae(buf, cfg.ppo)
            try:
                stats = ppo_update(policy, buf, cfg.ppo, rng=update_rng, optimizer=optimizer)
            except TrainingDivergence:
                save_checkpoint(ckpt_path, policy, it)
                raise
            writer.writerow(
                [str(it)]
                + [_fmt(v) for v in (summary.mean_return, summary.success_rate)]
                + [str(summary.episodes)]
                + [_fmt(v) for v in summary.mean_terms]
                + [
                    _fmt(stats.policy_loss),
                    _fmt(stats.value_loss),
                    _fmt(stats.entropy),
                    _fmt(stats.approx_kl),
                    _fmt(stats.clip_fraction),
                ]
            )
            print(
                f"iter {it:3d} return {summary.mean_return:8.2f} "
                f"sr {summary.success_rate:5.2f} episodes {summary.episodes}"
            )
    save_checkpoint(ckpt_path, policy, cfg.ppo.iterations)
    return 0


# -- evaluation ----------------------------------------------------------------


def run_eval_episode(
    cfg: ExperimentConfig,
    bundle: SceneBundle,
    policy: MlpPolicy,
    v_target: float,
    shield: bool,
    trial_seed,
) -> EpisodeRecord:
    rng = np.random.default_rng(trial_seed)
    env = make_env(cfg, bundle, rng, v_target=v_target, training=False)
    env.reset()
    outcome = "timeout"
    while True:
        obs, _ = env.observe()
        if cfg.eval_deterministic:
            cmd, _ = act(policy, obs, deterministic=True)
        else:
            cmd, _ = act(policy, obs, deterministic=False, rng=env.rng)
        result = env.step(cmd, shield_enabled=shield)
        if result.done:
            outcome = result.outcome
            break
    if outcome == "timeout" and env.shield_emergencies > 0:
        outcome = "shield_emergency"
    duration = max(env.t, cfg.dynamics.dt_ctrl)
    method = cfg.reward_mode + ("+shield" if shield else "")
    return EpisodeRecord(
        seed=cfg.seed,
        scene_id=bundle.scene_id,
        method=method,
        target_speed=v_target,
        shield=shield,
        trial=0,  # filled by the caller
        outcome=outcome,
        duration=duration,
        path_length=env.path_length,
        mean_speed=env.path_length / duration,
        min_clearance=env.min_clearance,
        interventions=env.shield_interventions,
    )


def _run_cell(payload) -> List[EpisodeRecord]:
    (config_path, seed, ckpt_path, out_dir, scene_idx, v_target, shield, reward_mode) = payload
    cfg = with_reward_mode(load_config(config_path, seed_override=seed), reward_mode)
    policy, _ = load_checkpoint(ckpt_path)
    entry = cfg.eval_scenes()[scene_idx]
    bundle = load_bundle(cfg, entry, Path(out_dir))
    records = []
    for trial in range(cfg.trials_per_cell):
        ss = np.random.SeedSequence(
            [cfg.seed, 9000, scene_idx, int(round(v_target * 1000)), int(shield), trial]
        )
        rec = run_eval_episode(cfg, bundle, policy, v_target, shield, ss)
        rec.trial = trial
        records.append(rec)
    return records


def _check_policy_dims(cfg: ExperimentConfig, policy: MlpPolicy) -> None:
    if policy.actor.sizes[0] != cfg.features.obs_dim:
        raise ConfigError(
            f"checkpoint/config dimension mismatch: actor expects "
            f"{policy.actor.sizes[0]} observation dims, config produces "
            f"{cfg.features.obs_dim}"
        )
    if policy.critic.sizes[0] != cfg.features.priv_dim:
        raise ConfigError(
            f"checkpoint/config dimension mismatch: critic expects "
            f"{policy.critic.sizes[0]} privileged dims, config produces "
            f"{cfg.features.priv_dim}"
        )


def cmd_eval(
    cfg: ExperimentConfig,
    checkpoint: Path,
    out_dir: Path,
    workers: int = 1,
    config_path: Optional[Path] = None,
    shield_flags: Optional[List[bool]] = None,
) -> List[EpisodeRecord]:
    """Run trials over (scene, target speed, shield flag) cells; write
    records.csv and summary.json in Table-layout aggregation."""
    eval_entries = cfg.eval_scenes()
    if not eval_entries:
        raise ConfigError("no scenes with role='eval' in config")
    policy, _ = load_checkpoint(checkpoint)
    _check_policy_dims(cfg, policy)
    out_dir.mkdir(parents=True, exist_ok=True)

    if shield_flags is None:
        shield_flags = [False, True] if cfg.shield_enabled else [False]
    cells = [
        (si, v, sh)
        for si in range(len(eval_entries))
        for v in cfg.target_speeds
        for sh in shield_flags
    ]

    records: List[EpisodeRecord] = []
    if workers > 1 and config_path is not None:
        payloads = [
            (str(config_path), cfg.seed, str(checkpoint), str(out_dir), si, v, sh, cfg.reward_mode)
            for (si, v, sh) in cells
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for recs in pool.map(_run_cell, payloads):
                records.extend(recs)
    else:
        bundles = {si: load_bundle(cfg, eval_entries[si], out_dir) for si in range(len(eval_entries))}
        for si, v, sh in cells:
            for trial in range(cfg.trials_per_cell):
                ss = np.random.SeedSequence(
                    [cfg.seed, 9000, si, int(round(v * 1000)), int(sh), trial]
                )
                rec = run_eval_episode(cfg, bundles[si], policy, v, sh, ss)
                rec.trial = trial
                records.append(rec)

    records.sort(key=lambda r: (r.scene_id, r.target_speed, r.shield, r.trial))
    write_records(out_dir / "records.csv", records)
    summary = summarize_records(cfg, records)
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return records


def summarize_records(cfg: ExperimentConfig, records: List[EpisodeRecord]) -> dict:
    cells: dict = {}
    for rec in records:
        key = f"{rec.scene_id}|{rec.target_speed:g}|{'on' if rec.shield else 'off'}"
        cell = cells.setdefault(
            key,
            {
                "scene": rec.scene_id,
                "target_speed": rec.target_speed,
                "shield": rec.shield,
                "trials": 0,
                "mean_speed_sum": 0.0,
                **{o: 0 for o in OUTCOMES},
            },
        )
        cell["trials"] += 1
        cell[rec.outcome] += 1
        cell["mean_speed_sum"] += rec.mean_speed
    out_cells = []
    for key in sorted(cells):
        c = cells[key]
        counted = sum(c[o] for o in OUTCOMES)
        if counted != c["trials"]:
            raise RuntimeError(f"outcome accounting broken in cell {key}")
        out_cells.append(
            {
                "scene": c["scene"],
                "target_speed": c["target_speed"],
                "shield": c["shield"],
                "trials": c["trials"],
                "success_rate": c["success"] / c["trials"],
                "mean_speed": c["mean_speed_sum"] / c["trials"],
                **{o: c[o] for o in OUTCOMES},
            }
        )
    return {
        "config_hash": cfg.config_hash,
        "reward_mode": cfg.reward_mode,
        "seed": cfg.seed,
        "trials_per_cell": cfg.trials_per_cell,
        "cells": out_cells,
    }


# -- ablation ------------------------------------------------------------------


def cmd_ablate(cfg: ExperimentConfig, out_dir: Path, config_path: Path, workers: int = 1) -> int:
    """Train and evaluate the reward-mode grid: distance, dijkstra,
    dijkstra_cbf (shield off), and dijkstra_cbf with the shield on."""
    out_dir.mkdir(parents=True, exist_ok=True)
    all_records: List[EpisodeRecord] = []
    table = []
    for mode in ("distance", "dijkstra", "dijkstra_cbf"):
        mode_cfg = with_reward_mode(cfg, mode)
        mode_dir = out_dir / mode
        cmd_train(mode_cfg, mode_dir)
        shields = [False, True] if mode == "dijkstra_cbf" else [False]
        recs = cmd_eval(
            mode_cfg, mode_dir / "checkpoint.ckpt", mode_dir,
            workers=workers, config_path=config_path, shield_flags=shields,
        )
        all_records.extend(recs)
    write_records(out_dir / "ablation_records.csv", all_records)

    for method in ("distance", "dijkstra", "dijkstra_cbf", "dijkstra_cbf+shield"):
        for v in cfg.target_speeds:
            rows = [r for r in all_records if r.method == method and r.target_speed == v]
            if not rows:
                continue
            table.append(
                {
                    "method": method,
                    "target_speed": v,
                    "success_rate": sum(r.outcome == "success" for r in rows) / len(rows),
                    "mean_speed": float(np.mean([r.mean_speed for r in rows])),
                    "trials": len(rows),
                }
            )
    with open(out_dir / "ablation.json", "w") as fh:
        json.dump({"config_hash": cfg.config_hash, "table": table}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for row in table:
        print(
            f"{row['method']:22s} v={row['target_speed']:.0f} "
            f"SR={row['success_rate']*100:5.1f}% vel={row['mean_speed']:.2f}"
        )
    return 0


# -- shield demo ---------------------------------------------------------------


def cmd_filter_demo(cfg: ExperimentConfig, out_dir: Path) -> int:
    """Scripted constant-velocity run at a wall with the shield off, on,
    and with the obstacle removed; logs per-step shield telemetry."""
    from .gridworld import SceneSpec

    out_dir.mkdir(parents=True, exist_ok=True)
    arena = (16.0, 8.0, 3.0)
    wall_spec = SceneSpec(
        arena_size=arena,
        mode="primitives",
        obstacle_count=0,
        seed=0,
        goal=(15.0, 4.0, 1.5),
        spawn_region=((1.0, 3.5, 1.4), (1.5, 4.5, 1.6)),
        resolution=0.25,
        fixed_boxes=(((10.0, 4.0, 1.5), (0.5, 8.0, 3.0)),),
    )
    empty_spec = SceneSpec(
        arena_size=arena,
        mode="primitives",
        obstacle_count=0,
        seed=0,
        goal=(15.0, 4.0, 1.5),
        spawn_region=((1.0, 3.5, 1.4), (1.5, 4.5, 1.6)),
        resolution=0.25,
    )

    rows = []
    results = {}
    for run, spec, shield in (
        ("shield_off", wall_spec, False),
        ("shield_on", wall_spec, True),
        ("no_obstacle", empty_spec, True),
    ):
        entry = SceneEntry(scene_id=run, role="eval", spec=spec)
        bundle = build_bundle(with_reward_mode(cfg, "dijkstra"), entry)
        env = make_env(cfg, bundle, np.random.default_rng(0), v_target=3.0, training=False)
        env.reset()
        env.state = env.state.__class__.hover_at((1.2, 4.0, 1.5))
        outcome = "timeout"
        min_surface_clear = np.inf
        for _ in range(3000):
            env.observe()
            # constant forward velocity, holding altitude and lateral position
            a_des = np.array(
                [
                    2.0 * (3.0 - env.state.v[0]),
                    2.0 * (4.0 - env.state.p[1]) - 2.0 * env.state.v[1],
                    4.0 * (1.5 - env.state.p[2]) - 3.0 * env.state.v[2],
                ]
            )
            cmd = accel_to_command(a_des, 0.0, cfg.dynamics)
            result = env.step(cmd, shield_enabled=shield)
            surface_clear = (
                interpolate(bundle.esdf, env.state.p).value - bundle.grid.resolution / 2.0
            )
            min_surface_clear = min(min_surface_clear, surface_clear)
            info = result.shield_info
            rows.append(
                [
                    run,
                    _fmt(env.t),
                    _fmt(env.state.p[0]),
                    _fmt(env.state.p[1]),
                    _fmt(env.state.p[2]),
                    _fmt(env.state.v[0]),
                    _fmt(surface_clear),
                    _fmt(info.h_min if np.isfinite(info.h_min) else -1.0),
                    str(int(info.modified)),
                    str(int(info.emergency)),
                    _fmt(info.deviation),
                ]
            )
            if result.done:
                outcome = result.outcome
                break
        results[run] = {
            "outcome": outcome,
            "min_surface_clearance": min_surface_clear,
            "interventions": env.shield_interventions,
            "emergencies": env.shield_emergencies,
        }
        print(
            f"{run:12s} outcome={outcome:9s} min_clear={min_surface_clear:6.3f} "
            f"interventions={env.shield_interventions}"
        )

    with open(out_dir / "shield_demo.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            "run t x y z vx surface_clearance h_min modified emergency deviation".split()
        )
        writer.writerows(rows)
    with open(out_dir / "shield_demo.json", "w") as fh:
        json.dump(results, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


# -- plot data -----------------------------------------------------------------

PLOT_METRICS = ("success", "duration", "path_length", "mean_speed", "min_clearance", "interventions")


def cmd_plot_data(records_path: Path, out_dir: Path) -> int:
    """Reshape episode records into tidy (method, target_speed, metric,
    value) rows for external plotting."""
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = read_records(records_path)
    with open(out_dir / "plot_data.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "target_speed", "metric", "value"])
        for rec in rows:
            values = {
                "success": 1.0 if rec["outcome"] == "success" else 0.0,
                "duration": float(rec["duration"]),
                "path_length": float(rec["path_length"]),
                "mean_speed": float(rec["mean_speed"]),
                "min_clearance": float(rec["min_clearance"]),
                "interventions": float(rec["interventions"]),
            }
            for metric in PLOT_METRICS:
                writer.writerow(
                    [rec["method"], rec["target_speed"], metric, _fmt(values[metric])]
                )
    return 0


# -- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shieldnav", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config (TOML)")
    common.add_argument("--seed", type=int, default=None, help="override config seed")
    common.add_argument("--out", type=Path, default=Path("runs/out"), help="output directory")
    common.add_argument("--workers", type=int, default=1, help="episode worker processes")
    common.add_argument(
        "--deterministic", action="store_true",
        help="force single-worker, bit-reproducible mode",
    )
    sub = parser.add_subparsers(dest="verb", required=True)
    sub.add_parser("gen-scene", parents=[common])
    sub.add_parser("train", parents=[common])
    evalp = sub.add_parser("eval", parents=[common])
    evalp.add_argument("--checkpoint", type=Path, required=True)
    sub.add_parser("ablate", parents=[common])
    sub.add_parser("filter-demo", parents=[common])
    plotp = sub.add_parser("plot-data", parents=[common])
    plotp.add_argument("--records", type=Path, required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    workers = 1 if args.deterministic else max(1, args.workers)
    try:
        if args.verb == "plot-data":
            return cmd_plot_data(args.records, args.out)
        if args.config is None:
            raise ConfigError(f"--config is required for {args.verb}")
        cfg = load_config(args.config, seed_override=args.seed)
        if args.verb == "gen-scene":
            return cmd_gen_scene(cfg, args.out)
        if args.verb == "train":
            return cmd_train(cfg, args.out)
        if args.verb == "eval":
            cmd_eval(cfg, args.checkpoint, args.out, workers=workers, config_path=args.config)
            return 0
        if args.verb == "ablate":
            return cmd_ablate(cfg, args.out, args.config, workers=workers)
        if args.verb == "filter-demo":
            return cmd_filter_demo(cfg, args.out)
        raise ConfigError(f"unknown verb {args.verb}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrainingDivergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
