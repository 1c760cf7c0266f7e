"""On-policy rollout collection across a set of episode environments.

The collector batches actor/critic forward passes across envs each tick
and steps the envs sequentially (single-worker mode is bit-deterministic;
env rng streams are private, so multi-worker variants stay per-episode
reproducible). The critic consumes only the privileged vectors; the actor
only the degraded observation vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .ppo import MlpPolicy, PpoConfig, RolloutBuffer, act_batch
from .simenv import SimEnv


@dataclass
class RolloutSummary:
    episodes: int
    successes: int
    collisions: int
    timeouts: int
    mean_return: float
    mean_terms: np.ndarray  # (7,) unweighted term means

    @property
    def success_rate(self) -> float:
        return self.successes / self.episodes if self.episodes else 0.0


def collect_rollouts(
    envs: Sequence[SimEnv],
    policy: MlpPolicy,
    shield_enabled: bool,
    cfg: PpoConfig,
    reset: bool = True,
) -> tuple[RolloutBuffer, RolloutSummary]:
    """Step every env for rollout_length policy ticks and fill a buffer.

    Episodes that end mid-rollout are reset in place with their done flag
    recorded, so the advantage recursion never bootstraps across episode
    boundaries. The shield is meant for evaluation; training runs leave it
    off.
    """
    n = len(envs)
    T = cfg.rollout_length
    if n != cfg.num_envs:
        raise ValueError(f"expected {cfg.num_envs} envs, got {n}")

    if reset:
        for env in envs:
            env.reset()
    obs_vecs, priv_vecs = zip(*(env.observe() for env in envs))
    obs_dim = obs_vecs[0].size
    priv_dim = priv_vecs[0].size

    buf = RolloutBuffer(
        obs=np.zeros((T, n, obs_dim)),
        priv=np.zeros((T, n, priv_dim)),
        z=np.zeros((T, n, 4)),
        log_probs=np.zeros((T, n)),
        rewards=np.zeros((T, n)),
        values=np.zeros((T, n)),
        dones=np.zeros((T, n), dtype=bool),
        last_values=np.zeros(n),
        reward_terms=np.zeros((T, n, 7)),
    )

    episodes = successes = collisions = timeouts = 0
    ep_returns: List[float] = []
    running_return = np.zeros(n)

    obs_mat = np.stack(obs_vecs)
    priv_mat = np.stack(priv_vecs)
    for t in range(T):
        buf.obs[t] = obs_mat
        buf.priv[t] = priv_mat
        buf.values[t] = policy.value(priv_mat)

        for i, env in enumerate(envs):
            cmds, logp, z = act_batch(policy, obs_mat[i : i + 1], False, env.rng)
            buf.z[t, i] = z[0]
            buf.log_probs[t, i] = logp[0]
            result = env.step(cmds[0], shield_enabled=shield_enabled)
            buf.rewards[t, i] = result.breakdown.total
            buf.reward_terms[t, i] = result.breakdown.terms()
            buf.dones[t, i] = result.done
            running_return[i] += result.breakdown.total
            if result.done:
                episodes += 1
                successes += result.outcome == "success"
                collisions += result.outcome == "collision"
                timeouts += result.outcome == "timeout"
                ep_returns.append(float(running_return[i]))
                running_return[i] = 0.0
                env.reset()

        obs_vecs, priv_vecs = zip(*(env.observe() for env in envs))
        obs_mat = np.stack(obs_vecs)
        priv_mat = np.stack(priv_vecs)

    buf.last_values = policy.value(priv_mat)
    summary = RolloutSummary(
        episodes=episodes,
        successes=successes,
        collisions=collisions,
        timeouts=timeouts,
        mean_return=float(np.mean(ep_returns)) if ep_returns else float(running_return.mean()),
        mean_terms=buf.reward_terms.mean(axis=(0, 1)),
    )
    return buf, summary
