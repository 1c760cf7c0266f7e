"""PPO with a tanh-squashed Gaussian actor and a privileged critic.

The actor maps the noisy observation vector to (mean, log-std) of a
diagonal Gaussian in pre-squash space; samples pass through tanh and an
affine rescale onto the command bounds, so every emitted command satisfies
the attitude-command invariants by construction and log-probabilities are
exact (change-of-variables included). The critic sees the privileged
noise-free vector only. Updates are clipped-surrogate minibatch SGD (Adam)
with per-minibatch advantage normalization; everything is numpy float64
and bit-deterministic for a fixed seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from ..dynamics import AttitudeCommand
from .network import Adam, Mlp, clip_grad_norm

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
_LOG_2PI = float(np.log(2.0 * np.pi))


class TrainingDivergence(RuntimeError):
    """Non-finite loss; the policy retains its last good parameters."""


@dataclass(frozen=True)
class PpoConfig:
    discount: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    epochs_per_update: int = 4
    minibatch_size: int = 256
    learning_rate: float = 3e-4
    entropy_coeff: float = 3e-3
    value_coeff: float = 0.5
    rollout_length: int = 128
    num_envs: int = 8
    seed: int = 0
    iterations: int = 40
    hidden_sizes: Tuple[int, ...] = (64, 64)
    log_std_init: float = -0.5
    max_grad_norm: float = 0.5
    action_repeat: int = 4  # policy ticks per action; dynamics stay at 100 Hz

    def __post_init__(self):
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if self.clip_epsilon <= 0 or self.minibatch_size < 1 or self.epochs_per_update < 1:
            raise ValueError("bad clip/minibatch/epoch settings")
        if self.rollout_length < 1 or self.num_envs < 1 or self.action_repeat < 1:
            raise ValueError("rollout_length, num_envs, action_repeat must be >= 1")


class MlpPolicy:
    """Actor-critic pair with disjoint parameters and command bounds."""

    def __init__(self, actor: Mlp, critic: Mlp, f_max: float, tilt_max: float, seed: int):
        self.actor = actor
        self.critic = critic
        self.f_max = f_max
        self.tilt_max = tilt_max
        self.seed = seed

    @classmethod
    def create(
        cls,
        obs_dim: int,
        priv_dim: int,
        cfg: PpoConfig,
        f_max: float,
        tilt_max: float,
        hover_thrust: Optional[float] = 9.81,
    ) -> "MlpPolicy":
        actor = Mlp(obs_dim, cfg.hidden_sizes, 8, np.random.default_rng(cfg.seed), head_gain=0.01)
        actor.biases[-1][4:] = cfg.log_std_init
        if hover_thrust is not None:
            # bias the initial mean command to hover instead of 1.25 g
            frac = np.clip(2.0 * hover_thrust / f_max - 1.0, -0.99, 0.99)
            actor.biases[-1][0] = np.arctanh(frac)
        critic = Mlp(priv_dim, cfg.hidden_sizes, 1, np.random.default_rng(cfg.seed + 1), head_gain=1.0)
        return cls(actor, critic, f_max, tilt_max, cfg.seed)

    # -- distribution plumbing ------------------------------------------------

    def command_scales(self) -> np.ndarray:
        """d command / d tanh-output per dimension."""
        return np.array([self.f_max / 2.0, self.tilt_max, self.tilt_max, np.pi])

    def squash(self, u: np.ndarray) -> np.ndarray:
        """Map tanh outputs in (-1, 1)^4 onto command space."""
        out = np.empty_like(u)
        out[..., 0] = (u[..., 0] + 1.0) / 2.0 * self.f_max
        out[..., 1] = u[..., 1] * self.tilt_max
        out[..., 2] = u[..., 2] * self.tilt_max
        out[..., 3] = u[..., 3] * np.pi
        return out

    def actor_stats(self, obs: np.ndarray):
        out, cache = self.actor.forward(np.atleast_2d(obs))
        mean = out[:, :4]
        raw = out[:, 4:]
        log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std, raw, cache

    def log_prob(self, mean: np.ndarray, log_std: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Exact log density of the squashed command reconstructed from the
        pre-squash sample z (batched): Gaussian density minus the tanh and
        affine-rescale change-of-variables terms."""
        std = np.exp(log_std)
        zn = (z - mean) / std
        gauss = -0.5 * np.sum(zn**2, axis=1) - np.sum(log_std, axis=1) - 2.0 * _LOG_2PI
        # log(1 - tanh(z)^2) = 2 (log 2 - z - softplus(-2z)), numerically safe
        log1m = 2.0 * (np.log(2.0) - z - np.logaddexp(0.0, -2.0 * z))
        return gauss - np.sum(log1m, axis=1) - float(np.sum(np.log(self.command_scales())))

    def value(self, priv: np.ndarray) -> np.ndarray:
        return self.critic(np.atleast_2d(priv))[:, 0]


def act(
    policy: MlpPolicy,
    obs,
    deterministic: bool,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[AttitudeCommand, float]:
    """Sample (or take the mode of) the policy at one observation."""
    vec = obs.vector() if hasattr(obs, "vector") else np.asarray(obs, dtype=float)
    cmds, logps, _ = act_batch(policy, vec[None, :], deterministic, rng)
    return cmds[0], float(logps[0])


def act_batch(
    policy: MlpPolicy,
    obs: np.ndarray,
    deterministic: bool,
    rng: Optional[np.random.Generator],
):
    """Vectorized sampling across a batch of observations.

    Returns (commands, log_probs, z) with z the pre-squash Gaussian sample
    (needed to recompute densities exactly during updates).
    """
    mean, log_std, _, _ = policy.actor_stats(obs)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(log_std))):
        raise FloatingPointError("non-finite actor output")
    if deterministic:
        z = mean.copy()
    else:
        if rng is None:
            raise ValueError("sampling requires an rng")
        z = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    u = np.tanh(z)
    cmds_arr = policy.squash(u)
    logp = policy.log_prob(mean, log_std, z)
    cmds = [AttitudeCommand.from_array(row) for row in cmds_arr]
    return cmds, logp, z


@dataclass
class RolloutBuffer:
    """(rollout_length x num_envs) arrays collected on-policy.

    advantages/returns stay None until compute_gae fills them; updates must
    not run before that.
    """

    obs: np.ndarray  # (T, N, obs_dim)
    priv: np.ndarray  # (T, N, priv_dim)
    z: np.ndarray  # (T, N, 4) pre-squash samples
    log_probs: np.ndarray  # (T, N)
    rewards: np.ndarray  # (T, N)
    values: np.ndarray  # (T, N)
    dones: np.ndarray  # (T, N) bool
    last_values: np.ndarray  # (N,) bootstrap for the step after the rollout
    reward_terms: np.ndarray  # (T, N, 7) unweighted term values
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.rewards.shape[0] * self.rewards.shape[1]


def compute_gae(buffer: RolloutBuffer, cfg: PpoConfig) -> RolloutBuffer:
    """Generalized advantage estimation with terminal bootstrap masking.

    done[t] marks that the step ended an episode: the value beyond it is
    not bootstrapped. returns = advantages + values.
    """
    T, N = buffer.rewards.shape
    adv = np.zeros((T, N))
    next_adv = np.zeros(N)
    next_value = buffer.last_values
    for t in reversed(range(T)):
        cont = 1.0 - buffer.dones[t].astype(float)
        delta = buffer.rewards[t] + cfg.discount * next_value * cont - buffer.values[t]
        next_adv = delta + cfg.discount * cfg.gae_lambda * cont * next_adv
        adv[t] = next_adv
        next_value = buffer.values[t]
    buffer.advantages = adv
    buffer.returns = adv + buffer.values
    return buffer


@dataclass(frozen=True)
class TrainStats:
    policy_loss: float
    value_loss: float
    entropy: float
    approx_kl: float
    clip_fraction: float
    grad_norm: float


def _loss_and_grads(policy: MlpPolicy, obs, priv, z, logp_old, adv, ret, cfg: PpoConfig):
    """Clipped-surrogate + value + entropy loss with analytic gradients.

    Returns (loss, actor_grads, critic_grads, stats_dict). Pure function of
    the parameters and the batch; the finite-difference correctness test
    drives this directly.
    """
    B = obs.shape[0]
    mean, log_std, raw, cache_a = policy.actor_stats(obs)
    std = np.exp(log_std)
    zn = (z - mean) / std
    logp = policy.log_prob(mean, log_std, z)
    ratio = np.exp(logp - logp_old)

    surr1 = ratio * adv
    clipped_ratio = np.clip(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon)
    surr2 = clipped_ratio * adv
    use_unclipped = surr1 <= surr2
    policy_loss = -float(np.minimum(surr1, surr2).mean())

    entropy_per = np.sum(log_std, axis=1) + 2.0 * (1.0 + _LOG_2PI)
    entropy = float(entropy_per.mean())

    v = policy.critic.forward(priv)
    values, cache_c = v[0][:, 0], v[1]
    verr = values - ret
    value_loss = 0.5 * float(np.mean(verr**2))

    loss = policy_loss + cfg.value_coeff * value_loss - cfg.entropy_coeff * entropy
    if not np.isfinite(loss):
        raise TrainingDivergence(f"non-finite loss {loss}")

    # d loss / d logp, through the unclipped branch only
    dlogp = np.where(use_unclipped, -adv * ratio, 0.0) / B
    grad_mean = dlogp[:, None] * (zn / std)
    grad_log_std = dlogp[:, None] * (zn**2 - 1.0)
    grad_log_std -= cfg.entropy_coeff / B  # entropy bonus, d entropy / d log_std = 1
    grad_log_std *= (raw > LOG_STD_MIN) & (raw < LOG_STD_MAX)  # clip gate
    actor_grads_w, actor_grads_b = policy.actor.backward(
        cache_a, np.concatenate([grad_mean, grad_log_std], axis=1)
    )

    critic_out_grad = (cfg.value_coeff * verr / B)[:, None]
    critic_grads_w, critic_grads_b = policy.critic.backward(cache_c, critic_out_grad)

    stats = {
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": entropy,
        "approx_kl": float(np.mean(logp_old - logp)),
        "clip_fraction": float(np.mean(~use_unclipped)),
        "surrogate": float(np.minimum(surr1, surr2).mean()),
        "ratio_mean": float(ratio.mean()),
    }

    def interleave(ws, bs):
        out: List[np.ndarray] = []
        for w_, b_ in zip(ws, bs):
            out.extend([w_, b_])
        return out

    return loss, interleave(actor_grads_w, actor_grads_b), interleave(critic_grads_w, critic_grads_b), stats


def ppo_update(
    policy: MlpPolicy,
    buffer: RolloutBuffer,
    cfg: PpoConfig,
    rng: Optional[np.random.Generator] = None,
    optimizer: Optional[Adam] = None,
) -> TrainStats:
    """One PPO update: epochs of shuffled minibatches over the buffer.

    Advantages are normalized per minibatch (eps 1e-8). On a non-finite
    loss the parameters are rolled back to their pre-update snapshot and
    TrainingDivergence propagates.
    """
    if buffer.advantages is None or buffer.returns is None:
        raise ValueError("compute_gae must run before ppo_update")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)

    T, N = buffer.rewards.shape
    B = T * N
    obs = buffer.obs.reshape(B, -1)
    priv = buffer.priv.reshape(B, -1)
    z = buffer.z.reshape(B, 4)
    logp_old = buffer.log_probs.reshape(B)
    adv_all = buffer.advantages.reshape(B)
    ret = buffer.returns.reshape(B)

    params = policy.actor.parameters() + policy.critic.parameters()
    snapshot = [p.copy() for p in params]
    if optimizer is None:
        optimizer = Adam(params, cfg.learning_rate)

    agg = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "approx_kl": 0.0, "clip_fraction": 0.0}
    grad_norm = 0.0
    n_batches = 0
    try:
        for _ in range(cfg.epochs_per_update):
            perm = rng.permutation(B)
            for start in range(0, B, cfg.minibatch_size):
                idx = perm[start : start + cfg.minibatch_size]
                adv = adv_all[idx]
                adv = (adv - adv.mean()) / (adv.std() + 1e-8)
                loss, ga, gc, stats = _loss_and_grads(
                    policy, obs[idx], priv[idx], z[idx], logp_old[idx], adv, ret[idx], cfg
                )
                grads = ga + gc
                grad_norm = clip_grad_norm(grads, cfg.max_grad_norm)
                optimizer.step(grads)
                for k in agg:
                    agg[k] += stats[k]
                n_batches += 1
    except TrainingDivergence:
        for p, s in zip(params, snapshot):
            p[...] = s
        raise

    for k in agg:
        agg[k] /= max(1, n_batches)
    return TrainStats(grad_norm=grad_norm, **agg)


# -- checkpoint blob ----------------------------------------------------------

_CKPT_MAGIC = b"SNCK"
_CKPT_VERSION = 1


def save_checkpoint(path, policy: MlpPolicy, iteration: int) -> None:
    """Versioned header (layer sizes, seed, iteration, bounds) + flat f64
    parameters, actor then critic, little-endian."""
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", _CKPT_VERSION))
        fh.write(struct.pack("<qq", policy.seed, iteration))
        fh.write(struct.pack("<dd", policy.f_max, policy.tilt_max))
        for net in (policy.actor, policy.critic):
            fh.write(struct.pack("<I", len(net.sizes)))
            fh.write(struct.pack(f"<{len(net.sizes)}q", *net.sizes))
        for net in (policy.actor, policy.critic):
            fh.write(net.flat_parameters().astype("<f8").tobytes())


def load_checkpoint(path) -> Tuple[MlpPolicy, int]:
    with open(path, "rb") as fh:
        if fh.read(4) != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a policy checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        seed, iteration = struct.unpack("<qq", fh.read(16))
        f_max, tilt_max = struct.unpack("<dd", fh.read(16))
        sizes = []
        for _ in range(2):
            (n,) = struct.unpack("<I", fh.read(4))
            sizes.append(list(struct.unpack(f"<{n}q", fh.read(8 * n))))
        actor_sizes, critic_sizes = sizes
        rng = np.random.default_rng(0)
        actor = Mlp(actor_sizes[0], actor_sizes[1:-1], actor_sizes[-1], rng)
        critic = Mlp(critic_sizes[0], critic_sizes[1:-1], critic_sizes[-1], rng)
        for net in (actor, critic):
            n = net.flat_parameters().size
            blob = np.frombuffer(fh.read(8 * n), dtype="<f8")
            if blob.size != n:
                raise ValueError(f"{path}: truncated parameter blob")
            net.set_flat_parameters(blob.copy())
    return MlpPolicy(actor, critic, f_max, tilt_max, int(seed)), int(iteration)
