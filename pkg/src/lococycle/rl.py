"""Clip-conditioned PPO: Gaussian policy, value net, GAE and the clipped update."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._codec import decode_array, encode_array
from .nn import (
    LOG_STD_MAX, LOG_STD_MIN, AdamState, DenseNet, ShapeError, adam_step, clip_grad_norm,
    gaussian_entropy, gaussian_log_prob,
)


@dataclass
class PPOConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_ratio: float = 0.2
    epochs: int = 4
    minibatches: int = 4
    lr: float = 3e-4
    value_coef: float = 0.5
    entropy_coef: float = 0.005
    max_grad_norm: float = 1.0
    num_envs: int = 64
    horizon: int = 64
    hidden: tuple = (128, 128)
    init_log_std: float = -0.5

    def validate(self):
        errs = []
        if not 0 <= self.gamma < 1:
            errs.append("ppo.gamma must lie in [0, 1)")
        if not 0 <= self.lam < 1:
            errs.append("ppo.lam must lie in [0, 1)")
        if not self.clip_ratio > 0:
            errs.append("ppo.clip_ratio must be positive")
        for name in ("epochs", "minibatches", "num_envs", "horizon"):
            if int(getattr(self, name)) < 1:
                errs.append(f"ppo.{name} must be >= 1")
        if not self.lr > 0:
            errs.append("ppo.lr must be positive")
        return errs


@dataclass
class PolicyNet:
    net: DenseNet
    log_std: np.ndarray

    @classmethod
    def create(cls, obs_dim, act_dim, rng, hidden=(128, 128), init_log_std=-0.5):
        net = DenseNet.create([obs_dim, *hidden, act_dim], rng, "elu", output_gain=0.01)
        return cls(net, np.full(act_dim, float(init_log_std)))

    def params(self):
        return self.net.params() + [self.log_std]

    def mean(self, obs):
        return self.net.forward(obs)

    def to_dict(self):
        return {"net": self.net.to_dict(), "log_std": encode_array(self.log_std)}

    @classmethod
    def from_dict(cls, d):
        return cls(DenseNet.from_dict(d["net"]), decode_array(d["log_std"], "log_std"))


@dataclass
class ValueNet:
    net: DenseNet

    @classmethod
    def create(cls, obs_dim, rng, hidden=(128, 128)):
        return cls(DenseNet.create([obs_dim, *hidden, 1], rng, "elu", output_gain=1.0))

    def params(self):
        return self.net.params()

    def __call__(self, obs):
        return self.net.forward(obs)[..., 0]

    def to_dict(self):
        return {"net": self.net.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(DenseNet.from_dict(d["net"]))


class NonFiniteOutput(RuntimeError):
    pass


def _noise(rng, shape):
    # one generator per row keeps each environment's stream independent of the batch
    if isinstance(rng, (list, tuple)):
        if len(rng) != shape[0]:
            raise ShapeError("need one generator per batch row")
        return np.stack([g.standard_normal(shape[1:]) for g in rng])
    return rng.standard_normal(shape)


def policy_act(policy, value, obs, rng=None, deterministic=False):
    """Returns ``(action, log_prob, value)`` for a single obs or a batch."""
    obs = np.asarray(obs, dtype=np.float64)
    mean = policy.mean(obs)
    v = value(obs) if value is not None else None
    if not np.all(np.isfinite(mean)):
        raise NonFiniteOutput("policy produced a non-finite action mean")
    ls = np.clip(policy.log_std, LOG_STD_MIN, LOG_STD_MAX)
    if deterministic:
        action = mean.copy()
    else:
        action = mean + np.exp(ls) * _noise(rng, mean.shape)
    return action, gaussian_log_prob(mean, np.broadcast_to(ls, mean.shape), action), v


def compute_gae(rewards, values, bootstrap_value, dones, gamma, lam):
    """Reverse-recursion GAE over the leading (time) axis.

    ``dones[t]`` marks that the episode ended after step t, so nothing from
    t+1 onward leaks into earlier advantages.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    if rewards.shape != values.shape or rewards.shape != dones.shape:
        raise ShapeError("rewards, values and dones must share a shape")
    adv = np.zeros_like(rewards)
    last = np.zeros_like(rewards[0])
    next_v = np.asarray(bootstrap_value, dtype=np.float64) * np.ones_like(rewards[0])
    for t in range(rewards.shape[0] - 1, -1, -1):
        nonterm = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_v * nonterm - values[t]
        last = delta + gamma * lam * nonterm * last
        adv[t] = last
        next_v = values[t]
    return adv, adv + values


def normalize_advantages(adv):
    adv = np.asarray(adv, dtype=np.float64)
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def clipped_surrogate(ratio, adv, clip_ratio):
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio) * adv)


@dataclass
class PPOBatch:
    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self):
        return self.obs.shape[0]


@dataclass
class PPOOptimizers:
    policy: AdamState
    value: AdamState

    @classmethod
    def create(cls, policy, value, lr):
        return cls(AdamState.for_params(policy.params(), lr), AdamState.for_params(value.params(), lr))

    def to_dict(self):
        return {"policy": self.policy.to_dict(), "value": self.value.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(AdamState.from_dict(d["policy"]), AdamState.from_dict(d["value"]))


def policy_loss_and_grads(policy, obs, actions, old_logp, adv, clip_ratio, entropy_coef):
    """Clipped-surrogate loss (to minimize) and its gradients w.r.t. policy.params()."""
    b = obs.shape[0]
    mean, cache = policy.net.forward(obs, keep_cache=True)
    ls = policy.log_std
    inv_var = np.exp(-2.0 * ls)
    logp = gaussian_log_prob(mean, np.broadcast_to(ls, mean.shape), actions)
    ratio = np.exp(logp - old_logp)
    surr = clipped_surrogate(ratio, adv, clip_ratio)
    entropy = gaussian_entropy(ls)
    loss = -float(np.mean(surr)) - entropy_coef * entropy
    # d surr / d logp is ratio*adv where the unclipped branch is active, else 0
    inside = (ratio >= 1.0 - clip_ratio) & (ratio <= 1.0 + clip_ratio)
    active = (ratio * adv <= np.clip(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio) * adv) | inside
    g_logp = np.where(active, -ratio * adv / b, 0.0)
    diff = actions - mean
    g_mean = g_logp[:, None] * diff * inv_var
    g_ls = np.sum(g_logp[:, None] * (diff * diff * inv_var - 1.0), axis=0) - entropy_coef
    net_grads, _ = policy.net.backward(cache, g_mean)
    stats = {
        "ratio": ratio,
        "entropy": entropy,
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > clip_ratio)),
        "approx_kl": float(np.mean((ratio - 1.0) - (logp - old_logp))),
    }
    return loss, net_grads + [g_ls], stats


def value_loss_and_grads(value, obs, returns, value_coef):
    b = obs.shape[0]
    out, cache = value.net.forward(obs, keep_cache=True)
    err = out[:, 0] - returns
    loss = value_coef * float(np.mean(err * err))
    grads, _ = value.net.backward(cache, (2.0 * value_coef / b * err)[:, None])
    return loss, grads


def ppo_update(policy, value, batch, cfg, optim, rng):
    """Run cfg.epochs x cfg.minibatches clipped-surrogate updates; returns stats."""
    n = len(batch)
    adv_all = normalize_advantages(batch.advantages)
    mb = max(1, n // cfg.minibatches)
    p_params, v_params = policy.params(), value.params()
    acc = {"policy_loss": [], "value_loss": [], "entropy": [], "clip_fraction": [], "approx_kl": []}
    skipped = 0
    first_ratio_dev = None
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        for k in range(cfg.minibatches):
            idx = perm[k * mb:(k + 1) * mb] if k < cfg.minibatches - 1 else perm[k * mb:]
            if idx.size == 0:
                continue
            pl, pg, st = policy_loss_and_grads(
                policy, batch.obs[idx], batch.actions[idx], batch.log_probs[idx], adv_all[idx],
                cfg.clip_ratio, cfg.entropy_coef,
            )
            vl, vg = value_loss_and_grads(value, batch.obs[idx], batch.returns[idx], cfg.value_coef)
            if first_ratio_dev is None:
                first_ratio_dev = float(np.mean(np.abs(st["ratio"] - 1.0)))
            if not (math.isfinite(pl) and math.isfinite(vl)):
                skipped += 1
                continue
            clip_grad_norm(pg, cfg.max_grad_norm)
            clip_grad_norm(vg, cfg.max_grad_norm)
            ok_p = adam_step(p_params, pg, optim.policy)
            ok_v = adam_step(v_params, vg, optim.value)
            if not (ok_p and ok_v):
                skipped += 1
            np.clip(policy.log_std, LOG_STD_MIN, LOG_STD_MAX, out=policy.log_std)
            acc["policy_loss"].append(pl)
            acc["value_loss"].append(vl)
            acc["entropy"].append(st["entropy"])
            acc["clip_fraction"].append(st["clip_fraction"])
            acc["approx_kl"].append(st["approx_kl"])
    stats = {k: float(np.mean(v)) if v else float("nan") for k, v in acc.items()}
    stats["skipped_minibatches"] = skipped
    stats["first_ratio_dev"] = first_ratio_dev
    return stats


@dataclass
class RolloutBuffer:
    """Time-major (H, E, ...) storage for one collection phase."""

    horizon: int
    num_envs: int
    obs_dim: int
    act_dim: int = 8
    human_dim: int = 8
    robot_dim: int = 10
    arrays: dict = field(default_factory=dict)
    size: int = 0

    def __post_init__(self):
        if not self.arrays:
            self.clear()

    def clear(self):
        H, E = self.horizon, self.num_envs
        spec = {
            "obs": (self.obs_dim,), "raw_obs": (self.obs_dim,), "actions": (self.act_dim,),
            "applied_actions": (self.act_dim,), "log_probs": (), "values": (), "rewards": (),
            "bootstrap": (), "dones": (), "falls": (), "r_cpd": (), "r_cpd_r2h": (), "r_cpd_term": (),
            "r_root": (), "r_tor": (), "r_lim": (), "w_cpd": (), "w_root": (), "w_tor": (), "w_lim": (),
            "p_h": (self.human_dim,), "p_r": (self.robot_dim,), "clip_ids": (), "frames": (),
        }
        self.arrays = {k: np.zeros((H, E) + s) for k, s in spec.items()}
        self.size = 0

    def __getitem__(self, key):
        return self.arrays[key]

    def add(self, t, **rows):
        for k, v in rows.items():
            self.arrays[k][t] = v
        self.size = max(self.size, (t + 1) * self.num_envs)

    def flat(self, key):
        a = self.arrays[key]
        return a.reshape((-1,) + a.shape[2:])

    def __len__(self):
        return self.size
