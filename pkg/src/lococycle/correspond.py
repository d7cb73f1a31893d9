"""Robot-to-human / human-to-robot pose mappers and the correspondence reward.

Both mappers predict Gaussian means with a fixed covariance, so the log-density
reduces to a squared error. Poses are standardized per dimension with running
statistics and further scaled by 1/sqrt(dim), which puts an uninformative
reconstruction at a squared error of about 1 rather than ``dim``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nn import AdamState, DenseNet, ShapeError, adam_step
from .motion import POSE_DIM as HUMAN_DIM
from .sim.model import POSE_DIM as ROBOT_DIM


class RunningNorm:
    """Running mean/variance (parallel-merge update), frozen between updates."""

    def __init__(self, dim, scale=1.0, min_std=1e-2, clip=None):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 0.0
        self.scale = float(scale)
        self.min_std = float(min_std)
        self.clip = clip

    @property
    def dim(self):
        return self.mean.shape[0]

    def update(self, batch):
        batch = np.asarray(batch, dtype=np.float64).reshape(-1, self.dim)
        n = batch.shape[0]
        if n == 0:
            return
        b_mean = batch.mean(axis=0)
        b_var = batch.var(axis=0)
        if self.count == 0:
            self.mean, self.var, self.count = b_mean, b_var, float(n)
            return
        tot = self.count + n
        delta = b_mean - self.mean
        m2 = self.var * self.count + b_var * n + delta * delta * self.count * n / tot
        self.mean = self.mean + delta * n / tot
        self.var = m2 / tot
        self.count = tot

    @property
    def std(self):
        return np.maximum(np.sqrt(self.var), self.min_std)

    def normalize(self, x):
        y = (np.asarray(x, dtype=np.float64) - self.mean) / self.std * self.scale
        if self.clip is not None:
            y = np.clip(y, -self.clip, self.clip)
        return y

    def denormalize(self, y):
        return np.asarray(y) / self.scale * self.std + self.mean

    def to_dict(self):
        from ._codec import encode_array

        return {
            "mean": encode_array(self.mean),
            "var": encode_array(self.var),
            "count": self.count,
            "scale": self.scale,
            "min_std": self.min_std,
            "clip": self.clip,
        }

    @classmethod
    def from_dict(cls, d):
        from ._codec import decode_array

        n = cls(1, d["scale"], d["min_std"], d["clip"])
        n.mean = decode_array(d["mean"], "mean")
        n.var = decode_array(d["var"], "var")
        n.count = float(d["count"])
        return n


@dataclass
class MapperConfig:
    epochs: int = 4
    minibatch: int = 512
    lr: float = 1e-3
    hidden: tuple = (64, 64)
    w_r2h: float = 1.0
    w_cycle: float = 1.0


@dataclass
class MapperPair:
    r2h_net: DenseNet
    h2r_net: DenseNet
    human_norm: RunningNorm
    robot_norm: RunningNorm
    # fixed covariance of both Gaussians; cancels out of every loss and reward
    sigma: float = 1.0
    adam: AdamState = field(default=None)

    @classmethod
    def create(cls, rng, hidden=(64, 64), lr=1e-3, human_dim=HUMAN_DIM, robot_dim=ROBOT_DIM):
        r2h = DenseNet.create([robot_dim, *hidden, human_dim], rng, "relu")
        h2r = DenseNet.create([human_dim, *hidden, robot_dim], rng, "relu")
        pair = cls(
            r2h, h2r,
            RunningNorm(human_dim, scale=1.0 / math.sqrt(human_dim)),
            RunningNorm(robot_dim, scale=1.0 / math.sqrt(robot_dim)),
        )
        pair.adam = AdamState.for_params(pair.params(), learning_rate=lr)
        return pair

    def params(self):
        return self.r2h_net.params() + self.h2r_net.params()

    def update_stats(self, p_h, p_r):
        self.human_norm.update(p_h)
        self.robot_norm.update(p_r)

    def to_dict(self):
        return {
            "r2h_net": self.r2h_net.to_dict(),
            "h2r_net": self.h2r_net.to_dict(),
            "human_norm": self.human_norm.to_dict(),
            "robot_norm": self.robot_norm.to_dict(),
            "sigma": self.sigma,
            "adam": self.adam.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            DenseNet.from_dict(d["r2h_net"]),
            DenseNet.from_dict(d["h2r_net"]),
            RunningNorm.from_dict(d["human_norm"]),
            RunningNorm.from_dict(d["robot_norm"]),
            float(d["sigma"]),
            AdamState.from_dict(d["adam"]),
        )


def _check(x, dim, what):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != dim:
        raise ShapeError(f"{what} must have last dimension {dim}, got {x.shape}")
    return x


def r2h_predict(mapper, p_r):
    """Mean human pose predicted from a robot pose, in human pose units."""
    p_r = _check(p_r, mapper.r2h_net.n_in, "robot pose")
    return mapper.human_norm.denormalize(mapper.r2h_net.forward(mapper.robot_norm.normalize(p_r)))


def h2r_predict(mapper, p_h):
    """Mean robot pose predicted from a human pose, in robot pose units."""
    p_h = _check(p_h, mapper.h2r_net.n_in, "human pose")
    return mapper.robot_norm.denormalize(mapper.h2r_net.forward(mapper.human_norm.normalize(p_h)))


def reconstruction_errors(mapper, p_h, p_r):
    """Per-sample squared errors (r2h, cycle) in standardized pose space."""
    p_h = _check(p_h, mapper.r2h_net.n_out, "human pose")
    p_r = _check(p_r, mapper.r2h_net.n_in, "robot pose")
    x = mapper.robot_norm.normalize(p_r)
    y_true = mapper.human_norm.normalize(p_h)
    y = mapper.r2h_net.forward(x)
    z = mapper.h2r_net.forward(y)
    e_r2h = np.sum((y_true - y) ** 2, axis=-1)
    e_cyc = np.sum((x - z) ** 2, axis=-1)
    return e_r2h, e_cyc


def correspondence_reward(mapper, p_h, p_r):
    e_r2h, e_cyc = reconstruction_errors(mapper, p_h, p_r)
    return np.exp(-e_r2h - e_cyc)


def r2h_only_reward(mapper, p_h, p_r):
    e_r2h, _ = reconstruction_errors(mapper, p_h, p_r)
    return np.exp(-e_r2h)


def reward_from_errors(e_r2h, e_cycle):
    return math.exp(-e_r2h - e_cycle)


def _loss_and_grads(mapper, y_true, x, w_r2h=1.0, w_cycle=1.0, need_grads=True):
    """Losses on standardized batches; gradients flow through the composition."""
    b = x.shape[0]
    y, c_r2h = mapper.r2h_net.forward(x, keep_cache=True)
    z, c_h2r = mapper.h2r_net.forward(y, keep_cache=True)
    e1 = y_true - y
    e2 = x - z
    l_r2h = float(np.sum(e1 * e1) / b)
    l_cycle = float(np.sum(e2 * e2) / b)
    l_total = w_r2h * l_r2h + w_cycle * l_cycle
    if not need_grads:
        return (l_r2h, l_cycle, l_total), None
    g_h2r, g_y_cycle = mapper.h2r_net.backward(c_h2r, (-2.0 * w_cycle / b) * e2)
    g_r2h, _ = mapper.r2h_net.backward(c_r2h, (-2.0 * w_r2h / b) * e1 + g_y_cycle)
    return (l_r2h, l_cycle, l_total), g_r2h + g_h2r


def cycle_loss(mapper, p_h, p_r, w_r2h=1.0, w_cycle=1.0):
    """(l_r2h, l_cycle, l_total) as batch means of squared errors."""
    p_h = np.atleast_2d(_check(p_h, mapper.r2h_net.n_out, "human pose"))
    p_r = np.atleast_2d(_check(p_r, mapper.r2h_net.n_in, "robot pose"))
    if p_h.shape[0] == 0 or p_h.shape[0] != p_r.shape[0]:
        raise ValueError("mapper batch must be non-empty with paired rows")
    losses, _ = _loss_and_grads(
        mapper, mapper.human_norm.normalize(p_h), mapper.robot_norm.normalize(p_r), w_r2h, w_cycle, False
    )
    return losses


def cycle_loss_grads(mapper, p_h, p_r, w_r2h=1.0, w_cycle=1.0):
    """Gradients of l_total w.r.t. ``mapper.params()``."""
    return _loss_and_grads(
        mapper, mapper.human_norm.normalize(p_h), mapper.robot_norm.normalize(p_r), w_r2h, w_cycle
    )


def update_mappers(mapper, p_h, p_r, cfg, rng):
    """Minibatch Adam on the cycle loss; returns per-epoch full-batch losses.

    Each trace entry is ``(l_r2h, l_cycle, l_total)`` evaluated on the whole
    buffer after the epoch. A non-finite loss aborts the update and sets
    ``aborted`` in the returned dict.
    """
    p_h = np.asarray(p_h, dtype=np.float64).reshape(-1, mapper.r2h_net.n_out)
    p_r = np.asarray(p_r, dtype=np.float64).reshape(-1, mapper.r2h_net.n_in)
    n = p_h.shape[0]
    if n == 0 or n != p_r.shape[0]:
        raise ValueError("mapper update needs a non-empty paired buffer")
    y_all = mapper.human_norm.normalize(p_h)
    x_all = mapper.robot_norm.normalize(p_r)
    params = mapper.params()
    mb = min(cfg.minibatch, n)
    trace = []
    aborted = False
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n - mb + 1, mb):
            idx = perm[start:start + mb]
            (l1, l2, lt), grads = _loss_and_grads(mapper, y_all[idx], x_all[idx], cfg.w_r2h, cfg.w_cycle)
            if not math.isfinite(lt):
                aborted = True
                break
            adam_step(params, grads, mapper.adam)
        if aborted:
            break
        losses, _ = _loss_and_grads(mapper, y_all, x_all, cfg.w_r2h, cfg.w_cycle, False)
        trace.append(losses)
    return {"trace": trace, "aborted": aborted}
