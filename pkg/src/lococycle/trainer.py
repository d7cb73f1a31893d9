"""Training orchestration: collect -> PPO update -> mapper update -> clear buffer.

Everything needed to continue a run bit-exactly (networks, optimizer moments,
normalization statistics, environment states and every random stream) lives
in :class:`RunState` and round-trips through the checkpoint file.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass

import numpy as np

from . import sim
from ._codec import decode_array, encode_array
from .config import TrainConfig, config_from_dict
from .correspond import MapperPair, RunningNorm, reconstruction_errors, update_mappers
from .motion import FEATURE_DIM, MotionDataset, load_dataset, normalize_root_trajectory, sample_clip
from .reward import limit_penalty, root_reward, torque_penalty, total_reward
from .rl import (
    PolicyNet, PPOBatch, PPOOptimizers, RolloutBuffer, ValueNet, compute_gae, policy_act, ppo_update,
)
from .sim.model import N_JOINTS, OBS_DIM, POSE_DIM, STATE_DIM, VX, X, RobotModel

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "lococycle-checkpoint"
CHECKPOINT_VERSION = 1
POLICY_IN = OBS_DIM + FEATURE_DIM
LOG_COLUMNS = (
    "iteration", "r_total", "r_cpd", "r_cpd_term", "r_root", "r_tor", "r_lim",
    "l_r2h", "l_cycle", "l_total", "policy_loss", "value_loss", "entropy",
    "clip_fraction", "approx_kl", "fall_rate", "episodes", "events",
)
STEP_COLUMNS = (
    "iteration", "t", "env", "clip", "frame", "r_cpd", "r_cpd_term", "r_root", "r_tor", "r_lim",
    "r_total", "w_cpd", "w_root", "w_tor", "w_lim",
)


class CheckpointError(ValueError):
    pass


class PackedDataset:
    """Clip tables concatenated so per-env lookups are single fancy-index gathers."""

    def __init__(self, dataset, root_scale):
        self.dataset = dataset
        self.lengths = np.array([len(c) for c in dataset.clips])
        self.offsets = np.concatenate([[0], np.cumsum(self.lengths)[:-1]])
        self.features = np.concatenate([c.feature_table for c in dataset.clips])
        self.poses = np.concatenate([c.poses for c in dataset.clips])
        tracks = [normalize_root_trajectory(c, root_scale) for c in dataset.clips]
        self.root_track = np.concatenate([np.column_stack(t) for t in tracks])

    def index(self, clip_ids, frames):
        return self.offsets[clip_ids] + frames


@dataclass
class RunState:
    policy: PolicyNet
    value: ValueNet
    mapper: MapperPair
    optim: PPOOptimizers
    obs_norm: RunningNorm
    iteration: int
    rng: np.random.Generator
    env_rngs: list
    env_states: np.ndarray  # (E, 30)
    clip_ids: np.ndarray  # (E,)
    frames: np.ndarray  # (E,)

    def to_dict(self):
        return {
            "policy": self.policy.to_dict(),
            "value": self.value.to_dict(),
            "mapper": self.mapper.to_dict(),
            "optim": self.optim.to_dict(),
            "obs_norm": self.obs_norm.to_dict(),
            "iteration": self.iteration,
            "rng": self.rng.bit_generator.state,
            "env_rngs": [g.bit_generator.state for g in self.env_rngs],
            "env_states": encode_array(self.env_states),
            "clip_ids": [int(c) for c in self.clip_ids],
            "frames": [int(f) for f in self.frames],
        }

    @classmethod
    def from_dict(cls, d):
        def gen(state):
            g = np.random.Generator(np.random.PCG64())
            g.bit_generator.state = state
            return g

        return cls(
            PolicyNet.from_dict(d["policy"]),
            ValueNet.from_dict(d["value"]),
            MapperPair.from_dict(d["mapper"]),
            PPOOptimizers.from_dict(d["optim"]),
            RunningNorm.from_dict(d["obs_norm"]),
            int(d["iteration"]),
            gen(d["rng"]),
            [gen(s) for s in d["env_rngs"]],
            decode_array(d["env_states"], "env_states"),
            np.array(d["clip_ids"], dtype=np.int64),
            np.array(d["frames"], dtype=np.int64),
        )


def env_rng(seed, env_index):
    return np.random.default_rng([seed, env_index])


def init_run_state(cfg, dataset, model=None):
    model = model or RobotModel()
    rng = np.random.default_rng(cfg.seed)
    policy = PolicyNet.create(POLICY_IN, N_JOINTS, rng, cfg.ppo.hidden, cfg.ppo.init_log_std)
    value = ValueNet.create(POLICY_IN, rng, cfg.ppo.hidden)
    mapper = MapperPair.create(rng, cfg.mapper.hidden, cfg.mapper.lr)
    optim = PPOOptimizers.create(policy, value, cfg.ppo.lr)
    E = cfg.ppo.num_envs
    env_rngs = [env_rng(cfg.seed, e) for e in range(E)]
    states = np.zeros((E, STATE_DIM))
    clip_ids = np.zeros(E, dtype=np.int64)
    frames = np.zeros(E, dtype=np.int64)
    for e in range(E):
        clip_ids[e], frames[e] = _reset_env(model, dataset, cfg, env_rngs[e], states, e)
    return RunState(
        policy, value, mapper, optim, RunningNorm(POLICY_IN, clip=10.0), 0, rng, env_rngs, states, clip_ids, frames
    )


def _reset_env(model, dataset, cfg, rng, states, e):
    c = sample_clip(dataset, rng)
    st, f = sim.reset(model, dataset.clips[c], cfg.reset_mode, rng, cfg.root_scale)
    states[e] = st.data
    return c, f


def policy_inputs(states, packed, clip_ids, frames):
    return np.concatenate([sim.extract_obs(states), packed.features[packed.index(clip_ids, frames)]], axis=1)


def step_rewards(model, mapper, packed, clip_ids, frames, states, applied, torques, preclamp, cfg):
    """Reward breakdown for a batch of freshly stepped envs (frames = target frames)."""
    idx = packed.index(clip_ids, frames)
    p_h = packed.poses[idx]
    p_r = np.nan_to_num(sim.extract_pose(states))
    e_r2h, e_cyc = reconstruction_errors(mapper, p_h, p_r)
    r_cpd = np.exp(-e_r2h - e_cyc)
    r_cpd_r2h = np.exp(-e_r2h)
    r_root = np.nan_to_num(root_reward(states[:, [X, VX]], packed.root_track[idx]))
    src = applied if cfg.torque_penalty_source == "action" else torques
    r_tor = torque_penalty(src)
    r_lim = limit_penalty(preclamp, model.lower_limits, model.upper_limits)
    bd = total_reward(r_cpd, r_cpd_r2h, r_root, r_tor, r_lim, cfg.weights, cfg.mode)
    return bd, r_cpd_r2h, p_h, p_r


def collect_rollouts(rs, dataset, cfg, model=None, packed=None, events=None):
    """Fixed-horizon collection over all envs with frozen networks and statistics."""
    model = model or RobotModel()
    packed = packed or PackedDataset(dataset, cfg.root_scale)
    E, H = cfg.ppo.num_envs, cfg.ppo.horizon
    buf = RolloutBuffer(H, E, POLICY_IN)
    kernel = sim.get_step_kernel()
    gamma = cfg.ppo.gamma
    episodes = falls = 0
    for t in range(H):
        raw = policy_inputs(rs.env_states, packed, rs.clip_ids, rs.frames)
        obs = rs.obs_norm.normalize(raw)
        action, logp, v = policy_act(rs.policy, rs.value, obs, rs.env_rngs)
        torques, _, preclamp, diverged = sim.step_many(model, rs.env_states, action, kernel)
        applied = rs.env_states[:, 22:30].copy()
        next_frames = rs.frames + 1
        bd, r_cpd_r2h, p_h, p_r = step_rewards(
            model, rs.mapper, packed, rs.clip_ids, next_frames, rs.env_states, applied, torques, preclamp, cfg
        )
        fell = sim.check_termination(model, np.nan_to_num(rs.env_states, nan=-1e9)) | diverged
        clip_end = next_frames >= packed.lengths[rs.clip_ids] - 1
        done = fell | clip_end
        boot = np.zeros(E)
        trunc = clip_end & ~fell
        if np.any(trunc):
            nxt = rs.obs_norm.normalize(policy_inputs(rs.env_states[trunc], packed, rs.clip_ids[trunc], next_frames[trunc]))
            boot[trunc] = gamma * rs.value(nxt)
        buf.add(
            t, obs=obs, raw_obs=raw, actions=action, applied_actions=applied, log_probs=logp, values=v,
            rewards=bd.r_total, bootstrap=boot, dones=done, falls=fell, r_cpd=bd.r_cpd, r_cpd_r2h=r_cpd_r2h,
            r_cpd_term=bd.r_cpd_term, r_root=bd.r_root, r_tor=bd.r_tor, r_lim=bd.r_lim,
            w_cpd=bd.w_cpd, w_root=bd.w_root, w_tor=bd.w_tor, w_lim=bd.w_lim,
            p_h=p_h, p_r=p_r, clip_ids=rs.clip_ids, frames=next_frames,
        )
        rs.frames = next_frames
        for e in np.flatnonzero(done):
            if diverged[e] and events is not None:
                events.append(f"iteration {rs.iteration + 1}: env {e} diverged; reset")
            episodes += 1
            falls += int(fell[e])
            rs.clip_ids[e], rs.frames[e] = _reset_env(model, dataset, cfg, rs.env_rngs[e], rs.env_states, e)
    last = rs.obs_norm.normalize(policy_inputs(rs.env_states, packed, rs.clip_ids, rs.frames))
    buf.last_values = rs.value(last)
    buf.episodes, buf.falls = episodes, falls
    return buf


def buffer_to_batch(buf, gamma, lam):
    rewards = buf["rewards"] + buf["bootstrap"]
    adv, ret = compute_gae(rewards, buf["values"], buf.last_values, buf["dones"].astype(bool), gamma, lam)
    return PPOBatch(buf.flat("obs"), buf.flat("actions"), buf.flat("log_probs"), adv.reshape(-1), ret.reshape(-1))


def train_iteration(rs, dataset, cfg, model=None, packed=None, events=None, step_writer=None):
    """One pass of collect -> PPO -> mapper update -> clear; returns a stats dict."""
    buf = collect_rollouts(rs, dataset, cfg, model, packed, events)
    if step_writer is not None:
        _write_steps(step_writer, buf, rs.iteration + 1)
    stats = {
        "iteration": rs.iteration + 1,
        "r_total": float(buf["rewards"].mean()),
        "r_cpd": float(buf["r_cpd"].mean()),
        "r_cpd_term": float(buf["r_cpd_term"].mean()),
        "r_root": float(buf["r_root"].mean()),
        "r_tor": float(buf["r_tor"].mean()),
        "r_lim": float(buf["r_lim"].mean()),
        "fall_rate": buf.falls / buf.episodes if buf.episodes else 0.0,
        "episodes": buf.episodes,
    }
    batch = buffer_to_batch(buf, cfg.ppo.gamma, cfg.ppo.lam)
    stats.update(ppo_update(rs.policy, rs.value, batch, cfg.ppo, rs.optim, rs.rng))
    p_h, p_r = buf.flat("p_h"), buf.flat("p_r")
    rs.mapper.update_stats(p_h, p_r)
    mres = update_mappers(rs.mapper, p_h, p_r, cfg.mapper, rs.rng)
    if mres["trace"]:
        stats["l_r2h"], stats["l_cycle"], stats["l_total"] = mres["trace"][-1]
    else:
        stats["l_r2h"] = stats["l_cycle"] = stats["l_total"] = float("nan")
    if mres["aborted"] and events is not None:
        events.append(f"iteration {rs.iteration + 1}: mapper update aborted (non-finite loss)")
    rs.obs_norm.update(buf.flat("raw_obs"))
    buf.clear()
    rs.iteration += 1
    stats["buffer_size_after"] = len(buf)
    return stats


def _write_steps(writer, buf, iteration):
    H, E = buf.horizon, buf.num_envs
    cols = [buf["rewards" if k == "r_total" else k] for k in STEP_COLUMNS[5:]]
    for t in range(H):
        for e in range(E):
            writer.writerow(
                [iteration, t, e, int(buf["clip_ids"][t, e]), int(buf["frames"][t, e])]
                + [repr(float(c[t, e])) for c in cols]
            )


# -- checkpoints --------------------------------------------------------------


def checkpoint_bytes(rs, cfg):
    payload = {"config": cfg.to_dict(include_output=False), "state": rs.to_dict()}
    body = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    digest = hashlib.sha256(body.encode()).hexdigest()
    head = json.dumps({"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "sha256": digest})
    return (head + "\n" + body + "\n").encode()


def save_checkpoint(rs, cfg, path):
    data = checkpoint_bytes(rs, cfg)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def load_checkpoint(path):
    """Returns ``(run_state, config)``; refuses corrupted or mismatched files."""
    try:
        with open(path, "rb") as f:
            raw = f.read().decode()
    except UnicodeDecodeError:
        raise CheckpointError(f"{path}: not a checkpoint (undecodable bytes)") from None
    head_line, _, body = raw.partition("\n")
    try:
        head = json.loads(head_line)
    except json.JSONDecodeError:
        raise CheckpointError(f"{path}: malformed checkpoint header") from None
    if not isinstance(head, dict) or head.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if head.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint format version {head.get('version')} cannot be read by this build "
            f"(supports version {CHECKPOINT_VERSION})"
        )
    body = body.rstrip("\n")
    if hashlib.sha256(body.encode()).hexdigest() != head.get("sha256"):
        raise CheckpointError(f"{path}: checksum mismatch (file is truncated or corrupted)")
    try:
        payload = json.loads(body)
        cfg = config_from_dict(payload["config"])
        rs = RunState.from_dict(payload["state"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint payload ({exc})") from None
    return rs, cfg


# -- full runs ----------------------------------------------------------------


def dataset_hash(path):
    """sha256 over the manifest and every clip file it lists."""
    manifest = os.path.join(path, "manifest.json") if os.path.isdir(path) else path
    h = hashlib.sha256()
    with open(manifest, "rb") as f:
        data = f.read()
    h.update(data)
    root = os.path.dirname(os.path.abspath(manifest))
    for e in json.loads(data)["clips"]:
        with open(os.path.join(root, e["path"]), "rb") as f:
            h.update(f.read())
    return h.hexdigest()


def train(cfg, resume=None, dataset=None, progress=None):
    """Run (or resume) training; returns the run directory."""
    out = cfg.output_dir
    try:
        os.makedirs(os.path.join(out, "checkpoints"), exist_ok=True)
        probe = os.path.join(out, ".write_probe")
        with open(probe, "w") as f:
            f.write("")
        os.remove(probe)
    except OSError as exc:
        raise RuntimeError(f"output directory {out!r} is not writable: {exc}") from None
    dataset = dataset or load_dataset(cfg.dataset)
    model = RobotModel()
    packed = PackedDataset(dataset, cfg.root_scale)
    if resume:
        rs, ckpt_cfg = load_checkpoint(resume)
        if ckpt_cfg.to_dict(include_output=False) | {"iterations": 0} != cfg.to_dict(include_output=False) | {"iterations": 0}:
            log.warning("resuming with a config that differs from the checkpoint's")
    else:
        rs = init_run_state(cfg, dataset, model)
    with open(os.path.join(out, "config.json"), "w") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    events = []
    mode = "a" if resume else "w"
    events_f = open(os.path.join(out, "events.log"), mode)
    log_path = os.path.join(out, "log.csv")
    new_log = not (resume and os.path.exists(log_path))
    log_f = open(log_path, "a" if not new_log else "w", newline="")
    log_w = csv.writer(log_f)
    if new_log:
        log_w.writerow(LOG_COLUMNS)
    step_f = step_w = None
    if cfg.log_steps:
        sp = os.path.join(out, "steps.csv")
        fresh = not (resume and os.path.exists(sp))
        step_f = open(sp, "w" if fresh else "a", newline="")
        step_w = csv.writer(step_f)
        if fresh:
            step_w.writerow(STEP_COLUMNS)
    try:
        events_f.write(f"config_hash {cfg.hash()}\n")
        events_f.write(f"{'resume' if resume else 'start'} iteration {rs.iteration}\n")
        while rs.iteration < cfg.iterations:
            stats = train_iteration(rs, dataset, cfg, model, packed, events, step_w)
            stats["events"] = len(events)
            log_w.writerow([_fmt(stats.get(c, float("nan"))) for c in LOG_COLUMNS])
            log_f.flush()
            for ev in events:
                events_f.write(ev + "\n")
            events.clear()
            # the iteration-1 checkpoint is the baseline for learning-progress comparisons
            if rs.iteration % cfg.checkpoint_every == 0 or rs.iteration == 1:
                p = os.path.join(out, "checkpoints", f"iter_{rs.iteration}.ckpt")
                save_checkpoint(rs, cfg, p)
                events_f.write(f"checkpoint {os.path.relpath(p, out)}\n")
            if progress is not None:
                progress(stats)
        save_checkpoint(rs, cfg, os.path.join(out, "final.ckpt"))
        events_f.write(f"final iteration {rs.iteration}\n")
    finally:
        events_f.close()
        log_f.close()
        if step_f:
            step_f.close()
    return out


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def read_log(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [{k: float(v) for k, v in r.items()} for r in rows]
