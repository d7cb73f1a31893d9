"""Evaluation metrics (ACR, DIV, RTR) and comparison reports."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from . import sim
from .correspond import h2r_predict, r2h_only_reward, r2h_predict
from .motion import MotionDataset
from .rl import policy_act
from .sim.model import N_JOINTS, PITCH, Q, STATE_DIM, VX, VZ, WP, X, Z, RobotModel
from .trainer import PackedDataset, load_checkpoint, policy_inputs, step_rewards

REPORT_COLUMNS = ("mode", "checkpoint", "ACR", "DIV", "RTR", "fall_rate", "seed")
FEATURE_DIM = 11


class MetricError(ValueError):
    pass


@dataclass
class EvalRollout:
    """Deterministic rollout of one clip; per-step arrays share the leading axis."""

    clip_name: str
    states: np.ndarray  # (T, 30) after each step
    actions: np.ndarray  # (T, 8) applied
    contacts: np.ndarray  # (T, 4)
    r_cpd: np.ndarray
    r_cpd_term: np.ndarray
    r_root: np.ndarray
    r_tor: np.ndarray
    r_lim: np.ndarray
    r_total: np.ndarray
    weights: tuple  # (w_cpd, w_root, w_tor, w_lim) as applied
    p_h: np.ndarray
    p_r: np.ndarray
    fell: bool

    def __len__(self):
        return self.states.shape[0]

    def features(self):
        return state_features(self.states)


def state_features(states):
    """Root velocity (xdot, zdot, pitch rate) and the 8 joint angles."""
    states = np.asarray(states)
    return np.concatenate([states[..., [VX, VZ, WP]], states[..., Q]], axis=-1)


def eval_rollouts(rs, cfg, dataset, model=None):
    """One deterministic rollout per clip, all clips stepped as one batch."""
    model = model or RobotModel()
    packed = PackedDataset(dataset, cfg.root_scale)
    n = len(dataset)
    clip_ids = np.arange(n)
    frames = np.zeros(n, dtype=np.int64)
    states = np.stack([sim.reset(model, c, "clip_start", root_scale=cfg.root_scale)[0].data for c in dataset.clips])
    alive = np.ones(n, dtype=bool)
    fell = np.zeros(n, dtype=bool)
    rec = [{k: [] for k in ("states", "actions", "contacts", "r_cpd", "r_cpd_term", "r_root", "r_tor",
                            "r_lim", "r_total", "p_h", "p_r")} for _ in range(n)]
    weights = None
    kernel = sim.get_step_kernel()
    while np.any(alive):
        idx = np.flatnonzero(alive)
        st = states[idx]
        obs = rs.obs_norm.normalize(policy_inputs(st, packed, clip_ids[idx], frames[idx]))
        action, _, _ = policy_act(rs.policy, None, obs, deterministic=True)
        torques, contacts, preclamp, diverged = sim.step_many(model, st, action, kernel)
        states[idx] = st
        nf = frames[idx] + 1
        bd, _, p_h, p_r = step_rewards(model, rs.mapper, packed, clip_ids[idx], nf, st, st[:, 22:30], torques, preclamp, cfg)
        weights = (bd.w_cpd, bd.w_root, bd.w_tor, bd.w_lim)
        f = sim.check_termination(model, np.nan_to_num(st, nan=-1e9)) | diverged
        for j, e in enumerate(idx):
            r = rec[e]
            r["states"].append(st[j].copy())
            r["actions"].append(st[j, 22:30].copy())
            r["contacts"].append(contacts[j])
            for k in ("r_cpd", "r_cpd_term", "r_root", "r_tor", "r_lim", "r_total"):
                r[k].append(getattr(bd, k)[j])
            r["p_h"].append(p_h[j])
            r["p_r"].append(p_r[j])
        frames[idx] = nf
        fell[idx] |= f
        alive[idx] = ~f & (nf < packed.lengths[idx] - 1)
    out = []
    for e, clip in enumerate(dataset.clips):
        r = {k: np.array(v) for k, v in rec[e].items()}
        out.append(EvalRollout(clip.name, r["states"], r["actions"], r["contacts"], r["r_cpd"], r["r_cpd_term"],
                               r["r_root"], r["r_tor"], r["r_lim"], r["r_total"], weights, r["p_h"], r["p_r"],
                               bool(fell[e])))
    return out


def acr(rollouts):
    """Mean full correspondence reward over every step of every rollout."""
    vals = [np.asarray(r.r_cpd if isinstance(r, EvalRollout) else r) for r in rollouts]
    if not vals or sum(v.size for v in vals) == 0:
        raise MetricError("ACR needs at least one rollout step")
    return float(np.concatenate([v.ravel() for v in vals]).mean())


def rtr(rollouts):
    """Mean root tracking reward over every step of every rollout."""
    vals = [np.asarray(r.r_root if isinstance(r, EvalRollout) else r) for r in rollouts]
    if not vals or sum(v.size for v in vals) == 0:
        raise MetricError("RTR needs at least one rollout step")
    return float(np.concatenate([v.ravel() for v in vals]).mean())


def canonical_pool(features):
    """Sort feature rows lexicographically so DIV does not depend on pooling order."""
    f = np.asarray(features, dtype=np.float64)
    order = np.lexsort(f.T[::-1])
    return f[order]


def div(features, sd, rng):
    """Mean distance between two disjoint random subsets of size ``sd``, paired by draw order."""
    f = canonical_pool(features)
    if f.ndim != 2 or f.shape[0] < 2 * sd:
        raise MetricError(f"DIV needs a pool of at least {2 * sd} features, got {f.shape[0] if f.ndim == 2 else 0}")
    pick = rng.permutation(f.shape[0])[: 2 * sd]
    a, b = f[pick[:sd]], f[pick[sd:]]
    return float(np.mean(np.sqrt(np.sum((a - b) ** 2, axis=1))))


def fall_rate(rollouts):
    return float(np.mean([r.fell for r in rollouts])) if rollouts else 0.0


def evaluate(rs, cfg, dataset, sd=256, seed=0, model=None):
    rolls = eval_rollouts(rs, cfg, dataset, model)
    pool = np.concatenate([r.features() for r in rolls])
    sd_eff = min(sd, pool.shape[0] // 2)
    return {
        "mode": cfg.mode,
        "ACR": acr(rolls),
        "DIV": div(pool, sd_eff, np.random.default_rng(seed)),
        "RTR": rtr(rolls),
        "fall_rate": fall_rate(rolls),
        "seed": seed,
        "sd": sd_eff,
    }, rolls


def _check_dims(rs, dataset):
    from .motion import POSE_DIM
    from .trainer import POLICY_IN

    if rs.policy.net.n_in != POLICY_IN or rs.mapper.r2h_net.n_out != POSE_DIM:
        raise MetricError(
            f"checkpoint expects policy input {rs.policy.net.n_in} and human pose {rs.mapper.r2h_net.n_out}; "
            f"this build uses {POLICY_IN} and {POSE_DIM}"
        )
    for c in dataset.clips:
        if c.poses.shape[1] != rs.mapper.r2h_net.n_out:
            raise MetricError(f"clip {c.name!r} pose dimension {c.poses.shape[1]} does not match the checkpoint")


def eval_report(checkpoint, dataset, sd=256, seed=0, out_dir=None, write_rollouts=False):
    """Evaluate a checkpoint on every clip; optionally write report.csv/report.txt."""
    rs, cfg = load_checkpoint(checkpoint)
    _check_dims(rs, dataset)
    row, rolls = evaluate(rs, cfg, dataset, sd, seed)
    row["checkpoint"] = os.path.basename(checkpoint)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_report(out_dir, [row])
        if write_rollouts:
            rdir = os.path.join(out_dir, "rollouts")
            os.makedirs(rdir, exist_ok=True)
            for r in rolls:
                write_rollout_csv(os.path.join(rdir, f"{r.clip_name}.csv"), r)
    return row, rolls


def write_report(out_dir, rows):
    """report.csv (machine-readable) first, then report.txt."""
    csv_path = os.path.join(out_dir, "report.csv")
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(REPORT_COLUMNS)
        for r in rows:
            w.writerow([r["mode"], r["checkpoint"], repr(r["ACR"]), repr(r["DIV"]), repr(r["RTR"]),
                        repr(r["fall_rate"]), r["seed"]])
    lines = [f"{'mode':<10} {'checkpoint':<28} {'ACR':>7} {'DIV':>7} {'RTR':>7} {'falls':>6}"]
    for r in rows:
        lines.append(f"{r['mode']:<10} {r['checkpoint'][:28]:<28} {r['ACR']:7.3f} {r['DIV']:7.3f} "
                     f"{r['RTR']:7.3f} {r['fall_rate']:6.2f}")
    with open(os.path.join(out_dir, "report.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")
    return csv_path


def read_report(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


RETARGET_EXTRA = (
    [f"human_{j}" for j in range(8)] + [f"r2h_{j}" for j in range(8)] + [f"cycle_{j}" for j in range(10)]
    + ["r_cpd_r2h", "w_cpd", "w_root", "w_tor", "w_lim"]
)


def rollout_rows(roll, mapper=None, control_dt=1.0 / 30.0):
    """Trajectory CSV rows; with a mapper, reconstructed poses are appended."""
    if mapper is not None and len(roll):
        r2h = r2h_predict(mapper, roll.p_r)
        cyc = h2r_predict(mapper, r2h)
        r_r2h = r2h_only_reward(mapper, roll.p_h, roll.p_r)
    rows = []
    for t in range(len(roll)):
        s = roll.states[t]
        row = {
            "time": (t + 1) * control_dt, "root_x": s[X], "root_z": s[Z], "root_pitch": s[PITCH],
            "root_vx": s[VX], "root_vz": s[VZ], "pitch_rate": s[WP],
            "r_cpd": roll.r_cpd[t], "r_root": roll.r_root[t], "r_tor": roll.r_tor[t], "r_lim": roll.r_lim[t],
            "r_total": roll.r_total[t],
        }
        for j in range(N_JOINTS):
            row[f"q{j}"] = s[Q][j]
            row[f"action{j}"] = roll.actions[t, j]
        for i in range(4):
            row[f"contact{i}"] = int(roll.contacts[t, i])
        if mapper is not None:
            for j in range(8):
                row[f"human_{j}"] = roll.p_h[t, j]
                row[f"r2h_{j}"] = r2h[t, j]
            for j in range(10):
                row[f"cycle_{j}"] = cyc[t, j]
            row["r_cpd_r2h"] = r_r2h[t]
            row["w_cpd"], row["w_root"], row["w_tor"], row["w_lim"] = roll.weights
        rows.append(row)
    return rows


def write_rollout_csv(path, roll, mapper=None):
    extra = RETARGET_EXTRA if mapper is not None else ()
    return sim.write_trajectory_csv(path, rollout_rows(roll, mapper), extra)
