"""Deterministic planar quadruped with PD joints and spring-damper ground contact.

The per-step physics lives in a batched kernel. A compiled Cython build is used
when importable; otherwise (or with ``LOCOCYCLE_PURE_PYTHON=1``) the numpy
fallback runs. ``BACKEND`` names the active one.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from . import _kernel_py
from .model import (
    N_JOINTS, N_LEGS, OBS_DIM, PITCH, POSE_DIM, PREV, Q, QD, STATE_DIM, VX, VZ, WP, X, Z,
    RobotModel,
)

if os.environ.get("LOCOCYCLE_PURE_PYTHON", "") not in ("", "0"):
    _kernel = None
else:
    try:
        from . import _kernel
    except ImportError:
        _kernel = None

BACKEND = "cython" if _kernel is not None else "python"


def get_step_kernel(backend=None):
    backend = backend or BACKEND
    if backend == "cython":
        if _kernel is None:
            raise RuntimeError("compiled kernel is not available")
        return _kernel.step_batch
    if backend == "python":
        return _kernel_py.step_batch
    raise ValueError(f"unknown backend {backend!r}")


class SimulationDiverged(RuntimeError):
    pass


@dataclass
class RobotDynState:
    """Full dynamic state; ``data`` uses the flat 30-entry layout of ``model``."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.shape != (STATE_DIM,):
            raise ValueError(f"state vector must have {STATE_DIM} entries")

    root_x = property(lambda self: self.data[X])
    root_z = property(lambda self: self.data[Z])
    pitch = property(lambda self: self.data[PITCH])
    root_vel = property(lambda self: self.data[[VX, VZ, WP]])
    q = property(lambda self: self.data[Q])
    qd = property(lambda self: self.data[QD])
    prev_action = property(lambda self: self.data[PREV])

    def copy(self):
        return RobotDynState(self.data.copy())


@dataclass
class StepInfo:
    torques: np.ndarray
    contacts: np.ndarray
    preclamp_angles: np.ndarray
    diverged: bool = False


def nominal_state(model, root_x=0.0):
    d = np.zeros(STATE_DIM)
    d[X] = root_x
    d[Z] = model.nominal_height
    d[Q] = model.nominal_joints
    return RobotDynState(d)


def reset(model, clip, mode="clip_start", rng=None, root_scale=None):
    """Nominal stance aligned with the clip's desired root track.

    Returns ``(state, start_frame)``. ``random_frame`` draws the start frame
    from ``rng`` and places the robot on the scaled track at that frame.
    """
    from ..motion import normalize_root_trajectory

    if mode == "clip_start":
        frame = 0
    elif mode == "random_frame":
        if rng is None:
            raise ValueError("random_frame reset needs an rng")
        frame = int(rng.integers(0, max(1, len(clip) - 31)))
    else:
        raise ValueError(f"unknown reset mode {mode!r}")
    scale = model.nominal_height / 0.9 if root_scale is None else root_scale
    x_bar, _ = normalize_root_trajectory(clip, scale)
    return nominal_state(model, x_bar[frame]), frame


def pd_torque(model, q, q_rate, action):
    action = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
    target = model.nominal_joints + model.action_scale * action
    tau = model.kp * (target - np.asarray(q)) - model.kd * np.asarray(q_rate)
    return np.clip(tau, -model.torque_limit, model.torque_limit)


def _leg_angles(pitch, q):
    q = np.asarray(q, dtype=np.float64)
    a1 = pitch + q[0::2]
    return a1, a1 + q[1::2]


def foot_kinematics(model, root, q, root_vel=(0.0, 0.0, 0.0), q_rate=None):
    """World-frame foot positions and velocities, each (4, 2).

    ``root`` is (x, z, pitch); ``root_vel`` is (xdot, zdot, pitch rate).
    Leg angles are measured from the body-frame downward vertical, the knee
    relative to the upper link.
    """
    x, z, pitch = root
    vx, vz, wp = root_vel
    q_rate = np.zeros(N_JOINTS) if q_rate is None else np.asarray(q_rate, dtype=np.float64)
    hip = np.asarray(model.hip_offsets)
    l1, l2 = model.upper_len, model.lower_len
    a1, a2 = _leg_angles(pitch, q)
    c, s = np.cos(pitch), np.sin(pitch)
    pos = np.column_stack([
        x + hip * c + l1 * np.sin(a1) + l2 * np.sin(a2),
        z + hip * s - l1 * np.cos(a1) - l2 * np.cos(a2),
    ])
    vel = foot_jacobian(model, pitch, q) @ np.concatenate([[vx, vz, wp], q_rate])
    return pos, vel.reshape(N_LEGS, 2)


def foot_jacobian(model, pitch, q):
    """d(foot positions, flattened (8,)) / d(x, z, pitch, q_0..q_7), shape (8, 11)."""
    hip = np.asarray(model.hip_offsets)
    l1, l2 = model.upper_len, model.lower_len
    a1, a2 = _leg_angles(pitch, q)
    c, s = np.cos(pitch), np.sin(pitch)
    J = np.zeros((2 * N_LEGS, 3 + N_JOINTS))
    for i in range(N_LEGS):
        rx, rz = 2 * i, 2 * i + 1
        J[rx, 0] = 1.0
        J[rz, 1] = 1.0
        d1 = np.array([l1 * np.cos(a1[i]), l1 * np.sin(a1[i])])
        d2 = np.array([l2 * np.cos(a2[i]), l2 * np.sin(a2[i])])
        J[[rx, rz], 2] = np.array([-hip[i] * s, hip[i] * c]) + d1 + d2
        J[[rx, rz], 3 + 2 * i] = d1 + d2
        J[[rx, rz], 4 + 2 * i] = d2
    return J


def contact_forces(model, foot_pos, foot_vel):
    """Spring-damper normal force and tanh-smoothed Coulomb friction, (4, 2)."""
    foot_pos = np.atleast_2d(np.asarray(foot_pos, dtype=np.float64))
    foot_vel = np.atleast_2d(np.asarray(foot_vel, dtype=np.float64))
    pen = foot_pos[:, 1] < 0.0
    fn = np.where(pen, np.maximum(0.0, -model.contact_stiffness * foot_pos[:, 1] - model.contact_damping * foot_vel[:, 1]), 0.0)
    ft = np.where(pen, -model.friction * fn * np.tanh(foot_vel[:, 0] / model.friction_velocity), 0.0)
    return np.column_stack([ft, fn])


def step_many(model, states, actions, kernel=None):
    """Batched control step on an (E, 30) state array, in place.

    Returns ``(torques, contacts, preclamp_angles, diverged)`` arrays.
    """
    kernel = kernel or get_step_kernel()
    n = states.shape[0]
    actions = np.ascontiguousarray(actions, dtype=np.float64)
    torques = np.zeros((n, N_JOINTS))
    contacts = np.zeros((n, N_LEGS))
    preclamp = np.zeros((n, N_JOINTS))
    kernel(states, actions, model.kernel_params(), torques, contacts, preclamp)
    diverged = ~np.all(np.isfinite(states), axis=1)
    return torques, contacts.astype(bool), preclamp, diverged


def step(model, state, action, kernel=None):
    """One control step (``model.decimation`` physics substeps)."""
    data = state.data.reshape(1, STATE_DIM).copy()
    torques, contacts, limits, diverged = step_many(model, data, np.reshape(action, (1, N_JOINTS)), kernel)
    if diverged[0]:
        raise SimulationDiverged("non-finite robot state after step")
    return RobotDynState(data[0]), StepInfo(torques[0], contacts[0], limits[0])


def extract_pose(state):
    d = state.data if isinstance(state, RobotDynState) else np.asarray(state)
    return np.concatenate([d[..., [Z, PITCH]], d[..., Q]], axis=-1)


def extract_obs(state):
    d = state.data if isinstance(state, RobotDynState) else np.asarray(state)
    return np.concatenate([d[..., [Z, PITCH]], d[..., Q], d[..., [VX, VZ, WP]], d[..., QD], d[..., PREV]], axis=-1)


def pose_to_state(pose, root_x=0.0):
    """Inverse of extract_pose with zero velocities (used for round-trip checks)."""
    pose = np.asarray(pose, dtype=np.float64)
    d = np.zeros(STATE_DIM)
    d[X] = root_x
    d[Z], d[PITCH] = pose[0], pose[1]
    d[Q] = pose[2:]
    return RobotDynState(d)


def check_termination(model, state):
    d = state.data if isinstance(state, RobotDynState) else np.asarray(state)
    fell = (d[..., Z] < model.fall_height) | (np.abs(d[..., PITCH]) > model.fall_pitch)
    if np.ndim(fell) == 0:
        return "fell" if fell else "running"
    return fell


def root_energy(model, state):
    """Kinetic + potential energy of the root body."""
    d = state.data if isinstance(state, RobotDynState) else np.asarray(state)
    ke = 0.5 * model.mass * (d[..., VX] ** 2 + d[..., VZ] ** 2) + 0.5 * model.pitch_inertia * d[..., WP] ** 2
    return ke + model.mass * model.gravity * d[..., Z]


TRAJECTORY_COLUMNS = (
    ["time", "root_x", "root_z", "root_pitch", "root_vx", "root_vz", "pitch_rate"]
    + [f"q{j}" for j in range(N_JOINTS)]
    + [f"action{j}" for j in range(N_JOINTS)]
    + [f"contact{i}" for i in range(N_LEGS)]
    + ["r_cpd", "r_root", "r_tor", "r_lim", "r_total"]
)


def write_trajectory_csv(path, rows, extra_columns=()):
    """Write trajectory rows (dicts keyed by TRAJECTORY_COLUMNS + extras)."""
    cols = list(TRAJECTORY_COLUMNS) + list(extra_columns)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(cols)
        for r in rows:
            w.writerow([repr(float(r[c])) if not isinstance(r[c], (int, np.integer, bool, np.bool_)) else int(r[c]) for c in cols])
    return cols
