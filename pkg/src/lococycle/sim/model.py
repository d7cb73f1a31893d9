"""Planar quadruped description and state layout."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

N_LEGS = 4
N_JOINTS = 8
POSE_DIM = 10  # root height, root pitch, 8 joints
OBS_DIM = 29  # pose, root velocity (3), joint rates (8), previous action (8)
STATE_DIM = 30

# flat state layout shared by the Python and compiled kernels
X, Z, PITCH, VX, VZ, WP = range(6)
Q = slice(6, 14)
QD = slice(14, 22)
PREV = slice(22, 30)


@dataclass(frozen=True)
class RobotModel:
    mass: float = 10.0
    pitch_inertia: float = 0.5
    hip_offsets: tuple = (0.30, 0.10, -0.10, -0.30)
    upper_len: float = 0.25
    lower_len: float = 0.25
    joint_inertia: float = 0.05
    joint_damping: float = 0.1
    kp: float = 40.0
    kd: float = 1.0
    torque_limit: float = 30.0
    hip_limits: tuple = (-1.2, 1.2)
    knee_limits: tuple = (0.1, 2.4)
    contact_stiffness: float = 5000.0
    contact_damping: float = 100.0
    friction: float = 0.8
    friction_velocity: float = 0.1
    gravity: float = 9.81
    physics_dt: float = 1.0 / 240.0
    decimation: int = 8
    action_scale: float = 0.8
    nominal_height: float = 0.42
    nominal_hip: float = 0.3
    nominal_knee: float = 0.8
    fall_height: float = 0.20
    fall_pitch: float = 1.0
    _cache: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    def __post_init__(self):
        for name in ("mass", "pitch_inertia", "upper_len", "lower_len", "joint_inertia", "kp",
                     "torque_limit", "contact_stiffness", "friction_velocity", "physics_dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not (self.hip_limits[0] < self.hip_limits[1] and self.knee_limits[0] < self.knee_limits[1]):
            raise ValueError("joint limits need lower < upper")
        if self.decimation < 1:
            raise ValueError("decimation must be >= 1")

    @property
    def control_dt(self):
        return self.physics_dt * self.decimation

    @property
    def lower_limits(self):
        return np.array([self.hip_limits[0], self.knee_limits[0]] * N_LEGS)

    @property
    def upper_limits(self):
        return np.array([self.hip_limits[1], self.knee_limits[1]] * N_LEGS)

    @property
    def nominal_joints(self):
        # hips alternate sign front to rear, knees all bent forward
        hips = [self.nominal_hip, -self.nominal_hip] * 2
        return np.array([v for h in hips for v in (h, self.nominal_knee)])

    def kernel_params(self):
        """Flat parameter vector consumed by the step kernels (see PARAM_* indices)."""
        p = self._cache.get("params")
        if p is None:
            p = np.array(
                [
                    self.mass, self.pitch_inertia, *self.hip_offsets, self.upper_len, self.lower_len,
                    self.joint_inertia, self.joint_damping, self.kp, self.kd, self.torque_limit,
                    self.contact_stiffness, self.contact_damping, self.friction, self.friction_velocity,
                    self.gravity, self.physics_dt, self.action_scale, float(self.decimation),
                    *self.lower_limits, *self.upper_limits, *self.nominal_joints,
                ],
                dtype=np.float64,
            )
            p.setflags(write=False)
            self._cache["params"] = p
        return p


# indices into RobotModel.kernel_params()
P_MASS, P_INERTIA = 0, 1
P_HIP = 2  # 4 entries
P_L1, P_L2 = 6, 7
P_JI, P_JD, P_KP, P_KD, P_TMAX = 8, 9, 10, 11, 12
P_KC, P_DC, P_MU, P_VS, P_G, P_DT, P_ASCALE, P_SUB = 13, 14, 15, 16, 17, 18, 19, 20
P_LO, P_HI, P_NOM = 21, 29, 37
N_PARAMS = 45
