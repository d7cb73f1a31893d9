"""Per-step reward terms and their weighted combination under the ablation modes."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

MODES = ("full", "task_only", "r2h_only")
# leg-length ratio between robot stance height and human standing height
ROOT_SCALE = 0.42 / 0.9


class RewardConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RewardWeights:
    w_cpd: float = 1.0
    w_root: float = 1.0
    w_tor: float = 0.0001
    w_lim: float = 5.0

    def __post_init__(self):
        if not all(np.isfinite([self.w_cpd, self.w_root, self.w_tor, self.w_lim])):
            raise RewardConfigError("reward weights must be finite")

    def as_dict(self):
        return asdict(self)


@dataclass
class RewardBreakdown:
    """Per-step reward terms (scalars or arrays).

    ``r_cpd`` is always the full correspondence reward, kept for logging and
    ACR. ``r_cpd_term`` is the correspondence value that enters the sum under
    the active mode, and ``w_cpd`` the weight actually applied to it.
    """

    r_cpd: np.ndarray
    r_cpd_term: np.ndarray
    r_root: np.ndarray
    r_tor: np.ndarray
    r_lim: np.ndarray
    r_total: np.ndarray
    w_cpd: float
    w_root: float
    w_tor: float
    w_lim: float


def root_reward(s_root, s_bar):
    """exp(-||(x, xdot) - (x_bar, xdot_bar)||)."""
    d = np.asarray(s_root, dtype=np.float64) - np.asarray(s_bar, dtype=np.float64)
    return np.exp(-np.sqrt(np.sum(d * d, axis=-1)))


def torque_penalty(action):
    a = np.asarray(action, dtype=np.float64)
    return -np.sqrt(np.sum(a * a, axis=-1))


def limit_penalty(joint_angles, lower, upper):
    """Minus the number of joints at or beyond either limit."""
    q = np.asarray(joint_angles, dtype=np.float64)
    hit = (q <= np.asarray(lower)) | (q >= np.asarray(upper))
    return -np.sum(hit, axis=-1).astype(np.float64)


def total_reward(r_cpd, r_cpd_r2h, r_root, r_tor, r_lim, weights=RewardWeights(), mode="full"):
    if mode not in MODES:
        raise RewardConfigError(f"unknown reward mode {mode!r}; expected one of {', '.join(MODES)}")
    w_cpd = 0.0 if mode == "task_only" else weights.w_cpd
    term = r_cpd_r2h if mode == "r2h_only" else r_cpd
    total = w_cpd * term + weights.w_root * r_root + weights.w_tor * r_tor + weights.w_lim * r_lim
    return RewardBreakdown(
        r_cpd, term, r_root, r_tor, r_lim, total, w_cpd, weights.w_root, weights.w_tor, weights.w_lim
    )
