import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lococycle import sim
from lococycle.motion import generate_clip
from lococycle.sim import _kernel_py
from lococycle.sim.model import N_JOINTS, OBS_DIM, PITCH, POSE_DIM, Q, STATE_DIM, VX, VZ, WP, X, Z, RobotModel

MODEL = RobotModel()
BACKENDS = ["python"] + (["cython"] if sim.BACKEND == "cython" else [])


def test_model_constants():
    m = MODEL
    assert (m.mass, m.pitch_inertia, m.kp, m.kd, m.torque_limit) == (10.0, 0.5, 40.0, 1.0, 30.0)
    assert m.control_dt == pytest.approx(1 / 30)
    np.testing.assert_array_equal(m.nominal_joints, [0.3, 0.8, -0.3, 0.8, 0.3, 0.8, -0.3, 0.8])
    np.testing.assert_array_equal(m.lower_limits, [-1.2, 0.1] * 4)
    with pytest.raises(ValueError):
        RobotModel(mass=0.0)
    with pytest.raises(ValueError):
        RobotModel(hip_limits=(1.0, -1.0))


def test_reset_modes():
    clip = generate_clip("walk", seed=1)
    s, f = sim.reset(MODEL, clip, "clip_start")
    assert f == 0 and s.data[X] == 0 and s.data[Z] == 0.42
    assert np.all(s.data[[VX, VZ, WP]] == 0) and np.all(s.data[14:] == 0)
    assert sim.extract_obs(s).shape == (OBS_DIM,)
    a = sim.reset(MODEL, clip, "random_frame", np.random.default_rng(4), 0.5)
    b = sim.reset(MODEL, clip, "random_frame", np.random.default_rng(4), 0.5)
    assert a[1] == b[1] and a[0].data[X] == pytest.approx(0.5 * (clip.root_x[a[1]] - clip.root_x[0]))
    with pytest.raises(ValueError):
        sim.reset(MODEL, clip, "random_frame")


def test_pd_torque_cases():
    nom = MODEL.nominal_joints
    assert np.all(sim.pd_torque(MODEL, nom, np.zeros(8), np.zeros(8)) == 0)
    assert np.all(sim.pd_torque(MODEL, nom - 1.0, np.zeros(8), np.zeros(8)) == 30.0)
    np.testing.assert_allclose(sim.pd_torque(MODEL, nom - 0.5, np.full(8, 2.0), np.zeros(8)), 18.0)
    # actions are clamped to [-1, 1]
    np.testing.assert_array_equal(sim.pd_torque(MODEL, nom, np.zeros(8), np.full(8, 5.0)),
                                  sim.pd_torque(MODEL, nom, np.zeros(8), np.ones(8)))


def test_foot_kinematics_geometry():
    pos, _ = sim.foot_kinematics(MODEL, (0.0, 1.0, 0.0), np.zeros(8))
    np.testing.assert_allclose(pos[:, 0], MODEL.hip_offsets)
    np.testing.assert_allclose(pos[:, 1], 0.5)
    q = np.zeros(8)
    q[1::2] = np.pi / 2
    pos, _ = sim.foot_kinematics(MODEL, (0.0, 1.0, 0.0), q)
    np.testing.assert_allclose(pos[:, 0], np.array(MODEL.hip_offsets) + 0.25, atol=1e-12)
    np.testing.assert_allclose(pos[:, 1], 0.75, atol=1e-12)


def test_foot_velocity_matches_position_derivative():
    rng = np.random.default_rng(0)
    root, q = np.array([0.1, 0.6, 0.2]), rng.uniform(-1, 1, 8)
    rv, qd = rng.standard_normal(3), rng.standard_normal(8)
    _, vel = sim.foot_kinematics(MODEL, root, q, rv, qd)
    h = 1e-6
    p1, _ = sim.foot_kinematics(MODEL, root + h * rv, q + h * qd)
    p0, _ = sim.foot_kinematics(MODEL, root - h * rv, q - h * qd)
    np.testing.assert_allclose(vel, (p1 - p0) / (2 * h), atol=1e-7)


def test_contact_force_cases():
    f = sim.contact_forces(MODEL, [[0.0, 0.01]], [[0.0, 0.0]])
    assert np.all(f == 0)
    f = sim.contact_forces(MODEL, [[0.0, -0.01]], [[0.0, 0.0]])
    np.testing.assert_allclose(f, [[0.0, 50.0]])


@settings(max_examples=200)
@given(st.floats(-0.1, 0.1), st.floats(-10, 10), st.floats(-10, 10))
def test_normal_force_never_negative(z, vx, vz):
    f = sim.contact_forces(MODEL, [[0.0, z]], [[vx, vz]])
    assert f[0, 1] >= 0 and abs(f[0, 0]) <= MODEL.friction * f[0, 1] + 1e-12


def test_free_fall_step():
    s = sim.nominal_state(MODEL).data.copy()
    s[Z] = 3.0
    nxt, info = sim.step(MODEL, sim.RobotDynState(s), np.zeros(8))
    assert s[VZ] - nxt.data[VZ] == pytest.approx(9.81 / 30, abs=1e-12)
    assert not np.any(info.contacts)


@pytest.mark.parametrize("backend", BACKENDS)
def test_step_is_deterministic(backend):
    k = sim.get_step_kernel(backend)
    s = sim.nominal_state(MODEL)
    a = np.linspace(-1, 1, 8)
    n1, _ = sim.step(MODEL, s, a, k)
    n2, _ = sim.step(MODEL, s, a, k)
    assert n1.data.tobytes() == n2.data.tobytes()


@pytest.mark.skipif(sim.BACKEND != "cython", reason="compiled kernel not built")
def test_backends_agree():
    rng = np.random.default_rng(2)
    s1 = np.tile(sim.nominal_state(MODEL).data, (16, 1))
    s1[:, VX] = rng.uniform(-0.5, 0.5, 16)
    s2 = s1.copy()
    for _ in range(30):
        a = rng.uniform(-0.2, 0.2, (16, 8))
        o1 = sim.step_many(MODEL, s1, a, sim.get_step_kernel("cython"))
        o2 = sim.step_many(MODEL, s2, a, sim.get_step_kernel("python"))
        np.testing.assert_allclose(s1, s2, rtol=0, atol=1e-9)
        for x, y in zip(o1, o2):
            np.testing.assert_allclose(x, y, rtol=0, atol=1e-9)


def test_drop_settles():
    s = sim.nominal_state(MODEL)
    for _ in range(60):
        s, _ = sim.step(MODEL, s, np.zeros(8))
    assert 0.35 <= s.data[Z] <= 0.45 and abs(s.data[VZ]) < 0.01
    pos, _ = sim.foot_kinematics(MODEL, s.data[[X, Z, PITCH]], s.data[Q])
    bound = MODEL.mass * MODEL.gravity / (4 * MODEL.contact_stiffness) * 3
    assert np.all(-pos[:, 1] <= bound)


def test_joint_limits_hold_and_preclamp_reports_violation():
    # a large action scale puts every PD target beyond the upper stop, pinning the joints there
    model = RobotModel(action_scale=3.0)
    s = sim.nominal_state(model).data[None].copy()
    s[0, 14:22] = 50.0
    for _ in range(3):
        torques, contacts, pre, _ = sim.step_many(model, s, np.full((1, 8), 2.0))
        q = s[0, Q]
        assert np.all(q >= model.lower_limits) and np.all(q <= model.upper_limits)
    assert np.all(q == model.upper_limits) and np.all(pre[0] >= model.upper_limits)
    assert np.all(s[0, 22:30] == 1.0)


def test_passive_energy_non_increasing():
    rng = np.random.default_rng(3)
    s = sim.nominal_state(MODEL).data.copy()
    s[Z], s[VX], s[VZ], s[WP] = 40.0, 1.0, 2.0, -0.5
    state = sim.RobotDynState(s)
    e0 = sim.root_energy(MODEL, state)
    for _ in range(40):
        hold = (state.data[Q] - MODEL.nominal_joints) / MODEL.action_scale
        state, _ = sim.step(MODEL, state, np.clip(hold, -1, 1))
        e1 = sim.root_energy(MODEL, state)
        assert e1 - e0 <= 1e-6
        e0 = e1


def test_divergence_flagged():
    s = sim.nominal_state(MODEL).data.copy()
    s[VX] = np.nan
    with pytest.raises(sim.SimulationDiverged):
        sim.step(MODEL, sim.RobotDynState(s), np.zeros(8))


def test_pose_and_obs_packing():
    s = sim.nominal_state(MODEL)
    pose = sim.extract_pose(s)
    np.testing.assert_array_equal(pose, np.concatenate([[0.42, 0.0], MODEL.nominal_joints]))
    assert pose.shape == (POSE_DIM,)
    back = sim.pose_to_state(pose)
    np.testing.assert_array_equal(sim.extract_pose(back), pose)
    batch = np.tile(s.data, (3, 1))
    assert sim.extract_obs(batch).shape == (3, OBS_DIM)


def test_termination():
    s = sim.nominal_state(MODEL).data.copy()
    assert sim.check_termination(MODEL, s) == "running"
    s[Z] = 0.1
    assert sim.check_termination(MODEL, s) == "fell"
    s[Z], s[PITCH] = 0.42, 1.5
    assert sim.check_termination(MODEL, s) == "fell"
    assert sim.check_termination(MODEL, np.stack([s, sim.nominal_state(MODEL).data])).tolist() == [True, False]


def test_state_validation():
    with pytest.raises(ValueError):
        sim.RobotDynState(np.zeros(STATE_DIM - 1))
    with pytest.raises(ValueError):
        sim.get_step_kernel("fortran")


def test_trajectory_csv(tmp_path):
    row = {c: 0.0 for c in sim.TRAJECTORY_COLUMNS}
    row.update({f"contact{i}": True for i in range(4)})
    cols = sim.write_trajectory_csv(tmp_path / "t.csv", [row, row])
    with open(tmp_path / "t.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == cols and len(rows) == 3 and rows[1][cols.index("contact0")] == "1"
