"""Pure-numpy physics kernel, vectorized over environments.

Mirrors ``_kernel.pyx`` operation for operation; used when the compiled
extension is unavailable or LOCOCYCLE_PURE_PYTHON is set.
"""

import numpy as np

from .model import (
    P_ASCALE, P_DC, P_DT, P_G, P_HI, P_HIP, P_INERTIA, P_JD, P_JI, P_KC, P_KD, P_KP, P_L1,
    P_L2, P_LO, P_MASS, P_MU, P_NOM, P_SUB, P_TMAX, P_VS,
)


def step_batch(states, actions, params, torques, contacts, preclamp):
    """Advance every row of ``states`` (E, 30) by one control step, in place.

    ``torques`` (E, 8), ``contacts`` (E, 4) and ``preclamp`` (E, 8) receive the
    final substep's applied torques, foot-contact flags and joint angles as
    integrated before the limit clamp.
    """
    m, inertia = params[P_MASS], params[P_INERTIA]
    hip = params[P_HIP:P_HIP + 4]
    l1, l2 = params[P_L1], params[P_L2]
    ji, jd, kp, kd, tmax = params[P_JI], params[P_JD], params[P_KP], params[P_KD], params[P_TMAX]
    kc, dc, mu, vs, g, dt = params[P_KC], params[P_DC], params[P_MU], params[P_VS], params[P_G], params[P_DT]
    lo, hi, nom = params[P_LO:P_LO + 8], params[P_HI:P_HI + 8], params[P_NOM:P_NOM + 8]
    n_sub = int(params[P_SUB])

    a = np.clip(actions, -1.0, 1.0)
    target = nom + params[P_ASCALE] * a
    x, z, pitch = states[:, 0].copy(), states[:, 1].copy(), states[:, 2].copy()
    vx, vz, wp = states[:, 3].copy(), states[:, 4].copy(), states[:, 5].copy()
    q, qd = states[:, 6:14].copy(), states[:, 14:22].copy()

    for _ in range(n_sub):
        tau = kp * (target - q) - kd * qd
        tau = np.minimum(np.maximum(tau, -tmax), tmax)
        qd = qd + dt * ((tau - jd * qd) / ji)
        qn = q + dt * qd
        lim = qn
        below, above = qn < lo, qn > hi
        qn = np.where(below, lo, np.where(above, hi, qn))
        qd = np.where(below | above, 0.0, qd)
        q = qn

        fx = np.zeros_like(x)
        fz = np.full_like(x, -m * g)
        tq = np.zeros_like(x)
        c, s = np.cos(pitch), np.sin(pitch)
        cont = np.zeros((x.shape[0], 4), dtype=bool)
        for i in range(4):
            th, tk = q[:, 2 * i], q[:, 2 * i + 1]
            thd, tkd = qd[:, 2 * i], qd[:, 2 * i + 1]
            a1 = pitch + th
            a2 = a1 + tk
            w1 = wp + thd
            w2 = w1 + tkd
            s1, c1, s2, c2 = np.sin(a1), np.cos(a1), np.sin(a2), np.cos(a2)
            rx = hip[i] * c + l1 * s1 + l2 * s2
            rz = hip[i] * s - l1 * c1 - l2 * c2
            fzp = z + rz
            fvx = vx - wp * (hip[i] * s) + l1 * c1 * w1 + l2 * c2 * w2
            fvz = vz + wp * (hip[i] * c) + l1 * s1 * w1 + l2 * s2 * w2
            pen = fzp < 0.0
            fn = np.where(pen, np.maximum(0.0, -kc * fzp - dc * fvz), 0.0)
            ft = np.where(pen, -mu * fn * np.tanh(fvx / vs), 0.0)
            fx = fx + ft
            fz = fz + fn
            tq = tq + (rx * fn - rz * ft)
            cont[:, i] = pen
        vx = vx + dt * (fx / m)
        vz = vz + dt * (fz / m)
        wp = wp + dt * (tq / inertia)
        x = x + dt * vx
        z = z + dt * vz
        pitch = pitch + dt * wp

    states[:, 0], states[:, 1], states[:, 2] = x, z, pitch
    states[:, 3], states[:, 4], states[:, 5] = vx, vz, wp
    states[:, 6:14] = q
    states[:, 14:22] = qd
    states[:, 22:30] = a
    torques[:] = tau
    contacts[:] = cont
    preclamp[:] = lim
