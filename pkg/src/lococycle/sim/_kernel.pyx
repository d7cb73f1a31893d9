# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled physics kernel; same arithmetic as _kernel_py.step_batch."""

from libc.math cimport cos, sin, tanh


def step_batch(double[:, ::1] states, const double[:, ::1] actions, const double[::1] params,
               double[:, ::1] torques, double[:, ::1] contacts, double[:, ::1] preclamp):
    cdef Py_ssize_t n_env = states.shape[0]
    cdef Py_ssize_t e, j, i, k
    cdef int n_sub = <int>params[20]
    cdef double m = params[0], inertia = params[1]
    cdef double l1 = params[6], l2 = params[7]
    cdef double ji = params[8], jd = params[9], kp = params[10], kd = params[11], tmax = params[12]
    cdef double kc = params[13], dc = params[14], mu = params[15], vs = params[16]
    cdef double g = params[17], dt = params[18], ascale = params[19]
    cdef double x, z, pitch, vx, vz, wp, fx, fz, tq, c, s
    cdef double th, tk, thd, tkd, a1, a2, w1, w2, s1, c1, s2, c2, rx, rz, fzp, fvx, fvz, fn, ft, h
    cdef double tau, qn, lo, hi, av
    cdef double q[8]
    cdef double qd[8]
    cdef double target[8]
    cdef double tau_last[8]
    cdef double lim[8]
    cdef double cont[4]

    for e in range(n_env):
        x = states[e, 0]; z = states[e, 1]; pitch = states[e, 2]
        vx = states[e, 3]; vz = states[e, 4]; wp = states[e, 5]
        for j in range(8):
            q[j] = states[e, 6 + j]
            qd[j] = states[e, 14 + j]
            av = actions[e, j]
            if av < -1.0:
                av = -1.0
            elif av > 1.0:
                av = 1.0
            states[e, 22 + j] = av
            target[j] = params[37 + j] + ascale * av

        for k in range(n_sub):
            for j in range(8):
                lo = params[21 + j]
                hi = params[29 + j]
                tau = kp * (target[j] - q[j]) - kd * qd[j]
                if tau < -tmax:
                    tau = -tmax
                elif tau > tmax:
                    tau = tmax
                tau_last[j] = tau
                qd[j] = qd[j] + dt * ((tau - jd * qd[j]) / ji)
                qn = q[j] + dt * qd[j]
                lim[j] = qn
                if qn < lo:
                    qn = lo
                    qd[j] = 0.0
                elif qn > hi:
                    qn = hi
                    qd[j] = 0.0
                q[j] = qn

            fx = 0.0
            fz = -m * g
            tq = 0.0
            c = cos(pitch)
            s = sin(pitch)
            for i in range(4):
                h = params[2 + i]
                th = q[2 * i]; tk = q[2 * i + 1]
                thd = qd[2 * i]; tkd = qd[2 * i + 1]
                a1 = pitch + th
                a2 = a1 + tk
                w1 = wp + thd
                w2 = w1 + tkd
                s1 = sin(a1); c1 = cos(a1); s2 = sin(a2); c2 = cos(a2)
                rx = h * c + l1 * s1 + l2 * s2
                rz = h * s - l1 * c1 - l2 * c2
                fzp = z + rz
                fvx = vx - wp * (h * s) + l1 * c1 * w1 + l2 * c2 * w2
                fvz = vz + wp * (h * c) + l1 * s1 * w1 + l2 * s2 * w2
                if fzp < 0.0:
                    fn = -kc * fzp - dc * fvz
                    if fn < 0.0:
                        fn = 0.0
                    ft = -mu * fn * tanh(fvx / vs)
                    fx = fx + ft
                    fz = fz + fn
                    tq = tq + (rx * fn - rz * ft)
                    cont[i] = 1.0
                else:
                    cont[i] = 0.0
            vx = vx + dt * (fx / m)
            vz = vz + dt * (fz / m)
            wp = wp + dt * (tq / inertia)
            x = x + dt * vx
            z = z + dt * vz
            pitch = pitch + dt * wp

        states[e, 0] = x; states[e, 1] = z; states[e, 2] = pitch
        states[e, 3] = vx; states[e, 4] = vz; states[e, 5] = wp
        for j in range(8):
            states[e, 6 + j] = q[j]
            states[e, 14 + j] = qd[j]
            torques[e, j] = tau_last[j]
            preclamp[e, j] = lim[j]
        for i in range(4):
            contacts[e, i] = cont[i]
