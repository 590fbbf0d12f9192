"""Compiled kernels: planar spatial-vector RNEA/CRBA, penalty contacts and the
semi-implicit Euler integrator.

Spatial motion vectors are ``(omega, vx, vz)`` in body coordinates, force
vectors ``(n, fx, fz)``. Body ``i`` sits on joint ``i``; the floating base is
expressed as two massless prismatic bodies followed by the pitch joint.

A parent-to-child transform is stored as ``(c, s, rx, rz)``: translate by the
joint offset ``r`` (parent coordinates), then rotate by the joint angle.
Everything is written with scalar loops; 3x3 BLAS calls dominate otherwise.
"""
import numpy as np
from numba import njit

# indices into BodyTables.contact
K_STIFF, K_DAMP, K_MU, K_SLIP = 0, 1, 2, 3
K_ARM_STIFF, K_ARM_DAMP, K_ARM_RADIUS = 4, 5, 6
K_WHEEL_R, K_BASE_HALF, K_BASE_R = 7, 8, 9
K_GRAVITY, K_CONTACTS_ON, K_KP, K_KD = 10, 11, 12, 13

_REV, _PX, _PZ = 0, 1, 2
NB = 9


@njit(cache=True)
def _transforms(jtype, placement, q, X):
    for i in range(NB):
        rx = placement[i, 0]
        rz = placement[i, 1]
        if jtype[i] == _REV:
            X[i, 0] = np.cos(q[i])
            X[i, 1] = np.sin(q[i])
        else:
            X[i, 0] = 1.0
            X[i, 1] = 0.0
            if jtype[i] == _PX:
                rx += q[i]
            else:
                rz += q[i]
        X[i, 2] = rx
        X[i, 3] = rz


@njit(cache=True)
def _xmul(X, i, v0, v1, v2):
    c = X[i, 0]
    s = X[i, 1]
    u1 = v1 - X[i, 3] * v0
    u2 = v2 + X[i, 2] * v0
    return v0, c * u1 + s * u2, -s * u1 + c * u2


@njit(cache=True)
def _xtmul(X, i, f0, f1, f2):
    c = X[i, 0]
    s = X[i, 1]
    g1 = c * f1 - s * f2
    g2 = s * f1 + c * f2
    return f0 - X[i, 3] * g1 + X[i, 2] * g2, g1, g2


@njit(cache=True)
def _sidx(jtype, i):
    if jtype[i] == _REV:
        return 0
    if jtype[i] == _PX:
        return 1
    return 2


@njit(cache=True)
def _rnea_into(parent, jtype, placement, mass, com, inertia, q, qd, qdd, gravity, X, v, a, f, tau):
    _transforms(jtype, placement, q, X)
    for i in range(NB):
        p = parent[i]
        if p < 0:
            vp0, vp1, vp2 = 0.0, 0.0, 0.0
            ap0, ap1, ap2 = 0.0, 0.0, gravity
        else:
            vp0, vp1, vp2 = v[p, 0], v[p, 1], v[p, 2]
            ap0, ap1, ap2 = a[p, 0], a[p, 1], a[p, 2]
        v0, v1, v2 = _xmul(X, i, vp0, vp1, vp2)
        a0, a1, a2 = _xmul(X, i, ap0, ap1, ap2)
        k = _sidx(jtype, i)
        # vJ = S qd; crm(v) vJ
        if k == 0:
            v0 += qd[i]
            a0 += qdd[i]
            a1 += v2 * qd[i]
            a2 += -v1 * qd[i]
        elif k == 1:
            v1 += qd[i]
            a1 += qdd[i]
            a2 += v0 * qd[i]
        else:
            v2 += qd[i]
            a2 += qdd[i]
            a1 += -v0 * qd[i]
        v[i, 0], v[i, 1], v[i, 2] = v0, v1, v2
        a[i, 0], a[i, 1], a[i, 2] = a0, a1, a2
        m = mass[i]
        cx = com[i, 0]
        cz = com[i, 1]
        i00 = inertia[i] + m * (cx * cx + cz * cz)
        # I a
        f0 = i00 * a0 - m * cz * a1 + m * cx * a2
        f1 = -m * cz * a0 + m * a1
        f2 = m * cx * a0 + m * a2
        # h = I v ; crf(v) h
        h0 = i00 * v0 - m * cz * v1 + m * cx * v2
        h1 = -m * cz * v0 + m * v1
        h2 = m * cx * v0 + m * v2
        f[i, 0] = f0 - v2 * h1 + v1 * h2
        f[i, 1] = f1 - v0 * h2
        f[i, 2] = f2 + v0 * h1
    for i in range(NB - 1, -1, -1):
        tau[i] = f[i, _sidx(jtype, i)]
        p = parent[i]
        if p >= 0:
            g0, g1, g2 = _xtmul(X, i, f[i, 0], f[i, 1], f[i, 2])
            f[p, 0] += g0
            f[p, 1] += g1
            f[p, 2] += g2


@njit(cache=True)
def rnea(parent, jtype, placement, mass, com, inertia, q, qd, qdd, gravity):
    """Inverse dynamics: joint forces for the given motion, gravity included."""
    X = np.empty((NB, 4))
    v = np.empty((NB, 3))
    a = np.empty((NB, 3))
    f = np.empty((NB, 3))
    tau = np.empty(NB)
    _rnea_into(parent, jtype, placement, mass, com, inertia, q, qd, qdd, gravity, X, v, a, f, tau)
    return tau


@njit(cache=True)
def _crba_into(parent, jtype, placement, mass, com, inertia, q, X, Ic, M):
    _transforms(jtype, placement, q, X)
    for i in range(NB):
        m = mass[i]
        cx = com[i, 0]
        cz = com[i, 1]
        Ic[i, 0, 0] = inertia[i] + m * (cx * cx + cz * cz)
        Ic[i, 0, 1] = -m * cz
        Ic[i, 0, 2] = m * cx
        Ic[i, 1, 0] = -m * cz
        Ic[i, 2, 0] = m * cx
        Ic[i, 1, 1] = m
        Ic[i, 1, 2] = 0.0
        Ic[i, 2, 1] = 0.0
        Ic[i, 2, 2] = m
    for i in range(NB - 1, -1, -1):
        p = parent[i]
        if p < 0:
            continue
        # Ic[p] += X^T Ic[i] X, column by column
        for col in range(3):
            e0 = 1.0 if col == 0 else 0.0
            e1 = 1.0 if col == 1 else 0.0
            e2 = 1.0 if col == 2 else 0.0
            x0, x1, x2 = _xmul(X, i, e0, e1, e2)
            y0 = Ic[i, 0, 0] * x0 + Ic[i, 0, 1] * x1 + Ic[i, 0, 2] * x2
            y1 = Ic[i, 1, 0] * x0 + Ic[i, 1, 1] * x1 + Ic[i, 1, 2] * x2
            y2 = Ic[i, 2, 0] * x0 + Ic[i, 2, 1] * x1 + Ic[i, 2, 2] * x2
            z0, z1, z2 = _xtmul(X, i, y0, y1, y2)
            Ic[p, 0, col] += z0
            Ic[p, 1, col] += z1
            Ic[p, 2, col] += z2
    for i in range(NB):
        k = _sidx(jtype, i)
        F0 = Ic[i, 0, k]
        F1 = Ic[i, 1, k]
        F2 = Ic[i, 2, k]
        M[i, i] = F0 if k == 0 else (F1 if k == 1 else F2)
        j = i
        while parent[j] >= 0:
            F0, F1, F2 = _xtmul(X, j, F0, F1, F2)
            j = parent[j]
            kj = _sidx(jtype, j)
            val = F0 if kj == 0 else (F1 if kj == 1 else F2)
            M[i, j] = val
            M[j, i] = val


@njit(cache=True)
def crba(parent, jtype, placement, mass, com, inertia, q):
    """Joint-space inertia matrix by the composite-rigid-body algorithm."""
    X = np.empty((NB, 4))
    Ic = np.empty((NB, 3, 3))
    M = np.zeros((NB, NB))
    _crba_into(parent, jtype, placement, mass, com, inertia, q, X, Ic, M)
    return M


@njit(cache=True)
def world_frames(parent, jtype, placement, q):
    """World origin and absolute angle of every body frame."""
    origin = np.zeros((NB, 2))
    angle = np.zeros(NB)
    _world_frames_into(parent, jtype, placement, q, origin, angle)
    return origin, angle


@njit(cache=True)
def _world_frames_into(parent, jtype, placement, q, origin, angle):
    for i in range(NB):
        p = parent[i]
        rx = placement[i, 0]
        rz = placement[i, 1]
        if jtype[i] == _PX:
            rx += q[i]
        elif jtype[i] == _PZ:
            rz += q[i]
        if p >= 0:
            ap = angle[p]
            ox = origin[p, 0]
            oz = origin[p, 1]
        else:
            ap = 0.0
            ox = 0.0
            oz = 0.0
        c = np.cos(ap)
        s = np.sin(ap)
        origin[i, 0] = ox + c * rx - s * rz
        origin[i, 1] = oz + s * rx + c * rz
        angle[i] = ap + (q[i] if jtype[i] == _REV else 0.0)


@njit(cache=True)
def body_point(origin, angle, b, lx, lz):
    c = np.cos(angle[b])
    s = np.sin(angle[b])
    return origin[b, 0] + c * lx - s * lz, origin[b, 1] + s * lx + c * lz


@njit(cache=True)
def point_jacobian(parent, jtype, origin, angle, b, px, pz):
    """2 x 9 world-frame Jacobian of a point rigidly attached to body b."""
    J = np.zeros((2, NB))
    j = b
    while j >= 0:
        jx, jz = _jac_col(parent, jtype, origin, angle, j, px, pz)
        J[0, j] = jx
        J[1, j] = jz
        j = parent[j]
    return J


@njit(cache=True)
def _jac_col(parent, jtype, origin, angle, j, px, pz):
    if jtype[j] == _REV:
        return -(pz - origin[j, 1]), px - origin[j, 0]
    p = parent[j]
    ap = angle[p] if p >= 0 else 0.0
    if jtype[j] == _PX:
        return np.cos(ap), np.sin(ap)
    return -np.sin(ap), np.cos(ap)


@njit(cache=True)
def _point_velocity(parent, jtype, origin, angle, b, px, pz, qd):
    vx = 0.0
    vz = 0.0
    j = b
    while j >= 0:
        jx, jz = _jac_col(parent, jtype, origin, angle, j, px, pz)
        vx += jx * qd[j]
        vz += jz * qd[j]
        j = parent[j]
    return vx, vz


@njit(cache=True)
def _apply_point_force(parent, jtype, origin, angle, b, px, pz, fx, fz, gen):
    j = b
    while j >= 0:
        jx, jz = _jac_col(parent, jtype, origin, angle, j, px, pz)
        gen[j] += jx * fx + jz * fz
        j = parent[j]


@njit(cache=True)
def _friction(ft, normal, mu):
    lim = mu * normal
    if ft > lim:
        return lim
    if ft < -lim:
        return -lim
    return ft


@njit(cache=True)
def _contact_into(parent, jtype, placement, link_tip, contact, q, qd, origin, angle, gen, link_f):
    for i in range(NB):
        gen[i] = 0.0
    for i in range(3):
        link_f[i, 0] = 0.0
        link_f[i, 1] = 0.0
    if contact[K_CONTACTS_ON] == 0.0:
        return 0.0
    _world_frames_into(parent, jtype, placement, q, origin, angle)
    k = contact[K_STIFF]
    c = contact[K_DAMP]
    mu = contact[K_MU]
    cs = contact[K_SLIP]
    r = contact[K_WHEEL_R]
    wheel_n = 0.0

    # wheel / ground
    wx = origin[5, 0]
    wz = origin[5, 1]
    pen = r - wz
    if pen > 0.0:
        px = wx
        pz = wz - r
        vx, vz = _point_velocity(parent, jtype, origin, angle, 5, px, pz, qd)
        n = k * pen - c * vz
        if n < 0.0:
            n = 0.0
        ft = _friction(-cs * vx, n, mu)
        _apply_point_force(parent, jtype, origin, angle, 5, px, pz, ft, n, gen)
        wheel_n = n

    ka = contact[K_ARM_STIFF]
    ca = contact[K_ARM_DAMP]
    rho = contact[K_ARM_RADIUS]
    hl = contact[K_BASE_HALF]
    rc = contact[K_BASE_R]
    cb = np.cos(angle[2])
    sb = np.sin(angle[2])
    for li in range(3):
        b = 6 + li
        for h in range(2):
            frac = 0.5 if h == 0 else 1.0
            px, pz = body_point(origin, angle, b, frac * link_tip[li, 0], frac * link_tip[li, 1])
            # ground
            pen = rho - pz
            if pen > 0.0:
                vx, vz = _point_velocity(parent, jtype, origin, angle, b, px, pz, qd)
                n = ka * pen - ca * vz
                if n < 0.0:
                    n = 0.0
                ft = _friction(-ca * vx, n, mu)
                _apply_point_force(parent, jtype, origin, angle, b, px, pz, ft, n, gen)
                link_f[li, 0] += ft
                link_f[li, 1] += n
            # base capsule, axis along body x
            dx = px - origin[2, 0]
            dz = pz - origin[2, 1]
            lx = cb * dx + sb * dz
            lz = -sb * dx + cb * dz
            sx = min(max(lx, -hl), hl)
            ex = lx - sx
            ez = lz
            d = np.sqrt(ex * ex + ez * ez)
            pen = rc + rho - d
            if pen > 0.0 and d > 1e-9:
                nx_l = ex / d
                nz_l = ez / d
                nx = cb * nx_l - sb * nz_l
                nz = sb * nx_l + cb * nz_l
                swx = origin[2, 0] + cb * sx
                swz = origin[2, 1] + sb * sx
                vax, vaz = _point_velocity(parent, jtype, origin, angle, b, px, pz, qd)
                vbx, vbz = _point_velocity(parent, jtype, origin, angle, 2, swx, swz, qd)
                rvx = vax - vbx
                rvz = vaz - vbz
                vn = rvx * nx + rvz * nz
                n = ka * pen - ca * vn
                if n < 0.0:
                    n = 0.0
                tx = -nz
                tz = nx
                ft = _friction(-ca * (rvx * tx + rvz * tz), n, mu)
                fx = n * nx + ft * tx
                fz = n * nz + ft * tz
                _apply_point_force(parent, jtype, origin, angle, b, px, pz, fx, fz, gen)
                _apply_point_force(parent, jtype, origin, angle, 2, swx, swz, -fx, -fz, gen)
                link_f[li, 0] += fx
                link_f[li, 1] += fz
    return wheel_n


@njit(cache=True)
def contact_kernel(parent, jtype, placement, link_tip, contact, q, qd):
    """Penalty contact forces.

    Returns the generalised contact force (9,), the per-arm-link force
    vectors (3, 2) and the wheel normal force.
    """
    origin = np.empty((NB, 2))
    angle = np.empty(NB)
    gen = np.empty(NB)
    link_f = np.empty((3, 2))
    wn = _contact_into(parent, jtype, placement, link_tip, contact, q, qd, origin, angle, gen, link_f)
    return gen, link_f, wn


@njit(cache=True)
def arm_pd_kernel(targets, q_arm, qd_arm, kp, kd, limits):
    tau = np.zeros(3)
    for i in range(3):
        tau[i] = _saturate(kp * (targets[i] - q_arm[i]) - kd * qd_arm[i], limits[i])
    return tau


@njit(cache=True)
def _saturate(x, lim):
    if x > lim:
        return lim
    if x < -lim:
        return -lim
    return x


@njit(cache=True)
def _solve_spd(M, rhs, locked, L, out):
    """Cholesky solve restricted to unlocked joints; locked ones get 0."""
    n = M.shape[0]
    for i in range(n):
        out[i] = 0.0
        for j in range(n):
            L[i, j] = 0.0
    for j in range(n):
        if locked[j]:
            continue
        d = M[j, j]
        for k in range(j):
            if not locked[k]:
                d -= L[j, k] * L[j, k]
        if d <= 0.0:
            return False
        d = np.sqrt(d)
        L[j, j] = d
        for i in range(j + 1, n):
            if locked[i]:
                continue
            s = M[i, j]
            for k in range(j):
                if not locked[k]:
                    s -= L[i, k] * L[j, k]
            L[i, j] = s / d
    # forward then back substitution
    y = np.zeros(n)
    for i in range(n):
        if locked[i]:
            continue
        s = rhs[i]
        for k in range(i):
            if not locked[k]:
                s -= L[i, k] * y[k]
        y[i] = s / L[i, i]
    for i in range(n - 1, -1, -1):
        if locked[i]:
            continue
        s = y[i]
        for k in range(i + 1, n):
            if not locked[k]:
                s -= L[k, i] * out[k]
        out[i] = s / L[i, i]
    return True


@njit(cache=True)
def forward_dynamics_kernel(parent, jtype, placement, mass, com, inertia, locked, q, qd, tau, gravity):
    X = np.empty((NB, 4))
    Ic = np.empty((NB, 3, 3))
    M = np.zeros((NB, NB))
    v = np.empty((NB, 3))
    a = np.empty((NB, 3))
    f = np.empty((NB, 3))
    bias = np.empty(NB)
    L = np.empty((NB, NB))
    qdd = np.zeros(NB)
    _crba_into(parent, jtype, placement, mass, com, inertia, q, X, Ic, M)
    _rnea_into(parent, jtype, placement, mass, com, inertia, q, qd, np.zeros(NB), gravity,
               X, v, a, f, bias)
    rhs = tau - bias
    if not _solve_spd(M, rhs, locked, L, qdd):
        qdd[:] = np.nan
    return qdd


@njit(cache=True)
def _step_into(parent, jtype, placement, mass, com, inertia, link_tip, torque_limits,
               contact, locked, q, qd, leg_tau, arm_targets, dt,
               X, Ic, M, v, a, f, bias, L, qdd, zeros, origin, angle, gen, link_f, tau):
    for i in range(3):
        tau[i] = 0.0
        tau[3 + i] = _saturate(leg_tau[i], torque_limits[3 + i])
    kp = contact[K_KP]
    kd = contact[K_KD]
    for i in range(3):
        tau[6 + i] = _saturate(kp * (arm_targets[i] - q[6 + i]) - kd * qd[6 + i],
                               torque_limits[6 + i])
    _contact_into(parent, jtype, placement, link_tip, contact, q, qd, origin, angle, gen, link_f)
    for i in range(NB):
        for j in range(NB):
            M[i, j] = 0.0
    _crba_into(parent, jtype, placement, mass, com, inertia, q, X, Ic, M)
    _rnea_into(parent, jtype, placement, mass, com, inertia, q, qd, zeros, contact[K_GRAVITY],
               X, v, a, f, bias)
    for i in range(NB):
        bias[i] = tau[i] + gen[i] - bias[i]
    ok = _solve_spd(M, bias, locked, L, qdd)
    for i in range(NB):
        qd[i] += dt * qdd[i]
        q[i] += dt * qd[i]
    return ok


@njit(cache=True)
def step_kernel(parent, jtype, placement, mass, com, inertia, link_tip, torque_limits,
                contact, locked, q, qd, leg_tau, arm_targets, dt):
    """One semi-implicit Euler step. Returns (q, qd, link_forces, torques)."""
    q = q.copy()
    qd = qd.copy()
    X = np.empty((NB, 4))
    Ic = np.empty((NB, 3, 3))
    M = np.empty((NB, NB))
    v = np.empty((NB, 3))
    a = np.empty((NB, 3))
    f = np.empty((NB, 3))
    bias = np.empty(NB)
    L = np.empty((NB, NB))
    qdd = np.empty(NB)
    zeros = np.zeros(NB)
    origin = np.empty((NB, 2))
    angle = np.empty(NB)
    gen = np.empty(NB)
    link_f = np.empty((3, 2))
    tau = np.empty(NB)
    ok = _step_into(parent, jtype, placement, mass, com, inertia, link_tip, torque_limits,
                    contact, locked, q, qd, leg_tau, arm_targets, dt,
                    X, Ic, M, v, a, f, bias, L, qdd, zeros, origin, angle, gen, link_f, tau)
    if not ok:
        q[:] = np.nan
        qd[:] = np.nan
    return q, qd, link_f, tau


@njit(cache=True, nogil=True)
def step_batch(parent, jtype, placement, mass, com, inertia, link_tip, torque_limits,
               contact, locked, Q, QD, LEG, ARM, dt, n_sub, active):
    """Advance every active env by ``n_sub`` physics steps in place.

    Link forces and actuator torques are averaged over the substeps. Envs
    whose state turns non-finite are flagged and left at their last finite
    state.
    """
    n = Q.shape[0]
    link_mean = np.zeros((n, 3, 2))
    tau_mean = np.zeros((n, 6))
    diverged = np.zeros(n, dtype=np.bool_)
    X = np.empty((NB, 4))
    Ic = np.empty((NB, 3, 3))
    M = np.empty((NB, NB))
    v = np.empty((NB, 3))
    a = np.empty((NB, 3))
    f = np.empty((NB, 3))
    bias = np.empty(NB)
    L = np.empty((NB, NB))
    qdd = np.empty(NB)
    zeros = np.zeros(NB)
    origin = np.empty((NB, 2))
    angle = np.empty(NB)
    gen = np.empty(NB)
    link_f = np.empty((3, 2))
    tau = np.empty(NB)
    q = np.empty(NB)
    qd = np.empty(NB)
    for e in range(n):
        if not active[e]:
            continue
        q[:] = Q[e]
        qd[:] = QD[e]
        ok = True
        for _ in range(n_sub):
            ok = _step_into(parent, jtype, placement, mass, com, inertia, link_tip, torque_limits,
                            contact, locked, q, qd, LEG[e], ARM[e], dt,
                            X, Ic, M, v, a, f, bias, L, qdd, zeros, origin, angle, gen, link_f, tau)
            for i in range(3):
                link_mean[e, i, 0] += link_f[i, 0]
                link_mean[e, i, 1] += link_f[i, 1]
            for i in range(6):
                tau_mean[e, i] += tau[3 + i]
            for i in range(NB):
                if not (np.isfinite(q[i]) and np.isfinite(qd[i])):
                    ok = False
            if not ok:
                break
        if ok:
            Q[e] = q
            QD[e] = qd
            for i in range(3):
                link_mean[e, i, 0] /= n_sub
                link_mean[e, i, 1] /= n_sub
            for i in range(6):
                tau_mean[e, i] /= n_sub
        else:
            diverged[e] = True
            link_mean[e] = 0.0
            tau_mean[e] = 0.0
    return link_mean, tau_mean, diverged
