"""Numba kernels for kinematics, articulated-body dynamics, force assembly and
time stepping.

Everything here operates on plain arrays packed into tuples by
:class:`seatsim.rigidbody.KinematicTree` and :class:`seatsim.model.Model`.
Spatial vectors follow the Featherstone convention ``[angular; linear]`` and
are expressed in body coordinates unless a name says ``world``.

Joint motion is described as a chain of 1-DoF primitives (rotation about or
translation along a unit axis); generalized velocities are the time
derivatives of the generalized coordinates.
"""
import math

import numpy as np
from numba import njit

PRIM_ROT = 0
PRIM_TRANS = 1

STATUS_OK = 0
STATUS_NONFINITE = 1
STATUS_GIMBAL = 2
STATUS_SINGULAR = 3

BODY_WORLD = -1
BODY_PLATFORM = -2

CONTACT_PLANE = 0
CONTACT_ELLIPSOID = 1


# ---------------------------------------------------------------------------
# small dense helpers (explicit loops beat BLAS dispatch at 6x6)


@njit(cache=True)
def skew(a):
    m = np.zeros((3, 3))
    m[0, 1] = -a[2]
    m[0, 2] = a[1]
    m[1, 0] = a[2]
    m[1, 2] = -a[0]
    m[2, 0] = -a[1]
    m[2, 1] = a[0]
    return m


@njit(cache=True)
def cross3(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


@njit(cache=True)
def axis_rotation(axis, angle):
    """Rotation matrix for a right-handed rotation of ``angle`` about ``axis``."""
    c = math.cos(angle)
    s = math.sin(angle)
    x, y, z = axis[0], axis[1], axis[2]
    C = 1.0 - c
    R = np.empty((3, 3))
    R[0, 0] = c + x * x * C
    R[0, 1] = x * y * C - z * s
    R[0, 2] = x * z * C + y * s
    R[1, 0] = y * x * C + z * s
    R[1, 1] = c + y * y * C
    R[1, 2] = y * z * C - x * s
    R[2, 0] = z * x * C - y * s
    R[2, 1] = z * y * C + x * s
    R[2, 2] = c + z * z * C
    return R


@njit(cache=True)
def plucker(R, p):
    """Motion transform from parent to child coordinates.

    ``R`` holds the child axes in parent coordinates, ``p`` the child origin.
    """
    X = np.zeros((6, 6))
    E = R.T
    Ep = E @ skew(p)
    for i in range(3):
        for j in range(3):
            X[i, j] = E[i, j]
            X[i + 3, j + 3] = E[i, j]
            X[i + 3, j] = -Ep[i, j]
    return X


@njit(cache=True)
def mat6_mul(A, B):
    C = np.zeros((6, 6))
    for i in range(6):
        for k in range(6):
            a = A[i, k]
            if a != 0.0:
                for j in range(6):
                    C[i, j] += a * B[k, j]
    return C


@njit(cache=True)
def mat6_vec(A, x):
    y = np.zeros(6)
    for i in range(6):
        s = 0.0
        for j in range(6):
            s += A[i, j] * x[j]
        y[i] = s
    return y


@njit(cache=True)
def mat6T_vec(A, x):
    y = np.zeros(6)
    for j in range(6):
        s = 0.0
        for i in range(6):
            s += A[i, j] * x[i]
        y[j] = s
    return y


@njit(cache=True)
def congruence6(X, Ia):
    """Return ``X.T @ Ia @ X``."""
    T = mat6_mul(Ia, X)
    out = np.zeros((6, 6))
    for i in range(6):
        for k in range(6):
            x = X[k, i]
            if x != 0.0:
                for j in range(6):
                    out[i, j] += x * T[k, j]
    return out


@njit(cache=True)
def cross_motion(v, m):
    """Spatial motion cross product ``v x m``."""
    out = np.empty(6)
    out[0] = v[1] * m[2] - v[2] * m[1]
    out[1] = v[2] * m[0] - v[0] * m[2]
    out[2] = v[0] * m[1] - v[1] * m[0]
    out[3] = v[1] * m[5] - v[2] * m[4] + v[4] * m[2] - v[5] * m[1]
    out[4] = v[2] * m[3] - v[0] * m[5] + v[5] * m[0] - v[3] * m[2]
    out[5] = v[0] * m[4] - v[1] * m[3] + v[3] * m[1] - v[4] * m[0]
    return out


@njit(cache=True)
def cross_force(v, f):
    """Spatial force cross product ``v x* f``."""
    out = np.empty(6)
    out[0] = v[1] * f[2] - v[2] * f[1] + v[4] * f[5] - v[5] * f[4]
    out[1] = v[2] * f[0] - v[0] * f[2] + v[5] * f[3] - v[3] * f[5]
    out[2] = v[0] * f[1] - v[1] * f[0] + v[3] * f[4] - v[4] * f[3]
    out[3] = v[1] * f[5] - v[2] * f[4]
    out[4] = v[2] * f[3] - v[0] * f[5]
    out[5] = v[0] * f[4] - v[1] * f[3]
    return out


@njit(cache=True)
def spd_cholesky(D, n):
    """Lower Cholesky factor of the leading n x n block of D.

    Returns ``(L, ok)``; ``ok`` is False when D is not positive definite.
    """
    L = np.zeros((6, 6))
    for j in range(n):
        s = D[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not s > 0.0:
            return L, False
        L[j, j] = math.sqrt(s)
        for i in range(j + 1, n):
            s = D[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / L[j, j]
    return L, True


@njit(cache=True)
def cholesky_solve(L, b, n):
    """Solve L L^T x = b (leading n entries of b)."""
    y = np.zeros(6)
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * y[k]
        y[i] = s / L[i, i]
    x = np.zeros(6)
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return x


# ---------------------------------------------------------------------------
# kinematics


@njit(cache=True)
def joint_kinematics(q, qd, start, count, ptype, paxis):
    """Joint rotation/translation, motion subspace and velocity-product term.

    Returns ``(RJ, pJ, XJ, S, cJ)`` where ``S`` is 6 x 6 with the first
    ``count`` columns populated (child coordinates).
    """
    RJ = np.eye(3)
    pJ = np.zeros(3)
    for k in range(count):
        d = start + k
        ax = paxis[d]
        if ptype[d] == PRIM_ROT:
            RJ = RJ @ axis_rotation(ax, q[d])
        else:
            pJ = pJ + RJ @ (ax * q[d])
    XJ = plucker(RJ, pJ)

    S = np.zeros((6, 6))
    cJ = np.zeros(6)
    vsum = np.zeros(6)
    M = np.eye(6)
    for k in range(count - 1, -1, -1):
        d = start + k
        ax = paxis[d]
        sh = np.zeros(6)
        if ptype[d] == PRIM_ROT:
            sh[0] = ax[0]
            sh[1] = ax[1]
            sh[2] = ax[2]
        else:
            sh[3] = ax[0]
            sh[4] = ax[1]
            sh[5] = ax[2]
        col = mat6_vec(M, sh)
        for r in range(6):
            S[r, k] = col[r]
        cj = cross_motion(col, vsum)
        for r in range(6):
            cJ[r] += qd[d] * cj[r]
            vsum[r] += col[r] * qd[d]
        if ptype[d] == PRIM_ROT:
            Xk = plucker(axis_rotation(ax, q[d]), np.zeros(3))
        else:
            Xk = plucker(np.eye(3), ax * q[d])
        M = mat6_mul(M, Xk)
    return RJ, pJ, XJ, S, cJ


@njit(cache=True)
def tree_kinematics(tree, q, qd):
    """Per-body transforms, motion subspaces, velocities and world poses."""
    parent, Xtree, Rtree, ptree, dof_start, dof_count, ptype, paxis = tree[:8]
    nb = parent.shape[0]
    Xup = np.zeros((nb, 6, 6))
    S = np.zeros((nb, 6, 6))
    v = np.zeros((nb, 6))
    c = np.zeros((nb, 6))
    Rw = np.zeros((nb, 3, 3))
    pw = np.zeros((nb, 3))
    for i in range(nb):
        RJ, pJ, XJ, Si, cJ = joint_kinematics(
            q, qd, dof_start[i], dof_count[i], ptype, paxis
        )
        Xup[i] = mat6_mul(XJ, Xtree[i])
        S[i] = Si
        n = dof_count[i]
        vJ = np.zeros(6)
        for k in range(n):
            qk = qd[dof_start[i] + k]
            for r in range(6):
                vJ[r] += Si[r, k] * qk
        p = parent[i]
        if p >= 0:
            vi = mat6_vec(Xup[i], v[p]) + vJ
            Rp = Rw[p]
            pp = pw[p]
        else:
            vi = vJ
            Rp = np.eye(3)
            pp = np.zeros(3)
        v[i] = vi
        c[i] = cJ + cross_motion(vi, vJ)
        Rw[i] = Rp @ Rtree[i] @ RJ
        pw[i] = pp + Rp @ (ptree[i] + Rtree[i] @ pJ)
    return Xup, S, v, c, Rw, pw


# ---------------------------------------------------------------------------
# dynamics


@njit(cache=True)
def aba(tree, Xup, S, v, c, tau, fext, prescribed, qdd_known, armature):
    """Articulated-body forward dynamics.

    ``prescribed[i]`` marks joints whose accelerations are taken from
    ``qdd_known`` (hybrid dynamics). ``armature`` adds a diagonal joint-space
    inertia per DoF. Returns ``(qdd, body_acc, status)``.
    """
    parent = tree[0]
    dof_start = tree[4]
    dof_count = tree[5]
    inertia = tree[8]
    nb = parent.shape[0]
    ndof = tau.shape[0]
    IA = inertia.copy()
    pA = np.zeros((nb, 6))
    U = np.zeros((nb, 6, 6))
    Lfac = np.zeros((nb, 6, 6))
    uvec = np.zeros((nb, 6))
    for i in range(nb):
        pA[i] = cross_force(v[i], mat6_vec(inertia[i], v[i])) - fext[i]

    for i in range(nb - 1, -1, -1):
        n = dof_count[i]
        st = dof_start[i]
        if prescribed[i]:
            acc = c[i].copy()
            for k in range(n):
                for r in range(6):
                    acc[r] += S[i, r, k] * qdd_known[st + k]
            Ia = IA[i].copy()
            pa = pA[i] + mat6_vec(IA[i], acc)
        else:
            Ui = np.zeros((6, 6))
            for r in range(6):
                for k in range(n):
                    s = 0.0
                    for m in range(6):
                        s += IA[i, r, m] * S[i, m, k]
                    Ui[r, k] = s
            D = np.zeros((6, 6))
            for a_ in range(n):
                for b_ in range(n):
                    s = 0.0
                    for m in range(6):
                        s += S[i, m, a_] * Ui[m, b_]
                    D[a_, b_] = s
                D[a_, a_] += armature[st + a_]
            Li, ok = spd_cholesky(D, n)
            if not ok:
                return np.zeros(ndof), np.zeros((nb, 6)), STATUS_SINGULAR
            for k in range(n):
                s = tau[st + k]
                for m in range(6):
                    s -= S[i, m, k] * pA[i, m]
                uvec[i, k] = s
            # W = U D^-1 (6 x n), row by row since D is symmetric
            W = np.zeros((6, 6))
            for r in range(6):
                W[r] = cholesky_solve(Li, Ui[r], n)
            if n == 6:
                # a joint spanning all motion passes no inertia to its parent
                Ia = np.zeros((6, 6))
            else:
                Ia = IA[i].copy()
                for r in range(6):
                    for m in range(6):
                        s = 0.0
                        for k in range(n):
                            s += W[r, k] * Ui[m, k]
                        Ia[r, m] -= s
            pa = pA[i] + mat6_vec(Ia, c[i])
            for r in range(6):
                s = 0.0
                for k in range(n):
                    s += W[r, k] * uvec[i, k]
                pa[r] += s
            U[i] = Ui
            Lfac[i] = Li
        p = parent[i]
        if p >= 0:
            IA[p] += congruence6(Xup[i], Ia)
            pA[p] += mat6T_vec(Xup[i], pa)

    qdd = np.zeros(ndof)
    acc_body = np.zeros((nb, 6))
    for i in range(nb):
        n = dof_count[i]
        st = dof_start[i]
        p = parent[i]
        if p >= 0:
            ai = mat6_vec(Xup[i], acc_body[p]) + c[i]
        else:
            ai = c[i].copy()
        if prescribed[i]:
            for k in range(n):
                qdd[st + k] = qdd_known[st + k]
        else:
            tmp = np.zeros(6)
            for k in range(n):
                s = uvec[i, k]
                for m in range(6):
                    s -= U[i, m, k] * ai[m]
                tmp[k] = s
            x = cholesky_solve(Lfac[i], tmp, n)
            for k in range(n):
                qdd[st + k] = x[k]
        for k in range(n):
            for r in range(6):
                ai[r] += S[i, r, k] * qdd[st + k]
        acc_body[i] = ai
    return qdd, acc_body, STATUS_OK


@njit(cache=True)
def wrenches_to_generalized(tree, Xup, S, f):
    """Map body-frame spatial forces to generalized forces (J^T f)."""
    parent = tree[0]
    dof_start = tree[4]
    dof_count = tree[5]
    nb = parent.shape[0]
    ndof = tree[6].shape[0]
    acc = f.copy()
    tau = np.zeros(ndof)
    for i in range(nb - 1, -1, -1):
        for k in range(dof_count[i]):
            s = 0.0
            for r in range(6):
                s += S[i, r, k] * acc[i, r]
            tau[dof_start[i] + k] = s
        p = parent[i]
        if p >= 0:
            acc[p] += mat6T_vec(Xup[i], acc[i])
    return tau


@njit(cache=True)
def point_wrench(Rw, pw, force_world, point_world):
    """Body-frame spatial force for a world force applied at a world point."""
    Fb = Rw.T @ force_world
    rb = Rw.T @ (point_world - pw)
    f = np.empty(6)
    m = cross3(rb, Fb)
    f[0] = m[0]
    f[1] = m[1]
    f[2] = m[2]
    f[3] = Fb[0]
    f[4] = Fb[1]
    f[5] = Fb[2]
    return f


@njit(cache=True)
def point_velocity_world(Rw, v_body, r_body):
    w = v_body[:3]
    vo = v_body[3:]
    return Rw @ (vo + cross3(w, r_body))


# ---------------------------------------------------------------------------
# contact geometry


@njit(cache=True)
def ellipsoid_plane(R, center, axes, normal, offset):
    """Deepest point of an ellipsoid below the plane ``normal . x = offset``.

    Returns ``(depth, point)``; depth <= 0 means no contact.
    """
    nl = R.T @ normal
    nt = np.empty(3)
    for k in range(3):
        nt[k] = axes[k] * nl[k]
    nrm = math.sqrt(nt[0] * nt[0] + nt[1] * nt[1] + nt[2] * nt[2])
    local = np.empty(3)
    for k in range(3):
        local[k] = axes[k] * nt[k] / nrm
    point = center - R @ local
    depth = offset - (normal[0] * point[0] + normal[1] * point[1] + normal[2] * point[2])
    return depth, point


@njit(cache=True)
def radial_extent(R, axes, u_world):
    """Distance from an ellipsoid's center to its surface along a unit direction."""
    ul = R.T @ u_world
    s = 0.0
    for k in range(3):
        s += (ul[k] / axes[k]) ** 2
    return 1.0 / math.sqrt(s)


@njit(cache=True)
def ellipsoid_ellipsoid(Ra, ca, axa, Rb, cb, axb, fallback_normal):
    """Line-of-centers overlap of two ellipsoids.

    Returns ``(depth, point, normal, degenerate)``; ``normal`` points from b
    towards a. With coincident centers the fallback normal is used.
    """
    d = ca - cb
    dist = math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
    degenerate = dist < 1e-12
    if degenerate:
        u = fallback_normal.copy()
    else:
        u = d / dist
    ra = radial_extent(Ra, axa, u)
    rb = radial_extent(Rb, axb, u)
    depth = ra + rb - dist
    point = 0.5 * ((ca - ra * u) + (cb + rb * u))
    return depth, point, u, degenerate


@njit(cache=True)
def contact_law(depth, depth_rate, v_t, k, c, mu, eps):
    """Unilateral linear spring-damper normal force and regularized Coulomb friction.

    Returns ``(normal_magnitude, friction_vector)``.
    """
    fn = k * depth + c * depth_rate
    if fn < 0.0:
        fn = 0.0
    vt = math.sqrt(v_t[0] * v_t[0] + v_t[1] * v_t[1] + v_t[2] * v_t[2])
    ft = -mu * fn * v_t / (vt + eps)
    return fn, ft


# ---------------------------------------------------------------------------
# force assembly


@njit(cache=True)
def body_point_state(body, r_body, Rw, pw, v, plat_disp, plat_vel):
    """World position and velocity of a point attached to a body code."""
    if body >= 0:
        P = pw[body] + Rw[body] @ r_body
        V = point_velocity_world(Rw[body], v[body], r_body)
    elif body == BODY_PLATFORM:
        P = r_body + plat_disp
        V = plat_vel.copy()
    else:
        P = r_body.copy()
        V = np.zeros(3)
    return P, V


@njit(cache=True)
def assemble_forces(tree, forces, contacts, q, qd, Xup, S, v, Rw, pw,
                    plat_disp, plat_vel, prev_normals):
    """Generalized passive forces: gravity, joint restraints, point restraints
    and seat contacts.

    Returns ``(tau, contact_force_world, normals)``; contact forces are those
    acting on the body side of each pair.
    """
    parent = tree[0]
    mass = tree[9]
    com = tree[10]
    nb = parent.shape[0]
    ndof = q.shape[0]
    gravity, rk, rc, rq0, pr_a, pr_ra, pr_b, pr_rb, pr_k, pr_c = forces
    (ct_kind, ct_body, ct_R, ct_c, ct_axes, ct_mR, ct_mc, ct_maxes,
     ct_normal, ct_offset, ct_k, ct_c_, ct_mu, ct_eps) = contacts

    f = np.zeros((nb, 6))
    for i in range(nb):
        fw = mass[i] * gravity
        f[i] += point_wrench(Rw[i], pw[i], fw, pw[i] + Rw[i] @ com[i])

    for j in range(pr_k.shape[0]):
        Pa, Va = body_point_state(pr_a[j], pr_ra[j], Rw, pw, v, plat_disp, plat_vel)
        Pb, Vb = body_point_state(pr_b[j], pr_rb[j], Rw, pw, v, plat_disp, plat_vel)
        Fa = -pr_k[j] * (Pa - Pb) - pr_c[j] * (Va - Vb)
        if pr_a[j] >= 0:
            f[pr_a[j]] += point_wrench(Rw[pr_a[j]], pw[pr_a[j]], Fa, Pa)
        if pr_b[j] >= 0:
            f[pr_b[j]] += point_wrench(Rw[pr_b[j]], pw[pr_b[j]], -Fa, Pb)

    nc = ct_k.shape[0]
    cforce = np.zeros((nc, 3))
    normals = prev_normals.copy()
    for j in range(nc):
        b = ct_body[j]
        Re = Rw[b] @ ct_R[j]
        ce = pw[b] + Rw[b] @ ct_c[j]
        if ct_kind[j] == CONTACT_PLANE:
            nrm = ct_normal[j]
            off = ct_offset[j] + nrm[0] * plat_disp[0] + nrm[1] * plat_disp[1] + nrm[2] * plat_disp[2]
            depth, point = ellipsoid_plane(Re, ce, ct_axes[j], nrm, off)
        else:
            cm = ct_mc[j] + plat_disp
            depth, point, nrm, _ = ellipsoid_ellipsoid(
                Re, ce, ct_axes[j], ct_mR[j], cm, ct_maxes[j], prev_normals[j]
            )
        normals[j] = nrm
        if depth <= 0.0:
            continue
        rb = Rw[b].T @ (point - pw[b])
        Va = point_velocity_world(Rw[b], v[b], rb)
        vrel = Va - plat_vel
        vn = nrm[0] * vrel[0] + nrm[1] * vrel[1] + nrm[2] * vrel[2]
        vt = vrel - vn * nrm
        fn, ft = contact_law(depth, -vn, vt, ct_k[j], ct_c_[j], ct_mu[j], ct_eps[j])
        F = fn * nrm + ft
        cforce[j] = F
        f[b] += point_wrench(Rw[b], pw[b], F, point)

    tau = wrenches_to_generalized(tree, Xup, S, f)
    for d in range(ndof):
        tau[d] += -rk[d] * (q[d] - rq0[d]) - rc[d] * qd[d]
    return tau, cforce, normals


@njit(cache=True)
def pid_update(control, q, qd, ref, integral, dt):
    """Advance integrators and return controller torques.

    Torque per controlled DoF: kp*e + ki*integral - kd*qd with e = ref - q;
    the integrator is clamped to +/- its limit.
    """
    mask, kp, ki, kd, ilim, en_p, en_i, en_d = control
    ndof = q.shape[0]
    tau = np.zeros(ndof)
    new_int = integral.copy()
    for d in range(ndof):
        if not mask[d]:
            continue
        e = ref[d] - q[d]
        if en_i:
            x = integral[d] + e * dt
            if x > ilim[d]:
                x = ilim[d]
            elif x < -ilim[d]:
                x = -ilim[d]
            new_int[d] = x
        t = 0.0
        if en_p:
            t += kp[d] * e
        if en_i:
            t += ki[d] * new_int[d]
        if en_d:
            t -= kd[d] * qd[d]
        tau[d] = t
    return tau, new_int


# ---------------------------------------------------------------------------
# time stepping


@njit(cache=True)
def _accel(tree, forces, contacts, q, qd, tau_ctrl, plat_disp, plat_vel, prev_normals,
           gimbal, armature):
    Xup, S, v, c, Rw, pw = tree_kinematics(tree, q, qd)
    tau, cforce, normals = assemble_forces(
        tree, forces, contacts, q, qd, Xup, S, v, Rw, pw, plat_disp, plat_vel, prev_normals
    )
    tau += tau_ctrl
    nb = tree[0].shape[0]
    ndof = q.shape[0]
    qdd, acc, status = aba(
        tree, Xup, S, v, c, tau, np.zeros((nb, 6)), np.zeros(nb, dtype=np.bool_),
        np.zeros(ndof), armature,
    )
    for d in range(ndof):
        if gimbal[d] and abs(q[d]) > 1.2:
            status = STATUS_GIMBAL
    return qdd, acc, v, Rw, pw, cforce, normals, status


@njit(cache=True)
def _log_sample(tree, row, q, qd, qdd, acc, v, Rw, pw, cforce, tau_ctrl,
                pd_, pv_, pa_, t, log_t, log_q, log_u, log_qdd, log_pos, log_vel,
                log_acc, log_omega, log_rot, log_cf, log_ctrl, log_plat):
    com = tree[10]
    nb = tree[0].shape[0]
    log_t[row] = t
    log_q[row] = q
    log_u[row] = qd
    log_qdd[row] = qdd
    for i in range(nb):
        r = com[i]
        w = v[i, :3]
        vo = v[i, 3:]
        vp = vo + cross3(w, r)
        ap = acc[i, 3:] + cross3(acc[i, :3], r) + cross3(w, vp)
        log_pos[row, i] = pw[i] + Rw[i] @ r
        log_vel[row, i] = Rw[i] @ vp
        log_acc[row, i] = Rw[i] @ ap
        log_omega[row, i] = Rw[i] @ w
        log_rot[row, i] = Rw[i]
    log_cf[row] = cforce
    log_ctrl[row] = tau_ctrl
    log_plat[row, 0] = pd_
    log_plat[row, 1] = pv_
    log_plat[row, 2] = pa_


@njit(cache=True)
def run_steps(tree, forces, contacts, control, gimbal, q0, qd0, ref, integral0,
              normals0, k0, n_steps, h, plat, method, log_every,
              log_t, log_q, log_u, log_qdd, log_pos, log_vel, log_acc, log_omega,
              log_rot, log_cf, log_ctrl, log_plat):
    """Integrate ``n_steps`` fixed steps starting at step index ``k0``.

    ``plat`` is (n_samples, 3, 3): platform displacement, velocity and
    acceleration per sample of the step grid. ``method`` 0 is semi-implicit
    Euler, 1 is classical RK4 (platform linearly interpolated at half steps).
    Semi-implicit Euler treats the per-DoF joint damping (passive plus PID
    derivative) implicitly: the step solves (M + h C) qdd = f(q, qd), which
    keeps stiffly damped light segments stable at the fixed step.
    A log row is written whenever the step index is a multiple of
    ``log_every`` (the pre-step state of that index).

    Returns ``(q, qd, integral, normals, steps_done, rows_written, status)``.
    """
    q = q0.copy()
    qd = qd0.copy()
    integral = integral0.copy()
    normals = normals0.copy()
    row = 0
    ndof = q.shape[0]
    nsamp = plat.shape[0]
    armature = np.zeros(ndof)
    if method == 0:
        mask, kd, en_d = control[0], control[3], control[7]
        for d in range(ndof):
            armature[d] = h * forces[2][d]
            if mask[d] and en_d:
                armature[d] += h * kd[d]
    for s in range(n_steps):
        k = k0 + s
        t = k * h
        pd_ = plat[min(k, nsamp - 1), 0]
        pv_ = plat[min(k, nsamp - 1), 1]
        pa_ = plat[min(k, nsamp - 1), 2]
        tau_ctrl, integral = pid_update(control, q, qd, ref, integral, h)
        qdd, acc, v, Rw, pw, cforce, new_normals, status = _accel(
            tree, forces, contacts, q, qd, tau_ctrl, pd_, pv_, normals, gimbal, armature
        )
        if status != STATUS_OK:
            return q, qd, integral, normals, s, row, status
        if k % log_every == 0 and row < log_t.shape[0]:
            _log_sample(tree, row, q, qd, qdd, acc, v, Rw, pw, cforce, tau_ctrl,
                        pd_, pv_, pa_, t, log_t, log_q, log_u, log_qdd, log_pos,
                        log_vel, log_acc, log_omega, log_rot, log_cf, log_ctrl, log_plat)
            row += 1
        if method == 0:
            for d in range(ndof):
                qd[d] = qd[d] + h * qdd[d]
                q[d] = q[d] + h * qd[d]
        else:
            kn = min(k + 1, nsamp - 1)
            pd_m = 0.5 * (pd_ + plat[kn, 0])
            pv_m = 0.5 * (pv_ + plat[kn, 1])
            pd_e = plat[kn, 0]
            pv_e = plat[kn, 1]
            k1q = qd.copy()
            k1v = qdd
            q2 = q + 0.5 * h * k1q
            v2 = qd + 0.5 * h * k1v
            k2v = _accel(tree, forces, contacts, q2, v2, tau_ctrl, pd_m, pv_m, normals, gimbal, armature)[0]
            q3 = q + 0.5 * h * v2
            v3 = qd + 0.5 * h * k2v
            k3v = _accel(tree, forces, contacts, q3, v3, tau_ctrl, pd_m, pv_m, normals, gimbal, armature)[0]
            q4 = q + h * v3
            v4 = qd + h * k3v
            k4v = _accel(tree, forces, contacts, q4, v4, tau_ctrl, pd_e, pv_e, normals, gimbal, armature)[0]
            q = q + (h / 6.0) * (k1q + 2.0 * v2 + 2.0 * v3 + v4)
            qd = qd + (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        normals = new_normals
        for d in range(ndof):
            if not (math.isfinite(q[d]) and math.isfinite(qd[d])):
                return q, qd, integral, normals, s + 1, row, STATUS_NONFINITE
    return q, qd, integral, normals, n_steps, row, STATUS_OK
