"""Mass-matrix forward dynamics, kept separate from the articulated-body path.

The joint-space inertia matrix comes from the composite-rigid-body method and
the bias forces from recursive Newton-Euler inverse dynamics at zero joint
acceleration. Plain numpy throughout; this is a checking route, not a fast one.
"""
import numpy as np

from . import _kernels as K
from .rigidbody import KinematicTree, ModelError, _check_state, _wrench_array


def _subspaces(tree, S):
    starts, counts = tree.arrays[4], tree.arrays[5]
    return [S[i][:, : counts[i]] for i in range(tree.nbodies)], starts, counts


def mass_matrix(tree: KinematicTree, q) -> np.ndarray:
    q = np.asarray(q, float)
    Xup, S, *_ = K.tree_kinematics(tree.arrays, q, np.zeros_like(q))
    Ss, starts, counts = _subspaces(tree, S)
    parent = tree.arrays[0]
    Ic = [I.copy() for I in tree.arrays[8]]
    for i in range(tree.nbodies - 1, -1, -1):
        if parent[i] >= 0:
            Ic[parent[i]] += Xup[i].T @ Ic[i] @ Xup[i]
    M = np.zeros((tree.ndof, tree.ndof))
    for i in range(tree.nbodies):
        si = slice(starts[i], starts[i] + counts[i])
        F = Ic[i] @ Ss[i]
        M[si, si] = Ss[i].T @ F
        j = i
        while parent[j] >= 0:
            F = Xup[j].T @ F
            j = parent[j]
            sj = slice(starts[j], starts[j] + counts[j])
            M[sj, si] = Ss[j].T @ F
            M[si, sj] = M[sj, si].T
    return M


def bias_forces(tree: KinematicTree, q, u, external_wrenches=None) -> np.ndarray:
    """Inverse dynamics with zero joint acceleration (Coriolis, centrifugal, -J^T f_ext)."""
    q = np.asarray(q, float)
    u = np.asarray(u, float)
    fext = _wrench_array(tree, external_wrenches)
    Xup, S, v, c, _, _ = K.tree_kinematics(tree.arrays, q, u)
    Ss, starts, counts = _subspaces(tree, S)
    parent = tree.arrays[0]
    inertia = tree.arrays[8]
    nb = tree.nbodies
    a = np.zeros((nb, 6))
    f = np.zeros((nb, 6))
    for i in range(nb):
        a[i] = c[i] + (Xup[i] @ a[parent[i]] if parent[i] >= 0 else 0.0)
        f[i] = inertia[i] @ a[i] + K.cross_force(v[i], inertia[i] @ v[i]) - fext[i]
    tau = np.zeros(tree.ndof)
    for i in range(nb - 1, -1, -1):
        tau[starts[i]:starts[i] + counts[i]] = Ss[i].T @ f[i]
        if parent[i] >= 0:
            f[parent[i]] += Xup[i].T @ f[i]
    return tau


def forward_dynamics_oracle(tree: KinematicTree, q, u, generalized_forces=None,
                            external_wrenches=None, prescribed=None) -> np.ndarray:
    """``M(q)^-1 (tau - bias)``, with prescribed joints moved to the right-hand side."""
    q, u, tau = _check_state(tree, q, u, generalized_forces)
    M = mass_matrix(tree, q)
    rhs = tau - bias_forces(tree, q, u, external_wrenches)
    known = np.zeros(tree.ndof, dtype=bool)
    qdd = np.zeros(tree.ndof)
    for jname, acc in (prescribed or {}).items():
        sl = tree.dof_map[jname]
        known[sl] = True
        qdd[sl] = acc
    free = ~known
    if not free.any():
        return qdd
    Mff = M[np.ix_(free, free)]
    b = rhs[free] - M[np.ix_(free, known)] @ qdd[known]
    try:
        L = np.linalg.cholesky(Mff)
    except np.linalg.LinAlgError as exc:
        raise ModelError("mass matrix not positive definite") from exc
    qdd[free] = np.linalg.solve(L.T, np.linalg.solve(L, b))
    return qdd
