"""Dense symmetric linear algebra: Cholesky factor/solve and Jacobi eigensolver.

These operate on plain ``numpy`` arrays; nothing here is differentiated.
"""

import math

import numpy as np

from ..errors import DecompositionError, DimensionError, SymmetryError


def _square(a, what):
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"{what} needs a square matrix, got shape {a.shape}")
    return a


def cholesky(a):
    """Lower-triangular ``L`` with ``L @ L.T == a``; raises on a nonpositive pivot."""
    a = _square(a, "cholesky")
    n = a.shape[0]
    low = np.zeros_like(a)
    for j in range(n):
        row = low[j, :j]
        pivot = a[j, j] - row @ row
        if not pivot > 0.0:
            raise DecompositionError(f"matrix not positive definite (pivot {j} = {pivot:.3g})")
        d = math.sqrt(pivot)
        low[j, j] = d
        if j + 1 < n:
            low[j + 1:, j] = (a[j + 1:, j] - low[j + 1:, :j] @ row) / d
    return low


def solve_lower(low, b):
    x = np.array(b, dtype=np.float64)
    for i in range(low.shape[0]):
        x[i] = (x[i] - low[i, :i] @ x[:i]) / low[i, i]
    return x


def solve_upper(up, b):
    x = np.array(b, dtype=np.float64)
    n = up.shape[0]
    for i in range(n - 1, -1, -1):
        x[i] = (x[i] - up[i, i + 1:] @ x[i + 1:]) / up[i, i]
    return x


def cholesky_solve(a, b, factor=None):
    """Solve ``a @ x = b`` for symmetric positive definite ``a``.

    ``b`` may be a vector or an ``n x k`` matrix. A precomputed Cholesky
    ``factor`` of ``a`` may be passed to skip the decomposition.
    """
    a = _square(a, "cholesky_solve")
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != a.shape[0]:
        raise DimensionError(f"rhs has {b.shape[0]} rows, matrix is {a.shape[0]}x{a.shape[0]}")
    low = cholesky(a) if factor is None else factor
    return solve_upper(low.T, solve_lower(low, b))


def spd_inverse(a):
    a = _square(a, "spd_inverse")
    inv = cholesky_solve(a, np.eye(a.shape[0]))
    return 0.5 * (inv + inv.T)


def spd_logdet(a, factor=None):
    low = cholesky(a) if factor is None else factor
    return 2.0 * float(np.sum(np.log(np.diag(low))))


def _round_robin(n):
    """Yield rounds of disjoint index pairs covering every pair exactly once."""
    players = list(range(n)) + ([None] if n % 2 else [])
    m = len(players)
    for _ in range(m - 1):
        pairs = []
        for i in range(m // 2):
            p, q = players[i], players[m - 1 - i]
            if p is not None and q is not None:
                pairs.append((min(p, q), max(p, q)))
        yield pairs
        players = [players[0], players[-1]] + players[1:-1]


def sym_eig_jacobi(a, tol=1e-14, max_sweeps=100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Rotations of each round-robin round touch disjoint index pairs, so a whole
    round is applied as one orthogonal similarity transform.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues sorted in
    descending order and eigenvectors as orthonormal columns.
    """
    a = _square(a, "sym_eig_jacobi")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-10 * scale:
        raise SymmetryError("matrix is not symmetric")
    n = a.shape[0]
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    if n < 2:
        return np.diag(a).copy(), v
    rounds = list(_round_robin(n))
    fro = math.sqrt(float(np.sum(a * a))) or 1.0
    for _ in range(max_sweeps):
        off = float(np.linalg.norm(a - np.diag(np.diag(a))))
        if off <= tol * fro:
            break
        for pairs in rounds:
            p_idx = np.array([p for p, _ in pairs])
            q_idx = np.array([q for _, q in pairs])
            apq = a[p_idx, q_idx]
            live = np.abs(apq) > 1e-300
            if not np.any(live):
                continue
            p_idx, q_idx, apq = p_idx[live], q_idx[live], apq[live]
            theta = (a[q_idx, q_idx] - a[p_idx, p_idx]) / (2.0 * apq)
            t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t[theta == 0] = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            rot = np.eye(n)
            rot[p_idx, p_idx] = c
            rot[q_idx, q_idx] = c
            rot[p_idx, q_idx] = s
            rot[q_idx, p_idx] = -s
            a = rot.T @ a @ rot
            a = 0.5 * (a + a.T)
            v = v @ rot
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]
