"""Small dense/banded linear algebra kernels used by the FOM solvers and POD."""

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is optional
    numba = None


def thomas(lower, diag, upper, rhs):
    """Solve a tridiagonal system with the Thomas algorithm.

    ``lower[i]`` multiplies ``x[i-1]`` in row ``i`` (``lower[0]`` is ignored),
    ``upper[i]`` multiplies ``x[i+1]`` (``upper[-1]`` is ignored).
    No pivoting: the matrix must be diagonally dominant or SPD.
    """
    a = np.asarray(lower, dtype=float).tolist()
    b = np.asarray(diag, dtype=float).tolist()
    c = np.asarray(upper, dtype=float).tolist()
    d = np.asarray(rhs, dtype=float).tolist()
    n = len(b)
    if not (len(a) == len(c) == len(d) == n):
        raise ValueError("tridiagonal bands and rhs must have equal length")
    cp = [0.0] * n
    dp = [0.0] * n
    if b[0] == 0.0:
        raise ZeroDivisionError("zero pivot in row 0")
    cp[0] = c[0] / b[0]
    dp[0] = d[0] / b[0]
    for i in range(1, n):
        m = b[i] - a[i] * cp[i - 1]
        if m == 0.0:
            raise ZeroDivisionError(f"zero pivot in row {i}")
        cp[i] = c[i] / m
        dp[i] = (d[i] - a[i] * dp[i - 1]) / m
    x = [0.0] * n
    x[-1] = dp[-1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return np.array(x)


def tridiag_matvec(lower, diag, upper, x):
    y = diag * x
    y[1:] += lower[1:] * x[:-1]
    y[:-1] += upper[:-1] * x[1:]
    return y


def _round_robin(n):
    """Pairings for one parallel Jacobi sweep (circle method).

    Returns a list of ``n_even - 1`` rounds; each round is a pair of index
    arrays ``(p, q)`` covering every off-diagonal pair exactly once per sweep.
    Indices equal to ``n`` (odd padding) are dropped.
    """
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        half = m // 2
        p = np.array(players[:half])
        q = np.array(players[half:][::-1])
        keep = (p < n) & (q < n)
        p, q = p[keep], q[keep]
        lo, hi = np.minimum(p, q), np.maximum(p, q)
        rounds.append((lo, hi))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _rotate_numpy(a, v, p, q, c, s):
    ap = a[:, p].copy()
    aq = a[:, q]
    a[:, p] = c * ap - s * aq
    a[:, q] = s * ap + c * aq
    ap = a[p, :].copy()
    aq = a[q, :]
    a[p, :] = c[:, None] * ap - s[:, None] * aq
    a[q, :] = s[:, None] * ap + c[:, None] * aq
    vp = v[:, p].copy()
    vq = v[:, q]
    v[:, p] = c * vp - s * vq
    v[:, q] = s * vp + c * vq


if numba is not None:

    @numba.njit(cache=True)
    def _rotate_compiled(a, v, p, q, c, s):
        n = a.shape[0]
        for j in range(len(p)):
            pj, qj, cj, sj = p[j], q[j], c[j], s[j]
            for i in range(n):
                x, y = a[i, pj], a[i, qj]
                a[i, pj] = cj * x - sj * y
                a[i, qj] = sj * x + cj * y
                x, y = v[i, pj], v[i, qj]
                v[i, pj] = cj * x - sj * y
                v[i, qj] = sj * x + cj * y
        for j in range(len(p)):
            pj, qj, cj, sj = p[j], q[j], c[j], s[j]
            for i in range(n):
                x, y = a[pj, i], a[qj, i]
                a[pj, i] = cj * x - sj * y
                a[qj, i] = sj * x + cj * y

    USE_COMPILED = True
else:  # pragma: no cover
    _rotate_compiled = None
    USE_COMPILED = False


def _off_norm(a):
    d = np.diag(a).copy()
    np.fill_diagonal(a, 0.0)
    off = np.linalg.norm(a)
    np.fill_diagonal(a, d)
    return off


def jacobi_eigh(a, tol=1e-12, max_sweeps=100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Rotations within a round act on disjoint index pairs, so each round is
    applied as one vectorized update. Iterates until the off-diagonal
    Frobenius norm drops below ``tol * ||a||_F``.

    Returns ``(eigenvalues, eigenvectors)`` sorted by decreasing eigenvalue.
    """
    a = np.array(a, dtype=float, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.allclose(a, a.T, rtol=1e-12, atol=1e-14 * max(np.abs(a).max(), 1.0)):
        raise ValueError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    v = np.eye(n)
    scale = np.linalg.norm(a)
    if n == 1 or scale == 0.0:
        return np.diag(a).copy(), v
    rounds = _round_robin(n)
    for _ in range(max_sweeps):
        if _off_norm(a) <= tol * scale:
            break
        for p, q in rounds:
            apq = a[p, q]
            app = a[p, p]
            aqq = a[q, q]
            active = np.abs(apq) > 1e-300
            theta = np.where(active, (aqq - app) / (2.0 * np.where(active, apq, 1.0)), 0.0)
            big = np.abs(theta) > 1e150
            theta_s = np.where(big, 1.0, theta)
            t = np.sign(theta_s + (theta_s == 0)) / (np.abs(theta_s) + np.sqrt(theta_s * theta_s + 1.0))
            # |theta| huge: t ~ 1 / (2 theta)
            t = np.where(big, 0.5 / np.where(big, theta, 1.0), t)
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            if USE_COMPILED:
                _rotate_compiled(a, v, p, q, c, s)
            else:
                _rotate_numpy(a, v, p, q, c, s)
    else:
        off = _off_norm(a)
        if off > tol * scale:
            raise RuntimeError(f"Jacobi did not converge: off-diagonal norm {off:.3e}")
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]
