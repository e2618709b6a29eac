"""Proper orthogonal decomposition by the method of snapshots."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .linalg import jacobi_eigh


class RankWarning(UserWarning):
    pass


@dataclass
class PODBasis:
    V: np.ndarray
    singular_values: np.ndarray
    weight: np.ndarray | None = None
    rank_deficient: bool = False

    @property
    def n(self):
        return self.V.shape[1]

    def truncate(self, n):
        if not 1 <= n <= self.n:
            raise ValueError(f"cannot truncate a {self.n}-mode basis to {n}")
        return PODBasis(self.V[:, :n], self.singular_values, self.weight, self.rank_deficient)


def _cholesky_factor(weight):
    """Upper factor H with X = H^T H; raises ValueError if X is not SPD."""
    weight = np.asarray(weight, dtype=float)
    if weight.ndim != 2 or weight.shape[0] != weight.shape[1]:
        raise ValueError("weight must be a square matrix")
    if not np.allclose(weight, weight.T, rtol=1e-12, atol=0.0):
        raise ValueError("weight matrix is not symmetric")
    try:
        lower = np.linalg.cholesky(weight)
    except np.linalg.LinAlgError as exc:
        raise ValueError("weight matrix is not positive definite") from exc
    return lower.T


def _fix_signs(v):
    idx = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[idx, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return v * signs


def left_singular(A, tol=1e-12):
    """Left singular vectors and values of ``A`` from the smaller Gram matrix."""
    nh, ns = A.shape
    if ns < nh:
        lam, Z = jacobi_eigh(A.T @ A, tol=tol)
        lam = np.clip(lam, 0.0, None)
        sigma = np.sqrt(lam)
        keep = sigma > sigma[0] * 1e-15 if sigma[0] > 0 else np.zeros_like(sigma, dtype=bool)
        U = np.zeros((nh, ns))
        U[:, keep] = (A @ Z[:, keep]) / sigma[keep]
        # restore orthonormality lost to the squared condition number
        U[:, keep] = _mgs(U[:, keep])
    else:
        lam, U = jacobi_eigh(A @ A.T, tol=tol)
        sigma = np.sqrt(np.clip(lam, 0.0, None))
    return U, sigma


def _mgs(U):
    Q = U.copy()
    for j in range(Q.shape[1]):
        for _ in range(2):
            Q[:, j] -= Q[:, :j] @ (Q[:, :j].T @ Q[:, j])
        Q[:, j] /= np.linalg.norm(Q[:, j])
    return Q


def compute_pod(S, n=None, weight=None, tol=1e-12):
    """POD basis of dimension ``n`` for the snapshot matrix ``S``.

    ``n=None`` keeps every mode up to the numerical rank.

    With an SPD ``weight`` X = H^T H the SVD is taken of ``H S`` and the
    basis is mapped back through ``H^{-1}``, so that ``V^T X V = I``.
    Each column is signed so its largest-magnitude entry is positive.
    """
    S = np.asarray(S, dtype=float)
    nh, ns = S.shape
    if n is not None and not 1 <= n <= min(nh, ns):
        raise ValueError(f"n must lie in [1, {min(nh, ns)}], got {n}")
    H = None
    if weight is not None:
        H = _cholesky_factor(weight)
        A = H @ S
    else:
        A = S
    U, sigma = left_singular(A, tol=tol)
    rank = numerical_rank(sigma, S.shape)
    if n is None:
        n = max(rank, 1)
    deficient = n > rank
    if deficient:
        warnings.warn(f"requested {n} modes but numerical rank is {rank}", RankWarning, stacklevel=2)
    Z = U[:, :n]
    V = Z if H is None else np.linalg.solve(H, Z)
    if deficient and H is None:
        # null-space directions are arbitrary; complete to an orthonormal set
        V = _complete_basis(V, rank)
    return PODBasis(_fix_signs(V), sigma, None if weight is None else np.asarray(weight, float), deficient)


def _complete_basis(V, r):
    V = V.copy()
    nh = V.shape[0]
    rng = np.random.default_rng(0)
    for j in range(r, V.shape[1]):
        v = rng.standard_normal(nh)
        for _ in range(2):
            v -= V[:, :j] @ (V[:, :j].T @ v)
        V[:, j] = v / np.linalg.norm(v)
    return V


def energy_fraction(singular_values, n):
    s = np.sort(np.asarray(singular_values, dtype=float))[::-1]
    if s.size == 0:
        raise ValueError("empty spectrum")
    if not 0 <= n <= s.size:
        raise ValueError(f"n must lie in [0, {s.size}]")
    total = np.sum(s * s)
    if total == 0:
        raise ValueError("zero spectrum has no energy")
    return float(np.sum(s[:n] ** 2) / total)


def project(basis, U):
    """Coefficients ``V^T X u`` of the (columns of) ``U``."""
    XU = U if basis.weight is None else basis.weight @ U
    return basis.V.T @ XU


def optimal_reconstruction(basis, u):
    """Orthogonal projection ``V V^T X u`` onto the POD subspace."""
    u = np.asarray(u, dtype=float)
    if u.shape[0] != basis.V.shape[0]:
        raise ValueError("state dimension does not match the basis")
    return basis.V @ project(basis, u)


def reconstruction_errors(basis, U, n_max=None):
    """Squared Euclidean residual norms of projecting the columns of ``U`` on the
    leading ``n`` modes, for every ``n = 0..n_max``.

    Returns an array of shape ``(n_max + 1, U.shape[1])``. Residuals are
    updated mode by mode rather than via ``|u|^2 - |c|^2`` to avoid cancellation.
    """
    n_max = basis.n if n_max is None else n_max
    R = np.array(U, dtype=float, copy=True)
    C = project(basis.truncate(n_max), U) if n_max > 0 else np.zeros((0, U.shape[1]))
    out = np.empty((n_max + 1, U.shape[1]))
    out[0] = np.sum(R * R, axis=0)
    for j in range(n_max):
        R -= np.outer(basis.V[:, j], C[j])
        out[j + 1] = np.sum(R * R, axis=0)
    return out


def numerical_rank(singular_values, shape):
    """Rank read off singular values obtained from a Gram matrix.

    Gram eigenvalues are accurate to about ``eps * sigma_1^2``, so singular
    values are resolved only down to ``sqrt(eps) * sigma_1``; the threshold is
    applied on the squared scale.
    """
    s = np.asarray(singular_values)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s * s > s[0] ** 2 * max(shape) * np.finfo(float).eps))


def pod_error_curve(basis, test_set, n_max=None):
    """Test-set ``eps_rel`` of the optimal POD reconstruction for ``n = 0..n_max``."""
    n_max = basis.n if n_max is None else n_max
    errs = reconstruction_errors(basis, test_set.S, n_max=n_max)
    nh = test_set.S.shape[0]
    nt = test_set.N_t
    n_inst = test_set.n_instances
    num = np.sqrt(errs.reshape(n_max + 1, n_inst, nt).sum(axis=2))
    den = np.sqrt(np.sum(test_set.S.reshape(nh, n_inst, nt) ** 2, axis=(0, 2)))
    return (num / den).mean(axis=1)


def pod_modes_for_accuracy(train_S, test_set, target, weight=None):
    """Smallest POD dimension whose optimal reconstruction of ``test_set``
    reaches ``eps_rel <= target`` (linear scan over ``n``).

    Raises ValueError carrying the best achievable value (``.best``) when the
    full training rank is not enough.
    """
    if target <= 0:
        raise ValueError("target must be positive")
    basis = compute_pod(train_S, weight=weight)
    r = basis.n
    eps = pod_error_curve(basis, test_set, n_max=r)
    for n in range(1, r + 1):
        if eps[n] <= target:
            return n
    err = ValueError(f"target {target:g} unreachable; best eps_rel {eps[1:].min():.4e} at n={r}")
    err.best = float(eps[1:].min())
    raise err
