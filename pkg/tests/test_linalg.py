import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dlrom import linalg
from dlrom.linalg import _round_robin, jacobi_eigh, thomas, tridiag_matvec


def dense(lower, diag, upper):
    n = len(diag)
    A = np.diag(diag)
    A[np.arange(1, n), np.arange(n - 1)] = lower[1:]
    A[np.arange(n - 1), np.arange(1, n)] = upper[:-1]
    return A


@given(st.integers(1, 40), st.integers(0, 10_000))
def test_thomas_matches_dense_solve(n, seed):
    r = np.random.default_rng(seed)
    lower, upper = r.uniform(-1, 1, n), r.uniform(-1, 1, n)
    diag = np.abs(lower) + np.abs(upper) + r.uniform(0.5, 2.0, n)
    b = r.standard_normal(n)
    x = thomas(lower, diag, upper, b)
    np.testing.assert_allclose(x, np.linalg.solve(dense(lower, diag, upper), b), rtol=1e-10, atol=1e-12)


def test_thomas_zero_pivot():
    with pytest.raises(ZeroDivisionError):
        thomas([0, 1.0], [0.0, 1.0], [1.0, 0], [1.0, 1.0])
    with pytest.raises(ZeroDivisionError):
        # second pivot 1 - 1*1 = 0
        thomas([0, 1.0], [1.0, 1.0], [1.0, 0], [1.0, 1.0])


def test_thomas_band_lengths():
    with pytest.raises(ValueError):
        thomas([0, 1], [1, 1, 1], [1, 0], [1, 1, 1])


def test_tridiag_matvec(rng):
    n = 9
    lo, d, up, x = (rng.standard_normal(n) for _ in range(4))
    np.testing.assert_allclose(tridiag_matvec(lo, d, up, x), dense(lo, d, up) @ x, rtol=1e-14)


@pytest.mark.parametrize("n", [2, 3, 7, 8, 13])
def test_round_robin_covers_each_pair_once(n):
    seen = []
    for p, q in _round_robin(n):
        idx = np.concatenate([p, q])
        assert len(set(idx.tolist())) == len(idx)  # disjoint within a round
        seen += list(zip(p.tolist(), q.tolist()))
    assert sorted(seen) == list(itertools.combinations(range(n), 2))


@given(st.integers(1, 24), st.integers(0, 10_000))
def test_jacobi_matches_dense_eigensolver(n, seed):
    r = np.random.default_rng(seed)
    B = r.standard_normal((n, n))
    A = B + B.T
    w, V = jacobi_eigh(A)
    np.testing.assert_allclose(w, np.sort(np.linalg.eigvalsh(A))[::-1], atol=1e-10 * max(1, np.abs(w).max()))
    np.testing.assert_allclose(V.T @ V, np.eye(n), atol=1e-12)
    np.testing.assert_allclose(A @ V, V * w, atol=1e-10 * np.linalg.norm(A))


def test_jacobi_gram_of_snapshots(rng):
    S = rng.standard_normal((30, 12)) @ np.diag(10.0 ** -np.arange(12))
    w, _ = jacobi_eigh(S.T @ S)
    assert np.all(np.diff(w) <= 0)
    np.testing.assert_allclose(np.sqrt(np.clip(w, 0, None)), np.linalg.svd(S, compute_uv=False), rtol=1e-6, atol=1e-12)


def test_jacobi_special_cases():
    w, V = jacobi_eigh(np.zeros((3, 3)))
    assert np.all(w == 0) and np.all(V == np.eye(3))
    w, _ = jacobi_eigh([[5.0]])
    assert w.tolist() == [5.0]
    # nearly degenerate diagonal with a tiny coupling: very large rotation cotangent
    A = np.array([[1.0, 1e-170], [1e-170, 1.0 + 1e-12]])
    w, V = jacobi_eigh(A)
    assert np.all(np.isfinite(V))
    with pytest.raises(ValueError):
        jacobi_eigh(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_compiled_and_numpy_rotations_agree(monkeypatch):
    r = np.random.default_rng(3)
    B = r.standard_normal((17, 17))
    A = B + B.T
    monkeypatch.setattr(linalg, "USE_COMPILED", False)
    w0, v0 = linalg.jacobi_eigh(A)
    if linalg._rotate_compiled is None:
        pytest.skip("numba not installed")
    monkeypatch.setattr(linalg, "USE_COMPILED", True)
    w1, v1 = linalg.jacobi_eigh(A)
    np.testing.assert_allclose(w1, w0, rtol=0, atol=1e-13)
    np.testing.assert_allclose(np.abs(v1), np.abs(v0), rtol=0, atol=1e-12)
