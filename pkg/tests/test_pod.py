import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dlrom import fom, pod
from dlrom.pod import RankWarning


def random_orthonormal(r, n_h, n):
    q, _ = np.linalg.qr(r.standard_normal((n_h, n)))
    return q


def low_rank(r, n_h, n_s, rank):
    return r.standard_normal((n_h, rank)) @ r.standard_normal((rank, n_s))


def test_rank_one_repeated_column():
    c = np.array([1.0, -2.0, 2.0])
    S = np.tile(c[:, None], (1, 5))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        basis = pod.compute_pod(S, n=1)
    np.testing.assert_allclose(np.abs(basis.V[:, 0]), np.abs(c) / 3.0, rtol=1e-12)
    assert basis.singular_values[1] == pytest.approx(0.0, abs=1e-12)
    # sign convention: largest-magnitude entry positive
    assert basis.V[np.argmax(np.abs(basis.V[:, 0])), 0] > 0


@pytest.mark.parametrize("shape", [(8, 12), (12, 8), (32, 20)])
def test_matches_dense_eigensolver_oracle(shape):
    r = np.random.default_rng(3)
    S = r.standard_normal(shape)
    n = min(shape)
    basis = pod.compute_pod(S, n=n)
    lam, U = np.linalg.eigh(S @ S.T)
    lam, U = lam[::-1][:n], U[:, ::-1][:, :n]
    np.testing.assert_allclose(basis.singular_values[:n], np.sqrt(lam), rtol=1e-10)
    # columns agree up to sign
    np.testing.assert_allclose(np.abs(np.sum(basis.V * U, axis=0)), 1.0, atol=1e-9)


def test_orthonormal_and_sorted(rng):
    S = rng.standard_normal((40, 15))
    basis = pod.compute_pod(S, n=10)
    np.testing.assert_allclose(basis.V.T @ basis.V, np.eye(10), atol=1e-10)
    assert np.all(np.diff(basis.singular_values) <= 0)


def test_weighted_basis_is_x_orthonormal(rng):
    n_h = 20
    B = rng.standard_normal((n_h, n_h))
    X = B @ B.T + n_h * np.eye(n_h)
    S = rng.standard_normal((n_h, 9))
    basis = pod.compute_pod(S, n=6, weight=X)
    np.testing.assert_allclose(basis.V.T @ X @ basis.V, np.eye(6), atol=1e-10)
    # optimality in the X-norm against random X-orthonormal competitors
    H = np.linalg.cholesky(X).T
    err_v = np.sum((H @ (S - pod.optimal_reconstruction(basis, S))) ** 2)
    for _ in range(20):
        W = np.linalg.solve(H, random_orthonormal(rng, n_h, 6))
        err_w = np.sum((H @ (S - W @ (W.T @ X @ S))) ** 2)
        assert err_v <= err_w * (1 + 1e-12)


def test_non_spd_weight_rejected(rng):
    S = rng.standard_normal((4, 3))
    with pytest.raises(ValueError):
        pod.compute_pod(S, n=1, weight=-np.eye(4))
    with pytest.raises(ValueError):
        pod.compute_pod(S, n=1, weight=np.array([[1.0, 2.0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]]))


def test_rank_warning_and_completed_basis(rng):
    S = low_rank(rng, 10, 8, 2)
    with pytest.warns(RankWarning):
        basis = pod.compute_pod(S, n=4)
    assert basis.rank_deficient
    np.testing.assert_allclose(basis.V.T @ basis.V, np.eye(4), atol=1e-10)
    with pytest.raises(ValueError):
        pod.compute_pod(S, n=9)


def test_energy_fraction_examples():
    assert pod.energy_fraction([2.0, 0.0, 0.0], 1) == 1.0
    assert pod.energy_fraction([3.0, 4.0], 1) == pytest.approx(16 / 25)
    assert pod.energy_fraction([5.0, 1.0, 0.5], 3) == 1.0
    with pytest.raises(ValueError):
        pod.energy_fraction([], 0)


@given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=12).filter(lambda s: sum(v * v for v in s) > 1e-300))
def test_energy_fraction_monotone(sig):
    vals = [pod.energy_fraction(sig, n) for n in range(len(sig) + 1)]
    assert all(b >= a - 1e-15 for a, b in zip(vals, vals[1:]))
    assert vals[-1] == pytest.approx(1.0)


def test_projector_fixes_span_and_kills_complement(rng):
    S = rng.standard_normal((16, 10))
    basis = pod.compute_pod(S, n=4)
    u = basis.V @ rng.standard_normal(4)
    np.testing.assert_allclose(pod.optimal_reconstruction(basis, u), u, rtol=1e-10)
    v = rng.standard_normal(16)
    v -= basis.V @ (basis.V.T @ v)
    assert np.linalg.norm(pod.optimal_reconstruction(basis, v)) < 1e-12 * np.linalg.norm(v)


@given(st.integers(0, 10_000), st.integers(1, 6))
def test_projector_idempotent(seed, n):
    r = np.random.default_rng(seed)
    S = r.standard_normal((12, 9))
    basis = pod.compute_pod(S, n=n)
    u = r.standard_normal((12, 3))
    once = pod.optimal_reconstruction(basis, u)
    twice = pod.optimal_reconstruction(basis, once)
    assert np.linalg.norm(twice - once) <= 1e-12 * np.linalg.norm(once)


@given(st.integers(0, 10_000), st.integers(2, 32), st.integers(2, 20), st.integers(1, 5))
def test_pod_beats_random_orthonormal_competitors(seed, n_h, n_s, n):
    r = np.random.default_rng(seed)
    S = r.standard_normal((n_h, n_s)) * np.logspace(0, -2, n_s)
    n = min(n, n_h, n_s)
    basis = pod.compute_pod(S, n=n)
    err_v = np.sum((S - pod.optimal_reconstruction(basis, S)) ** 2)
    for _ in range(100):
        W = random_orthonormal(r, n_h, n)
        assert err_v <= np.sum((S - W @ (W.T @ S)) ** 2) * (1 + 1e-10) + 1e-12


def test_reconstruction_error_decreases_to_zero_at_rank(rng):
    S = low_rank(rng, 24, 30, 7)
    basis = pod.compute_pod(S)
    assert basis.n == 7
    errs = pod.reconstruction_errors(basis, S).sum(axis=1)
    assert np.all(np.diff(errs) <= 1e-12 * errs[0])
    assert errs[-1] <= 1e-20 * errs[0] + 1e-18
    # against the direct projection at every n
    for n in range(1, 8):
        direct = np.sum((S - pod.optimal_reconstruction(basis.truncate(n), S)) ** 2)
        assert errs[n] == pytest.approx(direct, rel=1e-9, abs=1e-12)


def small_dataset(kind="transport1p", n_train=5, N_t=20, **kw):
    spec = fom.default_spec(kind, N_t=N_t, **kw)
    tr = fom.sample_training_parameters(spec.bounds, n_train)
    return fom.build_snapshot_set(spec, tr, fom.sample_testing_parameters(tr))


def test_pod_error_curve_matches_direct_computation():
    train, test = small_dataset("burgers", N_h=32)
    basis = pod.compute_pod(train.S)
    curve = pod.pod_error_curve(basis, test, n_max=10)
    assert np.all(np.diff(curve) <= 1e-14)
    for n in (1, 4, 10):
        R = test.S - pod.optimal_reconstruction(basis.truncate(n), test.S)
        per = [np.linalg.norm(R[:, i * 20:(i + 1) * 20]) / np.linalg.norm(test.S[:, i * 20:(i + 1) * 20])
               for i in range(test.n_instances)]
        assert curve[n] == pytest.approx(np.mean(per), rel=1e-10)


def test_modes_for_accuracy():
    train, test = small_dataset("burgers", N_h=32)
    basis = pod.compute_pod(train.S)
    curve = pod.pod_error_curve(basis, test)
    r = basis.n
    n = pod.pod_modes_for_accuracy(train.S, test, curve[r])
    assert n <= r and curve[n] <= curve[r]
    assert pod.pod_modes_for_accuracy(train.S, test, curve[3]) <= 3
    with pytest.raises(ValueError) as info:
        pod.pod_modes_for_accuracy(train.S, test, curve[r] * 1e-3)
    assert info.value.best == pytest.approx(curve[1:].min())
    with pytest.raises(ValueError):
        pod.pod_modes_for_accuracy(train.S, test, 0.0)


def test_two_modes_far_from_dlrom_accuracy_for_transport():
    # with n = 2 the linear reconstruction error is > 10x the nonlinear reference 8.74e-3
    train, test = small_dataset("transport1p", n_train=20, N_t=200)
    basis = pod.compute_pod(train.S, n=2)
    eps = pod.pod_error_curve(basis, test, n_max=2)[2]
    assert eps > 10 * 8.74e-3
