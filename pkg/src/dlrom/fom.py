"""Full-order models: parametrized 1D Burgers, linear transport and monodomain.

Each solver returns a :class:`Trajectory` whose columns are the discrete
states at the stored time instances. :func:`build_snapshot_set` stacks
trajectories into snapshot matrices ``S`` (``N_h x N_train*N_t``) and the
matching parameter matrices ``M`` (rows: time, then each parameter).
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .linalg import thomas, tridiag_matvec


class ProblemKind(str, enum.Enum):
    BURGERS = "burgers"
    TRANSPORT1P = "transport1p"
    TRANSPORT2P = "transport2p"
    MONODOMAIN = "monodomain"


class ConvergenceError(RuntimeError):
    """Newton iteration failed; carries the step index and residual norm."""

    def __init__(self, step, residual):
        super().__init__(f"Newton did not converge at step {step}: residual {residual:.3e}")
        self.step = step
        self.residual = residual


@dataclass
class ProblemSpec:
    kind: ProblemKind
    L: float
    T: float
    N_h: int
    N_t: int
    constants: dict = field(default_factory=dict)
    # solver substeps per stored time instance (FEM problems only)
    substeps: int = 1

    def __post_init__(self):
        self.kind = ProblemKind(self.kind)
        if self.N_h < 2 or self.N_t < 1 or self.L <= 0 or self.T <= 0 or self.substeps < 1:
            raise ValueError(f"invalid problem dimensions: {self}")

    @property
    def n_mu(self):
        return 2 if self.kind is ProblemKind.TRANSPORT2P else 1

    @property
    def bounds(self):
        return self.constants["bounds"]

    def grid(self):
        """Spatial sample points of the state vector."""
        if self.kind in (ProblemKind.TRANSPORT1P, ProblemKind.TRANSPORT2P):
            return (np.arange(self.N_h) + 0.5) * self.L / self.N_h
        return np.linspace(0.0, self.L, self.N_h)

    def times(self):
        """Stored time instances.

        Transport samples ``t^k = k T / N_t`` for ``k = 1..N_t``; the FEM
        problems store ``k = 0..N_t-1`` so the initial datum is the first column.
        """
        dt = self.T / self.N_t
        if self.kind in (ProblemKind.TRANSPORT1P, ProblemKind.TRANSPORT2P):
            return np.arange(1, self.N_t + 1) * dt
        return np.arange(self.N_t) * dt


def default_spec(kind, **overrides):
    """Problem setups used in the numerical experiments (all overridable)."""
    kind = ProblemKind(kind)
    if kind is ProblemKind.BURGERS:
        base = dict(L=1.0, T=2.0, N_h=256, N_t=100, constants={"bounds": [(100.0, 1000.0)]})
    elif kind is ProblemKind.TRANSPORT1P:
        base = dict(
            L=1.0, T=1.0, N_h=256, N_t=200,
            constants={"bounds": [(0.775, 1.25)], "sigma": 1e-4},
        )
    elif kind is ProblemKind.TRANSPORT2P:
        base = dict(
            L=1.0, T=1.0, N_h=256, N_t=100,
            constants={"bounds": [(0.025, 0.25), (0.5, 1.0)]},
        )
    else:
        base = dict(
            L=1.0, T=2.0, N_h=256, N_t=400,
            constants={
                "bounds": [(5e-3, 5e-2)],
                "gamma": 2.0,
                "beta": 0.5,
                "stimulus_amplitude": 50000.0,
                "stimulus_rate": 15.0,
            },
        )
    constants = dict(base.pop("constants"))
    constants.update(overrides.pop("constants", {}))
    base.update(overrides)
    return ProblemSpec(kind=kind, constants=constants, **base)


@dataclass
class ParameterSample:
    mu: tuple
    bounds: tuple

    def __post_init__(self):
        self.mu = tuple(float(m) for m in np.atleast_1d(self.mu))
        self.bounds = tuple((float(a), float(b)) for a, b in self.bounds)
        if len(self.mu) != len(self.bounds):
            raise ValueError("parameter and bounds dimensions differ")
        for m, (a, b) in zip(self.mu, self.bounds):
            # midpoints/linspace may land an ulp outside the closed interval
            tol = 1e-12 * max(abs(a), abs(b), 1.0)
            if not (a - tol <= m <= b + tol):
                raise ValueError(f"parameter {m} outside [{a}, {b}]")


@dataclass
class Trajectory:
    states: np.ndarray
    times: np.ndarray
    mu: ParameterSample

    def __post_init__(self):
        if self.states.shape[1] != len(self.times):
            raise ValueError("column count must equal the number of time instances")


# --- Burgers ---------------------------------------------------------------


def burgers_initial(x, mu):
    """Initial datum ``x / (1 + sqrt(1/A0) exp(mu x^2 / 4))`` with ``A0 = exp(mu/8)``.

    The exponent is combined before exponentiation so that large ``mu`` does
    not overflow: ``sqrt(1/A0) exp(mu x^2/4) = exp(mu (x^2/4 - 1/16))``.
    """
    x = np.asarray(x, dtype=float)
    return x / (1.0 + np.exp(mu * (x * x / 4.0 - 1.0 / 16.0)))


def _p1_mass_stiffness(n, h):
    """Bands of the consistent P1 mass and stiffness matrices on a uniform grid
    (all ``n`` nodes, natural boundary rows)."""
    m_diag = np.full(n, 4.0 * h / 6.0)
    m_diag[0] = m_diag[-1] = 2.0 * h / 6.0
    m_off = np.full(n, h / 6.0)
    k_diag = np.full(n, 2.0 / h)
    k_diag[0] = k_diag[-1] = 1.0 / h
    k_off = np.full(n, -1.0 / h)
    return m_diag, m_off, k_diag, k_off


def _burgers_convection(u):
    """P1 Galerkin convection vector ``int u u_x phi_i`` at interior nodes."""
    um, u0, up = u[:-2], u[1:-1], u[2:]
    return (up - um) * (um + u0 + up) / 6.0


def solve_burgers(spec: ProblemSpec, mu: ParameterSample, tol=1e-10, max_iter=50):
    """Linear finite elements in space, backward Euler in time, Newton per step."""
    if spec.kind is not ProblemKind.BURGERS:
        raise ValueError("spec is not a Burgers problem")
    (m,) = mu.mu
    x = spec.grid()
    n = spec.N_h
    h = spec.L / (n - 1)
    dt = spec.T / (spec.N_t * spec.substeps)
    nu = 1.0 / m
    ni = n - 2
    # interior bands of M and K (Dirichlet rows eliminated)
    m_d = np.full(ni, 4.0 * h / 6.0)
    m_o = np.full(ni, h / 6.0)
    k_d = np.full(ni, 2.0 / h)
    k_o = np.full(ni, -1.0 / h)
    a_d = m_d + dt * nu * k_d
    a_o = m_o + dt * nu * k_o

    u = burgers_initial(x, m)
    u[0] = u[-1] = 0.0
    states = np.empty((n, spec.N_t))
    states[:, 0] = u
    step = 0
    for k in range(1, spec.N_t):
        for _ in range(spec.substeps):
            step += 1
            mu_prev = tridiag_matvec(m_o, m_d, m_o, u[1:-1])
            w = u.copy()
            for it in range(max_iter + 1):
                r = tridiag_matvec(a_o, a_d, a_o, w[1:-1]) + dt * _burgers_convection(w) - mu_prev
                res = np.abs(r).max()
                if res <= tol:
                    break
                if it == max_iter:
                    raise ConvergenceError(step, res)
                um, u0, up = w[:-2], w[1:-1], w[2:]
                s = um + u0 + up
                d = up - um
                lower = a_o + dt * (d - s) / 6.0
                diag = a_d + dt * d / 6.0
                upper = a_o + dt * (d + s) / 6.0
                w[1:-1] -= thomas(lower, diag, upper, r)
            u = w
        states[:, k] = u
    return Trajectory(states, spec.times(), mu)


# --- Linear transport ------------------------------------------------------


def gaussian_pulse(x, sigma):
    return np.exp(-x * x / (2.0 * sigma)) / np.sqrt(2.0 * np.pi * sigma)


def transport_gaussian(spec: ProblemSpec, mu: ParameterSample):
    """Sampled exact solution ``u0(x - mu t)`` of the constant-speed transport."""
    (m,) = mu.mu
    x = spec.grid()
    t = spec.times()
    states = gaussian_pulse(x[:, None] - m * t[None, :], spec.constants["sigma"])
    return Trajectory(states, t, mu)


def transport_step(spec: ProblemSpec, mu: ParameterSample):
    """Sampled exact solution of unit-speed transport of a step of height mu2
    located at mu1."""
    m1, m2 = mu.mu
    x = spec.grid()
    t = spec.times()
    states = np.where(x[:, None] - t[None, :] >= m1, m2, 0.0)
    return Trajectory(states, t, mu)


# --- Monodomain / FitzHugh-Nagumo ------------------------------------------


def stimulus(t, constants):
    return constants["stimulus_amplitude"] * t**3 * math.exp(-constants["stimulus_rate"] * t)


def solve_monodomain(spec: ProblemSpec, mu: ParameterSample):
    """Monodomain equation with FitzHugh-Nagumo ionic model.

    P1 finite elements, consistent mass. One-step semi-implicit scheme: the
    recovery variable is advanced first with ``w+ = (w + dt beta u)/(1 + dt gamma)``,
    then diffusion is implicit and the cubic current explicit. The boundary flux
    at ``x = 0`` enters the load vector of the first node each step; ``x = L`` is
    insulated.

    Returns ``(u, w)`` trajectories.
    """
    if spec.kind is not ProblemKind.MONODOMAIN:
        raise ValueError("spec is not a monodomain problem")
    (m,) = mu.mu
    c = spec.constants
    gamma, beta = c["gamma"], c["beta"]
    n = spec.N_h
    h = spec.L / (n - 1)
    dt = spec.T / (spec.N_t * spec.substeps)
    m_d, m_o, k_d, k_o = _p1_mass_stiffness(n, h)
    a_d = (m / dt) * m_d + m * m * k_d
    a_o = (m / dt) * m_o + m * m * k_o

    u = np.zeros(n)
    w = np.zeros(n)
    us = np.empty((n, spec.N_t))
    ws = np.empty((n, spec.N_t))
    us[:, 0] = u
    ws[:, 0] = w
    step = 0
    for k in range(1, spec.N_t):
        for _ in range(spec.substeps):
            step += 1
            t_new = step * dt
            w_new = (w + dt * beta * u) / (1.0 + dt * gamma)
            ion = u * (u - 0.1) * (u - 1.0) + w_new
            rhs = tridiag_matvec(m_o, m_d, m_o, (m / dt) * u - ion)
            rhs[0] += m * m * stimulus(t_new, c)
            try:
                u_new = thomas(a_o, a_d, a_o, rhs)
            except ZeroDivisionError as exc:
                raise np.linalg.LinAlgError(f"linear solve failed at step {step}: {exc}") from exc
            if not np.all(np.isfinite(u_new)):
                raise np.linalg.LinAlgError(f"non-finite state at step {step}")
            u, w = u_new, w_new
        us[:, k] = u
        ws[:, k] = w
    t = spec.times()
    return Trajectory(us, t, mu), Trajectory(ws, t, mu)


def solve(spec: ProblemSpec, mu: ParameterSample) -> Trajectory:
    """Dispatch to the solver of ``spec.kind`` (state variable ``u`` only)."""
    if spec.kind is ProblemKind.BURGERS:
        return solve_burgers(spec, mu)
    if spec.kind is ProblemKind.TRANSPORT1P:
        return transport_gaussian(spec, mu)
    if spec.kind is ProblemKind.TRANSPORT2P:
        return transport_step(spec, mu)
    return solve_monodomain(spec, mu)[0]


# --- Parameter sampling and snapshot assembly ------------------------------


def sample_training_parameters(bounds, n_train):
    """Uniform grid including interval endpoints, tensorized across components
    (first component varies slowest)."""
    if n_train < 2:
        raise ValueError("need at least two training instances")
    bounds = [tuple(b) for b in bounds]
    axes = [np.linspace(a, b, n_train) for a, b in bounds]
    return [ParameterSample(mu, bounds) for mu in itertools.product(*axes)]


def _component_axes(samples):
    n_mu = len(samples[0].mu)
    return [sorted(set(s.mu[j] for s in samples)) for j in range(n_mu)]


def sample_testing_parameters(train_samples):
    """Midpoints of consecutive training values, per component (tensorized)."""
    if len(train_samples) < 2:
        raise ValueError("need at least two training instances")
    bounds = train_samples[0].bounds
    axes = _component_axes(train_samples)
    mids = []
    for ax in axes:
        ax = np.asarray(ax)
        if len(ax) < 2:
            # degenerate interval: every component value coincides
            mids.append(ax)
        else:
            mids.append(0.5 * (ax[:-1] + ax[1:]))
    return [ParameterSample(mu, bounds) for mu in itertools.product(*mids)]


@dataclass
class SnapshotSet:
    S: np.ndarray
    M: np.ndarray
    spec: ProblemSpec
    params: list

    @property
    def n_instances(self):
        return len(self.params)

    @property
    def N_t(self):
        return self.spec.N_t

    def trajectory(self, i):
        """Columns belonging to the ``i``-th parameter instance."""
        nt = self.N_t
        return Trajectory(self.S[:, i * nt:(i + 1) * nt], self.M[0, i * nt:(i + 1) * nt], self.params[i])


def assemble_snapshots(spec, params, trajectories):
    S = np.concatenate([tr.states for tr in trajectories], axis=1)
    nt = spec.N_t
    M = np.empty((1 + spec.n_mu, len(params) * nt))
    for i, (p, tr) in enumerate(zip(params, trajectories)):
        M[0, i * nt:(i + 1) * nt] = tr.times
        M[1:, i * nt:(i + 1) * nt] = np.asarray(p.mu)[:, None]
    return SnapshotSet(S, M, spec, list(params))


def generate(spec, params, workers=1):
    """Solve the FOM for each parameter instance and stack the snapshots."""
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            trajs = list(pool.map(solve, [spec] * len(params), params))
    else:
        trajs = [solve(spec, p) for p in params]
    return assemble_snapshots(spec, params, trajs)


def build_snapshot_set(spec, train_params, test_params, workers=1):
    return generate(spec, train_params, workers), generate(spec, test_params, workers)


def self_convergence_factor(spec: ProblemSpec, mu: ParameterSample, substeps=1):
    """Temporal self-convergence factor from three solves at dt, dt/2, dt/4.

    Returns ``|u_dt - u_dt/2| / |u_dt/2 - u_dt/4|`` in the max norm over the
    stored space-time samples; a first-order scheme gives about 2.
    """
    u = [solve(replace(spec, substeps=substeps * r), mu).states for r in (1, 2, 4)]
    coarse = np.abs(u[0] - u[1]).max()
    fine = np.abs(u[1] - u[2]).max()
    if fine == 0.0:
        raise ZeroDivisionError("refined solutions coincide; no temporal error to measure")
    return coarse / fine
