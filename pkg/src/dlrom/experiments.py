"""Reference experiment recipes shared by the acceptance suite and scripts/."""

from __future__ import annotations

import functools
import time
from dataclasses import dataclass, field

import numpy as np

from . import evaluation, fom, pod
from . import model as M

# reduced CI variant: fewer stored instants and epochs, same solver step
CI_N_T = 50
CI_EPOCHS = 3000


@dataclass(frozen=True)
class RunSpec:
    problem: str
    n: int
    seed: int = 0
    omega: float = 0.5
    N_t: int | None = None
    epochs: int = CI_EPOCHS
    precision: str = "f32"
    n_train: int = 20


@dataclass
class RunResult:
    spec: RunSpec
    eps_rel: float
    pod_eps_rel: float
    best_epoch: int
    stopped_epoch: int
    wall_time: float
    per_test_errors: np.ndarray = field(repr=False, default=None)


def solver_substeps(problem, N_t):
    """Substeps keeping the solver time step of the default setup."""
    if problem not in ("burgers", "monodomain"):
        return 1
    full = fom.default_spec(problem).N_t
    return max(1, full // N_t)


@functools.lru_cache(maxsize=8)
def datasets(problem, N_t=None, n_train=20):
    spec = fom.default_spec(problem)
    if N_t is not None:
        spec = fom.default_spec(problem, N_t=N_t, substeps=solver_substeps(problem, N_t))
    tr = fom.sample_training_parameters(spec.bounds, n_train)
    return fom.build_snapshot_set(spec, tr, fom.sample_testing_parameters(tr))


def run(rs: RunSpec, log=None) -> RunResult:
    """Train one DL-ROM and compare it with POD at the same dimension."""
    train, test = datasets(rs.problem, rs.N_t, rs.n_train)
    arch = M.default_architecture(rs.problem, rs.n, N_h=train.S.shape[0])
    cfg = M.TrainConfig(epochs=rs.epochs, seed=rs.seed, omega=rs.omega, precision=rs.precision,
                        log_every=100 if log else 0)
    t0 = time.perf_counter()
    model, rep = M.train(train.S, train.M, arch, cfg, log=log)
    comp = evaluation.compare_pod_dlrom(train, test, model, rs.n, basis=_basis(rs.problem, rs.N_t, rs.n_train))
    return RunResult(rs, comp.dlrom.epsilon_rel, comp.pod.epsilon_rel, rep.best_epoch, rep.stopped_epoch,
                     time.perf_counter() - t0, comp.dlrom.per_test_errors)


@functools.lru_cache(maxsize=8)
def _basis(problem, N_t, n_train):
    return pod.compute_pod(datasets(problem, N_t, n_train)[0].S)


def parity_modes(problem, target):
    """Smallest POD dimension reaching ``target`` on the default test set."""
    train, test = datasets(problem)
    return pod.pod_modes_for_accuracy(train.S, test, target)
