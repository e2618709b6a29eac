"""Error indicators, DL-ROM vs POD comparisons and training sweeps."""

from __future__ import annotations

import csv
import dataclasses
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import fom, pod
from .model import DlRomArchitecture, TrainConfig, predict, train


class ZeroNormError(ValueError):
    pass


@dataclass
class ErrorReport:
    epsilon_rel: float
    per_test_errors: np.ndarray
    epsilon_k_fields: list | None = None


def _blocks(S, n_instances, N_t):
    S = np.asarray(S, dtype=float)
    if S.shape[1] != n_instances * N_t:
        raise ValueError(f"{S.shape[1]} columns do not split into {n_instances} x {N_t}")
    # columns are instance-major: all times of instance 0, then instance 1, ...
    return S.reshape(S.shape[0], n_instances, N_t)


def _instance_norms(T, params=None):
    den = np.sqrt(np.sum(T * T, axis=(0, 2)))
    bad = np.flatnonzero(den == 0)
    if bad.size:
        i = int(bad[0])
        label = f" (mu={tuple(params[i].mu)})" if params is not None else ""
        raise ZeroNormError(f"testing instance {i}{label} has a zero-norm solution")
    return den


def epsilon_rel(true, approx, N_t=None, fields=False) -> ErrorReport:
    """Relative space-time error averaged over the testing instances.

    ``true`` is a SnapshotSet, or a raw matrix together with ``N_t``.
    ``approx`` has the same column layout.
    """
    if isinstance(true, fom.SnapshotSet):
        S, nt, params = true.S, true.N_t, true.params
    else:
        if N_t is None:
            raise ValueError("N_t is required when passing a raw snapshot matrix")
        S, nt, params = np.asarray(true, dtype=float), N_t, None
    approx = np.asarray(approx, dtype=float)
    if approx.shape != S.shape:
        raise ValueError(f"shape mismatch: true {S.shape}, approx {approx.shape}")
    n_inst = S.shape[1] // nt
    T = _blocks(S, n_inst, nt)
    A = _blocks(approx, n_inst, nt)
    den = _instance_norms(T, params)
    D = T - A
    per = np.sqrt(np.sum(D * D, axis=(0, 2))) / den
    flds = [np.abs(D[:, i, :]) / den[i] for i in range(n_inst)] if fields else None
    return ErrorReport(float(np.mean(per)), per, flds)


def epsilon_k_field(true_inst, approx_inst):
    """Pointwise error ``|u - u~|`` of one instance (``N_h x N_t``) scaled by the
    instance's space-time norm."""
    T = np.asarray(true_inst, dtype=float)
    A = np.asarray(approx_inst, dtype=float)
    if T.shape != A.shape:
        raise ValueError(f"shape mismatch: true {T.shape}, approx {A.shape}")
    den = math.sqrt(float(np.sum(T * T)))
    if den == 0:
        raise ZeroNormError("instance has a zero-norm solution")
    return np.abs(T - A) / den


def pod_reconstruction(basis, test: fom.SnapshotSet, n):
    return pod.optimal_reconstruction(basis.truncate(n), test.S)


# --- sweeps ----------------------------------------------------------------


class SweepAxis(str, Enum):
    REDUCED_DIM = "n"
    TRAIN_SIZE = "n_train"
    OMEGA = "omega"
    KERNEL = "kernel"
    HIDDEN_LAYERS = "layers"
    NEURONS = "neurons"


@dataclass
class SweepResult:
    axis: SweepAxis
    values: list
    metrics: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.axis = SweepAxis(self.axis)

    def column(self, key):
        return np.array([m.get(key, math.nan) for m in self.metrics], dtype=float)

    def write_csv(self, path):
        has_pod = any("pod_eps_rel" in m for m in self.metrics)
        cols = ["value", "val_loss", "test_eps_rel"] + (["pod_eps_rel"] if has_pod else []) + ["status"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for v, m in zip(self.values, self.metrics):
                row = [v, repr(m.get("val_loss", math.nan)), repr(m.get("test_eps_rel", math.nan))]
                if has_pod:
                    row.append(repr(m.get("pod_eps_rel", math.nan)))
                row.append(m.get("status", "ok"))
                w.writerow(row)


def max_workers(requested=None):
    cap = os.environ.get("DLROM_THREADS")
    n = requested if requested is not None else 1
    if cap:
        n = min(n, max(int(cap), 1))
    return max(n, 1)


def train_and_evaluate(train_set, test_set, arch, cfg):
    """Train one model and score it on the test set.

    Returns ``(model, report, ErrorReport)``.
    """
    model, rep = train(train_set.S, train_set.M, arch, cfg)
    approx = predict(model, test_set.M)
    return model, rep, epsilon_rel(test_set, approx)


def _point(args):
    train_set, test_set, arch, cfg = args
    try:
        _, rep, err = train_and_evaluate(train_set, test_set, arch, cfg)
        return {"val_loss": float(min(rep.val_loss)), "test_eps_rel": err.epsilon_rel, "status": "ok"}
    except Exception as exc:  # a failed point is recorded and the sweep moves on
        return {"val_loss": math.nan, "test_eps_rel": math.nan,
                "status": f"failed: {type(exc).__name__}: {exc}".replace("\n", " ")}


def _run_points(jobs, workers=None):
    w = min(max_workers(workers), len(jobs))
    if w <= 1:
        return [_point(j) for j in jobs]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=w) as pool:
        # map preserves point order, so the merge is keyed by index
        return list(pool.map(_point, jobs))


def _point_cfg(cfg, i):
    return dataclasses.replace(cfg, seed=cfg.seed + i)


def sweep_reduced_dimension(train_set, test_set, arch: DlRomArchitecture, cfg: TrainConfig, n_values, workers=None):
    """One training per reduced dimension, plus the optimal-POD error at each n."""
    n_values = [int(v) for v in n_values]
    if not n_values:
        raise ValueError("n_values must be non-empty")
    jobs = [(train_set, test_set, dataclasses.replace(arch, n=n), _point_cfg(cfg, i)) for i, n in enumerate(n_values)]
    metrics = _run_points(jobs, workers)
    basis = pod.compute_pod(train_set.S)
    curve = pod.pod_error_curve(basis, test_set, n_max=min(max(n_values), basis.n))
    for n, m in zip(n_values, metrics):
        m["pod_eps_rel"] = float(curve[n]) if n < len(curve) else float(curve[-1])
    return SweepResult(SweepAxis.REDUCED_DIM, n_values, metrics)


def loglog_slope(x, y):
    """Least-squares slope of ``log y`` against ``log x`` over finite positive points."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(y) & (y > 0) & (x > 0)
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def sweep_train_size(spec, arch: DlRomArchitecture, cfg: TrainConfig, n_train_values, workers=None):
    """Regenerate the dataset for every training size and train on it."""
    n_train_values = [int(v) for v in n_train_values]
    if not n_train_values or min(n_train_values) < 2:
        raise ValueError("training sizes must be >= 2")
    jobs = []
    for i, nt in enumerate(n_train_values):
        tr_p = fom.sample_training_parameters(spec.bounds, nt)
        tr, te = fom.build_snapshot_set(spec, tr_p, fom.sample_testing_parameters(tr_p))
        jobs.append((tr, te, arch, _point_cfg(cfg, i)))
    metrics = _run_points(jobs, workers)
    res = SweepResult(SweepAxis.TRAIN_SIZE, n_train_values, metrics)
    res.extra["eps_slope"] = loglog_slope(n_train_values, res.column("test_eps_rel"))
    res.extra["loss_slope"] = loglog_slope(n_train_values, res.column("val_loss"))
    return res


def sweep_omega(train_set, test_set, arch: DlRomArchitecture, cfg: TrainConfig, omega_values=None, workers=None):
    """One training per loss weight; flags whether dropping the encoder term
    (``omega = 1``) is worse than ``omega = 0.5``."""
    if omega_values is None:
        omega_values = [0.1, 0.2, 0.5, 0.8, 0.9, 1.0]
    omega_values = [float(v) for v in omega_values]
    if any(not 0.0 <= w <= 1.0 for w in omega_values):
        raise ValueError("omega values must lie in [0, 1]")
    jobs = [(train_set, test_set, arch, dataclasses.replace(_point_cfg(cfg, i), omega=w))
            for i, w in enumerate(omega_values)]
    res = SweepResult(SweepAxis.OMEGA, omega_values, _run_points(jobs, workers))
    if 0.5 in omega_values and 1.0 in omega_values:
        eps = dict(zip(omega_values, res.column("test_eps_rel")))
        res.extra["omega_one_worse"] = bool(eps[1.0] > eps[0.5])
    return res


TUNING_START = {"kernel": 3, "layers": 1, "neurons": 50}


def _tuned_arch(arch, conf):
    return dataclasses.replace(arch, kernel=conf["kernel"], dfnn_hidden_layers=conf["layers"],
                               dfnn_neurons=conf["neurons"])


def tune_hyperparameters(train_set, test_set, arch: DlRomArchitecture, cfg: TrainConfig, space, start=None, workers=None):
    """Coordinate descent over kernel size, then DFNN depth, then DFNN width.

    Each coordinate is varied over its candidates with the others fixed; the
    value with the lowest validation loss is kept before moving on.
    Returns ``(best configuration dict, list of SweepResult)``.
    """
    conf = dict(TUNING_START if start is None else start)
    results = []
    for key, axis in (("kernel", SweepAxis.KERNEL), ("layers", SweepAxis.HIDDEN_LAYERS), ("neurons", SweepAxis.NEURONS)):
        cands = [int(v) for v in space.get(key, [conf[key]])]
        if not cands:
            raise ValueError(f"empty candidate list for {key}")
        jobs = [(train_set, test_set, _tuned_arch(arch, {**conf, key: v}), _point_cfg(cfg, i))
                for i, v in enumerate(cands)]
        res = SweepResult(axis, cands, _run_points(jobs, workers))
        results.append(res)
        val = res.column("val_loss")
        if np.all(np.isnan(val)):
            raise RuntimeError(f"every candidate for {key} failed")
        conf[key] = cands[int(np.nanargmin(val))]
    return conf, results


# --- DL-ROM vs POD ---------------------------------------------------------


@dataclass
class Comparison:
    dlrom: ErrorReport
    pod: ErrorReport
    pod_n: int
    approx_dlrom: np.ndarray
    approx_pod: np.ndarray


def compare_pod_dlrom(train_set, test_set, model, pod_n, basis=None):
    """Side-by-side DL-ROM and optimal-POD test errors; both approximations use
    the test set's column ordering."""
    if basis is None:
        basis = pod.compute_pod(train_set.S, n=pod_n)
    approx_pod = pod_reconstruction(basis, test_set, pod_n)
    approx_dl = predict(model, test_set.M)
    return Comparison(
        epsilon_rel(test_set, approx_dl, fields=True),
        epsilon_rel(test_set, approx_pod, fields=True),
        pod_n, approx_dl, approx_pod,
    )


def locate_slice(test_set, t, mu):
    """Column index of the test snapshot closest to ``(t, mu)``."""
    mus = np.array([p.mu for p in test_set.params], dtype=float)
    i = int(np.argmin(np.sum((mus - np.atleast_1d(mu)) ** 2, axis=1)))
    nt = test_set.N_t
    times = test_set.M[0, i * nt:(i + 1) * nt]
    k = int(np.argmin(np.abs(times - t)))
    return i * nt + k


def write_comparison(comp: Comparison, test_set, out_dir, test_name, slices=()):
    """Export ``slices_<test>.csv`` and one ``error_field_<instance>.csv`` per
    testing instance."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    x = test_set.spec.grid()
    with open(out / f"slices_{test_name}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "mu", "x", "fom", "dlrom", "pod"])
        for t, mu in slices:
            j = locate_slice(test_set, t, mu)
            tj = test_set.M[0, j]
            mj = ";".join(repr(float(v)) for v in test_set.M[1:, j])
            for r in range(len(x)):
                w.writerow([repr(float(tj)), mj, repr(float(x[r])), repr(float(test_set.S[r, j])),
                            repr(float(comp.approx_dlrom[r, j])), repr(float(comp.approx_pod[r, j]))])
    with open(out / f"per_instance_{test_name}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["instance", "mu", "dlrom_eps", "pod_eps"])
        for i, p in enumerate(test_set.params):
            w.writerow([i, ";".join(repr(float(v)) for v in p.mu),
                        repr(float(comp.dlrom.per_test_errors[i])), repr(float(comp.pod.per_test_errors[i]))])
    times = test_set.M[0, :test_set.N_t]
    for i, F in enumerate(comp.dlrom.epsilon_k_fields or []):
        with open(out / f"error_field_{i}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x"] + [repr(float(t)) for t in times])
            for r in range(F.shape[0]):
                w.writerow([repr(float(x[r]))] + [repr(float(v)) for v in F[r]])
