"""Convolutional-autoencoder reduced order model.

Offline (training) network::

    u_h --reshape--> encoder (conv stack, dense, dense) --> u_n_enc
    (t, mu) --> DFNN --> u_n --> decoder (dense, dense, tconv stack) --unreshape--> u_h_rec

Per-example loss ``omega/2 |u_h - u_h_rec|^2 + (1-omega)/2 |u_n_enc - u_n|^2``
on min-max normalized data. At prediction time only DFNN and decoder run.
"""

from __future__ import annotations

import copy
import csv
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch, batch, value):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


# --- normalization ---------------------------------------------------------


@dataclass
class NormStats:
    s_min: float
    s_max: float
    m_min: np.ndarray
    m_max: np.ndarray

    @staticmethod
    def _scale(lo, hi):
        # degenerate ranges map to 0; the stored constant is still lo
        span = hi - lo
        return np.where(span > 0, span, np.inf)

    def normalize_S(self, S):
        return (S - self.s_min) / self._scale(self.s_min, self.s_max)

    def denormalize_S(self, S):
        span = self.s_max - self.s_min
        return S * span + self.s_min if span > 0 else np.full_like(S, self.s_min)

    def normalize_M(self, M):
        lo = self.m_min[:, None]
        return (M - lo) / self._scale(self.m_min, self.m_max)[:, None]

    def denormalize_M(self, M):
        span = (self.m_max - self.m_min)[:, None]
        return np.where(span > 0, M * span + self.m_min[:, None], self.m_min[:, None])


def fit_normalization(S, M):
    """Global min/max of the snapshots, per-row min/max of the parameter matrix."""
    S = np.asarray(S)
    M = np.asarray(M)
    if S.size == 0 or M.size == 0:
        raise ValueError("empty training set")
    return NormStats(float(S.min()), float(S.max()), M.min(axis=1).astype(float), M.max(axis=1).astype(float))


# --- reshaping -------------------------------------------------------------


def square_side(n_h):
    return math.isqrt(n_h - 1) + 1 if n_h > 0 else 0


def reshape_square(u, side=None):
    """Row-major fill of ``side x side`` matrices, zero padded; batched on axis 0
    when ``u`` is 2D."""
    u = np.asarray(u)
    n_h = u.shape[-1]
    side = square_side(n_h) if side is None else side
    if side * side < n_h:
        raise ValueError("side too small for the state dimension")
    pad = side * side - n_h
    if pad:
        u = np.concatenate([u, np.zeros(u.shape[:-1] + (pad,), u.dtype)], axis=-1)
    return u.reshape(u.shape[:-1] + (side, side))


def unreshape(U, n_h):
    U = np.asarray(U)
    return U.reshape(U.shape[:-2] + (-1,))[..., :n_h]


# --- architecture ----------------------------------------------------------


@dataclass
class DlRomArchitecture:
    n: int
    n_mu: int
    N_h: int
    kernel: int = 5
    conv_filters: tuple = (8, 16, 32, 64)
    conv_strides: tuple = (1, 2, 2, 2)
    dense_width: int = 256
    dfnn_hidden_layers: int = 11
    dfnn_neurons: int = 50

    def __post_init__(self):
        self.conv_filters = tuple(int(f) for f in self.conv_filters)
        self.conv_strides = tuple(int(s) for s in self.conv_strides)
        if len(self.conv_filters) != len(self.conv_strides) or not self.conv_filters:
            raise ValueError("conv_filters and conv_strides must be non-empty and of equal length")
        if self.side % self.total_stride:
            raise ValueError(
                f"reshaped side {self.side} is not divisible by the total stride {self.total_stride}"
            )
        if self.n < 1 or self.n_mu < 1 or self.N_h < 1:
            raise ValueError("n, n_mu and N_h must be positive")

    @property
    def side(self):
        return square_side(self.N_h)

    @property
    def total_stride(self):
        return math.prod(self.conv_strides)

    @property
    def block_shape(self):
        s = self.side // self.total_stride
        return (s, s, self.conv_filters[-1])

    @property
    def block_size(self):
        return math.prod(self.block_shape)

    @property
    def decoder_filters(self):
        return tuple(reversed(self.conv_filters))[1:] + (1,)

    @property
    def decoder_strides(self):
        return tuple(reversed(self.conv_strides))

    def to_dict(self):
        return asdict(self)


def default_architecture(problem, n, N_h=256, **overrides):
    """Per-problem defaults: kernel 5 / 11+1-layer DFNN x 50 for Burgers,
    kernel 7 / 4 x 200 for transport, kernel 7 / 1 x 200 for monodomain."""
    problem = str(getattr(problem, "value", problem))
    n_mu = 2 if problem == "transport2p" else 1
    if problem == "burgers":
        base = dict(kernel=5, dfnn_hidden_layers=11, dfnn_neurons=50)
    elif problem in ("transport1p", "transport2p"):
        base = dict(kernel=7, dfnn_hidden_layers=4, dfnn_neurons=200)
    elif problem == "monodomain":
        base = dict(kernel=7, dfnn_hidden_layers=1, dfnn_neurons=200)
    else:
        raise ValueError(f"unknown problem {problem!r}")
    base.update(overrides)
    return DlRomArchitecture(n=n, n_mu=n_mu, N_h=N_h, **base)


@dataclass
class ModelParameters:
    theta_E: list
    theta_DF: list
    theta_D: list
    architecture: DlRomArchitecture
    norm: NormStats | None = None

    def layers(self):
        return self.theta_E + self.theta_DF + self.theta_D

    def arrays(self):
        return [a for p in self.layers() for a in p.arrays()]

    @property
    def dtype(self):
        return self.theta_DF[0].weights.dtype

    def astype(self, dtype):
        return ModelParameters(
            [p.astype(dtype) for p in self.theta_E],
            [p.astype(dtype) for p in self.theta_DF],
            [p.astype(dtype) for p in self.theta_D],
            self.architecture,
            self.norm,
        )


def init_parameters(arch: DlRomArchitecture, seed=0, dtype=np.float64):
    """He-uniform weights, zero biases. Layers are drawn in declaration order
    (encoder, DFNN, decoder) from one generator."""
    rng = np.random.default_rng(seed)
    k = arch.kernel
    enc = []
    c_in = 1
    for f, s in zip(arch.conv_filters, arch.conv_strides):
        enc.append(nn.init_conv(k, c_in, f, s, rng, "elu", dtype))
        c_in = f
    enc.append(nn.init_dense(arch.block_size, arch.dense_width, rng, "elu", dtype))
    enc.append(nn.init_dense(arch.dense_width, arch.n, rng, "identity", dtype))

    dfnn = []
    width = arch.n_mu + 1
    for _ in range(arch.dfnn_hidden_layers):
        dfnn.append(nn.init_dense(width, arch.dfnn_neurons, rng, "elu", dtype))
        width = arch.dfnn_neurons
    dfnn.append(nn.init_dense(width, arch.n, rng, "identity", dtype))

    dec = [
        nn.init_dense(arch.n, arch.dense_width, rng, "elu", dtype),
        nn.init_dense(arch.dense_width, arch.block_size, rng, "elu", dtype),
    ]
    c_in = arch.block_shape[2]
    filters = arch.decoder_filters
    for i, (f, s) in enumerate(zip(filters, arch.decoder_strides)):
        act = "identity" if i == len(filters) - 1 else "elu"
        dec.append(nn.init_tconv(k, c_in, f, s, rng, act, dtype))
        c_in = f
    return ModelParameters(enc, dfnn, dec, arch)


# --- sub-networks ----------------------------------------------------------


def _encode(model, u_h):
    arch = model.architecture
    x = reshape_square(u_h, arch.side)[..., None]
    return nn.network_forward(model.theta_E, x)


def _decode(model, u_n):
    arch = model.architecture
    dense, convs = model.theta_D[:2], model.theta_D[2:]
    h, c1 = nn.network_forward(dense, u_n)
    x = h.reshape((h.shape[0],) + arch.block_shape)
    y, c2 = nn.network_forward(convs, x)
    return unreshape(y[..., 0], arch.N_h), (c1, c2)


def _decode_backward(model, caches, dy):
    arch = model.architecture
    c1, c2 = caches
    side = arch.side
    dY = np.zeros((dy.shape[0], side * side), dy.dtype)
    dY[:, : arch.N_h] = dy
    dY = dY.reshape(dy.shape[0], side, side, 1)
    dx, g2 = nn.network_backward(model.theta_D[2:], c2, dY, need_dx=True)
    du, g1 = nn.network_backward(model.theta_D[:2], c1, dx.reshape(dx.shape[0], -1), need_dx=True)
    return du, g1 + g2


def encode(model, u_norm):
    """Encoder output for normalized states (rows of ``u_norm``)."""
    u = np.atleast_2d(u_norm).astype(model.dtype, copy=False)
    if u.shape[1] != model.architecture.N_h:
        raise ValueError(f"expected states of length {model.architecture.N_h}, got {u.shape[1]}")
    return _encode(model, u)[0]


def reduced_dynamics(model, tmu_norm):
    """DFNN output for normalized ``(t, mu)`` rows."""
    x = np.atleast_2d(tmu_norm).astype(model.dtype, copy=False)
    if x.shape[1] != model.architecture.n_mu + 1:
        raise ValueError(f"expected {model.architecture.n_mu + 1} inputs per row, got {x.shape[1]}")
    return nn.network_forward(model.theta_DF, x)[0]


def decode(model, u_n):
    u = np.atleast_2d(u_n).astype(model.dtype, copy=False)
    if u.shape[1] != model.architecture.n:
        raise ValueError(f"expected reduced states of length {model.architecture.n}, got {u.shape[1]}")
    return _decode(model, u)[0]


# --- loss ------------------------------------------------------------------


def batch_loss(model, u_h, tmu, omega, with_grad=True):
    """Mean per-example loss over the rows of a normalized batch.

    Returns ``(loss, per_example, grads)`` where ``grads`` lists ``(dW, db)``
    for every layer in ``model.layers()`` order (None if ``with_grad`` is False).
    """
    if not 0.0 <= omega <= 1.0:
        raise ValueError("omega must lie in [0, 1]")
    b = u_h.shape[0]
    un_enc, c_enc = _encode(model, u_h)
    un, c_df = nn.network_forward(model.theta_DF, tmu)
    rec, c_dec = _decode(model, un)
    r1 = rec - u_h
    r2 = un_enc - un
    per_example = 0.5 * omega * np.sum(r1 * r1, axis=1) + 0.5 * (1.0 - omega) * np.sum(r2 * r2, axis=1)
    loss = float(per_example.mean())
    if not with_grad:
        return loss, per_example, None
    scale = 1.0 / b
    d_rec = (omega * scale) * r1
    d_enc = ((1.0 - omega) * scale) * r2
    du, g_dec = _decode_backward(model, c_dec, d_rec)
    du = du - d_enc
    _, g_df = nn.network_backward(model.theta_DF, c_df, du)
    _, g_enc = nn.network_backward(model.theta_E, c_enc, d_enc)
    return loss, per_example, g_enc + g_df + g_dec


def per_example_loss(model, u_h, tmu, omega):
    """Loss and gradients of a single normalized example."""
    loss, _, grads = batch_loss(model, np.atleast_2d(u_h), np.atleast_2d(tmu), omega)
    return loss, grads


# --- training --------------------------------------------------------------


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 20
    epochs: int = 10000
    patience: int = 500
    val_fraction: float = 0.2
    omega: float = 0.5
    seed: int = 0
    precision: str = "f64"
    log_every: int = 0

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError("omega must lie in [0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.precision not in ("f32", "f64"):
            raise ValueError("precision must be 'f32' or 'f64'")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0
    wall_time: float = 0.0

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss"])
            for i, (a, b) in enumerate(zip(self.train_loss, self.val_loss), start=1):
                w.writerow([i, repr(float(a)), repr(float(b))])


def _evaluate(model, S, M, omega, chunk=500):
    total = 0.0
    for i in range(0, S.shape[0], chunk):
        _, pe, _ = batch_loss(model, S[i:i + chunk], M[i:i + chunk], omega, with_grad=False)
        total += float(pe.sum())
    return total / S.shape[0]


def split_columns(n_cols, val_fraction, rng):
    """Joint shuffle of the columns of (M, S) followed by a train/val split."""
    perm = rng.permutation(n_cols)
    n_val = int(round(val_fraction * n_cols))
    n_val = min(max(n_val, 1), n_cols - 1)
    return perm[: n_cols - n_val], perm[n_cols - n_val:]


def train(S, M, arch: DlRomArchitecture, cfg: TrainConfig, init=None, log=None):
    """Fit the model to snapshot matrix ``S`` and parameter matrix ``M``.

    Columns are shuffled and split into training/validation parts, both are
    normalized with statistics of the training part, and ADAM runs over
    ``floor(N_train / N_b)`` minibatches per epoch (reshuffled each epoch,
    ragged tail dropped). Validation loss is evaluated once per epoch; the
    returned parameters are those of the best validation epoch.
    """
    S = np.asarray(S, dtype=float)
    M = np.asarray(M, dtype=float)
    if S.shape[0] != arch.N_h or M.shape[0] != arch.n_mu + 1 or S.shape[1] != M.shape[1]:
        raise ValueError(
            f"dataset shapes S{S.shape}, M{M.shape} do not match architecture "
            f"(N_h={arch.N_h}, n_mu={arch.n_mu})"
        )
    rng = np.random.default_rng(cfg.seed)
    tr_idx, val_idx = split_columns(S.shape[1], cfg.val_fraction, rng)
    if len(tr_idx) < cfg.batch_size:
        raise ValueError(f"{len(tr_idx)} training columns is fewer than the batch size {cfg.batch_size}")
    norm = fit_normalization(S[:, tr_idx], M[:, tr_idx])
    dtype = cfg.dtype
    # examples as rows
    S_tr = norm.normalize_S(S[:, tr_idx]).T.astype(dtype)
    M_tr = norm.normalize_M(M[:, tr_idx]).T.astype(dtype)
    S_val = norm.normalize_S(S[:, val_idx]).T.astype(dtype)
    M_val = norm.normalize_M(M[:, val_idx]).T.astype(dtype)

    model = init if init is not None else init_parameters(arch, seed=cfg.seed, dtype=dtype)
    model = model.astype(dtype)
    model.norm = norm
    params = model.arrays()
    opt = nn.AdamState(lr=cfg.lr)
    n_batches = len(tr_idx) // cfg.batch_size
    report = TrainReport()
    best_val = math.inf
    best = None
    start = time.perf_counter()

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(tr_idx))
        seen = 0
        acc = 0.0
        for k in range(n_batches):
            idx = order[k * cfg.batch_size:(k + 1) * cfg.batch_size]
            loss, pe, grads = batch_loss(model, S_tr[idx], M_tr[idx], cfg.omega)
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, k + 1, loss)
            acc += float(pe.sum())
            seen += len(idx)
            nn.adam_step(opt, params, [g for pair in grads for g in pair])
        report.train_loss.append(acc / seen)
        val = _evaluate(model, S_val, M_val, cfg.omega)
        if not math.isfinite(val):
            raise TrainingDivergedError(epoch, 0, val)
        report.val_loss.append(val)
        report.stopped_epoch = epoch
        if val < best_val:
            best_val = val
            report.best_epoch = epoch
            best = [a.copy() for a in params]
        if log is not None and cfg.log_every and epoch % cfg.log_every == 0:
            log(f"epoch {epoch}: train {report.train_loss[-1]:.4e} val {val:.4e}")
        if epoch - report.best_epoch >= cfg.patience:
            break

    for a, b in zip(params, best):
        a[...] = b
    report.wall_time = time.perf_counter() - start
    return model, report


def predict(model: ModelParameters, M_test, chunk=1000):
    """Physical-scale DL-ROM solutions for the columns of ``M_test``
    (encoder unused)."""
    M_test = np.asarray(M_test, dtype=float)
    arch = model.architecture
    if M_test.ndim != 2 or M_test.shape[0] != arch.n_mu + 1:
        raise ValueError(f"M_test must have {arch.n_mu + 1} rows")
    if model.norm is None:
        raise ValueError("model has no normalization statistics (untrained)")
    X = model.norm.normalize_M(M_test).T.astype(model.dtype)
    out = np.empty((arch.N_h, X.shape[0]))
    for i in range(0, X.shape[0], chunk):
        un = nn.network_forward(model.theta_DF, X[i:i + chunk])[0]
        rec = _decode(model, un)[0]
        out[:, i:i + chunk] = rec.T
    return model.norm.denormalize_S(out)


def clone(model):
    return copy.deepcopy(model)
