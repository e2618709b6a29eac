"""Command-line entry point: ``dlrom {generate,pod,train,eval,sweep,reproduce}``.

Settings resolve as command-line flags, then ``--config`` (JSON), then the
per-problem defaults in :data:`PROBLEM_DEFAULTS`.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, evaluation, fom, io, pod
from .model import TrainConfig, default_architecture, train

PROBLEM_DEFAULTS = {
    "burgers": {"n_train": 20, "n": 20, "n_t": 100},
    "transport1p": {"n_train": 20, "n": 2, "n_t": 200},
    "transport2p": {"n_train": 21, "n": 3, "n_t": 100},
    "monodomain": {"n_train": 20, "n": 2, "n_t": 400},
}

TRAIN_DEFAULTS = {
    "omega": 0.5, "epochs": 10000, "batch": 20, "lr": 1e-4, "patience": 500,
    "seed": 0, "precision": "f64", "substeps": 1,
}

REPRODUCE = {
    "test1": {"problem": "burgers", "slices": [(0.02, 976.32)]},
    "test2.1": {"problem": "transport1p", "slices": [(0.125, 0.8625), (0.5, 0.8625), (0.625, 0.8625)]},
    "test2.2": {"problem": "transport2p",
                "slices": [(0.245, (0.154375, 0.6375)), (0.495, (0.154375, 0.6375)), (0.745, (0.154375, 0.6375))]},
    "test3": {"problem": "monodomain", "slices": [(0.4962, 0.0157), (0.9975, 0.0157), (1.4987, 0.0157)]},
}

SETTING_KEYS = ("problem", "n", "n_train", "n_t", "substeps", "omega", "epochs", "batch", "lr",
                "patience", "seed", "precision")


class CliError(Exception):
    pass


# --- manifest --------------------------------------------------------------


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_digests(root):
    root = Path(root)
    if root.is_file():
        return {str(root): file_digest(root)}
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name != "manifest.json" and not p.name.startswith("."):
            out[str(p)] = file_digest(p)
    return out


@dataclass
class RunManifest:
    command: list
    config: dict
    seed: int | None
    version: str = __version__
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def write(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        io.atomic_write_text(d / "manifest.json", json.dumps(dataclasses.asdict(self), indent=1, sort_keys=True) + "\n")


# --- settings --------------------------------------------------------------


def resolve_settings(args, problem=None):
    """Merge flags over the config file over the built-in defaults."""
    cfg_file = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"missing config file {path}")
        cfg_file = json.loads(path.read_text())
        unknown = set(cfg_file) - set(SETTING_KEYS)
        if unknown:
            raise CliError(f"unknown config keys: {', '.join(sorted(unknown))}")
    flags = {k: getattr(args, k) for k in SETTING_KEYS if getattr(args, k, None) is not None}
    problem = flags.get("problem", cfg_file.get("problem", problem))
    out = dict(TRAIN_DEFAULTS)
    if problem is not None:
        if problem not in PROBLEM_DEFAULTS:
            raise CliError(f"unknown problem {problem!r}")
        out.update(PROBLEM_DEFAULTS[problem])
        out["problem"] = problem
    out.update(cfg_file)
    out.update(flags)
    return out


def train_config(s) -> TrainConfig:
    return TrainConfig(lr=float(s["lr"]), batch_size=int(s["batch"]), epochs=int(s["epochs"]),
                       patience=int(s["patience"]), omega=float(s["omega"]), seed=int(s["seed"]),
                       precision=s["precision"])


def _workers():
    return evaluation.max_workers(os.cpu_count() or 1)


def _require(path, what):
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"missing {what}: {p}")
    return p


# --- commands --------------------------------------------------------------


def do_generate(s, out):
    if "problem" not in s:
        raise CliError("--problem is required")
    spec = fom.default_spec(s["problem"], N_t=int(s["n_t"]), substeps=int(s["substeps"]))
    tr_p = fom.sample_training_parameters(spec.bounds, int(s["n_train"]))
    tr, te = fom.build_snapshot_set(spec, tr_p, fom.sample_testing_parameters(tr_p), workers=_workers())
    out = Path(out)
    io.save_snapshot_set(tr, out / "train")
    io.save_snapshot_set(te, out / "test")
    return tr, te


def cmd_generate(args):
    s = resolve_settings(args)
    do_generate(s, args.out)
    return s, {}, args.out


def cmd_pod(args):
    ds = _require(args.inp, "dataset")
    tr = io.load_snapshot_set(_require(ds / "train", "training set"))
    s = resolve_settings(args, tr.spec.kind.value)
    n = int(s["n"])
    basis = pod.compute_pod(tr.S, n=n)
    io.save_pod_basis(basis, args.out)
    frac = pod.energy_fraction(basis.singular_values, n)
    lines = ["n,energy_fraction,test_eps_rel"]
    test_eps = math.nan
    if (ds / "test").exists():
        te = io.load_snapshot_set(ds / "test")
        test_eps = evaluation.epsilon_rel(te, evaluation.pod_reconstruction(basis, te, n)).epsilon_rel
    lines.append(f"{n},{frac!r},{test_eps!r}")
    io.atomic_write_text(Path(args.out) / "pod_report.csv", "\n".join(lines) + "\n")
    print(f"energy_fraction {frac:.8f}")
    if not math.isnan(test_eps):
        print(f"pod_eps_rel {test_eps:.6e}")
    return s, tree_digests(ds), args.out


def do_train(s, tr, out):
    arch = default_architecture(tr.spec.kind.value, int(s["n"]), N_h=tr.S.shape[0])
    if arch.n_mu != tr.spec.n_mu:
        raise CliError(f"architecture expects {arch.n_mu} parameters, dataset has {tr.spec.n_mu}")
    model, rep = train(tr.S, tr.M, arch, train_config(s))
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    io.save_checkpoint(model, out / "checkpoint.bin")
    rep.write_csv(out / "loss.csv")
    return model, rep


def cmd_train(args):
    ds = _require(args.inp, "dataset")
    tr = io.load_snapshot_set(_require(ds / "train", "training set"))
    s = resolve_settings(args, tr.spec.kind.value)
    _, rep = do_train(s, tr, args.out)
    print(f"best_epoch {rep.best_epoch} val_loss {min(rep.val_loss):.6e}")
    return s, tree_digests(ds / "train"), args.out


def do_eval(model, tr, te, out, name="eval", slices=()):
    comp = evaluation.compare_pod_dlrom(tr, te, model, model.architecture.n)
    if not (math.isfinite(comp.dlrom.epsilon_rel) and math.isfinite(comp.pod.epsilon_rel)):
        raise FloatingPointError("non-finite error indicator")
    evaluation.write_comparison(comp, te, out, name, slices)
    io.atomic_write_text(
        Path(out) / "report.csv",
        f"n,dlrom_eps_rel,pod_eps_rel\n{model.architecture.n},{comp.dlrom.epsilon_rel!r},{comp.pod.epsilon_rel!r}\n",
    )
    return comp


def _parse_slices(items):
    out = []
    for item in items or []:
        t, *mu = (float(v) for v in item.split(","))
        out.append((t, tuple(mu)))
    return out


def cmd_eval(args):
    src = _require(args.inp, "checkpoint")
    ckpt = src / "checkpoint.bin" if src.is_dir() else src
    model = io.load_checkpoint(_require(ckpt, "checkpoint"))
    ds = _require(args.data, "dataset")
    tr = io.load_snapshot_set(_require(ds / "train", "training set"))
    te = io.load_snapshot_set(_require(ds / "test", "test set"))
    s = resolve_settings(args, tr.spec.kind.value)
    comp = do_eval(model, tr, te, args.out, slices=_parse_slices(args.slice))
    print(f"eps_rel {comp.dlrom.epsilon_rel:.6e}")
    print(f"pod_eps_rel {comp.pod.epsilon_rel:.6e}")
    inputs = {str(ckpt): file_digest(ckpt), **tree_digests(ds / "test")}
    return s, inputs, args.out


def _parse_values(text, cast=float):
    try:
        return [cast(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise CliError(f"cannot parse --values {text!r}") from exc


def cmd_sweep(args):
    axis = evaluation.SweepAxis(args.axis)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    inputs = {}
    if axis is evaluation.SweepAxis.TRAIN_SIZE:
        s = resolve_settings(args)
        if "problem" not in s:
            raise CliError("--problem is required for a training-size sweep")
        spec = fom.default_spec(s["problem"], N_t=int(s["n_t"]), substeps=int(s["substeps"]))
        arch = default_architecture(s["problem"], int(s["n"]), N_h=spec.N_h)
        res = evaluation.sweep_train_size(spec, arch, train_config(s), _parse_values(args.values, int), _workers())
    else:
        ds = _require(args.inp, "dataset")
        tr = io.load_snapshot_set(_require(ds / "train", "training set"))
        te = io.load_snapshot_set(_require(ds / "test", "test set"))
        inputs = tree_digests(ds)
        s = resolve_settings(args, tr.spec.kind.value)
        arch = default_architecture(tr.spec.kind.value, int(s["n"]), N_h=tr.S.shape[0])
        cfg = train_config(s)
        if axis is evaluation.SweepAxis.REDUCED_DIM:
            res = evaluation.sweep_reduced_dimension(tr, te, arch, cfg, _parse_values(args.values, int), _workers())
        elif axis is evaluation.SweepAxis.OMEGA:
            vals = _parse_values(args.values) if args.values else None
            res = evaluation.sweep_omega(tr, te, arch, cfg, vals, _workers())
        else:
            key = {"kernel": "kernel", "layers": "layers", "neurons": "neurons"}[axis.value]
            start = {"kernel": arch.kernel, "layers": arch.dfnn_hidden_layers, "neurons": arch.dfnn_neurons}
            _, results = evaluation.tune_hyperparameters(
                tr, te, arch, cfg, {key: _parse_values(args.values, int)}, start=start, workers=_workers())
            res = results[["kernel", "layers", "neurons"].index(key)]
    res.write_csv(out / f"sweep_{axis.value}.csv")
    if res.extra:
        io.atomic_write_text(out / f"sweep_{axis.value}_summary.json", json.dumps(res.extra, sort_keys=True) + "\n")
    for v, m in zip(res.values, res.metrics):
        print(f"{axis.value}={v} val_loss={m['val_loss']:.4e} eps_rel={m['test_eps_rel']:.4e} {m['status']}")
    return s, inputs, out


def cmd_reproduce(args):
    test = REPRODUCE[args.test]
    s = resolve_settings(args, test["problem"])
    out = Path(args.out)
    tr, te = do_generate(s, out / "data")
    model, _ = do_train(s, tr, out / "model")
    comp = do_eval(model, tr, te, out / "eval", name=args.test, slices=test["slices"])
    print(f"eps_rel {comp.dlrom.epsilon_rel:.6e}")
    print(f"pod_eps_rel {comp.pod.epsilon_rel:.6e}")
    return s, {}, out


# --- parser ----------------------------------------------------------------


def _add_settings(p, with_problem=True):
    if with_problem:
        p.add_argument("--problem", choices=sorted(PROBLEM_DEFAULTS))
    p.add_argument("--n", type=int, help="reduced dimension")
    p.add_argument("--n-train", dest="n_train", type=int, help="training parameter instances per component")
    p.add_argument("--n-t", dest="n_t", type=int, help="time instances per trajectory")
    p.add_argument("--substeps", type=int, help="solver steps per stored time instance")
    p.add_argument("--omega", type=float, help="loss weight of the reconstruction term")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--precision", choices=("f32", "f64"))
    p.add_argument("--config", help="JSON file of settings (overridden by flags)")


def build_parser():
    parser = argparse.ArgumentParser(prog="dlrom", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"dlrom {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="solve the full-order model and write train/test snapshot sets")
    _add_settings(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("pod", help="POD basis of a training set")
    _add_settings(p, with_problem=False)
    p.add_argument("--in", dest="inp", required=True, help="dataset directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pod)

    p = sub.add_parser("train", help="train a DL-ROM")
    _add_settings(p, with_problem=False)
    p.add_argument("--in", dest="inp", required=True, help="dataset directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="test-set errors of a trained DL-ROM and of POD at equal n")
    _add_settings(p, with_problem=False)
    p.add_argument("--in", dest="inp", required=True, help="checkpoint file or training output directory")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--slice", action="append", metavar="T,MU[,MU2]", help="export the solution at (t, mu)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train over a range of one setting")
    _add_settings(p)
    p.add_argument("--axis", required=True, choices=[a.value for a in evaluation.SweepAxis])
    p.add_argument("--values", default="", help="comma-separated values")
    p.add_argument("--in", dest="inp", help="dataset directory (not used for n_train)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("reproduce", help="generate, train and evaluate one of the reference tests")
    p.add_argument("test", choices=sorted(REPRODUCE))
    _add_settings(p, with_problem=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    try:
        settings, inputs, out = args.func(args)
        RunManifest(
            command=["dlrom"] + argv, config=settings, seed=settings.get("seed"),
            inputs=inputs, outputs=tree_digests(out), wall_time=time.perf_counter() - start,
        ).write(out)
    except KeyboardInterrupt:
        print("error: interrupted", file=sys.stderr)
        return 130
    except Exception as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
