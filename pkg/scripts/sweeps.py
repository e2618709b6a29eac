"""Sweeps over reduced dimension, training-set size and loss weight.

Writes one CSV per axis. Defaults are small enough for a workstation; pass
larger ``--epochs`` for curves comparable to full-scale training.

Example:
    python scripts/sweeps.py transport1p --axis n --values 2 5 10 20 40 --out results/sweeps
"""

import argparse
import json
from pathlib import Path

from dlrom import evaluation, fom
from dlrom import experiments as X
from dlrom import model as M


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("problem", choices=["burgers", "transport1p", "transport2p", "monodomain"])
    p.add_argument("--axis", choices=["n", "n_train", "omega"], required=True)
    p.add_argument("--values", type=float, nargs="+", required=True)
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--n-t", type=int, default=X.CI_N_T)
    p.add_argument("--epochs", type=int, default=X.CI_EPOCHS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="results/sweeps")
    args = p.parse_args(argv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = M.TrainConfig(epochs=args.epochs, seed=args.seed, precision="f32")
    arch = M.default_architecture(args.problem, args.n)
    if args.axis == "n_train":
        spec = fom.default_spec(args.problem, N_t=args.n_t,
                                substeps=X.solver_substeps(args.problem, args.n_t))
        res = evaluation.sweep_train_size(spec, arch, cfg, [int(v) for v in args.values], workers=args.workers)
    else:
        train, test = X.datasets(args.problem, args.n_t)
        if args.axis == "n":
            res = evaluation.sweep_reduced_dimension(train, test, arch, cfg, [int(v) for v in args.values],
                                                     workers=args.workers)
        else:
            res = evaluation.sweep_omega(train, test, arch, cfg, args.values, workers=args.workers)
    path = out / f"{args.problem}_{args.axis}.csv"
    res.write_csv(path)
    print(f"wrote {path}")
    if res.extra:
        print(json.dumps(res.extra))


if __name__ == "__main__":
    main()
