"""Train one DL-ROM on a reference problem and compare it with POD at equal n.

Example:
    python scripts/train_variant.py transport1p --seeds 0 1 2 --n-t 50 --epochs 3000
"""

import argparse
import json

import numpy as np

from dlrom import experiments as X


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("problem", choices=["burgers", "transport1p", "transport2p", "monodomain"])
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--omega", type=float, default=0.5)
    p.add_argument("--n-t", type=int, default=None, help="stored time instants (default: problem default)")
    p.add_argument("--epochs", type=int, default=X.CI_EPOCHS)
    p.add_argument("--precision", choices=["f32", "f64"], default="f32")
    p.add_argument("--json", help="write the results here")
    args = p.parse_args(argv)

    rows = []
    for seed in args.seeds:
        rs = X.RunSpec(args.problem, args.n, seed=seed, omega=args.omega, N_t=args.n_t,
                       epochs=args.epochs, precision=args.precision)
        res = X.run(rs, log=lambda s: print(" ", s, flush=True))
        print(f"seed {seed}: eps_rel {res.eps_rel:.4e} pod {res.pod_eps_rel:.4e} "
              f"best epoch {res.best_epoch} wall {res.wall_time / 60:.1f} min", flush=True)
        rows.append({"seed": seed, "eps_rel": res.eps_rel, "pod_eps_rel": res.pod_eps_rel,
                     "best_epoch": res.best_epoch, "wall_time": res.wall_time})
    eps = [r["eps_rel"] for r in rows]
    print(f"mean eps_rel {np.mean(eps):.4e} median {np.median(eps):.4e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"args": vars(args), "runs": rows}, fh, indent=1)


if __name__ == "__main__":
    main()
