"""Temporal self-convergence factors of the Burgers and monodomain solvers.

Example:
    python scripts/fom_convergence.py --substeps 1 2 4 8
"""

import argparse

from dlrom import fom

PARAMS = {"burgers": (100.0, 550.0, 1000.0), "monodomain": (5e-3, 1.57e-2, 5e-2)}


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--substeps", type=int, nargs="+", default=[1, 8], help="coarsest level of each triple")
    args = p.parse_args(argv)
    for kind, mus in PARAMS.items():
        spec = fom.default_spec(kind)
        for s in args.substeps:
            factors = [fom.self_convergence_factor(spec, fom.ParameterSample((m,), spec.bounds), s) for m in mus]
            print(f"{kind:11s} substeps {s:2d}: " + "  ".join(f"mu={m:g}: {f:.3f}" for m, f in zip(mus, factors)))


if __name__ == "__main__":
    main()
