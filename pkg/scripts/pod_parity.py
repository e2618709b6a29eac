"""POD dimension needed to match given DL-ROM accuracies on the transport tests,
plus the full POD error curves as CSV.

Example:
    python scripts/pod_parity.py --out results/pod
"""

import argparse
import csv
from pathlib import Path

from dlrom import experiments as X
from dlrom import pod

TARGETS = {"transport1p": 8.74e-3, "transport2p": 2.85e-2}


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", default="results/pod")
    args = p.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for problem, target in TARGETS.items():
        train, test = X.datasets(problem)
        basis = pod.compute_pod(train.S)
        curve = pod.pod_error_curve(basis, test)
        with open(out / f"pod_curve_{problem}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "eps_rel"])
            for n, e in enumerate(curve):
                w.writerow([n, repr(float(e))])
        n_star = next(n for n in range(1, len(curve)) if curve[n] <= target)
        print(f"{problem}: eps_rel <= {target:g} needs {n_star} POD modes (n=2 gives {curve[2]:.4e})")


if __name__ == "__main__":
    main()
