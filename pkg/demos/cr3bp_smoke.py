"""CR3BP smoke run: a handful of uniform solves at full thrust, then the
time-of-flight modes and hyperplane coordinates of whatever converged.

Each solve is capped at the configured wall time, so expect a few minutes.
"""

import argparse

import numpy as np

from amorgs.config import default_config, make_family, solver_config
from amorgs.pipeline import CurationConfig, curate
from amorgs.structure import detect_modes, time_of_flight, to_hyperplane_coords


def main(argv=None):
    p = argparse.ArgumentParser(description="CR3BP smoke run")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    cfg = default_config("cr3bp")
    fam = make_family(cfg)
    ds = curate(fam, CurationConfig([args.alpha], args.n, solver_config(cfg), args.seed),
                progress=lambda k: print(f"  solved {k}/{args.n}", flush=True))
    conv = ds.converged
    print(f"{len(conv)}/{len(ds)} converged")
    if len(conv) == 0:
        return
    X = conv.x_star_matrix()
    tof = time_of_flight(X)
    print("final mass [kg]:", np.round(X[:, 3], 2))
    print("time of flight [TU]:", np.round(tof, 3))
    print("TOF modes:", detect_modes(X, min_count=1))
    print("hyperplane coords:\n", np.round(to_hyperplane_coords(X[:, :3]), 3))


if __name__ == "__main__":
    main()
