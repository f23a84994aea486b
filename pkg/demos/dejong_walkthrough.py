"""De Jong walkthrough: curate, filter, train, sample and compare warm starts.

A scaled-down version of the full run (fewer samples and epochs) so it
finishes in a couple of minutes on one core. Pass ``--full`` for the
default configuration (10,000 solves, 250 epochs).
"""

import argparse
import math

import numpy as np

from amorgs.config import default_config, solver_config, train_configs
from amorgs.pipeline import CurationConfig, DeJongAdapter, beta_filter_and_train, benchmark, curate


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--full", action="store_true")
    p.add_argument("--alpha", type=float, default=math.pi / 3)
    args = p.parse_args(argv)

    cfg = default_config("dejong")
    if not args.full:
        cfg["curation"]["samples_per_alpha"] = 100
        cfg["training"]["epochs"] = 40
    fam = DeJongAdapter()
    scfg = solver_config(cfg)
    cur = cfg["curation"]
    ds = curate(fam, CurationConfig(cur["alphas"], cur["samples_per_alpha"], scfg, cfg["seed"]))
    print(f"curated {len(ds)} solves, {len(ds.converged)} converged")

    models, prov = beta_filter_and_train(ds, cfg["training"]["beta"], fam, train_configs(cfg))
    print(f"trained on {prov['n_train']} records (beta={prov['beta']})")

    rng = np.random.default_rng(1)
    X = models.cvae.sample(args.alpha, 2000, rng)
    M = fam.template_minima(args.alpha)
    d = np.linalg.norm(X[:, None, :] - M[None], axis=2)
    near = d.min(axis=1) <= 3.0
    share = np.bincount(d.argmin(axis=1)[near], minlength=len(M)) / max(near.sum(), 1)
    print(f"alpha={args.alpha:.4f}: {100 * near.mean():.1f}% of samples within 3 of a minimum")
    print("share per minimum:", np.round(share, 3))

    rep = benchmark(fam, args.alpha, ["uniform", "amorgs"], models, 200, scfg, seed=2)
    for s in rep.modes:
        print(f"{s.mode:8s} converged {s.converged_pct:5.1f}%  mean time {s.time_mean * 1e3:.2f} ms")


if __name__ == "__main__":
    main()
