"""Command-line interface.

Subcommands: curate, filter, train, sample, warmstart, bench, analyze.
Exit codes: 0 success, 2 configuration error, 3 data error,
4 model-compatibility error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    curation_config,
    load_config,
    make_family,
    solver_config,
    to_jsonable,
    to_toml,
    train_configs,
)
from .generative import load_model, save_model
from .nn import read_checkpoint
from .pipeline import MODES, Models, beta_filter_and_train, benchmark, curate, curation_manifest, draw_guesses, warmstart
from .problem import SolutionDataset, config_digest, filter_by_quality
from . import structure

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_MODEL = 0, 2, 3, 4
PUB = "(published study value)"


class DataError(RuntimeError):
    pass


class ModelError(RuntimeError):
    pass


def _prepare_out(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {path} is not writable: {exc}") from exc
    return path


def _setup(args):
    cfg = load_config(args.config, args.family)
    if args.seed is not None:
        cfg["seed"] = args.seed
    out = Path(args.out if args.out is not None else cfg["out"])
    return cfg, out


def _provenance(cfg, command, inputs=None):
    return {
        "tool": "amorgs",
        "version": __version__,
        "command": command,
        "seed": cfg["seed"],
        "config_digest": config_digest(to_jsonable(cfg)),
        "inputs": inputs or {},
    }


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_dataset(path) -> SolutionDataset:
    p = Path(path)
    if not p.exists():
        raise DataError(f"dataset {p} does not exist")
    try:
        ds = SolutionDataset.from_jsonl(p)
    except (ValueError, KeyError) as exc:
        raise DataError(f"cannot read dataset {p}: {exc}") from exc
    if len(ds) == 0:
        raise DataError(f"dataset {p} is empty")
    return ds


def _file_digest(path) -> str:
    import hashlib

    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _load_models(cfg, out: Path, family) -> Models:
    models = Models()
    for name in ("cvae", "lstm", "vanilla"):
        p = out / f"{name}.json"
        if not p.exists():
            continue
        try:
            meta = read_checkpoint(p).get("training", {})
            model = load_model(p)
        except (ValueError, KeyError, OSError) as exc:
            raise ModelError(f"cannot load checkpoint {p}: {exc}") from exc
        if meta.get("family") != family.name:
            raise ModelError(f"checkpoint {p} was trained for family {meta.get('family')!r}, not {family.name!r}")
        setattr(models, name, model)
    return models


# ---------------------------------------------------------------------------
# subcommands


def cmd_curate(args):
    cfg, out = _setup(args)
    family = make_family(cfg)
    ccfg = curation_config(cfg, args.workers, not args.no_timing)
    _prepare_out(out)
    path = out / "dataset.jsonl"
    ds = curate(family, ccfg, path)
    prov = _provenance(cfg, "curate")
    prov.update(curation_digest=ds.provenance, dataset_digest=ds.digest(), records=len(ds),
                converged=sum(r.converged for r in ds.records), curation=to_jsonable(curation_manifest(family, ccfg)))
    _write_json(out / "dataset.provenance.json", prov)
    (out / "config.toml").write_text(to_toml(cfg))
    print(f"{len(ds)} records ({prov['converged']} converged) -> {path}")
    return EXIT_OK


def cmd_filter(args):
    cfg, out = _setup(args)
    src = Path(args.dataset or out / "dataset.jsonl")
    ds = _load_dataset(src)
    beta = cfg["training"]["beta"] if args.beta is None else args.beta
    kept = filter_by_quality(ds, beta)
    if len(kept) == 0:
        raise DataError(f"no converged records with objective <= beta={beta}")
    _prepare_out(out)
    kept.to_jsonl(out / "filtered.jsonl")
    prov = _provenance(cfg, "filter", {"dataset": ds.digest()})
    prov.update(beta=beta, dataset_digest=kept.digest(), records=len(kept))
    _write_json(out / "filtered.provenance.json", prov)
    print(f"kept {len(kept)} of {len(ds)} records at beta={beta}")
    return EXIT_OK


def cmd_train(args):
    cfg, out = _setup(args)
    family = make_family(cfg)
    src = Path(args.dataset or out / "dataset.jsonl")
    ds = _load_dataset(src)
    beta = cfg["training"]["beta"] if args.beta is None else args.beta
    _prepare_out(out)
    try:
        models, prov = beta_filter_and_train(ds, beta, family, train_configs(cfg), args.paper_architecture,
                                             vanilla=cfg["training"]["vanilla"])
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    meta = _provenance(cfg, "train", {"dataset": prov["dataset_digest"]}) | prov
    for name in ("cvae", "lstm", "vanilla"):
        m = getattr(models, name)
        if m is not None:
            save_model(out / f"{name}.json", m, cfg["seed"], meta)
            print(f"{name} -> {out / f'{name}.json'}")
    return EXIT_OK


def cmd_sample(args):
    cfg, out = _setup(args)
    family = make_family(cfg)
    models = _load_models(cfg, out, family)
    mode = args.mode or ("amorgs" if models.lstm is not None or family.dimension == family.head_dim else "uniform")
    rng = np.random.default_rng(cfg["seed"])
    try:
        X = draw_guesses(family, args.alpha, mode, models, args.n, rng)
    except ValueError as exc:
        raise ModelError(str(exc)) from exc
    path = out / f"samples_{mode}.csv"
    with open(path, "w", newline="") as fh:
        fh.write(f"# {json.dumps(_provenance(cfg, 'sample') | {'alpha': args.alpha, 'mode': mode})}\n")
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(family.dimension)])
        for row in X:
            w.writerow([repr(float(v)) for v in row])
    print(f"{args.n} samples -> {path}")
    return EXIT_OK


def _modes(args, cfg):
    modes = args.modes.split(",") if args.modes else cfg["benchmark"]["modes"]
    bad = [m for m in modes if m not in MODES]
    if bad:
        raise ConfigError(f"unknown modes {bad}; choose from {list(MODES)}")
    return modes


def cmd_warmstart(args):
    cfg, out = _setup(args)
    family = make_family(cfg)
    models = _load_models(cfg, out, family)
    alpha = args.alpha if args.alpha is not None else cfg["benchmark"]["alphas"][0]
    n = args.n or cfg["benchmark"]["n"]
    scfg = solver_config(cfg, cfg["benchmark"]["max_major_iterations"], args.time_cap_s)
    rng = np.random.default_rng(cfg["seed"])
    for mode in _modes(args, cfg):
        try:
            ds = warmstart(family, alpha, mode, models, n, scfg, rng, args.workers)
        except ValueError as exc:
            raise ModelError(str(exc)) from exc
        path = out / f"warmstart_{mode}_{alpha:.6g}.jsonl"
        ds.to_jsonl(path)
        print(f"{mode}: {sum(r.converged for r in ds.records)}/{n} converged -> {path}")
    return EXIT_OK


def cmd_bench(args):
    cfg, out = _setup(args)
    family = make_family(cfg)
    models = _load_models(cfg, out, family)
    modes = _modes(args, cfg)
    n = args.n or cfg["benchmark"]["n"]
    cap = args.time_cap_s if args.time_cap_s is not None else cfg["benchmark"]["time_cap_s"]
    scfg = solver_config(cfg, cfg["benchmark"]["max_major_iterations"])
    alphas = [args.alpha] if args.alpha is not None else cfg["benchmark"]["alphas"]
    for alpha in alphas:
        try:
            rep = benchmark(family, alpha, modes, models, n, scfg, cap, cfg["seed"], args.workers)
        except ValueError as exc:
            raise ModelError(str(exc)) from exc
        tag = f"{alpha:.6g}"
        head = json.dumps(_provenance(cfg, "bench") | {"alpha": alpha, "time_cap_s": str(cap)})
        rep.to_csv(out / f"bench_{tag}.csv", head)
        rep.write_raw(out / f"bench_{tag}.jsonl")
        for s in rep.modes:
            print(f"alpha={tag} {s.mode:32s} converged {s.converged_pct:5.1f}%  capped {s.capped_pct:5.1f}%  "
                  f"median time {s.time_p50:.3g} s")
    return EXIT_OK


def cmd_analyze(args):
    cfg, out = _setup(args)
    if cfg["family"] != "cr3bp":
        raise DataError("analyze works on shooting solutions (family cr3bp)")
    src = Path(args.dataset or out / "dataset.jsonl")
    ds = _load_dataset(src).converged
    if len(ds) == 0:
        raise DataError(f"dataset {src} has no converged records")
    an = cfg["analysis"]
    _prepare_out(out)
    X = ds.x_star_matrix()
    obj = ds.objectives()
    tof = structure.time_of_flight(X)
    head = "# " + json.dumps(_provenance(cfg, "analyze", {"dataset": _file_digest(src)})) + "\n"

    def write(name, header, rows):
        with open(out / name, "w", newline="") as fh:
            fh.write(head)
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)

    modes = structure.detect_modes(tof, an["bin_width"], an["min_count"])
    write("modes.csv", ["mode", "T", "members"],
          [(i, T, int(np.sum(np.abs(tof - T) <= an["delta"]))) for i, T in enumerate(modes)])
    near = structure.nearest_hyperplane(tof, modes) if modes else np.full(len(tof), -1)
    coords = structure.to_hyperplane_coords(X[:, :3])
    labels = np.full(len(X), -1)
    for k in range(len(modes)):
        sel = near == k
        if sel.sum() >= 1:
            lab = structure.funnel_cluster(coords[sel, :2], an["eps"], an["min_pts"]).labels
            labels[sel] = lab
    write("coords.csv", ["index", "alpha", "tof", "objective", "hyperplane", "tau1p", "tau2p", "taunp", "funnel"],
          [(i, ds[i].alpha, tof[i], obj[i], int(near[i]), *coords[i], int(labels[i])) for i in range(len(X))])
    for w_ in an["windows"]:
        c, m, n = structure.moving_average(tof, obj, w_)
        write(f"ma_{w_:g}.csv", ["tof_center", "mean_objective", "count"], zip(c, m, n))
    rows = []
    n_seg = (X.shape[1] - 4) // 3
    ctrl = X[:, 4:].reshape(-1, n_seg, 3)
    for k in range(len(modes)):
        sel = near == k
        if sel.sum() < 2:
            continue
        stats = structure.control_statistics(ctrl[sel])
        mean, half, cnt = stats[0]
        for s in range(n_seg):
            rows.append((k, s + 1, cnt, *mean[s], *half[s]))
    write("control_stats.csv", ["hyperplane", "segment", "n", "ux", "uy", "uz", "ci_x", "ci_y", "ci_z"], rows)
    print(f"{len(modes)} TOF modes over {len(ds)} converged records -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="amorgs", description="Amortized global search: curate local optima, learn where they lie, warm-start new solves.",
                                formatter_class=argparse.RawDescriptionHelpFormatter,
                                epilog="exit codes: 0 ok, 2 config error, 3 data error, 4 model error")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="TOML or JSON run file (family defaults otherwise)")
        sp.add_argument("--family", choices=["dejong", "cr3bp"], help="family when no config is given")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--out", help="output directory (default: config 'out')")
        sp.add_argument("--workers", type=int, help="worker processes (default: AMORGS_WORKERS or 1)")
        return sp

    sp = common(sub.add_parser("curate", help="uniformly seeded multi-start; resumable JSONL"))
    sp.add_argument("--no-timing", action="store_true", help="store wall times as 0 for byte-identical reruns")
    sp.set_defaults(func=cmd_curate)

    sp = common(sub.add_parser("filter", help="keep converged records with objective <= beta"))
    sp.add_argument("--dataset")
    sp.add_argument("--beta", type=float, help=f"quality threshold; cr3bp default -415 kg {PUB}, dejong 1.5")
    sp.set_defaults(func=cmd_filter)

    sp = common(sub.add_parser("train", help="fit CVAE (+ LSTM for cr3bp) on beta-filtered data"))
    sp.add_argument("--dataset")
    sp.add_argument("--beta", type=float, help=f"quality threshold; cr3bp default -415 kg {PUB}, dejong 1.5")
    sp.add_argument("--paper-architecture", action="store_true",
                    help=f"full published layer widths instead of the 4x narrower desk widths {PUB}")
    sp.set_defaults(func=cmd_train)

    sp = common(sub.add_parser("sample", help="draw initial guesses from the trained models"))
    sp.add_argument("--alpha", type=float, required=True)
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--mode", choices=MODES)
    sp.set_defaults(func=cmd_sample)

    for name, func, helptext in (("warmstart", cmd_warmstart, "solve from model-drawn guesses"),
                                 ("bench", cmd_bench, "ablation benchmark report (CSV + raw JSONL)")):
        sp = common(sub.add_parser(name, help=helptext))
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--n", type=int, help=f"guesses per mode (default 200 {PUB})")
        sp.add_argument("--modes", help=f"comma list from {','.join(MODES)}; cr3bp default all five {PUB}")
        sp.add_argument("--time-cap-s", type=float,
                        help=f"solver wall-time cap in seconds, e.g. 64 or 24 {PUB}")
        sp.set_defaults(func=func)

    sp = common(sub.add_parser("analyze", help="TOF modes, hyperplane coordinates, moving averages, funnels"))
    sp.add_argument("--dataset")
    sp.set_defaults(func=cmd_analyze)
    sp.epilog = f"moving-average windows 1.0, 0.5, 0.25, 0.05, 0.01 TU and delta 0.25 TU {PUB}"
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ModelError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
