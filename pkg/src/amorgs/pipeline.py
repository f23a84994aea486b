"""Curation, warm-starting and the ablation benchmark.

The workflow has three steps: solve uniformly seeded instances over a list of
alpha values (:func:`curate`), keep the high-quality solutions and fit the
generative models (:func:`beta_filter_and_train`), then seed the local solver
from model samples at new alpha values (:func:`warmstart`, :func:`benchmark`).

Families are wrapped in small adapter objects that know their box, how to
draw uniform guesses and how to run the local solver from one guess.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dejong
from .cr3bp import SystemConstants
from .generative import (
    TrainConfig,
    cr3bp_architecture,
    lstm_architecture,
    train_cvae,
    train_lstm,
    vanilla_architecture,
    DEJONG_ARCH,
)
from .problem import SolutionDataset, SolveRecord, config_digest, filter_by_quality
from .shooting import BoundaryConditions, ShootingTranscription
from .solver import SolverConfig, minimize_constrained, minimize_unconstrained

MODES = (
    "uniform",
    "cvae-time-mass+uniform-control",
    "uniform-time-mass+lstm-control",
    "vanilla-cvae",
    "amorgs",
)


# ---------------------------------------------------------------------------
# family adapters


class DeJongAdapter:
    """Rotated De Jong family; the whole vector is the CVAE block."""

    name = "dejong"
    head_dim = 2

    def __init__(self, template=None):
        self.template = np.asarray(dejong.DEFAULT_TEMPLATE if template is None else template, dtype=float)
        fam = dejong.DeJongFamily(self.template, 0.0)
        self.lower, self.upper = fam.lower, fam.upper
        self.alpha_range = (0.0, np.pi / 2)
        self._cache = {}

    def __getstate__(self):
        return {"template": self.template}

    def __setstate__(self, state):
        self.__init__(state["template"])

    @property
    def dimension(self):
        return self.lower.size

    def family(self, alpha):
        return dejong.DeJongFamily(self.template, float(alpha))

    def uniform(self, rng, n=None):
        size = None if n is None else (n, self.dimension)
        return rng.uniform(self.lower, self.upper, size)

    def solve(self, x0, alpha, cfg: SolverConfig) -> SolveRecord:
        key = float(alpha)
        if key not in self._cache:
            self._cache = {key: dejong.make_callables(self.family(alpha))}
        f, g = self._cache[key]
        return minimize_unconstrained(f, g, x0, np.stack([self.lower, self.upper], 1), cfg, alpha=alpha)

    def template_minima(self, alpha):
        """Rotated template columns; the stationary points sit within ~0.25 of them."""
        return np.array(dejong.rotated_minima(self.family(alpha)))

    def manifest(self):
        return {"family": self.name, "template": self.template.tolist()}


class Cr3bpAdapter:
    """Low-thrust CR3BP transfer with the forward-backward shooting transcription.

    Decision vectors are stored in physical units; the solver works in the
    unit box. The recorded objective is ``-m_f`` in kg.
    """

    name = "cr3bp"
    head_dim = 4

    def __init__(self, bc: BoundaryConditions, constants: SystemConstants | None = None,
                 n_segments: int = 20, rtol: float = 1e-12, atol: float = 1e-12):
        self.bc = bc
        self.constants = constants or SystemConstants()
        self.n_segments = n_segments
        self.rtol, self.atol = rtol, atol
        self.tr = ShootingTranscription(bc, self.constants, n_segments, rtol, atol)
        b = self.tr.bounds()
        self.lower, self.upper = b[:, 0], b[:, 1]
        self.alpha_range = (1e-8, 1.0)

    def __getstate__(self):
        return {"bc": (self.bc.xi0, self.bc.xif_state), "constants": self.constants,
                "n": self.n_segments, "tol": (self.rtol, self.atol)}

    def __setstate__(self, s):
        self.__init__(BoundaryConditions(*s["bc"]), s["constants"], s["n"], *s["tol"])

    @property
    def dimension(self):
        return self.lower.size

    def uniform(self, rng, n=None):
        size = None if n is None else (n, self.dimension)
        return rng.uniform(self.lower, self.upper, size)

    def solve(self, x0, alpha, cfg: SolverConfig) -> SolveRecord:
        nlp = self.tr.problem(alpha)
        x0 = np.clip(np.asarray(x0, dtype=float), self.lower, self.upper)
        r = minimize_constrained(nlp.objective, nlp.gradient, nlp.constraints, nlp.to_z(x0),
                                 nlp.bounds, cfg, jacobian=nlp.jacobian, alpha=alpha)
        xs = nlp.to_x(r.x_star)
        obj = ShootingTranscription.objective(xs) if math.isfinite(r.objective) else r.objective
        return SolveRecord(alpha=alpha, x0=x0, x_star=xs, lambda_star=r.lambda_star, objective=obj,
                           converged=r.converged, iterations=r.iterations, wall_time_s=r.wall_time_s,
                           constraint_norm=r.constraint_norm, reason=r.reason)

    def manifest(self):
        return {"family": self.name, "xi0": self.bc.xi0.tolist(), "xif_state": self.bc.xif_state.tolist(),
                "mu": self.constants.mu, "n_segments": self.n_segments}


def uniform_guess(family, rng) -> np.ndarray:
    """One independent uniform draw per coordinate inside the family box."""
    return family.uniform(rng)


# ---------------------------------------------------------------------------
# curation


@dataclass
class CurationConfig:
    alpha_list: list
    samples_per_alpha: int | list = 100
    solver: SolverConfig = field(default_factory=SolverConfig)
    seed: int = 0
    worker_count: int | None = None
    record_wall_time: bool = True

    def __post_init__(self):
        self.alpha_list = [float(a) for a in self.alpha_list]
        if not self.alpha_list:
            raise ValueError("alpha_list is empty")
        counts = self.counts()
        if any(c < 1 for c in counts):
            raise ValueError("samples_per_alpha must be >= 1")

    def counts(self) -> list[int]:
        s = self.samples_per_alpha
        if isinstance(s, (list, tuple)):
            if len(s) != len(self.alpha_list):
                raise ValueError("per-alpha sample counts must match alpha_list")
            return [int(v) for v in s]
        return [int(s)] * len(self.alpha_list)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("AMORGS_WORKERS", "1")))
    except ValueError:
        return 1


def task_rng(seed, alpha_index, sample_index) -> np.random.Generator:
    """Generator seeded by a hash of (seed, alpha index, sample index)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(alpha_index), int(sample_index)]))


_WORKER: dict = {}


def _init_worker(family, cfg, record_wall_time):
    _WORKER.update(family=family, cfg=cfg, timing=record_wall_time)


def _solve_task(task):
    alpha, x0 = task
    rec = _WORKER["family"].solve(x0, alpha, _WORKER["cfg"])
    if not _WORKER["timing"]:
        rec.wall_time_s = 0.0
    return rec


def _run_tasks(family, cfg, tasks, workers, record_wall_time=True):
    """Yield records in task order; solves may run in a process pool."""
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(tasks) <= 1:
        _init_worker(family, cfg, record_wall_time)
        for t in tasks:
            yield _solve_task(t)
        return
    with ProcessPoolExecutor(workers, initializer=_init_worker,
                             initargs=(family, cfg, record_wall_time)) as pool:
        yield from pool.map(_solve_task, tasks, chunksize=max(1, len(tasks) // (8 * workers)))


def _count_lines(path: Path) -> int:
    """Count complete lines, dropping a torn trailing line if present."""
    if not path.exists():
        return 0
    data = path.read_bytes()
    if data and not data.endswith(b"\n"):
        cut = data.rfind(b"\n") + 1
        with open(path, "r+b") as fh:
            fh.truncate(cut)
        data = data[:cut]
    return data.count(b"\n")


def curate(family, config: CurationConfig, out_path=None, progress=None) -> SolutionDataset:
    """Uniformly seeded multi-start over every alpha in the config.

    Every outcome is recorded. With ``out_path`` the records are appended to a
    JSONL file by this process only, and a rerun resumes after the last
    complete line.
    """
    for a in config.alpha_list:
        if not family.alpha_range[0] <= a <= family.alpha_range[1]:
            raise ValueError(f"alpha {a} outside the family range {family.alpha_range}")
    tasks = []
    for ai, (a, n) in enumerate(zip(config.alpha_list, config.counts())):
        for si in range(n):
            tasks.append((a, family.uniform(task_rng(config.seed, ai, si))))
    records: list[SolveRecord] = []
    fh = None
    if out_path is not None:
        out_path = Path(out_path)
        done = _count_lines(out_path)
        if done > len(tasks):
            raise ValueError(f"{out_path} holds more records than the configuration defines")
        if done:
            records = SolutionDataset.from_jsonl(out_path).records
        tasks = tasks[done:]
        fh = open(out_path, "a")
    try:
        for rec in _run_tasks(family, config.solver, tasks, config.worker_count, config.record_wall_time):
            records.append(rec)
            if fh is not None:
                fh.write(rec.to_json() + "\n")
                fh.flush()
            if progress is not None:
                progress(len(records))
    finally:
        if fh is not None:
            fh.close()
    return SolutionDataset(records, family.name, config_digest(curation_manifest(family, config)))


def curation_manifest(family, config: CurationConfig) -> dict:
    s = config.solver
    return {"family": family.manifest(), "alphas": config.alpha_list, "counts": config.counts(),
            "seed": config.seed, "solver": {k: getattr(s, k) for k in vars(s)}}


# ---------------------------------------------------------------------------
# training


@dataclass
class Models:
    cvae: object = None
    lstm: object = None
    vanilla: object = None


def beta_filter_and_train(dataset: SolutionDataset, beta: float, family, train_cfgs: dict | None = None,
                          paper_architecture: bool = False, arch: dict | None = None,
                          vanilla: bool = False):
    """Keep converged records with objective <= beta and fit the models.

    ``train_cfgs`` maps "cvae", "lstm" and "vanilla" to :class:`TrainConfig`.
    Returns ``(Models, provenance)`` where provenance carries the digest of
    the filtered training set.
    """
    kept = filter_by_quality(dataset, beta)
    if len(kept) == 0:
        raise ValueError(f"no converged records with objective <= beta={beta}")
    cfgs = {"cvae": TrainConfig(), "lstm": TrainConfig(), "vanilla": TrainConfig()}
    cfgs.update(train_cfgs or {})
    X = kept.x_star_matrix()
    A = kept.alphas()
    lo, hi = family.lower, family.upper
    h = family.head_dim
    prov = {"dataset_digest": dataset.digest(), "filtered_digest": kept.digest(), "beta": beta,
            "n_train": len(kept), "family": family.name}
    if arch is None:
        arch = DEJONG_ARCH if family.name == "dejong" else cr3bp_architecture(paper_architecture)
    models = Models()
    models.cvae = train_cvae(X[:, :h], A, lo[:h], hi[:h], arch, cfgs["cvae"],
                             alpha_range=family.alpha_range).model
    if X.shape[1] > h:
        n_seg = (X.shape[1] - h) // 3
        cond = np.column_stack([X[:, :h], A])
        clo = np.r_[lo[:h], family.alpha_range[0]]
        chi = np.r_[hi[:h], family.alpha_range[1]]
        models.lstm = train_lstm(cond, X[:, h:].reshape(-1, n_seg, 3), clo, chi,
                                 lstm_architecture(paper_architecture), cfgs["lstm"],
                                 t_max=float(hi[h + 2])).model
    if vanilla:
        varch = vanilla_architecture(paper_architecture)
        varch["embed_x"][0] = X.shape[1]
        varch["decode_x"][-1] = X.shape[1]
        varch["embed_z"][0] = varch["encode_mu"][-1]
        models.vanilla = train_cvae(X, A, lo, hi, varch, cfgs["vanilla"], alpha_range=family.alpha_range,
                                    prior="standard").model
    return models, prov


# ---------------------------------------------------------------------------
# warm start and benchmark


def draw_guesses(family, alpha, mode: str, models: Models | None, n: int, rng) -> np.ndarray:
    """Initial guesses for one ablation mode, clipped to the family box."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {MODES}")
    models = models or Models()
    h = family.head_dim
    has_controls = family.dimension > h

    def need(name):
        m = getattr(models, name)
        if m is None:
            raise ValueError(f"mode {mode!r} needs a trained {name} model")
        return m

    if mode == "uniform":
        X = family.uniform(rng, n)
    elif mode == "vanilla-cvae":
        X = need("vanilla").sample(alpha, n, rng)
    else:
        if mode == "uniform-time-mass+lstm-control":
            head = family.uniform(rng, n)[:, :h]
        else:
            head = need("cvae").sample(alpha, n, rng)
        if not has_controls:
            if mode == "uniform-time-mass+lstm-control":
                raise ValueError(f"mode {mode!r} needs a family with controls")
            X = head
        elif mode == "cvae-time-mass+uniform-control":
            X = np.column_stack([head, family.uniform(rng, n)[:, h:]])
        else:
            ctrl = need("lstm").forward(np.column_stack([head, np.full(n, float(alpha))]))
            X = np.column_stack([head, ctrl.reshape(n, -1)])
    return np.clip(np.asarray(X, dtype=float), family.lower, family.upper)


def warmstart(family, alpha, mode: str, models: Models | None, n: int, solver_cfg: SolverConfig,
              rng, workers=None) -> SolutionDataset:
    """Solve ``n`` guesses drawn per ``mode``; the dataset family tag carries the mode."""
    if n < 1:
        raise ValueError("n must be at least 1")
    X = draw_guesses(family, alpha, mode, models, n, rng)
    tasks = [(float(alpha), x) for x in X]
    recs = list(_run_tasks(family, solver_cfg, tasks, workers))
    return SolutionDataset(recs, f"{family.name}:{mode}")


@dataclass
class ModeStats:
    mode: str
    n: int
    converged_pct: float
    time_mean: float
    time_min: float
    time_p25: float
    time_p50: float
    capped_pct: float
    majors_mean: float
    hist_edges: list = field(default_factory=list)
    hist_counts: list = field(default_factory=list)


def mode_statistics(mode, ds: SolutionDataset, time_cap_s=math.inf, bins=10) -> ModeStats:
    """Converged percentage and solve-time statistics over converged runs.

    A run counts toward the capped percentage when it converged within
    ``time_cap_s``; the solver is deterministic given its start, so this
    equals rerunning with ``max_wall_time_s = time_cap_s``.
    """
    n = len(ds)
    conv = [r for r in ds.records if r.converged]
    t = np.array([r.wall_time_s for r in conv])
    if t.size:
        stats = (t.mean(), t.min(), np.percentile(t, 25), np.percentile(t, 50))
        counts, edges = np.histogram(t, bins=bins)
        majors = float(np.mean([r.iterations for r in conv]))
    else:
        stats = (math.nan,) * 4
        counts, edges = np.zeros(0, dtype=int), np.zeros(0)
        majors = math.nan
    capped = sum(1 for r in conv if r.wall_time_s <= time_cap_s)
    return ModeStats(mode, n, 100.0 * len(conv) / n, *map(float, stats), 100.0 * capped / n, majors,
                     edges.tolist(), counts.tolist())


@dataclass
class BenchmarkReport:
    alpha: float
    time_cap_s: float
    modes: list
    raw: dict = field(default_factory=dict)

    def rows(self):
        """One (mode, statistic, value) row per mode per statistic."""
        out = []
        for s in self.modes:
            for key in ("n", "converged_pct", "time_mean", "time_min", "time_p25", "time_p50",
                        "capped_pct", "majors_mean"):
                out.append((s.mode, key, getattr(s, key)))
        return out

    def to_csv(self, path, header: str = ""):
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.writer(fh)
            w.writerow(["mode", "statistic", "value"])
            for row in self.rows():
                w.writerow(row)

    def write_raw(self, path):
        with open(path, "w") as fh:
            for mode, ds in self.raw.items():
                for r in ds.records:
                    d = r.to_dict()
                    d["mode"] = mode
                    fh.write(json.dumps(d) + "\n")


def benchmark(family, alpha, modes, models: Models | None, n: int, solver_cfg: SolverConfig,
              time_cap_s=math.inf, seed=0, workers=None) -> BenchmarkReport:
    if n < 1:
        raise ValueError("n must be at least 1")
    stats, raw = [], {}
    for i, mode in enumerate(modes):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), i]))
        ds = warmstart(family, alpha, mode, models, n, solver_cfg, rng, workers)
        raw[mode] = ds
        stats.append(mode_statistics(mode, ds, time_cap_s))
    return BenchmarkReport(float(alpha), float(time_cap_s), stats, raw)

