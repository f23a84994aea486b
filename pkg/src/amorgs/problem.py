"""Parameterized NLP families, solver records and solution-set algebra.

A problem family fixes the decision-space box, the number of equality
constraints and the admissible range of the problem parameter ``alpha``.
Solver runs are captured as :class:`SolveRecord` objects and collected into a
:class:`SolutionDataset`, which persists as JSON Lines.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

RECORD_FIELDS = (
    "alpha",
    "x0",
    "x_star",
    "lambda_star",
    "objective",
    "converged",
    "iterations",
    "wall_time_s",
    "constraint_norm",
)


@dataclass(frozen=True)
class ProblemFamily:
    """Box-bounded decision space of one parameterized NLP family.

    ``transcription`` records the (fixed) control transcription the family was
    built with; it is informational only.
    """

    name: str
    lower: np.ndarray
    upper: np.ndarray
    equality_constraint_count: int = 0
    alpha_range: tuple[float, float] = (0.0, 1.0)
    transcription: str = "none"

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if lower.ndim != 1 or lower.shape != upper.shape or lower.size < 1:
            raise ValueError("bounds must be two 1-d arrays of equal, positive length")
        if np.any(lower > upper):
            raise ValueError("every lower bound must be <= its upper bound")
        if self.equality_constraint_count < 0:
            raise ValueError("equality_constraint_count must be non-negative")
        if self.alpha_range[0] > self.alpha_range[1]:
            raise ValueError("alpha_range must be an ordered interval")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dimension(self) -> int:
        return int(self.lower.size)

    @property
    def bounds(self) -> np.ndarray:
        return np.stack([self.lower, self.upper], axis=1)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    def project(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def contains(self, x, atol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol))


@dataclass
class SolveRecord:
    """One run of the local solver from ``x0``.

    ``reason`` is the solver's termination message. It is kept in memory for
    diagnostics but is not part of the persisted record.
    """

    alpha: float
    x0: np.ndarray
    x_star: np.ndarray
    lambda_star: np.ndarray
    objective: float
    converged: bool
    iterations: int
    wall_time_s: float
    constraint_norm: float = 0.0
    reason: str = field(default="", compare=False)

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        self.x_star = np.asarray(self.x_star, dtype=float)
        self.lambda_star = np.asarray(self.lambda_star, dtype=float)

    def to_dict(self) -> dict:
        return {
            "alpha": float(self.alpha),
            "x0": [float(v) for v in self.x0],
            "x_star": [float(v) for v in self.x_star],
            "lambda_star": [float(v) for v in self.lambda_star],
            "objective": float(self.objective),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "wall_time_s": float(self.wall_time_s),
            "constraint_norm": float(self.constraint_norm),
        }

    def to_json(self) -> str:
        # json writes floats with repr(), which round-trips exactly
        return json.dumps(self.to_dict(), allow_nan=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SolveRecord":
        missing = [k for k in RECORD_FIELDS if k not in d]
        if missing:
            raise ValueError(f"record is missing fields: {missing}")
        return cls(**{k: d[k] for k in RECORD_FIELDS})


@dataclass
class SolutionDataset:
    records: list[SolveRecord]
    family: str
    provenance: str = ""

    def __post_init__(self):
        self.records = list(self.records)
        dims = {r.x_star.size for r in self.records}
        if len(dims) > 1:
            raise ValueError(f"records have mixed dimensions {sorted(dims)}")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def subset(self, records: Iterable[SolveRecord]) -> "SolutionDataset":
        return SolutionDataset(list(records), self.family, self.provenance)

    @property
    def converged(self) -> "SolutionDataset":
        return self.subset(r for r in self.records if r.converged)

    def x_star_matrix(self) -> np.ndarray:
        if not self.records:
            return np.zeros((0, 0))
        return np.stack([r.x_star for r in self.records])

    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records], dtype=float)

    def alphas(self) -> np.ndarray:
        return np.array([r.alpha for r in self.records], dtype=float)

    def digest(self) -> str:
        h = hashlib.sha256()
        for r in self.records:
            h.update(r.to_json().encode())
            h.update(b"\n")
        return h.hexdigest()

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(r.to_json() + "\n")

    @classmethod
    def from_jsonl(cls, path, family: str = "", provenance: str = "") -> "SolutionDataset":
        records = []
        with open(Path(path)) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(SolveRecord.from_dict(json.loads(line)))
        return cls(records, family, provenance)


def filter_by_quality(dataset: SolutionDataset, beta: float) -> SolutionDataset:
    """Converged records whose objective is at most ``beta``."""
    return dataset.subset(r for r in dataset.records if r.converged and r.objective <= beta)


def partition_by_thresholds(dataset: SolutionDataset, thresholds: Sequence[float]) -> list[SolutionDataset]:
    """Split converged records into disjoint quality bands.

    A record with objective J lands in the first band j with ``J <= beta_j``;
    records above the last level are dropped.
    """
    levels = np.asarray(thresholds, dtype=float)
    if levels.ndim != 1 or levels.size == 0:
        raise ValueError("thresholds must be a non-empty 1-d sequence")
    if np.any(np.diff(levels) <= 0):
        raise ValueError("thresholds must be strictly increasing")
    bands: list[list[SolveRecord]] = [[] for _ in levels]
    for r in dataset.records:
        if not r.converged:
            continue
        j = int(np.searchsorted(levels, r.objective, side="left"))
        if j < levels.size:
            bands[j].append(r)
    return [dataset.subset(b) for b in bands]


def diversity_distance(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def eta_minus(dataset: SolutionDataset) -> float:
    """Smallest pairwise diversity distance (inf for fewer than two records)."""
    X = dataset.x_star_matrix()
    if len(X) < 2:
        return math.inf
    d = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))
    d[np.diag_indices_from(d)] = np.inf
    return float(d.min())


def diverse_subset(dataset: SolutionDataset, eta: float) -> SolutionDataset:
    """Greedy eta-separated subset, best objectives admitted first.

    The exact maximum-cardinality problem is an independent-set problem; the
    greedy pass is deterministic and always keeps the best record.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    order = sorted(range(len(dataset)), key=lambda i: (dataset[i].objective, i))
    kept: list[SolveRecord] = []
    kept_x: list[np.ndarray] = []
    for i in order:
        r = dataset[i]
        if all(np.linalg.norm(r.x_star - x) > eta for x in kept_x):
            kept.append(r)
            kept_x.append(r.x_star)
    return dataset.subset(kept)


def k_neighborhood_membership(record: SolveRecord, target, k: int, tol: float) -> bool:
    """Whether ``record.x0`` lies in the k-iteration neighborhood of ``target``."""
    if k < 0:
        raise ValueError("k must be non-negative")
    return bool(
        record.converged
        and record.iterations <= k
        and diversity_distance(record.x_star, target) <= tol
    )


def estimate_neighborhood_weight(dataset: SolutionDataset, target, k: float, tol: float) -> float:
    """Monte Carlo estimate of the k-neighborhood measure of ``target``.

    The dataset must have been seeded uniformly over the whole box, so the
    member fraction estimates the neighborhood volume relative to the box.
    ``k=math.inf`` gives the full basin of attraction.
    """
    if len(dataset) == 0:
        raise ValueError("cannot estimate a weight from an empty dataset")
    if k < 0:
        raise ValueError("k must be non-negative")
    hits = sum(
        1
        for r in dataset.records
        if r.converged and r.iterations <= k and diversity_distance(r.x_star, target) <= tol
    )
    return hits / len(dataset)


def config_digest(obj) -> str:
    """Stable short digest of a JSON-serializable configuration."""
    blob = json.dumps(obj, sort_keys=True, default=_json_default).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serializable: {type(o)!r}")
