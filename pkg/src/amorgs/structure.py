"""Solution-structure analysis for shooting solutions.

Time-of-flight (TOF) modes define hyperplanes ``|tau_s + tau_i + tau_f - T| <= delta``
in the time-variable space; points are rotated into in-plane coordinates,
objective moving averages are taken along the TOF axis, and funnels are
labeled by density-based clustering in the in-plane coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .shooting import controls_to_cartesian

Z95 = 1.959963984540054

# fixed orthonormal frame of the plane tau_1 + tau_2 + tau_3 = T
_E1 = np.array([1.0, -1.0, 0.0]) / np.sqrt(2.0)
_E2 = np.array([1.0, 1.0, -2.0]) / np.sqrt(6.0)
_NORMAL = np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0)


def _rows(x):
    x = np.asarray(x, dtype=float)
    return x.reshape(1, -1) if x.ndim == 1 else x


def time_of_flight(x):
    """tau_s + tau_i + tau_f of one vector or of each row."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return float(x[0] + x[1] + x[2])
    return x[:, 0] + x[:, 1] + x[:, 2]


def _tof_of(data):
    """TOFs of converged records, or of a plain array of decision vectors / TOFs."""
    if hasattr(data, "records"):
        rows = [r.x_star for r in data.records if r.converged]
        if not rows:
            return np.zeros(0)
        return time_of_flight(np.stack(rows))
    arr = np.asarray(data, dtype=float)
    return arr if arr.ndim == 1 else time_of_flight(arr)


def detect_modes(data, bin_width=0.25, min_count=None) -> list[float]:
    """TOF values of histogram modes.

    A mode is a run of equal-count bins higher than both neighbors, with at
    least ``min_count`` entries per bin (default ``max(5, 0.2% of records)``).
    Its T is the mean TOF over the run and its two neighboring bins.
    """
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    tof = _tof_of(data)
    if tof.size == 0:
        raise ValueError("no converged records to analyze")
    if min_count is None:
        min_count = max(5, int(np.ceil(0.002 * tof.size)))
    if tof.size < min_count:
        min_count = min(min_count, tof.size)
    start = np.floor(tof.min() / bin_width) * bin_width
    idx = np.floor((tof - start) / bin_width).astype(int)
    nb = idx.max() + 1
    counts = np.bincount(idx, minlength=nb)
    padded = np.r_[-1, counts, -1]
    modes = []
    i = 1
    while i <= nb:
        j = i
        while j + 1 <= nb and padded[j + 1] == padded[i]:
            j += 1
        c = padded[i]
        if c >= min_count and c > padded[i - 1] and c > padded[j + 1]:
            lo, hi = i - 2, j  # zero-based bins i-1..j-1 plus neighbors
            sel = (idx >= lo) & (idx <= hi)
            modes.append(float(tof[sel].mean()))
        i = j + 1
    return modes


@dataclass
class HyperplaneFrame:
    T: float
    delta: float = 0.25
    basis: np.ndarray = field(default_factory=lambda: np.stack([_E1, _E2, _NORMAL]))

    def __post_init__(self):
        self.basis = np.asarray(self.basis, dtype=float)
        if self.basis.shape != (3, 3):
            raise ValueError("basis must be 3x3")

    @property
    def normal(self):
        return self.basis[2]


def hyperplane_membership(tau, frame: HyperplaneFrame) -> bool:
    tau = np.asarray(tau, dtype=float)
    return bool(abs(tau[0] + tau[1] + tau[2] - frame.T) <= frame.delta)


def to_hyperplane_coords(tau, frame: HyperplaneFrame | None = None) -> np.ndarray:
    """Rotate tau (or rows of tau) into (in-plane 1, in-plane 2, normal)."""
    R = (frame or HyperplaneFrame(0.0)).basis
    tau = np.asarray(tau, dtype=float)
    return tau @ R.T if tau.ndim == 2 else R @ tau


def nearest_hyperplane(tof, modes) -> np.ndarray:
    """Index of the closest mode (by |TOF - T|) for each TOF."""
    modes = np.asarray(modes, dtype=float)
    if modes.size == 0:
        raise ValueError("no modes given")
    tof = np.atleast_1d(np.asarray(tof, dtype=float))
    return np.argmin(np.abs(tof[:, None] - modes[None, :]), axis=1)


def moving_average(tof, objective, window):
    """Mean objective over ``|TOF - c| <= window/2`` on a grid of step window/5.

    Returns ``(centers, means, counts)`` with empty windows omitted. Each mean
    is taken over the selected records in their original order.
    """
    if not window > 0:
        raise ValueError("window must be positive")
    tof = np.asarray(tof, dtype=float).ravel()
    obj = np.asarray(objective, dtype=float).ravel()
    if tof.size != obj.size:
        raise ValueError("tof and objective lengths differ")
    if tof.size == 0:
        return np.zeros(0), np.zeros(0), np.zeros(0, dtype=int)
    order = np.argsort(tof, kind="stable")
    st = tof[order]
    half = window / 2.0
    step = window / 5.0
    n_centers = int(np.floor((st[-1] - st[0]) / step)) + 1
    centers, means, counts = [], [], []
    slack = 1e-9 * (1.0 + abs(st[-1]) + window)
    for k in range(n_centers):
        c = st[0] + k * step
        lo = np.searchsorted(st, c - half - slack, side="left")
        hi = np.searchsorted(st, c + half + slack, side="right")
        if hi <= lo:
            continue
        cand = np.sort(order[lo:hi])
        sel = cand[np.abs(tof[cand] - c) <= half]
        if sel.size == 0:
            continue
        centers.append(c)
        means.append(obj[sel].mean())
        counts.append(sel.size)
    return np.array(centers), np.array(means), np.array(counts, dtype=int)


def local_minima(values) -> list[int]:
    """Indices of strict local minima of a 1-d curve, plateaus counted once.

    Ends count as minima when the curve rises away from them; a flat curve has none.
    """
    v = np.asarray(values, dtype=float)
    out = []
    i = 0
    n = v.size
    while i < n:
        j = i
        while j + 1 < n and v[j + 1] == v[i]:
            j += 1
        left = v[i - 1] if i > 0 else np.inf
        right = v[j + 1] if j + 1 < n else np.inf
        if v[i] < left and v[i] < right and not (i == 0 and j == n - 1):
            out.append((i + j) // 2)
        i = j + 1
    return out


@dataclass
class FunnelLabeling:
    labels: np.ndarray
    eps: float
    min_pts: int

    @property
    def n_clusters(self) -> int:
        lab = self.labels[self.labels >= 0]
        return int(lab.max()) + 1 if lab.size else 0

    def counts(self) -> dict:
        return {int(k): int((self.labels == k).sum()) for k in range(-1, self.n_clusters) if (self.labels == k).any()}


def funnel_cluster(points, eps, min_pts=5) -> FunnelLabeling:
    """Density-based clustering (DBSCAN rules) with order-independent labels.

    Core points (at least ``min_pts`` neighbors within ``eps``, counting
    themselves) are joined when within ``eps``; border points go to the
    cluster of their nearest core point; the rest are noise (-1). Clusters are
    numbered by ascending centroid (first coordinate, then second).
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    P = np.asarray(points, dtype=float)
    if P.ndim != 2:
        raise ValueError("points must be an (n, d) array")
    n = len(P)
    labels = np.full(n, -1, dtype=int)
    if n == 0:
        return FunnelLabeling(labels, eps, min_pts)
    tree = cKDTree(P)
    nbrs = tree.query_ball_point(P, eps)
    core = np.array([len(nb) >= min_pts for nb in nbrs])
    # connected components of the core graph
    comp = np.full(n, -1, dtype=int)
    ncomp = 0
    for i in range(n):
        if not core[i] or comp[i] >= 0:
            continue
        comp[i] = ncomp
        stack = [i]
        while stack:
            p = stack.pop()
            for q in nbrs[p]:
                if core[q] and comp[q] < 0:
                    comp[q] = ncomp
                    stack.append(q)
        ncomp += 1
    labels[core] = comp[core]
    for i in np.flatnonzero(~core):
        cands = [q for q in nbrs[i] if core[q]]
        if not cands:
            continue
        # nearest core point; ties broken by coordinates, not input order
        best = min(cands, key=lambda q: (float(np.sum((P[q] - P[i]) ** 2)), tuple(P[q])))
        labels[i] = comp[best]
    if ncomp:
        cents = np.array([P[labels == k].mean(axis=0) for k in range(ncomp)])
        order = np.lexsort(cents.T[::-1])
        remap = np.empty(ncomp, dtype=int)
        remap[order] = np.arange(ncomp)
        labels = np.where(labels >= 0, remap[np.maximum(labels, 0)], -1)
    return FunnelLabeling(labels, eps, min_pts)


def control_statistics(controls, groups=None) -> dict:
    """Per-segment, per-axis mean and 95% half-width of Cartesian thrust.

    Parameters
    ----------
    controls : (n, N, 3) spherical controls
    groups : (n,) labels, optional
        One statistics block per label; noise (-1) is skipped.

    Returns
    -------
    dict mapping group label to ``(mean, half_width, count)`` with (N, 3) arrays.
    """
    C = np.asarray(controls, dtype=float)
    if C.ndim != 3 or C.shape[2] != 3:
        raise ValueError("controls must have shape (n, N, 3)")
    n, N, _ = C.shape
    U = controls_to_cartesian(C.reshape(-1, 3)).reshape(n, N, 3)
    labels = np.zeros(n, dtype=int) if groups is None else np.asarray(groups)
    out = {}
    for g in np.unique(labels):
        if groups is not None and g == -1:
            continue
        sel = U[labels == g]
        if len(sel) < 2:
            raise ValueError(f"group {g} has fewer than 2 records")
        mean = sel.mean(axis=0)
        sd = sel.std(axis=0, ddof=1)
        out[g.item() if hasattr(g, "item") else g] = (mean, Z95 * sd / np.sqrt(len(sel)), len(sel))
    return out
