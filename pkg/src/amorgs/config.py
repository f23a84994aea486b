"""Run configuration: per-family defaults, TOML/JSON loading and validation.

A run file has top-level ``family``, ``seed`` and ``out`` keys plus the
sections ``constants``, ``boundary`` (CR3BP only), ``curation``, ``solver``,
``training``, ``benchmark`` and ``analysis``. Missing keys take the family
defaults; unknown keys are rejected so that typos fail before any work.
"""

from __future__ import annotations

import copy
import json
import math
from pathlib import Path

import numpy as np
import tomli

from .cr3bp import SystemConstants
from .pipeline import MODES, CurationConfig, Cr3bpAdapter, DeJongAdapter
from .shooting import BoundaryConditions
from .solver import SolverConfig
from .generative import TrainConfig


class ConfigError(ValueError):
    pass


# Departure: end of a 30-day, 1 N tangential spiral out of a 6578 x 42164 km
# GTO (mass reset to 1000 kg). Arrival: end state of a reference thrust arc.
# See demos/boundary_conditions.py for the derivation.
CR3BP_XI0 = [-1.80445048e-01, 6.70421615e-01, 0.0, -5.09352324e-01, 5.22064683e-01, 0.0]
CR3BP_XIF = [-1.57975435e00, 1.08271476e00, 0.0, 2.89644078e-01, 8.26014926e-01, 0.0]

_COMMON = {
    "seed": 0,
    "out": "run",
    "solver": {
        "optimality_tol": 1e-6,
        "feasibility_tol": 1e-6,
        "max_major_iterations": 1000,
        "max_wall_time_s": math.inf,
        "max_inner_iterations": 200,
        "max_step": 1.0,
    },
    "training": {
        "beta": 1.5,
        "eta_L": 1e-4,
        "epochs": 250,
        "batch_size": 256,
        "lr": 1e-3,
        "lstm_epochs": 600,
        "vanilla": False,
        "max_time_s": math.inf,
    },
    "benchmark": {
        "alphas": [math.pi / 3],
        "n": 200,
        "modes": ["uniform", "amorgs"],
        "time_cap_s": math.inf,
        "max_major_iterations": 1000,
    },
    "analysis": {
        "windows": [1.0, 0.5, 0.25, 0.05, 0.01],
        "delta": 0.25,
        "bin_width": 0.25,
        "min_count": None,
        "eps": 0.5,
        "min_pts": 5,
    },
}

DEFAULTS = {
    "dejong": _COMMON
    | {
        "family": "dejong",
        "constants": {},
        "curation": {
            "alphas": np.linspace(0.0, np.pi / 2, 11).tolist(),
            "samples_per_alpha": [910] * 10 + [900],
            "workers": None,
        },
    },
    "cr3bp": _COMMON
    | {
        "family": "cr3bp",
        "constants": {k: getattr(SystemConstants(), k) for k in ("mu", "isp_s", "g0", "t_max_N", "du_km", "tu_s", "m0_kg")},
        "boundary": {"xi0": CR3BP_XI0, "xif_state": CR3BP_XIF},
        "curation": {"alphas": [0.9, 1.0], "samples_per_alpha": 100, "workers": None},
        "solver": {
            "optimality_tol": 1e-3,
            "feasibility_tol": 1e-3,
            "max_major_iterations": 1000,
            "max_wall_time_s": 60.0,
            "max_inner_iterations": 200,
            "max_step": math.inf,
        },
        "training": _COMMON["training"] | {"beta": -415.0, "epochs": 1200, "lstm_epochs": 600},
        "benchmark": {
            "alphas": [0.15, 0.85],
            "n": 200,
            "modes": list(MODES),
            "time_cap_s": math.inf,
            "max_major_iterations": 1000,
        },
    },
}

_SECTIONS = ("constants", "boundary", "curation", "solver", "training", "benchmark", "analysis")


def default_config(family: str) -> dict:
    if family not in DEFAULTS:
        raise ConfigError(f"unknown family {family!r}; choose dejong or cr3bp")
    return copy.deepcopy(DEFAULTS[family])


def _merge(base: dict, over: dict, where=""):
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown key {where}{k}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{where}{k} must be a table")
            _merge(base[k], v, f"{where}{k}.")
        else:
            base[k] = v


def load_config(path=None, family: str | None = None) -> dict:
    """Read a TOML (or ``.json``) run file on top of the family defaults."""
    raw = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from exc
        try:
            raw = json.loads(text) if p.suffix == ".json" else tomli.loads(text)
        except (json.JSONDecodeError, tomli.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot parse {p}: {exc}") from exc
    fam = raw.get("family", family or "dejong")
    if family is not None and fam != family:
        raise ConfigError(f"config family {fam!r} conflicts with requested {family!r}")
    cfg = default_config(fam)
    _merge(cfg, raw)
    validate(cfg)
    return cfg


def _positive(d, key, where, allow_inf=False):
    v = d[key]
    if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
        raise ConfigError(f"{where}.{key} must be a positive number")
    if not allow_inf and not math.isfinite(v):
        raise ConfigError(f"{where}.{key} must be finite")


def validate(cfg: dict) -> None:
    fam = cfg["family"]
    adapter = None
    try:
        adapter = make_family(cfg)
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"invalid {fam} problem definition: {exc}") from exc
    lo, hi = adapter.alpha_range
    cur = cfg["curation"]
    alphas = cur["alphas"]
    if not isinstance(alphas, list) or not alphas:
        raise ConfigError("curation.alphas must be a non-empty list")
    for a in alphas + list(cfg["benchmark"]["alphas"]):
        if not isinstance(a, (int, float)) or not lo <= a <= hi:
            raise ConfigError(f"alpha {a!r} outside [{lo}, {hi}]")
    spa = cur["samples_per_alpha"]
    counts = spa if isinstance(spa, list) else [spa]
    if any(not isinstance(c, int) or c < 1 for c in counts):
        raise ConfigError("curation.samples_per_alpha must be integers >= 1")
    if isinstance(spa, list) and len(spa) != len(alphas):
        raise ConfigError("curation.samples_per_alpha list must match curation.alphas")
    if cur["workers"] is not None and (not isinstance(cur["workers"], int) or cur["workers"] < 1):
        raise ConfigError("curation.workers must be a positive integer")
    s = cfg["solver"]
    for k in ("optimality_tol", "feasibility_tol", "max_major_iterations", "max_inner_iterations"):
        _positive(s, k, "solver")
    _positive(s, "max_wall_time_s", "solver", allow_inf=True)
    _positive(s, "max_step", "solver", allow_inf=True)
    t = cfg["training"]
    for k in ("eta_L", "epochs", "batch_size", "lr", "lstm_epochs"):
        _positive(t, k, "training")
    _positive(t, "max_time_s", "training", allow_inf=True)
    if not isinstance(t["beta"], (int, float)):
        raise ConfigError("training.beta must be a number")
    b = cfg["benchmark"]
    if not isinstance(b["n"], int) or b["n"] < 1:
        raise ConfigError("benchmark.n must be an integer >= 1")
    bad = [m for m in b["modes"] if m not in MODES]
    if bad or not b["modes"]:
        raise ConfigError(f"benchmark.modes must be drawn from {list(MODES)}")
    _positive(b, "time_cap_s", "benchmark", allow_inf=True)
    _positive(b, "max_major_iterations", "benchmark")
    an = cfg["analysis"]
    if not an["windows"] or any(not w > 0 for w in an["windows"]):
        raise ConfigError("analysis.windows must be positive")
    for k in ("delta", "bin_width", "eps", "min_pts"):
        _positive(an, k, "analysis")


def make_family(cfg: dict):
    if cfg["family"] == "dejong":
        return DeJongAdapter()
    c = SystemConstants(**cfg["constants"])
    bnd = cfg["boundary"]
    bc = BoundaryConditions(np.r_[np.asarray(bnd["xi0"], dtype=float), c.m0_kg], bnd["xif_state"])
    return Cr3bpAdapter(bc, c)


def solver_config(cfg: dict, max_major=None, time_cap=None) -> SolverConfig:
    s = dict(cfg["solver"])
    if max_major is not None:
        s["max_major_iterations"] = int(max_major)
    if time_cap is not None:
        s["max_wall_time_s"] = float(time_cap)
    return SolverConfig(**s)


def curation_config(cfg: dict, workers=None, record_wall_time=True) -> CurationConfig:
    cur = cfg["curation"]
    return CurationConfig(cur["alphas"], cur["samples_per_alpha"], solver_config(cfg), int(cfg["seed"]),
                          workers if workers is not None else cur["workers"], record_wall_time)


def train_configs(cfg: dict) -> dict:
    t = cfg["training"]
    base = dict(eta_L=t["eta_L"], batch_size=t["batch_size"], lr=t["lr"], seed=int(cfg["seed"]),
                max_time_s=t["max_time_s"])
    return {
        "cvae": TrainConfig(epochs=t["epochs"], **base),
        "vanilla": TrainConfig(epochs=t["epochs"], **base),
        "lstm": TrainConfig(epochs=t["lstm_epochs"], **base),
    }


def to_toml(cfg: dict) -> str:
    """Canonical TOML text for a config (infinite values written as ``inf``)."""

    def fmt(v):
        if v is None:
            raise ValueError
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, float):
            return "inf" if v == math.inf else repr(v)
        if isinstance(v, int):
            return str(v)
        if isinstance(v, str):
            return json.dumps(v)
        return "[" + ", ".join(fmt(x) for x in v) + "]"

    lines = []
    for k, v in cfg.items():
        if not isinstance(v, dict):
            lines.append(f"{k} = {fmt(v)}")
    for sec in _SECTIONS:
        if sec not in cfg:
            continue
        lines.append(f"\n[{sec}]")
        for k, v in cfg[sec].items():
            if v is None:
                lines.append(f"# {k} = (automatic)")
            else:
                lines.append(f"{k} = {fmt(v)}")
    return "\n".join(lines) + "\n"


def to_jsonable(cfg: dict) -> dict:
    def conv(v):
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        if isinstance(v, list):
            return [conv(x) for x in v]
        if isinstance(v, float) and not math.isfinite(v):
            return str(v)
        return v

    return conv(cfg)
