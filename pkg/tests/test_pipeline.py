import math

import numpy as np
import pytest

from amorgs.config import CR3BP_XI0, CR3BP_XIF
from amorgs.cr3bp import SystemConstants
from amorgs.generative import CvaeModel, LstmModel, TrainConfig
from amorgs.pipeline import (
    MODES,
    Cr3bpAdapter,
    CurationConfig,
    DeJongAdapter,
    Models,
    beta_filter_and_train,
    benchmark,
    curate,
    draw_guesses,
    mode_statistics,
    task_rng,
    uniform_guess,
    warmstart,
)
from amorgs.problem import SolutionDataset
from amorgs.shooting import BoundaryConditions
from amorgs.solver import SolverConfig

from .oracles import DEJONG_MINIMA_ALPHA0

DJ = DeJongAdapter()
TRUE_MIN = np.array([m[:2] for m in DEJONG_MINIMA_ALPHA0])
TINY_DJ = {
    "embed_x": [2, 8], "embed_alpha": [1, 8], "encode": [16, 8], "encode_mu": [8, 2], "encode_sigma": [8, 2],
    "embed_z": [2, 8], "decode_x": [16, 8, 2], "gmm_w": [1, 8, 2], "gmm_mu": [1, 8, 4], "gmm_sigma": [1, 8, 4],
}
TINY_LSTM = {"encoder": [5, 6], "hidden": 4, "decoder": [8, 6, 4]}


def cr3bp_adapter():
    c = SystemConstants()
    return Cr3bpAdapter(BoundaryConditions(np.r_[CR3BP_XI0, c.m0_kg], CR3BP_XIF), c)


def cr3bp_models(fam):
    head = dict(TINY_DJ, embed_x=[4, 8], decode_x=[16, 8, 4])
    cv = CvaeModel(head, fam.lower[:4], fam.upper[:4], fam.alpha_range, rng=np.random.default_rng(0))
    clo = np.r_[fam.lower[:4], fam.alpha_range[0]]
    chi = np.r_[fam.upper[:4], fam.alpha_range[1]]
    ls = LstmModel(TINY_LSTM, clo, chi, 20, fam.upper[6], np.random.default_rng(1))
    van = dict(TINY_DJ, embed_x=[64, 8], decode_x=[16, 8, 64])
    van = {k: v for k, v in van.items() if not k.startswith("gmm")}
    vm = CvaeModel(van, fam.lower, fam.upper, fam.alpha_range, prior="standard", rng=np.random.default_rng(2))
    return Models(cv, ls, vm)


@pytest.mark.parametrize("fam", [DJ, cr3bp_adapter()], ids=["dejong", "cr3bp"])
def test_uniform_guess_statistics(fam):
    rng = np.random.default_rng(0)
    x = uniform_guess(fam, rng)
    assert x.shape == (fam.dimension,) and np.all(x >= fam.lower) and np.all(x <= fam.upper)
    n = 100_000
    X = fam.uniform(np.random.default_rng(1), n)
    assert np.all(X >= fam.lower) and np.all(X <= fam.upper)
    width = fam.upper - fam.lower
    sigma = width / np.sqrt(12 * n)
    assert np.all(np.abs(X.mean(axis=0) - (fam.lower + fam.upper) / 2) <= 3 * sigma + 1e-15)
    assert np.array_equal(fam.uniform(np.random.default_rng(5), 3), fam.uniform(np.random.default_rng(5), 3))


def test_cr3bp_box():
    fam = cr3bp_adapter()
    assert fam.dimension == 64
    assert fam.lower[3] == 350 and fam.upper[3] == 450 and fam.upper[1] == fam.upper[2] == 15 and fam.upper[0] == 40


def test_task_rng_is_order_independent():
    a = task_rng(3, 1, 7).uniform(size=4)
    task_rng(3, 0, 0).uniform(size=100)
    assert np.array_equal(task_rng(3, 1, 7).uniform(size=4), a)
    assert not np.array_equal(task_rng(3, 1, 8).uniform(size=4), a)


def test_curation_config_validation():
    with pytest.raises(ValueError):
        CurationConfig([])
    with pytest.raises(ValueError):
        CurationConfig([0.0], 0)
    with pytest.raises(ValueError):
        CurationConfig([0.0, 1.0], [5])
    assert CurationConfig([0.0, 1.0], [3, 4]).counts() == [3, 4]
    with pytest.raises(ValueError):
        curate(DJ, CurationConfig([2.0], 1))


def test_dejong_curation_hits_true_minima():
    ds = curate(DJ, CurationConfig([0.0], 100, SolverConfig(max_step=1.0), seed=0))
    assert len(ds) == 100
    conv = ds.converged
    assert 0 < len(conv) <= 100
    for r in conv.records:
        assert np.min(np.linalg.norm(TRUE_MIN - r.x_star, axis=1)) < 1e-3
        assert r.objective == pytest.approx(min(m[2] for m in DEJONG_MINIMA_ALPHA0), abs=1e-3)


def test_curation_deterministic_across_workers():
    cfg1 = CurationConfig([0.0, 0.5], [6, 5], SolverConfig(max_step=1.0), seed=4, worker_count=1,
                          record_wall_time=False)
    cfg2 = CurationConfig([0.0, 0.5], [6, 5], SolverConfig(max_step=1.0), seed=4, worker_count=2,
                          record_wall_time=False)
    a, b = curate(DJ, cfg1), curate(DJ, cfg2)
    assert [r.to_json() for r in a.records] == [r.to_json() for r in b.records]
    assert a.provenance == b.provenance


def test_curation_resume_after_torn_write(tmp_path):
    cfg = CurationConfig([0.0, 1.0], 8, SolverConfig(max_step=1.0), seed=2, record_wall_time=False)
    full = tmp_path / "full.jsonl"
    ref = curate(DJ, cfg, full)
    lines = full.read_text().splitlines(keepends=True)
    assert len(lines) == 16
    part = tmp_path / "part.jsonl"
    part.write_text("".join(lines[:5]) + lines[5][:17])
    seen = []
    again = curate(DJ, cfg, part, progress=seen.append)
    assert part.read_bytes() == full.read_bytes()
    assert seen[0] == 6 and seen[-1] == 16
    assert again.digest() == ref.digest()
    # a finished file is left alone
    curate(DJ, cfg, part)
    assert part.read_bytes() == full.read_bytes()
    with pytest.raises(ValueError):
        curate(DJ, CurationConfig([0.0], 3, seed=2), part)


def test_beta_filter_and_train_provenance_and_errors():
    ds = curate(DJ, CurationConfig([0.0, 0.6, 1.2], 20, SolverConfig(max_step=1.0), seed=1))
    cfg = {"cvae": TrainConfig(epochs=2, batch_size=16)}
    with pytest.raises(ValueError, match="beta=0.5"):
        beta_filter_and_train(ds, 0.5, DJ, cfg, arch=TINY_DJ)
    models, prov = beta_filter_and_train(ds, math.inf, DJ, cfg, arch=TINY_DJ)
    assert prov["n_train"] == len(ds.converged)
    assert prov["filtered_digest"] == ds.converged.digest() and prov["dataset_digest"] == ds.digest()
    assert models.cvae is not None and models.lstm is None
    assert models.cvae.alpha_range == DJ.alpha_range


def test_draw_guesses_modes_and_bounds():
    fam = cr3bp_adapter()
    models = cr3bp_models(fam)
    for mode in MODES:
        X = draw_guesses(fam, 0.5, mode, models, 30, np.random.default_rng(0))
        assert X.shape == (30, 64)
        assert np.all(X >= fam.lower) and np.all(X <= fam.upper)
    rng = np.random.default_rng(3)
    mixed = draw_guesses(fam, 0.5, "cvae-time-mass+uniform-control", models, 5, rng)
    head = models.cvae.sample(0.5, 5, np.random.default_rng(3))
    assert np.array_equal(mixed[:, :4], head)
    lstm_mode = draw_guesses(fam, 0.5, "uniform-time-mass+lstm-control", models, 4, np.random.default_rng(4))
    ctrl = models.lstm.forward(np.column_stack([lstm_mode[:, :4], np.full(4, 0.5)]))
    assert np.allclose(lstm_mode[:, 4:], ctrl.reshape(4, -1), rtol=0, atol=1e-12)
    with pytest.raises(ValueError, match="cvae"):
        draw_guesses(fam, 0.5, "amorgs", Models(), 3, rng)
    with pytest.raises(ValueError, match="lstm"):
        draw_guesses(fam, 0.5, "amorgs", Models(cvae=models.cvae), 3, rng)
    with pytest.raises(ValueError):
        draw_guesses(fam, 0.5, "bogus", models, 3, rng)
    with pytest.raises(ValueError):
        draw_guesses(DJ, 0.5, "uniform-time-mass+lstm-control", Models(), 3, rng)


def test_uniform_warmstart_matches_direct_solves():
    cfg = SolverConfig(max_step=1.0)
    ds = warmstart(DJ, 0.3, "uniform", None, 12, cfg, np.random.default_rng(9))
    X = DJ.uniform(np.random.default_rng(9), 12)
    assert ds.family == "dejong:uniform" and len(ds) == 12
    for r, x in zip(ds.records, X):
        direct = DJ.solve(x, 0.3, cfg)
        assert np.array_equal(r.x0, x) and np.array_equal(r.x_star, direct.x_star)
        assert r.converged == direct.converged
    with pytest.raises(ValueError):
        warmstart(DJ, 0.3, "uniform", None, 0, cfg, np.random.default_rng(0))


def test_benchmark_report_properties(tmp_path):
    cfg = SolverConfig(max_step=1.0)
    rep = benchmark(DJ, 0.2, ["uniform"], None, 25, cfg, seed=3)
    s = rep.modes[0]
    assert 0 <= s.converged_pct <= 100 and s.capped_pct == s.converged_pct
    assert s.time_min <= s.time_p25 <= s.time_p50
    assert sum(s.hist_counts) == round(s.converged_pct * s.n / 100)
    again = benchmark(DJ, 0.2, ["uniform"], None, 25, cfg, seed=3)
    assert [r.converged for r in again.raw["uniform"].records] == [r.converged for r in rep.raw["uniform"].records]
    ds = rep.raw["uniform"]
    caps = [0.0, 1e-4, 1e-3, 1e-2, math.inf]
    pcts = [mode_statistics("uniform", ds, c).capped_pct for c in caps]
    assert all(a <= b for a, b in zip(pcts, pcts[1:]))
    rep.to_csv(tmp_path / "r.csv", "probe")
    text = (tmp_path / "r.csv").read_text().splitlines()
    assert text[0] == "# probe" and text[1] == "mode,statistic,value" and len(text) == 2 + 8
    rep.write_raw(tmp_path / "r.jsonl")
    assert len((tmp_path / "r.jsonl").read_text().splitlines()) == 25
    with pytest.raises(ValueError):
        benchmark(DJ, 0.2, ["uniform"], None, 0, cfg)


def test_mode_statistics_converged_subset_only():
    from amorgs.problem import SolveRecord

    recs = [SolveRecord(0.0, np.zeros(2), np.zeros(2), np.zeros(0), 1.0, c, 3, t)
            for c, t in ((True, 1.0), (True, 3.0), (False, 100.0), (True, 2.0))]
    s = mode_statistics("m", SolutionDataset(recs, "t"), time_cap_s=2.5)
    assert s.converged_pct == 75.0 and s.capped_pct == 50.0
    assert s.time_mean == 2.0 and s.time_min == 1.0 and s.time_p50 == 2.0 and s.time_p25 == 1.5
    none = mode_statistics("m", SolutionDataset(recs[2:3], "t"))
    assert none.converged_pct == 0.0 and math.isnan(none.time_mean)


def test_cr3bp_failed_start_is_recorded():
    fam = cr3bp_adapter()
    x = fam.uniform(np.random.default_rng(0))
    rec = fam.solve(x, 1.0, SolverConfig(optimality_tol=1e-3, feasibility_tol=1e-3, max_major_iterations=1,
                                         max_step=math.inf))
    assert not rec.converged and rec.x_star.shape == (64,) and rec.iterations <= 1
    assert np.all(rec.x_star >= fam.lower - 1e-9) and np.all(rec.x_star <= fam.upper + 1e-9)
