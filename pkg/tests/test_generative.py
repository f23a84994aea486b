import numpy as np
import pytest

from amorgs import nn
from amorgs.generative import (
    DEJONG_ARCH,
    CvaeModel,
    LstmModel,
    TrainConfig,
    controls_to_features,
    cr3bp_architecture,
    features_to_controls,
    gmm_kl,
    kl_diag_gaussians,
    kl_standard_normal,
    load_model,
    lstm_architecture,
    lstm_forward,
    reparameterize,
    sample_cvae,
    sample_full,
    save_model,
    train_cvae,
    train_lstm,
    vanilla_architecture,
)
from amorgs.nn import Tensor, gradient_check

TINY = {
    "embed_x": [3, 6, 5],
    "embed_alpha": [1, 4, 3],
    "encode": [8, 6],
    "encode_mu": [6, 2],
    "encode_sigma": [6, 2],
    "embed_z": [2, 5],
    "decode_x": [8, 6, 3],
    "gmm_w": [1, 6, 3],
    "gmm_mu": [1, 6, 6],
    "gmm_sigma": [1, 6, 6],
}
TINY_LSTM = {"encoder": [5, 6], "hidden": 4, "decoder": [8, 6, 4]}
LO3, HI3 = np.zeros(3), np.array([1.0, 2.0, 4.0])
COND_LO, COND_HI = np.array([0, 0, 0, 350, 0.0]), np.array([40, 15, 15, 450, 1.0])


def tiny_model(seed=0, **kw):
    return CvaeModel(TINY, LO3, HI3, (0.0, 1.0), rng=np.random.default_rng(seed), **kw)


def random_controls(rng, n, N=20):
    return np.stack([rng.uniform(0, 2 * np.pi, (n, N)), rng.uniform(-np.pi / 2, np.pi / 2, (n, N)),
                     rng.uniform(0, 1, (n, N))], axis=2)


def test_architecture_tables():
    m = CvaeModel(DEJONG_ARCH, [-50, -50], [50, 50], rng=np.random.default_rng(0))
    assert m.K == 2 and m.latent_dim == 2
    c = CvaeModel(cr3bp_architecture(), np.zeros(4), np.ones(4), rng=np.random.default_rng(0))
    assert c.K == 20 and c.latent_dim == 4
    assert cr3bp_architecture()["embed_x"] == [4, 256, 256, 256, 256]
    assert cr3bp_architecture(paper=True)["embed_x"] == [4, 1024, 1024, 1024, 1024]
    assert vanilla_architecture(paper=True)["encode_mu"][-1] == 64
    assert lstm_architecture()["hidden"] == 64
    bad = dict(TINY, encode=[9, 6])
    with pytest.raises(ValueError):
        CvaeModel(bad, LO3, HI3)
    with pytest.raises(ValueError):
        CvaeModel(TINY, LO3, LO3)
    with pytest.raises(ValueError):
        CvaeModel(TINY, LO3, HI3, prior="flow")


def test_encode_examples():
    m = tiny_model()
    x = np.array([[0.2, 0.5, 0.9]])
    mu, sd = m.encode(x, 0.3)
    mu2, sd2 = m.encode(x, 0.3)
    assert mu.shape == (1, 2) and np.array_equal(mu, mu2) and np.array_equal(sd, sd2)
    assert np.all(sd > 0)
    with pytest.raises(ValueError):
        m.encode([[0.2, 0.5, 1.5]], 0.3)


def test_gmm_weights_are_a_simplex_and_continuous():
    m = tiny_model(1)
    for a in np.random.default_rng(0).uniform(-1, 2, 1000):
        w, mu, sd = m.gmm_prior(a)
        assert abs(w.sum() - 1.0) <= 1e-12 and np.all(w >= 0)
        assert np.all(np.isfinite(mu)) and np.all(sd > 0)
    for a in (0.1, 0.5, 0.9):
        assert np.max(np.abs(m.gmm_prior(a)[0] - m.gmm_prior(a + 1e-6)[0])) < 1e-3


def test_batched_prior_heads_match_single_alpha():
    m = tiny_model(2)
    alphas = np.array([0.3, 0.1, 0.3, 0.7])
    logw, mu, lv = m.prior_heads(alphas)
    for i, a in enumerate(alphas):
        w, mu1, sd1 = m.gmm_prior(a)
        assert np.allclose(np.exp(logw.data[i]), w, atol=1e-15)
        assert np.allclose(mu.data[i], mu1, atol=1e-15)


def test_reparameterize_examples():
    mu, sd = np.array([1.0, -2.0]), np.array([0.5, 3.0])
    assert np.array_equal(reparameterize(mu, sd, np.zeros(2)).data, mu)
    assert np.array_equal(reparameterize(mu, np.zeros(2), np.ones(2)).data, mu)
    n = 100_000
    xi = np.random.default_rng(0).standard_normal((n, 2))
    z = reparameterize(mu, sd, xi).data
    assert np.all(np.abs(z.mean(axis=0) - mu) < 3 * sd / np.sqrt(n))


def test_kl_closed_forms():
    zero = Tensor(np.zeros(1))
    assert kl_diag_gaussians(zero, zero, zero, zero).data.sum() == 0.0
    assert kl_diag_gaussians(Tensor([1.0]), zero, zero, zero).data.sum() == pytest.approx(0.5, abs=1e-15)
    # K = 1 with the posterior equal to the prior component
    rng = np.random.default_rng(1)
    mu, lv = rng.normal(size=(5, 3)), rng.normal(size=(5, 3)) * 0.3
    z = Tensor(mu + np.exp(0.5 * lv) * rng.standard_normal((5, 3)))
    kl = gmm_kl(z, Tensor(mu), Tensor(lv), Tensor(np.zeros((5, 1))), Tensor(mu[:, None]), Tensor(lv[:, None]))
    assert np.max(np.abs(kl.data)) < 1e-14


def test_single_component_reduces_to_vanilla_kl():
    rng = np.random.default_rng(2)
    mu, lv = Tensor(rng.normal(size=(7, 4))), Tensor(rng.normal(size=(7, 4)) * 0.5)
    z = Tensor(rng.normal(size=(7, 4)))
    zeros = Tensor(np.zeros((7, 1, 4)))
    gmm = gmm_kl(z, mu, lv, Tensor(np.zeros((7, 1))), zeros, zeros)
    assert np.max(np.abs(gmm.data - kl_standard_normal(mu, lv).data)) < 1e-12


def test_k1_elbo_equals_vanilla_elbo():
    arch = dict(TINY, gmm_w=[1, 6, 1], gmm_mu=[1, 6, 2], gmm_sigma=[1, 6, 2])
    g = CvaeModel(arch, LO3, HI3, rng=np.random.default_rng(3))
    v = CvaeModel({k: arch[k] for k in arch if not k.startswith("gmm")}, LO3, HI3, prior="standard",
                  rng=np.random.default_rng(3))
    # the prior heads output a standard normal
    for head in (g.gmm_mu, g.gmm_sigma):
        head.layers[-1].weight.data[:] = 0.0
    rng = np.random.default_rng(4)
    xn, al, xi = rng.uniform(0, 1, (9, 3)), rng.uniform(0, 1, 9), rng.standard_normal((9, 2))
    assert abs(g.loss(xn, al, xi).item() - v.loss(xn, al, xi).item()) < 1e-12
    assert v.manifest()["kind"] == "vanilla-cvae"


@pytest.mark.parametrize("prior", ["gmm", "standard"])
def test_elbo_gradient_check(prior):
    arch = TINY if prior == "gmm" else {k: TINY[k] for k in TINY if not k.startswith("gmm")}
    m = CvaeModel(arch, LO3, HI3, prior=prior, rng=np.random.default_rng(5))
    rng = np.random.default_rng(6)
    xn, al, xi = rng.uniform(0, 1, (6, 3)), rng.uniform(0, 1, 6), rng.standard_normal((6, 2))
    # a large KL weight so the KL path carries real gradient mass in the check
    err = gradient_check(lambda: m.loss(xn, al, xi, eta_L=1e-4) + m.loss(xn, al, xi, eta_L=1.0),
                         m.parameters(), h=1e-5)
    assert err < 1e-5


def test_degenerate_prior_variance_guard():
    z = Tensor(np.zeros((1, 1)))
    with pytest.raises(FloatingPointError):
        gmm_kl(z, z, z, Tensor(np.zeros((1, 1))), Tensor(np.zeros((1, 1, 1))), Tensor(np.full((1, 1, 1), -50.0)))


def test_sampling_component_frequencies():
    m = tiny_model(7)
    n = 100_000
    for a in (0.2, 0.8):
        w = m.gmm_prior(a)[0]
        out, comp = m.sample(a, n, np.random.default_rng(8), return_components=True)
        freq = np.bincount(comp, minlength=m.K) / n
        assert np.all(np.abs(freq - w) <= 3 * np.sqrt(w * (1 - w) / n))
        assert np.all(out >= LO3) and np.all(out <= HI3)
    with pytest.raises(ValueError):
        sample_cvae(m, 0.5, 0, np.random.default_rng(0))


def test_sampling_reproducible_given_rng():
    m = tiny_model(9)
    a = m.sample(0.4, 50, np.random.default_rng(1))
    b = m.sample(0.4, 50, np.random.default_rng(1))
    assert np.array_equal(a, b)


def test_overfit_single_point():
    x = np.array([[0.3, 1.1, 2.5]])
    res = train_cvae(x, [0.5], LO3, HI3, TINY, TrainConfig(epochs=500, batch_size=1, lr=1e-2, seed=0))
    m = res.model
    assert len(res.history) == 500 and np.all(np.isfinite(res.history))
    mu, _ = m.encode(m.normalize(x), 0.5)
    ea = m.embed_alpha(m.alpha_in([0.5]))
    recon = m.decode(Tensor(mu), ea).data
    assert np.mean((recon - m.normalize(x)) ** 2) < 1e-3


def test_training_deterministic_and_errors():
    rng = np.random.default_rng(10)
    x = rng.uniform(LO3, HI3, (40, 3))
    al = rng.uniform(0, 1, 40)
    cfg = TrainConfig(epochs=3, batch_size=16, seed=4)
    a = train_cvae(x, al, LO3, HI3, TINY, cfg)
    b = train_cvae(x, al, LO3, HI3, TINY, cfg)
    assert a.history == b.history
    for k, v in a.model.state_arrays().items():
        assert np.array_equal(v, b.model.state_arrays()[k])
    with pytest.raises(ValueError):
        train_cvae(np.zeros((0, 3)), [], LO3, HI3, TINY, cfg)
    with pytest.raises(ValueError):
        train_cvae(x, al[:-1], LO3, HI3, TINY, cfg)
    with pytest.raises(ValueError):
        TrainConfig(eta_L=0.0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


def test_dejong_like_training_curve_improves():
    # two clusters that rotate with alpha
    rng = np.random.default_rng(11)
    n = 400
    al = rng.uniform(0, 1, n)
    side = rng.integers(0, 2, n) * 2 - 1
    pts = side[:, None] * np.column_stack([np.cos(al), np.sin(al)]) * 20 + rng.normal(0, 1, (n, 2))
    arch = dict(DEJONG_ARCH, gmm_w=[1, 16, 2], gmm_mu=[1, 16, 4], gmm_sigma=[1, 16, 4])
    res = train_cvae(pts, al, [-50, -50], [50, 50], arch, TrainConfig(epochs=150, batch_size=64, lr=1e-3))
    h = np.asarray(res.history)
    assert np.all(np.isfinite(h))
    ma = np.convolve(h, np.ones(50) / 50, mode="valid")
    # loss is minimized, so the ELBO moving average rises
    assert np.all(np.diff(ma) <= 1e-12)


def test_angle_features_roundtrip():
    c = random_controls(np.random.default_rng(12), 5)
    f = controls_to_features(c)
    assert f.shape == (5, 20, 4)
    back = features_to_controls(f)
    assert np.allclose(back, c, atol=1e-12)
    # the 0 / 2 pi seam maps to nearby features
    assert np.allclose(controls_to_features([[0.0, 0, 0]]), controls_to_features([[2 * np.pi - 1e-9, 0, 0]]), atol=1e-8)


def test_lstm_forward_examples():
    m = LstmModel(TINY_LSTM, COND_LO, COND_HI, rng=np.random.default_rng(13))
    cond = np.array([[20.0, 3.0, 4.0, 400.0, 0.5], [5.0, 1.0, 1.0, 420.0, 0.9]])
    out = lstm_forward(m, cond)
    assert out.shape == (2, 20, 3)
    assert np.array_equal(out, m(cond))
    assert np.all(out[..., 0] >= 0) and np.all(out[..., 0] < 2 * np.pi)
    assert np.all(np.abs(out[..., 1]) <= np.pi / 2) and np.all((out[..., 2] >= 0) & (out[..., 2] <= 1))
    assert not np.allclose(m.forward(cond, reverse_cells=True), out)
    with pytest.raises(ValueError):
        LstmModel(dict(TINY_LSTM, decoder=[7, 4]), COND_LO, COND_HI)


def test_lstm_gradient_check():
    m = LstmModel(TINY_LSTM, COND_LO, COND_HI, n_steps=5, rng=np.random.default_rng(14))
    rng = np.random.default_rng(15)
    cond = rng.uniform(COND_LO, COND_HI, (3, 5))
    target = controls_to_features(random_controls(rng, 3, 5))
    assert gradient_check(lambda: m.loss(cond, target), m.parameters()) < 1e-5


def test_lstm_overfit_and_curve():
    rng = np.random.default_rng(16)
    cond = rng.uniform(COND_LO, COND_HI, (32, 5))
    ctrl = random_controls(rng, 32, 4)
    arch = {"encoder": [5, 32], "hidden": 32, "decoder": [64, 64, 4]}
    res = train_lstm(cond, ctrl, COND_LO, COND_HI, arch, TrainConfig(epochs=1500, batch_size=32, lr=3e-3, seed=0))
    h = np.asarray(res.history)
    assert np.all(np.isfinite(h)) and h[-1] < 1e-4
    ma = np.convolve(h, np.ones(50) / 50, mode="valid")
    assert ma[-1] < ma[0]
    with pytest.raises(ValueError):
        train_lstm(np.zeros((0, 5)), np.zeros((0, 4, 3)), COND_LO, COND_HI, arch, TrainConfig())


def test_sample_full_shape_and_bounds():
    lo = np.array([0, 0, 0, 350.0])
    hi = np.array([40, 15, 15, 450.0])
    arch = cr3bp_architecture()
    arch = {k: v for k, v in arch.items()}
    cv = CvaeModel(arch, lo, hi, rng=np.random.default_rng(17))
    ls = LstmModel(TINY_LSTM, COND_LO, COND_HI, rng=np.random.default_rng(18))
    X = sample_full(cv, ls, 0.7, 25, np.random.default_rng(0))
    assert X.shape == (25, 64)
    assert np.all(X[:, :4] >= lo) and np.all(X[:, :4] <= hi)
    C = X[:, 4:].reshape(25, 20, 3)
    assert np.all((C[..., 0] >= 0) & (C[..., 0] <= 2 * np.pi))
    assert np.all(np.abs(C[..., 1]) <= np.pi / 2) and np.all((C[..., 2] >= 0) & (C[..., 2] <= 1))


@pytest.mark.parametrize("kind", ["cvae", "vanilla-cvae", "lstm"])
def test_checkpoint_roundtrip(tmp_path, kind):
    rng = np.random.default_rng(19)
    if kind == "lstm":
        m = LstmModel(TINY_LSTM, COND_LO, COND_HI, rng=rng)
        probe = rng.uniform(COND_LO, COND_HI, (4, 5))
        run = lambda mm: mm.features(probe).data  # noqa: E731
    else:
        prior = "gmm" if kind == "cvae" else "standard"
        arch = TINY if prior == "gmm" else {k: TINY[k] for k in TINY if not k.startswith("gmm")}
        m = CvaeModel(arch, LO3, HI3, (0.0, 2.0), prior=prior, rng=rng, batch_norm=True)
        m.train()
        m.loss(rng.uniform(0, 1, (8, 3)), rng.uniform(0, 2, 8), rng.standard_normal((8, 2)))
        m.eval()
        run = lambda mm: mm.sample(0.4, 16, np.random.default_rng(3))  # noqa: E731
    path = tmp_path / "model.json"
    save_model(path, m, rng_seed=19, metadata={"note": "probe"})
    back = load_model(path)
    assert back.manifest() == m.manifest() and back.manifest()["kind"] == kind
    assert np.array_equal(run(back), run(m))
    doc = nn.read_checkpoint(path)
    assert doc["architecture"]["kind"] == kind and doc["rng_seed"] == 19
