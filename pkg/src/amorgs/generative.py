"""Conditional generative models over solution sets.

* :class:`CvaeModel` is a conditional VAE whose latent prior is a Gaussian
  mixture with alpha-dependent weights, means and diagonal variances. With
  ``prior="standard"`` it becomes the vanilla CVAE (standard normal prior).
* :class:`LstmModel` maps the time/mass variables and alpha to a control
  sequence through a bidirectional LSTM.

Both work on min-max normalized data; the normalization bounds live in the
model and in its checkpoint.
"""

from __future__ import annotations

import copy
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .nn import MLP, BiLSTM, Tensor, concat, log_softmax, logsumexp

LOG_2PI = math.log(2.0 * math.pi)
MIN_LOGVAR = -30.0
MAX_LOGVAR = 30.0

# layer-width tables; each entry lists successive fully connected widths
DEJONG_ARCH = {
    "embed_x": [2, 32, 64, 64],
    "embed_alpha": [1, 32, 64, 64],
    "encode": [128, 64, 64],
    "encode_mu": [64, 32, 2],
    "encode_sigma": [64, 32, 2],
    "embed_z": [2, 32, 64, 64],
    "decode_x": [128, 64, 64, 2],
    "gmm_w": [1, 512, 512, 512, 2],
    "gmm_mu": [1, 512, 512, 512, 4],
    "gmm_sigma": [1, 512, 512, 512, 4],
}

CR3BP_ARCH = {
    "embed_x": [4, 1024, 1024, 1024, 1024],
    "embed_alpha": [1, 256, 256, 256, 256],
    "encode": [1280, 512, 512, 512, 128],
    "encode_mu": [128, 128, 128, 4],
    "encode_sigma": [128, 128, 128, 4],
    "embed_z": [4, 1024, 1024, 1024, 1024],
    "decode_x": [1280, 512, 512, 512, 4],
    "gmm_w": [1, 512, 512, 512, 20],
    "gmm_mu": [1, 512, 512, 512, 80],
    "gmm_sigma": [1, 512, 512, 512, 80],
}

VANILLA_ARCH = {
    "embed_x": [64, 1024, 1024, 1024, 1024],
    "embed_alpha": [1, 256, 256, 256, 256],
    "encode": [1280, 512, 512, 512, 128],
    "encode_mu": [128, 128, 128, 64],
    "encode_sigma": [128, 128, 128, 64],
    "embed_z": [64, 1024, 1024, 1024, 1024],
    "decode_x": [1280, 512, 512, 512, 64],
}

LSTM_ARCH = {"encoder": [5, 512, 512, 512], "hidden": 256, "decoder": [512, 512, 512, 4]}

# which ends of each width list carry data dimensions (kept when shrinking)
_KEEP_ENDS = {
    "embed_x": (True, False),
    "embed_alpha": (True, False),
    "encode": (False, False),
    "encode_mu": (False, True),
    "encode_sigma": (False, True),
    "embed_z": (True, False),
    "decode_x": (False, True),
    "gmm_w": (True, True),
    "gmm_mu": (True, True),
    "gmm_sigma": (True, True),
    "encoder": (True, False),
    "decoder": (False, True),
}


def shrink(arch: dict, factor: int = 4) -> dict:
    """Divide every hidden width by ``factor``, keeping data dimensions."""
    out = {}
    for name, val in arch.items():
        if name == "hidden":
            out[name] = max(1, val // factor)
            continue
        keep_first, keep_last = _KEEP_ENDS[name]
        w = list(val)
        for i in range(len(w)):
            if (i == 0 and keep_first) or (i == len(w) - 1 and keep_last):
                continue
            w[i] = max(1, w[i] // factor)
        out[name] = w
    return out


def cr3bp_architecture(paper: bool = False) -> dict:
    return copy.deepcopy(CR3BP_ARCH) if paper else shrink(CR3BP_ARCH)


def vanilla_architecture(paper: bool = False) -> dict:
    return copy.deepcopy(VANILLA_ARCH) if paper else shrink(VANILLA_ARCH)


def lstm_architecture(paper: bool = False) -> dict:
    return copy.deepcopy(LSTM_ARCH) if paper else shrink(LSTM_ARCH)


@dataclass
class TrainConfig:
    eta_L: float = 1e-4
    epochs: int = 100
    batch_size: int = 256
    lr: float = 1e-3
    seed: int = 0
    max_time_s: float = math.inf

    def __post_init__(self):
        if not self.eta_L > 0:
            raise ValueError("eta_L must be positive")
        if self.epochs < 1 or self.batch_size < 1 or not self.lr > 0:
            raise ValueError("epochs, batch_size and lr must be positive")


def normalize(x, lo, hi):
    return (np.asarray(x, dtype=float) - lo) / (hi - lo)


def denormalize(u, lo, hi):
    return lo + np.asarray(u, dtype=float) * (hi - lo)


def kl_diag_gaussians(mu_q, lv_q, mu_p, lv_p):
    """KL(N(mu_q, e^lv_q) || N(mu_p, e^lv_p)) summed over the last axis (Tensors)."""
    return 0.5 * (lv_p - lv_q + ((lv_q.exp() + (mu_q - mu_p) ** 2) / lv_p.exp()) - 1.0).sum(axis=-1)


def kl_standard_normal(mu_q, lv_q):
    return 0.5 * (lv_q.exp() + mu_q**2 - 1.0 - lv_q).sum(axis=-1)


class CvaeModel(nn.Module):
    """Conditional VAE over a normalized vector with condition ``alpha``.

    Parameters
    ----------
    arch : dict
        Width lists (see ``DEJONG_ARCH``). GMM heads are required when
        ``prior == "gmm"``.
    lower, upper : array
        Per-dimension normalization bounds of the modeled vector.
    alpha_range : (float, float)
        Condition range, mapped to [0, 1] before entering the network.
    prior : {"gmm", "standard"}
    """

    kind = "cvae"

    def __init__(self, arch: dict, lower, upper, alpha_range=(0.0, 1.0), prior="gmm",
                 rng=None, batch_norm=False):
        rng = rng if rng is not None else np.random.default_rng()
        self.arch = copy.deepcopy(arch)
        self.prior = prior
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.alpha_range = (float(alpha_range[0]), float(alpha_range[1]))
        self.batch_norm = batch_norm
        a = arch
        x_dim = a["embed_x"][0]
        self.x_dim = x_dim
        self.latent_dim = a["encode_mu"][-1]
        if self.lower.shape != (x_dim,) or self.upper.shape != (x_dim,):
            raise ValueError("normalization bounds must match the data dimension")
        if np.any(self.upper <= self.lower):
            raise ValueError("normalization bounds need upper > lower")
        checks = [
            (a["encode"][0], a["embed_x"][-1] + a["embed_alpha"][-1], "encode input"),
            (a["encode_mu"][0], a["encode"][-1], "encode_mu input"),
            (a["encode_sigma"][0], a["encode"][-1], "encode_sigma input"),
            (a["encode_sigma"][-1], self.latent_dim, "encode_sigma output"),
            (a["embed_z"][0], self.latent_dim, "embed_z input"),
            (a["decode_x"][0], a["embed_z"][-1] + a["embed_alpha"][-1], "decode input"),
            (a["decode_x"][-1], x_dim, "decode output"),
        ]
        if prior == "gmm":
            self.K = a["gmm_w"][-1]
            checks += [
                (a["gmm_mu"][-1], self.K * self.latent_dim, "gmm_mu output"),
                (a["gmm_sigma"][-1], self.K * self.latent_dim, "gmm_sigma output"),
            ]
        elif prior == "standard":
            self.K = 1
        else:
            raise ValueError(f"unknown prior {prior!r}")
        for got, want, what in checks:
            if got != want:
                raise ValueError(f"inconsistent architecture: {what} is {got}, expected {want}")

        bn = batch_norm
        self.embed_x = MLP(a["embed_x"], "leaky_relu", rng, bn)
        self.embed_alpha = MLP(a["embed_alpha"], "leaky_relu", rng, bn)
        self.encode_layer = MLP(a["encode"], "leaky_relu", rng, bn)
        self.encode_mu = MLP(a["encode_mu"], "identity", rng, bn)
        self.encode_sigma = MLP(a["encode_sigma"], "identity", rng, bn)
        self.embed_z = MLP(a["embed_z"], "leaky_relu", rng, bn)
        self.decode_x = MLP(a["decode_x"], "sigmoid", rng, bn)
        if prior == "gmm":
            self.gmm_w = MLP(a["gmm_w"], "identity", rng, bn)
            self.gmm_mu = MLP(a["gmm_mu"], "identity", rng, bn)
            self.gmm_sigma = MLP(a["gmm_sigma"], "identity", rng, bn)

    # -- helpers ------------------------------------------------------------
    def alpha_in(self, alpha):
        lo, hi = self.alpha_range
        a = np.atleast_1d(np.asarray(alpha, dtype=float)).reshape(-1, 1)
        return a if hi == lo else (a - lo) / (hi - lo)

    def normalize(self, x):
        return normalize(x, self.lower, self.upper)

    def denormalize(self, u):
        return denormalize(u, self.lower, self.upper)

    # -- network pieces -------------------------------------------------------
    def encode_posterior(self, xn, alpha):
        """Posterior mean and log-variance for normalized ``xn``."""
        xn = np.asarray(xn, dtype=float).reshape(-1, self.x_dim)
        if np.any(xn < -0.1) or np.any(xn > 1.1):
            raise ValueError("encoder input must be normalized to [0, 1]")
        ea = self.embed_alpha(self.alpha_in(alpha))
        h = self.encode_layer(concat([self.embed_x(xn), ea], axis=1))
        lv = self.encode_sigma(h)
        return self.encode_mu(h), lv, ea

    def encode(self, x_normalized, alpha):
        """(mu_q, sigma_q) as arrays."""
        mu, lv, _ = self.encode_posterior(x_normalized, alpha)
        return mu.data, np.exp(0.5 * lv.data)

    def decode(self, z, ea) -> Tensor:
        return self.decode_x(concat([self.embed_z(z), ea], axis=1))

    def prior_heads(self, alpha):
        """Log-weights (B, K), means (B, K, L) and log-variances (B, K, L).

        Heads are evaluated once per distinct alpha in the batch.
        """
        a = np.atleast_1d(np.asarray(alpha, dtype=float)).ravel()
        B, L = a.size, self.latent_dim
        if self.prior == "standard":
            zeros = Tensor(np.zeros((B, 1, L)))
            return Tensor(np.zeros((B, 1))), zeros, zeros
        uniq, inv = np.unique(a, return_inverse=True)
        ai = self.alpha_in(uniq)
        logw = log_softmax(self.gmm_w(ai), axis=1)
        mu = self.gmm_mu(ai).reshape(len(uniq), self.K, L)
        lv = self.gmm_sigma(ai).reshape(len(uniq), self.K, L)
        if len(uniq) == B and np.array_equal(inv, np.arange(B)):
            return logw, mu, lv
        return logw[inv], mu[inv], lv[inv]

    def gmm_prior(self, alpha):
        """Weights (K,), means (K, L) and standard deviations (K, L) at one alpha."""
        logw, mu, lv = self.prior_heads([float(alpha)])
        return np.exp(logw.data[0]), mu.data[0], np.exp(0.5 * lv.data[0])

    # -- loss -------------------------------------------------------------
    def loss_terms(self, xn, alpha, xi):
        """Reconstruction MSE and mean KL for one batch with noise ``xi``."""
        mu_q, lv_q, ea = self.encode_posterior(xn, alpha)
        z = reparameterize(mu_q, (0.5 * lv_q).exp(), xi)
        recon = self.decode(z, ea)
        mse = nn.mse(recon, xn)
        if self.prior == "standard":
            kl = kl_standard_normal(mu_q, lv_q)
        else:
            kl = gmm_kl(z, mu_q, lv_q, *self.prior_heads(alpha))
        return mse, kl.mean()

    def loss(self, xn, alpha, xi, eta_L=1e-4) -> Tensor:
        """Negative of the weighted ELBO (to be minimized)."""
        mse, kl = self.loss_terms(xn, alpha, xi)
        return mse + eta_L * kl

    # -- generation -----------------------------------------------------------
    def sample(self, alpha, n, rng, return_components=False):
        """Draw ``n`` denormalized samples at one alpha."""
        L = self.latent_dim
        if self.prior == "standard":
            comp = np.zeros(n, dtype=int)
            z = rng.standard_normal((n, L))
        else:
            w, mu, sd = self.gmm_prior(alpha)
            comp = rng.choice(self.K, size=n, p=w / w.sum())
            z = mu[comp] + sd[comp] * rng.standard_normal((n, L))
        ea = self.embed_alpha(self.alpha_in(np.full(n, float(alpha))))
        out = self.denormalize(self.decode(Tensor(z), ea).data)
        out = np.clip(out, self.lower, self.upper)
        return (out, comp) if return_components else out

    def manifest(self) -> dict:
        return {
            "kind": "vanilla-cvae" if self.prior == "standard" else "cvae",
            "arch": self.arch,
            "prior": self.prior,
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "alpha_range": list(self.alpha_range),
            "batch_norm": self.batch_norm,
        }


def reparameterize(mu, sigma, xi):
    """z = mu + sigma * xi (Tensors or arrays)."""
    return nn.as_tensor(mu) + nn.as_tensor(sigma) * nn.as_tensor(xi)


def gmm_kl(z, mu_q, lv_q, logw, mu_p, lv_p) -> Tensor:
    """Responsibility-weighted KL between the posterior and a GMM prior.

    gamma_i is proportional to w_i N_i(z) at the sampled z and
    ``KL = sum_i gamma_i (KL(q || N_i) + log gamma_i - log w_i)``. Every term,
    including the responsibilities, is differentiated.
    """
    B, K, L = mu_p.shape
    lv_p = _clamp_logvar(lv_p)
    zk = z.reshape(B, 1, L)
    log_n = -0.5 * (LOG_2PI + lv_p + (zk - mu_p) ** 2 / lv_p.exp()).sum(axis=2)
    joint = logw + log_n
    log_gamma = joint - logsumexp(joint, axis=1, keepdims=True)
    gamma = log_gamma.exp()
    kl_i = kl_diag_gaussians(mu_q.reshape(B, 1, L), lv_q.reshape(B, 1, L), mu_p, lv_p)
    return (gamma * (kl_i + log_gamma - logw)).sum(axis=1)


def _clamp_logvar(lv: Tensor) -> Tensor:
    if np.any(lv.data < MIN_LOGVAR) or np.any(lv.data > MAX_LOGVAR):
        raise FloatingPointError("degenerate prior variance")
    return lv


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield order[s:s + batch_size]


@dataclass
class TrainResult:
    model: object
    history: list = field(default_factory=list)
    wall_time_s: float = 0.0
    epochs_run: int = 0


def train_cvae(x, alphas, lower, upper, arch: dict, cfg: TrainConfig, alpha_range=None,
               prior="gmm", batch_norm=False) -> TrainResult:
    """Fit a CVAE by Adam on the weighted ELBO.

    Parameters
    ----------
    x : (n, d) array
        Raw (denormalized) training vectors.
    alphas : (n,) array
    lower, upper : (d,) arrays
        Normalization bounds, usually the family box.
    """
    x = np.asarray(x, dtype=float)
    alphas = np.asarray(alphas, dtype=float).ravel()
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("training data is empty")
    if alphas.size != x.shape[0]:
        raise ValueError("one alpha per training row is required")
    rng = np.random.default_rng(cfg.seed)
    if alpha_range is None:
        alpha_range = (float(alphas.min()), float(alphas.max()))
    model = CvaeModel(arch, lower, upper, alpha_range, prior, rng, batch_norm)
    model.train()
    xn = model.normalize(x)
    opt = nn.Adam(model.parameters(), lr=cfg.lr)
    history = []
    start = time.perf_counter()
    epochs = 0
    for _ in range(cfg.epochs):
        tot, count = 0.0, 0
        for idx in _batches(len(xn), cfg.batch_size, rng):
            xi = rng.standard_normal((idx.size, model.latent_dim))
            model.zero_grad()
            loss = model.loss(xn[idx], alphas[idx], xi, cfg.eta_L)
            loss.backward()
            opt.step()
            tot += loss.item() * idx.size
            count += idx.size
        history.append(tot / count)
        epochs += 1
        if time.perf_counter() - start > cfg.max_time_s:
            break
    model.eval()
    return TrainResult(model, history, time.perf_counter() - start, epochs)


def sample_cvae(model: CvaeModel, alpha, n, rng) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be at least 1")
    return model.sample(alpha, n, rng)


# ---------------------------------------------------------------------------
# LSTM over the control sequence


def controls_to_features(controls, el_range=(-np.pi / 2, np.pi / 2), t_max=1.0):
    """(n, N, 3) spherical controls -> (n, N, 4) regression targets.

    Azimuth becomes (sin, cos); elevation and magnitude are min-max scaled.
    """
    c = np.asarray(controls, dtype=float)
    az, el, T = c[..., 0], c[..., 1], c[..., 2]
    return np.stack([np.sin(az), np.cos(az), normalize(el, *el_range), T / t_max], axis=-1)


def features_to_controls(f, el_range=(-np.pi / 2, np.pi / 2), t_max=1.0):
    f = np.asarray(f, dtype=float)
    az = np.mod(np.arctan2(f[..., 0], f[..., 1]), 2 * np.pi)
    el = denormalize(np.clip(f[..., 2], 0.0, 1.0), *el_range)
    T = np.clip(f[..., 3], 0.0, 1.0) * t_max
    return np.stack([az, el, T], axis=-1)


class LstmModel(nn.Module):
    """Bidirectional LSTM from a 5-d condition to N spherical controls.

    The condition ``(tau_s, tau_i, tau_f, m_f, alpha)`` is normalized and
    encoded once; the encoding plus a normalized step index is fed at every
    step. Each step decodes to (sin az, cos az, elevation, magnitude).
    """

    kind = "lstm"

    def __init__(self, arch: dict, cond_lower, cond_upper, n_steps=20, t_max=1.0, rng=None):
        rng = rng if rng is not None else np.random.default_rng()
        self.arch = copy.deepcopy(arch)
        self.n_steps = int(n_steps)
        self.t_max = float(t_max)
        self.cond_lower = np.asarray(cond_lower, dtype=float)
        self.cond_upper = np.asarray(cond_upper, dtype=float)
        if self.cond_lower.shape != (arch["encoder"][0],):
            raise ValueError("condition bounds must match the encoder input width")
        H = arch["hidden"]
        if arch["decoder"][0] != 2 * H:
            raise ValueError("decoder input must equal twice the hidden width")
        if arch["decoder"][-1] != 4:
            raise ValueError("decoder must emit 4 features per step")
        self.encoder = MLP(arch["encoder"], "leaky_relu", rng)
        self.cells = BiLSTM(arch["encoder"][-1] + 1, H, rng)
        self.decoder = MLP(arch["decoder"], "identity", rng)

    def features(self, cond, reverse_cells=False) -> Tensor:
        """Per-step features, shape (B, N, 4)."""
        cond = np.asarray(cond, dtype=float).reshape(-1, self.cond_lower.size)
        cn = normalize(cond, self.cond_lower, self.cond_upper)
        e = self.encoder(cn)
        B, N = cond.shape[0], self.n_steps
        steps = []
        for t in range(N):
            tt = Tensor(np.full((B, 1), t / max(N - 1, 1)))
            steps.append(concat([e, tt], axis=1))
        outs = self.cells(steps, reverse_cells=reverse_cells)
        dec = [self.decoder(h) for h in outs]
        return nn.stack(dec, axis=1)

    def loss(self, cond, target_features) -> Tensor:
        return nn.mse(self.features(cond), target_features)

    def forward(self, cond, reverse_cells=False) -> np.ndarray:
        """Spherical controls (B, N, 3) clamped to their boxes."""
        return features_to_controls(self.features(cond, reverse_cells).data, t_max=self.t_max)

    __call__ = forward

    def manifest(self) -> dict:
        return {
            "kind": "lstm",
            "arch": self.arch,
            "cond_lower": self.cond_lower.tolist(),
            "cond_upper": self.cond_upper.tolist(),
            "n_steps": self.n_steps,
            "t_max": self.t_max,
        }


def lstm_forward(model: LstmModel, cond) -> np.ndarray:
    return model.forward(cond)


def train_lstm(cond, controls, cond_lower, cond_upper, arch: dict, cfg: TrainConfig,
               t_max=1.0) -> TrainResult:
    """Fit the control LSTM by Adam on the feature MSE."""
    cond = np.asarray(cond, dtype=float)
    controls = np.asarray(controls, dtype=float)
    if cond.ndim != 2 or cond.shape[0] == 0:
        raise ValueError("training data is empty")
    if controls.shape[0] != cond.shape[0] or controls.ndim != 3 or controls.shape[2] != 3:
        raise ValueError("controls must have shape (n, N, 3) matching the conditions")
    rng = np.random.default_rng(cfg.seed)
    model = LstmModel(arch, cond_lower, cond_upper, controls.shape[1], t_max, rng)
    model.train()
    target = controls_to_features(controls, t_max=t_max)
    opt = nn.Adam(model.parameters(), lr=cfg.lr)
    history = []
    start = time.perf_counter()
    epochs = 0
    for _ in range(cfg.epochs):
        tot, count = 0.0, 0
        for idx in _batches(len(cond), cfg.batch_size, rng):
            model.zero_grad()
            loss = model.loss(cond[idx], target[idx])
            loss.backward()
            opt.step()
            tot += loss.item() * idx.size
            count += idx.size
        history.append(tot / count)
        epochs += 1
        if time.perf_counter() - start > cfg.max_time_s:
            break
    model.eval()
    return TrainResult(model, history, time.perf_counter() - start, epochs)


def sample_full(cvae: CvaeModel, lstm: LstmModel, alpha, n, rng) -> np.ndarray:
    """Full decision vectors: CVAE draws (tau_s, tau_i, tau_f, m_f), the LSTM adds controls."""
    head = cvae.sample(alpha, n, rng)
    cond = np.column_stack([head, np.full(n, float(alpha))])
    ctrl = lstm.forward(cond)
    return np.column_stack([head, ctrl.reshape(n, -1)])


# ---------------------------------------------------------------------------
# checkpoints


def save_model(path, model, rng_seed=None, metadata=None):
    nn.save_checkpoint(path, model, model.manifest(), rng_seed, metadata)


def load_model(path):
    doc = nn.read_checkpoint(path)
    m = doc["architecture"]
    kind = m.get("kind")
    if kind in ("cvae", "vanilla-cvae"):
        model = CvaeModel(m["arch"], m["lower"], m["upper"], tuple(m["alpha_range"]), m["prior"],
                          np.random.default_rng(0), m.get("batch_norm", False))
    elif kind == "lstm":
        model = LstmModel(m["arch"], m["cond_lower"], m["cond_upper"], m["n_steps"], m["t_max"],
                          np.random.default_rng(0))
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    model.load_state_arrays(doc["parameters"])
    model.eval()
    return model
