"""Gaussian variational autoencoder on MFCC vectors, trained with Adam.

Encoder and decoder each have one tanh hidden layer feeding two affine
heads (mean and log-variance).  Gradients are derived by hand; see
``elbo_and_grad``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import TrainingError, ValidationError
from .rng import generator

LOGVAR_CLAMP = 10.0
_LOG2PI = math.log(2.0 * math.pi)

# (name, fan_in attr, fan_out attr); biases follow each weight
_LAYERS = (
    ("enc_w1", "input_dim", "hidden_dim"),
    ("enc_w_mu", "hidden_dim", "latent_dim"),
    ("enc_w_logvar", "hidden_dim", "latent_dim"),
    ("dec_w1", "latent_dim", "hidden_dim"),
    ("dec_w_mu", "hidden_dim", "input_dim"),
    ("dec_w_logvar", "hidden_dim", "input_dim"),
)
PARAM_NAMES = tuple(n for w, _, _ in _LAYERS for n in (w, w.replace("_w", "_b", 1)))


@dataclass(frozen=True)
class VaeConfig:
    input_dim: int = 13
    hidden_dim: int = 10
    latent_dim: int = 3
    init_std: float = 0.01
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 200
    batch_size: int = 128
    n_samples: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.latent_dim < self.input_dim:
            raise ValidationError("need 1 <= latent_dim < input_dim")
        if self.hidden_dim < 1:
            raise ValidationError("hidden_dim must be >= 1")
        for name in ("init_std", "learning_rate", "adam_eps"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValidationError("Adam betas must lie in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.n_samples < 1:
            raise ValidationError("epochs, batch_size and n_samples must be >= 1")


@dataclass
class VaeModel:
    params: dict
    config: VaeConfig
    training_elbo_trace: list = field(default_factory=list)

    def shapes_ok(self) -> bool:
        return all(self.params[k].shape == s for k, s in param_shapes(self.config).items())

    def to_json(self) -> str:
        return json.dumps({
            "config": asdict(self.config),
            "params": {k: {"shape": list(v.shape), "values": v.ravel().tolist()}
                       for k, v in self.params.items()},
            "training_elbo_trace": [float(t) for t in self.training_elbo_trace],
        })

    @classmethod
    def from_json(cls, text: str) -> "VaeModel":
        d = json.loads(text)
        cfg = VaeConfig(**d["config"])
        params = {k: np.asarray(v["values"], dtype=np.float64).reshape(v["shape"])
                  for k, v in d["params"].items()}
        model = cls(params, cfg, list(d.get("training_elbo_trace", [])))
        if set(params) != set(PARAM_NAMES) or not model.shapes_ok():
            raise ValidationError("VAE parameter shapes do not match config")
        return model


def param_shapes(cfg: VaeConfig) -> dict:
    shapes = {}
    for w, fan_in, fan_out in _LAYERS:
        a, b = getattr(cfg, fan_in), getattr(cfg, fan_out)
        shapes[w] = (a, b)
        shapes[w.replace("_w", "_b", 1)] = (b,)
    return shapes


def init_params(cfg: VaeConfig) -> dict:
    """Weights from N(0, init_std^2), biases zero."""
    rng = generator(cfg.seed, 0xA11)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if "_w" in name:
            params[name] = rng.normal(0.0, cfg.init_std, size=shape)
        else:
            params[name] = np.zeros(shape)
    return params


def zero_model(cfg: VaeConfig) -> VaeModel:
    return VaeModel({k: np.zeros(s) for k, s in param_shapes(cfg).items()}, cfg)


def _check_dim(model, X):
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != model.config.input_dim:
        raise ValidationError(
            f"input dimension {X.shape[-1]} != VAE input_dim {model.config.input_dim}"
        )
    return X


def _encode(p, X):
    h = np.tanh(X @ p["enc_w1"] + p["enc_b1"])
    return h, h @ p["enc_w_mu"] + p["enc_b_mu"], h @ p["enc_w_logvar"] + p["enc_b_logvar"]


def encode(model: VaeModel, x):
    """Posterior mean and log-variance for one vector or a batch of rows."""
    X = _check_dim(model, x)
    _, mu, lv = _encode(model.params, X)
    return mu, lv


def latent_features(model: VaeModel, features) -> np.ndarray:
    """Encoder means as the re-represented features (no sampling)."""
    X = _check_dim(model, np.atleast_2d(features))
    return _encode(model.params, X)[1]


def kl_to_standard_normal(mu, logvar):
    """Closed-form ``KL(N(mu, diag exp(logvar)) || N(0, I))`` over the last axis."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    # expm1(v) - v >= 0 per element; the clamp only absorbs rounding
    return 0.5 * np.sum(mu * mu + np.maximum(np.expm1(logvar) - logvar, 0.0), axis=-1)


def gaussian_log_density(x, mean, logvar):
    return -0.5 * np.sum(_LOG2PI + logvar + (x - mean) ** 2 * np.exp(-logvar), axis=-1)


def _forward(p, X, eps):
    h, mu, lv = _encode(p, X)
    s = np.exp(0.5 * lv)
    z = mu + s * eps
    g = np.tanh(z @ p["dec_w1"] + p["dec_b1"])
    mx = g @ p["dec_w_mu"] + p["dec_b_mu"]
    lvx_raw = g @ p["dec_w_logvar"] + p["dec_b_logvar"]
    lvx = np.clip(lvx_raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)
    kl = kl_to_standard_normal(mu, lv)
    rec = gaussian_log_density(X, mx, lvx)
    cache = (h, mu, lv, s, z, g, mx, lvx_raw, lvx)
    return rec - kl, kl, rec, cache


def elbo(model: VaeModel, x, noise) -> float:
    """Single-sample ELBO of one vector with explicit standard-normal noise.

    ``z = mu + exp(logvar / 2) * noise``; the KL term is closed form and the
    reconstruction term is the decoder's diagonal-Gaussian log-density.
    """
    X = _check_dim(model, np.atleast_2d(x))
    eps = np.atleast_2d(np.asarray(noise, dtype=np.float64))
    if eps.shape[-1] != model.config.latent_dim:
        raise ValidationError("noise dimension must equal latent_dim")
    with np.errstate(over="ignore", invalid="ignore"):
        value, kl, rec, _ = _forward(model.params, X, eps)
    for term, v in (("kl", kl), ("reconstruction", rec)):
        if not np.all(np.isfinite(v)):
            raise TrainingError(f"non-finite {term} term", term=term)
    return float(value[0]) if value.size == 1 else value


def elbo_and_grad(params: dict, X, eps, weights=None):
    """Per-row ELBO and the gradient of ``sum_i weights_i * elbo_i``.

    ``weights`` defaults to ones.  Returns ``(elbo_rows, grads)`` with
    ``grads`` keyed like ``params``.
    """
    X = np.asarray(X, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    value, _, _, (h, mu, lv, s, z, g, mx, lvx_raw, lvx) = _forward(params, X, eps)
    w = np.ones(X.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    wc = w[:, None]

    inv = np.exp(-lvx)
    r = X - mx
    d_mx = wc * r * inv
    inside = (lvx_raw >= -LOGVAR_CLAMP) & (lvx_raw <= LOGVAR_CLAMP)
    d_lvx = wc * (-0.5 * (1.0 - r * r * inv)) * inside

    grads = {
        "dec_w_mu": g.T @ d_mx, "dec_b_mu": d_mx.sum(0),
        "dec_w_logvar": g.T @ d_lvx, "dec_b_logvar": d_lvx.sum(0),
    }
    d_a2 = (d_mx @ params["dec_w_mu"].T + d_lvx @ params["dec_w_logvar"].T) * (1.0 - g * g)
    grads["dec_w1"] = z.T @ d_a2
    grads["dec_b1"] = d_a2.sum(0)
    d_z = d_a2 @ params["dec_w1"].T

    # -KL contributes -mu and -(exp(lv) - 1) / 2
    d_mu = d_z - wc * mu
    d_lv = d_z * eps * 0.5 * s - wc * 0.5 * (np.exp(lv) - 1.0)
    grads["enc_w_mu"] = h.T @ d_mu
    grads["enc_b_mu"] = d_mu.sum(0)
    grads["enc_w_logvar"] = h.T @ d_lv
    grads["enc_b_logvar"] = d_lv.sum(0)
    d_a1 = (d_mu @ params["enc_w_mu"].T + d_lv @ params["enc_w_logvar"].T) * (1.0 - h * h)
    grads["enc_w1"] = X.T @ d_a1
    grads["enc_b1"] = d_a1.sum(0)
    return value, grads


class Adam:
    """Adam on a dict of arrays; ``step`` ascends the supplied gradient."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            p += self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def epoch_noise(cfg: VaeConfig, epoch: int, n: int) -> np.ndarray:
    """Noise for epoch ``epoch``: row i belongs to data point i.

    Shape ``(n_samples, n, latent_dim)``; drawn from the stream
    ``(seed, epoch)`` so it does not depend on batch order.
    """
    return generator(cfg.seed, 0xE0, epoch).standard_normal((cfg.n_samples, n, cfg.latent_dim))


def train(features, cfg: VaeConfig) -> VaeModel:
    """Maximize the mean ELBO by minibatch Adam.

    Raises
    ------
    TrainingError
        If a batch ELBO or gradient becomes non-finite.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValidationError("training features must be a non-empty matrix")
    if X.shape[1] != cfg.input_dim:
        raise ValidationError(f"feature width {X.shape[1]} != input_dim {cfg.input_dim}")
    if not np.isfinite(X).all():
        raise ValidationError("non-finite training features")
    n = X.shape[0]
    S = cfg.n_samples
    params = init_params(cfg)
    opt = Adam(params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    trace = []
    for epoch in range(cfg.epochs):
        noise = epoch_noise(cfg, epoch, n)
        order = generator(cfg.seed, 0x0D, epoch).permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            Xb = np.tile(X[idx], (S, 1))
            eb = noise[:, idx, :].reshape(S * idx.size, cfg.latent_dim)
            weight = np.full(Xb.shape[0], 1.0 / (S * idx.size))
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                vals, grads = elbo_and_grad(params, Xb, eb, weight)
            finite = np.all(np.isfinite(vals)) and all(np.all(np.isfinite(g)) for g in grads.values())
            if not finite:
                raise TrainingError(
                    f"VAE diverged at epoch {epoch}, batch {b}", epoch=epoch, batch=b
                )
            total += float(vals.sum()) / S
            opt.step(grads)
        trace.append(total / n)
    return VaeModel(params, cfg, trace)
