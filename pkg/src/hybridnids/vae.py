"""Variational autoencoder anomaly detector, written directly against numpy.

The network is a stack of dense layers::

    input -> hidden_sizes (ReLU) -> {mu, logvar} heads
    z -> reversed(hidden_sizes) (ReLU) -> input (sigmoid)

Forward and backward passes are explicit so that gradients can be checked
against finite differences. Training uses Adam with an L2 penalty added to
the gradient before the moment updates.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._random import substream
from .errors import DataError, TrainingError

__all__ = [
    "AnomalyThreshold",
    "select_threshold",
    "layer_shapes",
    "init_params",
    "encode",
    "reparameterize",
    "decode",
    "vae_loss",
    "loss_and_grads",
    "Adam",
    "VariationalAutoencoder",
    "save_vae",
    "load_vae",
]

VAE_FORMAT = "hybridnids.vae"
VAE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class AnomalyThreshold:
    tau: float
    loss_mean: float
    loss_std: float
    k: float = 1.0


def select_threshold(train_losses, k: float = 1.0) -> AnomalyThreshold:
    """``tau = mean + k * std`` of the training losses (population std)."""
    losses = np.asarray(train_losses, dtype=float).ravel()
    if losses.size == 0:
        raise DataError("cannot select a threshold from an empty loss set")
    mean = math.fsum(losses) / losses.size
    std = math.sqrt(math.fsum((losses - mean) ** 2) / losses.size)
    return AnomalyThreshold(mean + k * std, mean, std, k)


def layer_shapes(input_dim, hidden_sizes, latent_dim):
    """Ordered ``name -> (fan_in, fan_out)`` for every dense layer."""
    shapes = {}
    prev = input_dim
    for i, h in enumerate(hidden_sizes):
        shapes[f"enc{i}"] = (prev, h)
        prev = h
    shapes["mu"] = (prev, latent_dim)
    shapes["logvar"] = (prev, latent_dim)
    prev = latent_dim
    for i, h in enumerate(reversed(hidden_sizes)):
        shapes[f"dec{i}"] = (prev, h)
        prev = h
    shapes["out"] = (prev, input_dim)
    return shapes


def init_params(input_dim=69, hidden_sizes=(512, 512, 1024), latent_dim=100, seed=0,
                dtype=np.float32):
    """Uniform fan-based weights in +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = {}
    for name, (fan_in, fan_out) in layer_shapes(input_dim, hidden_sizes, latent_dim).items():
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        params[f"{name}.W"] = rng.uniform(-bound, bound, (fan_in, fan_out)).astype(dtype)
        params[f"{name}.b"] = np.zeros(fan_out, dtype=dtype)
    return params


def _n_hidden(params):
    return sum(1 for k in params if k.startswith("enc") and k.endswith(".W"))


def _sigmoid(a):
    out = np.exp(-np.logaddexp(0, -a))
    # keep the output strictly inside (0, 1) at the dtype's precision
    fi = np.finfo(out.dtype)
    return np.clip(out, fi.tiny, 1 - fi.epsneg)


def _encode(params, X):
    acts = [X]
    h = X
    for i in range(_n_hidden(params)):
        h = np.maximum(h @ params[f"enc{i}.W"] + params[f"enc{i}.b"], 0)
        acts.append(h)
    mu = h @ params["mu.W"] + params["mu.b"]
    logvar = h @ params["logvar.W"] + params["logvar.b"]
    return mu, logvar, acts


def _decode(params, Z):
    acts = [Z]
    g = Z
    for i in range(_n_hidden(params)):
        g = np.maximum(g @ params[f"dec{i}.W"] + params[f"dec{i}.b"], 0)
        acts.append(g)
    return _sigmoid(g @ params["out.W"] + params["out.b"]), acts


def encode(params, X):
    """Latent mean and log-variance for each row of ``X``."""
    mu, logvar, _ = _encode(params, np.atleast_2d(X))
    return mu, logvar


def reparameterize(mu, logvar, noise):
    return mu + np.exp(0.5 * logvar) * noise


def decode(params, Z):
    return _decode(params, np.atleast_2d(Z))[0]


def vae_loss(X, Xhat, mu, logvar, kl_weight):
    """Batch means of ``(total, recon, kl)``.

    Per sample, recon is the mean squared error over input dimensions and
    kl the KL divergence to N(0, I) averaged over latent dimensions.
    """
    recon = np.mean((X - Xhat) ** 2, axis=-1)
    kl = -0.5 * np.mean(1 + logvar - mu ** 2 - np.exp(logvar), axis=-1)
    recon, kl = float(np.mean(recon)), float(np.mean(kl))
    return recon + kl_weight * kl, recon, kl


def loss_and_grads(params, X, noise, kl_weight):
    """Forward pass plus exact gradients of the batch-mean total loss."""
    n, d = X.shape
    k = noise.shape[1]
    mu, logvar, enc_acts = _encode(params, X)
    std = np.exp(0.5 * logvar)
    z = mu + std * noise
    Xhat, dec_acts = _decode(params, z)
    total, recon, kl = vae_loss(X, Xhat, mu, logvar, kl_weight)

    grads = {}
    n_hidden = len(enc_acts) - 1
    d_out = (2.0 / (n * d)) * (Xhat - X) * Xhat * (1 - Xhat)
    grads["out.W"] = dec_acts[-1].T @ d_out
    grads["out.b"] = d_out.sum(axis=0)
    d_g = d_out @ params["out.W"].T
    for i in reversed(range(n_hidden)):
        d_g = d_g * (dec_acts[i + 1] > 0)
        grads[f"dec{i}.W"] = dec_acts[i].T @ d_g
        grads[f"dec{i}.b"] = d_g.sum(axis=0)
        d_g = d_g @ params[f"dec{i}.W"].T

    scale = kl_weight / (n * k)
    d_mu = d_g + scale * mu
    d_logvar = d_g * noise * 0.5 * std + scale * 0.5 * (np.exp(logvar) - 1)
    h = enc_acts[-1]
    grads["mu.W"] = h.T @ d_mu
    grads["mu.b"] = d_mu.sum(axis=0)
    grads["logvar.W"] = h.T @ d_logvar
    grads["logvar.b"] = d_logvar.sum(axis=0)
    d_h = d_mu @ params["mu.W"].T + d_logvar @ params["logvar.W"].T
    for i in reversed(range(n_hidden)):
        d_h = d_h * (enc_acts[i + 1] > 0)
        grads[f"enc{i}.W"] = enc_acts[i].T @ d_h
        grads[f"enc{i}.b"] = d_h.sum(axis=0)
        if i:
            d_h = d_h @ params[f"enc{i}.W"].T
    return (total, recon, kl), grads


class Adam:
    """Adam with coupled L2 weight decay (``g += weight_decay * p``)."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name in sorted(params):
            p = params[name]
            g = grads[name]
            if self.weight_decay:
                g = g + self.weight_decay * p
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            p -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)


class VariationalAutoencoder(OutlierMixin, BaseEstimator):
    """VAE anomaly scorer trained on background traffic only.

    ``score_samples`` returns the reconstruction error of each row, decoding
    the latent mean (no sampling), so scores are deterministic. ``fit`` also
    sets ``threshold_`` from the training-set scores; ``predict`` returns 1
    for rows scoring above it.
    """

    def __init__(self, hidden_sizes=(512, 512, 1024), latent_dim=100, learning_rate=1e-3,
                 weight_decay=0.01, beta1=0.9, beta2=0.999, epsilon=1e-8, batch_size=1024,
                 epochs=20, kl_weight=0.01, threshold_k=1.0, dtype="float32",
                 random_state=0, verbose=False):
        self.hidden_sizes = hidden_sizes
        self.latent_dim = latent_dim
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.batch_size = batch_size
        self.epochs = epochs
        self.kl_weight = kl_weight
        self.threshold_k = threshold_k
        self.dtype = dtype
        self.random_state = random_state
        self.verbose = verbose

    def fit(self, X, y=None):
        X = check_array(X, dtype=self.dtype)
        if len(X) == 0:
            raise DataError("no training samples")
        for name in ("learning_rate", "weight_decay", "batch_size", "kl_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        self.n_features_in_ = X.shape[1]
        self.params_ = init_params(X.shape[1], tuple(self.hidden_sizes), self.latent_dim,
                                   substream(self.random_state, "vae-init"), np.dtype(self.dtype))
        self.train(X)
        self.training_scores_ = self.score_samples(X)
        self.threshold_ = select_threshold(self.training_scores_, self.threshold_k)
        return self

    def train(self, X):
        """Run the configured number of epochs on the current parameters."""
        opt = Adam(self.learning_rate, self.beta1, self.beta2, self.epsilon, self.weight_decay)
        shuffle_rng = substream(self.random_state, "vae-shuffle")
        noise_rng = substream(self.random_state, "vae-noise")
        n = len(X)
        bs = max(1, int(self.batch_size))
        self.loss_history_ = []
        for epoch in range(self.epochs):
            order = shuffle_rng.permutation(n)
            acc = 0.0
            for start in range(0, n, bs):
                batch = X[order[start:start + bs]]
                noise = noise_rng.standard_normal((len(batch), self.latent_dim)).astype(X.dtype)
                # overflow shows up as a non-finite loss, reported below
                with np.errstate(over="ignore", invalid="ignore"):
                    (total, _, _), grads = loss_and_grads(self.params_, batch, noise, self.kl_weight)
                if not math.isfinite(total):
                    raise TrainingError(f"loss became {total} in epoch {epoch + 1}; "
                                        "try a smaller learning rate")
                opt.step(self.params_, grads)
                acc += total * len(batch)
            self.loss_history_.append(acc / n)
            if self.verbose:
                print(f"epoch {epoch + 1}/{self.epochs} loss {acc / n:.6f}")
        return self.loss_history_

    def _check(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=self.params_["out.W"].dtype)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X

    def score_samples(self, X, chunk=4096):
        """Per-row reconstruction error (mean squared error over features)."""
        X = self._check(X)
        out = np.empty(len(X))
        for s in range(0, len(X), chunk):
            part = X[s:s + chunk]
            mu, _, _ = _encode(self.params_, part)
            out[s:s + chunk] = np.mean((part - _decode(self.params_, mu)[0]) ** 2, axis=1, dtype=float)
        return out

    def decision_function(self, X):
        check_is_fitted(self, "threshold_")
        return self.score_samples(X) - self.threshold_.tau

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(int)

    def set_threshold(self, k):
        check_is_fitted(self, "training_scores_")
        self.threshold_k = k
        self.threshold_ = select_threshold(self.training_scores_, k)
        return self.threshold_


def _array_json(a):
    return "[" + ",".join(np.ravel(a).astype(str).tolist()) + "]"


def save_vae(model: VariationalAutoencoder, path, **extra):
    """Write the model as JSON with flat, row-major parameter arrays."""
    check_is_fitted(model, "params_")
    shapes = layer_shapes(model.n_features_in_, tuple(model.hidden_sizes), model.latent_dim)
    head = {
        "format": VAE_FORMAT,
        "version": VAE_FORMAT_VERSION,
        "architecture": {
            "input_dim": model.n_features_in_,
            "hidden_sizes": list(model.hidden_sizes),
            "latent_dim": model.latent_dim,
            "hidden_activation": "relu",
            "output_activation": "sigmoid",
            "layers": {k: list(v) for k, v in shapes.items()},
        },
        "params": {k: (list(v) if isinstance(v, tuple) else v) for k, v in model.get_params().items()},
        "dtype": str(model.params_["out.W"].dtype),
        "loss_history": list(getattr(model, "loss_history_", [])),
        "threshold": vars(model.threshold_),
    }
    head.update(extra)
    with open(path, "w") as fh:
        fh.write(json.dumps(head, sort_keys=True)[:-1])
        fh.write(', "training_scores": ' + _array_json(model.training_scores_))
        fh.write(', "weights": {')
        fh.write(", ".join(f'"{k}": {_array_json(model.params_[k])}' for k in sorted(model.params_)))
        fh.write("}}\n")


def load_vae(path):
    """Return ``(model, document)``."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != VAE_FORMAT or doc.get("version") != VAE_FORMAT_VERSION:
        raise DataError(f"{path}: not a supported VAE model document")
    params = dict(doc["params"])
    params["hidden_sizes"] = tuple(params["hidden_sizes"])
    model = VariationalAutoencoder(**params)
    arch = doc["architecture"]
    dtype = np.dtype(doc["dtype"])
    model.n_features_in_ = arch["input_dim"]
    model.params_ = {}
    for name, (fan_in, fan_out) in arch["layers"].items():
        model.params_[f"{name}.W"] = np.asarray(doc["weights"][f"{name}.W"], dtype=dtype).reshape(fan_in, fan_out)
        model.params_[f"{name}.b"] = np.asarray(doc["weights"][f"{name}.b"], dtype=dtype)
    model.loss_history_ = doc["loss_history"]
    model.training_scores_ = np.asarray(doc["training_scores"], dtype=float)
    model.threshold_ = AnomalyThreshold(**doc["threshold"])
    return model, doc
