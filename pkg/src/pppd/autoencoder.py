"""Stacked sigmoid autoencoder trained with scaled conjugate gradients."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .core import InputError, NumericalError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AutoencoderConfig:
    """Encoder hidden sizes end with the bottleneck; the decoder mirrors them.

    ``[100, 30, 3]`` gives hidden layers 100-30-3-30-100.
    """

    layer_sizes: tuple = (100, 30, 3)
    sparsity_weight: float = 0.0
    sparsity_target: float = 0.05
    max_epochs: int = 1000
    patience: int = 50
    seed: int = 0
    fine_tune: bool = True
    fine_tune_epochs: int | None = None

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if not sizes or any(s < 1 for s in sizes):
            raise InputError("layer_sizes must be positive")
        if any(b >= a for a, b in zip(sizes, sizes[1:])):
            raise InputError("layer_sizes must be strictly decreasing")
        if self.sparsity_weight < 0:
            raise InputError("sparsity_weight must be >= 0")
        if not 0 < self.sparsity_target < 1:
            raise InputError("sparsity_target must lie in (0, 1)")

    def to_json(self):
        return asdict(self)


@dataclass
class TrainedAutoencoder:
    weights: list
    biases: list
    y_min: np.ndarray
    y_max: np.ndarray
    constant: np.ndarray
    loss_trace: list = field(default_factory=list)
    config: AutoencoderConfig | None = None

    @property
    def n_encoder(self):
        return len(self.weights) // 2

    @property
    def bottleneck(self):
        return self.weights[self.n_encoder - 1].shape[1]

    def to_json(self):
        return {"layer_sizes": [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights],
                "weights": [w.tolist() for w in self.weights],
                "biases": [b.tolist() for b in self.biases],
                "minmax": {"min": self.y_min.tolist(), "max": self.y_max.tolist(),
                           "constant": self.constant.tolist()},
                "loss_trace": self.loss_trace,
                "config": self.config.to_json() if self.config else None}

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            obj = json.load(fh)
        cfg = AutoencoderConfig(**obj["config"]) if obj.get("config") else None
        mm = obj["minmax"]
        return cls([np.asarray(w, float) for w in obj["weights"]],
                   [np.asarray(b, float) for b in obj["biases"]],
                   np.asarray(mm["min"], float), np.asarray(mm["max"], float),
                   np.asarray(mm["constant"], bool), obj.get("loss_trace", []), cfg)


# ---------------------------------------------------------------------------
# normalisation
# ---------------------------------------------------------------------------

def minmax_normalize(Y):
    """Scale every column to [0, 1]; constant columns map to 0."""
    Y = np.asarray(Y, dtype=float)
    lo, hi = Y.min(axis=0), Y.max(axis=0)
    const = ~(hi > lo)
    span = np.where(const, 1.0, hi - lo)
    Z = (Y - lo) / span
    Z[:, const] = 0.0
    return Z, (lo, hi, const)


def minmax_denormalize(Z, consts):
    lo, hi, const = consts
    span = np.where(const, 0.0, hi - lo)
    return np.asarray(Z, dtype=float) * span + lo


# ---------------------------------------------------------------------------
# network with cost and gradient
# ---------------------------------------------------------------------------

def _init_layers(sizes, rng):
    Ws, bs = [], []
    for a, b in zip(sizes[:-1], sizes[1:]):
        r = np.sqrt(6.0 / (a + b))
        Ws.append(rng.uniform(-r, r, size=(a, b)))
        bs.append(np.zeros(b))
    return Ws, bs


def _pack(Ws, bs):
    return np.concatenate([p.ravel() for pair in zip(Ws, bs) for p in pair])


def _unpack(theta, shapes):
    Ws, bs, i = [], [], 0
    for a, b in shapes:
        Ws.append(theta[i:i + a * b].reshape(a, b)); i += a * b
        bs.append(theta[i:i + b]); i += b
    return Ws, bs


def _kl(rho, rho_hat):
    rho_hat = np.clip(rho_hat, 1e-12, 1 - 1e-12)
    return rho * np.log(rho / rho_hat) + (1 - rho) * np.log((1 - rho) / (1 - rho_hat))


def kl_sparsity(rho, activations):
    """Sum over hidden units of KL(rho || mean activation)."""
    return float(np.sum(_kl(rho, np.mean(activations, axis=0))))


class _Net:
    """Fully sigmoid feed-forward net reconstructing its own input.

    Cost: mean squared error over all entries plus ``beta`` times the KL
    sparsity penalty of every hidden layer.
    """

    def __init__(self, shapes, X, beta=0.0, rho=0.05):
        self.shapes, self.X, self.beta, self.rho = shapes, X, beta, rho

    def forward(self, theta, X=None):
        Ws, bs = _unpack(theta, self.shapes)
        acts = [self.X if X is None else X]
        for W, b in zip(Ws, bs):
            acts.append(expit(acts[-1] @ W + b))
        return acts

    def cost(self, theta):
        acts = self.forward(theta)
        c = np.mean((acts[-1] - self.X) ** 2)
        if self.beta > 0:
            c += self.beta * sum(kl_sparsity(self.rho, a) for a in acts[1:-1])
        return float(c)

    def cost_grad(self, theta):
        Ws, _ = _unpack(theta, self.shapes)
        acts = self.forward(theta)
        N = len(self.X)
        err = acts[-1] - self.X
        c = np.mean(err * err)
        delta = (2.0 / err.size) * err * acts[-1] * (1 - acts[-1])
        gW, gb = [None] * len(Ws), [None] * len(Ws)
        for L in range(len(Ws) - 1, -1, -1):
            gW[L] = acts[L].T @ delta
            gb[L] = delta.sum(axis=0)
            if L == 0:
                break
            back = delta @ Ws[L].T
            a = acts[L]
            if self.beta > 0:
                rho_hat = np.clip(a.mean(axis=0), 1e-12, 1 - 1e-12)
                c += self.beta * float(np.sum(_kl(self.rho, rho_hat)))
                back = back + self.beta * (-self.rho / rho_hat + (1 - self.rho) / (1 - rho_hat)) / N
            delta = back * a * (1 - a)
        return float(c), _pack(gW, gb)


def gradient_check(net: _Net, theta, h=1e-6):
    """Relative error between analytic and central-difference gradients."""
    _, g = net.cost_grad(theta)
    num = np.empty_like(theta)
    for i in range(len(theta)):
        e = np.zeros_like(theta); e[i] = h
        num[i] = (net.cost(theta + e) - net.cost(theta - e)) / (2 * h)
    return float(np.linalg.norm(g - num) / max(np.linalg.norm(g) + np.linalg.norm(num), 1e-300))


# ---------------------------------------------------------------------------
# scaled conjugate gradient
# ---------------------------------------------------------------------------

def scg(fun_grad, fun, theta, max_epochs=1000, patience=50, sigma0=1e-4, lambda0=1e-6, tol=1e-12):
    """Scaled conjugate gradient minimisation.

    Returns the final parameters and the cost after each accepted step (the
    first entry is the starting cost). Accepted steps never raise the cost.
    """
    w = np.array(theta, dtype=float)
    f, g = fun_grad(w)
    if not np.isfinite(f):
        raise NumericalError("cost is not finite at the starting point")
    r = -g
    p = r.copy()
    lam, lam_bar = lambda0, 0.0
    success = True
    n_w = len(w)
    trace = [f]
    best, stall = f, 0
    k = 0
    for epoch in range(max_epochs):
        k += 1
        pp = float(p @ p)
        if pp == 0:
            break
        if success:
            sigma = sigma0 / np.sqrt(pp)
            _, g_s = fun_grad(w + sigma * p)
            s = (g_s + r) / sigma
            delta = float(p @ s)
        delta = delta + (lam - lam_bar) * pp
        if delta <= 0:
            lam_bar = 2.0 * (lam - delta / pp)
            delta = -delta + lam * pp
            lam = lam_bar
        mu = float(p @ r)
        alpha = mu / delta
        w_new = w + alpha * p
        f_new = fun(w_new)
        if not np.isfinite(f_new):
            raise NumericalError(f"cost became non-finite at epoch {epoch}")
        Delta = 2.0 * delta * (f - f_new) / (mu * mu) if mu != 0 else -1.0
        if Delta >= 0 and f_new <= f:
            w, f = w_new, f_new
            _, g = fun_grad(w)
            r_new = -g
            lam_bar = 0.0
            success = True
            if k % n_w == 0:
                p = r_new.copy()
            else:
                beta = (float(r_new @ r_new) - float(r_new @ r)) / mu
                p = r_new + beta * p
            r = r_new
            if Delta >= 0.75:
                lam = max(lam / 4.0, 1e-15)
            trace.append(f)
        else:
            lam_bar = lam
            success = False
        if Delta < 0.25:
            lam = min(lam + delta * (1 - Delta) / pp, 1e100)
        if float(r @ r) <= tol * tol:
            break
        if f < best * (1 - 1e-9):
            best, stall = f, 0
        else:
            stall += 1
            if stall >= patience:
                break
    return w, trace


def _train_net(X, shapes, Ws, bs, cfg, epochs):
    net = _Net(shapes, X, cfg.sparsity_weight, cfg.sparsity_target)
    theta, trace = scg(net.cost_grad, net.cost, _pack(Ws, bs), epochs, cfg.patience)
    Ws, bs = _unpack(theta, shapes)
    return [W.copy() for W in Ws], [b.copy() for b in bs], trace


def train_layerwise(Y, cfg: AutoencoderConfig = AutoencoderConfig()):
    """Greedy pretraining of single-hidden-layer autoencoders, then optional
    end-to-end fine tuning of the stack."""
    Y = np.asarray(Y, dtype=float)
    if len(Y) < 10 * cfg.layer_sizes[-1]:
        raise InputError(f"need at least {10 * cfg.layer_sizes[-1]} samples")
    if cfg.layer_sizes[0] >= Y.shape[1]:
        raise InputError("first layer must be smaller than the response dimension")
    Z, consts = minmax_normalize(Y)
    rng = np.random.default_rng(cfg.seed)
    enc_W, enc_b, dec_W, dec_b = [], [], [], []
    data = Z
    trace = []
    for size in cfg.layer_sizes:
        d = data.shape[1]
        shapes = [(d, size), (size, d)]
        Ws, bs = _init_layers([d, size, d], rng)
        Ws, bs, tr = _train_net(data, shapes, Ws, bs, cfg, cfg.max_epochs)
        log.info("layer %d->%d: loss %.3e after %d steps", d, size, tr[-1], len(tr) - 1)
        trace.append({"layer": f"{d}-{size}", "loss": tr})
        enc_W.append(Ws[0]); enc_b.append(bs[0])
        dec_W.insert(0, Ws[1]); dec_b.insert(0, bs[1])
        data = expit(data @ Ws[0] + bs[0])
    ae = TrainedAutoencoder(enc_W + dec_W, enc_b + dec_b, consts[0], consts[1], consts[2],
                            trace, cfg)
    if cfg.fine_tune:
        ae = fine_tune(ae, Y, cfg)
    return ae


def _stack_shapes(ae):
    return [W.shape for W in ae.weights]


def reconstruction_mse(ae, Y):
    Z, _ = _normalize_with(ae, Y)
    net = _Net(_stack_shapes(ae), Z)
    return float(np.mean((net.forward(_pack(ae.weights, ae.biases))[-1] - Z) ** 2))


def fine_tune(ae: TrainedAutoencoder, Y, cfg: AutoencoderConfig = AutoencoderConfig(), epochs=None):
    """End-to-end SCG on the stacked network; keeps the old one if it is not improved."""
    epochs = epochs if epochs is not None else (cfg.fine_tune_epochs or cfg.max_epochs)
    if epochs <= 0:
        return ae
    Z, _ = _normalize_with(ae, Y)
    shapes = _stack_shapes(ae)
    net = _Net(shapes, Z, cfg.sparsity_weight, cfg.sparsity_target)
    theta0 = _pack(ae.weights, ae.biases)
    f0 = net.cost(theta0)
    theta, tr = scg(net.cost_grad, net.cost, theta0, epochs, cfg.patience)
    if tr[-1] > f0:
        return ae
    Ws, bs = _unpack(theta, shapes)
    return TrainedAutoencoder([W.copy() for W in Ws], [b.copy() for b in bs], ae.y_min, ae.y_max,
                              ae.constant, ae.loss_trace + [{"layer": "fine-tune", "loss": tr}],
                              ae.config)


def _normalize_with(ae, Y):
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if Y.shape[1] != len(ae.y_min):
        raise InputError(f"expected {len(ae.y_min)} response columns, got {Y.shape[1]}")
    span = np.where(ae.constant, 1.0, ae.y_max - ae.y_min)
    Z = (Y - ae.y_min) / span
    Z[:, ae.constant] = 0.0
    return Z, span


def encode(ae: TrainedAutoencoder, Y):
    Z, _ = _normalize_with(ae, Y)
    for W, b in zip(ae.weights[:ae.n_encoder], ae.biases[:ae.n_encoder]):
        Z = expit(Z @ W + b)
    return Z[0] if np.ndim(Y) == 1 else Z


def decode(ae: TrainedAutoencoder, psi):
    H = np.atleast_2d(np.asarray(psi, dtype=float))
    if H.shape[1] != ae.bottleneck:
        raise InputError(f"expected {ae.bottleneck} features, got {H.shape[1]}")
    for W, b in zip(ae.weights[ae.n_encoder:], ae.biases[ae.n_encoder:]):
        H = expit(H @ W + b)
    Y = minmax_denormalize(H, (ae.y_min, ae.y_max, ae.constant))
    return Y[0] if np.ndim(psi) == 1 else Y
