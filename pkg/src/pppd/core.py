"""Shared building blocks: random inputs, models, limit states and datasets."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special, stats


class InputError(ValueError):
    """Bad shapes or values handed to a model or limit state."""


class NumericalError(ArithmeticError):
    """A computation produced non-finite values or failed to converge."""


# ---------------------------------------------------------------------------
# marginal distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Marginal:
    """One-dimensional distribution reachable from a standard normal.

    ``kind`` is one of ``standard-normal``, ``normal``, ``lognormal`` or
    ``discrete-uniform``. Parameters: ``normal`` takes (mean, std),
    ``lognormal`` takes (mean, cov) of the lognormal variable itself,
    ``discrete-uniform`` takes the tuple of admissible values.
    """

    kind: str
    params: tuple = ()

    def __post_init__(self):
        if self.kind == "standard-normal":
            return
        if self.kind == "normal":
            mu, sd = self.params
            if not sd > 0:
                raise InputError("normal marginal needs std > 0")
        elif self.kind == "lognormal":
            mean, cov = self.params
            if not (mean > 0 and cov > 0):
                raise InputError("lognormal marginal needs mean > 0 and cov > 0")
        elif self.kind == "discrete-uniform":
            if len(self.params) == 0:
                raise InputError("discrete-uniform marginal needs at least one value")
        else:
            raise InputError(f"unknown marginal kind {self.kind!r}")

    @classmethod
    def standard_normal(cls):
        return cls("standard-normal")

    @classmethod
    def normal(cls, mean, std):
        return cls("normal", (float(mean), float(std)))

    @classmethod
    def lognormal(cls, mean, cov):
        return cls("lognormal", (float(mean), float(cov)))

    @classmethod
    def discrete_uniform(cls, values):
        return cls("discrete-uniform", tuple(float(v) for v in values))

    def _log_params(self):
        mean, cov = self.params
        s2 = np.log1p(cov * cov)
        return np.log(mean) - 0.5 * s2, np.sqrt(s2)

    def to_physical(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "standard-normal":
            return u.copy()
        if self.kind == "normal":
            mu, sd = self.params
            return mu + sd * u
        if self.kind == "lognormal":
            m, s = self._log_params()
            return np.exp(m + s * u)
        values = np.asarray(self.params)
        n = len(values)
        # bin index from the normal CDF; boundaries have probability zero
        idx = np.floor(special.ndtr(u) * n).astype(int)
        return values[np.clip(idx, 0, n - 1)]

    def to_standard(self, x):
        """Inverse of :meth:`to_physical`; discrete values map to bin centres."""
        x = np.asarray(x, dtype=float)
        if self.kind == "standard-normal":
            return x.copy()
        if self.kind == "normal":
            mu, sd = self.params
            return (x - mu) / sd
        if self.kind == "lognormal":
            m, s = self._log_params()
            return (np.log(x) - m) / s
        values = np.asarray(self.params)
        idx = np.searchsorted(values, x)
        idx = np.clip(idx, 0, len(values) - 1)
        return special.ndtri((idx + 0.5) / len(values))

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "standard-normal":
            return stats.norm.logpdf(x)
        if self.kind == "normal":
            return stats.norm.logpdf(x, *self.params)
        if self.kind == "lognormal":
            m, s = self._log_params()
            return stats.lognorm.logpdf(x, s, scale=np.exp(m))
        values = np.asarray(self.params)
        return np.where(np.isin(x, values), -np.log(len(values)), -np.inf)

    def to_json(self):
        return {"kind": self.kind, "params": list(self.params)}

    @classmethod
    def from_json(cls, obj):
        return cls(obj["kind"], tuple(obj.get("params", ())))


@dataclass(frozen=True)
class RandomInputSpec:
    """Independent basic random variables, stored as runs of equal marginals."""

    blocks: tuple  # ((Marginal, count), ...)

    def __post_init__(self):
        if self.dims < 1:
            raise InputError("RandomInputSpec needs dims >= 1")
        for m, c in self.blocks:
            if c < 1:
                raise InputError("block counts must be >= 1")

    @classmethod
    def from_blocks(cls, blocks):
        return cls(tuple((m, int(c)) for m, c in blocks))

    @classmethod
    def from_marginals(cls, marginals: Sequence[Marginal]):
        return cls(tuple((m, 1) for m in marginals))

    @classmethod
    def standard(cls, dims):
        return cls(((Marginal.standard_normal(), int(dims)),))

    @property
    def dims(self) -> int:
        return int(sum(c for _, c in self.blocks))

    @property
    def marginals(self):
        out = []
        for m, c in self.blocks:
            out.extend([m] * c)
        return out

    def _apply(self, arr, fn_name):
        arr = np.asarray(arr, dtype=float)
        if arr.shape[-1] != self.dims:
            raise InputError(f"expected last dimension {self.dims}, got {arr.shape[-1]}")
        out = np.empty_like(arr)
        start = 0
        for m, c in self.blocks:
            out[..., start:start + c] = getattr(m, fn_name)(arr[..., start:start + c])
            start += c
        return out

    def to_physical(self, u):
        return self._apply(u, "to_physical")

    def to_standard(self, x):
        return self._apply(x, "to_standard")

    def to_json(self):
        return [{"marginal": m.to_json(), "count": c} for m, c in self.blocks]

    @classmethod
    def from_json(cls, obj):
        return cls.from_blocks([(Marginal.from_json(b["marginal"]), b["count"]) for b in obj])


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

class StochasticModel:
    """Deterministic map from basic variables ``x`` to a response vector ``y``.

    Subclasses set ``input_spec`` and ``response_dim`` and override
    :meth:`evaluate_batch`; ``x`` is always in physical units.
    """

    model_id = "model"
    input_spec: RandomInputSpec
    response_dim: int

    def params(self) -> dict:
        return {}

    def layout(self):
        """Channel names and time grid of the stacked response vector."""
        names = getattr(self, "channel_names", ["y"])
        n = self.response_dim // len(names)
        t = getattr(self, "t", np.arange(n, dtype=float))
        return names, np.asarray(t)[:n]

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim != 1:
            raise InputError("evaluate expects a single input vector")
        return self.evaluate_batch(x[None, :])[0]

    def evaluate_batch(self, X):
        raise NotImplementedError

    def _check_batch(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.input_spec.dims:
            raise InputError(
                f"{self.model_id}: expected {self.input_spec.dims} inputs, got {X.shape[1]}")
        return X


class FunctionModel(StochasticModel):
    """Wrap a vectorised python callable ``fn(X) -> Y`` as a model."""

    def __init__(self, fn, input_spec, response_dim, model_id="function"):
        self.fn = fn
        self.input_spec = input_spec
        self.response_dim = int(response_dim)
        self.model_id = model_id

    def evaluate_batch(self, X):
        X = self._check_batch(X)
        Y = np.asarray(self.fn(X), dtype=float).reshape(len(X), self.response_dim)
        return Y


def evaluate_model(model: StochasticModel, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (model.input_spec.dims,):
        raise InputError(f"input length {x.shape} does not match dims {model.input_spec.dims}")
    y = model.evaluate(x)
    if y.shape != (model.response_dim,):
        raise InputError(f"model returned {y.shape}, expected ({model.response_dim},)")
    return y


def evaluate_many(model: StochasticModel, X, batch_size=4096):
    """Evaluate rows of ``X`` in fixed-size batches (order preserved)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.empty((len(X), model.response_dim))
    for s in range(0, len(X), batch_size):
        out[s:s + batch_size] = model.evaluate_batch(X[s:s + batch_size])
    return out


# ---------------------------------------------------------------------------
# limit states
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LimitState:
    """Performance state ``{y : g_fn(y) - shift <= 0}``.

    ``g_fn`` acts on the last axis so it can be applied to a batch of
    responses at once. ``spec`` is a JSON-friendly description used when
    the state is persisted; it is informational only.
    """

    g_fn: Callable
    shift: float = 0.0
    spec: dict = field(default_factory=dict)

    def with_shift(self, shift):
        return LimitState(self.g_fn, float(shift), self.spec)

    def raw(self, y):
        g = np.asarray(self.g_fn(np.asarray(y, dtype=float)), dtype=float)
        if not np.all(np.isfinite(g)):
            raise NumericalError("limit-state function returned non-finite values")
        return g

    def value(self, y):
        return self.raw(y) - self.shift

    def contains(self, y):
        return self.value(y) <= 0

    @property
    def is_full_space(self):
        return self.spec.get("kind") == "full"

    @classmethod
    def full_space(cls):
        return cls(_full_space, 0.0, {"kind": "full"})

    @classmethod
    def max_threshold(cls, c):
        """``c - max|y|``: the response magnitude exceeds ``c`` somewhere."""
        c = float(c)
        return cls(lambda y: c - np.max(np.abs(y), axis=-1), 0.0, {"kind": "max-abs", "threshold": c})

    @classmethod
    def linear(cls, beta, a=None):
        """``beta - a.y/|a|`` (``a`` defaults to the first coordinate)."""
        beta = float(beta)
        if a is None:
            return cls(lambda y: beta - y[..., 0], 0.0, {"kind": "linear", "threshold": beta})
        a = np.asarray(a, dtype=float)
        a = a / np.linalg.norm(a)
        return cls(lambda y: beta - y @ a, 0.0,
                   {"kind": "linear", "threshold": beta, "direction": a.tolist()})

    @classmethod
    def from_spec(cls, spec):
        kind = spec.get("kind", "full")
        if kind == "full":
            return cls.full_space()
        if kind == "max-abs":
            return cls.max_threshold(spec["threshold"])
        if kind == "linear":
            return cls.linear(spec["threshold"], spec.get("direction"))
        raise InputError(f"unknown limit-state kind {kind!r}")


def _full_space(y):
    return -np.ones(np.shape(y)[:-1])


def limit_state_value(ls: LimitState, y):
    return float(ls.value(y))


def indicator_in_state(ls: LimitState, y):
    return int(limit_state_value(ls, y) <= 0)


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

@dataclass
class PairedDataset:
    """Aligned ``(x, y)`` samples with limit-state values and provenance."""

    x: np.ndarray
    y: np.ndarray
    g_values: np.ndarray
    meta: dict = field(default_factory=dict)
    u: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        self.g_values = np.asarray(self.g_values, dtype=float).ravel()
        n = len(self.x)
        if len(self.y) != n or len(self.g_values) != n:
            raise InputError("x, y and g_values must have the same number of rows")
        if self.u is not None:
            self.u = np.atleast_2d(np.asarray(self.u, dtype=float))
            if len(self.u) != n:
                raise InputError("u must have the same number of rows as x")

    def __len__(self):
        return len(self.x)

    def subset(self, idx):
        idx = np.asarray(idx)
        return PairedDataset(self.x[idx], self.y[idx], self.g_values[idx], dict(self.meta),
                             None if self.u is None else self.u[idx])

    def save(self, path, packed=False):
        os.makedirs(path, exist_ok=True)
        _write_matrix(os.path.join(path, "x"), self.x, packed=False)
        _write_matrix(os.path.join(path, "y"), self.y, packed=packed)
        np.savetxt(os.path.join(path, "g.csv"), self.g_values, fmt="%.17g")
        if self.u is not None:
            _write_matrix(os.path.join(path, "u"), self.u, packed=False)
        with open(os.path.join(path, "meta.json"), "w") as fh:
            json.dump(_jsonable(self.meta), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path):
        x = read_matrix(os.path.join(path, "x"))
        y = read_matrix(os.path.join(path, "y"))
        g = np.atleast_1d(np.loadtxt(os.path.join(path, "g.csv"), ndmin=1))
        u = None
        if os.path.exists(os.path.join(path, "u.csv")) or os.path.exists(os.path.join(path, "u.bin")):
            u = read_matrix(os.path.join(path, "u"))
        meta = {}
        if os.path.exists(os.path.join(path, "meta.json")):
            with open(os.path.join(path, "meta.json")) as fh:
                meta = json.load(fh)
        return cls(x, y, g, meta, u)


def _write_matrix(stem, arr, packed):
    arr = np.atleast_2d(arr)
    if packed:
        # row-major float64 payload plus a small JSON header
        np.ascontiguousarray(arr, dtype="<f8").tofile(stem + ".bin")
        with open(stem + ".bin.json", "w") as fh:
            json.dump({"rows": arr.shape[0], "cols": arr.shape[1], "dtype": "<f8",
                       "order": "row-major"}, fh)
        if os.path.exists(stem + ".csv"):
            os.remove(stem + ".csv")
    else:
        np.savetxt(stem + ".csv", arr, fmt="%.17g", delimiter=",")


def read_matrix(stem):
    """Read ``<stem>.csv`` or the packed ``<stem>.bin`` + header."""
    if stem.endswith(".csv") or stem.endswith(".bin"):
        stem = stem[:-4]
    if os.path.exists(stem + ".bin"):
        with open(stem + ".bin.json") as fh:
            hdr = json.load(fh)
        return np.fromfile(stem + ".bin", dtype=hdr.get("dtype", "<f8")).reshape(hdr["rows"], hdr["cols"])
    return np.loadtxt(stem + ".csv", delimiter=",", ndmin=2)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
