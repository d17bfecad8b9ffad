"""Benchmark stochastic systems: a four-regime signal, a randomised Lorenz
system and a three-story shear building under filtered white-noise ground
motion, plus spectral helpers used to inspect the ground motions."""

from __future__ import annotations

import numpy as np
from scipy import signal

from .core import InputError, Marginal, NumericalError, RandomInputSpec, StochasticModel


# ---------------------------------------------------------------------------
# four-regime hypothetical process
# ---------------------------------------------------------------------------

def regime_signals(t):
    """Deterministic part of each regime, shape (4, len(t))."""
    t = np.asarray(t, dtype=float)
    a, b, c = np.pi * t / 4, np.pi * t / 3, 2 * np.pi * t / 5
    return np.array([
        np.sin(a) + np.cos(b),
        np.sin(a + 0.1) + np.cos(b - 0.1),
        np.sin(b) + np.cos(c),
        np.sin(b + 0.1) + np.cos(c - 0.1),
    ])


class HypotheticalModel(StochasticModel):
    """White noise on top of one of four deterministic signals.

    Inputs are ``n_time`` standard normals followed by the regime index
    (discrete uniform on 1..4).
    """

    model_id = "hypothetical"

    def __init__(self, n_time=1000, dt=0.01, noise_scale=0.3):
        self.n_time = int(n_time)
        self.dt = float(dt)
        self.noise_scale = float(noise_scale)
        self.t = self.dt * np.arange(1, self.n_time + 1)
        self.signals = regime_signals(self.t)
        self.input_spec = RandomInputSpec.from_blocks([
            (Marginal.standard_normal(), self.n_time),
            (Marginal.discrete_uniform([1, 2, 3, 4]), 1),
        ])
        self.response_dim = self.n_time
        self.channel_names = ["y"]
        self.designated_inputs = {"x_st": self.n_time}

    def params(self):
        return {"n_time": self.n_time, "dt": self.dt, "noise_scale": self.noise_scale}

    def evaluate_batch(self, X):
        X = self._check_batch(X)
        regime = X[:, -1]
        k = np.rint(regime).astype(int)
        if np.any((k < 1) | (k > 4)) or np.any(k != regime):
            raise InputError("regime variable must be one of 1, 2, 3, 4")
        return self.signals[k - 1] + self.noise_scale * X[:, :-1]


# ---------------------------------------------------------------------------
# stochastic Lorenz system
# ---------------------------------------------------------------------------

def lorenz_rhs(state, sigma, rho, beta):
    y1, y2, y3 = state[..., 0], state[..., 1], state[..., 2]
    return np.stack([sigma * (y2 - y1), y1 * (rho - y3) - y2, y1 * y2 - beta * y3], axis=-1)


def rk4_lorenz(y0, rho, sigma=10.0, beta=8.0 / 3.0, dt=0.01, n_steps=10000):
    """Fixed-step RK4 for a batch of initial states.

    ``y0`` has shape (B, 3) and ``rho`` shape (B,). Returns (B, n_steps+1, 3).
    """
    y = np.array(y0, dtype=float, ndmin=2)
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (len(y),))
    out = np.empty((len(y), n_steps + 1, 3))
    out[:, 0] = y
    h2, h6 = dt / 2, dt / 6
    for i in range(n_steps):
        k1 = lorenz_rhs(y, sigma, rho, beta)
        k2 = lorenz_rhs(y + h2 * k1, sigma, rho, beta)
        k3 = lorenz_rhs(y + h2 * k2, sigma, rho, beta)
        k4 = lorenz_rhs(y + dt * k3, sigma, rho, beta)
        y = y + h6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[:, i + 1] = y
    if not np.all(np.isfinite(out)):
        bad = np.argwhere(~np.isfinite(out[..., 0]))[0]
        raise NumericalError(f"Lorenz state blew up at t={bad[1] * dt:.2f} (sample {bad[0]})")
    return out


class LorenzModel(StochasticModel):
    """Lorenz system with random ``rho`` and random ``(y1(0), y2(0))``.

    The response stacks the three state histories, ``[y1; y2; y3]``, each on
    the grid ``0, dt, ..., t_end``.
    """

    model_id = "lorenz"

    def __init__(self, sigma=10.0, beta=8.0 / 3.0, rho_mean=24.0, rho_std=1.0,
                 t_end=100.0, dt=0.01):
        self.sigma, self.beta = float(sigma), float(beta)
        self.rho_mean, self.rho_std = float(rho_mean), float(rho_std)
        self.t_end, self.dt = float(t_end), float(dt)
        self.n_steps = int(round(self.t_end / self.dt))
        self.t = self.dt * np.arange(self.n_steps + 1)
        self.input_spec = RandomInputSpec.from_blocks([
            (Marginal.normal(self.rho_mean, self.rho_std), 1),
            (Marginal.standard_normal(), 2),
        ])
        self.response_dim = 3 * (self.n_steps + 1)
        self.channel_names = ["y1", "y2", "y3"]
        self.designated_inputs = {"rho": 0, "y1(0)": 1, "y2(0)": 2}

    def params(self):
        return {"sigma": self.sigma, "beta": self.beta, "rho_mean": self.rho_mean,
                "rho_std": self.rho_std, "t_end": self.t_end, "dt": self.dt}

    def trajectories(self, X):
        X = self._check_batch(X)
        if not np.all(np.isfinite(X)):
            raise InputError("Lorenz inputs must be finite")
        y0 = np.column_stack([X[:, 1], X[:, 2], np.zeros(len(X))])
        return rk4_lorenz(y0, X[:, 0], self.sigma, self.beta, self.dt, self.n_steps)

    def evaluate_batch(self, X):
        traj = self.trajectories(X)
        return traj.transpose(0, 2, 1).reshape(len(traj), -1)


def lorenz_fixed_points(rho, beta=8.0 / 3.0):
    r = np.sqrt(beta * (rho - 1.0))
    return np.array([[r, r, rho - 1.0], [-r, -r, rho - 1.0]])


# ---------------------------------------------------------------------------
# ground motion
# ---------------------------------------------------------------------------

KT_DEFAULTS = dict(S0=0.0015, omega_f=15.0, zeta_f=0.6, omega_s=0.5, zeta_s=0.6)


def kanai_tajimi_psd(omega, S0=0.0015, omega_f=15.0, zeta_f=0.6, omega_s=0.5, zeta_s=0.6,
                     form="clough-penzien"):
    """Two-sided ground-acceleration PSD of the modified Kanai-Tajimi model.

    ``form="clough-penzien"`` uses the usual high-pass second filter
    ``w^4 / ((ws^2 - w^2)^2 + 4 zs^2 ws^2 w^2)``, which keeps the ground
    displacement variance finite. ``form="literal"`` drops the ``w^4``
    numerator, giving ``S(0) = S0 / ws^4``.
    """
    w = np.asarray(omega, dtype=float)
    w2 = w * w
    kt = (omega_f**4 + 4 * zeta_f**2 * omega_f**2 * w2) / (
        (omega_f**2 - w2) ** 2 + 4 * zeta_f**2 * omega_f**2 * w2)
    second = 1.0 / ((omega_s**2 - w2) ** 2 + 4 * zeta_s**2 * omega_s**2 * w2)
    if form == "clough-penzien":
        second = second * w2 * w2
    elif form != "literal":
        raise InputError(f"unknown PSD form {form!r}")
    return S0 * kt * second


class SpectralGroundMotion:
    """Sum of ``n_freq`` random-phase harmonics with Kanai-Tajimi amplitudes.

    Coefficients are ordered ``[x_1, x'_1, x_2, x'_2, ...]``.
    """

    def __init__(self, n_freq=200, omega_cut=15 * np.pi, duration=10.0, dt=0.01,
                 psd_form="clough-penzien", **psd_params):
        self.n_freq = int(n_freq)
        self.d_omega = float(omega_cut) / self.n_freq
        self.omega = self.d_omega * np.arange(1, self.n_freq + 1)
        self.psd_params = {**KT_DEFAULTS, **psd_params}
        self.psd_form = psd_form
        self.amplitude = np.sqrt(2 * kanai_tajimi_psd(self.omega, form=psd_form, **self.psd_params)
                                 * self.d_omega)
        self.dt = float(dt)
        self.t = self.dt * np.arange(int(round(duration / dt)) + 1)
        wt = np.outer(self.omega, self.t)
        self._cos = self.amplitude[:, None] * np.cos(wt)
        self._sin = self.amplitude[:, None] * np.sin(wt)

    def variance(self):
        return float(np.sum(self.amplitude**2))

    def synthesize(self, coeffs):
        c = np.atleast_2d(np.asarray(coeffs, dtype=float))
        if c.shape[1] != 2 * self.n_freq:
            raise InputError(f"expected {2 * self.n_freq} coefficients, got {c.shape[1]}")
        return c[:, 0::2] @ self._cos + c[:, 1::2] @ self._sin


def synthesize_ground_motion(coeffs, **kwargs):
    out = SpectralGroundMotion(**kwargs).synthesize(coeffs)
    return out[0] if np.ndim(coeffs) == 1 else out


def psd_estimate(signals, dt, window="boxcar"):
    """Ensemble-averaged one-sided periodogram in angular frequency.

    Returns ``(omega, G)`` with ``sum(G) * d_omega`` equal to the mean
    signal power (Parseval); for a process with two-sided PSD ``S`` the
    expectation of ``G`` is ``2 S`` away from leakage.
    """
    x = np.atleast_2d(np.asarray(signals, dtype=float))
    if x.shape[1] < 8:
        raise InputError("psd_estimate needs at least 8 samples per signal")
    f, p = signal.periodogram(x, fs=1.0 / dt, window=window, detrend=False,
                              scaling="density", axis=-1)
    return 2 * np.pi * f, p.mean(axis=0) / (2 * np.pi)


# ---------------------------------------------------------------------------
# shear building
# ---------------------------------------------------------------------------

def shear_stiffness_matrix(k):
    """Stiffness matrices for story stiffnesses ``k`` of shape (..., n)."""
    k = np.asarray(k, dtype=float)
    n = k.shape[-1]
    K = np.zeros(k.shape[:-1] + (n, n))
    for i in range(n):
        K[..., i, i] += k[..., i]
        if i + 1 < n:
            K[..., i, i] += k[..., i + 1]
            K[..., i, i + 1] = -k[..., i + 1]
            K[..., i + 1, i] = -k[..., i + 1]
    return K


def piecewise_exact_coefficients(omega, zeta, dt):
    """Recurrence coefficients for ``q'' + 2 zeta omega q' + omega^2 q = p(t)``
    with ``p`` linear over each step (unit mass).

    Returns ``(A, B, C, D, Ap, Bp, Cp, Dp)`` so that
    ``q+ = A q + B v + C p + D p+`` and ``v+ = Ap q + Bp v + Cp p + Dp p+``.
    """
    w = np.asarray(omega, dtype=float)
    z = np.broadcast_to(np.asarray(zeta, dtype=float), w.shape)
    r = np.sqrt(1 - z * z)
    wd = w * r
    e = np.exp(-z * w * dt)
    s, c = np.sin(wd * dt), np.cos(wd * dt)
    k = w * w
    A = e * (z / r * s + c)
    B = e * s / wd
    C = (2 * z / (w * dt) + e * (((1 - 2 * z * z) / (wd * dt) - z / r) * s
                                  - (1 + 2 * z / (w * dt)) * c)) / k
    D = (1 - 2 * z / (w * dt) + e * ((2 * z * z - 1) / (wd * dt) * s + 2 * z / (w * dt) * c)) / k
    Ap = -e * w / r * s
    Bp = e * (c - z / r * s)
    Cp = (-1 / dt + e * ((w / r + z / (dt * r)) * s + c / dt)) / k
    Dp = (1 - e * (z / r * s + c)) / (k * dt)
    return A, B, C, D, Ap, Bp, Cp, Dp


def modal_response(omega, zeta, force, dt, q0=None, v0=None):
    """Integrate independent modal oscillators exactly for piecewise-linear
    forcing. ``force`` has shape (..., T); returns displacement and velocity."""
    force = np.asarray(force, dtype=float)
    A, B, C, D, Ap, Bp, Cp, Dp = piecewise_exact_coefficients(omega, zeta, dt)
    q = np.zeros(force.shape)
    v = np.zeros(force.shape)
    if q0 is not None:
        q[..., 0] = q0
    if v0 is not None:
        v[..., 0] = v0
    for i in range(force.shape[-1] - 1):
        p0, p1 = force[..., i], force[..., i + 1]
        qi, vi = q[..., i], v[..., i]
        q[..., i + 1] = A * qi + B * vi + C * p0 + D * p1
        v[..., i + 1] = Ap * qi + Bp * vi + Cp * p0 + Dp * p1
    return q, v


class ShearBuildingModel(StochasticModel):
    """Linear shear building excited at the base by spectral ground motion.

    Inputs: ``2 * n_freq`` standard normals for the ground motion followed by
    one lognormal stiffness per story. The response stacks the inter-story
    drift histories ``u_i - u_{i-1}`` (``u_0`` = ground), each on ``0..duration``.
    """

    model_id = "shear3"

    def __init__(self, n_stories=3, mass=3.0e4, k_mean=6.0e7, k_cov=0.05, damping=0.05,
                 n_freq=200, omega_cut=15 * np.pi, duration=10.0, dt=0.01,
                 psd_form="clough-penzien", **psd_params):
        self.n_stories = int(n_stories)
        self.mass = float(mass)
        self.k_mean, self.k_cov = float(k_mean), float(k_cov)
        self.damping = float(damping)
        self.ground = SpectralGroundMotion(n_freq, omega_cut, duration, dt, psd_form, **psd_params)
        self.dt = float(dt)
        self.t = self.ground.t
        self.input_spec = RandomInputSpec.from_blocks([
            (Marginal.standard_normal(), 2 * self.ground.n_freq),
            (Marginal.lognormal(self.k_mean, self.k_cov), self.n_stories),
        ])
        self.response_dim = self.n_stories * len(self.t)
        self.channel_names = [f"drift{i + 1}" for i in range(self.n_stories)]
        nf = 2 * self.ground.n_freq
        self.designated_inputs = {f"k{i + 1}": nf + i for i in range(self.n_stories)}

    def params(self):
        return {"n_stories": self.n_stories, "mass": self.mass, "k_mean": self.k_mean,
                "k_cov": self.k_cov, "damping": self.damping, "n_freq": self.ground.n_freq,
                "omega_cut": float(self.ground.omega[-1]), "duration": float(self.t[-1]),
                "dt": self.dt, "psd_form": self.ground.psd_form, **self.ground.psd_params}

    def modes(self, k):
        """Natural circular frequencies and mass-normalised mode shapes."""
        k = np.asarray(k, dtype=float)
        if np.any(k <= 0):
            raise InputError("story stiffnesses must be positive")
        K = shear_stiffness_matrix(k)
        lam, vec = np.linalg.eigh(K / self.mass)
        return np.sqrt(lam), vec / np.sqrt(self.mass)

    def floor_displacements(self, X):
        X = self._check_batch(X)
        nf = 2 * self.ground.n_freq
        ag = self.ground.synthesize(X[:, :nf])
        omega, phi = self.modes(X[:, nf:])            # (B, n), (B, n, n)
        # modal participation for the uniform mass distribution
        gamma = self.mass * phi.sum(axis=1)           # (B, n)
        force = -gamma[:, :, None] * ag[:, None, :]   # (B, n, T)
        q, _ = modal_response(omega, self.damping, force, self.dt)
        return np.einsum("bim,bmt->bit", phi, q)

    def evaluate_batch(self, X):
        u = self.floor_displacements(X)
        drift = np.diff(u, axis=1, prepend=0.0)
        return drift.reshape(len(drift), -1)


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

MODELS = {
    "hypothetical": HypotheticalModel,
    "lorenz": LorenzModel,
    "shear3": ShearBuildingModel,
}


def make_model(model_id, params=None):
    try:
        cls = MODELS[model_id]
    except KeyError:
        raise InputError(f"unknown model id {model_id!r}; choose from {sorted(MODELS)}") from None
    return cls(**(params or {}))
