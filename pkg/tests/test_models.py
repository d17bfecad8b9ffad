import numpy as np
import pytest
from scipy import integrate, linalg, optimize, signal

from pppd.core import InputError
from pppd.models import (HypotheticalModel, LorenzModel, ShearBuildingModel, SpectralGroundMotion,
                         kanai_tajimi_psd, lorenz_fixed_points, make_model, modal_response,
                         piecewise_exact_coefficients, psd_estimate, regime_signals, rk4_lorenz,
                         shear_stiffness_matrix, synthesize_ground_motion)


# --- hypothetical process ----------------------------------------------------

def test_hypothetical_dims():
    m = HypotheticalModel()
    assert m.input_spec.dims == 1001 and m.response_dim == 1000
    assert m.t[0] == pytest.approx(0.01) and m.t[-1] == pytest.approx(10.0)


def test_phase_shift_pairs_are_closer():
    s = regime_signals(0.01 * np.arange(1, 1001))
    assert np.max(np.abs(s[0] - s[1])) < 0.3
    assert np.max(np.abs(s[2] - s[3])) < 0.3
    assert np.max(np.abs(s[0] - s[2])) > 3 * np.max(np.abs(s[0] - s[1]))


def test_hypothetical_noise_variance():
    m = HypotheticalModel()
    rng = np.random.default_rng(0)
    X = rng.standard_normal((4000, 1001))
    X[:, -1] = 3
    Y = m.evaluate_batch(X)
    assert np.mean(np.var(Y, axis=0)) == pytest.approx(0.09, rel=0.02)


def test_bad_regime():
    x = np.zeros((1, 1001))
    x[0, -1] = 5
    with pytest.raises(InputError):
        HypotheticalModel().evaluate_batch(x)


# --- Lorenz ----------------------------------------------------------------------

def test_lorenz_dims():
    m = LorenzModel()
    assert m.input_spec.dims == 3 and m.response_dim == 30003


def test_lorenz_fixed_points_stay():
    fp = lorenz_fixed_points(24.0)
    assert fp[0, 0] == pytest.approx(np.sqrt(8 / 3 * 23)) and fp[0, 0] == pytest.approx(7.8316, abs=1e-4)
    traj = rk4_lorenz(fp, np.array([24.0, 24.0]), n_steps=2000)
    assert np.max(np.abs(traj - fp[:, None, :])) < 1e-9


def test_lorenz_symmetry():
    y0 = np.array([[0.7, -0.3, 0.0], [-0.7, 0.3, 0.0]])
    traj = rk4_lorenz(y0, np.array([24.0, 24.0]), n_steps=1500)
    np.testing.assert_allclose(traj[1], traj[0] * np.array([-1, -1, 1]), atol=1e-12)


def test_lorenz_converges_below_critical():
    traj = rk4_lorenz(np.array([[1.0, 1.0, 0.0]]), np.array([20.0]), n_steps=10000)[0]
    fps = lorenz_fixed_points(20.0)
    assert np.min(np.linalg.norm(fps - traj[-1], axis=1)) < 1e-3


def test_lorenz_rk4_against_adaptive_reference():
    # independent oracle: tightly toleranced adaptive integration
    f = lambda t, y: [10 * (y[1] - y[0]), y[0] * (20 - y[2]) - y[1], y[0] * y[1] - 8 / 3 * y[2]]
    ref = integrate.solve_ivp(f, (0, 10), [1.0, 1.0, 0.0], rtol=1e-12, atol=1e-12).y[:, -1]
    traj = rk4_lorenz(np.array([[1.0, 1.0, 0.0]]), np.array([20.0]), n_steps=1000)[0]
    assert np.linalg.norm(traj[-1] - ref) / np.linalg.norm(ref) < 1e-5


def test_lorenz_step_halving():
    y0 = np.array([[1.0, 1.0, 0.0]])
    a = rk4_lorenz(y0, np.array([20.0]), dt=0.01, n_steps=1000)[0, -1]
    b = rk4_lorenz(y0, np.array([20.0]), dt=0.005, n_steps=2000)[0, -1]
    assert np.linalg.norm(a - b) / np.linalg.norm(b) < 1e-5


def test_lorenz_output_layout():
    m = LorenzModel(t_end=1.0)
    x = np.array([[24.0, 0.5, -0.2]])
    y = m.evaluate_batch(x)[0]
    traj = m.trajectories(x)[0]
    n = len(m.t)
    assert np.array_equal(y[:n], traj[:, 0]) and np.array_equal(y[2 * n:], traj[:, 2])
    assert y[0] == 0.5 and y[n] == -0.2 and y[2 * n] == 0.0


# --- ground motion -------------------------------------------------------------

def test_psd_at_zero_literal():
    assert kanai_tajimi_psd(0.0, form="literal") == pytest.approx(0.0015 / 0.5 ** 4)
    assert kanai_tajimi_psd(0.0, form="literal") == pytest.approx(0.024)


def test_psd_decays():
    w = np.array([1e2, 1e3, 1e4])
    for form in ("clough-penzien", "literal"):
        s = kanai_tajimi_psd(w, form=form)
        assert np.all(np.diff(s) < 0)
        # at least inverse-square decay per decade
        assert s[2] / s[1] <= 1.01e-2 and s[1] / s[0] <= 1.01e-2


def test_psd_peak_near_omega_f():
    res = optimize.minimize_scalar(lambda w: -kanai_tajimi_psd(w), bounds=(2, 40), method="bounded")
    assert abs(res.x - 15.0) < 3.0


def test_zero_coefficients_zero_motion():
    assert np.all(synthesize_ground_motion(np.zeros(400)) == 0)


def test_ground_motion_frequencies():
    g = SpectralGroundMotion()
    assert g.d_omega == pytest.approx(0.075 * np.pi)
    assert g.omega[-1] == pytest.approx(15 * np.pi) and len(g.omega) == 200


def test_ground_motion_interleaving():
    g = SpectralGroundMotion()
    c = np.zeros(400)
    c[1] = 1.0  # x'_1 multiplies sin(w_1 t)
    np.testing.assert_allclose(g.synthesize(c)[0], g.amplitude[0] * np.sin(g.omega[0] * g.t), atol=1e-15)


def test_ground_motion_stationary_mean():
    g = SpectralGroundMotion()
    a = g.synthesize(np.random.default_rng(3).standard_normal((2000, 400)))
    se = a.std(axis=0) / np.sqrt(len(a))
    assert np.mean(np.abs(a.mean(axis=0)) < 3 * se) > 0.98


def test_psd_estimate_sinusoid():
    t = 0.01 * np.arange(1000)
    A, f0 = 2.0, 5.0
    w, G = psd_estimate(A * np.cos(2 * np.pi * f0 * t), 0.01)
    dw = w[1] - w[0]
    assert np.sum(G) * dw == pytest.approx(A ** 2 / 2, rel=1e-10)
    assert w[np.argmax(G)] == pytest.approx(2 * np.pi * f0)


def test_psd_estimate_white_noise():
    x = 1.5 * np.random.default_rng(0).standard_normal((100, 1000))
    w, G = psd_estimate(x, 0.01)
    assert np.sum(G) * (w[1] - w[0]) == pytest.approx(1.5 ** 2, rel=0.1)
    assert np.std(G[5:-5]) / np.mean(G[5:-5]) < 0.15


def test_psd_estimate_too_short():
    with pytest.raises(InputError):
        psd_estimate(np.zeros(5), 0.01)


# --- shear building --------------------------------------------------------------

def test_building_dims():
    m = ShearBuildingModel()
    assert m.input_spec.dims == 403 and m.response_dim == 3003


def test_natural_frequencies_oracle():
    m = ShearBuildingModel()
    k = np.full(3, 6.0e7)
    w, phi = m.modes(k)
    # independent generalized eigenproblem K v = w^2 M v
    K = 6.0e7 * np.array([[2, -1, 0], [-1, 2, -1], [0, -1, 1]], float)
    lam = linalg.eigh(K, 3.0e4 * np.eye(3), eigvals_only=True)
    np.testing.assert_allclose(w ** 2, lam, rtol=1e-9)
    np.testing.assert_allclose(w, [19.9, 55.8, 80.6], atol=0.1)
    np.testing.assert_allclose(lam / 2000, [0.198, 1.555, 3.247], atol=1e-3)
    # mass-normalised: phi^T M phi = I
    np.testing.assert_allclose(phi.T @ (3.0e4 * phi), np.eye(3), atol=1e-12)


def test_stiffness_matrix():
    np.testing.assert_array_equal(shear_stiffness_matrix([1.0, 2.0, 3.0]),
                                  [[3, -2, 0], [-2, 5, -3], [0, -3, 3]])


def test_zero_excitation_zero_response():
    m = ShearBuildingModel()
    x = np.zeros((1, 403))
    x[0, 400:] = 6.0e7
    assert np.all(m.evaluate_batch(x) == 0)


def test_piecewise_exact_vs_reference():
    w, z, dt = 12.0, 0.05, 0.01
    t = dt * np.arange(301)
    p = np.sin(3 * t) + 0.5 * t
    q, v = modal_response(np.array([w]), z, p[None, :], dt)
    pl = lambda s: np.interp(s, t, p)
    f = lambda s, y: [y[1], pl(s) - 2 * z * w * y[1] - w * w * y[0]]
    ref = integrate.solve_ivp(f, (0, t[-1]), [0.0, 0.0], t_eval=t, rtol=1e-11, atol=1e-13,
                              max_step=dt / 4)
    np.testing.assert_allclose(q[0], ref.y[0], atol=1e-9)
    np.testing.assert_allclose(v[0], ref.y[1], atol=1e-8)


def test_free_vibration_energy_conserved():
    m = ShearBuildingModel()
    k = np.full(3, 6.0e7)
    w, phi = m.modes(k)
    T = 1001
    q, v = modal_response(w, 0.0, np.zeros((3, T)), 0.01, q0=np.array([1.0, 0.0, 0.0]))
    u, ud = phi @ q, phi @ v
    K = shear_stiffness_matrix(k)
    E = 0.5 * np.einsum("it,ij,jt->t", ud, 3.0e4 * np.eye(3), ud) + 0.5 * np.einsum("it,ij,jt->t", u, K, u)
    assert np.max(np.abs(E / E[0] - 1)) < 1e-3


def test_static_drift_under_constant_acceleration():
    m = ShearBuildingModel()
    k = np.array([6.0e7, 5.5e7, 6.5e7])
    w, phi = m.modes(k)
    a = 0.5
    gamma = m.mass * phi.sum(axis=0)
    force = -gamma[:, None] * np.full((3, 1001), a)
    q, _ = modal_response(w, 0.05, force, 0.01)
    u = phi @ q
    assert u[0, -1] == pytest.approx(-3 * m.mass * a / k[0], rel=1e-3)


def test_make_model_registry():
    assert isinstance(make_model("shear3"), ShearBuildingModel)
    with pytest.raises(InputError):
        make_model("nope")


def test_piecewise_coefficients_static_limit():
    # constant unit force: q -> 1/w^2 is a fixed point of the recurrence
    A, B, C, D, Ap, Bp, Cp, Dp = piecewise_exact_coefficients(np.array([7.0]), 0.05, 0.01)
    qs = 1 / 49.0
    assert A * qs + C + D == pytest.approx(qs, rel=1e-10)
    assert Ap * qs + Cp + Dp == pytest.approx(0.0, abs=1e-10)
