import numpy as np
import pytest
from scipy.special import ellipe, ellipk

from mjspectra import flow
from mjspectra.errors import (EnergyDriftExceeded, FieldsNotParallel,
                              InsufficientWinding, LoopNotClosed,
                              NotOnSurface, StepRejected)
from mjspectra.models import (MjPair, PhasePoint, SymbolField, TrigField,
                              build_mechanical_pair)

TWO_PI = 2 * np.pi


def pendulum():
    """H = xi^2/2 - cos x; librates for -1 < E < 1, rotates for E > 1."""
    return SymbolField(
        1,
        lambda x, xi: 0.5 * np.asarray(xi)[..., 0] ** 2 - np.cos(np.asarray(x)[..., 0]),
        lambda x, xi: (np.sin(np.asarray(x, dtype=float)),
                       np.asarray(xi, dtype=float)),
        name="pendulum")


def pendulum_libration_period(e):
    # amplitude x0 with cos x0 = -e; T = 4 K(m), m = (1 + e)/2
    return 4.0 * ellipk((1.0 + e) / 2.0)


def pendulum_rotation_period(e):
    # T = 4 K(m) / sqrt(2 (1 + e)), m = 2/(1 + e)
    return 4.0 * ellipk(2.0 / (1.0 + e)) / np.sqrt(2.0 * (1.0 + e))


# --- stepper ----------------------------------------------------------------

def test_tableau_quadrature_order_conditions():
    A, b, c = flow.rk8_tableau()
    for q in range(1, 9):
        assert abs(np.sum(b * c ** (q - 1)) - 1.0 / q) < 1e-14
    assert np.max(np.abs(A.sum(axis=1) - c)) < 1e-14


def test_stepper_global_order_is_eight():
    sym = pendulum()
    e = 1.2
    p0 = PhasePoint([0.0], [np.sqrt(2 * (e + 1.0))])
    ref = flow.integrate(sym, p0, 1.0, 0.0125, checked=False).states[-1]
    errs = []
    for dt in (0.2, 0.1):
        end = flow.integrate(sym, p0, 1.0, dt, checked=False).states[-1]
        errs.append(np.linalg.norm(end - ref))
    ratio = errs[0] / errs[1]
    assert 140 < ratio < 500, f"order-8 halving ratio was {ratio:.1f}"


def test_libration_orbit_returns_after_elliptic_period():
    e = 0.5
    T = pendulum_libration_period(e)
    p0 = PhasePoint([np.arccos(-e)], [0.0])
    traj = flow.integrate(pendulum(), p0, T, T / 4096)
    assert np.linalg.norm(traj.states[-1] - traj.states[0]) < 1e-9
    assert traj.energy_drift < 1e-12


def test_rotation_orbit_advances_2pi_after_elliptic_period():
    e = 1.2
    T = pendulum_rotation_period(e)
    p0 = PhasePoint([0.0], [np.sqrt(2 * (e + 1.0))])
    traj = flow.integrate(pendulum(), p0, T, T / 4096)
    assert abs(traj.states[-1, 0] - traj.states[0, 0] - TWO_PI) < 1e-9
    assert abs(traj.states[-1, 1] - traj.states[0, 1]) < 1e-9


def test_energy_drift_checked_mode():
    e = 1.2
    p0 = PhasePoint([0.0], [np.sqrt(2 * (e + 1.0))])
    with pytest.raises(EnergyDriftExceeded):
        flow.integrate(pendulum(), p0, 10.0, 0.5)
    traj = flow.integrate(pendulum(), p0, 10.0, 0.5, checked=False)
    assert traj.energy_drift > 0


def test_non_finite_state_rejected():
    sym = SymbolField(
        1,
        lambda x, xi: 0.5 * np.asarray(xi)[..., 0] ** 2 - np.exp(np.asarray(x)[..., 0]),
        lambda x, xi: (-np.exp(np.asarray(x, dtype=float)),
                       np.asarray(xi, dtype=float)))
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(StepRejected):
            flow.integrate(sym, PhasePoint([0.0], [2.0]), 20.0, 0.05,
                           checked=False)


def test_aux_observable_integrates_time():
    traj = flow.integrate(pendulum(), PhasePoint([0.5], [1.0]), 3.0, 0.01,
                          aux=lambda x, xi: np.ones(np.shape(x)[:-1]))
    assert np.allclose(traj.aux, traj.times, atol=1e-12)


# --- rotation vectors -----------------------------------------------------------

def test_rotation_number_flat_torus_exact():
    sym = SymbolField(
        2, lambda x, xi: np.sum(np.asarray(xi) ** 2, axis=-1),
        lambda x, xi: (np.zeros(np.shape(xi)), 2 * np.asarray(xi, dtype=float)))
    xi0 = np.array([0.8, 0.5])
    traj = flow.integrate(sym, PhasePoint([0.1, 0.2], xi0), 80.0, 0.01)
    est = flow.rotation_number(traj)
    assert np.allclose(est.omega, 2 * xi0, atol=1e-10)
    assert np.max(est.confidence) < 1e-10


def test_rotation_number_pendulum_vs_elliptic_integral():
    e = 1.2
    T = pendulum_rotation_period(e)
    p0 = PhasePoint([0.0], [np.sqrt(2 * (e + 1.0))])
    traj = flow.integrate(pendulum(), p0, 150.0, 0.005)
    est = flow.rotation_number(traj)
    assert abs(est.omega[0] - TWO_PI / T) < 1e-8


def test_rotation_number_requires_winding():
    traj = flow.integrate(pendulum(), PhasePoint([0.0], [2.0976]), 5.0, 0.01)
    with pytest.raises(InsufficientWinding):
        flow.rotation_number(traj)


# --- loop actions ------------------------------------------------------------------

def test_action_integral_analytic_circle():
    r = 0.7

    def cycle(s):
        th = TWO_PI * s
        return r * np.cos(th)[:, None], r * np.sin(th)[:, None]

    act = flow.action_integral(None, cycle)
    # xi dx = r sin * d(r cos) integrates to -pi r^2 over one CCW turn
    assert abs(act.value + np.pi * r ** 2) < 1e-12
    assert act.quadrature_error < 1e-12
    assert act.winding[0] == 0


def test_action_integral_winding_loop():
    def cycle(s):
        return (TWO_PI * s)[:, None], np.full((len(s), 1), 0.35)

    act = flow.action_integral(None, cycle)
    assert abs(act.value - TWO_PI * 0.35) < 1e-13
    assert act.winding[0] == 1


def test_action_integral_rejects_open_loop():
    def cycle(s):
        return (1.3 * s)[:, None], np.zeros((len(s), 1))

    with pytest.raises(LoopNotClosed):
        flow.action_integral(None, cycle)


def test_pendulum_libration_action_vs_elliptic_integrals():
    e = 0.5
    m = (1.0 + e) / 2.0
    T = pendulum_libration_period(e)
    p0 = PhasePoint([np.arccos(-e)], [0.0])
    traj = flow.integrate(pendulum(), p0, T, T / 4096, record_every=4)
    act = flow.action_integral(pendulum(), (traj.x, traj.xi))
    # enclosed phase area of the libration loop: 16 (E(m) - (1-m) K(m))
    want = 16.0 * (ellipe(m) - (1.0 - m) * ellipk(m))
    assert abs(abs(act.value) - want) < 1e-8 * want
    assert abs(act.energy - e) < 1e-10


def test_pendulum_rotation_action_vs_elliptic_integrals():
    e = 1.2
    m = 2.0 / (1.0 + e)
    T = pendulum_rotation_period(e)
    p0 = PhasePoint([0.0], [np.sqrt(2 * (e + 1.0))])
    traj = flow.integrate(pendulum(), p0, T, T / 4096, record_every=4)
    act = flow.action_integral(pendulum(), (traj.x, traj.xi))
    # integral of sqrt(2(e+cos x)) over one circulation: 4 sqrt(2(1+e)) E(m) / ...
    want = 2.0 * np.sqrt(2.0 * (1.0 + e)) * 2.0 * ellipe(m)
    assert abs(act.value - want) < 1e-8 * want
    assert act.winding[0] == 1


# --- reparametrization --------------------------------------------------------------

def standard_pair():
    return build_mechanical_pair(
        TrigField.from_cosines(2, {(1, 0): 0.1, (0, 1): 0.05}), E=1.0)


def shell_point(pair, rng):
    x = rng.uniform(0, TWO_PI, size=2)
    th = rng.uniform(0, TWO_PI)
    u = np.array([np.cos(th), np.sin(th)])
    vval = 0.1 * np.cos(x[0]) + 0.05 * np.cos(x[1])
    return PhasePoint(x, np.sqrt(pair.E - vval) * u)


def test_reparam_factor_matches_closed_form():
    pair = standard_pair()
    rng = np.random.default_rng(0)
    for _ in range(5):
        p = shell_point(pair, rng)
        vx = 0.1 * np.cos(p.x[0]) + 0.05 * np.cos(p.x[1])
        assert abs(flow.reparam_factor(pair, p) - 1.0 / (1.0 - vx)) < 1e-10


def test_reparam_factor_validates_surface_and_parallelism():
    pair = standard_pair()
    with pytest.raises(NotOnSurface):
        flow.reparam_factor(pair, PhasePoint([0.0, 0.0], [3.0, 0.0]))
    f1 = SymbolField(2, lambda x, xi: np.asarray(xi)[..., 0],
                     lambda x, xi: (np.zeros(np.shape(xi)),
                                    np.broadcast_to([1.0, 0.0], np.shape(xi))))
    f2 = SymbolField(2, lambda x, xi: np.asarray(xi)[..., 1],
                     lambda x, xi: (np.zeros(np.shape(xi)),
                                    np.broadcast_to([0.0, 1.0], np.shape(xi))))
    skew = MjPair(calH=f2, H=f1, calE=0.0, E=0.0)
    with pytest.raises(FieldsNotParallel):
        flow.reparam_factor(skew, PhasePoint([0.3, 0.4], [0.0, 0.0]))


def test_average_reparam_flat_potential_is_constant():
    pair = build_mechanical_pair(TrigField.constant(2, 0.0), E=2.0)
    traj = flow.integrate(pair.H, PhasePoint([0.0, 0.0], [1.0, 1.0]), 20.0, 0.01)
    avg = flow.average_reparam(pair, traj)
    assert abs(avg.value - 0.5) < 1e-12
    assert avg.convergence < 1e-12


def test_average_reparam_weightings_agree():
    pair = standard_pair()
    p0 = shell_point(pair, np.random.default_rng(1))
    traj = flow.integrate(pair.H, p0, 150.0, 0.01, record_every=2)
    a_trap = flow.average_reparam(pair, traj)
    a_wb = flow.average_reparam(pair, traj, weighting="birkhoff")
    assert 1 / 1.16 < a_trap.value < 1 / 0.84
    assert abs(a_trap.value - a_wb.value) < 2e-2
    assert a_wb.convergence < 1e-4
    off = flow.integrate(pair.calH, p0, 5.0, 0.01)  # calH orbit stays on shell
    flow.average_reparam(pair, off)  # must not raise
    with pytest.raises(NotOnSurface):
        bad = flow.integrate(pair.H, PhasePoint([0, 0], [2.0, 0.0]), 1.0, 0.01)
        flow.average_reparam(pair, bad)


# --- orbit geometry -----------------------------------------------------------------

def test_orbit_set_distance_identity_and_shift():
    traj = flow.integrate(pendulum(), PhasePoint([0.0], [2.2]), 10.0, 0.01)
    assert flow.orbit_set_distance(traj, traj) == 0.0
    shifted = traj.states + np.array([0.0, 1e-3])
    dist = flow.orbit_set_distance(traj.states, shifted)
    assert 0.9e-3 < dist < 1.1e-3


def test_orbit_set_distance_respects_wraparound():
    states = np.array([[0.05, 1.0]])
    shifted = states + np.array([TWO_PI, 0.0])
    assert flow.orbit_set_distance(states, shifted) < 1e-12


def test_resample_dense_stays_on_energy_surface():
    sym = pendulum()
    traj = flow.integrate(sym, PhasePoint([0.0], [2.2]), 5.0, 0.01)
    fine = flow.resample_dense(sym, traj, spacing=1e-4)
    en = sym.value(fine[:, :1], fine[:, 1:])
    assert np.max(np.abs(en - en[0])) < 1e-8
    gaps = np.linalg.norm(np.diff(fine, axis=0), axis=1)
    assert gaps.max() < 1.2e-4


# --- section rotation ----------------------------------------------------------------

def test_poincare_rotation_linear_oscillator():
    nu = 0.31
    sym = SymbolField(
        2,
        lambda x, xi: (np.asarray(xi)[..., 0]
                       + 0.5 * nu * (np.asarray(x)[..., 1] ** 2
                                     + np.asarray(xi)[..., 1] ** 2)),
        lambda x, xi: (np.stack([np.zeros(np.shape(x)[:-1]),
                                 nu * np.asarray(x, dtype=float)[..., 1]], axis=-1),
                       np.stack([np.ones(np.shape(xi)[:-1]),
                                 nu * np.asarray(xi, dtype=float)[..., 1]], axis=-1)))
    traj = flow.integrate(sym, PhasePoint([0.0, 0.4], [1.0, 0.0]),
                          20 * TWO_PI + 0.5, 0.01, checked=False)
    rot = flow.poincare_rotation(traj)
    assert rot.n_returns == 20
    assert abs(rot.beta - TWO_PI * nu) < 1e-5
