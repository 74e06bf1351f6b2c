import numpy as np
import pytest

from mjspectra import models
from mjspectra.errors import (DegenerateMetric, EnergyBelowPotential,
                              FluxOutOfRange, MjcDefectAboveTolerance,
                              MultiplierSingular, NegativeDepth)
from mjspectra.models import (PhasePoint, SymbolField, TrigField,
                              build_mechanical_pair, build_waterwave_pair,
                              katok_hamiltonian, matched_liouville_g,
                              mj_consistency_report, mj_multiplier,
                              poisson_bracket, waterwave_symbol)

TWO_PI = 2 * np.pi


def standard_potential():
    return TrigField.from_cosines(2, {(1, 0): 0.1, (0, 1): 0.05})


def on_shell_points(pair, n, seed=0):
    """Exact points of {H = E} for a flat-metric mechanical pair."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, TWO_PI, size=(n, 2))
    th = rng.uniform(0, TWO_PI, size=n)
    u = np.stack([np.cos(th), np.sin(th)], axis=-1)
    vval, _ = models._as_scalar_field(pair.potential, 2)
    r = np.sqrt(pair.E - vval(x))
    return x, r[:, None] * u


# --- TrigField -------------------------------------------------------------

def test_trigfield_cosine_value_and_grad():
    V = TrigField.from_cosines(2, {(1, 0): 0.3})
    x = np.array([0.9, 2.0])
    assert abs(V.value(x) - 0.3 * np.cos(0.9)) < 1e-14
    g = V.grad(x)
    assert abs(g[0] + 0.3 * np.sin(0.9)) < 1e-14
    assert abs(g[1]) < 1e-16


def test_trigfield_from_samples_exact_on_trig_polynomials():
    n = 32
    ax = np.arange(n) * (TWO_PI / n)
    X1, X2 = np.meshgrid(ax, ax, indexing="ij")
    vals = 1.0 + 0.4 * np.cos(X1) - 0.25 * np.sin(2 * X1 + X2)
    f = TrigField.from_samples(vals, k_max=8)
    pts = np.random.default_rng(1).uniform(0, TWO_PI, size=(20, 2))
    want = 1.0 + 0.4 * np.cos(pts[:, 0]) - 0.25 * np.sin(2 * pts[:, 0] + pts[:, 1])
    assert np.allclose(f.value(pts), want, atol=1e-12)


# --- mechanical pair ---------------------------------------------------------

def test_mechanical_pair_values_match_closed_forms():
    V = standard_potential()
    pair = build_mechanical_pair(V, E=1.0)
    rng = np.random.default_rng(2)
    x = rng.uniform(0, TWO_PI, size=(8, 2))
    xi = rng.normal(size=(8, 2))
    vx = 0.1 * np.cos(x[:, 0]) + 0.05 * np.cos(x[:, 1])
    k = np.sum(xi ** 2, axis=1)
    assert np.allclose(pair.H.value(x, xi), k + vx, atol=1e-14)
    assert np.allclose(pair.calH.value(x, xi), k / (1.0 - vx), atol=1e-14)
    assert np.allclose(pair.multiplier(x), 1.0 / (1.0 - vx), atol=1e-14)


def test_mechanical_gradients_match_finite_differences():
    pair = build_mechanical_pair(standard_potential(), E=1.0)
    rng = np.random.default_rng(3)
    x = rng.uniform(0, TWO_PI, size=2)
    xi = rng.normal(size=2)
    h = 1e-6
    for sym in (pair.H, pair.calH):
        gx, gxi = sym.grad(x, xi)
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            fdx = (sym.value(x + e, xi) - sym.value(x - e, xi)) / (2 * h)
            fdxi = (sym.value(x, xi + e) - sym.value(x, xi - e)) / (2 * h)
            assert abs(gx[j] - fdx) < 1e-8
            assert abs(gxi[j] - fdxi) < 1e-8


def test_mechanical_multiplier_equals_closed_form_on_shell():
    pair = build_mechanical_pair(standard_potential(), E=1.0)
    x, xi = on_shell_points(pair, 12, seed=4)
    G = mj_multiplier(pair, (x, xi))
    vx = 0.1 * np.cos(x[:, 0]) + 0.05 * np.cos(x[:, 1])
    assert np.allclose(G, 1.0 / (1.0 - vx), atol=1e-10)


def test_conformal_fields_are_parallel_on_shell():
    pair = build_mechanical_pair(standard_potential(), E=1.0)
    x, xi = on_shell_points(pair, 10, seed=5)
    G = mj_multiplier(pair, (x, xi))
    hx, hxi = pair.H.grad(x, xi)
    cx, cxi = pair.calH.grad(x, xi)
    resid = np.hypot(np.linalg.norm(cx - G[:, None] * hx, axis=1),
                     np.linalg.norm(cxi - G[:, None] * hxi, axis=1))
    scale = np.hypot(np.linalg.norm(cx, axis=1), np.linalg.norm(cxi, axis=1))
    assert np.max(resid / scale) < 1e-10


def test_bracket_of_pair_vanishes_on_shell_only():
    pair = build_mechanical_pair(standard_potential(), E=1.0)
    x, xi = on_shell_points(pair, 10, seed=6)
    br = poisson_bracket(pair.H, pair.calH, (x, xi))
    assert np.max(np.abs(br)) < 1e-9
    # off the shell the bracket is generically nonzero
    br_off = poisson_bracket(pair.H, pair.calH, (x, 1.4 * xi))
    assert np.max(np.abs(br_off)) > 1e-4


def test_energy_below_potential_rejected():
    with pytest.raises(EnergyBelowPotential):
        build_mechanical_pair(TrigField.from_cosines(2, {(1, 0): 0.5}), E=0.4)


def test_degenerate_metric_rejected():
    def g(x):
        c = np.cos(x[..., 0]) ** 2
        out = np.zeros(np.shape(x)[:-1] + (2, 2))
        out[..., 0, 0] = c
        out[..., 1, 1] = 1.0
        return out
    with pytest.raises(DegenerateMetric):
        build_mechanical_pair(0.0, E=1.0, metric=g)


def test_multiplier_singular_at_critical_point():
    flat = SymbolField(2, lambda x, xi: np.sum(np.asarray(xi) ** 2, axis=-1),
                       lambda x, xi: (np.zeros(np.shape(xi)),
                                      2 * np.asarray(xi, dtype=float)))
    pair = models.MjPair(calH=flat, H=flat, calE=0.0, E=0.0)
    with pytest.raises(MultiplierSingular):
        mj_multiplier(pair, PhasePoint([0.0, 0.0], [0.0, 0.0]))


def test_consistency_report_mechanical():
    pair = build_mechanical_pair(standard_potential(), E=1.0)
    rep = mj_consistency_report(pair, n_rays=8, n_angles=8)
    assert rep.n_found == 64
    assert rep.max_defect < 1e-8
    # 1/(E - V) with V in [-0.15, 0.15]
    assert 1 / 1.151 < rep.multiplier_min <= rep.multiplier_max < 1 / 0.849
    assert rep.failed == []


# --- water-wave dispersion -----------------------------------------------------

def test_waterwave_value_frozen_point():
    # constant depth 1, constant surface tension 0.1, |xi| = 1:
    # H = (1 + 0.1) * tanh(1)
    sym = waterwave_symbol(1.0, 0.1)
    got = float(sym.value(np.zeros(2), np.array([0.6, 0.8])))
    assert abs(got - 1.1 * np.tanh(1.0)) < 1e-14


def test_waterwave_grad_matches_finite_differences():
    depth = TrigField.from_cosines(2, {(1, 0): 0.2, (0, 0): 1.0})
    mu = TrigField.from_cosines(2, {(0, 1): 0.02, (0, 0): 0.05})
    sym = waterwave_symbol(depth, mu)
    rng = np.random.default_rng(8)
    x = rng.uniform(0, TWO_PI, size=2)
    xi = rng.normal(size=2) + np.array([0.5, 0.0])
    gx, gxi = sym.grad(x, xi)
    h = 1e-6
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        assert abs(gx[j] - (sym.value(x + e, xi) - sym.value(x - e, xi)) / (2 * h)) < 1e-7
        assert abs(gxi[j] - (sym.value(x, xi + e) - sym.value(x, xi - e)) / (2 * h)) < 1e-7


def test_waterwave_negative_depth_rejected():
    depth = TrigField.from_cosines(2, {(1, 0): 1.5, (0, 0): 1.0})
    with pytest.raises(NegativeDepth):
        build_waterwave_pair(depth, 0.05, 1.0, E=0.5)


def test_matched_liouville_factor_passes_strict_mode():
    depth = TrigField.from_cosines(2, {(1, 0): 0.2, (0, 0): 1.0})
    mu = TrigField.from_cosines(2, {(0, 1): 0.02, (0, 0): 0.05})
    g = matched_liouville_g(depth, mu, E=0.5, grid_n=32, k_max=10)
    pair = build_waterwave_pair(depth, mu, g, E=0.5, strict=True,
                                defect_tol=1e-6)
    assert pair.defect_report.max_defect < 1e-6
    assert pair.defect_report.multiplier_min > 0


def test_mismatched_liouville_factor_fails_strict_mode():
    depth = TrigField.from_cosines(2, {(1, 0): 0.2, (0, 0): 1.0})
    with pytest.raises(MjcDefectAboveTolerance):
        build_waterwave_pair(depth, 0.05, TrigField.constant(2, 1.0), E=0.5,
                             strict=True, defect_tol=1e-6)
    # non-strict: report attached instead of raising
    pair = build_waterwave_pair(depth, 0.05, TrigField.constant(2, 1.0), E=0.5)
    assert pair.defect_report.max_defect > 1e-6


# --- Randers model -----------------------------------------------------------

def test_katok_flux_validation():
    with pytest.raises(FluxOutOfRange):
        katok_hamiltonian(1.0)
    with pytest.raises(FluxOutOfRange):
        katok_hamiltonian(-0.1)


def test_katok_homogeneous_degree_one():
    model = katok_hamiltonian(0.3)
    rng = np.random.default_rng(9)
    x = rng.uniform(-1.0, 1.0, size=(6, 2)) * np.array([TWO_PI, 1.2])
    xi = rng.normal(size=(6, 2))
    t = 2.7
    assert np.allclose(model.hamiltonian.value(x, t * xi),
                       t * model.hamiltonian.value(x, xi), atol=1e-12)


def test_katok_commuting_pair_in_band():
    model = katok_hamiltonian(0.3)
    rng = np.random.default_rng(10)
    n = 32
    x = np.stack([rng.uniform(0, TWO_PI, n),
                  rng.uniform(-np.pi / 2 + 0.1, np.pi / 2 - 0.1, n)], axis=-1)
    xi = rng.normal(size=(n, 2))
    br = poisson_bracket(model.lam, model.eta, (x, xi))
    assert np.max(np.abs(br)) < 1e-12


def test_katok_equator_points_have_unit_energy():
    for alpha in (0.0, 0.3):
        model = katok_hamiltonian(alpha)
        for branch in ("+", "-"):
            p = model.equator_point(branch)
            assert abs(model.hamiltonian.at(p) - 1.0) < 1e-14
            # equatorial azimuthal speed is 1 +- alpha
            xdot, _ = model.hamiltonian.hamiltonian_field(p.x, p.xi)
            s = 1.0 if branch == "+" else -1.0
            assert abs(xdot[0] - s * (1.0 + s * alpha)) < 1e-12
            assert abs(xdot[1]) < 1e-14


def test_katok_rotation_angles_closed_form():
    model = katok_hamiltonian(0.3)
    assert abs(model.rotation_angle("+") - TWO_PI / 1.3) < 1e-15
    assert abs(model.rotation_angle("-") - TWO_PI / 0.7) < 1e-15


def test_katok_grad_matches_finite_differences():
    model = katok_hamiltonian(0.3)
    x = np.array([1.1, 0.7])
    xi = np.array([0.8, -0.5])
    gx, gxi = model.hamiltonian.grad(x, xi)
    h = 1e-6
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fdx = (model.hamiltonian.value(x + e, xi) -
               model.hamiltonian.value(x - e, xi)) / (2 * h)
        fdxi = (model.hamiltonian.value(x, xi + e) -
                model.hamiltonian.value(x, xi - e)) / (2 * h)
        assert abs(gx[j] - fdx) < 1e-7
        assert abs(gxi[j] - fdxi) < 1e-7


# --- misc -----------------------------------------------------------------

def test_phase_point_wraps_angles():
    p = PhasePoint([TWO_PI + 0.5, -0.5], [1.0, 2.0])
    assert abs(p.x[0] - 0.5) < 1e-15
    assert abs(p.x[1] - (TWO_PI - 0.5)) < 1e-15
    assert np.allclose(PhasePoint.from_state(p.as_state()).xi, p.xi)


def test_symbolfield_fd_gradient_fallback():
    sym = SymbolField(2, lambda x, xi: np.sum(np.asarray(xi) ** 2, axis=-1)
                      + np.cos(np.asarray(x)[..., 0]))
    x = np.array([0.3, 0.1])
    xi = np.array([0.2, -0.7])
    gx, gxi = sym.grad(x, xi)
    assert abs(gx[0] + np.sin(0.3)) < 1e-8
    assert np.allclose(gxi, 2 * xi, atol=1e-8)
