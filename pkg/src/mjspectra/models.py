"""Phase-space symbols on T^d x R^d and conformal Hamiltonian pairs.

The central object is a pair (calH, H) of Hamiltonians sharing an energy
surface {H = E} = {calH = calE} on which the two flows are time
reparametrizations of each other: X_calH = G * X_H with a positive multiplier
G.  Constructors are provided for the kinetic/potential pair, the water-wave
dispersion symbol paired with a Liouville metric, and the Randers-type
deformation of the round-sphere co-metric.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from .errors import (DegenerateMetric, EnergyBelowPotential, FluxOutOfRange,
                     MjcDefectAboveTolerance, MultiplierSingular, NegativeDepth,
                     SurfaceNotFound)
from .series import FourierTaylorSeries

TWO_PI = 2.0 * np.pi


def wrap_angles(x):
    """Reduce angle coordinates to [0, 2*pi)."""
    return np.mod(x, TWO_PI)


class PhasePoint:
    """A point (x, xi) with angles stored wrapped to [0, 2*pi)."""

    __slots__ = ("x", "xi")

    def __init__(self, x, xi):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        if x.shape != xi.shape or x.ndim != 1:
            raise ValueError("x and xi must be 1-d arrays of equal length")
        self.x = wrap_angles(x)
        self.xi = xi.copy()

    @property
    def d(self):
        return len(self.x)

    def as_state(self):
        return np.concatenate([self.x, self.xi])

    @classmethod
    def from_state(cls, y):
        y = np.asarray(y, dtype=float)
        d = y.shape[-1] // 2
        return cls(y[..., :d], y[..., d:])

    def __repr__(self):
        return f"PhasePoint(x={self.x}, xi={self.xi})"


class TrigField:
    """Real trigonometric polynomial on T^d with analytic gradient."""

    def __init__(self, dim, modes, coeffs):
        self.dim = int(dim)
        self.K = np.asarray(modes, dtype=np.int64).reshape(-1, self.dim)
        self.C = np.asarray(coeffs, dtype=complex).reshape(-1)
        if len(self.K) != len(self.C):
            raise ValueError("modes/coeffs length mismatch")

    @classmethod
    def constant(cls, dim, c):
        return cls(dim, np.zeros((1, dim)), [complex(c)])

    @classmethod
    def from_cosines(cls, dim, terms):
        """terms: {mode tuple: amplitude}; builds sum A * cos(<k, x>)."""
        modes, coeffs = [], []
        for k, amp in terms.items():
            k = tuple(int(v) for v in k)
            if all(v == 0 for v in k):
                modes.append(k)
                coeffs.append(complex(amp))
            else:
                modes.append(k)
                coeffs.append(0.5 * amp)
                modes.append(tuple(-v for v in k))
                coeffs.append(0.5 * amp)
        return cls(dim, np.array(modes), coeffs)

    @classmethod
    def from_samples(cls, values, k_max):
        """Trig-interpolate samples on a uniform periodic grid (d = 1 or 2)."""
        values = np.asarray(values, dtype=float)
        dim = values.ndim
        F = np.fft.fftn(values) / values.size
        grids = np.meshgrid(*[np.fft.fftfreq(n, d=1.0 / n) for n in values.shape],
                            indexing="ij")
        K = np.stack([g.ravel() for g in grids], axis=-1).astype(np.int64)
        C = F.ravel()
        keep = (np.abs(K).max(axis=1) <= k_max) & (np.abs(C) > 1e-300)
        return cls(dim, K[keep], C[keep])

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return (np.exp(1j * (x @ self.K.T)) @ self.C).real

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        E = np.exp(1j * (x @ self.K.T))
        return np.stack([(E @ (1j * self.K[:, j] * self.C)).real
                         for j in range(self.dim)], axis=-1)

    def to_series(self, k_max=None, deg_max=0, dim=None):
        """As a FourierTaylorSeries (action-independent)."""
        dim = self.dim if dim is None else dim
        km = int(np.abs(self.K).max(initial=0)) if k_max is None else k_max
        s = FourierTaylorSeries(dim, max(km, 1), max(deg_max, 2))
        zero_a = (0,) * dim
        for k, c in zip(self.K, self.C):
            kk = tuple(int(v) for v in k) + (0,) * (dim - self.dim)
            s.add_term(kk, zero_a, c)
        return s


def _as_scalar_field(f, dim, fd_step=1e-6):
    """Normalize a scalar function of x into (value, grad) callables.

    Accepts a number, a TrigField, a (value, grad) tuple of callables, or a
    bare callable (gradient then by centered differences).
    """
    if isinstance(f, TrigField):
        return f.value, f.grad
    if np.isscalar(f):
        c = float(f)
        return (lambda x: np.full(np.shape(x)[:-1], c),
                lambda x: np.zeros(np.shape(x)))
    if isinstance(f, tuple) and len(f) == 2:
        return f
    value = f

    def grad(x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        for j in range(dim):
            e = np.zeros(dim)
            e[j] = fd_step
            out[..., j] = (value(x + e) - value(x - e)) / (2 * fd_step)
        return out

    return value, grad


class SymbolField:
    """Scalar symbol f(x, xi) with vectorized value and gradient.

    value/grad take arrays of shape (..., d) and broadcast over leading axes.
    When no analytic gradient is supplied, centered finite differences with
    step `fd_step` are used.  `fourier_rep` optionally attaches an exact
    Fourier-Taylor representation (used for fast Weyl-matrix assembly), and
    `time_reversal_even` records evenness under xi -> -xi when known.
    """

    def __init__(self, dim, value, grad=None, fourier_rep=None,
                 time_reversal_even=None, name="", fd_step=1e-6):
        self.dim = int(dim)
        self._value = value
        self._grad = grad
        self.fourier_rep = fourier_rep
        self.time_reversal_even = time_reversal_even
        self.name = name
        self.fd_step = float(fd_step)

    @classmethod
    def from_series(cls, s, name="", time_reversal_even=None):
        def value(x, xi):
            return s.eval_real(x, xi)

        def grad(x, xi):
            gx, gxi = s.grad_eval(x, xi)
            return gx.real, gxi.real

        return cls(s.dim, value, grad, fourier_rep=s, name=name,
                   time_reversal_even=time_reversal_even)

    def value(self, x, xi):
        return self._value(np.asarray(x, dtype=float),
                           np.asarray(xi, dtype=float))

    def at(self, p):
        return float(self.value(p.x, p.xi))

    def grad(self, x, xi):
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        if self._grad is not None:
            return self._grad(x, xi)
        h = self.fd_step
        gx = np.empty(np.broadcast_shapes(x.shape, xi.shape))
        gxi = np.empty_like(gx)
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = h
            gx[..., j] = (self._value(x + e, xi) - self._value(x - e, xi)) / (2 * h)
            gxi[..., j] = (self._value(x, xi + e) - self._value(x, xi - e)) / (2 * h)
        return gx, gxi

    def hamiltonian_field(self, x, xi):
        """(dx/dt, dxi/dt) = (df/dxi, -df/dx)."""
        gx, gxi = self.grad(x, xi)
        return gxi, -gx


def poisson_bracket(f, g, p):
    """{f, g} = sum_j (d_xi f)(d_x g) - (d_x f)(d_xi g) at p.

    p may be a PhasePoint or a tuple of coordinate arrays (x, xi) with shape
    (..., d); the bracket is then evaluated pointwise.
    """
    if isinstance(p, PhasePoint):
        x, xi = p.x, p.xi
    else:
        x, xi = p
    fx, fxi = f.grad(x, xi)
    gx, gxi = g.grad(x, xi)
    return np.sum(fxi * gx - fx * gxi, axis=-1)


# --- conformal pairs -----------------------------------------------------------


@dataclasses.dataclass
class MjPair:
    """Hamiltonians (calH, H) sharing {H = E} = {calH = calE}."""
    calH: SymbolField
    H: SymbolField
    calE: float
    E: float
    multiplier: object = None   # optional callable x -> G on the surface
    label: str = ""


@dataclasses.dataclass
class MechanicalPair(MjPair):
    potential: object = None
    metric: object = None


@dataclasses.dataclass
class WaterWavePair(MjPair):
    depth: object = None
    surface_tension: object = None
    liouville_g: object = None
    defect_report: object = None


@dataclasses.dataclass
class MjConsistencyReport:
    """Sampled agreement of {H = E} with {calH = calE}."""
    n_rays: int
    n_angles: int
    n_found: int
    max_defect: float
    multiplier_min: float
    multiplier_max: float
    failed: list
    E: float
    calE: float


def _metric_callables(metric, dim, fd_step=1e-6):
    """Return (g(x) -> (...,d,d), dg(x) -> (...,d,d,d)) for the co-metric."""
    if metric is None:
        metric = np.eye(dim)
    if callable(metric):
        gfun = metric

        def dg(x):
            x = np.asarray(x, dtype=float)
            out = np.empty(x.shape[:-1] + (dim, dim, dim))
            for j in range(dim):
                e = np.zeros(dim)
                e[j] = fd_step
                out[..., j] = (np.asarray(gfun(x + e)) -
                               np.asarray(gfun(x - e))) / (2 * fd_step)
            return out

        return gfun, dg
    gmat = np.asarray(metric, dtype=float)

    def gconst(x):
        return np.broadcast_to(gmat, np.shape(x)[:-1] + (dim, dim))

    def dgzero(x):
        return np.zeros(np.shape(x)[:-1] + (dim, dim, dim))

    return gconst, dgzero


def build_mechanical_pair(V, E, metric=None, grad_V=None, dim=2,
                          grid_n=64, label="mechanical"):
    """Kinetic/potential pair: H = |xi|^2_g + V(x), calH = |xi|^2_g / (E - V).

    V may be a TrigField, a constant, a (value, grad) tuple, or a callable
    (finite-difference gradient).  The co-metric may be a constant matrix or a
    callable x -> (d, d) SPD array.  Validates E > max V and metric
    nondegeneracy on a grid of grid_n^dim sample points.
    """
    if grad_V is not None:
        V = (V, grad_V)
    vval, vgrad = _as_scalar_field(V, dim)
    gfun, dgfun = _metric_callables(metric, dim)

    axes = [np.linspace(0.0, TWO_PI, grid_n, endpoint=False)] * dim
    Xg = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    vg = vval(Xg)
    if np.min(E - vg) <= 0:
        raise EnergyBelowPotential(
            f"E = {E} does not dominate the potential (max V = {np.max(vg):.6g})")
    eigs = np.linalg.eigvalsh(np.asarray(gfun(Xg), dtype=float))
    if np.min(eigs) <= 1e-10:
        raise DegenerateMetric(f"min co-metric eigenvalue {np.min(eigs):.3e}")

    def kinetic(x, xi):
        g = gfun(x)
        return np.einsum("...i,...ij,...j->...", xi, g, xi)

    def kinetic_grads(x, xi):
        g = gfun(x)
        dg = dgfun(x)
        gx = np.einsum("...i,...ijl,...j->...l", xi, dg, xi)
        gxi = 2.0 * np.einsum("...ij,...j->...i", g, xi)
        return gx, gxi

    def H_value(x, xi):
        return kinetic(x, xi) + vval(x)

    def H_grad(x, xi):
        gx, gxi = kinetic_grads(x, xi)
        return gx + vgrad(x), gxi

    def calH_value(x, xi):
        return kinetic(x, xi) / (E - vval(x))

    def calH_grad(x, xi):
        denom = E - vval(x)
        kin = kinetic(x, xi)
        gx, gxi = kinetic_grads(x, xi)
        gx = gx / denom[..., None] + (kin / denom ** 2)[..., None] * vgrad(x)
        gxi = gxi / denom[..., None]
        return gx, gxi

    fourier = None
    if isinstance(V, TrigField) and (metric is None or not callable(metric)):
        gmat = np.eye(dim) if metric is None else np.asarray(metric, dtype=float)
        km = max(int(np.abs(V.K).max(initial=0)), 1)
        fourier = V.to_series(k_max=km, deg_max=2)
        zero_k = (0,) * dim
        for i in range(dim):
            for j in range(dim):
                if gmat[i, j] == 0:
                    continue
                a = [0] * dim
                a[i] += 1
                a[j] += 1
                fourier.add_term(zero_k, tuple(a), gmat[i, j])

    H = SymbolField(dim, H_value, H_grad, fourier_rep=fourier,
                    time_reversal_even=True, name=f"{label}:H")
    calH = SymbolField(dim, calH_value, calH_grad,
                       time_reversal_even=True, name=f"{label}:calH")

    def multiplier(x):
        return 1.0 / (E - vval(x))

    return MechanicalPair(calH=calH, H=H, calE=1.0, E=float(E),
                          multiplier=multiplier, label=label,
                          potential=V, metric=metric)


# --- water-wave dispersion ------------------------------------------------------


def waterwave_symbol(depth, surface_tension, dim=2, name="waterwave:H"):
    """Dispersion symbol |xi| (1 + mu(x) |xi|^2) tanh(D(x) |xi|)."""
    dval, dgrad = _as_scalar_field(depth, dim)
    mval, mgrad = _as_scalar_field(surface_tension, dim)

    def value(x, xi):
        r = np.sqrt(np.sum(np.asarray(xi, dtype=float) ** 2, axis=-1))
        return r * (1.0 + mval(x) * r ** 2) * np.tanh(dval(x) * r)

    def grad(x, xi):
        xi = np.asarray(xi, dtype=float)
        r = np.sqrt(np.sum(xi ** 2, axis=-1))
        D = dval(x)
        mu = mval(x)
        t = np.tanh(D * r)
        sech2 = 1.0 - t ** 2
        dHdr = (1.0 + 3.0 * mu * r ** 2) * t + r * D * (1.0 + mu * r ** 2) * sech2
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[..., None] > 0, xi / np.maximum(r, 1e-300)[..., None],
                            0.0)
        gxi = dHdr[..., None] * unit
        gx = ((r ** 3 * t)[..., None] * mgrad(x) +
              (r ** 2 * (1.0 + mu * r ** 2) * sech2)[..., None] * dgrad(x))
        return gx, gxi

    return SymbolField(dim, value, grad, time_reversal_even=True, name=name)


def matched_liouville_g(depth, surface_tension, E, dim=2, grid_n=64, k_max=10):
    """Conformal factor g(x) = 1/rho(x)^2 with rho the dispersion root at E.

    Solves H(x, r) = E along radial momentum (the symbol is isotropic) on a
    periodic grid and trig-interpolates, so that calH = g(x) |xi|^2 equals 1 on
    {H = E} up to interpolation error.
    """
    from scipy.optimize import brentq

    sym = waterwave_symbol(depth, surface_tension, dim=dim)
    axes = [np.linspace(0.0, TWO_PI, grid_n, endpoint=False)] * dim
    mesh = np.meshgrid(*axes, indexing="ij")
    shape = mesh[0].shape
    X = np.stack(mesh, axis=-1).reshape(-1, dim)
    unit = np.zeros(dim)
    unit[0] = 1.0

    def f_at(x, r):
        return float(sym.value(x, r * unit)) - E

    rho = np.empty(len(X))
    for i, x in enumerate(X):
        r_hi = 1.0
        while f_at(x, r_hi) < 0 and r_hi < 1e6:
            r_hi *= 2.0
        rho[i] = brentq(lambda r: f_at(x, r), 1e-12, r_hi, xtol=1e-14, rtol=1e-15)
    return TrigField.from_samples((1.0 / rho ** 2).reshape(shape), k_max=k_max)


def build_waterwave_pair(depth, surface_tension, liouville_g, E, dim=2,
                         strict=False, defect_tol=1e-6, grid_n=32,
                         n_rays=16, n_angles=16, seed=0, label="waterwave"):
    """Pair the dispersion symbol with calH = g(x) |xi|^2, calE = 1.

    The user supplies the candidate conformal factor g; the constructor samples
    the correspondence defect |calH - 1| on {H = E} and attaches the report.
    In strict mode a max defect above defect_tol raises.
    """
    dval, _ = _as_scalar_field(depth, dim)
    axes = [np.linspace(0.0, TWO_PI, grid_n, endpoint=False)] * dim
    Xg = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    dmin = np.min(dval(Xg))
    if dmin <= 0:
        raise NegativeDepth(f"min depth {dmin:.6g} <= 0")

    H = waterwave_symbol(depth, surface_tension, dim=dim, name=f"{label}:H")
    gval, ggrad = _as_scalar_field(liouville_g, dim)

    def calH_value(x, xi):
        return gval(x) * np.sum(np.asarray(xi, dtype=float) ** 2, axis=-1)

    def calH_grad(x, xi):
        xi = np.asarray(xi, dtype=float)
        r2 = np.sum(xi ** 2, axis=-1)
        return r2[..., None] * ggrad(x), 2.0 * gval(x)[..., None] * xi

    calH = SymbolField(dim, calH_value, calH_grad, time_reversal_even=True,
                       name=f"{label}:calH")
    pair = WaterWavePair(calH=calH, H=H, calE=1.0, E=float(E), label=label,
                         depth=depth, surface_tension=surface_tension,
                         liouville_g=liouville_g)
    report = mj_consistency_report(pair, n_rays=n_rays, n_angles=n_angles,
                                   seed=seed)
    pair.defect_report = report
    if strict and report.max_defect > defect_tol:
        raise MjcDefectAboveTolerance(
            f"max |calH - calE| = {report.max_defect:.3e} on sampled surface "
            f"(tol {defect_tol:.1e})")
    return pair


# --- Randers deformation of the round co-metric ----------------------------------


@dataclasses.dataclass
class KatokModel:
    """H = lambda + eta in the equatorial chart of the round sphere.

    lambda(q, xi) = sqrt(xi_1^2 / cos^2 q_2 + xi_2^2) is the round co-norm,
    eta = alpha * xi_1 the Killing drift; commuting ({lambda, eta} = 0) and
    1-homogeneous in xi.  The chart is valid away from the poles; flows should
    stay inside |q_2| <= pi/2 - band_margin.
    """
    alpha: float
    lam: SymbolField
    eta: SymbolField
    hamiltonian: SymbolField
    band_margin: float = 0.1

    def equator_point(self, branch="+"):
        """Unit-energy equatorial initial condition for the given branch."""
        if branch == "+":
            xi1 = 1.0 / (1.0 + self.alpha)
        elif branch == "-":
            xi1 = -1.0 / (1.0 - self.alpha)
        else:
            raise ValueError("branch must be '+' or '-'")
        return PhasePoint([0.0, 0.0], [xi1, 0.0])

    def rotation_angle(self, branch="+"):
        """Poincare rotation angle of the equator orbit: 2*pi / (1 +- alpha)."""
        s = 1.0 if branch == "+" else -1.0
        return TWO_PI / (1.0 + s * self.alpha)


def katok_hamiltonian(alpha, band_margin=0.1):
    if not 0.0 <= alpha < 1.0:
        raise FluxOutOfRange(f"alpha = {alpha} outside [0, 1)")

    def lam_value(x, xi):
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        c = np.cos(x[..., 1])
        return np.sqrt(xi[..., 0] ** 2 / c ** 2 + xi[..., 1] ** 2)

    def lam_grad(x, xi):
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        c = np.cos(x[..., 1])
        lam = np.sqrt(xi[..., 0] ** 2 / c ** 2 + xi[..., 1] ** 2)
        lam_safe = np.maximum(lam, 1e-300)
        gx = np.zeros_like(x)
        gx[..., 1] = xi[..., 0] ** 2 * np.sin(x[..., 1]) / (c ** 3 * lam_safe)
        gxi = np.stack([xi[..., 0] / (c ** 2 * lam_safe),
                        xi[..., 1] / lam_safe], axis=-1)
        return gx, gxi

    lam = SymbolField(2, lam_value, lam_grad, time_reversal_even=True,
                      name="katok:lambda")

    def eta_value(x, xi):
        return alpha * np.asarray(xi, dtype=float)[..., 0]

    def eta_grad(x, xi):
        x = np.asarray(x, dtype=float)
        gx = np.zeros(np.broadcast_shapes(np.shape(x), np.shape(xi)))
        gxi = np.zeros_like(gx)
        gxi[..., 0] = alpha
        return gx, gxi

    eta = SymbolField(2, eta_value, eta_grad, time_reversal_even=(alpha == 0.0),
                      name="katok:eta")

    def H_value(x, xi):
        return lam_value(x, xi) + eta_value(x, xi)

    def H_grad(x, xi):
        gx, gxi = lam_grad(x, xi)
        ex, exi = eta_grad(x, xi)
        return gx + ex, gxi + exi

    H = SymbolField(2, H_value, H_grad, time_reversal_even=(alpha == 0.0),
                    name="katok:H")
    return KatokModel(alpha=float(alpha), lam=lam, eta=eta, hamiltonian=H,
                      band_margin=band_margin)


# --- correspondence diagnostics ---------------------------------------------------


def _multipliers(pair, x, xi):
    """G with X_calH = G X_H, from gradient projection; vectorized."""
    hx, hxi = pair.H.grad(x, xi)
    cx, cxi = pair.calH.grad(x, xi)
    num = np.sum(cx * hx, axis=-1) + np.sum(cxi * hxi, axis=-1)
    den = np.sum(hx * hx, axis=-1) + np.sum(hxi * hxi, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return num / den, np.sqrt(den)


def mj_multiplier(pair, p):
    """Multiplier G at an on-surface point (PhasePoint or (x, xi) arrays)."""
    if isinstance(p, PhasePoint):
        x, xi = p.x, p.xi
    else:
        x, xi = p
    G, gradnorm = _multipliers(pair, x, xi)
    hval = pair.H.value(x, xi)
    bad = (np.abs(hval - pair.E) <= 1e-8) & (gradnorm <= 1e-8)
    if np.any(bad):
        raise MultiplierSingular("vanishing H-gradient on the energy surface")
    return float(G) if np.ndim(G) == 0 else G


def _vector_bisection(fun, lo, hi, iters=60):
    """Rootfind fun(r) = 0 per component on brackets [lo, hi] (fun(lo) < 0 < fun(hi))."""
    lo = lo.copy()
    hi = hi.copy()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        neg = fun(mid) < 0
        lo = np.where(neg, mid, lo)
        hi = np.where(neg, hi, mid)
    return 0.5 * (lo + hi)


def mj_consistency_report(pair, n_rays=16, n_angles=16, r_max=16.0, seed=0):
    """Sample {H = E} along momentum rays and report the calH defect there.

    Base points x are drawn from a seeded RNG (n_rays of them), each carrying
    n_angles equally spaced momentum directions.  Rays without a sign change
    of H - E on (0, r_max] are recorded as failed; if every ray fails the
    surface was not found at all.
    """
    if n_rays < 4 or n_angles < 4:
        raise ValueError("need n_rays >= 4 and n_angles >= 4")
    d = pair.H.dim
    rng = np.random.default_rng(seed)
    X0 = rng.uniform(0.0, TWO_PI, size=(n_rays, d))
    theta = np.arange(n_angles) * (TWO_PI / n_angles)
    if d == 1:
        U = np.array([[1.0], [-1.0]])[np.arange(n_angles) % 2]
    else:
        U = np.zeros((n_angles, d))
        U[:, 0] = np.cos(theta)
        U[:, 1] = np.sin(theta)

    X = np.repeat(X0, n_angles, axis=0)
    Uall = np.tile(U, (n_rays, 1))
    N = len(X)

    # bracket by geometric scan
    scan = np.geomspace(1e-6, r_max, 48)
    vals = np.stack([pair.H.value(X, r * Uall) - pair.E for r in scan])
    sign_change = (vals[:-1] < 0) & (vals[1:] >= 0)
    has_root = sign_change.any(axis=0)
    first = np.argmax(sign_change, axis=0)

    failed = [(X[i].copy(), float(np.arctan2(Uall[i, 1] if d > 1 else 0.0,
                                             Uall[i, 0])))
              for i in np.nonzero(~has_root)[0]]
    if not np.any(has_root):
        raise SurfaceNotFound("no H = E root on any sampled ray")

    Xr = X[has_root]
    Ur = Uall[has_root]
    lo = scan[first[has_root]]
    hi = scan[first[has_root] + 1]

    def f(r):
        return pair.H.value(Xr, r[:, None] * Ur) - pair.E

    r_root = _vector_bisection(f, lo, hi)
    P_xi = r_root[:, None] * Ur
    defect = np.abs(pair.calH.value(Xr, P_xi) - pair.calE)
    G, _ = _multipliers(pair, Xr, P_xi)
    return MjConsistencyReport(
        n_rays=n_rays, n_angles=n_angles, n_found=int(has_root.sum()),
        max_defect=float(defect.max()), multiplier_min=float(G.min()),
        multiplier_max=float(G.max()), failed=failed,
        E=pair.E, calE=pair.calE)
