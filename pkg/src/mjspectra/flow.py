"""Hamiltonian flows on T^d x R^d and reparametrization diagnostics.

Integration uses a fixed-step 11-stage explicit Runge-Kutta scheme of order 8
(Cooper-Verner tableau).  Angle coordinates are kept UNWRAPPED along
trajectories so rotation vectors can be read off the continuous lift; wrap at
display time via models.wrap_angles.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from .errors import (EnergyDriftExceeded, FieldsNotParallel,
                     InsufficientWinding, LoopNotClosed, NotOnSurface,
                     StepRejected)
from .models import PhasePoint

# --- Cooper-Verner order-8 tableau ------------------------------------------

_S21 = np.sqrt(21.0)

_C = np.array([0.0, 1/2, 1/2, (7 + _S21) / 14, (7 + _S21) / 14, 1/2,
               (7 - _S21) / 14, (7 - _S21) / 14, 1/2, (7 + _S21) / 14, 1.0])

_A = np.zeros((11, 11))
_A[1, 0] = 1/2
_A[2, :2] = [1/4, 1/4]
_A[3, :3] = [1/7, (-7 - 3 * _S21) / 98, (21 + 5 * _S21) / 49]
_A[4, :4] = [(11 + _S21) / 84, 0, (18 + 4 * _S21) / 63, (21 - _S21) / 252]
_A[5, :5] = [(5 + _S21) / 48, 0, (9 + _S21) / 36, (-231 + 14 * _S21) / 360,
             (63 - 7 * _S21) / 80]
_A[6, :6] = [(10 - _S21) / 42, 0, (-432 + 92 * _S21) / 315,
             (633 - 145 * _S21) / 90, (-504 + 115 * _S21) / 70,
             (63 - 13 * _S21) / 35]
_A[7, :7] = [1/14, 0, 0, 0, (14 - 3 * _S21) / 126, (13 - 3 * _S21) / 63, 1/9]
_A[8, :8] = [1/32, 0, 0, 0, (91 - 21 * _S21) / 576, 11/72,
             (-385 - 75 * _S21) / 1152, (63 + 13 * _S21) / 128]
_A[9, :9] = [1/14, 0, 0, 0, 1/9, (-733 - 147 * _S21) / 2205,
             (515 + 111 * _S21) / 504, (-51 - 11 * _S21) / 56,
             (132 + 28 * _S21) / 245]
_A[10, :10] = [0, 0, 0, 0, (-42 + 7 * _S21) / 18, (-18 + 28 * _S21) / 45,
               (-273 - 53 * _S21) / 72, (301 + 53 * _S21) / 72,
               (28 - 28 * _S21) / 45, (49 - 7 * _S21) / 18]

_B = np.array([1/20, 0, 0, 0, 0, 0, 0, 49/180, 16/45, 49/180, 1/20])

# consistency of the transcribed tableau (row sums = nodes, weights sum to 1)
assert np.max(np.abs(_A.sum(axis=1) - _C)) < 1e-14
assert abs(_B.sum() - 1.0) < 1e-15

_STAGE_NONZERO = [np.nonzero(_A[i])[0] for i in range(11)]


def rk8_tableau():
    """(A, b, c) of the order-8 stepper (copies)."""
    return _A.copy(), _B.copy(), _C.copy()


def _rk8_paths(field, y0, n_steps, dt, record_every):
    """Fixed-step integration of dy/dt = field(y), vectorized over rows of y0.

    Returns (times, states) with states.shape = (n_records, *y0.shape).
    """
    y = np.array(y0, dtype=float)
    n_rec = n_steps // record_every
    out = np.empty((n_rec + 1,) + y.shape)
    out[0] = y
    K = [None] * 11
    rec = 1
    for step in range(1, n_steps + 1):
        K[0] = field(y)
        for i in range(1, 11):
            yi = y.copy()
            for j in _STAGE_NONZERO[i]:
                yi += (dt * _A[i, j]) * K[j]
            K[i] = field(yi)
        y = y + dt * (_B[0] * K[0] + _B[7] * K[7] + _B[8] * K[8]
                      + _B[9] * K[9] + _B[10] * K[10])
        if step % record_every == 0:
            out[rec] = y
            rec += 1
    times = np.arange(n_rec + 1) * (dt * record_every)
    return times, out


@dataclasses.dataclass
class Trajectory:
    """Uniformly sampled orbit; angle block of `states` is the unwrapped lift."""
    times: np.ndarray          # (n,)
    states: np.ndarray         # (n, 2d)
    energies: np.ndarray       # (n,)
    energy_drift: float
    sym_name: str = ""
    dt: float = 0.0
    aux: np.ndarray = None     # optional integral of an auxiliary observable
    meta: dict = dataclasses.field(default_factory=dict)

    @property
    def d(self):
        return self.states.shape[1] // 2

    @property
    def x(self):
        return self.states[:, :self.d]

    @property
    def xi(self):
        return self.states[:, self.d:]

    def point(self, i):
        return PhasePoint(self.states[i, :self.d], self.states[i, self.d:])


def _field_closure(sym, aux=None):
    d = sym.dim

    def field(y):
        x, xi = y[..., :d], y[..., d:2 * d]
        gxi, mgx = sym.hamiltonian_field(x, xi)
        if aux is None:
            return np.concatenate([gxi, mgx], axis=-1)
        a = np.asarray(aux(x, xi))[..., None]
        return np.concatenate([gxi, mgx, a], axis=-1)

    return field


def integrate(sym, p0, t_end, dt, record_every=1, checked=True,
              drift_bound=None, aux=None):
    """Integrate the Hamiltonian flow of `sym` from p0 for time t_end.

    p0 may be a PhasePoint or a state vector of length 2d.  The step is
    adjusted slightly so an integer number of steps lands exactly on t_end.
    In checked mode the max |H - H(0)| over recorded samples must stay below
    drift_bound (default 1e-9 * max(t_end, 1)).  `aux` optionally integrates a
    scalar observable aux(x, xi) along the orbit (stored in Trajectory.aux).
    """
    return integrate_many(sym, [p0], t_end, dt, record_every=record_every,
                          checked=checked, drift_bound=drift_bound,
                          aux=aux)[0]


def integrate_many(sym, points, t_end, dt, record_every=1, checked=True,
                   drift_bound=None, aux=None):
    """Vectorized integrate() over a batch of initial conditions."""
    d = sym.dim
    Y0 = np.array([p.as_state() if isinstance(p, PhasePoint) else
                   np.asarray(p, dtype=float) for p in points])
    if aux is not None:
        Y0 = np.concatenate([Y0, np.zeros((len(Y0), 1))], axis=1)
    n_steps = max(1, round(t_end / dt))
    n_steps = record_every * max(1, int(np.ceil(n_steps / record_every)))
    dt_eff = t_end / n_steps
    field = _field_closure(sym, aux)
    times, states = _rk8_paths(field, Y0, n_steps, dt_eff, record_every)

    bad = ~np.isfinite(states).all(axis=(1, 2))
    if np.any(bad):
        raise StepRejected(
            f"non-finite state first recorded at t = {times[np.argmax(bad)]:.6g}")

    trajs = []
    for m in range(len(Y0)):
        st = states[:, m, :2 * d]
        en = sym.value(st[:, :d], st[:, d:])
        drift = float(np.max(np.abs(en - en[0])))
        bound = drift_bound if drift_bound is not None else 1e-9 * max(t_end, 1.0)
        if checked and drift > bound:
            raise EnergyDriftExceeded(
                f"energy drift {drift:.3e} exceeds bound {bound:.3e} "
                f"(dt = {dt_eff:.3g}); reduce the step or disable checking")
        trajs.append(Trajectory(
            times=times.copy(), states=st.copy(), energies=en,
            energy_drift=drift, sym_name=sym.name, dt=dt_eff * record_every,
            aux=states[:, m, 2 * d] if aux is not None else None,
            meta={"method": "cooper-verner-8", "dt_step": dt_eff}))
    return trajs


# --- reparametrization --------------------------------------------------------


def _reparam_factors(pair, x, xi):
    """Pointwise G with X_calH = G X_H, plus the parallelism residual."""
    hxd, hxid = pair.H.hamiltonian_field(x, xi)
    cxd, cxid = pair.calH.hamiltonian_field(x, xi)
    num = np.sum(cxd * hxd, axis=-1) + np.sum(cxid * hxid, axis=-1)
    den = np.sum(hxd * hxd, axis=-1) + np.sum(hxid * hxid, axis=-1)
    G = num / den
    rx = cxd - G[..., None] * hxd
    rxi = cxid - G[..., None] * hxid
    resid = np.sqrt(np.sum(rx ** 2, axis=-1) + np.sum(rxi ** 2, axis=-1))
    norm = np.sqrt(np.sum(cxd ** 2, axis=-1) + np.sum(cxid ** 2, axis=-1))
    return G, resid, norm


def reparam_factor(pair, p, surface_tol=1e-6, parallel_tol=1e-6):
    """Multiplier G at p with X_calH = G X_H; validates p and parallelism."""
    if isinstance(p, PhasePoint):
        x, xi = p.x, p.xi
    else:
        x, xi = np.asarray(p[0], dtype=float), np.asarray(p[1], dtype=float)
    if abs(float(pair.H.value(x, xi)) - pair.E) > surface_tol or \
            abs(float(pair.calH.value(x, xi)) - pair.calE) > surface_tol:
        raise NotOnSurface("point is not on the shared energy surface")
    G, resid, norm = _reparam_factors(pair, x, xi)
    if resid > parallel_tol * max(norm, 1e-300):
        raise FieldsNotParallel(
            f"|X_calH - G X_H| / |X_calH| = {resid / max(norm, 1e-300):.3e}")
    return float(G)


def bump_weights(n):
    """Birkhoff bump w(s) = exp(-1/(s(1-s))) sampled at s = (j+1/2)/n."""
    s = (np.arange(n) + 0.5) / n
    return np.exp(-1.0 / (s * (1.0 - s)))


@dataclasses.dataclass
class AverageReparam:
    value: float
    convergence: float
    weighting: str

    def __float__(self):
        return self.value


def average_reparam(pair, traj, weighting="trapezoid", surface_tol=1e-6):
    """Time average of G along an on-surface trajectory.

    weighting "trapezoid" is the plain uniform-grid trapezoid rule (O(1/T)
    convergence on quasi-periodic orbits); "birkhoff" applies the bump-weighted
    mean, which converges superpolynomially on Diophantine tori.  The
    convergence field reports |full-window - half-window| averages.
    """
    x, xi = traj.x, traj.xi
    h_err = np.max(np.abs(pair.H.value(x, xi) - pair.E))
    if h_err > surface_tol:
        raise NotOnSurface(f"trajectory leaves the surface by {h_err:.3e}")
    G, _, _ = _reparam_factors(pair, x, xi)

    def mean(vals):
        if weighting == "birkhoff":
            w = bump_weights(len(vals))
            return float(np.sum(w * vals) / np.sum(w))
        if weighting != "trapezoid":
            raise ValueError(f"unknown weighting {weighting!r}")
        w = np.ones(len(vals))
        w[0] = w[-1] = 0.5
        return float(np.sum(w * vals) / np.sum(w))

    full = mean(G)
    half = mean(G[:max(2, len(G) // 2)])
    return AverageReparam(value=full, convergence=abs(full - half),
                          weighting=weighting)


# --- rotation vectors ------------------------------------------------------------


@dataclasses.dataclass
class RotationEstimate:
    omega: np.ndarray
    confidence: np.ndarray
    windings: np.ndarray
    t_span: float


def rotation_number(traj, min_advance=100.0):
    """Bump-weighted Birkhoff estimate of the rotation vector.

    The angle lift uses nearest-branch continuation (per-sample increments
    must stay below pi in modulus; integrator output is already continuous).
    Raises InsufficientWinding when the total unwrapped advance is below
    `min_advance` radians.  confidence = |full-window - half-window| estimate.
    """
    phi = np.unwrap(traj.x, axis=0)
    dphi = np.diff(phi, axis=0)
    dt = traj.times[1] - traj.times[0]
    total = phi[-1] - phi[0]
    if np.linalg.norm(total) < min_advance:
        raise InsufficientWinding(
            f"total angle advance {np.linalg.norm(total):.3g} rad < {min_advance}")

    def wb(incr):
        w = bump_weights(len(incr))
        return np.sum(w[:, None] * incr, axis=0) / (np.sum(w) * dt)

    omega = wb(dphi)
    omega_half = wb(dphi[:max(2, len(dphi) // 2)])
    return RotationEstimate(omega=omega,
                            confidence=np.abs(omega - omega_half),
                            windings=total / (2 * np.pi),
                            t_span=float(traj.times[-1] - traj.times[0]))


# --- loop actions -----------------------------------------------------------------


@dataclasses.dataclass
class CycleAction:
    value: float
    quadrature_error: float
    winding: np.ndarray
    energy: float


def action_integral(sym, cycle, n_samples=1024, closure_tol=1e-8):
    """Loop action of a closed cycle: integral of xi . dx.

    `cycle` is either a callable s in [0, 1] -> (x(s), xi(s)) with x the
    continuous (unwrapped) lift, or a pair of arrays (xs, xis) of shape
    (m+1, d) INCLUDING the endpoint; the endpoint must return to the start
    modulo 2*pi in x (the winding is inferred) and exactly in xi.  Quadrature
    is the periodic trapezoid rule with spectral differentiation, so the value
    converges spectrally for smooth loops; quadrature_error compares against
    the half-resolution result.
    """
    if callable(cycle):
        s = np.linspace(0.0, 1.0, n_samples + 1)
        xs, xis = cycle(s)
        xs = np.asarray(xs, dtype=float)
        xis = np.asarray(xis, dtype=float)
    else:
        xs = np.asarray(cycle[0], dtype=float)
        xis = np.asarray(cycle[1], dtype=float)
    if xs.ndim == 1:
        xs = xs[:, None]
        xis = xis[:, None]
    m = len(xs) - 1
    winding = np.round((xs[-1] - xs[0]) / (2 * np.pi))
    gap_x = np.max(np.abs(xs[-1] - xs[0] - 2 * np.pi * winding))
    gap_xi = np.max(np.abs(xis[-1] - xis[0]))
    if gap_x > closure_tol or gap_xi > closure_tol:
        raise LoopNotClosed(f"endpoint gaps: x {gap_x:.3e}, xi {gap_xi:.3e}")

    def quad(xs_m, xis_m, m):
        s = np.arange(m) / m
        lin = 2 * np.pi * winding[None, :] * s[:, None]
        per = xs_m - lin
        freqs = np.fft.fftfreq(m, d=1.0 / m)
        dper = np.fft.ifft(2j * np.pi * freqs[:, None] *
                           np.fft.fft(per, axis=0), axis=0).real
        xdot = dper + 2 * np.pi * winding[None, :]
        return float(np.mean(np.sum(xis_m * xdot, axis=1)))

    value = quad(xs[:m], xis[:m], m)
    half = quad(xs[:m:2], xis[:m:2], m // 2)
    energy = float(np.mean(sym.value(xs[:m], xis[:m]))) if sym is not None else np.nan
    return CycleAction(value=value, quadrature_error=abs(value - half),
                       winding=winding.astype(int), energy=energy)


# --- orbit geometry ------------------------------------------------------------


def embed_states(states, d):
    """(cos x, sin x, xi) embedding that respects the angle wraparound."""
    x, xi = states[:, :d], states[:, d:]
    return np.concatenate([np.cos(x), np.sin(x), xi], axis=1)


def orbit_set_distance(t1, t2):
    """Symmetric Hausdorff distance between two sampled orbits.

    Accepts Trajectory objects or raw state arrays (n, 2d).  Distances are
    measured in the (cos x, sin x, xi) chordal embedding, which agrees with
    the torus metric to third order at small separations.
    """
    from scipy.spatial import cKDTree

    s1 = t1.states if isinstance(t1, Trajectory) else np.asarray(t1, dtype=float)
    s2 = t2.states if isinstance(t2, Trajectory) else np.asarray(t2, dtype=float)
    d = s1.shape[1] // 2
    e1 = embed_states(s1, d)
    e2 = embed_states(s2, d)
    d12 = cKDTree(e2).query(e1, workers=-1)[0].max()
    d21 = cKDTree(e1).query(e2, workers=-1)[0].max()
    return float(max(d12, d21))


def resample_dense(sym, traj, spacing):
    """Cubic-Hermite densification of a trajectory to the given state spacing.

    Uses the exact vector field at the stored samples, so the interpolation
    error is O(dt^4) per step; returns the raw state array (n_fine, 2d).
    """
    d = sym.dim
    st = traj.states
    f = _field_closure(sym)(st)
    dt = traj.times[1] - traj.times[0]
    step = np.max(np.linalg.norm(np.diff(st, axis=0), axis=1))
    n_sub = max(1, int(np.ceil(step / spacing)))
    u = (np.arange(n_sub) / n_sub)[None, :, None]
    y0 = st[:-1, None, :]
    y1 = st[1:, None, :]
    f0 = f[:-1, None, :] * dt
    f1 = f[1:, None, :] * dt
    h00 = 2 * u ** 3 - 3 * u ** 2 + 1
    h10 = u ** 3 - 2 * u ** 2 + u
    h01 = -2 * u ** 3 + 3 * u ** 2
    h11 = u ** 3 - u ** 2
    fine = h00 * y0 + h10 * f0 + h01 * y1 + h11 * f1
    return np.concatenate([fine.reshape(-1, 2 * d), st[-1:][:, :2 * d]], axis=0)


# --- Poincare section rotation -----------------------------------------------------


@dataclasses.dataclass
class PoincareRotation:
    beta: float
    n_returns: int
    phase_total: float


def poincare_rotation(traj, wind_axis=0, plane=(1, 3), q_scale=1.0):
    """Section-map rotation angle from the unwrapped transverse phase.

    Crossings are the passages of the unwrapped angle `wind_axis` through
    multiples of 2*pi from its start (the winding coordinate must advance
    monotonically); the transverse phase is the unwrapped polar angle of
    (q_scale * state[plane[0]], state[plane[1]]) linearly interpolated at the
    crossing times.  Returns |total phase change| / number of returns.
    """
    q = traj.states[:, wind_axis]
    if not (np.all(np.diff(q) > 0) or np.all(np.diff(q) < 0)):
        raise ValueError("winding coordinate is not monotone along the orbit")
    sgn = 1.0 if q[1] > q[0] else -1.0
    qs = sgn * q
    theta = np.unwrap(np.arctan2(traj.states[:, plane[1]],
                                 q_scale * traj.states[:, plane[0]]))
    n_ret = int((qs[-1] - qs[0]) // (2 * np.pi))
    if n_ret < 1:
        raise InsufficientWinding("fewer than one section return")
    levels = qs[0] + 2 * np.pi * np.arange(n_ret + 1)
    idx = np.searchsorted(qs, levels[1:], side="left")
    frac = (levels[1:] - qs[idx - 1]) / (qs[idx] - qs[idx - 1])
    th_cross = theta[idx - 1] + frac * (theta[idx] - theta[idx - 1])
    total = th_cross[-1] - theta[0]
    return PoincareRotation(beta=abs(total) / n_ret, n_returns=n_ret,
                            phase_total=float(total))
