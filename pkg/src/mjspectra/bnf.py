"""Birkhoff normal forms and fast-angle averaging for Fourier-Taylor symbols.

Near a torus carrying Diophantine frequencies, a symbol

    H(phi, iota) = E0 + <omega, iota> + (higher Taylor orders)

is conjugated order by order: step m removes the angle dependence of the
Taylor terms of degree m + 1 by solving a homological equation and pushing
the symbol through the time-1 canonical flow of the solution (a Lie
series).  After N steps the angle-free part is an integrable polynomial
and the remainder starts at degree N + 2; `remainder_order_probe` checks
that claim numerically by composing the generator flows with an ODE
integrator, which exercises a completely independent code path from the
series algebra.

Near a rational/degenerate torus with one fast angle the analogue is
`rational_average`: only the x1 dependence is removable, with divisor
i*k1*omega1(x2) -- positive frequency replaces the Diophantine condition.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from .errors import (FrequencyVanishes, NondegeneracyFailed,
                     NumericalFailure, SmallDivisor)
from .series import HARD_DEG_MAX, FourierTaylorSeries

__all__ = [
    "homological_solve", "lie_transform", "bnf_normalize", "BnfResult",
    "remainder_order_probe", "ProbeResult", "rational_average",
    "LarmorReduction", "larmor_operator", "LarmorOperator",
    "critical_set_classify", "CriticalSetReport",
]

TWO_PI = 2.0 * np.pi


def _divisor_guard(k, dio_guard, dio_params):
    if dio_guard is not None:
        return float(dio_guard)
    if dio_params is not None:
        kn = max(1, int(np.sum(np.abs(k))))
        return dio_params.dio_c * kn ** (-dio_params.sigma)
    return 1e-8


def homological_solve(rhs: FourierTaylorSeries, omega, dio_guard=None,
                      dio_params=None) -> FourierTaylorSeries:
    """Solve <omega, d_phi g> = rhs mode by mode: g_k = rhs_k/(i<k, omega>).

    The right side must have zero angle average; a k = 0 term has divisor
    zero and is reported as a (trivial) small divisor.  `dio_guard` is an
    absolute lower bound on |<k, omega>|; when omitted, DiophantineParams
    supply the mode-dependent bound dio_c*|k|^-sigma, and with neither the
    guard falls back to 1e-8.
    """
    omega = np.asarray(omega, dtype=float)
    g = FourierTaylorSeries(rhs.dim, k_max=rhs.k_max, deg_max=rhs.deg_max)
    for (k, a), c in rhs.terms.items():
        kw = float(np.dot(k, omega))
        guard = _divisor_guard(k, dio_guard, dio_params)
        if abs(kw) < guard:
            raise SmallDivisor(
                f"|<k, omega>| = {abs(kw):.3e} below guard {guard:.3e} at k = {k}",
                k=k, divisor=kw)
        g.add_term(k, a, c / (1j * kw))
    return g


def lie_transform(f: FourierTaylorSeries, g: FourierTaylorSeries,
                  tol: float = 1e-16) -> FourierTaylorSeries:
    """exp(ad_g) f = f + {g,f} + {g,{g,f}}/2! + ... (f along g's time-1 flow).

    Terminates exactly once the iterated bracket dies (generators of Taylor
    degree >= 2 raise the degree each round), or numerically when the terms
    fall below tol relative to f.
    """
    out = f.copy()
    term = f
    scale = max(f.sup_coeff(), 1.0)
    for j in range(1, HARD_DEG_MAX + 40):
        term = g.poisson(term) * (1.0 / j)
        if len(term) == 0:
            return out
        out = out + term
        if term.sup_coeff() < tol * scale:
            return out
    raise NumericalFailure("Lie series did not terminate or converge")


@dataclass
class BnfResult:
    normal_form: FourierTaylorSeries   # k = 0 polynomial through degree N+1
    generators: List[FourierTaylorSeries]
    remainder_series: FourierTaylorSeries
    omega: np.ndarray
    E0: float
    transformed: FourierTaylorSeries
    N: int

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["multi_index", "coefficient"])
            for (k, a), c in sorted(self.normal_form.terms.items(),
                                    key=lambda kv: (sum(kv[0][1]), kv[0][1])):
                writer.writerow([" ".join(str(x) for x in a), f"{c.real:.17g}"])


def _clean_cancelled(work, rhs_sel, scale, context):
    """Subtract the roundoff shadow of an exactly-cancelled block."""
    leftover = rhs_sel(work)
    if len(leftover) == 0:
        return work
    if leftover.sup_coeff() > 1e-10 * scale:
        raise NumericalFailure(
            f"homological cancellation failed at {context}: "
            f"residual {leftover.sup_coeff():.3e}")
    return work - leftover


def bnf_normalize(H: FourierTaylorSeries, omega, N: int, dio_guard=None,
                  dio_params=None) -> BnfResult:
    """Iterated averaging: remove angle dependence through Taylor degree N+1.

    Step m solves the homological equation for the degree-(m+1) oscillating
    block and transports the symbol by the generator's canonical flow; any
    angle-dependent linear terms are folded into the first step.  The
    normal-form coefficients produced at step m are untouched by later
    steps (the construction is nested).
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    omega = np.asarray(omega, dtype=float)
    d = H.dim
    scale = max(H.sup_coeff(), 1.0)
    zero_idx = (0,) * d
    if H.taylor_part(0).oscillating().sup_coeff() > 1e-14 * scale:
        raise ValueError("degree-0 part must be the constant E0 "
                         "(angle-dependent drift present)")
    E0 = H.get(zero_idx, zero_idx).real

    work = H.copy()
    generators: List[FourierTaylorSeries] = []
    for m in range(1, N + 1):
        rhs = work.taylor_part(m + 1).oscillating()
        if m == 1:
            rhs = rhs + work.taylor_part(1).oscillating()
        if len(rhs) == 0:
            generators.append(FourierTaylorSeries(d, k_max=H.k_max,
                                                  deg_max=H.deg_max))
            continue
        g = homological_solve(rhs, omega, dio_guard, dio_params)
        try:
            work = lie_transform(work, g)
        except SmallDivisor:
            raise
        work = _clean_cancelled(
            work, lambda w, mm=m: w.taylor_part(mm + 1).oscillating(),
            scale, f"order {m}")
        if m == 1:
            work = _clean_cancelled(
                work, lambda w: w.taylor_part(1).oscillating(), scale, "order 1")
        generators.append(g)

    normal_form = work.angle_average().taylor_up_to(N + 1)
    remainder = work - normal_form
    omega_out = np.array([normal_form.get(zero_idx, tuple(np.eye(d, dtype=int)[j])).real
                          for j in range(d)])
    return BnfResult(normal_form=normal_form, generators=generators,
                     remainder_series=remainder, omega=omega_out, E0=E0,
                     transformed=work, N=N)


# ---------------------------------------------------------------------------
# remainder probe by composed generator flows
# ---------------------------------------------------------------------------

def _series_field(g: FourierTaylorSeries):
    d = g.dim

    def field(y):
        x, xi = y[..., :d], y[..., d:]
        gx, gxi = g.grad_eval(x, xi)
        return np.concatenate([np.real(gxi), -np.real(gx)], axis=-1)

    return field


def _flow_time_one(g: FourierTaylorSeries, pts: np.ndarray,
                   n_steps: int = 50) -> np.ndarray:
    from .flow import _rk8_paths
    if len(g) == 0:
        return pts
    _, out = _rk8_paths(_series_field(g), pts, n_steps, 1.0 / n_steps, n_steps)
    return out[-1]


@dataclass
class ProbeResult:
    slope: float
    radii: np.ndarray
    residuals: np.ndarray
    exact: bool = False

    def __float__(self):
        return float(self.slope)


def remainder_order_probe(result: BnfResult, H_original: FourierTaylorSeries,
                          radii: Sequence[float], n_angles: int = 16,
                          n_dirs: int = 8, flow_steps: int = 50) -> ProbeResult:
    """Fit sup |H(composed flows(z)) - NF(iota)| ~ r^slope on action shells.

    The generator flows are integrated numerically (innermost generator
    first), so the probe shares no series bookkeeping with the normal-form
    construction it certifies.
    """
    radii = np.asarray(radii, dtype=float)
    if len(radii) < 4 or np.any(np.diff(radii) >= 0) or np.any(radii > 0.1):
        raise ValueError("radii must be >= 4 decreasing values, all <= 0.1")
    d = H_original.dim
    axes = [np.linspace(0, TWO_PI, n_angles, endpoint=False)] * d
    phis = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    th = TWO_PI * (np.arange(n_dirs) + 0.37) / n_dirs
    if d == 2:
        dirs = np.stack([np.cos(th), np.sin(th)], axis=-1)
    else:
        rng = np.random.default_rng(7)
        dirs = rng.normal(size=(n_dirs, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    scale = max(1.0, abs(result.E0))
    sups = np.empty(len(radii))
    for i, r in enumerate(radii):
        pts = np.concatenate([
            np.repeat(phis, n_dirs, axis=0),
            np.tile(r * dirs, (len(phis), 1))], axis=1)
        w = pts
        for g in reversed(result.generators):
            w = _flow_time_one(g, w, flow_steps)
        hval = np.real(H_original.eval(w[:, :d], w[:, d:]))
        nf = np.real(result.normal_form.eval(pts[:, :d], pts[:, d:]))
        sups[i] = np.max(np.abs(hval - nf))

    if np.all(sups < 1e-13 * scale):
        return ProbeResult(slope=np.inf, radii=radii, residuals=sups, exact=True)
    slope = np.polyfit(np.log(radii), np.log(np.maximum(sups, 1e-300)), 1)[0]
    return ProbeResult(slope=float(slope), radii=radii, residuals=sups)


# ---------------------------------------------------------------------------
# single fast angle: averaging over x1 with x2-dependent frequency
# ---------------------------------------------------------------------------

def _profile_1d(series_2d_modes: Dict[int, complex], k_max: int,
                deg_max: int = 2) -> FourierTaylorSeries:
    s = FourierTaylorSeries(1, k_max=k_max, deg_max=deg_max)
    for k2, c in series_2d_modes.items():
        s.add_term((k2,), (0,), c)
    return s


def _x1_oscillating(s: FourierTaylorSeries) -> FourierTaylorSeries:
    out = FourierTaylorSeries(s.dim, k_max=s.k_max, deg_max=s.deg_max)
    for (k, a), c in s.terms.items():
        if k[0] != 0:
            out.add_term(k, a, c)
    return out


@dataclass
class LarmorReduction:
    omega1_series: FourierTaylorSeries       # 1-D profile omega1(x2)
    b_coeffs: Dict[Tuple[int, int], FourierTaylorSeries]
    effective_H: FourierTaylorSeries         # x1-independent through degree N
    S_series: List[FourierTaylorSeries]      # per-degree generating series
    N: int
    E0: float
    xi2_curvature: np.ndarray                # d^2 H'/d xi2^2 at xi = 0 on x2 grid
    x2_grid: np.ndarray
    nondegenerate: bool
    pde_residual: float
    k1: Optional[float] = None
    critical_report: Optional["CriticalSetReport"] = None

    def omega1_profile(self, x2):
        x2 = np.asarray(x2, dtype=float)
        return np.real(self.omega1_series.eval(x2[..., None],
                                               np.zeros(x2.shape + (1,))))


def rational_average(H: FourierTaylorSeries, N: int,
                     n_grid: int = 256) -> LarmorReduction:
    """Average a fast-drift symbol H = E0 + omega1(x2) xi1 + O(|xi|^2) over x1.

    Degree by degree the x1-dependent block is cancelled through the flow
    of a generator solving (omega1 d_x1 - omega1' xi1 d_xi2) g = block;
    the principal division is by i k1 omega1(x2), which never vanishes
    when omega1 > 0, so no Diophantine condition enters.  The exposed
    S_series follow the opposite (generating-function) sign convention,
    omega1 * dS/dx1 + a_osc = 0; the drift-coupling part that convention
    drops is reported as pde_residual.
    """
    if H.dim != 2:
        raise ValueError("rational averaging is implemented for 2 degrees of freedom")
    if N < 2:
        raise ValueError("N must be at least 2 (the perturbation starts at degree 2)")
    zero2 = (0, 0)
    E0 = H.get(zero2, zero2).real
    scale = max(H.sup_coeff(), 1.0)

    omega1_modes: Dict[int, complex] = {}
    for (k, a), c in H.taylor_part(1).terms.items():
        if a != (1, 0) or k[0] != 0:
            raise ValueError(
                "degree-1 part must be omega1(x2) xi1 (fast-drift form); "
                f"found term k={k}, a={a}")
        omega1_modes[k[1]] = c
    omega1 = _profile_1d(omega1_modes, k_max=H.k_max)

    x2 = np.linspace(0, TWO_PI, n_grid, endpoint=False)
    w_vals = np.real(omega1.eval(x2[:, None], np.zeros((n_grid, 1))))
    if np.min(w_vals) <= 0:
        raise FrequencyVanishes(
            f"min omega1 = {np.min(w_vals):.3e} on the x2 grid")

    # 1/omega1 as a (0, k2) series, truncated at the working mode cap
    inv_modes = np.fft.fft(1.0 / w_vals) / n_grid
    inv_omega = FourierTaylorSeries(2, k_max=H.k_max, deg_max=H.deg_max)
    inv_omega.add_term((0, 0), (0, 0), inv_modes[0])
    for k2 in range(1, H.k_max + 1):
        inv_omega.add_term((0, k2), (0, 0), inv_modes[k2])
        inv_omega.add_term((0, -k2), (0, 0), inv_modes[-k2])

    # drift coupling M = -omega1'(x2) xi1 d/d_xi2
    wprime_xi1 = FourierTaylorSeries(2, k_max=H.k_max, deg_max=H.deg_max)
    for k2, c in omega1_modes.items():
        if k2 != 0:
            wprime_xi1.add_term((0, k2), (1, 0), 1j * k2 * c)

    def d_inverse(s):
        out = FourierTaylorSeries(2, k_max=s.k_max, deg_max=s.deg_max)
        for (k, a), c in s.terms.items():
            out.add_term(k, a, c / (1j * k[0]))
        return out * inv_omega

    def m_op(s):
        return -(wprime_xi1 * s.diota(1))

    work = H.copy()
    S_series: List[FourierTaylorSeries] = []
    residual = 0.0
    for deg in range(2, N + 1):
        osc = _x1_oscillating(work.taylor_part(deg))
        if len(osc) == 0:
            S_series.append(FourierTaylorSeries(2, k_max=H.k_max, deg_max=H.deg_max))
            continue
        # Neumann series g = sum_j (-D^-1 M)^j D^-1 osc, finite because M
        # lowers the xi2 degree each round
        g = FourierTaylorSeries(2, k_max=H.k_max, deg_max=H.deg_max)
        term = d_inverse(osc)
        while len(term) > 0:
            g = g + term
            term = -d_inverse(m_op(term))
            if len(_x1_oscillating(term)) != len(term):
                term = _x1_oscillating(term)
        work = lie_transform(work, g)
        work = _clean_cancelled(
            work, lambda w, dd=deg: _x1_oscillating(w.taylor_part(dd)),
            scale, f"degree {deg}")
        S_series.append(-g)
        residual = max(residual, m_op(g).l1_norm())

    effective = FourierTaylorSeries(2, k_max=H.k_max, deg_max=H.deg_max)
    for (k, a), c in work.terms.items():
        if k[0] == 0 and sum(a) <= N:
            effective.add_term(k, a, c)

    b_coeffs: Dict[Tuple[int, int], FourierTaylorSeries] = {}
    for (k, a), c in H.terms.items():
        if sum(a) == 2 and k[0] == 0:
            b = b_coeffs.setdefault(
                tuple(a), FourierTaylorSeries(1, k_max=H.k_max, deg_max=2))
            b.add_term((k[1],), (0,), c)
    for a in ((2, 0), (1, 1), (0, 2)):
        b_coeffs.setdefault(a, FourierTaylorSeries(1, k_max=H.k_max, deg_max=2))

    curv_series = FourierTaylorSeries(1, k_max=H.k_max, deg_max=2)
    for (k, a), c in effective.terms.items():
        if a == (0, 2):
            curv_series.add_term((k[1],), (0,), 2.0 * c)
    curvature = np.real(curv_series.eval(x2[:, None], np.zeros((n_grid, 1))))
    nondeg = bool(np.min(np.abs(curvature)) > 1e-8)

    return LarmorReduction(
        omega1_series=omega1, b_coeffs=b_coeffs, effective_H=effective,
        S_series=S_series, N=N, E0=E0, xi2_curvature=curvature, x2_grid=x2,
        nondegenerate=nondeg, pde_residual=float(residual))


@dataclass
class LarmorOperator:
    symbol: FourierTaylorSeries   # 1-D symbol p(x2, xi2)
    k1: float
    regime: str
    note: str = ""


def larmor_operator(red: LarmorReduction, k1: float,
                    quadratic_model: bool = False) -> LarmorOperator:
    """Freeze the fast momentum at xi1 = k1 and return the 1-D symbol.

    With `quadratic_model` the transverse part is replaced by xi2^2/2, so
    p = xi2^2/2 + k1 * omega1(x2).  For k1 > 0 the drift term makes wells
    at the minima of omega1; for k1 < 0 the profile is inverted and the
    slow motion runs against the drift (reported, not specially handled).
    """
    sym = FourierTaylorSeries(1, k_max=red.omega1_series.k_max,
                              deg_max=max(2, red.effective_H.deg_max))
    if quadratic_model:
        sym.add_term((0,), (2,), 0.5)
        for (k, a), c in red.omega1_series.terms.items():
            sym.add_term(k, (0,), k1 * c)
    else:
        for (k, a), c in red.effective_H.terms.items():
            sym.add_term((k[1],), (a[1],), c * k1 ** a[0])
    if k1 > 0:
        regime = "wells-at-minima"
    elif k1 < 0:
        regime = "against-the-drift"
    else:
        regime = "free"
    note = ("transverse quadratic model" if quadratic_model
            else "effective symbol restricted to xi1 = k1")
    return LarmorOperator(symbol=sym, k1=float(k1), regime=regime, note=note)


@dataclass
class CriticalSetReport:
    criticals: List[dict]
    isochronous: bool
    codimension: int = 2
    set_description: str = "xi1 = xi2 = 0 over the critical x2 values"

    @property
    def minima(self):
        return [c for c in self.criticals if c["kind"] == "min"]

    @property
    def maxima(self):
        return [c for c in self.criticals if c["kind"] == "max"]


def critical_set_classify(red: LarmorReduction,
                          n_grid: int = 512) -> CriticalSetReport:
    """Locate and classify zeros of omega1' (the non-drifting slow circles).

    Each zero is a slow-coordinate equilibrium: the reduced motion there
    stays on a single circle, separating drift domains.  Reported kinds
    come from the sign of omega1''; a flat profile is flagged isochronous
    (every point critical).
    """
    if not red.nondegenerate:
        raise NondegeneracyFailed(
            "transverse curvature of the averaged symbol vanishes somewhere; "
            "the harmonic classification does not apply")
    w1 = red.omega1_series
    wp = w1.dphi(0)
    wpp = wp.dphi(0)
    x2 = np.linspace(0, TWO_PI, n_grid, endpoint=False)
    z = np.zeros((n_grid, 1))
    vals_p = np.real(wp.eval(x2[:, None], z))
    scale = max(np.max(np.abs(np.real(w1.eval(x2[:, None], z)))), 1.0)
    if np.max(np.abs(vals_p)) < 1e-12 * scale:
        report = CriticalSetReport(criticals=[], isochronous=True)
        red.critical_report = report
        return report

    def fp(x):
        return float(np.real(wp.eval(np.array([[x]]), np.zeros((1, 1))))[0])

    criticals = []
    for i in range(n_grid):
        a, b = x2[i], x2[(i + 1) % n_grid] if i + 1 < n_grid else TWO_PI
        va, vb = vals_p[i], vals_p[(i + 1) % n_grid]
        if va == 0.0:
            root = a
        elif va * vb < 0:
            root = brentq(fp, a, b, xtol=1e-13)
        else:
            continue
        curv = float(np.real(wpp.eval(np.array([[root]]), np.zeros((1, 1))))[0])
        criticals.append({
            "x2": root,
            "kind": "min" if curv > 0 else ("max" if curv < 0 else "flat"),
            "curvature": curv,
            "nondegenerate": abs(curv) > 1e-8,
        })
    report = CriticalSetReport(criticals=criticals, isochronous=False)
    red.critical_report = report
    return report
