"""Frequency maps, rotation profiles, and Diophantine masks.

For an integrable profile ``H(I)`` on a 2-torus the frequency map is
``omega = dH/dI``.  A level set ``H = calE`` near a torus with
``omega_2 != 0`` is a graph ``I_2 = f(I_1)`` whose slope ``f'`` is (minus)
the rotation number of the flow on the level set.  This module solves for
that graph, tests isoenergetic nondegeneracy through a bordered
determinant, and marks which tori on the level set have Diophantine slope

    |f'(mu) - p/q| >= dio_c / q**sigma   for all q <= q_max.

The complement of the accepted set is measured by pulling the union of the
resonance intervals back through the (monotone) slope profile rather than
by counting grid points, so thin strips between nodes are not dropped.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import (GridTooCoarse, ImplicitSolveFailed,
                     NondegeneracyViolated, NumericalFailure,
                     ProfileNotMonotone)

__all__ = [
    "FrequencyMap", "RotationProfile", "DiophantineParams", "KamMask",
    "isoenergetic_det", "rotation_profile", "kam_mask",
    "stable_dimension_estimate",
]


class FrequencyMap:
    """Map from action points to flow frequencies.

    Two backing modes:

    * analytic -- built from a callable integrable profile ``H(I)`` (and
      optionally its gradient).  Frequencies and Jacobians come from the
      callable, using centered differences where no gradient is given.
    * tabulated -- frequencies known only on a regular action lattice.
      Values between nodes are linearly interpolated and Jacobians use
      the lattice neighbors, so a point without a full neighborhood
      raises ``GridTooCoarse``.
    """

    def __init__(self, omega: Callable, hamiltonian: Optional[Callable] = None,
                 d: int = 2, fd_step: float = 1e-5):
        self._omega = omega
        self.hamiltonian = hamiltonian
        self.d = int(d)
        self.fd_step = float(fd_step)
        self._axes = None
        self._table = None
        self._fd_omega = False

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_hamiltonian(cls, hamiltonian: Callable, grad: Optional[Callable] = None,
                         d: int = 2, fd_step: float = 1e-5) -> "FrequencyMap":
        if grad is not None:
            omega = lambda I: np.asarray(grad(np.asarray(I, dtype=float)), dtype=float)
        else:
            def omega(I):
                I = np.asarray(I, dtype=float)
                out = np.empty_like(I)
                for j in range(I.shape[-1]):
                    e = np.zeros(I.shape[-1])
                    e[j] = fd_step
                    out[..., j] = (hamiltonian(I + e) - hamiltonian(I - e)) / (2 * fd_step)
                return out
        fm = cls(omega, hamiltonian=hamiltonian, d=d, fd_step=fd_step)
        fm._fd_omega = grad is None
        return fm

    @classmethod
    def from_table(cls, axes: Sequence[np.ndarray], omega_values: np.ndarray) -> "FrequencyMap":
        axes = tuple(np.asarray(a, dtype=float) for a in axes)
        omega_values = np.asarray(omega_values, dtype=float)
        d = len(axes)
        if omega_values.shape != tuple(len(a) for a in axes) + (d,):
            raise ValueError("omega_values must have shape grid + (d,)")
        interp = RegularGridInterpolator(axes, omega_values, method="linear",
                                         bounds_error=True)
        fm = cls(lambda I: interp(np.asarray(I, dtype=float)), d=d)
        fm._axes = axes
        fm._table = omega_values
        return fm

    # -- evaluation --------------------------------------------------------

    def omega(self, I) -> np.ndarray:
        return np.asarray(self._omega(np.asarray(I, dtype=float)), dtype=float)

    def jacobian(self, I) -> np.ndarray:
        """d x d matrix of frequency derivatives at a single action point."""
        I = np.asarray(I, dtype=float).reshape(self.d)
        if self._axes is not None:
            return self._table_jacobian(I)
        if self._fd_omega:
            # differencing the FD frequencies again would square the noise;
            # take second differences of the profile itself instead
            return self._hessian(I)
        J = np.empty((self.d, self.d))
        for j in range(self.d):
            e = np.zeros(self.d)
            e[j] = self.fd_step
            J[:, j] = (self.omega(I + e) - self.omega(I - e)) / (2 * self.fd_step)
        return J

    def _hessian(self, I, step: float = 1e-3) -> np.ndarray:
        H = self.hamiltonian
        J = np.empty((self.d, self.d))
        h0 = H(I)
        for i in range(self.d):
            ei = np.zeros(self.d)
            ei[i] = step
            J[i, i] = (H(I + ei) - 2 * h0 + H(I - ei)) / step ** 2
            for j in range(i + 1, self.d):
                ej = np.zeros(self.d)
                ej[j] = step
                J[i, j] = J[j, i] = (H(I + ei + ej) - H(I + ei - ej)
                                     - H(I - ei + ej) + H(I - ei - ej)) / (4 * step ** 2)
        return J

    def _table_jacobian(self, I):
        idx = []
        for a, coord in zip(self._axes, I):
            i = int(np.argmin(np.abs(a - coord)))
            if i == 0 or i == len(a) - 1:
                raise GridTooCoarse(
                    f"action point {I} lacks a centered neighborhood on the lattice")
            idx.append(i)
        J = np.empty((self.d, self.d))
        for j in range(self.d):
            lo, hi = list(idx), list(idx)
            lo[j] -= 1
            hi[j] += 1
            dI = self._axes[j][hi[j]] - self._axes[j][lo[j]]
            J[:, j] = (self._table[tuple(hi)] - self._table[tuple(lo)]) / dI
        return J


def isoenergetic_det(fm: FrequencyMap, I) -> float:
    """Bordered determinant det [[d(omega)/dI, omega], [omega^T, 0]].

    Nonzero iff the frequency ray direction varies transversally along the
    energy surface (isoenergetic nondegeneracy).
    """
    I = np.asarray(I, dtype=float).reshape(fm.d)
    J = fm.jacobian(I)
    w = fm.omega(I)
    M = np.zeros((fm.d + 1, fm.d + 1))
    M[:fm.d, :fm.d] = J
    M[:fm.d, fm.d] = w
    M[fm.d, :fm.d] = w
    return float(np.linalg.det(M))


# ---------------------------------------------------------------------------
# rotation profile on an energy surface
# ---------------------------------------------------------------------------

@dataclass
class RotationProfile:
    """Graph I2 = f(mu) of an energy level over I1 = center_1 + mu."""

    mu_grid: np.ndarray
    f: np.ndarray
    fprime: np.ndarray
    fsecond_at_0: float
    calE: float = 0.0
    center: Optional[np.ndarray] = None

    @property
    def span(self) -> float:
        return float(self.mu_grid[-1] - self.mu_grid[0])


def _cheb_lobatto(n: int):
    """Differentiation matrix and nodes cos(pi*j/n) on [-1, 1] (descending)."""
    j = np.arange(n + 1)
    x = np.cos(np.pi * j / n)
    c = np.where((j == 0) | (j == n), 2.0, 1.0) * (-1.0) ** j
    dX = x[:, None] - x[None, :]
    D = np.outer(c, 1.0 / c) / (dX + np.eye(n + 1))
    D -= np.diag(D.sum(axis=1))
    return D, x


def rotation_profile(fm: FrequencyMap, calE: float, center,
                     half_width: float = 0.5, n_mu: int = 33,
                     newton_tol: float = 1e-13, max_iter: int = 60) -> RotationProfile:
    """Solve H(c1 + mu, c2 + f(mu)) = calE on a Chebyshev-Lobatto grid.

    The graph is recentered so f(0) = 0, the slope comes from spectral
    differentiation, and f'(0) is cross-checked against the implicit
    derivative -omega_1/omega_2 at the center.
    """
    if fm.hamiltonian is None:
        raise ValueError("rotation_profile needs a FrequencyMap built from a hamiltonian")
    if n_mu % 2 == 0:
        n_mu += 1  # keep mu = 0 as a node
    center = np.asarray(center, dtype=float).reshape(2)
    w_c = fm.omega(center)
    if abs(w_c[1]) < 1e-12 * (1.0 + abs(w_c[0])):
        raise ImplicitSolveFailed(
            f"omega_2 = {w_c[1]:.3e} at the center; the level set is not a graph over I1")

    D, xnodes = _cheb_lobatto(n_mu - 1)
    mu = half_width * xnodes  # descending
    H = fm.hamiltonian
    scale = max(1.0, abs(calE))

    # recenter I2 so the center sits exactly on the level set
    c2 = center[1]
    for _ in range(max_iter):
        r = H(np.array([center[0], c2])) - calE
        if abs(r) <= newton_tol * scale:
            break
        dH = fm.omega(np.array([center[0], c2]))[1]
        if abs(dH) < 1e-14:
            raise ImplicitSolveFailed("omega_2 vanished while recentering the graph")
        c2 -= r / dH
    else:
        raise ImplicitSolveFailed("recentering Newton iteration did not converge")

    f = np.empty(n_mu)
    order = np.argsort(np.abs(mu))  # continuation outward from mu = 0
    seed_plus = seed_minus = 0.0
    for i in order:
        y = seed_plus if mu[i] >= 0 else seed_minus
        for _ in range(max_iter):
            pt = np.array([center[0] + mu[i], c2 + y])
            r = H(pt) - calE
            if abs(r) <= newton_tol * scale:
                break
            dH = fm.omega(pt)[1]
            if abs(dH) < 1e-14:
                raise ImplicitSolveFailed(
                    f"omega_2 vanished during the solve at mu = {mu[i]:.4f}")
            y -= r / dH
        else:
            raise ImplicitSolveFailed(f"Newton iteration stalled at mu = {mu[i]:.4f}")
        f[i] = y
        if mu[i] >= 0:
            seed_plus = y
        if mu[i] <= 0:
            seed_minus = y

    i0 = (n_mu - 1) // 2
    f = f - f[i0]
    fprime = (D @ f) / half_width
    fsecond = (D @ fprime) / half_width

    w_c = fm.omega(np.array([center[0], c2]))
    slope_implicit = -w_c[0] / w_c[1]
    if abs(fprime[i0] - slope_implicit) > 1e-8 * (1.0 + abs(slope_implicit)):
        raise NumericalFailure(
            f"spectral slope {fprime[i0]:.3e} at the center disagrees with the "
            f"implicit derivative {slope_implicit:.3e}")
    if abs(fsecond[i0]) < 1e-10:
        warnings.warn(NondegeneracyViolated(
            f"profile curvature at the center is {fsecond[i0]:.3e}; "
            "the twist condition is numerically violated"))

    sl = slice(None, None, -1)  # store ascending in mu
    return RotationProfile(mu_grid=mu[sl].copy(), f=f[sl].copy(),
                           fprime=fprime[sl].copy(), fsecond_at_0=float(fsecond[i0]),
                           calE=float(calE), center=np.array([center[0], c2]))


# ---------------------------------------------------------------------------
# Diophantine masks
# ---------------------------------------------------------------------------

@dataclass
class DiophantineParams:
    dio_c: float
    sigma: float = 2.5
    q_max: int = 200

    def __post_init__(self):
        if not self.dio_c > 0:
            raise ValueError("dio_c must be positive")
        if not self.sigma > 1:
            raise ValueError("sigma must exceed 1")
        if self.q_max < 8:
            raise ValueError("q_max must be at least 8")


@dataclass
class KamMask:
    params: DiophantineParams
    mu_grid: np.ndarray
    accepted: np.ndarray
    complement_measure: float
    fprime: np.ndarray
    nearest_p: np.ndarray
    nearest_q: np.ndarray
    resonance_distance: np.ndarray
    measure_method: str = "interval-union"

    @property
    def span(self) -> float:
        return float(self.mu_grid[-1] - self.mu_grid[0])

    @property
    def accepted_measure(self) -> float:
        return max(0.0, self.span - self.complement_measure)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["mu", "fprime", "accepted",
                             "nearest_resonance_p", "q", "distance"])
            for i in range(len(self.mu_grid)):
                writer.writerow([f"{self.mu_grid[i]:.17g}", f"{self.fprime[i]:.17g}",
                                 int(self.accepted[i]), int(self.nearest_p[i]),
                                 int(self.nearest_q[i]),
                                 f"{self.resonance_distance[i]:.17g}"])


def _merge_intervals(ivals):
    if not ivals:
        return []
    ivals = sorted(ivals)
    merged = [list(ivals[0])]
    for a, b in ivals[1:]:
        if a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return merged


def kam_mask(profile: RotationProfile, params: DiophantineParams) -> KamMask:
    """Mark grid tori whose slope avoids every resonance strip.

    A point is accepted when |f'(mu) - p/q| >= dio_c/q^sigma for all
    q <= q_max; only the nearest p per q can violate the bound.  The
    rejected measure is the mu-length of the union of resonance strips
    pulled back through f', which requires f' strictly monotone; when it
    is not, the mask is still produced (with a grid-counted measure) and
    travels on the raised ``ProfileNotMonotone``.
    """
    rho = np.asarray(profile.fprime, dtype=float)
    mu = np.asarray(profile.mu_grid, dtype=float)
    n = len(mu)
    accepted = np.ones(n, dtype=bool)
    best_margin = np.full(n, np.inf)
    nearest_p = np.zeros(n, dtype=int)
    nearest_q = np.ones(n, dtype=int)
    distance = np.full(n, np.inf)

    for q in range(1, params.q_max + 1):
        width = params.dio_c / q ** params.sigma
        p = np.round(rho * q)
        d_pq = np.abs(rho - p / q)
        margin = d_pq / width
        upd = margin < best_margin
        best_margin[upd] = margin[upd]
        nearest_p[upd] = p[upd].astype(int)
        nearest_q[upd] = q
        distance[upd] = d_pq[upd]
        accepted &= d_pq >= width

    diffs = np.diff(rho)
    monotone = np.all(diffs > 0) or np.all(diffs < 0)
    span = float(mu[-1] - mu[0])

    if not monotone:
        grid_measure = span * float(np.count_nonzero(~accepted)) / n
        mask = KamMask(params, mu, accepted, grid_measure, rho,
                       nearest_p, nearest_q, distance, measure_method="grid-count")
        err = ProfileNotMonotone(
            "slope profile is not strictly monotone; rejected measure falls "
            "back to grid counting")
        err.mask = mask
        raise err

    rho_lo, rho_hi = float(np.min(rho)), float(np.max(rho))
    ivals = []
    for q in range(1, params.q_max + 1):
        width = params.dio_c / q ** params.sigma
        p_lo = int(np.ceil((rho_lo - width) * q))
        p_hi = int(np.floor((rho_hi + width) * q))
        for p in range(p_lo, p_hi + 1):
            a = max(p / q - width, rho_lo)
            b = min(p / q + width, rho_hi)
            if b > a:
                ivals.append((a, b))
    merged = _merge_intervals(ivals)
    # pull the union back to mu through the monotone slope profile
    rho_s = rho if diffs[0] > 0 else rho[::-1]
    mu_s = mu if diffs[0] > 0 else mu[::-1]
    measure = 0.0
    for a, b in merged:
        mu_a = np.interp(a, rho_s, mu_s)
        mu_b = np.interp(b, rho_s, mu_s)
        measure += abs(mu_b - mu_a)

    return KamMask(params, mu, accepted, float(measure), rho,
                   nearest_p, nearest_q, distance)


def stable_dimension_estimate(mask: KamMask, h: float, delta: float) -> float:
    """Count of semiclassical states supported on the accepted tori.

    The accepted mu-measure fills a surface window of area ~ measure per
    unit transverse window, and each state occupies an h^2 cell while the
    window has thickness h^delta, giving h^(delta-2) * accepted measure.
    The density-one refinement of the accepted set is approximated by the
    full accepted set at grid resolution.
    """
    if not (0 < delta < 1):
        raise ValueError("delta must lie in (0, 1)")
    if not h > 0:
        raise ValueError("h must be positive")
    return h ** (delta - 2.0) * mask.accepted_measure
