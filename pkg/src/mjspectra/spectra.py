"""Torus Weyl matrices, windowed eigensolves, and phase-space diagnostics.

The quantization rule on T^d is the Weyl matrix element

    <e_m, A e_n> = a_hat_{m-n}(h (m+n)/2),

where a_hat_k(xi) is the k-th x-Fourier coefficient of the symbol.  On top of
that one matrix live the windowed eigensolve with spectral-truncation hygiene,
near-degeneracy (pairing) statistics, Husimi region masses from periodized
Gaussian coherent states of width sqrt(h), trace averages against the
normalized Liouville measure, diagonal quasi-projectors chi(hn) Phi((hn1 -
I1)/h^delta), Gram-Schmidt quasi-mode pairs, and a 1-D solver for the averaged
slow operators.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (GridTooCoarse, NumericalFailure, SymbolNotResolvable,
                     TruncationInsufficient, WindowTooSparse)
from .series import FourierTaylorSeries

__all__ = [
    "BandSymbol", "WeylMatrix", "weyl_matrix", "SpectralWindow",
    "solve_window", "PairingReport", "pairing_report", "RegionPartition",
    "HusimiReport", "husimi_masses", "ObservableAverage", "observable_average",
    "QuasiProjector", "quasi_projector", "gram_schmidt_pairs", "solve_1d",
]

DIM_CAP = 4900          # dense-eigensolve budget: (2*34+1)^2 modes on T^2
TAIL_TOL = 1e-8


# ---------------------------------------------------------------------------
# symbols and Weyl matrices
# ---------------------------------------------------------------------------


@dataclass
class BandSymbol:
    """Symbol given by finitely many x-Fourier bands k -> a_hat_k(xi).

    `bands` maps integer mode tuples to callables taking (..., d) momentum
    arrays; reality of the symbol corresponds to a_hat_{-k} = conj(a_hat_k).
    """
    dim: int
    bands: Dict[tuple, Callable]
    name: str = ""

    def value(self, x, xi):
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        out = 0j
        for k, fn in self.bands.items():
            out = out + np.asarray(fn(xi)) * np.exp(1j * (x @ np.asarray(k)))
        return out.real


def _mode_box(n_max, d):
    axes = [np.arange(-n_max, n_max + 1)] * d
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


def _symbol_hash(sym) -> str:
    if isinstance(sym, FourierTaylorSeries):
        blob = ";".join(f"{k}|{a}|{c.real:.17g},{c.imag:.17g}"
                        for (k, a), c in sorted(sym.terms.items()))
    elif isinstance(sym, BandSymbol):
        blob = "bands:" + sym.name + ":" + ",".join(map(str, sorted(sym.bands)))
    else:
        tag = getattr(sym, "name", "") or getattr(sym, "__name__", "")
        blob = "callable:" + (tag or type(sym).__name__)
    return hashlib.sha1(blob.encode()).hexdigest()[:16]


@dataclass
class WeylMatrix:
    h: float
    n_max: int
    modes: np.ndarray        # (N, d) integer lattice, lexicographic
    entries: np.ndarray      # (N, N) complex Hermitian
    symbol: object = None
    symbol_hash: str = ""
    k_cut: int = 8

    @property
    def dim(self):
        return self.entries.shape[0]

    @property
    def d(self):
        return self.modes.shape[1]

    def index(self, n) -> int:
        n = np.atleast_1d(np.asarray(n, dtype=int))
        width = 2 * self.n_max + 1
        idx = 0
        for j in range(self.d):
            idx = idx * width + (n[j] + self.n_max)
        return int(idx)

    def entry(self, m, n):
        return self.entries[self.index(m), self.index(n)]

    def hermiticity_defect(self) -> float:
        return float(np.max(np.abs(self.entries - self.entries.conj().T)))


def _band_offsets(k, n_max, d):
    """Linear index offset of m -> m - k within the lexicographic mode box."""
    width = 2 * n_max + 1
    off = 0
    for j in range(d):
        off = off * width + k[j]
    return off


def _assemble_bands(h, n_max, d, band_values):
    """Fill the matrix from {k: callable(xi_pts) -> coefficients}."""
    modes = _mode_box(n_max, d)
    N = len(modes)
    M = np.zeros((N, N), dtype=complex)
    row_idx = np.arange(N)
    for k, coeff_fn in band_values.items():
        k_arr = np.asarray(k, dtype=int)
        if np.max(np.abs(k_arr)) > 2 * n_max:
            continue
        sel = np.all(np.abs(modes - k_arr) <= n_max, axis=1)
        if not np.any(sel):
            continue
        xi_arg = h * (modes[sel] - k_arr / 2.0)
        vals = np.asarray(coeff_fn(xi_arg))
        rows = row_idx[sel]
        cols = rows - _band_offsets(k_arr, n_max, d)
        M[rows, cols] += vals
    return modes, M


def weyl_matrix(sym, h: float, n_max: int, k_cut: int = 8,
                dim: Optional[int] = None) -> WeylMatrix:
    """Weyl matrix of a torus symbol: entry(m,n) = a_hat_{m-n}(h(m+n)/2).

    Accepts a FourierTaylorSeries or a SymbolField carrying one (exact
    analytic bands), a BandSymbol, or a plain value-callable symbol, which is
    resolved by FFT on a (4*k_cut)^d angle grid.  The FFT path rejects symbols
    with detectable Fourier mass beyond |k|_inf = k_cut.  `dim` is only
    consulted for bare callables that carry no `dim` attribute.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    rep = getattr(sym, "fourier_rep", None)
    series = sym if isinstance(sym, FourierTaylorSeries) else rep
    if series is not None:
        d = series.dim
        _check_dim_cap(n_max, d)
        bands = {}
        for k in {k for k, _ in series.terms}:
            bands[k] = (lambda kk: lambda xi: series.eval_mode(kk, xi))(k)
        modes, M = _assemble_bands(h, n_max, d, bands)
    elif isinstance(sym, BandSymbol):
        d = sym.dim
        _check_dim_cap(n_max, d)
        modes, M = _assemble_bands(h, n_max, d, sym.bands)
    else:
        value = sym.value if hasattr(sym, "value") else sym
        d = getattr(sym, "dim", None) or dim
        if d is None:
            raise ValueError(
                "bare callable symbols need an explicit dim= argument")
        _check_dim_cap(n_max, d)
        modes, M = _assemble_fft(value, h, n_max, d, k_cut)

    defect = float(np.max(np.abs(M - M.conj().T))) if len(M) else 0.0
    if defect > 1e-12 * max(1.0, float(np.max(np.abs(M)))):
        raise SymbolNotResolvable(
            f"assembled matrix is not Hermitian (defect {defect:.3e}); "
            "the symbol must be real-valued")
    return WeylMatrix(h=h, n_max=int(n_max), modes=modes, entries=M,
                      symbol=sym, symbol_hash=_symbol_hash(sym),
                      k_cut=int(k_cut))


def _check_dim_cap(n_max, d):
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if (2 * n_max + 1) ** d > DIM_CAP:
        raise ValueError(
            f"matrix dimension {(2 * n_max + 1) ** d} exceeds the dense "
            f"eigensolve budget {DIM_CAP}; reduce n_max (<= 34 on T^2) or "
            "coarsen the model")


def _assemble_fft(value, h, n_max, d, k_cut):
    """FFT resolution of the symbol's x-bands on a 4*k_cut angle grid.

    The momentum arguments required by the quantization rule form the
    half-spaced grid (h/2) * s, |s|_inf <= 2*n_max + k_cut; angle transforms
    run blockwise over that grid, keeping only the |k|_inf <= k_cut bands
    and the maximum of everything beyond (the resolvability check).
    """
    L = max(4 * int(k_cut), 8)
    xg = 2.0 * np.pi * np.arange(L) / L
    x_grids = np.meshgrid(*([xg] * d), indexing="ij")
    x_pts = np.stack([g.ravel() for g in x_grids], axis=-1)      # (L^d, d)

    S = 2 * n_max + k_cut
    s_ax = np.arange(-S, S + 1)
    s_grids = np.meshgrid(*([s_ax] * d), indexing="ij")
    s_pts = np.stack([g.ravel() for g in s_grids], axis=-1)      # (P^d, d)
    xi_pts = 0.5 * h * s_pts
    P = len(s_ax)
    n_xi = len(xi_pts)

    freqs = np.fft.fftfreq(L, d=1.0 / L).astype(int)
    band_idx = [idx for idx in np.ndindex(*(L,) * d)
                if np.max(np.abs(freqs[list(idx)])) <= k_cut]
    tail_idx_flat = np.array(
        [np.ravel_multi_index(idx, (L,) * d) for idx in np.ndindex(*(L,) * d)
         if np.max(np.abs(freqs[list(idx)])) > k_cut], dtype=int)
    band_vals = {idx: np.empty(n_xi, dtype=complex) for idx in band_idx}

    tail = 0.0
    scale = 0.0
    block = max(1, int(2e6) // (L ** d))
    for lo in range(0, n_xi, block):
        hi = min(n_xi, lo + block)
        shp = (L ** d, hi - lo, d)
        U = value(np.broadcast_to(x_pts[:, None, :], shp),
                  np.broadcast_to(xi_pts[None, lo:hi, :], shp))
        U = np.asarray(U, dtype=complex)
        if not np.all(np.isfinite(U)):
            raise SymbolNotResolvable(
                "symbol evaluation returned non-finite values on the "
                "angle/momentum grid")
        fblk = np.fft.fftn(U.reshape((L,) * d + (hi - lo,)),
                           axes=tuple(range(d))) / L ** d
        scale = max(scale, float(np.max(np.abs(fblk))))
        flat = fblk.reshape(L ** d, hi - lo)
        if len(tail_idx_flat):
            tail = max(tail, float(np.max(np.abs(flat[tail_idx_flat]))))
        for idx in band_idx:
            band_vals[idx][lo:hi] = fblk[idx]

    # any resolvable mass beyond the declared band is a resolution failure
    if tail > 1e-9 * max(scale, 1e-300):
        raise SymbolNotResolvable(
            f"symbol has x-Fourier mass {tail:.3e} beyond |k|_inf = {k_cut}; "
            "raise k_cut or supply an analytic band representation")

    modes = _mode_box(n_max, d)
    N = len(modes)
    M = np.zeros((N, N), dtype=complex)
    row_idx = np.arange(N)
    strides = np.array([P ** (d - 1 - j) for j in range(d)])
    for idx in band_idx:
        k = freqs[list(idx)]
        coeffs = band_vals[idx]
        if np.max(np.abs(coeffs)) <= 1e-15 * max(scale, 1e-300):
            continue
        sel = np.all(np.abs(modes - k) <= n_max, axis=1)
        if not np.any(sel):
            continue
        s = 2 * modes[sel] - k + S                     # half-grid indices
        flat = s @ strides
        rows = row_idx[sel]
        cols = rows - _band_offsets(k, n_max, d)
        M[rows, cols] += coeffs[flat]
    return modes, M


# ---------------------------------------------------------------------------
# windowed eigensolve
# ---------------------------------------------------------------------------


@dataclass
class SpectralWindow:
    h: float
    delta: float
    E_center: float
    window: Tuple[float, float]
    eigenvalues: np.ndarray      # (J,) ascending
    eigenvectors: np.ndarray     # (N, J) Fourier coefficients, l2-normalized
    J_size: int
    truncation_report: float
    modes: np.ndarray
    n_max: int
    weyl: WeylMatrix = None

    def to_csv(self, path, husimi: "HusimiReport" = None) -> None:
        region_names = list(husimi.masses[0]) if husimi and husimi.masses \
            else []
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["j", "eigenvalue", "gap"]
                            + [f"mass_{r}" for r in region_names])
            lam = self.eigenvalues
            for j in range(self.J_size):
                gap = ""
                if self.J_size > 1:
                    cands = []
                    if j > 0:
                        cands.append(lam[j] - lam[j - 1])
                    if j + 1 < self.J_size:
                        cands.append(lam[j + 1] - lam[j])
                    gap = f"{min(cands):.17g}"
                row = [j, f"{lam[j]:.17g}", gap]
                if region_names:
                    row += [f"{husimi.masses[j][r]:.17g}" for r in region_names]
                writer.writerow(row)


def solve_window(W: WeylMatrix, E: float, delta: float,
                 tail_tol: float = TAIL_TOL,
                 n_max_cap: Optional[int] = None) -> SpectralWindow:
    """Dense eigensolve filtered to [E - h^delta, E + h^delta].

    The spectral-truncation report is the largest l2 mass any window
    eigenvector leaves on the outermost mode shell |n|_inf = n_max; if it
    exceeds `tail_tol` the matrix is reassembled with doubled n_max (the
    symbol reference is kept on the WeylMatrix) until the dense-size cap.
    """
    if not (0 < delta < 1):
        raise ValueError("delta must lie in (0, 1)")
    d = W.d
    if n_max_cap is None:
        n_max_cap = 1
        while (2 * (n_max_cap + 1) + 1) ** d <= DIM_CAP:
            n_max_cap += 1
    halfwidth = W.h ** delta
    lo, hi = E - halfwidth, E + halfwidth

    while True:
        lam, vecs = np.linalg.eigh(W.entries)
        keep = (lam >= lo) & (lam <= hi)
        J = int(np.count_nonzero(keep))
        if J:
            shell = np.max(np.abs(W.modes), axis=1) == W.n_max
            tails = np.sum(np.abs(vecs[shell][:, keep]) ** 2, axis=0)
            report = float(np.max(tails))
        else:
            report = 0.0
        if report <= tail_tol:
            return SpectralWindow(
                h=W.h, delta=delta, E_center=float(E), window=(lo, hi),
                eigenvalues=lam[keep], eigenvectors=vecs[:, keep],
                J_size=J, truncation_report=report, modes=W.modes,
                n_max=W.n_max, weyl=W)
        if W.n_max >= n_max_cap:
            raise TruncationInsufficient(
                f"window eigenvectors keep {report:.3e} l2 mass on the "
                f"|n|_inf = {W.n_max} shell at the size cap; the symbol "
                "couples the window out of the resolvable box")
        W = weyl_matrix(W.symbol, W.h, min(2 * W.n_max, n_max_cap),
                        k_cut=W.k_cut, dim=W.d)


# ---------------------------------------------------------------------------
# pairing statistics
# ---------------------------------------------------------------------------


@dataclass
class GramSchmidtRecord:
    j: int
    eigenvalue: float
    norm_v: float
    norm_w: float
    overlap: float           # |<v', w>| / ||w||
    residual_v: float        # ||(H - lambda) v'||
    residual_w: float        # ||(H - lambda) w'||


@dataclass
class PairingReport:
    h: float
    J_size: int
    gaps: np.ndarray
    mean_spacing: float
    thresholds: Dict[str, float]
    fractions: Dict[str, float]
    gram_schmidt_records: List[GramSchmidtRecord] = field(default_factory=list)
    skipped_mass_floor: int = 0
    skipped_degenerate: int = 0

    def paired_fraction(self, threshold: float) -> float:
        """Fraction of window indices whose nearest-neighbor gap <= threshold."""
        ng = _nearest_gaps(self.gaps)
        if len(ng) == 0:
            return 0.0
        return float(np.mean(ng <= threshold))


def _nearest_gaps(gaps: np.ndarray) -> np.ndarray:
    if len(gaps) == 0:
        return np.zeros(0)
    left = np.concatenate([[np.inf], gaps])
    right = np.concatenate([gaps, [np.inf]])
    return np.minimum(left, right)


def pairing_report(win: SpectralWindow, rel_factor: float = 1e-3,
                   p: float = 4.0) -> PairingReport:
    """Near-degeneracy statistics: policy (a) gap <= rel_factor * mean
    spacing; policy (b) gap <= h^p."""
    if win.J_size < 10:
        raise WindowTooSparse(
            f"window holds {win.J_size} eigenvalues; pairing statistics "
            "need at least 10")
    gaps = np.diff(win.eigenvalues)
    mean_spacing = (win.window[1] - win.window[0]) / win.J_size
    thr = {"a": rel_factor * mean_spacing, "b": win.h ** p}
    rep = PairingReport(h=win.h, J_size=win.J_size, gaps=gaps,
                        mean_spacing=mean_spacing, thresholds=thr,
                        fractions={})
    rep.fractions = {k: rep.paired_fraction(v) for k, v in thr.items()}
    return rep


# ---------------------------------------------------------------------------
# Husimi region masses
# ---------------------------------------------------------------------------


@dataclass
class RegionPartition:
    """Named phase-space regions as vectorized predicates on (x, xi).

    Supplied predicates should be pairwise disjoint up to boundary strips and
    cover the energy shell; for separable models they typically depend on xi
    alone (momentum sectors bounded by the invariant tori).
    """
    regions: Dict[str, Callable]

    @classmethod
    def momentum_halves(cls, axis: int = 0) -> "RegionPartition":
        def plus(x, xi):
            return np.asarray(xi)[..., axis] > 0

        def minus(x, xi):
            return np.asarray(xi)[..., axis] < 0

        return cls(regions={"plus": plus, "minus": minus})

    @classmethod
    def angular_sectors(cls, boundaries: Sequence[float]) -> "RegionPartition":
        """Momentum-angle sectors split at the given angles (radians)."""
        bnd = sorted(float(b) for b in boundaries)

        def make(lo, hi):
            def pred(x, xi):
                xi = np.asarray(xi)
                th = np.arctan2(xi[..., 1], xi[..., 0])
                if lo <= hi:
                    return (th >= lo) & (th < hi)
                return (th >= lo) | (th < hi)       # wrap-around sector
            return pred

        regions = {}
        for i, lo in enumerate(bnd):
            hi = bnd[(i + 1) % len(bnd)]
            regions[f"sector_{i}"] = make(lo, hi)
        return cls(regions=regions)


@dataclass
class HusimiReport:
    masses: List[Dict[str, float]]      # per window state
    totals: np.ndarray                  # per-state mass over all centers
    classification: List[Optional[str]]
    threshold: float
    width: float                        # coherent-state width sqrt(h)
    n_x: int
    n_xi: int
    xi_range: Tuple[float, float]


def husimi_masses(win: SpectralWindow, part: RegionPartition,
                  n_x: Optional[int] = None, n_xi: Optional[int] = None,
                  xi_margin: Optional[float] = None,
                  threshold: float = 0.5) -> HusimiReport:
    """Region masses of window states against periodized Gaussian coherent
    states of width sqrt(h) on a phase-space grid of centers.

    The grid must supply at least 2 centers per sqrt(h) cell in every
    coordinate (GridTooCoarse otherwise).  Masses carry the resolution-of-
    identity normalization dx dxi / (2 pi h)^d, so each state's total over
    all centers is 1 up to quadrature error.
    """
    h, d = win.h, win.modes.shape[1]
    root_h = np.sqrt(h)
    if xi_margin is None:
        xi_margin = 4.0 * root_h
    R = h * win.n_max + xi_margin
    if n_x is None:
        n_x = max(int(np.ceil(4 * np.pi / root_h)), 2 * win.n_max + 1)
    if n_xi is None:
        n_xi = int(np.ceil(4 * R / root_h)) + 1
    dx = 2 * np.pi / n_x
    xi_ax = np.linspace(-R, R, n_xi)
    dxi = xi_ax[1] - xi_ax[0]
    if dx > root_h / 2 * (1 + 1e-12) or dxi > root_h / 2 * (1 + 1e-12):
        raise GridTooCoarse(
            f"coherent grid spacing (dx={dx:.3g}, dxi={dxi:.3g}) exceeds "
            f"sqrt(h)/2 = {root_h / 2:.3g}; at least 2 centers per cell "
            "are required")

    J = win.J_size
    modes = win.modes
    names = list(part.regions)
    region_mass = np.zeros((J, len(names)))
    totals = np.zeros(J)
    cell = dx ** d * dxi ** d / (2 * np.pi * h) ** d
    norm_c = (h / np.pi) ** (d / 4.0)

    xg = 2 * np.pi * np.arange(n_x) / n_x
    x_grids = np.meshgrid(*([xg] * d), indexing="ij")
    x_pts = np.stack([g.ravel() for g in x_grids], axis=-1)

    fft_index = tuple(modes[:, j] % n_x for j in range(d))
    for xi0 in np.ndindex(*(n_xi,) * d):
        xi_c = np.array([xi_ax[i] for i in xi0])
        g = norm_c * np.exp(-h * np.sum((modes - xi_c / h) ** 2, axis=1) / 2.0)
        arr = np.zeros((J,) + (n_x,) * d, dtype=complex)
        wv = g[:, None] * win.eigenvectors
        arr[(slice(None),) + fft_index] = wv.T
        f = np.fft.ifftn(arr, axes=tuple(range(1, d + 1))) * n_x ** d
        m = np.abs(f.reshape(J, -1)) ** 2 * cell        # (J, n_x^d)
        totals += m.sum(axis=1)
        for r, name in enumerate(names):
            inside = np.broadcast_to(
                part.regions[name](x_pts, xi_c), (len(x_pts),))
            if np.any(inside):
                region_mass[:, r] += m[:, inside].sum(axis=1)

    masses = [dict(zip(names, region_mass[j])) for j in range(J)]
    classification = []
    for j in range(J):
        best = max(names, key=lambda nm: masses[j][nm]) if names else None
        classification.append(
            best if best is not None and masses[j][best] >= threshold else None)
    return HusimiReport(masses=masses, totals=totals,
                        classification=classification, threshold=threshold,
                        width=root_h, n_x=n_x, n_xi=n_xi, xi_range=(-R, R))


# ---------------------------------------------------------------------------
# trace averages against the Liouville measure
# ---------------------------------------------------------------------------


@dataclass
class ObservableAverage:
    window_mean: float
    liouville: float
    gap: float


def _symbol_value(sym):
    if isinstance(sym, FourierTaylorSeries):
        return lambda x, xi: sym.eval_real(x, xi)
    if hasattr(sym, "value"):
        return sym.value
    return sym


def observable_average(win: SpectralWindow, a, n_grid: int = 64,
                       k_cut: int = 8) -> ObservableAverage:
    """Window mean (1/J) sum_j <a^w u_j, u_j> vs the normalized Liouville
    average of the symbol on {H = E_center}.

    The shell is parametrized per angle by the radial root along momentum
    rays; the coarea weight is r / |dH/dr| at the root, then normalized.
    """
    W = win.weyl
    A = weyl_matrix(a, win.h, win.n_max, k_cut=k_cut, dim=win.modes.shape[1])
    U = win.eigenvectors
    vals = np.real(np.sum(U.conj() * (A.entries @ U), axis=0))
    window_mean = float(np.mean(vals)) if win.J_size else np.nan

    H_val = _symbol_value(W.symbol)
    a_val = _symbol_value(a)
    d = win.modes.shape[1]
    E = win.E_center

    xg = 2 * np.pi * np.arange(n_grid) / n_grid
    if d == 2:
        th = 2 * np.pi * np.arange(n_grid) / n_grid
        dirs = np.stack([np.cos(th), np.sin(th)], axis=-1)
        x_grids = np.meshgrid(xg, xg, indexing="ij")
        x_pts = np.stack([g.ravel() for g in x_grids], axis=-1)
    elif d == 1:
        dirs = np.array([[1.0], [-1.0]])
        x_pts = xg[:, None]
    else:
        raise ValueError("Liouville quadrature implemented for d in {1, 2}")

    X = np.repeat(x_pts, len(dirs), axis=0)
    Om = np.tile(dirs, (len(x_pts), 1))
    r = np.full(len(X), max(np.sqrt(max(E, 1e-6)), 1e-3))
    step = 1e-6
    for _ in range(60):
        f = np.asarray(H_val(X, r[:, None] * Om)) - E
        if np.max(np.abs(f)) < 1e-13:
            break
        df = (np.asarray(H_val(X, (r + step)[:, None] * Om))
              - np.asarray(H_val(X, (r - step)[:, None] * Om))) / (2 * step)
        bad = np.abs(df) < 1e-14
        df[bad] = 1.0
        upd = f / df
        upd[bad] = 0.0
        r = r - np.clip(upd, -0.2, 0.2)
        r = np.maximum(r, 1e-9)
    resid = np.max(np.abs(np.asarray(H_val(X, r[:, None] * Om)) - E))
    if resid > 1e-9:
        raise NumericalFailure(
            f"radial root solve left |H - E| = {resid:.3e} on the shell "
            "quadrature grid")
    dHdr = (np.asarray(H_val(X, (r + step)[:, None] * Om))
            - np.asarray(H_val(X, (r - step)[:, None] * Om))) / (2 * step)
    wgt = r ** (d - 1) / np.abs(dHdr)
    a_shell = np.asarray(a_val(X, r[:, None] * Om))
    liouville = float(np.sum(a_shell * wgt) / np.sum(wgt))
    return ObservableAverage(window_mean=window_mean, liouville=liouville,
                             gap=abs(window_mean - liouville))


# ---------------------------------------------------------------------------
# quasi-projectors and Gram-Schmidt pairs
# ---------------------------------------------------------------------------


def _smooth_step(t):
    """C-infinity monotone step: exactly 0 below -1 and 1 above +1."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    out[t >= 1.0] = 1.0
    mid = (t > -1.0) & (t < 1.0)
    tm = t[mid]
    fp = np.exp(-1.0 / (1.0 + tm))
    fm = np.exp(-1.0 / (1.0 - tm))
    out[mid] = fp / (fp + fm)
    return out


def _sup_phi_prime(phi) -> float:
    t = np.linspace(-1.0, 1.0, 20001)
    v = phi(t)
    return float(np.max(np.abs(np.diff(v))) / (t[1] - t[0]))


@dataclass
class QuasiProjector:
    I1: float
    delta: float
    h: float
    modes: np.ndarray
    q: np.ndarray            # diagonal entries, in [0, 1]
    sup_phi_prime: float

    def apply(self, v):
        return self.q * np.asarray(v)

    def commutator(self, W: WeylMatrix) -> np.ndarray:
        return (self.q[:, None] - self.q[None, :]) * W.entries

    def commutator_norm(self, W: WeylMatrix,
                        win: Optional[SpectralWindow] = None) -> float:
        C = self.commutator(W)
        if win is not None and win.J_size:
            U = win.eigenvectors
            C = U.conj().T @ C @ U
        if C.size == 0:
            return 0.0
        return float(np.linalg.norm(C, 2))

    def band_bound(self, W: WeylMatrix) -> float:
        """Rigorous norm bound sum over bands k of max |(q_m - q_n) W_mn|."""
        C = self.commutator(W)
        scale = max(float(np.max(np.abs(W.entries))), 1e-300)
        rows, cols = np.nonzero(np.abs(C) > 1e-15 * scale)
        if len(rows) == 0:
            return 0.0
        offs = {}
        for rr, cc in zip(rows, cols):
            key = tuple(W.modes[rr] - W.modes[cc])
            val = abs(C[rr, cc])
            if val > offs.get(key, 0.0):
                offs[key] = val
        return float(sum(offs.values()))


def quasi_projector(win: SpectralWindow, I1: float, delta: float,
                    chi: Optional[Callable] = None,
                    Phi: Optional[Callable] = None) -> QuasiProjector:
    """Diagonal multiplier q(hn) = chi(hn) * Phi((h n_1 - I1)/h^delta).

    Requires separable action coordinates (actions = momentum multipliers);
    `chi` defaults to 1 on the resolved mode box, `Phi` to a C-infinity
    monotone step that is exactly 0/1 outside (-1, 1).
    """
    if not (0 < delta < 1):
        raise ValueError("delta must lie in (0, 1)")
    phi = Phi if Phi is not None else _smooth_step
    iota = win.h * win.modes
    q = np.asarray(phi((iota[:, 0] - I1) / win.h ** delta), dtype=float)
    if chi is not None:
        q = q * np.asarray(chi(iota), dtype=float)
    if np.any(q < -1e-15) or np.any(q > 1 + 1e-15):
        raise ValueError("projector profile must take values in [0, 1]")
    q = np.clip(q, 0.0, 1.0)
    return QuasiProjector(I1=float(I1), delta=float(delta), h=win.h,
                          modes=win.modes, q=q,
                          sup_phi_prime=_sup_phi_prime(phi))


def gram_schmidt_pairs(win: SpectralWindow, Q: QuasiProjector,
                       mass_floor: float = 0.4) -> PairingReport:
    """Split each window state u into v = Qu, w = (1-Q)u and orthonormalize.

    States with ||v|| or ||w|| below `mass_floor` are skipped and counted
    (they sit on one side of the torus and have no pair partner to extract);
    a vanishing Gram-Schmidt denominator is skipped and counted separately.
    Records carry the conditioning data and the quasi-mode residuals
    ||(H - lambda) v'||, ||(H - lambda) w'||.
    """
    H = win.weyl.entries
    records = []
    skipped_floor = 0
    skipped_degenerate = 0
    for j in range(win.J_size):
        u = win.eigenvectors[:, j]
        lam = win.eigenvalues[j]
        v = Q.apply(u)
        w = u - v
        nv = float(np.linalg.norm(v))
        nw = float(np.linalg.norm(w))
        if nv < mass_floor or nw < mass_floor:
            skipped_floor += 1
            continue
        vp = v / nv
        inner = np.vdot(vp, w)
        w_perp = w - inner * vp
        den = float(np.linalg.norm(w_perp))
        if den < 1e-12:
            skipped_degenerate += 1
            continue
        wp = w_perp / den
        records.append(GramSchmidtRecord(
            j=j, eigenvalue=float(lam), norm_v=nv, norm_w=nw,
            overlap=float(abs(inner)) / nw,
            residual_v=float(np.linalg.norm(H @ vp - lam * vp)),
            residual_w=float(np.linalg.norm(H @ wp - lam * wp))))
    gaps = np.diff(win.eigenvalues) if win.J_size > 1 else np.zeros(0)
    mean_spacing = ((win.window[1] - win.window[0]) / win.J_size
                    if win.J_size else np.nan)
    return PairingReport(h=win.h, J_size=win.J_size, gaps=gaps,
                         mean_spacing=mean_spacing, thresholds={},
                         fractions={}, gram_schmidt_records=records,
                         skipped_mass_floor=skipped_floor,
                         skipped_degenerate=skipped_degenerate)


# ---------------------------------------------------------------------------
# 1-D solver
# ---------------------------------------------------------------------------


def solve_1d(p_symbol, h: float, n_max: int, k_cut: int = 8) -> np.ndarray:
    """All eigenvalues (sorted) of the 1-D Weyl matrix of a slow symbol.

    Accepts the operator spec produced by the averaging reduction (uses its
    `symbol`), a 1-D FourierTaylorSeries, or any symbol weyl_matrix resolves.
    """
    sym = getattr(p_symbol, "symbol", p_symbol)
    W = weyl_matrix(sym, h, n_max, k_cut=k_cut)
    if W.d != 1:
        raise ValueError("solve_1d expects a 1-D symbol")
    return np.linalg.eigvalsh(W.entries)
