"""Sparse Fourier-Taylor series on T^d x R^d.

A series is a finite sum

    f(phi, iota) = sum_{k, a} c[k, a] * exp(i <k, phi>) * iota^a

with integer Fourier modes k (|k|_inf <= k_max) and Taylor multi-indices a
(|a|_1 <= deg_max) in the action variables.  This is the common currency of the
normal-form, averaging and quantization modules: brackets and Lie transforms
stay inside this class, and Weyl matrices are filled from the per-mode
polynomials.
"""
from __future__ import annotations

import numpy as np

from .errors import TruncationOverflow

HARD_K_MAX = 64
HARD_DEG_MAX = 12

# chunk size (in point-count x term-count products) for vectorized evaluation,
# keeps the broadcast temporaries around ~64 MB
_EVAL_BLOCK = 4_000_000


def _as_index(v, dim, what):
    t = tuple(int(x) for x in v)
    if len(t) != dim:
        raise ValueError(f"{what} {t} has wrong length for dim={dim}")
    return t


class FourierTaylorSeries:
    """Sparse container with truncated algebra (+, *, Poisson bracket).

    Arithmetic truncates products back to (k_max, deg_max) of the operands'
    maxima; direct `set_term` beyond the instance caps raises.
    """

    __slots__ = ("dim", "k_max", "deg_max", "terms", "_cache")

    def __init__(self, dim, k_max=8, deg_max=6, terms=None):
        dim = int(dim)
        if dim < 1:
            raise ValueError("dim must be >= 1")
        if k_max > HARD_K_MAX or deg_max > HARD_DEG_MAX:
            raise TruncationOverflow(
                f"caps k_max={k_max}, deg_max={deg_max} exceed hard caps "
                f"({HARD_K_MAX}, {HARD_DEG_MAX})")
        self.dim = dim
        self.k_max = int(k_max)
        self.deg_max = int(deg_max)
        self.terms = {}
        self._cache = None
        if terms:
            for (k, a), c in terms.items():
                self.set_term(k, a, c)

    # -- construction ------------------------------------------------------

    @classmethod
    def constant(cls, dim, c, k_max=8, deg_max=6):
        s = cls(dim, k_max, deg_max)
        s.set_term((0,) * dim, (0,) * dim, c)
        return s

    @classmethod
    def linear_actions(cls, omega, k_max=8, deg_max=6):
        """<omega, iota> as a series."""
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        s = cls(len(omega), k_max, deg_max)
        for j, w in enumerate(omega):
            a = [0] * len(omega)
            a[j] = 1
            s.set_term((0,) * len(omega), tuple(a), w)
        return s

    @classmethod
    def monomial(cls, dim, k, a, c, k_max=8, deg_max=6):
        s = cls(dim, k_max, deg_max)
        s.set_term(k, a, c)
        return s

    def copy(self):
        s = FourierTaylorSeries(self.dim, self.k_max, self.deg_max)
        s.terms = dict(self.terms)
        return s

    def _like(self, k_max=None, deg_max=None):
        return FourierTaylorSeries(self.dim,
                                   self.k_max if k_max is None else k_max,
                                   self.deg_max if deg_max is None else deg_max)

    # -- term access ---------------------------------------------------------

    def set_term(self, k, a, c):
        k = _as_index(k, self.dim, "mode")
        a = _as_index(a, self.dim, "multi-index")
        if any(x < 0 for x in a):
            raise ValueError(f"negative Taylor index {a}")
        if max(abs(x) for x in k) > self.k_max or sum(a) > self.deg_max:
            raise TruncationOverflow(
                f"term (k={k}, a={a}) beyond caps ({self.k_max}, {self.deg_max})")
        self._cache = None
        c = complex(c)
        if c == 0:
            self.terms.pop((k, a), None)
        else:
            self.terms[(k, a)] = c

    def add_term(self, k, a, c):
        cur = self.terms.get((tuple(k), tuple(a)), 0.0)
        self.set_term(k, a, cur + c)

    def get(self, k, a):
        return self.terms.get((tuple(int(x) for x in k),
                               tuple(int(x) for x in a)), 0.0)

    def __len__(self):
        return len(self.terms)

    def __repr__(self):
        return (f"FourierTaylorSeries(dim={self.dim}, terms={len(self.terms)}, "
                f"k_max={self.k_max}, deg_max={self.deg_max})")

    # -- algebra ---------------------------------------------------------------

    def _merge_caps(self, other):
        return max(self.k_max, other.k_max), max(self.deg_max, other.deg_max)

    def __add__(self, other):
        if np.isscalar(other):
            other = FourierTaylorSeries.constant(self.dim, other, 0, 0)
        km, dm = self._merge_caps(other)
        out = self._like(km, dm)
        out.terms = dict(self.terms)
        for key, c in other.terms.items():
            cur = out.terms.get(key)
            v = c if cur is None else cur + c
            if v == 0:
                out.terms.pop(key, None)
            else:
                out.terms[key] = v
        return out

    __radd__ = __add__

    def __neg__(self):
        out = self._like()
        out.terms = {key: -c for key, c in self.terms.items()}
        return out

    def __sub__(self, other):
        if np.isscalar(other):
            other = FourierTaylorSeries.constant(self.dim, other, 0, 0)
        return self + (-other)

    def __mul__(self, other):
        if np.isscalar(other):
            out = self._like()
            if other != 0:
                out.terms = {key: c * other for key, c in self.terms.items()}
            return out
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        km, dm = self._merge_caps(other)
        out = self._like(km, dm)
        acc = {}
        for (k1, a1), c1 in self.terms.items():
            for (k2, a2), c2 in other.terms.items():
                a = tuple(x + y for x, y in zip(a1, a2))
                if sum(a) > dm:
                    continue
                k = tuple(x + y for x, y in zip(k1, k2))
                if max(abs(x) for x in k) > km:
                    continue
                key = (k, a)
                acc[key] = acc.get(key, 0.0) + c1 * c2
        out.terms = {key: c for key, c in acc.items() if c != 0}
        return out

    __rmul__ = __mul__

    # -- derivatives -------------------------------------------------------------

    def dphi(self, j):
        """d/dphi_j (multiplies mode terms by i k_j)."""
        out = self._like()
        out.terms = {(k, a): 1j * k[j] * c
                     for (k, a), c in self.terms.items() if k[j] != 0}
        return out

    def diota(self, j):
        """d/diota_j (lowers the j-th Taylor index)."""
        out = self._like()
        for (k, a), c in self.terms.items():
            if a[j] == 0:
                continue
            anew = list(a)
            anew[j] -= 1
            key = (k, tuple(anew))
            out.terms[key] = out.terms.get(key, 0.0) + a[j] * c
        return out

    def poisson(self, other):
        """{self, other} = sum_j (d_iota self)(d_phi other) - (d_phi self)(d_iota other)."""
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        km, dm = self._merge_caps(other)
        out = self._like(km, dm)
        for j in range(self.dim):
            out = out + self.diota(j) * other.dphi(j)
            out = out - self.dphi(j) * other.diota(j)
        return out

    # -- structure ---------------------------------------------------------------

    def angle_average(self):
        """Part with k = 0."""
        zero = (0,) * self.dim
        out = self._like()
        out.terms = {(k, a): c for (k, a), c in self.terms.items() if k == zero}
        return out

    def oscillating(self):
        """Part with k != 0."""
        zero = (0,) * self.dim
        out = self._like()
        out.terms = {(k, a): c for (k, a), c in self.terms.items() if k != zero}
        return out

    def taylor_part(self, degree):
        out = self._like()
        out.terms = {(k, a): c for (k, a), c in self.terms.items()
                     if sum(a) == degree}
        return out

    def taylor_up_to(self, degree):
        out = self._like()
        out.terms = {(k, a): c for (k, a), c in self.terms.items()
                     if sum(a) <= degree}
        return out

    def truncated(self, k_max=None, deg_max=None):
        km = self.k_max if k_max is None else k_max
        dm = self.deg_max if deg_max is None else deg_max
        out = self._like(km, dm)
        out.terms = {(k, a): c for (k, a), c in self.terms.items()
                     if max(abs(x) for x in k) <= km and sum(a) <= dm}
        return out

    def chop(self, tol=1e-15, relative=True):
        """Drop coefficients below tol (relative to the largest by default)."""
        scale = self.sup_coeff() if relative else 1.0
        if scale == 0:
            return self.copy()
        out = self._like()
        out.terms = {key: c for key, c in self.terms.items()
                     if abs(c) > tol * scale}
        return out

    def max_degree(self):
        return max((sum(a) for (_, a) in self.terms), default=0)

    def max_mode(self):
        return max((max(abs(x) for x in k) for (k, _) in self.terms), default=0)

    def sup_coeff(self):
        return max((abs(c) for c in self.terms.values()), default=0.0)

    def l1_norm(self):
        return sum(abs(c) for c in self.terms.values())

    # -- reality ----------------------------------------------------------------

    def is_hermitian(self, tol=1e-12):
        """True when c(-k, a) = conj(c(k, a)) within tol (real-valued series)."""
        scale = max(self.sup_coeff(), 1.0)
        for (k, a), c in self.terms.items():
            mk = tuple(-x for x in k)
            if abs(self.terms.get((mk, a), 0.0) - np.conj(c)) > tol * scale:
                return False
        return True

    def hermitized(self):
        out = self._like()
        keys = set(self.terms)
        keys.update((tuple(-x for x in k), a) for (k, a) in self.terms)
        for k, a in keys:
            mk = tuple(-x for x in k)
            c = self.terms.get((k, a), 0.0)
            cm = self.terms.get((mk, a), 0.0)
            v = 0.5 * (c + np.conj(cm))
            if v != 0:
                out.terms[(k, a)] = v
        return out

    # -- evaluation ----------------------------------------------------------------

    def _arrays(self):
        if self._cache is None:
            if self.terms:
                keys = list(self.terms.keys())
                K = np.array([k for k, _ in keys], dtype=np.int64)
                A = np.array([a for _, a in keys], dtype=np.int64)
                C = np.array([self.terms[key] for key in keys])
            else:
                K = np.zeros((0, self.dim), dtype=np.int64)
                A = np.zeros((0, self.dim), dtype=np.int64)
                C = np.zeros((0,), dtype=complex)
            self._cache = (K, A, C)
        return self._cache

    def eval(self, x, xi):
        """Evaluate at angle/action arrays of shape (..., d); returns complex."""
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        K, A, C = self._arrays()
        if len(C) == 0:
            return np.zeros(np.broadcast_shapes(x.shape[:-1], xi.shape[:-1]),
                            dtype=complex)
        shape = np.broadcast_shapes(x.shape[:-1], xi.shape[:-1])
        x = np.broadcast_to(x, shape + (self.dim,)).reshape(-1, self.dim)
        xi = np.broadcast_to(xi, shape + (self.dim,)).reshape(-1, self.dim)
        npts = x.shape[0]
        out = np.empty(npts, dtype=complex)
        block = max(1, _EVAL_BLOCK // max(len(C), 1))
        for lo in range(0, npts, block):
            hi = min(npts, lo + block)
            E = np.exp(1j * (x[lo:hi] @ K.T))
            M = np.prod(xi[lo:hi, None, :] ** A[None, :, :], axis=-1)
            out[lo:hi] = (E * M) @ C
        return out.reshape(shape)

    def eval_real(self, x, xi):
        return self.eval(x, xi).real

    def grad_eval(self, x, xi):
        """(d/dx, d/dxi) evaluated at (..., d) arrays; complex arrays (..., d)."""
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        K, A, C = self._arrays()
        shape = np.broadcast_shapes(x.shape[:-1], xi.shape[:-1])
        gx = np.zeros(shape + (self.dim,), dtype=complex)
        gxi = np.zeros(shape + (self.dim,), dtype=complex)
        if len(C) == 0:
            return gx, gxi
        xf = np.broadcast_to(x, shape + (self.dim,)).reshape(-1, self.dim)
        xif = np.broadcast_to(xi, shape + (self.dim,)).reshape(-1, self.dim)
        gxf = gx.reshape(-1, self.dim)
        gxif = gxi.reshape(-1, self.dim)
        npts = xf.shape[0]
        block = max(1, _EVAL_BLOCK // max(len(C), 1))
        for lo in range(0, npts, block):
            hi = min(npts, lo + block)
            E = np.exp(1j * (xf[lo:hi] @ K.T))
            M = np.prod(xif[lo:hi, None, :] ** A[None, :, :], axis=-1)
            EM = E * M
            for j in range(self.dim):
                gxf[lo:hi, j] = EM @ (1j * K[:, j] * C)
                aj = A[:, j]
                if not np.any(aj):
                    continue
                Mj = np.prod(np.delete(xif[lo:hi, None, :], j, axis=2)
                             ** np.delete(A[None, :, :], j, axis=2), axis=-1)
                powm1 = xif[lo:hi, j:j + 1] ** np.maximum(aj - 1, 0)[None, :]
                gxif[lo:hi, j] = (E * Mj * (aj[None, :] * powm1)) @ C
        return gx, gxi

    def eval_mode(self, k, xi):
        """Evaluate the Taylor polynomial attached to one Fourier mode k at xi."""
        k = _as_index(k, self.dim, "mode")
        xi = np.asarray(xi, dtype=float)
        terms = [(a, c) for (kk, a), c in self.terms.items() if kk == k]
        out = np.zeros(xi.shape[:-1], dtype=complex)
        for a, c in terms:
            out = out + c * np.prod(xi ** np.array(a), axis=-1)
        return out

    def modes(self):
        """Sorted list of distinct Fourier modes present."""
        return sorted({k for (k, _) in self.terms})


# --- text format -------------------------------------------------------------
#
# A real series is exchanged as a list of entries
#     [k, a, c]            scalar c: cosine pairing, c/2 assigned to +k and -k
#     [k, a, [re, im]]     literal coefficient at k, conjugate added at -k
# with one entry per {+k, -k} orbit (k = 0 entries must be real).


def _orbit_representative(k):
    for x in k:
        if x > 0:
            return True
        if x < 0:
            return False
    return True  # k == 0


def series_to_entries(s, tol=0.0):
    scale = max(s.sup_coeff(), 1.0)
    entries = []
    for k in s.modes():
        if not _orbit_representative(k):
            continue
        for (kk, a), c in sorted(s.terms.items()):
            if kk != k:
                continue
            if tol and abs(c) <= tol:
                continue
            if all(x == 0 for x in k):
                if abs(c.imag) > 1e-12 * scale:
                    raise ValueError("k = 0 coefficient of a real series must be real")
                entries.append([list(k), list(a), float(c.real)])
            else:
                entries.append([list(k), list(a), [float(c.real), float(c.imag)]])
    return entries


def series_from_entries(dim, entries, k_max=8, deg_max=6):
    s = FourierTaylorSeries(dim, k_max, deg_max)
    for entry in entries:
        if len(entry) != 3:
            raise ValueError(f"malformed series entry {entry!r}")
        k, a, c = entry
        k = _as_index(k, dim, "mode")
        mk = tuple(-x for x in k)
        zero = all(x == 0 for x in k)
        if np.isscalar(c):
            c = float(c)
            if zero:
                s.add_term(k, a, c)
            else:
                s.add_term(k, a, 0.5 * c)
                s.add_term(mk, a, 0.5 * c)
        else:
            re, im = float(c[0]), float(c[1])
            if zero:
                if im != 0.0:
                    raise ValueError("k = 0 coefficient must be real")
                s.add_term(k, a, re)
            else:
                s.add_term(k, a, complex(re, im))
                s.add_term(mk, a, complex(re, -im))
    return s
