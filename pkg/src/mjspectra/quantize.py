"""Semiclassical quasi-energy ladders.

Quantization conditions used here:

* torus ladders: E_k = P(kh - I0 - h*alpha/4) over the admissible lattice
  |kh - I0|_inf <= c_adm * h^delta, with P the integrable normal-form
  polynomial and alpha the Maslov indices.  The shift sign is pinned to
  -h*alpha/4; `maslov_sign=+1` flips it for comparison runs.
* Randers-sphere ladders: h_m = C / (2*pi*m1 + m2*beta + beta/2 + p*pi)
  per equator branch, with beta = 2*pi/(1 +- alpha) the section rotation
  angle and C the unit-energy equator action measured from the flow.
  Quasi-energies are reported to leading order only (E_m = 1; the next
  correction is O(h_m^2) and is not computed).
"""

from __future__ import annotations

import csv
import hashlib
import json
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from . import flow, kam
from .errors import EmptyLadderWarning, RationalFluxWarning
from .series import FourierTaylorSeries

__all__ = [
    "MaslovData", "QuasiEnergyTable", "bs_energies", "stable_count",
    "KatokLadder", "katok_ladder",
]

TWO_PI = 2.0 * np.pi


@dataclass
class MaslovData:
    """User-declared Maslov indices and base actions of the invariant torus."""

    alpha: Tuple[int, ...]
    I0: Tuple[float, ...]

    def __post_init__(self):
        self.alpha = tuple(int(a) for a in np.atleast_1d(self.alpha))
        self.I0 = tuple(float(v) for v in np.atleast_1d(self.I0))
        if any(a not in (0, 1, 2, 3) for a in self.alpha):
            raise ValueError("Maslov indices must be integers mod 4 in {0,1,2,3}")
        if len(self.alpha) != len(self.I0):
            raise ValueError("alpha and I0 must have the same dimension")

    @property
    def d(self) -> int:
        return len(self.alpha)


@dataclass
class QuasiEnergyTable:
    h: float
    delta: float
    window: Tuple[float, float]
    k: np.ndarray          # (n, d) integer lattice points
    iota: np.ndarray       # (n, d) ladder arguments kh - I0 - h alpha/4
    energies: np.ndarray   # (n,)
    maslov: MaslovData = None
    maslov_sign: int = -1
    source_hash: str = ""

    def __len__(self):
        return len(self.energies)

    def to_csv(self, path) -> None:
        d = self.k.shape[1] if len(self.k) else len(self.maslov.alpha)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"k{j+1}" for j in range(d)]
                            + [f"iota{j+1}" for j in range(d)] + ["energy"])
            for i in range(len(self.energies)):
                writer.writerow([int(v) for v in self.k[i]]
                                + [f"{v:.17g}" for v in self.iota[i]]
                                + [f"{self.energies[i]:.17g}"])

    def to_json(self, path) -> None:
        payload = {
            "h": self.h, "delta": self.delta,
            "window": list(self.window),
            "maslov_alpha": list(self.maslov.alpha) if self.maslov else None,
            "maslov_I0": list(self.maslov.I0) if self.maslov else None,
            "maslov_sign": self.maslov_sign,
            "source_hash": self.source_hash,
            "count": len(self.energies),
            "entries": [
                {"k": [int(v) for v in self.k[i]],
                 "iota": [float(v) for v in self.iota[i]],
                 "energy": float(self.energies[i])}
                for i in range(len(self.energies))],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1)


def _series_hash(s: FourierTaylorSeries) -> str:
    blob = ";".join(f"{k}|{a}|{c.real:.17g},{c.imag:.17g}"
                    for (k, a), c in sorted(s.terms.items()))
    return hashlib.sha1(blob.encode()).hexdigest()[:16]


def _as_polynomial(P) -> FourierTaylorSeries:
    nf = getattr(P, "normal_form", P)
    if not isinstance(nf, FourierTaylorSeries):
        raise TypeError("P must be a FourierTaylorSeries or BnfResult")
    if len(nf.oscillating()) != 0:
        raise ValueError("ladder polynomial must be angle-free (k = 0 modes only)")
    return nf


def bs_energies(P, maslov: MaslovData, h: float, delta: float,
                c_adm: float = 1.0, window_center: Optional[float] = None,
                maslov_sign: int = -1) -> QuasiEnergyTable:
    """Enumerate the quasi-energy ladder on the admissible action lattice.

    Lattice points k with |kh - I0|_inf <= c_adm h^delta are kept, the
    ladder argument is iota_k = kh - I0 + maslov_sign * h*alpha/4, and
    energies are filtered to [center - h^delta, center + h^delta] where
    the center defaults to P(0) (the energy of the base torus).  Ordering
    is deterministic: by energy, then lexicographic in k.
    """
    if not (0 < delta < 1):
        raise ValueError("delta must lie in (0, 1)")
    if h <= 0:
        raise ValueError("h must be positive")
    if maslov_sign not in (-1, 1):
        raise ValueError("maslov_sign must be -1 or +1")
    nf = _as_polynomial(P)
    d = maslov.d
    if nf.dim != d:
        raise ValueError("polynomial dimension does not match Maslov data")
    lin = nf.taylor_part(1)
    if len(lin) == 0 or lin.sup_coeff() == 0.0:
        raise ValueError("ladder polynomial must be at least linear (omega != 0)")

    src = _series_hash(nf)
    I0 = np.asarray(maslov.I0, dtype=float)
    alpha = np.asarray(maslov.alpha, dtype=float)
    halfwidth = c_adm * h ** delta
    los = np.ceil((I0 - halfwidth) / h).astype(int)
    his = np.floor((I0 + halfwidth) / h).astype(int)
    if np.any(his < los):
        warnings.warn(EmptyLadderWarning(
            f"no admissible lattice points at h = {h} (|kh - I0| <= {halfwidth:.3g})"))
        empty = np.zeros((0, d))
        return QuasiEnergyTable(h, delta, (np.nan, np.nan),
                                empty.astype(int), empty, np.zeros(0),
                                maslov, maslov_sign, src)

    grids = np.meshgrid(*[np.arange(lo, hi + 1) for lo, hi in zip(los, his)],
                        indexing="ij")
    ks = np.stack([g.ravel() for g in grids], axis=-1)
    iota = ks * h - I0 + maslov_sign * h * alpha / 4.0
    zeros = np.zeros_like(iota)
    energies = np.real(nf.eval(zeros, iota))

    if window_center is None:
        window_center = float(np.real(nf.eval(np.zeros((1, d)), np.zeros((1, d))))[0])
    win = (window_center - h ** delta, window_center + h ** delta)
    keep = (energies >= win[0]) & (energies <= win[1])
    ks, iota, energies = ks[keep], iota[keep], energies[keep]
    if len(energies) == 0:
        warnings.warn(EmptyLadderWarning(
            f"admissible lattice produced no energies inside {win}"))

    order = np.lexsort(tuple(ks[:, j] for j in reversed(range(d))) + (energies,))
    return QuasiEnergyTable(h, delta, win, ks[order], iota[order],
                            energies[order], maslov, maslov_sign, src)


def stable_count(mask: "kam.KamMask", h: float, delta: float) -> float:
    """Quasi-mode count of the stable spectrum: h^(delta-2) x accepted measure.

    Thin wrapper over the torus-measure estimate with d = 2: these are the
    window states supported on the surviving Diophantine tori.
    """
    return kam.stable_dimension_estimate(mask, h, delta)


# ---------------------------------------------------------------------------
# Randers sphere ladders
# ---------------------------------------------------------------------------

@dataclass
class KatokLadder:
    branch: str
    beta: float
    C_action: float
    p_index: int
    m1: np.ndarray
    m2: np.ndarray
    h_m: np.ndarray
    energies: np.ndarray          # leading order: all ones
    skipped_nonpositive: int = 0
    source_hash: str = ""

    def __len__(self):
        return len(self.h_m)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["m1", "m2", "h_m", "energy"])
            for i in range(len(self.h_m)):
                writer.writerow([int(self.m1[i]), int(self.m2[i]),
                                 f"{self.h_m[i]:.17g}", f"{self.energies[i]:.17g}"])

    def to_json(self, path) -> None:
        payload = {
            "branch": self.branch, "beta": self.beta,
            "C_action": self.C_action, "p_index": self.p_index,
            "skipped_nonpositive": self.skipped_nonpositive,
            "source_hash": self.source_hash,
            "entries": [
                {"m1": int(self.m1[i]), "m2": int(self.m2[i]),
                 "h_m": float(self.h_m[i]), "energy": float(self.energies[i])}
                for i in range(len(self.h_m))],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1)


def _warn_if_rational(alpha: float, max_q: int = 20, tol: float = 1e-9) -> None:
    for q in range(1, max_q + 1):
        p = round(alpha * q)
        if abs(alpha - p / q) < tol:
            warnings.warn(RationalFluxWarning(
                f"alpha = {alpha} is within {tol} of {p}/{q}; the two equator "
                "ladders may interleave periodically (the analysis assumes "
                "irrational flux)"))
            return


def katok_ladder(model, branch: str, m1_range: Sequence[int],
                 m2_range: Sequence[int], p_index: int = 1,
                 n_steps: int = 4096) -> KatokLadder:
    """Quantize an equator branch: h_m = C/(2 pi m1 + m2 beta + beta/2 + p pi).

    beta is the branch rotation angle 2*pi/(1 +- alpha); C is the equator
    action at unit energy, measured by integrating the flow once around
    and applying the loop quadrature (for the round sphere it is 2*pi).
    p_index is the loop index of the quantization condition; it is supplied
    by the caller (default 1), not computed from the geometry.  Entries
    whose denominator is nonpositive are skipped and counted.
    """
    if not abs(model.alpha) < 1:
        raise ValueError("|alpha| must be below 1")
    _warn_if_rational(model.alpha)
    beta = model.rotation_angle(branch)
    T = abs(beta)

    p0 = model.equator_point(branch)
    traj = flow.integrate(model.hamiltonian, p0, T, T / n_steps, record_every=4)
    act = flow.action_integral(model.hamiltonian, (traj.x, traj.xi))
    C = float(act.value)

    m1s, m2s, hs = [], [], []
    skipped = 0
    for m1 in m1_range:
        for m2 in m2_range:
            denom = TWO_PI * m1 + m2 * beta + beta / 2.0 + p_index * np.pi
            if denom <= 0:
                skipped += 1
                continue
            m1s.append(m1)
            m2s.append(m2)
            hs.append(C / denom)
    if not hs:
        warnings.warn(EmptyLadderWarning(
            f"all (m1, m2) denominators nonpositive on branch {branch}"))
    h_m = np.asarray(hs, dtype=float)
    order = (np.argsort(-h_m, kind="stable") if len(h_m)
             else np.zeros(0, dtype=int))
    src = hashlib.sha1(
        f"katok|alpha={model.alpha:.17g}|branch={branch}".encode()).hexdigest()[:16]
    return KatokLadder(branch=branch, beta=float(beta), C_action=C,
                       p_index=int(p_index),
                       m1=np.asarray(m1s, dtype=int)[order],
                       m2=np.asarray(m2s, dtype=int)[order],
                       h_m=h_m[order],
                       energies=np.ones(len(h_m)),
                       skipped_nonpositive=skipped,
                       source_hash=src)
