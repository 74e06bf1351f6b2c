"""Experiment registry behind the command-line driver.

Each experiment kind pairs a validator with a runner.  The validator is pure:
it checks every referenced parameter, builds the model objects, and raises
ConfigInvalid before anything touches the filesystem.  The runner reuses the
science modules and emits CSV tables (floats at 17 significant digits) plus a
JSON manifest listing every file with its checksum.  A fixed seed governs any
sampling, so identical config + seed reproduces the CSV outputs byte for byte.
"""

import csv
import dataclasses
import datetime
import difflib
import hashlib
import json
from pathlib import Path
from typing import Callable, Dict, List, Tuple

import numpy as np

from . import __version__, bnf, flow, kam, models, quantize, spectra
from .config import ExperimentConfig, resolve_output_dir
from .errors import ConfigInvalid
from .series import FourierTaylorSeries, series_from_entries

TOOL_VERSION = __version__

_REQUIRED = object()


# ---------------------------------------------------------------------------
# typed parameter access (everything raises ConfigInvalid, never ValueError)
# ---------------------------------------------------------------------------

def _bad(kind, where, key, msg):
    raise ConfigInvalid(f"{kind}: {where}.{key} {msg}")


def _get(block, where, key, kind, default):
    if key in block:
        return block[key]
    if default is _REQUIRED:
        raise ConfigInvalid(f"{kind}: missing required {where}.{key}")
    return default


def _no_unknown(block, where, kind, allowed):
    unknown = sorted(set(block) - set(allowed))
    if unknown:
        raise ConfigInvalid(
            f"{kind}: unknown {where} keys {unknown}; allowed: {sorted(allowed)}")


def _coerce_float(v, kind, where, key):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _bad(kind, where, key, "must be a number")
    return float(v)


def _float(block, where, key, kind, default=_REQUIRED,
           above=None, below=None, minimum=None):
    v = _get(block, where, key, kind, default)
    if v is None:
        return None
    v = _coerce_float(v, kind, where, key)
    if above is not None and not v > above:
        _bad(kind, where, key, f"must be > {above}, got {v}")
    if below is not None and not v < below:
        _bad(kind, where, key, f"must be < {below}, got {v}")
    if minimum is not None and not v >= minimum:
        _bad(kind, where, key, f"must be >= {minimum}, got {v}")
    return v


def _int(block, where, key, kind, default=_REQUIRED, minimum=None, maximum=None):
    v = _get(block, where, key, kind, default)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, int):
        _bad(kind, where, key, "must be an integer")
    if minimum is not None and v < minimum:
        _bad(kind, where, key, f"must be >= {minimum}, got {v}")
    if maximum is not None and v > maximum:
        _bad(kind, where, key, f"must be <= {maximum}, got {v}")
    return v


def _bool(block, where, key, kind, default):
    v = _get(block, where, key, kind, default)
    if not isinstance(v, bool):
        _bad(kind, where, key, "must be a boolean")
    return v


def _str(block, where, key, kind, default=_REQUIRED, choices=None):
    v = _get(block, where, key, kind, default)
    if v is None:
        return None
    if not isinstance(v, str):
        _bad(kind, where, key, "must be a string")
    if choices is not None and v not in choices:
        _bad(kind, where, key, f"must be one of {sorted(choices)}, got {v!r}")
    return v


def _float_list(block, where, key, kind, default=_REQUIRED, above=None):
    v = _get(block, where, key, kind, default)
    if v is None:
        return None
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        v = [v]
    if not isinstance(v, list) or not v:
        _bad(kind, where, key, "must be a number or a non-empty list of numbers")
    out = [_coerce_float(x, kind, where, key) for x in v]
    if above is not None and any(not x > above for x in out):
        _bad(kind, where, key, f"entries must be > {above}")
    return out


def _int_list(block, where, key, kind, default=_REQUIRED, minimum=None):
    v = _get(block, where, key, kind, default)
    if v is None:
        return None
    if isinstance(v, int) and not isinstance(v, bool):
        v = [v]
    if not isinstance(v, list) or not v:
        _bad(kind, where, key, "must be an integer or a non-empty list of integers")
    out = []
    for x in v:
        if isinstance(x, bool) or not isinstance(x, int):
            _bad(kind, where, key, "entries must be integers")
        if minimum is not None and x < minimum:
            _bad(kind, where, key, f"entries must be >= {minimum}")
        out.append(x)
    return out


def _str_list(block, where, key, kind, default=_REQUIRED):
    v = _get(block, where, key, kind, default)
    if isinstance(v, str):
        v = [v]
    if not isinstance(v, list) or not v or not all(isinstance(x, str) for x in v):
        _bad(kind, where, key, "must be a string or a non-empty list of strings")
    return list(v)


def _vecf(block, where, key, kind, length, default=_REQUIRED):
    v = _get(block, where, key, kind, default)
    if v is None:
        return None
    if not isinstance(v, list) or len(v) != length:
        _bad(kind, where, key, f"must be a list of {length} numbers")
    return [_coerce_float(x, kind, where, key) for x in v]


def _int_pair(block, where, key, kind):
    v = _get(block, where, key, kind, _REQUIRED)
    ok = (isinstance(v, list) and len(v) == 2
          and all(isinstance(x, int) and not isinstance(x, bool) for x in v))
    if not ok or v[0] > v[1]:
        _bad(kind, where, key, "must be an integer pair [lo, hi] with lo <= hi")
    return int(v[0]), int(v[1])


def _match_h(values, n_h, where, key, kind):
    """Broadcast a length-1 list against the h grid."""
    if len(values) == n_h:
        return list(values)
    if len(values) == 1:
        return list(values) * n_h
    _bad(kind, where, key, f"needs 1 or {n_h} entries (one per h), got {len(values)}")


# ---------------------------------------------------------------------------
# model blocks
# ---------------------------------------------------------------------------

def _mode_terms(tbl, where, kind, dim):
    """Parse a {"1 0" = amp} table of cosine modes into {mode: amp}."""
    if not isinstance(tbl, dict) or not tbl:
        raise ConfigInvalid(f"{kind}: {where} must be a non-empty table of "
                            "\"k1 k2 ...\" = amplitude entries")
    out = {}
    for key, amp in tbl.items():
        try:
            mode = tuple(int(t) for t in key.split())
        except ValueError:
            _bad(kind, where, key, "is not a space-separated integer mode")
        if len(mode) != dim:
            _bad(kind, where, key, f"has {len(mode)} components, expected {dim}")
        out[mode] = _coerce_float(amp, kind, where, key)
    return out


def _series_from_model(model, kind, dim):
    """Build the Fourier-Taylor series declared as model.entries triples."""
    entries = model["entries"]
    if not isinstance(entries, list) or not entries:
        raise ConfigInvalid(f"{kind}: model.entries must be a non-empty list of "
                            "[mode, multi-index, coefficient] triples")
    k_max = _int(model, "model", "k_max", kind, default=8, minimum=1)
    deg_max = _int(model, "model", "deg_max", kind, default=6, minimum=0)
    try:
        return series_from_entries(dim, entries, k_max=k_max, deg_max=deg_max)
    except Exception as exc:
        raise ConfigInvalid(f"{kind}: model.entries invalid: {exc}") from exc


def _require_action_only(s, kind):
    if any(any(v != 0 for v in k) for (k, a) in s.terms):
        raise ConfigInvalid(f"{kind}: model must be action-only "
                            "(every entry with mode k = 0)")


def _perturbed_laplacian(dim, lam, terms):
    """|xi|^2 plus lam times a sum of cosines (the default window symbol)."""
    k_caps = [max(abs(c) for c in k) for k in terms] or [1]
    s = FourierTaylorSeries(dim, max(max(k_caps), 1), 2)
    zero_k = (0,) * dim
    zero_a = (0,) * dim
    for j in range(dim):
        s.add_term(zero_k, tuple(2 if i == j else 0 for i in range(dim)), 1.0)
    for k in sorted(terms):
        amp = lam * terms[k]
        if all(v == 0 for v in k):
            s.add_term(zero_k, zero_a, amp)
        else:
            s.add_term(k, zero_a, 0.5 * amp)
            s.add_term(tuple(-v for v in k), zero_a, 0.5 * amp)
    return s


_SYMBOL_MODEL_KEYS = {"dim", "entries", "k_max", "deg_max", "lam", "potential"}


def _window_symbol(model, kind):
    """Symbol for the window experiments: explicit entries, or the perturbed
    Laplacian built from model.lam / model.potential (defaulting to
    0.1 * (cos x1 + cos x2))."""
    _no_unknown(model, "model", kind, _SYMBOL_MODEL_KEYS)
    dim = _int(model, "model", "dim", kind, default=2, minimum=1)
    if "entries" in model:
        if "lam" in model or "potential" in model:
            raise ConfigInvalid(f"{kind}: model.entries excludes model.lam / "
                                "model.potential")
        return _series_from_model(model, kind, dim), dim
    lam = _float(model, "model", "lam", kind, default=0.1)
    if "potential" in model:
        terms = _mode_terms(model["potential"], "model.potential", kind, dim)
    else:
        terms = {tuple(1 if i == j else 0 for i in range(dim)): 1.0
                 for j in range(dim)}
    return _perturbed_laplacian(dim, lam, terms), dim


def _mechanical_model(model, kind):
    _no_unknown(model, "model", kind, {"potential", "E"})
    terms = _mode_terms(_get(model, "model", "potential", kind, _REQUIRED),
                        "model.potential", kind, 2)
    E = _float(model, "model", "E", kind, above=0.0)
    V = models.TrigField.from_cosines(2, terms)
    try:
        return models.build_mechanical_pair(V, E)
    except Exception as exc:
        raise ConfigInvalid(f"{kind}: cannot build the mechanical pair: {exc}") from exc


_OBSERVABLE_NAMES = ("one", "xi_sq", "xi1_sq", "xi1", "cos_x1", "cos_x1_cos_x2")


def _named_observable(name, dim, kind):
    """Built-in window observables, all exact Fourier-Taylor data."""
    if name not in _OBSERVABLE_NAMES:
        close = difflib.get_close_matches(name, _OBSERVABLE_NAMES, n=1)
        hint = f"; did you mean {close[0]!r}?" if close else ""
        raise ConfigInvalid(f"{kind}: unknown observable {name!r}"
                            f" (known: {', '.join(_OBSERVABLE_NAMES)}){hint}")
    if name == "cos_x1_cos_x2" and dim < 2:
        raise ConfigInvalid(f"{kind}: observable {name!r} needs dim >= 2")
    zero = (0,) * dim
    e1 = tuple(1 if j == 0 else 0 for j in range(dim))
    s = FourierTaylorSeries(dim, 2, 2)
    if name == "one":
        s.add_term(zero, zero, 1.0)
    elif name == "xi_sq":
        for j in range(dim):
            s.add_term(zero, tuple(2 if i == j else 0 for i in range(dim)), 1.0)
    elif name == "xi1_sq":
        s.add_term(zero, tuple(2 if i == 0 else 0 for i in range(dim)), 1.0)
    elif name == "xi1":
        s.add_term(zero, e1, 1.0)
    elif name == "cos_x1":
        s.add_term(e1, zero, 0.5)
        s.add_term(tuple(-v for v in e1), zero, 0.5)
    else:  # cos_x1_cos_x2 = (cos(x1+x2) + cos(x1-x2)) / 2
        for k in ((1, 1), (1, -1)):
            kk = k + (0,) * (dim - 2)
            s.add_term(kk, zero, 0.25)
            s.add_term(tuple(-v for v in kk), zero, 0.25)
    return s


# ---------------------------------------------------------------------------
# output bookkeeping
# ---------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


class _OutputWriter:
    """Tracks every file the runner emits so the manifest can checksum them."""

    def __init__(self, outdir):
        self.outdir = Path(outdir)
        self.names = []

    def path(self, name):
        self.names.append(name)
        return self.outdir / name

    def csv(self, name, header, rows):
        with open(self.path(name), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])

    def manifest_entries(self):
        out = []
        for name in self.names:
            data = (self.outdir / name).read_bytes()
            out.append({"path": name, "bytes": len(data),
                        "sha256": hashlib.sha256(data).hexdigest()})
        return out


@dataclasses.dataclass
class RunManifest:
    """Reproducibility record: what ran, from which config, producing what."""

    kind: str
    config_hash: str
    tool_version: str
    seed: int
    started: str
    finished: str
    steps: List[dict]
    outputs: List[dict]

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=1)
            fh.write("\n")


# ---------------------------------------------------------------------------
# validators + runners, one pair per experiment kind
# ---------------------------------------------------------------------------

def _v_mjc_check(cfg):
    kind = cfg.kind
    _no_unknown(cfg.params, "params", kind, {"n_rays", "n_angles", "r_max"})
    return {
        "pair": _mechanical_model(cfg.model, kind),
        "n_rays": _int(cfg.params, "params", "n_rays", kind, default=16, minimum=4),
        "n_angles": _int(cfg.params, "params", "n_angles", kind, default=16, minimum=4),
        "r_max": _float(cfg.params, "params", "r_max", kind, default=16.0, above=0.0),
    }


def _r_mjc_check(cfg, v, out, step):
    rep = models.mj_consistency_report(v["pair"], n_rays=v["n_rays"],
                                       n_angles=v["n_angles"], r_max=v["r_max"],
                                       seed=cfg.seed)
    step("consistency-report")
    out.csv("mjc_report.csv",
            ["n_rays", "n_angles", "n_found", "n_failed", "max_defect",
             "multiplier_min", "multiplier_max", "E", "calE"],
            [[rep.n_rays, rep.n_angles, rep.n_found, len(rep.failed),
              rep.max_defect, rep.multiplier_min, rep.multiplier_max,
              rep.E, rep.calE]])


def _v_flow(cfg):
    kind = cfg.kind
    p = cfg.params
    _no_unknown(p, "params", kind, {"x0", "xi0", "t_end", "dt", "record_every",
                                    "estimate_rotation", "min_advance"})
    return {
        "pair": _mechanical_model(cfg.model, kind),
        "x0": _vecf(p, "params", "x0", kind, 2),
        "xi0": _vecf(p, "params", "xi0", kind, 2),
        "t_end": _float(p, "params", "t_end", kind, above=0.0),
        "dt": _float(p, "params", "dt", kind, above=0.0),
        "record_every": _int(p, "params", "record_every", kind, default=1, minimum=1),
        "estimate_rotation": _bool(p, "params", "estimate_rotation", kind, True),
        "min_advance": _float(p, "params", "min_advance", kind, default=100.0, above=0.0),
    }


def _r_flow(cfg, v, out, step):
    state0 = np.array(v["x0"] + v["xi0"], dtype=float)
    traj = flow.integrate(v["pair"].H, state0, v["t_end"], v["dt"],
                          record_every=v["record_every"])
    step("integrate")
    d = traj.d
    out.csv("orbit.csv",
            ["t"] + [f"x{j+1}" for j in range(d)] + [f"xi{j+1}" for j in range(d)]
            + ["energy"],
            [[traj.times[i]] + list(traj.states[i]) + [traj.energies[i]]
             for i in range(len(traj.times))])
    header = ["t_end", "dt", "n_samples", "energy_drift"]
    row = [v["t_end"], v["dt"], len(traj.times), traj.energy_drift]
    if v["estimate_rotation"]:
        rot = flow.rotation_number(traj, min_advance=v["min_advance"])
        step("rotation-number")
        header += [f"omega{j+1}" for j in range(d)] + [f"confidence{j+1}" for j in range(d)]
        row += list(rot.omega) + list(rot.confidence)
    out.csv("flow_summary.csv", header, [row])


def _v_kam(cfg):
    kind = cfg.kind
    p = cfg.params
    _no_unknown(cfg.model, "model", kind, {"dim", "entries", "k_max", "deg_max"})
    _no_unknown(p, "params", kind, {"calE", "center", "half_width", "n_mu",
                                    "dio_c", "sigma", "q_max", "h", "delta",
                                    "fd_step"})
    dim = _int(cfg.model, "model", "dim", kind, default=2, minimum=2, maximum=2)
    if "entries" not in cfg.model:
        raise ConfigInvalid(f"{kind}: missing required model.entries")
    s = _series_from_model(cfg.model, kind, dim)
    _require_action_only(s, kind)
    hs = _float_list(p, "params", "h", kind, above=0.0)
    return {
        "series": s, "dim": dim, "h": hs,
        "calE": _float(p, "params", "calE", kind),
        "center": _vecf(p, "params", "center", kind, dim),
        "half_width": _float(p, "params", "half_width", kind, default=0.5, above=0.0),
        "n_mu": _int(p, "params", "n_mu", kind, default=33, minimum=5),
        "dio_c": _float_list(p, "params", "dio_c", kind, above=0.0),
        "sigma": _float(p, "params", "sigma", kind, default=2.5, above=1.0),
        "q_max": _int(p, "params", "q_max", kind, default=200, minimum=8),
        "delta": _float(p, "params", "delta", kind, above=0.0, below=1.0),
        "fd_step": _float(p, "params", "fd_step", kind, default=1e-5, above=0.0),
    }


def _r_kam(cfg, v, out, step):
    s = v["series"]
    zero_x = np.zeros(v["dim"])

    def H(I):
        return float(s.eval_real(zero_x, np.asarray(I, dtype=float)))

    fm = kam.FrequencyMap.from_hamiltonian(H, d=v["dim"], fd_step=v["fd_step"])
    prof = kam.rotation_profile(fm, v["calE"], v["center"],
                                half_width=v["half_width"], n_mu=v["n_mu"])
    step("rotation-profile")
    rows = []
    for i, c in enumerate(v["dio_c"]):
        mask = kam.kam_mask(prof, kam.DiophantineParams(dio_c=c, sigma=v["sigma"],
                                                        q_max=v["q_max"]))
        mask.to_csv(out.path(f"kam_mask_{i:02d}.csv"))
        for h in v["h"]:
            rows.append([c, h, mask.accepted_measure, mask.complement_measure,
                         kam.stable_dimension_estimate(mask, h, v["delta"])])
        step(f"mask dio_c={c:g}")
    out.csv("kam_counts.csv",
            ["dio_c", "h", "accepted_measure", "complement_measure", "count"],
            rows)


def _v_bnf(cfg):
    kind = cfg.kind
    p = cfg.params
    _no_unknown(cfg.model, "model", kind, {"dim", "entries", "k_max", "deg_max"})
    _no_unknown(p, "params", kind, {"omega", "N", "probe", "radii", "n_angles",
                                    "n_dirs", "flow_steps"})
    dim = _int(cfg.model, "model", "dim", kind, default=2, minimum=1)
    if "entries" not in cfg.model:
        raise ConfigInvalid(f"{kind}: missing required model.entries")
    s = _series_from_model(cfg.model, kind, dim)
    radii = _float_list(p, "params", "radii", kind,
                        default=[0.1, 0.05, 0.025, 0.0125], above=0.0)
    if len(radii) < 4 or any(b >= a for a, b in zip(radii, radii[1:])) \
            or max(radii) > 0.1:
        _bad(kind, "params", "radii", "must be >= 4 decreasing values, all <= 0.1")
    return {
        "series": s, "dim": dim, "radii": radii,
        "omega": _vecf(p, "params", "omega", kind, dim),
        "N": _int_list(p, "params", "N", kind, minimum=1),
        "probe": _bool(p, "params", "probe", kind, True),
        "n_angles": _int(p, "params", "n_angles", kind, default=16, minimum=4),
        "n_dirs": _int(p, "params", "n_dirs", kind, default=8, minimum=2),
        "flow_steps": _int(p, "params", "flow_steps", kind, default=50, minimum=10),
    }


def _r_bnf(cfg, v, out, step):
    slope_rows, probe_rows = [], []
    for N in v["N"]:
        res = bnf.bnf_normalize(v["series"], np.array(v["omega"]), N)
        res.to_csv(out.path(f"normal_form_N{N}.csv"))
        step(f"normalize N={N}")
        if v["probe"]:
            pr = bnf.remainder_order_probe(res, v["series"], v["radii"],
                                           n_angles=v["n_angles"],
                                           n_dirs=v["n_dirs"],
                                           flow_steps=v["flow_steps"])
            slope_rows.append([N, pr.slope, int(pr.exact)])
            probe_rows += [[N, r, resid] for r, resid in zip(pr.radii, pr.residuals)]
            step(f"probe N={N}")
    if v["probe"]:
        out.csv("bnf_slopes.csv", ["N", "slope", "exact"], slope_rows)
        out.csv("bnf_probe.csv", ["N", "radius", "residual"], probe_rows)


def _v_larmor(cfg):
    kind = cfg.kind
    p = cfg.params
    _no_unknown(cfg.model, "model", kind, {"dim", "entries", "k_max", "deg_max"})
    _no_unknown(p, "params", kind, {"N", "k1", "h", "n_max", "k_cut", "n_levels",
                                    "quadratic_model", "n_grid"})
    dim = _int(cfg.model, "model", "dim", kind, default=2, minimum=2, maximum=2)
    if "entries" not in cfg.model:
        raise ConfigInvalid(f"{kind}: missing required model.entries")
    hs = _float_list(p, "params", "h", kind, above=0.0)
    n_max = _match_h(_int_list(p, "params", "n_max", kind, minimum=1),
                     len(hs), "params", "n_max", kind)
    return {
        "series": _series_from_model(cfg.model, kind, dim),
        "h": hs, "n_max": n_max,
        "N": _int(p, "params", "N", kind, default=3, minimum=1),
        "k1": _float_list(p, "params", "k1", kind),
        "k_cut": _int(p, "params", "k_cut", kind, default=8, minimum=1),
        "n_levels": _int(p, "params", "n_levels", kind, default=8, minimum=1),
        "quadratic_model": _bool(p, "params", "quadratic_model", kind, False),
        "n_grid": _int(p, "params", "n_grid", kind, default=256, minimum=32),
    }


def _r_larmor(cfg, v, out, step):
    red = bnf.rational_average(v["series"], v["N"], n_grid=v["n_grid"])
    step("rational-average")
    out.csv("larmor_reduction.csv",
            ["N", "E0", "xi2_curvature", "nondegenerate", "pde_residual"],
            [[v["N"], red.E0, red.xi2_curvature, int(red.nondegenerate),
              red.pde_residual]])
    rows = []
    for k1 in v["k1"]:
        op = bnf.larmor_operator(red, k1, quadratic_model=v["quadratic_model"])
        for h, nm in zip(v["h"], v["n_max"]):
            ev = spectra.solve_1d(op, h, nm, k_cut=v["k_cut"])
            for j in range(min(v["n_levels"], len(ev))):
                rows.append([k1, h, j, ev[j]])
        step(f"levels k1={k1:g}")
    out.csv("larmor_levels.csv", ["k1", "h", "j", "energy"], rows)


def _v_bs_ladder(cfg):
    kind = cfg.kind
    p = cfg.params
    _no_unknown(cfg.model, "model", kind, {"dim", "entries", "k_max", "deg_max"})
    _no_unknown(p, "params", kind, {"alpha", "I0", "h", "delta", "c_adm",
                                    "window_center", "maslov_sign"})
    alpha = _int_list(p, "params", "alpha", kind)
    I0 = _vecf(p, "params", "I0", kind, len(alpha))
    try:
        maslov = quantize.MaslovData(tuple(alpha), tuple(I0))
    except ValueError as exc:
        raise ConfigInvalid(f"{kind}: bad Maslov data: {exc}") from exc
    dim = _int(cfg.model, "model", "dim", kind, default=len(alpha),
               minimum=len(alpha), maximum=len(alpha))
    if "entries" not in cfg.model:
        raise ConfigInvalid(f"{kind}: missing required model.entries")
    s = _series_from_model(cfg.model, kind, dim)
    _require_action_only(s, kind)
    if all(c == 0 for (k, a), c in s.terms.items() if sum(a) == 1):
        raise ConfigInvalid(f"{kind}: the ladder polynomial needs a nonzero "
                            "linear action part (omega != 0)")
    sign = _int(p, "params", "maslov_sign", kind, default=-1)
    if sign not in (-1, 1):
        _bad(kind, "params", "maslov_sign", "must be -1 or 1")
    return {
        "series": s, "maslov": maslov, "maslov_sign": sign,
        "h": _float_list(p, "params", "h", kind, above=0.0),
        "delta": _float(p, "params", "delta", kind, above=0.0, below=1.0),
        "c_adm": _float(p, "params", "c_adm", kind, default=1.0, above=0.0),
        "window_center": _float(p, "params", "window_center", kind, default=None),
    }


def _r_bs_ladder(cfg, v, out, step):
    rows = []
    for i, h in enumerate(v["h"]):
        tab = quantize.bs_energies(v["series"], v["maslov"], h, v["delta"],
                                   c_adm=v["c_adm"],
                                   window_center=v["window_center"],
                                   maslov_sign=v["maslov_sign"])
        tab.to_csv(out.path(f"ladder_{i:02d}.csv"))
        rows.append([h, len(tab), tab.window[0], tab.window[1]])
        step(f"ladder h={h:g}")
    out.csv("bs_summary.csv", ["h", "count", "window_lo", "window_hi"], rows)


def _v_katok(cfg):
    kind = cfg.kind
    p = cfg.params
    _no_unknown(cfg.model, "model", kind, {"alpha", "band_margin"})
    _no_unknown(p, "params", kind, {"branch", "m1", "m2", "p_index", "n_steps"})
    alpha = _float(cfg.model, "model", "alpha", kind)
    band_margin = _float(cfg.model, "model", "band_margin", kind, default=0.1,
                         above=0.0)
    try:
        km = models.katok_hamiltonian(alpha, band_margin=band_margin)
    except Exception as exc:
        raise ConfigInvalid(f"{kind}: bad Katok model: {exc}") from exc
    branch = _str(p, "params", "branch", kind, default="both",
                  choices={"plus", "minus", "both"})
    return {
        "model": km,
        "branches": ["plus", "minus"] if branch == "both" else [branch],
        "m1": _int_pair(p, "params", "m1", kind),
        "m2": _int_pair(p, "params", "m2", kind),
        "p_index": _int(p, "params", "p_index", kind, default=1),
        "n_steps": _int(p, "params", "n_steps", kind, default=4096, minimum=256),
    }


def _r_katok(cfg, v, out, step):
    m1 = list(range(v["m1"][0], v["m1"][1] + 1))
    m2 = list(range(v["m2"][0], v["m2"][1] + 1))
    summary = []
    for br in v["branches"]:
        lad = quantize.katok_ladder(v["model"], {"plus": "+", "minus": "-"}[br],
                                    m1, m2,
                                    p_index=v["p_index"], n_steps=v["n_steps"])
        lad.to_csv(out.path(f"katok_{br}.csv"))
        summary.append([br, lad.beta, lad.C_action, lad.p_index, len(lad),
                        lad.skipped_nonpositive])
        step(f"ladder {br}")
    out.csv("katok_summary.csv",
            ["branch", "beta", "C_action", "p_index", "count",
             "skipped_nonpositive"], summary)


def _window_params(cfg, extra):
    """Shared h / n_max / delta / E / k_cut block of the window experiments."""
    kind = cfg.kind
    p = cfg.params
    _no_unknown(p, "params", kind,
                {"h", "n_max", "delta", "E", "k_cut"} | set(extra))
    hs = _float_list(p, "params", "h", kind, above=0.0)
    return {
        "h": hs,
        "n_max": _match_h(_int_list(p, "params", "n_max", kind, minimum=1),
                          len(hs), "params", "n_max", kind),
        "delta": _float(p, "params", "delta", kind, above=0.0, below=1.0),
        "E": _float(p, "params", "E", kind),
        "k_cut": _int(p, "params", "k_cut", kind, default=8, minimum=1),
    }


def _solve_windows(v, step):
    for h, nm in zip(v["h"], v["n_max"]):
        W = spectra.weyl_matrix(v["symbol"], h, nm, k_cut=v["k_cut"])
        win = spectra.solve_window(W, v["E"], v["delta"])
        step(f"solve h={h:g}")
        yield h, win


def _v_spectrum(cfg):
    kind = cfg.kind
    p = cfg.params
    sym, dim = _window_symbol(cfg.model, kind)
    v = _window_params(cfg, {"regions", "axis", "boundaries", "n_x", "n_xi",
                             "threshold"})
    regions = _str(p, "params", "regions", kind, default=None,
                   choices={"momentum-halves", "sectors"})
    part = None
    if regions == "momentum-halves":
        axis = _int(p, "params", "axis", kind, default=0, minimum=0,
                    maximum=dim - 1)
        part = spectra.RegionPartition.momentum_halves(axis=axis)
    elif regions == "sectors":
        if dim != 2:
            _bad(kind, "params", "regions", "sectors need dim = 2")
        bnd = _float_list(p, "params", "boundaries", kind)
        if len(bnd) < 2:
            _bad(kind, "params", "boundaries", "needs at least 2 angles")
        part = spectra.RegionPartition.angular_sectors(bnd)
    v.update({
        "symbol": sym, "dim": dim, "partition": part,
        "n_x": _int(p, "params", "n_x", kind, default=None, minimum=4),
        "n_xi": _int(p, "params", "n_xi", kind, default=None, minimum=4),
        "threshold": _float(p, "params", "threshold", kind, default=0.5,
                            above=0.0),
    })
    if v["threshold"] > 1.0:
        _bad(kind, "params", "threshold", "must lie in (0, 1]")
    return v


def _r_spectrum(cfg, v, out, step):
    rows = []
    for i, (h, win) in enumerate(_solve_windows(v, step)):
        hus = None
        if v["partition"] is not None and win.J_size:
            hus = spectra.husimi_masses(win, v["partition"], n_x=v["n_x"],
                                        n_xi=v["n_xi"], threshold=v["threshold"])
        win.to_csv(out.path(f"window_{i:02d}.csv"), husimi=hus)
        rows.append([h, v["n_max"][i], win.n_max, win.J_size,
                     win.truncation_report, win.window[0], win.window[1]])
    out.csv("spectrum_summary.csv",
            ["h", "n_max_requested", "n_max_used", "J_size",
             "truncation_report", "window_lo", "window_hi"], rows)


def _v_pairing(cfg):
    kind = cfg.kind
    p = cfg.params
    sym, dim = _window_symbol(cfg.model, kind)
    v = _window_params(cfg, {"p", "rel_factor"})
    v.update({
        "symbol": sym, "dim": dim,
        "p": _float(p, "params", "p", kind, default=4.0, above=0.0),
        "rel_factor": _float(p, "params", "rel_factor", kind, default=1e-3,
                             above=0.0),
    })
    return v


def _r_pairing(cfg, v, out, step):
    rows = []
    for h, win in _solve_windows(v, step):
        rep = spectra.pairing_report(win, rel_factor=v["rel_factor"], p=v["p"])
        rows.append([h, win.n_max, rep.J_size, rep.mean_spacing,
                     rep.thresholds["a"], rep.fractions["a"],
                     rep.thresholds["b"], rep.fractions["b"]])
    out.csv("pairing_trend.csv",
            ["h", "n_max_used", "J_size", "mean_spacing", "threshold_a",
             "fraction_a", "threshold_b", "fraction_b"], rows)


def _v_trace_test(cfg):
    kind = cfg.kind
    p = cfg.params
    sym, dim = _window_symbol(cfg.model, kind)
    v = _window_params(cfg, {"observables", "n_grid"})
    names = _str_list(p, "params", "observables", kind,
                      default=list(_OBSERVABLE_NAMES))
    v.update({
        "symbol": sym, "dim": dim,
        "observables": [(n, _named_observable(n, dim, kind)) for n in names],
        "n_grid": _int(p, "params", "n_grid", kind, default=64, minimum=8),
    })
    return v


def _r_trace_test(cfg, v, out, step):
    rows = []
    for h, win in _solve_windows(v, step):
        for name, obs in v["observables"]:
            avg = spectra.observable_average(win, obs, n_grid=v["n_grid"],
                                             k_cut=v["k_cut"])
            rows.append([h, name, avg.window_mean, avg.liouville, avg.gap])
        step(f"averages h={h:g}")
    out.csv("trace_test.csv",
            ["h", "observable", "window_mean", "liouville", "gap"], rows)


def _v_projector(cfg):
    kind = cfg.kind
    p = cfg.params
    sym, dim = _window_symbol(cfg.model, kind)
    v = _window_params(cfg, {"I1", "mass_floor"})
    v.update({
        "symbol": sym, "dim": dim,
        "I1": _float(p, "params", "I1", kind),
        "mass_floor": _float(p, "params", "mass_floor", kind, default=0.4,
                             above=0.0, below=1.0),
    })
    return v


def _r_projector(cfg, v, out, step):
    rows = []
    for i, (h, win) in enumerate(_solve_windows(v, step)):
        Q = spectra.quasi_projector(win, v["I1"], v["delta"])
        comm = Q.commutator_norm(win.weyl, win)
        band = Q.band_bound(win.weyl)
        rep = spectra.gram_schmidt_pairs(win, Q, mass_floor=v["mass_floor"])
        recs = rep.gram_schmidt_records
        out.csv(f"projector_pairs_{i:02d}.csv",
                ["j", "eigenvalue", "norm_v", "norm_w", "overlap",
                 "residual_v", "residual_w"],
                [[r.j, r.eigenvalue, r.norm_v, r.norm_w, r.overlap,
                  r.residual_v, r.residual_w] for r in recs])
        rows.append([h, win.J_size, comm, band, Q.sup_phi_prime, len(recs),
                     rep.skipped_mass_floor, rep.skipped_degenerate,
                     max((r.residual_v for r in recs), default=float("nan")),
                     max((r.residual_w for r in recs), default=float("nan"))])
        step(f"projector h={h:g}")
    out.csv("projector.csv",
            ["h", "J_size", "commutator_norm", "band_bound", "sup_phi_prime",
             "treated", "skipped_mass_floor", "skipped_degenerate",
             "worst_residual_v", "worst_residual_w"], rows)


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    description: str
    required: Tuple[str, ...]
    validate: Callable[[ExperimentConfig], dict]
    runner: Callable

REGISTRY: Dict[str, ExperimentSpec] = {}


def _register(kind, description, required, validate, runner):
    REGISTRY[kind] = ExperimentSpec(kind, description, tuple(required),
                                    validate, runner)


_register("mjc-check",
          "Sample {H = E} along momentum rays and report the conformal-pair "
          "surface defect",
          ("model.potential", "model.E"), _v_mjc_check, _r_mjc_check)
_register("flow",
          "Integrate one mechanical orbit and estimate its rotation vector",
          ("model.potential", "model.E", "params.x0", "params.xi0",
           "params.t_end", "params.dt"), _v_flow, _r_flow)
_register("kam",
          "Rotation profile of an action Hamiltonian, Diophantine mask, and "
          "stable-state counts",
          ("model.entries", "params.calE", "params.center", "params.dio_c",
           "params.h", "params.delta"), _v_kam, _r_kam)
_register("bnf",
          "Normalize a near-integrable series to order N and probe the "
          "remainder decay",
          ("model.entries", "params.omega", "params.N"), _v_bnf, _r_bnf)
_register("larmor",
          "Average a rational-frequency Hamiltonian into its transverse well "
          "and solve the 1-d levels",
          ("model.entries", "params.k1", "params.h", "params.n_max"),
          _v_larmor, _r_larmor)
_register("bs-ladder",
          "Quasi-energy ladder of an action polynomial on the admissible "
          "lattice",
          ("model.entries", "params.alpha", "params.I0", "params.h",
           "params.delta"), _v_bs_ladder, _r_bs_ladder)
_register("katok",
          "Equator ladders of the Katok Randers metric with flow-measured "
          "rotation angles",
          ("model.alpha", "params.m1", "params.m2"), _v_katok, _r_katok)
_register("spectrum",
          "Torus Weyl matrix, spectral window, and optional region masses "
          "per window state",
          ("params.h", "params.n_max", "params.delta", "params.E"),
          _v_spectrum, _r_spectrum)
_register("pairing",
          "Near-degeneracy fractions of window eigenvalues across an h grid",
          ("params.h", "params.n_max", "params.delta", "params.E"),
          _v_pairing, _r_pairing)
_register("trace-test",
          "Window averages of named observables against their Liouville "
          "surface means",
          ("params.h", "params.n_max", "params.delta", "params.E"),
          _v_trace_test, _r_trace_test)
_register("projector",
          "Quasi-projector commutator bounds and Gram-Schmidt pair extraction "
          "on spectral windows",
          ("params.h", "params.n_max", "params.delta", "params.E",
           "params.I1"), _v_projector, _r_projector)

_ORDER = tuple(REGISTRY)


def _lookup_kind(kind):
    if kind not in REGISTRY:
        close = difflib.get_close_matches(kind, _ORDER, n=1)
        hint = (f"; did you mean {close[0]!r}?" if close
                else f"; known kinds: {', '.join(_ORDER)}")
        raise ConfigInvalid(f"unknown experiment kind {kind!r}{hint}")
    return REGISTRY[kind]


def list_experiments() -> str:
    """Stable catalog text: one kind per block with its required parameters."""
    lines = []
    for kind in _ORDER:
        spec = REGISTRY[kind]
        lines.append(f"{kind:<11} {spec.description}")
        lines.append(f"{'':<11} requires: {', '.join(spec.required)}")
    return "\n".join(lines)


def validate_config(cfg: ExperimentConfig) -> dict:
    """Full fail-fast validation; returns the normalized parameter dict."""
    return _lookup_kind(cfg.kind).validate(cfg)


def _utc_now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def run(cfg: ExperimentConfig, output_dir=None) -> RunManifest:
    """Validate, run, and write outputs + manifest.json into the output dir.

    Nothing is created on disk unless validation passes in full.
    """
    spec = _lookup_kind(cfg.kind)
    v = spec.validate(cfg)
    outdir = Path(output_dir) if output_dir is not None else resolve_output_dir(cfg)
    started = _utc_now()
    outdir.mkdir(parents=True, exist_ok=True)
    out = _OutputWriter(outdir)
    steps = [{"name": "validate", "status": "ok"}]
    spec.runner(cfg, v, out, lambda name: steps.append({"name": name,
                                                        "status": "ok"}))
    manifest = RunManifest(kind=cfg.kind, config_hash=cfg.config_hash,
                           tool_version=TOOL_VERSION, seed=cfg.seed,
                           started=started, finished=_utc_now(),
                           steps=steps, outputs=out.manifest_entries())
    manifest.to_json(outdir / "manifest.json")
    return manifest
