"""Config files for the experiment driver.

A config is a TOML document with a handful of top-level fields and two
tables::

    kind = "pairing"            # experiment name, see `mjspectra list`
    seed = 0                    # governs any sampling in the run
    output_dir = "runs/demo"    # created on demand; relative paths resolve
                                # against MJSPECTRA_OUTPUT_ROOT when set

    [model]                     # what to run on (symbol, potential, flux...)
    lam = 0.1

    [params]                    # numeric knobs (h list, delta, n_max, ...)
    h = [0.1, 0.07, 0.05]

Loading performs structural checks only (types, unknown keys); the
per-experiment requirements live in the registry and are enforced before any
computation starts.
"""

import dataclasses
import hashlib
import os
from pathlib import Path

import tomli

from .errors import ConfigInvalid

OUTPUT_ROOT_ENV = "MJSPECTRA_OUTPUT_ROOT"

_TOP_LEVEL_KEYS = {"kind", "seed", "output_dir", "model", "params"}


@dataclasses.dataclass
class ExperimentConfig:
    """Parsed config plus the hash of the exact bytes it came from."""

    kind: str
    model: dict
    params: dict
    output_dir: str
    seed: int
    config_hash: str
    path: str = ""


def _check_table(doc, key):
    block = doc.get(key, {})
    if not isinstance(block, dict):
        raise ConfigInvalid(f"[{key}] must be a table, got {type(block).__name__}")
    return block


def parse_config(raw: bytes, path: str = "<memory>") -> ExperimentConfig:
    """Parse raw TOML bytes into an ExperimentConfig (structural checks only)."""
    try:
        doc = tomli.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, tomli.TOMLDecodeError) as exc:
        raise ConfigInvalid(f"{path}: not valid TOML: {exc}") from exc

    unknown = sorted(set(doc) - _TOP_LEVEL_KEYS)
    if unknown:
        raise ConfigInvalid(
            f"{path}: unknown top-level keys {unknown}; expected a subset of "
            f"{sorted(_TOP_LEVEL_KEYS)}")

    kind = doc.get("kind")
    if not isinstance(kind, str) or not kind:
        raise ConfigInvalid(f"{path}: 'kind' must be a non-empty string")

    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigInvalid(f"{path}: 'seed' must be an integer")

    output_dir = doc.get("output_dir", kind)
    if not isinstance(output_dir, str) or not output_dir:
        raise ConfigInvalid(f"{path}: 'output_dir' must be a non-empty string")

    return ExperimentConfig(
        kind=kind,
        model=_check_table(doc, "model"),
        params=_check_table(doc, "params"),
        output_dir=output_dir,
        seed=seed,
        config_hash=hashlib.sha256(raw).hexdigest(),
        path=path,
    )


def load_config(path) -> ExperimentConfig:
    """Read and parse a config file; missing/unreadable files are ConfigInvalid."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
    return parse_config(raw, path=str(path))


def resolve_output_dir(cfg: ExperimentConfig, env=None) -> Path:
    """Output directory, honoring the MJSPECTRA_OUTPUT_ROOT override.

    Absolute output_dir wins; otherwise the path is joined under the env
    root (when set) or the current working directory.
    """
    env = os.environ if env is None else env
    out = Path(cfg.output_dir)
    if out.is_absolute():
        return out
    root = env.get(OUTPUT_ROOT_ENV)
    return (Path(root) / out) if root else out
