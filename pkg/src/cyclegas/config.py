"""Run configuration: YAML file, command-line overrides, validation.

Schema (all keys optional; defaults in ``DEFAULTS``)::

    dimension: 2
    potential: {kind: gaussian, scale: 1.0, power: null, table: null}
    alpha: 3.0
    alphas: [2.5, 3.0, 4.0]        # beta-vs-alpha curve (bounds)
    shift: [0, 0]                  # v of the shifted ground state
    window: {lower: [-1, -1], upper: [1, 1]}
    box: {lower: [0, 0], upper: [1, 1]}       # Lambda for oracle / sample-finite
    coupling_radii: [3, 5, 7, 9]   # nested boxes around the window
    cutoffs: {l_max: 4, r_max: 1.4142135623730951, w_min: 0.0}
    replicas: 1000
    seed: 0
    workers: 1
    allow_uncertified: false
    compare_oracle: false
    max_clan_nodes: 200000
    halo_cap: 256
    samples_file: null             # input of the stats command
    output_dir: null               # default: $CYCLEGAS_OUTPUT_DIR or ./cyclegas-out
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import yaml

from . import potentials as pot
from .errors import ConfigInvalid
from .lattice import BoxRegion, Cutoffs

OUTPUT_ENV = "CYCLEGAS_OUTPUT_DIR"

DEFAULTS = {
    "dimension": 2,
    "potential": {"kind": "gaussian", "scale": 1.0, "power": None, "table": None},
    "alpha": 3.0,
    "alphas": None,
    "shift": None,
    "window": None,
    "box": None,
    "coupling_radii": None,
    "cutoffs": {"l_max": 4, "r_max": math.sqrt(2), "w_min": 0.0},
    "replicas": 1000,
    "seed": 0,
    "workers": 1,
    "allow_uncertified": False,
    "compare_oracle": False,
    "max_clan_nodes": 200_000,
    "halo_cap": 256,
    "samples_file": None,
    "output_dir": None,
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_yaml(path: str | Path) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigInvalid(f"config {path} must be a mapping")
    unknown = set(data) - set(DEFAULTS)
    if unknown:
        raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
    return data


def _box(spec, d: int, name: str) -> BoxRegion | None:
    if spec is None:
        return None
    try:
        lo, hi = spec["lower"], spec["upper"]
        box = BoxRegion.from_corners(lo, hi)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigInvalid(f"{name}: expected {{lower: [...], upper: [...]}} ({exc})") from exc
    if box.dimension != d:
        raise ConfigInvalid(f"{name} has dimension {box.dimension}, expected {d}")
    return box


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration plus the raw mapping it came from."""

    raw: dict
    dimension: int
    potential: pot.PotentialSpec
    alpha: float
    alphas: tuple
    shift: tuple
    window: BoxRegion | None
    box: BoxRegion | None
    coupling_radii: tuple
    cutoffs: Cutoffs
    replicas: int
    seed: int
    workers: int
    allow_uncertified: bool
    compare_oracle: bool
    max_clan_nodes: int
    halo_cap: int
    samples_file: str | None
    output_dir: Path

    @property
    def config_hash(self) -> str:
        # where results go and how many processes make them do not change them
        relevant = {k: v for k, v in self.raw.items() if k not in ("output_dir", "workers")}
        blob = json.dumps(relevant, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def dump(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=True)


def build_config(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    raw = _merge(DEFAULTS, file_values or {})
    raw = _merge(raw, {k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        d = int(raw["dimension"])
        if d < 1:
            raise ConfigInvalid("dimension must be >= 1")
        p = raw["potential"] or {}
        kind = p.get("kind", "gaussian")
        scale = float(p.get("scale") or 1.0)
        if kind == "gaussian":
            V = pot.gaussian(d, scale)
        elif kind == "power":
            V = pot.power_law(d, int(p["power"]), scale)
        elif kind == "nearest_neighbor":
            V = pot.nearest_neighbor(d, scale)
        elif kind == "table":
            if not p.get("table"):
                raise ConfigInvalid("table potentials need potential.table: <path>")
            V = pot.load_table(p["table"], d)
        else:
            raise ConfigInvalid(f"unknown potential kind {kind!r}")
        alpha = float(raw["alpha"])
        if not alpha > 0:
            raise ConfigInvalid(f"alpha must be positive, got {alpha}")
        alphas = tuple(float(a) for a in (raw["alphas"] or ()))
        if any(not a > 0 for a in alphas):
            raise ConfigInvalid("every alpha in alphas must be positive")
        shift = tuple(int(c) for c in (raw["shift"] or (0,) * d))
        if len(shift) != d:
            raise ConfigInvalid(f"shift must have {d} components")
        c = raw["cutoffs"]
        cutoffs = Cutoffs(int(c["l_max"]), float(c["r_max"]), float(c.get("w_min") or 0.0))
        radii = tuple(int(r) for r in (raw["coupling_radii"] or ()))
        if any(r < 0 for r in radii):
            raise ConfigInvalid("coupling radii must be non-negative")
        replicas = int(raw["replicas"])
        if replicas < 1:
            raise ConfigInvalid("replicas must be >= 1")
        seed = int(raw["seed"])
        if seed < 0:
            raise ConfigInvalid("seed must be non-negative")
        workers = int(raw["workers"])
        if workers < 1:
            raise ConfigInvalid("workers must be >= 1")
        out = raw["output_dir"] or os.environ.get(OUTPUT_ENV) or "cyclegas-out"
        return RunConfig(
            raw=raw,
            dimension=d,
            potential=V,
            alpha=alpha,
            alphas=alphas,
            shift=shift,
            window=_box(raw["window"], d, "window"),
            box=_box(raw["box"], d, "box"),
            coupling_radii=radii,
            cutoffs=cutoffs,
            replicas=replicas,
            seed=seed,
            workers=workers,
            allow_uncertified=bool(raw["allow_uncertified"]),
            compare_oracle=bool(raw["compare_oracle"]),
            max_clan_nodes=int(raw["max_clan_nodes"]),
            halo_cap=int(raw["halo_cap"]),
            samples_file=raw["samples_file"],
            output_dir=Path(out),
        )
    except ConfigInvalid:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigInvalid(str(exc)) from exc
