"""Lattice potentials, their shifted forms, and cycle weights.

A potential maps a lattice displacement ``y`` to an energy in
``[0, +inf]`` with ``V(0) == 0``.  Cycle weights are
``exp(-alpha * sum_x V(gamma(x) - x))``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Sequence

from .errors import NonPositiveAlpha, NotConvex

Site = tuple  # tuple[int, ...]

KINDS = ("gaussian", "power", "nearest_neighbor", "table")


@dataclass(frozen=True)
class PotentialSpec:
    """An immutable description of ``V`` (optionally shifted by ``v``).

    ``scale`` multiplies the base potential, so ``gaussian(d, scale=2)`` is
    ``V(x) = 2 ||x||^2``.  With ``shift`` set the spec evaluates
    ``V(y + v) - V(v)``.
    """

    kind: str
    dimension: int
    power: int | None = None
    table: tuple = field(default=(), repr=False)
    scale: float = 1
    shift: Site | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if self.kind == "power":
            if self.power is None or self.power < 2 or self.power % 2:
                raise ValueError("power-law potentials need an even integer p >= 2")
        if self.shift is not None and len(self.shift) != self.dimension:
            raise ValueError("shift dimension mismatch")

    @property
    def is_shifted(self) -> bool:
        return self.shift is not None and any(self.shift)

    @property
    def base(self) -> "PotentialSpec":
        return replace(self, shift=None)

    @property
    def finite_support(self) -> bool:
        return self.kind in ("nearest_neighbor", "table")

    @property
    def identifier(self) -> str:
        """Stable human-readable id used in file headers and provenance."""
        if self.kind == "gaussian":
            core = f"gaussian(d={self.dimension})"
        elif self.kind == "power":
            core = f"power(d={self.dimension},p={self.power})"
        elif self.kind == "nearest_neighbor":
            core = f"nearest_neighbor(d={self.dimension})"
        else:
            rows = ";".join(
                ",".join(map(str, x)) + "=" + float(val).hex() for x, val in self.table
            )
            core = f"table(d={self.dimension},{rows})"
        if self.scale != 1:
            core = f"{float(self.scale)!r}*{core}"
        if self.is_shifted:
            core += "|shift=" + ",".join(map(str, self.shift))
        return core

    def support_sites(self) -> list[Site]:
        """Displacements with finite energy for finite-range potentials."""
        if self.kind == "nearest_neighbor":
            sites = [tuple(0 for _ in range(self.dimension))]
            for k in range(self.dimension):
                for sgn in (1, -1):
                    e = [0] * self.dimension
                    e[k] = sgn
                    sites.append(tuple(e))
        elif self.kind == "table":
            sites = [x for x, _ in self.table]
        else:
            raise ValueError("support_sites only applies to finite-range potentials")
        if self.is_shifted:
            v = self.shift
            sites = [tuple(a - b for a, b in zip(x, v)) for x in sites]
        return sites


def gaussian(dimension: int, scale: float = 1) -> PotentialSpec:
    return PotentialSpec("gaussian", dimension, scale=scale)


def power_law(dimension: int, p: int, scale: float = 1) -> PotentialSpec:
    if p == 2:
        return gaussian(dimension, scale)
    return PotentialSpec("power", dimension, power=p, scale=scale)


def nearest_neighbor(dimension: int, scale: float = 1) -> PotentialSpec:
    return PotentialSpec("nearest_neighbor", dimension, scale=scale)


def table_potential(dimension: int, values: Mapping[Site, float]) -> PotentialSpec:
    """Finite-support potential, ``+inf`` off the support.

    Convexity is checked with the midpoint inequality on every equally
    spaced triple ``x, x+h, x+2h`` whose endpoints are in the support.
    """
    rows = {}
    for x, val in values.items():
        x = tuple(int(c) for c in x)
        if len(x) != dimension:
            raise ValueError(f"site {x} has wrong dimension")
        val = float(val)
        if not (val >= 0) or math.isinf(val):
            raise ValueError(f"table value at {x} must be finite and >= 0")
        rows[x] = val
    origin = tuple(0 for _ in range(dimension))
    if rows.get(origin) != 0:
        raise ValueError("table potentials need V(0) = 0")
    _check_midpoint_convexity(rows)
    return PotentialSpec("table", dimension, table=tuple(sorted(rows.items())))


def _check_midpoint_convexity(rows: dict) -> None:
    for x, z in itertools.combinations(rows, 2):
        diff = [b - a for a, b in zip(x, z)]
        if any(c % 2 for c in diff):
            continue
        mid = tuple(a + c // 2 for a, c in zip(x, diff))
        if mid not in rows:
            raise NotConvex(f"midpoint {mid} of {x} and {z} lies off the support")
        if not 2 * rows[mid] < rows[x] + rows[z]:
            raise NotConvex(f"midpoint inequality fails at {x}, {mid}, {z}")


def load_table(path: str | Path, dimension: int) -> PotentialSpec:
    """Read rows of ``x_1 ... x_d value``; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != dimension + 1:
            raise ValueError(f"{path}:{lineno}: expected {dimension + 1} columns")
        values[tuple(int(p) for p in parts[:-1])] = float(parts[-1])
    return table_potential(dimension, values)


def _base_value(V: PotentialSpec, x: Sequence[int]) -> float:
    if V.kind == "gaussian":
        return V.scale * sum(c * c for c in x)
    if V.kind == "power":
        return V.scale * sum(c * c for c in x) ** (V.power // 2)
    if V.kind == "nearest_neighbor":
        n2 = sum(c * c for c in x)
        if n2 == 0:
            return 0
        return V.scale if n2 == 1 else math.inf
    return _table_dict(V.table, V.scale).get(tuple(x), math.inf)


@lru_cache(maxsize=64)
def _table_dict(table: tuple, scale: float) -> dict:
    return {x: scale * val for x, val in table}


def evaluate(V: PotentialSpec, x: Sequence[int]) -> float:
    if len(x) != V.dimension:
        raise ValueError(f"site {tuple(x)} does not match dimension {V.dimension}")
    if not V.is_shifted:
        return _base_value(V, x)
    v = V.shift
    return _base_value(V, [a + b for a, b in zip(x, v)]) - _base_value(V, v)


def shifted(V: PotentialSpec, v: Sequence[int]) -> PotentialSpec:
    """``V_v(y) = V(y + v) - V(v)``; shifts compose additively."""
    v = tuple(int(c) for c in v)
    if len(v) != V.dimension:
        raise ValueError("shift dimension mismatch")
    if V.shift is not None:
        v = tuple(a + b for a, b in zip(V.shift, v))
    if math.isinf(_base_value(V, v)):
        raise ValueError(f"V({v}) is infinite; the shifted potential is undefined")
    return replace(V, shift=v if any(v) else None)


def jumps(cycle_sites: Sequence[Site]) -> list[Site]:
    """Displacements ``gamma(x) - x`` in canonical site order."""
    n = len(cycle_sites)
    return [
        tuple(b - a for a, b in zip(cycle_sites[i], cycle_sites[(i + 1) % n]))
        for i in range(n)
    ]


def cycle_energy(V: PotentialSpec, cycle) -> float:
    sites = getattr(cycle, "sites", cycle)
    total = 0
    for y in jumps(sites):
        total += evaluate(V, y)
    return total


def _check_alpha(alpha: float) -> None:
    if not alpha > 0:
        raise NonPositiveAlpha(f"alpha must be positive, got {alpha}")


def weight(V: PotentialSpec, alpha: float, cycle) -> float:
    _check_alpha(alpha)
    energy = cycle_energy(V, cycle)
    if math.isinf(energy):
        return 0.0
    return math.exp(-alpha * energy)


def weight_v(V: PotentialSpec, alpha: float, v: Sequence[int], cycle) -> float:
    return weight(shifted(V, v), alpha, cycle)


def strong_convexity_modulus(V: PotentialSpec, v: Sequence[int] | None = None) -> float | None:
    """Constant ``m`` with ``V(y) >= V(x) + grad V(x).(y-x) + m ||y-x||^2``.

    Only quadratic potentials have one that this package can certify; the
    value does not depend on ``v`` for them.
    """
    if V.kind == "gaussian":
        return float(V.scale)
    return None


def jump_set(V: PotentialSpec, r_max: float) -> list[Site]:
    """Nonzero displacements with finite energy and Euclidean norm <= r_max."""
    d = V.dimension
    r2 = r_max * r_max + 1e-9
    bound = int(math.floor(r_max + 1e-9))
    out = []
    for y in itertools.product(range(-bound, bound + 1), repeat=d):
        if not any(y):
            continue
        if sum(c * c for c in y) > r2:
            continue
        if math.isinf(evaluate(V, y)):
            continue
        out.append(y)
    return out
