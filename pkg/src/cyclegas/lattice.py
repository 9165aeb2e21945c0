"""Sites, cycles, cycle gases, boxes and the truncated cycle catalog.

Sites are plain integer tuples.  A :class:`Cycle` stores its orbit with the
lexicographically smallest site first; orientation is kept, so a cycle of
length >= 3 and its reversal are different cycles.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import potentials as pot
from .errors import CatalogTooLarge, DuplicateSite, TooShort

Site = tuple


@dataclass(frozen=True, order=True)
class Cycle:
    sites: tuple
    canonical: bool = field(default=True, compare=False)

    def __len__(self) -> int:
        return len(self.sites)

    def __iter__(self):
        return iter(self.sites)

    @cached_property
    def support(self) -> frozenset:
        return frozenset(self.sites)

    @property
    def dimension(self) -> int:
        return len(self.sites[0])

    def image(self, x: Site) -> Site:
        i = self.sites.index(x)
        return self.sites[(i + 1) % len(self.sites)]

    def mapping(self) -> dict:
        n = len(self.sites)
        return {self.sites[i]: self.sites[(i + 1) % n] for i in range(n)}

    def jumps(self) -> list:
        return pot.jumps(self.sites)

    def translate(self, offset: Sequence[int]) -> "Cycle":
        # Translation preserves lexicographic order, so the result is canonical.
        return Cycle(tuple(tuple(a + b for a, b in zip(s, offset)) for s in self.sites))

    def reversed(self) -> "Cycle":
        return canonicalize(self.sites[::-1])

    def anchored(self) -> tuple["Cycle", Site]:
        """Translate so the first site is the origin; also return the offset."""
        first = self.sites[0]
        return self.translate(tuple(-c for c in first)), first

    def __str__(self) -> str:
        return " ".join(",".join(map(str, s)) for s in self.sites)


def canonicalize(raw_cycle: Iterable[Sequence[int]]) -> Cycle:
    """Rotate the orbit so its lexicographic minimum comes first."""
    sites = [tuple(int(c) for c in s) for s in raw_cycle]
    if len(sites) < 2:
        raise TooShort(f"a cycle needs at least 2 sites, got {len(sites)}")
    if len(set(sites)) != len(sites):
        raise DuplicateSite(f"repeated site in {sites}")
    dims = {len(s) for s in sites}
    if len(dims) != 1:
        raise ValueError("sites of mixed dimension")
    i = sites.index(min(sites))
    return Cycle(tuple(sites[i:] + sites[:i]))


def support(cycle: Cycle) -> frozenset:
    return cycle.support


def compatible(gamma: Cycle, theta: Cycle) -> bool:
    """True iff the supports are disjoint (so no cycle is compatible with itself)."""
    if len(gamma) > len(theta):
        gamma, theta = theta, gamma
    other = theta.support
    return not any(s in other for s in gamma.sites)


@dataclass(frozen=True)
class BoxRegion:
    """Finite box ``lower <= x <= upper`` (inclusive), or all of Z^d."""

    lower: Site | None = None
    upper: Site | None = None

    def __post_init__(self):
        if (self.lower is None) != (self.upper is None):
            raise ValueError("give both corners or neither")
        if self.lower is not None:
            if len(self.lower) != len(self.upper):
                raise ValueError("corner dimensions differ")
            if any(a > b for a, b in zip(self.lower, self.upper)):
                raise ValueError(f"lower {self.lower} exceeds upper {self.upper}")

    @classmethod
    def all_of_zd(cls) -> "BoxRegion":
        return cls()

    @classmethod
    def cube(cls, center: Sequence[int], radius: int) -> "BoxRegion":
        return cls(tuple(c - radius for c in center), tuple(c + radius for c in center))

    @classmethod
    def from_corners(cls, lower: Sequence[int], upper: Sequence[int]) -> "BoxRegion":
        return cls(tuple(int(c) for c in lower), tuple(int(c) for c in upper))

    @property
    def is_finite(self) -> bool:
        return self.lower is not None

    @property
    def dimension(self) -> int | None:
        return None if self.lower is None else len(self.lower)

    def __contains__(self, x) -> bool:
        if self.lower is None:
            return True
        return all(a <= c <= b for a, c, b in zip(self.lower, x, self.upper))

    def contains_cycle(self, cycle: Cycle) -> bool:
        return all(s in self for s in cycle.sites)

    def meets(self, cycle: Cycle) -> bool:
        return any(s in self for s in cycle.sites)

    def sites(self) -> list:
        if self.lower is None:
            raise ValueError("Z^d has infinitely many sites")
        ranges = [range(a, b + 1) for a, b in zip(self.lower, self.upper)]
        return [tuple(x) for x in itertools.product(*ranges)]

    def __len__(self) -> int:
        if self.lower is None:
            raise ValueError("Z^d has infinitely many sites")
        return math.prod(b - a + 1 for a, b in zip(self.lower, self.upper))

    def intersect(self, other: "BoxRegion") -> "BoxRegion | None":
        if not other.is_finite:
            return self
        if not self.is_finite:
            return other
        lo = tuple(max(a, b) for a, b in zip(self.lower, other.lower))
        hi = tuple(min(a, b) for a, b in zip(self.upper, other.upper))
        if any(a > b for a, b in zip(lo, hi)):
            return None
        return BoxRegion(lo, hi)

    def expand(self, margin: int) -> "BoxRegion":
        if not self.is_finite:
            return self
        return BoxRegion(
            tuple(c - margin for c in self.lower), tuple(c + margin for c in self.upper)
        )

    def translate(self, offset: Sequence[int]) -> "BoxRegion":
        if not self.is_finite:
            return self
        return BoxRegion(
            tuple(a + b for a, b in zip(self.lower, offset)),
            tuple(a + b for a, b in zip(self.upper, offset)),
        )

    def distance(self, x: Site) -> int:
        """Sup-norm distance from ``x`` to the box (0 inside)."""
        if self.lower is None:
            return 0
        return max(max(a - c, c - b, 0) for a, c, b in zip(self.lower, x, self.upper))

    def __str__(self) -> str:
        if self.lower is None:
            return "Z^d"
        return f"[{','.join(map(str, self.lower))}]..[{','.join(map(str, self.upper))}]"


@dataclass(frozen=True)
class Permutation:
    """A finite-cycle permutation stored as its gas of disjoint cycles."""

    cycles: frozenset = frozenset()
    region: BoxRegion | None = None

    def __post_init__(self):
        seen = set()
        for c in self.cycles:
            for s in c.sites:
                if s in seen:
                    raise ValueError(f"cycles overlap at site {s}")
                seen.add(s)
            if self.region is not None and not self.region.contains_cycle(c):
                raise ValueError(f"cycle {c} leaves region {self.region}")

    @property
    def is_identity(self) -> bool:
        return not self.cycles

    @cached_property
    def _map(self) -> dict:
        out = {}
        for c in self.cycles:
            out.update(c.mapping())
        return out

    def __call__(self, x: Site) -> Site:
        return self._map.get(tuple(x), tuple(x))

    def cycle_of(self, x: Site) -> Cycle | None:
        for c in self.cycles:
            if x in c.support:
                return c
        return None

    def moved_sites(self) -> set:
        return set(self._map)

    def sorted_cycles(self) -> list:
        return sorted(self.cycles)


@dataclass(frozen=True)
class Cutoffs:
    """Truncation of the cycle space: length, single-jump norm, weight."""

    l_max: int
    r_max: float
    w_min: float = 0.0

    def __post_init__(self):
        if self.l_max < 2:
            raise ValueError("l_max must be at least 2")
        if not self.r_max > 0:
            raise ValueError("r_max must be positive")
        if not 0 <= self.w_min < 1:
            raise ValueError("w_min must lie in [0, 1)")

    def as_dict(self) -> dict:
        return {"l_max": self.l_max, "r_max": self.r_max, "w_min": self.w_min}


@dataclass(frozen=True, eq=False)
class CycleCatalog:
    """Truncated set of admissible cycles with their weights.

    Cycles are stored once per translation class (anchored with the origin
    as first site).  ``region`` selects which translates belong to the
    catalog: all of Z^d, or those with support inside a finite box.
    """

    dimension: int
    classes: tuple
    weights: tuple
    cutoffs: Cutoffs
    alpha: float
    tail_bound: float
    potential: pot.PotentialSpec | None = None
    potential_id: str = ""
    region: BoxRegion = BoxRegion()
    energies: tuple | None = None

    def __len__(self) -> int:
        if self.region.is_finite:
            return len(self.cycles)
        return len(self.classes)

    @cached_property
    def class_weight(self) -> dict:
        return dict(zip(self.classes, self.weights))

    def weight_of(self, cycle: Cycle) -> float:
        anchored, _ = cycle.anchored()
        return self.class_weight.get(anchored, 0.0)

    def __contains__(self, cycle: Cycle) -> bool:
        return self.region.contains_cycle(cycle) and cycle.anchored()[0] in self.class_weight

    @cached_property
    def through_origin(self) -> list:
        """Every catalog cycle (any translate) whose support holds the origin."""
        origin = tuple(0 for _ in range(self.dimension))
        out = []
        for c, w in zip(self.classes, self.weights):
            for s in c.sites:
                t = c.translate(tuple(-a for a in s))
                out.append((t, w))
        out.sort(key=lambda cw: cw[0])
        assert all(origin in c.support for c, _ in out)
        return out

    @cached_property
    def origin_table(self):
        """Arrays for fast sampling of cycles through the origin by weight."""
        cyc = [c for c, _ in self.through_origin]
        w = np.array([w for _, w in self.through_origin], dtype=float)
        cum = np.cumsum(w)
        return cyc, w, cum

    @property
    def origin_mass(self) -> float:
        """Sum of w over cycles through the origin."""
        return float(math.fsum(w for _, w in self.through_origin))

    @cached_property
    def cycles(self) -> list:
        """Explicit list of cycles in a finite region, in canonical order."""
        if not self.region.is_finite:
            raise ValueError("an unrestricted catalog has infinitely many cycles")
        lo, hi = self.region.lower, self.region.upper
        out = []
        for c in self.classes:
            mins = [min(s[k] for s in c.sites) for k in range(self.dimension)]
            maxs = [max(s[k] for s in c.sites) for k in range(self.dimension)]
            ranges = [range(lo[k] - mins[k], hi[k] - maxs[k] + 1) for k in range(self.dimension)]
            for t in itertools.product(*ranges):
                out.append(c.translate(t))
        out.sort()
        return out

    @cached_property
    def cycle_weights(self) -> list:
        cw = self.class_weight
        return [cw[c.anchored()[0]] for c in self.cycles]

    def items(self) -> list:
        return list(zip(self.cycles, self.cycle_weights))


def _validate_potential(potential: pot.PotentialSpec, dimension: int) -> None:
    if potential.dimension != dimension:
        raise ValueError("potential dimension does not match d")


def enumerate_cycles(
    dimension: int,
    cutoffs: Cutoffs,
    potential: pot.PotentialSpec,
    alpha: float,
    max_classes: int = 500_000,
    tail: bool = True,
) -> CycleCatalog:
    """All canonical cycles within the cutoffs, one per translation class.

    A cycle whose lexicographic minimum is the origin is the orbit of a
    self-avoiding closed walk from the origin that only visits sites
    lexicographically above it, so a depth-first search over such walks
    lists every class exactly once.
    """
    _validate_potential(potential, dimension)
    if not alpha > 0:
        from .errors import NonPositiveAlpha

        raise NonPositiveAlpha(f"alpha must be positive, got {alpha}")
    L, R = cutoffs.l_max, cutoffs.r_max
    steps = pot.jump_set(potential, R)
    step_energy = {y: pot.evaluate(potential, y) for y in steps}
    step_set = set(steps)
    origin = tuple(0 for _ in range(dimension))
    nonneg = not potential.is_shifted
    e_max = math.inf
    if cutoffs.w_min > 0 and nonneg:
        e_max = -math.log(cutoffs.w_min) / alpha

    classes, weights, energies = [], [], []
    path = [origin]
    on_path = {origin}

    def close(energy_so_far: float):
        last = path[-1]
        back = tuple(-c for c in last)
        if back not in step_set:
            return
        energy = energy_so_far + step_energy[back]
        w = math.exp(-alpha * energy)
        if w <= 0.0 or w < cutoffs.w_min:
            return
        # Energy is recomputed in canonical order for bit-stable weights.
        cyc = Cycle(tuple(path))
        energy = pot.cycle_energy(potential, cyc)
        w = math.exp(-alpha * energy)
        if w <= 0.0 or w < cutoffs.w_min:
            return
        classes.append(cyc)
        weights.append(w)
        energies.append(energy)
        if len(classes) > max_classes:
            raise CatalogTooLarge(f"more than {max_classes} cycle classes")

    def extend(energy_so_far: float):
        k = len(path) - 1
        if len(path) >= 2:
            close(energy_so_far)
        if len(path) == L:
            return
        last = path[-1]
        for y in steps:
            nxt = tuple(a + b for a, b in zip(last, y))
            if nxt <= origin or nxt in on_path:
                continue
            e = energy_so_far + step_energy[y]
            if nonneg and e > e_max:
                continue
            remaining = L - (k + 1)
            if sum(c * c for c in nxt) > (remaining * R) ** 2 + 1e-9:
                continue
            path.append(nxt)
            on_path.add(nxt)
            extend(e)
            path.pop()
            on_path.discard(nxt)

    extend(0)
    order = sorted(range(len(classes)), key=lambda i: classes[i])
    classes = tuple(classes[i] for i in order)
    weights = tuple(weights[i] for i in order)
    energies = tuple(energies[i] for i in order)
    tail_bound = math.nan
    if tail:
        from .bounds import catalog_tail_bound
        from .errors import DivergentSeries

        try:
            tail_bound = catalog_tail_bound(potential, alpha, cutoffs)
        except DivergentSeries:
            # supercritical jump series: nothing certifies the excluded mass
            tail_bound = math.inf
    return CycleCatalog(
        dimension=dimension,
        classes=classes,
        weights=weights,
        cutoffs=cutoffs,
        alpha=float(alpha),
        tail_bound=tail_bound,
        potential=potential,
        potential_id=potential.identifier,
        energies=energies,
    )


def catalog_restrict(catalog: CycleCatalog, region: BoxRegion) -> CycleCatalog:
    """Keep only the translates whose support lies inside ``region``."""
    if region.is_finite and region.dimension != catalog.dimension:
        raise ValueError("region dimension mismatch")
    new_region = catalog.region.intersect(region)
    classes, weights, energies = catalog.classes, catalog.weights, catalog.energies
    if new_region is None:
        # Disjoint boxes: keep the requested box but drop every class.
        new_region, classes, weights, energies = region, (), (), ()
    return CycleCatalog(
        catalog.dimension,
        classes,
        weights,
        catalog.cutoffs,
        catalog.alpha,
        catalog.tail_bound,
        catalog.potential,
        catalog.potential_id,
        new_region,
        energies,
    )


# -- text format -------------------------------------------------------------

FORMAT_TAG = "cyclegas-catalog v1"


def format_cycle_line(cycle: Cycle, w: float) -> str:
    return f"{cycle} {float(w).hex()}"


def parse_cycle_line(line: str) -> tuple[Cycle, float]:
    parts = line.split()
    w = float.fromhex(parts[-1])
    sites = [tuple(int(c) for c in tok.split(",")) for tok in parts[:-1]]
    return canonicalize(sites), w


def write_catalog(catalog: CycleCatalog, path: str | Path) -> None:
    c = catalog.cutoffs
    lines = [
        f"# {FORMAT_TAG}",
        f"# dimension: {catalog.dimension}",
        f"# potential: {catalog.potential_id}",
        f"# alpha: {float(catalog.alpha).hex()}",
        f"# l_max: {c.l_max}",
        f"# r_max: {float(c.r_max).hex()}",
        f"# w_min: {float(c.w_min).hex()}",
        f"# tail_bound: {float(catalog.tail_bound).hex()}",
        f"# classes: {len(catalog.classes)}",
    ]
    lines += [format_cycle_line(cy, w) for cy, w in zip(catalog.classes, catalog.weights)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_catalog(path: str | Path, potential: pot.PotentialSpec | None = None) -> CycleCatalog:
    header, classes, weights = {}, [], []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            if val:
                header[key.strip()] = val.strip()
            continue
        cyc, w = parse_cycle_line(line)
        classes.append(cyc.anchored()[0])
        weights.append(w)
    pid = header.get("potential", "")
    if potential is not None and potential.identifier != pid:
        raise ValueError(f"catalog was built for {pid}, not {potential.identifier}")
    cutoffs = Cutoffs(
        int(header["l_max"]),
        float.fromhex(header["r_max"]),
        float.fromhex(header["w_min"]),
    )
    return CycleCatalog(
        dimension=int(header["dimension"]),
        classes=tuple(classes),
        weights=tuple(weights),
        cutoffs=cutoffs,
        alpha=float.fromhex(header["alpha"]),
        tail_bound=float.fromhex(header["tail_bound"]),
        potential=potential,
        potential_id=pid,
    )
