"""Free process, finite-volume loss network, and the exact G_Lambda oracles.

The free process is realised from a Poisson process of cylinders
``(cycle, birth, lifetime)`` with intensity ``w(cycle) dt e^{-s} ds``.  In a
finite box it is empty infinitely often; started from such an empty time the
loss network (births that overlap a living cycle are lost) reaches time 0 in
its stationary law ``G_Lambda``.
"""
from __future__ import annotations

import heapq
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import streams
from .errors import CatalogTooLarge, HorizonExceeded, NotEmptyAtStart, StateSpaceTooLarge
from .lattice import BoxRegion, CycleCatalog, Permutation, catalog_restrict


@dataclass(frozen=True, slots=True)
class CylinderPoint:
    """A birth attempt: ``cycle`` born at ``birth`` living ``lifetime``.

    ``boundary`` marks cylinders already alive at the start of a slab whose
    true birth (age) has not been drawn; ``birth`` then holds the slab start.
    """

    cycle: object
    birth: float
    lifetime: float
    boundary: bool = False

    @property
    def death(self) -> float:
        return self.birth + self.lifetime

    def alive_at(self, u: float) -> bool:
        return self.birth <= u < self.birth + self.lifetime

    def sort_key(self):
        return (self.birth, self.cycle)


@dataclass(frozen=True)
class FreeProcessSlab:
    """Free-process points of a finite catalog touching the window ``[t0, t1]``."""

    points: tuple
    window: tuple
    catalog: CycleCatalog
    seed: int
    keys: tuple = ()
    generation: int = 0

    def alive_at(self, u: float) -> list:
        return [p for p in self.points if p.alive_at(u)]

    def extend_back(self, new_t0: float) -> "FreeProcessSlab":
        """Extend the same realisation backwards to ``new_t0``.

        Going back in time, deaths of a cycle form a Poisson process of rate
        ``w`` with independent Exp(1) ages, and cylinders alive at the old
        start get an Exp(1) age by memorylessness.
        """
        t0, t1 = self.window
        if not new_t0 < t0:
            raise ValueError("new start must precede the current window")
        k = self.generation + 1
        g = streams.stream(self.seed, *self.keys, "slab", k)
        cycles = self.catalog.cycles
        w = np.asarray(self.catalog.cycle_weights, dtype=float)
        new_points = []
        for p in self.points:
            if p.boundary:
                age = float(g.exponential())
                new_points.append(CylinderPoint(p.cycle, t0 - age, p.lifetime + age))
            else:
                new_points.append(p)
        span = t0 - new_t0
        counts = g.poisson(w * span)
        total = int(counts.sum())
        deaths = t0 - span * g.random(total)
        ages = g.exponential(size=total)
        idx = np.repeat(np.arange(len(cycles)), counts)
        for i, e, a in zip(idx, deaths, ages):
            new_points.append(CylinderPoint(cycles[i], float(e - a), float(a)))
        new_points.sort(key=CylinderPoint.sort_key)
        return replace(self, points=tuple(new_points), window=(new_t0, t1), generation=k)


def sample_free_slab(
    catalog: CycleCatalog, window: Sequence[float], seed: int = 0, keys: tuple = ()
) -> FreeProcessSlab:
    """Stationary free process on ``window`` for a finite (restricted) catalog.

    Per cycle: Poisson(w (t1 - t0)) births uniform in the window with Exp(1)
    lifetimes, plus Poisson(w) cylinders already alive at ``t0`` with Exp(1)
    residual lifetimes.  One stream per ``(seed, keys, slab generation)``.
    """
    t0, t1 = float(window[0]), float(window[1])
    if not t1 > t0:
        raise ValueError("window must have positive length")
    g = streams.stream(seed, *keys, "slab", 0)
    cycles = catalog.cycles
    w = np.asarray(catalog.cycle_weights, dtype=float)
    counts = g.poisson(w * (t1 - t0))
    total = int(counts.sum())
    births = t0 + (t1 - t0) * g.random(total)
    lives = g.exponential(size=total)
    idx = np.repeat(np.arange(len(cycles)), counts)
    pts = [CylinderPoint(cycles[i], float(b), float(s)) for i, b, s in zip(idx, births, lives)]
    bcounts = g.poisson(w)
    btotal = int(bcounts.sum())
    bidx = np.repeat(np.arange(len(cycles)), bcounts)
    for i, s in zip(bidx, g.exponential(size=btotal)):
        pts.append(CylinderPoint(cycles[i], t0, float(s), boundary=True))
    pts.sort(key=CylinderPoint.sort_key)
    return FreeProcessSlab(tuple(pts), (t0, t1), catalog, seed, tuple(keys))


def find_empty_time(slab: FreeProcessSlab, latest: bool = False) -> float | None:
    """A time in the window at which no free cylinder is alive.

    Returns the earliest such time by default, the latest with ``latest``.
    """
    t0, t1 = slab.window
    events = []
    alive = 0
    for p in slab.points:
        if p.birth <= t0 < p.death:
            alive += 1
        elif t0 < p.birth <= t1:
            events.append((p.birth, 1))
        else:
            continue
        if p.death <= t1:
            events.append((p.death, -1))
    found = t0 if alive == 0 else None
    if found is not None and not latest:
        return found
    events.sort()
    for t, delta in events:
        alive += delta
        if alive == 0:
            found = t
            if not latest:
                return found
    return found


@dataclass(frozen=True)
class LossNetworkState:
    present: frozenset
    clock: float


@dataclass
class Trajectory:
    """Event log of a loss-network run: ``(time, kind, cycle)`` tuples."""

    start: float
    events: list = field(default_factory=list)
    accepted: list = field(default_factory=list)
    final: LossNetworkState | None = None

    def state_at(self, t: float) -> LossNetworkState:
        present = set()
        for time, kind, cycle in self.events:
            if time > t:
                break
            if kind == "birth":
                present.add(cycle)
            elif kind == "death":
                present.discard(cycle)
        return LossNetworkState(frozenset(present), t)


def forward_loss_network(
    points: FreeProcessSlab | Iterable[CylinderPoint], u_start: float, t_end: float | None = None
) -> Trajectory:
    """Run the loss network from an empty state at ``u_start``.

    Points are taken in birth order (ties by cycle); a point becomes a real
    cylinder iff its support misses every living accepted cycle.
    """
    if isinstance(points, FreeProcessSlab):
        if t_end is None:
            t_end = points.window[1]
        points = points.points
    if t_end is None:
        t_end = math.inf
    pts = list(points)
    for p in pts:
        if p.birth <= u_start < p.death:
            raise NotEmptyAtStart(f"{p} is alive at the start time {u_start}")
    pts = sorted((p for p in pts if u_start < p.birth <= t_end), key=CylinderPoint.sort_key)
    traj = Trajectory(u_start)
    occupied: dict = {}
    deaths: list = []
    order = 0
    for p in pts:
        while deaths and deaths[0][0] <= p.birth:
            t, _, c = heapq.heappop(deaths)
            for s in c.sites:
                del occupied[s]
            traj.events.append((t, "death", c))
        if any(s in occupied for s in p.cycle.sites):
            traj.events.append((p.birth, "lost", p.cycle))
            continue
        for s in p.cycle.sites:
            occupied[s] = p.cycle
        traj.accepted.append(p)
        traj.events.append((p.birth, "birth", p.cycle))
        heapq.heappush(deaths, (p.death, order, p.cycle))
        order += 1
    while deaths and deaths[0][0] <= t_end:
        t, _, c = heapq.heappop(deaths)
        for s in c.sites:
            del occupied[s]
        traj.events.append((t, "death", c))
    present = frozenset(c for _, _, c in deaths)
    traj.final = LossNetworkState(present, t_end)
    return traj


def stationary_slab(
    catalog: CycleCatalog,
    seed: int,
    keys: tuple = (),
    initial_window: float = 1.0,
    horizon: float = 2.0 ** 16,
) -> tuple[FreeProcessSlab, float]:
    """Free process on ``[-T, 0]`` doubled backwards until it has an empty time.

    Returns the slab and its latest empty time.
    """
    T = float(initial_window)
    slab = sample_free_slab(catalog, (-T, 0.0), seed, keys)
    while True:
        u = find_empty_time(slab, latest=True)
        if u is not None:
            return slab, u
        if 2 * T > horizon:
            raise HorizonExceeded(f"no empty time found within {T} time units")
        slab = slab.extend_back(-2 * T)
        T *= 2


def _restricted(region: BoxRegion, catalog: CycleCatalog, alpha, max_cycles: int) -> CycleCatalog:
    if alpha is not None and abs(catalog.alpha - alpha) > 1e-12 * alpha:
        raise ValueError(f"catalog was built at alpha={catalog.alpha}, not {alpha}")
    if not region.is_finite:
        raise ValueError("finite-volume sampling needs a finite box")
    cat = catalog_restrict(catalog, region)
    if len(cat.cycles) > max_cycles:
        raise CatalogTooLarge(f"{len(cat.cycles)} cycles in {region} exceed {max_cycles}")
    return cat


def sample_G_Lambda_exact(
    region: BoxRegion,
    catalog: CycleCatalog,
    alpha: float | None = None,
    seed: int = 0,
    replica: int = 0,
    initial_window: float = 1.0,
    horizon: float = 2.0 ** 16,
    max_cycles: int = 100_000,
) -> Permutation:
    """Exact draw from ``G_Lambda`` by regeneration at an empty time."""
    cat = _restricted(region, catalog, alpha, max_cycles)
    if not cat.cycles:
        return Permutation(frozenset(), region)
    slab, u = stationary_slab(cat, seed, ("finite", replica), initial_window, horizon)
    traj = forward_loss_network(slab.points, u, 0.0)
    return Permutation(traj.final.present, region)


@dataclass(frozen=True)
class GibbsTable:
    states: tuple
    weights: tuple
    Z: float
    cycles: tuple = ()
    cycle_weights: tuple = ()

    @property
    def probabilities(self) -> np.ndarray:
        return np.array(self.weights) / self.Z

    def as_dict(self) -> dict:
        return {s: w / self.Z for s, w in zip(self.states, self.weights)}

    def prob(self, state) -> float:
        return self.as_dict().get(frozenset(state), 0.0)

    def __len__(self) -> int:
        return len(self.states)


def enumerate_G_Lambda(
    region: BoxRegion,
    catalog: CycleCatalog,
    alpha: float | None = None,
    max_states: int = 1_000_000,
) -> GibbsTable:
    """All compatible cycle gases in ``region`` with their probabilities."""
    cat = _restricted(region, catalog, alpha, 10 ** 9)
    cycles = cat.cycles
    weights = cat.cycle_weights
    states, ws = [], []
    chosen: list = []
    occupied: set = set()

    def rec(i: int, w: float):
        if i == len(cycles):
            states.append(frozenset(chosen))
            ws.append(w)
            if len(states) > max_states:
                raise StateSpaceTooLarge(f"more than {max_states} states in {region}")
            return
        rec(i + 1, w)
        c = cycles[i]
        if not any(s in occupied for s in c.sites):
            chosen.append(c)
            occupied.update(c.sites)
            rec(i + 1, w * weights[i])
            chosen.pop()
            occupied.difference_update(c.sites)

    rec(0, 1.0)
    Z = math.fsum(ws)
    return GibbsTable(tuple(states), tuple(ws), Z, tuple(cycles), tuple(weights))


def detailed_balance_check(table: GibbsTable, catalog: CycleCatalog | None = None) -> float:
    """Max of ``|G(eta) w(gamma) - G(eta + gamma)|`` over compatible additions."""
    if catalog is not None:
        cycles = catalog.cycles
        weights = catalog.cycle_weights
    else:
        cycles, weights = table.cycles, table.cycle_weights
    probs = table.as_dict()
    worst = 0.0
    for eta, p in probs.items():
        occupied = set()
        for c in eta:
            occupied.update(c.sites)
        for c, w in zip(cycles, weights):
            if any(s in occupied for s in c.sites):
                continue
            q = probs.get(eta | {c}, 0.0)
            worst = max(worst, abs(p * w - q))
    return worst


def tv_distance(samples: Iterable, table: GibbsTable) -> float:
    """Total variation between the empirical law of ``samples`` and ``table``."""
    counts = Counter(
        s.cycles if isinstance(s, Permutation) else frozenset(s) for s in samples
    )
    n = sum(counts.values())
    probs = table.as_dict()
    keys = set(probs) | set(counts)
    return 0.5 * math.fsum(abs(counts.get(k, 0) / n - probs.get(k, 0.0)) for k in keys)
