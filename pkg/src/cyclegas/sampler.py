"""Infinite-volume perfect sampling by the backward clan of ancestors.

A cylinder ``theta`` is an ancestor of ``phi`` when their cycles overlap and
``theta`` is alive at the birth of ``phi``.  Starting from the cylinders alive
at time 0 that meet the window, ancestors are explored backwards in time; in
the subcritical regime this terminates.  Then the clan is classified forward
in time: a node is kept iff none of its ancestors is kept, which is the loss
network run on the clan.

The free process is realised lazily: each query (a set of sites at a time q)
draws only the part of its wedge ``{b < q < b + s}`` not covered by earlier
queries.
"""
from __future__ import annotations

import enum
import heapq
import math
from collections import defaultdict, deque
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from . import bounds, streams
from .dynamics import CylinderPoint, forward_loss_network, stationary_slab
from .errors import (
    ClanCapExceeded,
    HaloCapExceeded,
    NotCertifiedSubcritical,
    UnlabeledNode,
)
from .lattice import BoxRegion, CycleCatalog, Permutation, catalog_restrict

DEFAULT_MAX_NODES = 200_000
DEFAULT_HALO_CAP = 256


class Label(enum.Enum):
    KEPT = "K"
    DELETED = "D"
    UNLABELED = "?"


# -- realisations of the free process ---------------------------------------


class LazyField:
    """Poisson cylinders drawn on demand, one wedge difference at a time.

    ``queried[x]`` holds the query times already processed at site ``x``; a
    cylinder ``(theta, b, e)`` lies in the explored region iff some site of
    ``theta`` has a processed time strictly inside ``(b, e)``.
    """

    def __init__(self, catalog: CycleCatalog, rng: np.random.Generator):
        self.catalog = catalog
        self.rng = rng
        self.points: list[CylinderPoint] = []
        self.by_site: dict = defaultdict(list)
        self.queried: dict = defaultdict(list)
        self._cycles, _, self._cum = catalog.origin_table
        self._mass = float(self._cum[-1]) if len(self._cum) else 0.0
        self._region = catalog.region if catalog.region.is_finite else None

    def _explored(self, cycle, b: float, e: float) -> bool:
        for x in cycle.sites:
            for q in self.queried.get(x, ()):
                if b < q < e:
                    return True
        return False

    def query(self, sites: Iterable, q: float) -> list[CylinderPoint]:
        sites = sorted(set(sites))
        site_set = set(sites)
        found = {}
        for x in sites:
            for p in self.by_site.get(x, ()):
                if p.birth < q < p.death:
                    found[id(p)] = p
        if self._mass > 0:
            rng = self.rng
            counts = rng.poisson(self._mass, len(sites))
            total = int(counts.sum())
            if total:
                u = rng.random(total) * self._mass
                idx = np.searchsorted(self._cum, u, side="right")
                ages = rng.exponential(size=total)
                residuals = rng.exponential(size=total)
                owners = np.repeat(np.arange(len(sites)), counts)
                for k in range(total):
                    x = sites[owners[k]]
                    theta = self._cycles[min(idx[k], len(self._cycles) - 1)].translate(x)
                    # each theta is drawn through every site it shares with the query;
                    # keep it only from the smallest one
                    if min(s for s in theta.sites if s in site_set) != x:
                        continue
                    if self._region is not None and not self._region.contains_cycle(theta):
                        continue
                    b, e = q - float(ages[k]), q + float(residuals[k])
                    if self._explored(theta, b, e):
                        continue
                    p = CylinderPoint(theta, b, e - b)
                    self.points.append(p)
                    for s in theta.sites:
                        self.by_site[s].append(p)
                    found[id(p)] = p
        for x in sites:
            self.queried[x].append(q)
        return sorted(found.values(), key=CylinderPoint.sort_key)


class SlabField:
    """Lookups into an already materialised set of cylinders."""

    def __init__(self, points: Iterable[CylinderPoint]):
        self.points = list(points)
        self.by_site: dict = defaultdict(list)
        for p in self.points:
            for s in p.cycle.sites:
                self.by_site[s].append(p)

    def query(self, sites: Iterable, q: float) -> list[CylinderPoint]:
        found = {}
        for x in sites:
            for p in self.by_site.get(x, ()):
                if p.birth < q < p.death:
                    found[id(p)] = p
        return sorted(found.values(), key=CylinderPoint.sort_key)


# -- clans ---------------------------------------------------------------------


@dataclass(frozen=True)
class ClanStats:
    size: int
    roots: int
    generations: tuple  # number of nodes per generation
    weighted_generations: tuple  # sum of |gamma| per generation
    max_depth: int
    radius: int


@dataclass(frozen=True)
class Clan:
    """Nodes, first-generation ancestor lists (indices), roots, labels."""

    nodes: tuple
    ancestors: tuple
    roots: tuple
    labels: tuple | None = None
    window: BoxRegion | None = None

    def __len__(self) -> int:
        return len(self.nodes)

    def generation_of(self) -> list:
        gen = [-1] * len(self.nodes)
        queue = deque()
        for r in self.roots:
            gen[r] = 0
            queue.append(r)
        while queue:
            i = queue.popleft()
            for j in self.ancestors[i]:
                if gen[j] < 0:
                    gen[j] = gen[i] + 1
                    queue.append(j)
        return gen

    def stats(self) -> ClanStats:
        gen = self.generation_of()
        depth = max(gen, default=-1)
        counts = [0] * (depth + 1)
        weighted = [0] * (depth + 1)
        for i, g in enumerate(gen):
            if g >= 0:
                counts[g] += 1
                weighted[g] += len(self.nodes[i].cycle)
        radius = 0
        if self.window is not None and self.window.is_finite:
            for p in self.nodes:
                for s in p.cycle.sites:
                    radius = max(radius, self.window.distance(s))
        return ClanStats(len(self.nodes), len(self.roots), tuple(counts), tuple(weighted), depth, radius)

    def support_box(self) -> BoxRegion | None:
        sites = [s for p in self.nodes for s in p.cycle.sites]
        if not sites:
            return None
        d = len(sites[0])
        return BoxRegion(
            tuple(min(s[k] for s in sites) for k in range(d)),
            tuple(max(s[k] for s in sites) for k in range(d)),
        )

    def kept_roots(self) -> list:
        if self.labels is None:
            raise UnlabeledNode("clan has not been classified")
        return [self.nodes[r] for r in self.roots if self.labels[r] is Label.KEPT]


def clan_from_points(points: Sequence[CylinderPoint], roots: Sequence[int], window=None) -> Clan:
    """Clan with ancestor edges computed from the definition by direct scan."""
    points = list(points)
    anc = []
    for p in points:
        row = [
            j
            for j, o in enumerate(points)
            if o.birth < p.birth < o.death and not p.cycle.support.isdisjoint(o.cycle.support)
        ]
        anc.append(tuple(row))
    return Clan(tuple(points), tuple(anc), tuple(roots), None, window)


@lru_cache(maxsize=32)
def _certificate(catalog: CycleCatalog) -> bounds.Certificate:
    return bounds.certify(catalog)


def check_certificate(catalog: CycleCatalog, override: bool = False) -> bounds.Certificate:
    """Certificate for ``catalog``; raises unless subcritical or overridden."""
    cert = _certificate(catalog)
    if not cert.subcritical and not override:
        raise NotCertifiedSubcritical(
            f"beta upper bound {cert.beta_upper:.6g} ({cert.method}) is not below 1 "
            f"at alpha={catalog.alpha}"
        )
    return cert


def build_clan(
    window: BoxRegion,
    catalog: CycleCatalog,
    alpha: float | None = None,
    seed: int = 0,
    replica: int = 0,
    field_=None,
    override: bool = False,
    max_nodes: int = DEFAULT_MAX_NODES,
    halo_cap: int = DEFAULT_HALO_CAP,
) -> Clan:
    """Backward exploration of the clan of the cylinders alive at 0 meeting ``window``.

    Uses a fresh :class:`LazyField` keyed by ``(seed, replica)`` unless a
    field is passed in.
    """
    if alpha is not None and abs(catalog.alpha - alpha) > 1e-12 * alpha:
        raise ValueError(f"catalog was built at alpha={catalog.alpha}, not {alpha}")
    if not window.is_finite:
        raise ValueError("the window must be a finite box")
    if field_ is None:
        check_certificate(catalog, override)
        field_ = LazyField(catalog, streams.stream(seed, "clan", replica))
    roots = field_.query(window.sites(), 0.0)
    nodes: list = []
    index: dict = {}
    ancestors: list = []
    heap: list = []

    def add(p: CylinderPoint) -> int:
        i = index.get(id(p))
        if i is not None:
            return i
        if len(nodes) >= max_nodes:
            raise ClanCapExceeded(f"clan exceeded {max_nodes} nodes")
        for s in p.cycle.sites:
            if window.distance(s) > halo_cap:
                raise HaloCapExceeded(f"clan reached distance {halo_cap} from the window")
        i = len(nodes)
        index[id(p)] = i
        nodes.append(p)
        ancestors.append(())
        heapq.heappush(heap, (-p.birth, i))
        return i

    root_idx = tuple(add(p) for p in roots)
    while heap:
        _, i = heapq.heappop(heap)
        p = nodes[i]
        found = field_.query(p.cycle.sites, p.birth)
        ancestors[i] = tuple(add(o) for o in found)
    return Clan(tuple(nodes), tuple(ancestors), root_idx, None, window)


def classify(clan: Clan, always_kept: Iterable[int] = ()) -> Clan:
    """Label nodes oldest first: kept iff no ancestor is kept.

    ``always_kept`` nodes are kept whatever their ancestors (initial
    cylinders of a prescribed configuration).
    """
    forced = set(always_kept)
    order = sorted(range(len(clan.nodes)), key=lambda i: clan.nodes[i].sort_key())
    labels = [Label.UNLABELED] * len(clan.nodes)
    for i in order:
        if i in forced:
            labels[i] = Label.KEPT
            continue
        state = Label.KEPT
        for j in clan.ancestors[i]:
            lj = labels[j]
            if lj is Label.UNLABELED:
                raise UnlabeledNode(f"ancestor {j} of node {i} is not older than it")
            if lj is Label.KEPT:
                state = Label.DELETED
                break
        labels[i] = state
    return replace(clan, labels=tuple(labels))


def subclan(clan: Clan, keep: Sequence[bool]) -> Clan:
    """Clan induced on the nodes flagged in ``keep``."""
    new_index = {}
    nodes = []
    for i, k in enumerate(keep):
        if k:
            new_index[i] = len(nodes)
            nodes.append(clan.nodes[i])
    anc = tuple(
        tuple(new_index[j] for j in clan.ancestors[i] if j in new_index) for i in new_index
    )
    roots = tuple(new_index[r] for r in clan.roots if r in new_index)
    return Clan(tuple(nodes), anc, roots, None, clan.window)


def window_cycles(clan: Clan, window: BoxRegion) -> frozenset:
    """Kept roots whose support meets ``window``."""
    return frozenset(p.cycle for p in clan.kept_roots() if window.meets(p.cycle))


# -- window samples ------------------------------------------------------------


@dataclass(frozen=True)
class WindowSample:
    window: BoxRegion
    permutation: Permutation
    clan_stats: ClanStats
    shift: tuple | None = None

    def __call__(self, x) -> tuple:
        """The sampled map at ``x``: ``zeta(x) + v`` (``v = 0`` without shift)."""
        y = self.permutation(tuple(x))
        if self.shift is None:
            return y
        return tuple(a + b for a, b in zip(y, self.shift))

    def jumps(self) -> np.ndarray:
        sites = self.window.sites()
        return np.array([[a - b for a, b in zip(self(x), x)] for x in sites], dtype=float)


def sample_mu_window(
    window: BoxRegion,
    catalog: CycleCatalog,
    alpha: float | None = None,
    seed: int = 0,
    replica: int = 0,
    override: bool = False,
    **caps,
) -> WindowSample:
    clan = classify(build_clan(window, catalog, alpha, seed, replica, override=override, **caps))
    perm = Permutation(window_cycles(clan, window))
    return WindowSample(window, perm, clan.stats())


def sample_mu_v_window(
    window: BoxRegion,
    v: Sequence[int],
    catalog_v: CycleCatalog,
    alpha: float | None = None,
    seed: int = 0,
    replica: int = 0,
    override: bool = False,
    **caps,
) -> WindowSample:
    """Finite-cycle gas ``zeta`` under the shifted weights; the sample is ``zeta + v``.

    ``catalog_v`` must be built from the shifted potential so that the
    certificate is for ``beta_v``.
    """
    v = tuple(int(c) for c in v)
    pot_v = catalog_v.potential
    if pot_v is not None and any(v):
        if tuple(pot_v.shift or (0,) * len(v)) != v:
            raise ValueError(f"catalog potential is shifted by {pot_v.shift}, not {v}")
    sample = sample_mu_window(window, catalog_v, alpha, seed, replica, override, **caps)
    return replace(sample, shift=v if any(v) else None)


# -- couplings -----------------------------------------------------------------


@dataclass(frozen=True)
class CouplingReport:
    boxes: tuple
    disagreements: tuple  # per box, count over replicas
    contains_clan: tuple  # per box, count of replicas whose clan support fits
    replicas: int

    @property
    def probabilities(self) -> list:
        return [k / self.replicas for k in self.disagreements]

    @property
    def standard_errors(self) -> list:
        n = self.replicas
        return [math.sqrt(max(p * (1 - p), 1 / n) / n) for p in self.probabilities]


def restricted_window_answer(clan: Clan, window: BoxRegion, box: BoxRegion) -> frozenset:
    """Kept window cycles of the process whose cylinders are restricted to ``box``."""
    sub = classify(subclan(clan, [box.contains_cycle(p.cycle) for p in clan.nodes]))
    return window_cycles(sub, window)


def thermodynamic_coupling(
    window: BoxRegion,
    boxes: Sequence[BoxRegion],
    catalog: CycleCatalog,
    alpha: float | None = None,
    seed: int = 0,
    replicas: int = 1000,
    override: bool = False,
    **caps,
) -> CouplingReport:
    """Disagreement on ``window`` between each finite box and Z^d, one clan per replica."""
    dis = [0] * len(boxes)
    fits = [0] * len(boxes)
    for r in range(replicas):
        clan = classify(build_clan(window, catalog, alpha, seed, r, override=override, **caps))
        full = window_cycles(clan, window)
        support = clan.support_box()
        for k, box in enumerate(boxes):
            if support is None or box.intersect(support) == support:
                fits[k] += 1
            if restricted_window_answer(clan, window, box) != full:
                dis[k] += 1
    return CouplingReport(tuple(boxes), tuple(dis), tuple(fits), replicas)


@dataclass(frozen=True)
class UniquenessResult:
    stationary: frozenset
    coupled: frozenset

    @property
    def disagree(self) -> bool:
        return self.stationary != self.coupled

    @property
    def n_different(self) -> int:
        return len(self.stationary ^ self.coupled)


def uniqueness_forward_coupling(
    eta_prime: Permutation,
    t_back: float,
    window: BoxRegion,
    catalog: CycleCatalog,
    alpha: float | None = None,
    seed: int = 0,
    replica: int = 0,
    override: bool = False,
    clan: Clan | None = None,
    **caps,
) -> UniquenessResult:
    """Start the loss network from ``eta_prime`` at ``-t_back`` on the stationary points.

    The cylinders born after ``-t_back`` are those of the stationary clan;
    each cycle of ``eta_prime`` becomes an initial cylinder born at
    ``-t_back`` with an Exp(1) lifetime.  Compares the window at time 0.
    """
    if t_back < 0:
        raise ValueError("t_back must be non-negative")
    if clan is None:
        clan = build_clan(window, catalog, alpha, seed, replica, override=override, **caps)
    if clan.labels is None:
        clan = classify(clan)
    stationary = window_cycles(clan, window)
    t0 = -float(t_back)
    late = subclan(clan, [p.birth > t0 for p in clan.nodes])
    g = streams.stream(seed, "initial", replica)
    initial = [
        CylinderPoint(c, t0, float(g.exponential())) for c in eta_prime.sorted_cycles()
    ]
    n_late = len(late.nodes)
    nodes = late.nodes + tuple(initial)
    anc = list(late.ancestors)
    for i, p in enumerate(late.nodes):
        extra = tuple(
            n_late + k
            for k, q in enumerate(initial)
            if q.birth < p.birth < q.death and not p.cycle.support.isdisjoint(q.cycle.support)
        )
        anc[i] = anc[i] + extra
    anc.extend(() for _ in initial)
    combined = Clan(nodes, tuple(anc), late.roots, None, window)
    labelled = classify(combined, always_kept=range(n_late, n_late + len(initial)))
    coupled = {p.cycle for p in labelled.kept_roots() if window.meets(p.cycle)}
    coupled |= {q.cycle for q in initial if q.death > 0 and window.meets(q.cycle)}
    return UniquenessResult(stationary, frozenset(coupled))


# -- statistics ----------------------------------------------------------------


@dataclass(frozen=True)
class ClanSummary:
    replicas: int
    beta_upper: float
    sizes: np.ndarray
    depths: np.ndarray
    radii: np.ndarray
    weighted_generations: np.ndarray  # replicas x generations, sum of |gamma|

    @property
    def generation_means(self) -> np.ndarray:
        return self.weighted_generations.mean(axis=0)

    def generation_ratios(self) -> list[tuple[float, float]]:
        """``E[A_{n+1}] / E[A_n]`` with a delta-method standard error."""
        out = []
        W = self.weighted_generations
        n = len(W)
        for k in range(W.shape[1] - 1):
            x, y = W[:, k], W[:, k + 1]
            mx = x.mean()
            if mx == 0:
                break
            ratio = y.mean() / mx
            se = float(np.std(y - ratio * x, ddof=1) / (mx * math.sqrt(n))) if n > 1 else math.inf
            out.append((float(ratio), se))
        return out

    def size_histogram(self) -> dict:
        vals, counts = np.unique(self.sizes, return_counts=True)
        return {int(v): int(c) for v, c in zip(vals, counts)}


def clan_statistics(
    replicas: int,
    catalog: CycleCatalog,
    alpha: float | None = None,
    window: BoxRegion | None = None,
    seed: int = 0,
    **caps,
) -> ClanSummary:
    """Size, depth, radius and generation sizes of ``replicas`` independent clans."""
    cert = check_certificate(catalog)
    if window is None:
        window = BoxRegion.cube((0,) * catalog.dimension, 0)
    stats = [build_clan(window, catalog, alpha, seed, r, **caps).stats() for r in range(replicas)]
    depth = max((s.max_depth for s in stats), default=-1)
    W = np.zeros((replicas, max(depth + 1, 1)))
    for r, s in enumerate(stats):
        W[r, : len(s.weighted_generations)] = s.weighted_generations
    return ClanSummary(
        replicas,
        cert.beta_upper,
        np.array([s.size for s in stats]),
        np.array([s.max_depth for s in stats]),
        np.array([s.radius for s in stats]),
        W,
    )


# -- cross-validation against a materialised slab ------------------------------


@dataclass(frozen=True)
class CrossValidation:
    forward: frozenset
    clan: frozenset
    clan_size: int

    @property
    def agree(self) -> bool:
        return self.forward == self.clan


def slab_cross_validation(
    window: BoxRegion,
    box: BoxRegion,
    catalog: CycleCatalog,
    seed: int = 0,
    replica: int = 0,
    **slab_kwargs,
) -> CrossValidation:
    """Window at time 0 from the forward loss network and from the clan, same points.

    The free process of the cycles inside ``box`` is materialised back to an
    empty time ``u``; the loss network is run from ``u`` to 0, and the clan
    of the window is explored by lookups into the same points.
    """
    cat = catalog_restrict(catalog, box)
    slab, u = stationary_slab(cat, seed, ("xval", replica), **slab_kwargs)
    traj = forward_loss_network(slab.points, u, 0.0)
    forward = frozenset(c for c in traj.final.present if window.meets(c))
    pts = [p for p in slab.points if p.death > u]
    clan = classify(build_clan(window, cat, field_=SlabField(pts)))
    return CrossValidation(forward, window_cycles(clan, window), len(clan))
