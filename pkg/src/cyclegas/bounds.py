"""Subcriticality bounds: rho, rho_0, beta intervals and alpha* upper bounds.

Everything here rests on one domination: a cycle through the origin is a
closed self-avoiding walk, and dropping self-avoidance bounds the total
weight of length-``n`` cycles by ``rho**n`` where ``rho`` is the summed
single-jump weight.  Hence ``beta <= sum_{n>=2} n rho**n``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

from . import potentials as pot
from .errors import (
    DivergentSeries,
    NoFiniteBound,
    NoModulus,
    NonPositiveAlpha,
    RhoOutOfRange,
)

THETA_TAIL = 1e-15
MAX_THETA_TERMS = 10_000_000


@dataclass(frozen=True)
class BetaEstimate:
    truncated_sum: float
    tail_bound: float
    alpha: float
    cutoffs: object

    @property
    def upper(self) -> float:
        return self.truncated_sum + self.tail_bound

    @property
    def interval(self) -> tuple[float, float]:
        return self.truncated_sum, self.upper


@dataclass(frozen=True)
class AlphaStarBound:
    """Certified upper bound on alpha* (or alpha*_v for the shift method)."""

    value: float
    method: str
    lower_endpoint: float | None = None


@dataclass(frozen=True)
class Certificate:
    """Upper bound on beta that authorises a perfect-sampling run."""

    beta_upper: float
    method: str
    truncated_sum: float
    tail_bound: float

    @property
    def subcritical(self) -> bool:
        return self.beta_upper < 1


# -- rho ---------------------------------------------------------------------


def theta_1d(a: float) -> float:
    """``sum_{k in Z} exp(-a k^2)`` with a certified-negligible remainder."""
    if not a > 0:
        raise NonPositiveAlpha("theta sum needs a positive argument")
    q = math.exp(-a)
    # Remainder past K is at most 2 exp(-a (K+1)^2) / (1 - q).
    K = 0
    while 2 * math.exp(-a * (K + 1) ** 2) / (1 - q) >= THETA_TAIL:
        K += 1 if K < 64 else K // 2
        if K > MAX_THETA_TERMS:
            raise DivergentSeries(f"theta sum at a={a} needs more than {MAX_THETA_TERMS} terms")
    terms = [math.exp(-a * k * k) for k in range(K, 0, -1)]
    return 1 + 2 * math.fsum(terms)


def _shell_sites(d: int, k: int):
    """Lattice points with sup-norm exactly ``k``."""
    for x in itertools.product(range(-k, k + 1), repeat=d):
        if max(abs(c) for c in x) == k:
            yield x


def _power_rho(V: pot.PotentialSpec, alpha: float) -> float:
    d, p, c = V.dimension, V.power, V.scale
    total = []
    k = 0
    while True:
        k += 1
        total.extend(math.exp(-alpha * pot.evaluate(V, x)) for x in _shell_sites(d, k))
        # Points beyond shell k have ||x|| >= k + 1; shell j holds at most
        # 2d (2j+1)^(d-1) points.
        j = k + 1
        nxt = 2 * d * (2 * j + 1) ** (d - 1) * math.exp(-alpha * c * j ** p)
        ratio = ((2 * j + 3) / (2 * j + 1)) ** (d - 1) * math.exp(
            -alpha * c * ((j + 1) ** p - j ** p)
        )
        if ratio < 0.5 and nxt < THETA_TAIL:
            return math.fsum(total) + 2 * nxt
        if k > 100_000:
            raise DivergentSeries("power-law rho did not converge")


def rho(V: pot.PotentialSpec, alpha: float) -> float:
    """Summed jump weight ``sum_{x != 0} exp(-alpha V(x))``."""
    if not alpha > 0:
        raise NonPositiveAlpha(f"alpha must be positive, got {alpha}")
    if V.is_shifted:
        # sum_{y != 0} e^{-a(V(y+v) - V(v))} = e^{a V(v)} (rho(V) + 1) - 1
        base = V.base
        vv = pot.evaluate(base, V.shift)
        return math.exp(alpha * vv) * (rho(base, alpha) + 1) - 1
    if V.kind == "gaussian":
        return theta_1d(alpha * V.scale) ** V.dimension - 1
    if V.kind == "power":
        return _power_rho(V, alpha)
    return math.fsum(
        math.exp(-alpha * pot.evaluate(V, x)) for x in V.support_sites() if any(x)
    )


def rho_within(V: pot.PotentialSpec, alpha: float, r_max: float) -> float:
    """Jump weight restricted to ``0 < ||x|| <= r_max``."""
    return math.fsum(math.exp(-alpha * pot.evaluate(V, y)) for y in pot.jump_set(V, r_max))


def rho_beyond(V: pot.PotentialSpec, alpha: float, r_max: float) -> float:
    """Upper bound on the jump weight with ``||x|| > r_max``."""
    if V.finite_support:
        r2 = r_max * r_max + 1e-9
        return math.fsum(
            math.exp(-alpha * pot.evaluate(V, x))
            for x in V.support_sites()
            if sum(c * c for c in x) > r2 and not math.isinf(pot.evaluate(V, x))
        )
    total = rho(V, alpha)
    inner = rho_within(V, alpha, r_max)
    # Cancellation slack keeps the result an upper bound.
    return max(total - inner, 0.0) + 4e-16 * (total + 1)


def rho0(tol: float = 1e-12) -> float:
    """Root in [0, 1] of ``r/(1-r)^2 - r = 1`` by bisection."""

    def f(r):
        return r / (1 - r) ** 2 - r - 1

    lo, hi = 0.0, 0.9
    while True:
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) < tol or hi - lo < 1e-16:
            return mid
        if fm < 0:
            lo = mid
        else:
            hi = mid


RHO0 = rho0()


def beta_upper_from_rho(r: float) -> float:
    if not 0 <= r < 1:
        raise RhoOutOfRange(f"rho must lie in [0, 1), got {r}")
    return r / (1 - r) ** 2 - r


def _tail_n_rho(r: float, L: int) -> float:
    """``sum_{n > L} n r^n``."""
    return r ** (L + 1) * ((L + 1) - L * r) / (1 - r) ** 2


# -- catalog tails -----------------------------------------------------------


def dominating_potential(V: pot.PotentialSpec) -> pot.PotentialSpec:
    """Potential whose jump weights dominate the cycle weights of ``V``.

    Shifted potentials with a strong-convexity modulus ``m`` are dominated
    jump by jump by ``m ||y||^2``; anything else dominates itself.
    """
    if V.is_shifted:
        m = pot.strong_convexity_modulus(V.base, V.shift)
        if m is not None:
            return pot.gaussian(V.dimension, scale=m)
    return V


def catalog_tail_bound(V: pot.PotentialSpec, alpha: float, cutoffs) -> float:
    """Upper bound on ``sum |gamma| w(gamma)`` over excluded cycles through 0.

    Three excluded families: length above ``l_max``; some jump longer than
    ``r_max``; weight below ``w_min``.  Each is dominated with the jump
    series of :func:`dominating_potential`.
    """
    dom = dominating_potential(V)
    L = cutoffs.l_max
    r = rho(dom, alpha)
    if not r < 1:
        raise DivergentSeries(f"rho = {r} >= 1 at alpha = {alpha}: tail is not summable")
    total = _tail_n_rho(r, L)
    r_out = rho_beyond(dom, alpha, cutoffs.r_max)
    if r_out > 0:
        total += math.fsum(n * n * r_out * r ** (n - 1) for n in range(2, L + 1))
    if cutoffs.w_min > 0:
        r_half = rho(dom, alpha / 2)
        total += math.sqrt(cutoffs.w_min) * math.fsum(n * r_half ** n for n in range(2, L + 1))
    return total


def beta_truncated(V: pot.PotentialSpec, alpha: float, catalog) -> BetaEstimate:
    """``beta`` over the catalog plus a certified bound on what it omits."""
    if abs(catalog.alpha - alpha) > 1e-12 * alpha:
        raise ValueError(f"catalog was built at alpha={catalog.alpha}, not {alpha}")
    # Each class of length n has n translates through the origin.
    s = math.fsum(len(c) ** 2 * w for c, w in zip(catalog.classes, catalog.weights))
    tail = catalog.tail_bound
    if math.isnan(tail):
        tail = catalog_tail_bound(V, alpha, catalog.cutoffs)
    return BetaEstimate(s, tail, float(alpha), catalog.cutoffs)


def beta_from_energies(catalog, alpha: float, V: pot.PotentialSpec | None = None) -> BetaEstimate:
    """Re-weight a ``w_min = 0`` catalog at another ``alpha``."""
    if catalog.cutoffs.w_min > 0:
        raise ValueError("re-weighting needs a catalog built without a weight cutoff")
    V = V or catalog.potential
    s = math.fsum(
        len(c) ** 2 * math.exp(-alpha * e) for c, e in zip(catalog.classes, catalog.energies)
    )
    return BetaEstimate(s, catalog_tail_bound(V, alpha, catalog.cutoffs), float(alpha), catalog.cutoffs)


def certify(catalog, V: pot.PotentialSpec | None = None) -> Certificate:
    """Best available upper bound on beta for the catalog's model."""
    V = V or catalog.potential
    if V is None:
        raise ValueError("certification needs the potential")
    candidates = []
    try:
        est = beta_truncated(V, catalog.alpha, catalog)
        if math.isfinite(est.upper):
            candidates.append(Certificate(est.upper, "beta_truncated", est.truncated_sum, est.tail_bound))
    except DivergentSeries:
        est = None
    try:
        r = rho(dominating_potential(V), catalog.alpha)
        if r < 1:
            s = est.truncated_sum if est else math.nan
            candidates.append(Certificate(beta_upper_from_rho(r), "rho_bound", s, math.nan))
    except DivergentSeries:
        pass
    if not candidates:
        s = math.fsum(len(c) ** 2 * w for c, w in zip(catalog.classes, catalog.weights))
        return Certificate(math.inf, "none", s, math.inf)
    return min(candidates, key=lambda c: c.beta_upper)


# -- alpha* ------------------------------------------------------------------


def _bisect_decreasing(
    g: Callable[[float], float], target: float, tol: float, lo: float = 1e-3, hi: float = 1.0
) -> tuple[float, float]:
    """Bracket the crossing of a decreasing ``g`` through ``target``.

    Returns ``(lo, hi)`` with ``g(lo) > target >= g(hi)``.
    """

    def safe(a):
        try:
            return g(a)
        except DivergentSeries:
            return math.inf

    while safe(hi) > target:
        hi *= 2
        if hi > 1e8:
            raise NoFiniteBound("no alpha brings the function below its target")
    while safe(lo) <= target:
        lo /= 2
        if lo < 1e-12:
            return 0.0, lo
    while hi - lo > 1e-13 * hi:
        mid = 0.5 * (lo + hi)
        gm = safe(mid)
        if gm <= target:
            hi = mid
            if target - gm < tol:
                break
        else:
            lo = mid
    return lo, hi


def alpha_star_upper_rho(V: pot.PotentialSpec, tol: float = 1e-9) -> AlphaStarBound:
    """``inf{alpha : rho(V, alpha) <= rho_0}``, returned as its upper endpoint."""
    lo, hi = _bisect_decreasing(lambda a: rho(V, a), RHO0, tol)
    return AlphaStarBound(hi, "rho_root", lo)


def gaussian_alpha_star_explicit(d: int) -> AlphaStarBound:
    """Integral-comparison bound ``pi ((rho_0 + 1)^(1/d) - 1)^-2``."""
    if d < 1:
        raise ValueError("d must be >= 1")
    return AlphaStarBound(math.pi * ((RHO0 + 1) ** (1 / d) - 1) ** -2, "gaussian_explicit")


def alpha_star_upper_beta(catalog, V: pot.PotentialSpec | None = None, tol: float = 1e-9) -> AlphaStarBound:
    """Smallest alpha where truncated beta plus tail drops below 1."""
    V = V or catalog.potential
    lo, hi = _bisect_decreasing(lambda a: beta_from_energies(catalog, a, V).upper, 1.0, tol)
    return AlphaStarBound(hi, "beta_truncated", lo)


def alpha_star_shift_strongly_convex(V: pot.PotentialSpec, v=None) -> AlphaStarBound:
    """``alpha*_v(V) <= alpha*(||.||^2) / m(v)`` with the explicit Gaussian bound."""
    base = V.base if V.is_shifted else V
    m = pot.strong_convexity_modulus(base, v)
    if m is None:
        raise NoModulus(f"no strong-convexity modulus for {V.identifier}")
    return AlphaStarBound(
        gaussian_alpha_star_explicit(V.dimension).value / m, "strongly_convex_shift"
    )


# -- mean matrix -------------------------------------------------------------


class MeanMatrix:
    """Sparse mean matrix ``m(gamma, theta) = w(theta) 1{gamma, theta overlap}``.

    Types are ``(class_index, offset)`` pairs: the class representative
    translated by ``offset``.
    """

    def __init__(self, catalog):
        self.catalog = catalog
        self.classes = catalog.classes
        self.weights = catalog.weights
        self.index = {c: i for i, c in enumerate(self.classes)}
        self._rows: dict[int, list] = {}

    def type_of(self, cycle):
        anchored, offset = cycle.anchored()
        return self.index[anchored], offset

    def cycle_of(self, t):
        i, offset = t
        return self.classes[i].translate(offset)

    def _anchor_row(self, i: int) -> list:
        row = self._rows.get(i)
        if row is None:
            seen = set()
            for x in self.classes[i].sites:
                for j, c in enumerate(self.classes):
                    for s in c.sites:
                        seen.add((j, tuple(a - b for a, b in zip(x, s))))
            row = sorted(seen)
            self._rows[i] = row
        return row

    def row(self, t) -> dict:
        i, offset = t
        region = self.catalog.region
        out = {}
        for j, o in self._anchor_row(i):
            o2 = tuple(a + b for a, b in zip(o, offset))
            if region.is_finite and not region.contains_cycle(self.classes[j].translate(o2)):
                continue
            out[(j, o2)] = self.weights[j]
        return out


def mean_matrix_row(gamma, catalog, V=None, alpha=None) -> dict:
    """Row of the mean matrix keyed by cycle."""
    mm = MeanMatrix(catalog)
    row = mm.row(mm.type_of(gamma))
    return {mm.cycle_of(t): w for t, w in row.items()}


def branching_row_sums(gamma, catalog, V=None, alpha=None, n_max: int = 4) -> list[float]:
    """``sum_theta m^n(gamma, theta)`` for n = 1..n_max via sparse products."""
    mm = MeanMatrix(catalog)
    vec = {mm.type_of(gamma): 1.0}
    sums = []
    for _ in range(n_max):
        nxt: dict = {}
        for t, mass in vec.items():
            for u, w in mm.row(t).items():
                nxt[u] = nxt.get(u, 0.0) + mass * w
        vec = nxt
        sums.append(math.fsum(vec.values()))
    return sums
