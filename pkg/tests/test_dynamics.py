import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps

from cyclegas import dynamics as D, lattice as L
from cyclegas.errors import HorizonExceeded, NotEmptyAtStart, StateSpaceTooLarge

import oracles


def cyc(*sites):
    return L.canonicalize(sites)


def one_cycle_catalog(w):
    return L.CycleCatalog(
        dimension=1,
        classes=(cyc((0,), (1,)),),
        weights=(w,),
        cutoffs=L.Cutoffs(2, 1),
        alpha=1.0,
        tail_bound=0.0,
        region=L.BoxRegion((0,), (1,)),
    )


def empty_catalog():
    return L.CycleCatalog(1, (), (), L.Cutoffs(2, 1), 1.0, 0.0, region=L.BoxRegion((0,), (0,)))


# -- free process ------------------------------------------------------------------


def test_empty_catalog_gives_empty_slab():
    slab = D.sample_free_slab(empty_catalog(), (0.0, 5.0), seed=1)
    assert slab.points == ()
    assert D.find_empty_time(slab) == 0.0


def test_interior_birth_count_mean():
    cat = one_cycle_catalog(0.5)
    counts = [
        sum(not p.boundary for p in D.sample_free_slab(cat, (0, 10), seed=3, keys=(i,)).points)
        for i in range(10_000)
    ]
    mean = np.mean(counts)
    assert abs(mean - 5) < 3 * math.sqrt(5 / 10_000)


def test_alive_count_is_poisson_at_every_time():
    w = 0.7
    cat = one_cycle_catalog(w)
    n = 10_000
    for delta in (0.0, 0.4, 3.0):
        alive = np.array([
            len(D.sample_free_slab(cat, (0, 3), seed=5, keys=(i,)).alive_at(delta)) for i in range(n)
        ])
        kmax = 4
        obs = np.array([np.sum(alive == k) for k in range(kmax)] + [np.sum(alive >= kmax)])
        probs = np.array([sps.poisson.pmf(k, w) for k in range(kmax)] + [sps.poisson.sf(kmax - 1, w)])
        assert sps.chisquare(obs, n * probs).pvalue > 0.01


def test_extension_keeps_stationarity_and_realisation():
    cat = one_cycle_catalog(0.6)
    n = 10_000
    alive = []
    for i in range(n):
        slab = D.sample_free_slab(cat, (-1, 0), seed=9, keys=(i,))
        ext = slab.extend_back(-4)
        # inside the original window the realisation is unchanged
        assert sorted(p.cycle for p in slab.alive_at(-0.5)) == sorted(p.cycle for p in ext.alive_at(-0.5))
        assert all(p.death > -4 for p in ext.points)
        assert not any(p.boundary for p in ext.points)
        alive.append(len(ext.alive_at(-3.0)))
    alive = np.array(alive)
    obs = np.array([np.sum(alive == k) for k in range(3)] + [np.sum(alive >= 3)])
    probs = np.array([sps.poisson.pmf(k, 0.6) for k in range(3)] + [sps.poisson.sf(2, 0.6)])
    assert sps.chisquare(obs, n * probs).pvalue > 0.01


def test_extension_preserves_known_cylinders():
    cat = one_cycle_catalog(2.0)
    slab = D.sample_free_slab(cat, (-2, 0), seed=11)
    ext = slab.extend_back(-8)
    interior = {(p.birth, p.lifetime) for p in slab.points if not p.boundary}
    assert interior <= {(p.birth, p.lifetime) for p in ext.points}
    # boundary cylinders keep their death time
    deaths = sorted(p.death for p in slab.points if p.boundary)
    ext_deaths = sorted(p.death for p in ext.points if p.birth < -2 < p.death)
    assert np.allclose(deaths, ext_deaths)


def test_find_empty_time():
    cat = one_cycle_catalog(1.0)
    c = cat.classes[0]
    covering = D.FreeProcessSlab((D.CylinderPoint(c, -1.0, 10.0),), (0.0, 5.0), cat, 0)
    assert D.find_empty_time(covering) is None
    pts = (D.CylinderPoint(c, 0.0, 1.0, True), D.CylinderPoint(c, 2.0, 1.0), D.CylinderPoint(c, 3.5, 0.5))
    slab = D.FreeProcessSlab(pts, (0.0, 5.0), cat, 0)
    assert D.find_empty_time(slab) == 1.0
    assert D.find_empty_time(slab, latest=True) == 4.0


def test_slabs_are_deterministic():
    cat = one_cycle_catalog(0.8)
    a = D.sample_free_slab(cat, (-3, 0), seed=4, keys=("x", 2)).extend_back(-6)
    b = D.sample_free_slab(cat, (-3, 0), seed=4, keys=("x", 2)).extend_back(-6)
    assert a.points == b.points
    c = D.sample_free_slab(cat, (-3, 0), seed=5, keys=("x", 2))
    assert c.points != a.points


# -- loss network ------------------------------------------------------------------


def test_loss_network_rejects_overlap_born_while_alive():
    a, b = cyc((0,), (1,)), cyc((1,), (2,))
    pts = [D.CylinderPoint(a, 0.0, 2.0), D.CylinderPoint(b, 1.0, 2.0)]
    traj = D.forward_loss_network(pts, -1.0, 10.0)
    assert [p.cycle for p in traj.accepted] == [a]
    assert (1.0, "lost", b) in traj.events


def test_loss_network_accepts_after_death():
    a, b = cyc((0,), (1,)), cyc((1,), (2,))
    pts = [D.CylinderPoint(a, 0.0, 1.0), D.CylinderPoint(b, 1.5, 2.0)]
    traj = D.forward_loss_network(pts, -1.0, 10.0)
    assert [p.cycle for p in traj.accepted] == [a, b]
    assert traj.state_at(1.7).present == {b}
    assert traj.state_at(0.5).present == {a}


def test_loss_network_equals_free_process_without_conflicts():
    cs = [cyc((2 * k,), (2 * k + 1,)) for k in range(5)]
    rng = np.random.default_rng(0)
    pts = [D.CylinderPoint(c, float(rng.uniform(0, 5)), float(rng.exponential())) for c in cs for _ in range(1)]
    traj = D.forward_loss_network(pts, -1.0, 3.0)
    assert traj.final.present == {p.cycle for p in pts if p.alive_at(3.0)}


def test_loss_network_requires_empty_start():
    a = cyc((0,), (1,))
    with pytest.raises(NotEmptyAtStart):
        D.forward_loss_network([D.CylinderPoint(a, 0.0, 2.0)], 1.0, 3.0)


intervals = st.lists(
    st.tuples(st.integers(0, 6), st.integers(1, 3), st.floats(0, 10), st.floats(0.01, 4)),
    min_size=1, max_size=25,
)


@settings(max_examples=60)
@given(intervals)
def test_trajectory_legality(raw):
    pts = [D.CylinderPoint(L.canonicalize([(a + k,) for k in range(n + 1)]), b, s) for a, n, b, s in raw]
    traj = D.forward_loss_network(pts, -1.0, 20.0)
    alive = {}
    for t, kind, c in traj.events:
        if kind == "birth":
            assert all(L.compatible(c, o) for o in alive)
            alive[c] = alive.get(c, 0) + 1
        elif kind == "death":
            alive[c] -= 1
            if not alive[c]:
                del alive[c]
    for p in traj.accepted:
        assert (p.death, "death", p.cycle) in traj.events


# -- G_Lambda ----------------------------------------------------------------------


def test_single_site_is_identity(gauss2_a1):
    box = L.BoxRegion((0, 0), (0, 0))
    assert D.sample_G_Lambda_exact(box, gauss2_a1, seed=1).is_identity
    assert len(D.enumerate_G_Lambda(box, gauss2_a1)) == 1


def test_two_site_table(gauss1_a1):
    box = L.BoxRegion((0,), (1,))
    t = D.enumerate_G_Lambda(box, gauss1_a1, alpha=1.0)
    assert len(t) == 2
    p = math.exp(-2) / (1 + math.exp(-2))
    assert t.prob({cyc((0,), (1,))}) == pytest.approx(p, rel=1e-14)
    assert D.detailed_balance_check(t) <= 1e-14


def test_two_site_sampler_frequency(gauss1_a1):
    box = L.BoxRegion((0,), (1,))
    n = 20_000
    hits = sum(not D.sample_G_Lambda_exact(box, gauss1_a1, seed=2, replica=i).is_identity for i in range(n))
    p = math.exp(-2) / (1 + math.exp(-2))
    assert abs(hits / n - p) < 3 * math.sqrt(p * (1 - p) / n)


def test_two_by_two_table_matches_permutation_brute_force(gauss2_a1):
    box = L.BoxRegion((0, 0), (1, 1))
    t = D.enumerate_G_Lambda(box, gauss2_a1)
    brute = oracles.gibbs_by_permutations(box.sites(), 4, math.sqrt(2), oracles.sq, 1.0)
    ours = {frozenset(c.sites for c in s): p for s, p in t.as_dict().items()}
    assert set(ours) == set(brute)
    for k in brute:
        assert ours[k] == pytest.approx(brute[k], rel=1e-12)
    assert math.fsum(t.probabilities) == pytest.approx(1, abs=1e-12)


@pytest.mark.parametrize(
    "box",
    [L.BoxRegion((0, 0), (1, 1)), L.BoxRegion((0, 0), (2, 1)), L.BoxRegion((0, 0), (2, 2))],
)
def test_detailed_balance(gauss2_a1, box):
    t = D.enumerate_G_Lambda(box, gauss2_a1)
    assert D.detailed_balance_check(t) <= 1e-10


def test_detailed_balance_detects_perturbation(gauss2_a1):
    t = D.enumerate_G_Lambda(L.BoxRegion((0, 0), (1, 1)), gauss2_a1)
    ws = list(t.weights)
    ws[1] += 1e-3 * t.Z
    bad = D.GibbsTable(t.states, tuple(ws), t.Z, t.cycles, t.cycle_weights)
    assert D.detailed_balance_check(bad) >= 1e-4


def test_state_space_cap(gauss2_a1):
    with pytest.raises(StateSpaceTooLarge):
        D.enumerate_G_Lambda(L.BoxRegion((0, 0), (2, 2)), gauss2_a1, max_states=10)


def test_horizon_cap(gauss2_a1):
    with pytest.raises(HorizonExceeded):
        D.sample_G_Lambda_exact(L.BoxRegion((0, 0), (5, 5)), gauss2_a1, seed=0, horizon=1.0)


def test_exact_sampler_law_on_small_box(gauss2_a1):
    box = L.BoxRegion((0, 0), (1, 1))
    t = D.enumerate_G_Lambda(box, gauss2_a1)
    draws = [D.sample_G_Lambda_exact(box, gauss2_a1, seed=7, replica=i) for i in range(10_000)]
    for d in draws[:200]:
        assert all(box.contains_cycle(c) for c in d.cycles)
    # TV of an empirical law from the truth has mean about sum sqrt(p/n); keep a margin
    assert D.tv_distance(draws, t) < 0.05


def test_exact_sampler_deterministic(gauss2_a1):
    box = L.BoxRegion((0, 0), (1, 1))
    a = [D.sample_G_Lambda_exact(box, gauss2_a1, seed=3, replica=i) for i in range(50)]
    b = [D.sample_G_Lambda_exact(box, gauss2_a1, seed=3, replica=i) for i in range(50)]
    assert a == b
    assert len(Counter(p.cycles for p in a)) > 1
