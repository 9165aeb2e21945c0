import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cyclegas import bounds as B, dynamics as D, lattice as L, potentials as P, sampler as S
from cyclegas.errors import (
    ClanCapExceeded,
    HaloCapExceeded,
    NotCertifiedSubcritical,
    UnlabeledNode,
)
from cyclegas.streams import stream

K, Dl = S.Label.KEPT, S.Label.DELETED
W3 = L.BoxRegion((-1, -1), (1, 1))


def interval(a, b):
    """Cycle a -> a+1 -> ... -> b on the line (coordinates already scaled)."""
    return L.canonicalize([(x,) for x in range(a, b + 1)])


def rect(x, y):
    """Cylinder drawn as a rectangle: x-extent = support, y = time running into the past."""
    x0, x1 = (round(10 * v) for v in x)
    y0, y1 = y
    return D.CylinderPoint(interval(x0, x1), -y1, y1 - y0)


# -- classification on hand-built clans ------------------------------------------------


def test_two_generation_example():
    pts = [
        rect((6, 10), (2.5, 8)),  # phi
        rect((8, 13), (6, 11)),  # phi1
        rect((4, 9), (7, 13)),  # phi2
        rect((11, 14.5), (10, 15)),  # phi3
    ]
    clan = S.clan_from_points(pts, [0])
    assert set(clan.ancestors[0]) == {1, 2}
    assert set(clan.ancestors[1]) == {2, 3}
    assert clan.ancestors[2] == () and clan.ancestors[3] == ()
    labels = S.classify(clan).labels
    assert labels == (Dl, Dl, K, K)
    assert clan.generation_of() == [0, 1, 1, 2]


def test_overlapping_ancestry_example():
    pts = [
        rect((6, 10), (2.5, 8)),  # phi
        rect((8, 12), (6.5, 9.5)),  # phi1
        rect((5.3, 12.5), (6, 11)),  # phi2
        rect((3.5, 7), (7, 12.5)),  # phi3
        rect((10.5, 14.5), (9, 13)),  # phi4
        rect((2, 6), (9.5, 14.5)),  # phi5
    ]
    clan = S.clan_from_points(pts, [0])
    anc = [set(a) for a in clan.ancestors]
    assert anc[0] == {1, 2, 3}
    assert anc[1] == {2, 4}
    assert anc[2] == {3, 4, 5}
    assert anc[3] == {5}
    assert anc[4] == set() and anc[5] == set()
    labels = S.classify(clan).labels
    # phi5, phi4 kept; phi3, phi2, phi1 deleted; phi kept
    assert labels == (K, Dl, Dl, Dl, K, K)
    assert [p.cycle for p in S.classify(clan).kept_roots()] == [pts[0].cycle]


def test_unclassified_clan_has_no_answer():
    clan = S.clan_from_points([rect((0, 1), (0, 1))], [0])
    with pytest.raises(UnlabeledNode):
        clan.kept_roots()


def test_forced_initial_cylinders():
    a = D.CylinderPoint(interval(0, 1), -2.0, 5.0)
    b = D.CylinderPoint(interval(1, 2), -3.0, 5.0)
    clan = S.clan_from_points([a, b], [0, 1])
    assert S.classify(clan).labels == (Dl, K)
    assert S.classify(clan, always_kept=[0]).labels == (K, K)


lines = st.lists(
    st.tuples(st.integers(0, 8), st.integers(1, 3), st.floats(0, 10), st.floats(0.05, 4)),
    min_size=1, max_size=30, unique_by=lambda t: t[2],
)


@settings(max_examples=80)
@given(lines)
def test_classification_is_the_loss_network(raw):
    pts = [D.CylinderPoint(interval(a, a + n), b, s) for a, n, b, s in raw]
    clan = S.classify(S.clan_from_points(pts, range(len(pts))))
    kept = {id(p) for p, lab in zip(clan.nodes, clan.labels) if lab is K}
    traj = D.forward_loss_network(pts, -1.0)
    assert kept == {id(p) for p in traj.accepted}


@settings(max_examples=40)
@given(lines, st.integers(0, 10))
def test_slab_field_clan_matches_direct_scan(raw, x):
    pts = [D.CylinderPoint(interval(a, a + n), b - 10, s) for a, n, b, s in raw]
    window = L.BoxRegion((x,), (x,))
    clan = S.build_clan(window, None, field_=S.SlabField(pts))
    # the clan answer on the window equals the loss network from before every birth
    traj = D.forward_loss_network(pts, -11.0, 0.0)
    forward = frozenset(c for c in traj.final.present if window.meets(c))
    assert S.window_cycles(S.classify(clan), window) == forward


# -- the lazy field ------------------------------------------------------------------


def test_lazy_field_is_consistent_across_windows(gauss2_a25):
    for seed in range(30):
        f = S.LazyField(gauss2_a25, stream(seed, "t"))
        w1 = L.BoxRegion((0, 0), (2, 2))
        w2 = L.BoxRegion((1, 1), (4, 3))
        first = f.query(w1.sites(), 0.0)
        second = f.query(w2.sites(), 0.0)
        ids2 = {id(p) for p in second}
        ids1 = {id(p) for p in first}
        assert all(id(p) in ids2 for p in first if w2.meets(p.cycle))
        assert all(id(p) in ids1 for p in second if w1.meets(p.cycle))
        assert [id(p) for p in f.query(w1.sites(), 0.0)] == [id(p) for p in first]


def test_lazy_field_intensity_matches_mean_matrix(gauss2_a25):
    g = L.canonicalize([(0, 0), (1, 0), (1, 1), (0, 1)])
    target = math.fsum(B.mean_matrix_row(g, gauss2_a25).values())
    n = 10_000
    counts = np.array([
        len(S.LazyField(gauss2_a25, stream(1, "m", i)).query(g.sites, 0.0)) for i in range(n)
    ])
    assert abs(counts.mean() - target) < 3 * math.sqrt(target / n)
    # Poisson: variance equals mean
    assert abs(counts.var() - target) < 5 * math.sqrt(2 * target ** 2 / n + target / n)


def test_lazy_field_wedge_difference(gauss2_a25):
    # a second query at an earlier time only adds cylinders born before the first one's wedge
    f = S.LazyField(gauss2_a25, stream(2, "w"))
    sites = [(0, 0), (1, 0)]
    a = f.query(sites, 0.0)
    b = f.query(sites, -0.5)
    for p in b:
        if p.alive_at(0.0):
            assert any(p is q for q in a)


# -- certification and caps --------------------------------------------------------


def test_refuses_uncertified(gauss2_a1):
    with pytest.raises(NotCertifiedSubcritical):
        S.build_clan(W3, gauss2_a1)
    with pytest.raises(NotCertifiedSubcritical):
        S.sample_mu_window(W3, gauss2_a1)


def test_caps(gauss2_a1, gauss2_a25):
    with pytest.raises(ClanCapExceeded):
        S.build_clan(W3, gauss2_a1, override=True, max_nodes=5)
    with pytest.raises(HaloCapExceeded):
        S.build_clan(L.BoxRegion((0, 0), (0, 0)), gauss2_a1, override=True, halo_cap=0)
    # certified: the default caps are never hit on small windows
    for r in range(200):
        S.build_clan(W3, gauss2_a25, seed=1, replica=r)


def test_empty_catalog_gives_identity():
    cat = L.enumerate_cycles(2, L.Cutoffs(2, 0.5), P.gaussian(2), 20.0)
    assert not cat.classes
    s = S.sample_mu_window(W3, cat)
    assert s.permutation.is_identity and s.clan_stats.size == 0


def test_alpha_mismatch(gauss2_a25):
    with pytest.raises(ValueError):
        S.build_clan(W3, gauss2_a25, alpha=3.0)


def test_deterministic(gauss2_a25):
    a = [S.sample_mu_window(W3, gauss2_a25, seed=4, replica=r).permutation for r in range(100)]
    b = [S.sample_mu_window(W3, gauss2_a25, seed=4, replica=r).permutation for r in range(100)]
    assert a == b
    assert any(not p.is_identity for p in a)


# -- laws ---------------------------------------------------------------------------


def test_large_alpha_is_identity():
    cat = L.enumerate_cycles(2, L.Cutoffs(4, math.sqrt(2)), P.gaussian(2), 12.0)
    samples = [S.sample_mu_window(W3, cat, seed=0, replica=r) for r in range(300)]
    assert all(s.permutation.is_identity for s in samples)


def test_root_count_at_origin(gauss2_a25):
    n = 10_000
    origin = L.BoxRegion((0, 0), (0, 0))
    roots = np.array([S.build_clan(origin, gauss2_a25, seed=3, replica=r).stats().roots for r in range(n)])
    m = gauss2_a25.origin_mass
    assert abs(roots.mean() - m) < 3 * math.sqrt(m / n)


def test_lazy_law_matches_finite_volume_oracle(gauss2_a1):
    # the restricted catalog has only the cycles inside the box, so the clan
    # sampler must reproduce G_Lambda exactly
    box = L.BoxRegion((0, 0), (1, 1))
    cat = L.catalog_restrict(gauss2_a1, box)
    table = D.enumerate_G_Lambda(box, gauss2_a1)
    n = 20_000
    draws = [S.sample_mu_window(box, cat, seed=6, replica=r, override=True).permutation for r in range(n)]
    assert D.tv_distance(draws, table) < 0.025


def test_translation_invariance_in_law(gauss2_a25):
    n = 3000
    shifted = W3.translate((7, -3))
    a = sum(not S.sample_mu_window(W3, gauss2_a25, seed=8, replica=r).permutation.is_identity for r in range(n))
    b = sum(
        not S.sample_mu_window(shifted, gauss2_a25, seed=9, replica=r).permutation.is_identity for r in range(n)
    )
    p = (a + b) / (2 * n)
    assert abs(a - b) / n < 4 * math.sqrt(2 * p * (1 - p) / n)


def test_gaussian_shift_uses_identical_randomness(gauss2_a25):
    v = (1, 0)
    cat_v = L.enumerate_cycles(2, L.Cutoffs(4, math.sqrt(2)), P.shifted(P.gaussian(2), v), 2.5)
    assert cat_v.weights == gauss2_a25.weights
    for r in range(50):
        s = S.sample_mu_window(W3, gauss2_a25, seed=2, replica=r)
        sv = S.sample_mu_v_window(W3, v, cat_v, seed=2, replica=r)
        assert sv.permutation == s.permutation
        for x in W3.sites():
            assert sv(x) == tuple(a + b for a, b in zip(s(x), v))
    with pytest.raises(ValueError):
        S.sample_mu_v_window(W3, (0, 1), cat_v)


# -- couplings ------------------------------------------------------------------------


def test_thermodynamic_coupling_invariants(gauss2_a25):
    boxes = [W3, W3.expand(2), W3.expand(50)]
    rep = S.thermodynamic_coupling(W3, boxes, gauss2_a25, seed=5, replicas=300)
    for dis, fits in zip(rep.disagreements, rep.contains_clan):
        assert dis <= rep.replicas - fits
    assert rep.disagreements[-1] == 0 and rep.contains_clan[-1] == rep.replicas
    assert rep.disagreements[0] >= rep.disagreements[1]
    assert all(se > 0 for se in rep.standard_errors)


def test_restriction_to_window_of_empty_clan(gauss2_a25):
    clan = S.classify(S.Clan((), (), (), None, W3))
    assert S.restricted_window_answer(clan, W3, W3) == frozenset()


def test_uniqueness_coupling(gauss2_a25):
    eta = L.Permutation(frozenset({L.canonicalize([(0, 0), (1, 0)]), L.canonicalize([(5, 5), (5, 6)])}))
    # started at time 0 the coupled process is eta itself
    res = S.uniqueness_forward_coupling(eta, 0.0, W3, gauss2_a25, seed=1, replica=0)
    assert res.coupled == frozenset({L.canonicalize([(0, 0), (1, 0)])})
    # started before the whole clan it sees no difference
    for r in range(200):
        clan = S.build_clan(W3, gauss2_a25, seed=1, replica=r)
        oldest = min((p.birth for p in clan.nodes), default=0.0)
        res = S.uniqueness_forward_coupling(eta, 1 - oldest + 20, W3, gauss2_a25, seed=1, replica=r, clan=clan)
        assert not res.disagree and res.n_different == 0
    with pytest.raises(ValueError):
        S.uniqueness_forward_coupling(eta, -1.0, W3, gauss2_a25)


def test_slab_cross_validation(gauss2_a25):
    box = L.BoxRegion((-3, -3), (3, 3))
    for r in range(40):
        cv = S.slab_cross_validation(W3, box, gauss2_a25, seed=2, replica=r)
        assert cv.agree


# -- statistics ---------------------------------------------------------------------------


def test_clan_statistics(gauss2_a25):
    summary = S.clan_statistics(2000, gauss2_a25, seed=0)
    assert summary.sizes.shape == (2000,)
    assert sum(summary.size_histogram().values()) == 2000
    m0 = summary.generation_means[0]
    # weighted root mass: sum over classes through the origin of |gamma| w
    expected = math.fsum(len(c) * w for c, w in gauss2_a25.through_origin)
    assert abs(m0 - expected) < 4 * math.sqrt(16 * expected / 2000)
    for ratio, se in summary.generation_ratios()[:1]:
        assert ratio <= summary.beta_upper + 3 * se


# -- invariants ------------------------------------------------------------------------


def test_labels_stable_when_window_grows(gauss2_a25):
    w1 = L.BoxRegion((0, 0), (1, 1))
    w2 = L.BoxRegion((-1, -1), (2, 3))
    for seed in range(100):
        f = S.LazyField(gauss2_a25, stream(seed, "grow"))
        c1 = S.classify(S.build_clan(w1, None, field_=f))
        c2 = S.classify(S.build_clan(w2, None, field_=f))
        lab2 = {id(p): lab for p, lab in zip(c2.nodes, c2.labels)}
        for p, lab in zip(c1.nodes, c1.labels):
            assert lab2[id(p)] is lab


def test_classification_soundness_on_lazy_clans():
    cat = L.enumerate_cycles(2, L.Cutoffs(6, 2), P.gaussian(2), 2.0)
    deleted = 0
    for r in range(300):
        clan = S.classify(S.build_clan(W3, cat, seed=3, replica=r))
        for p, lab in zip(clan.nodes, clan.labels):
            blockers = [
                q for q, lq in zip(clan.nodes, clan.labels)
                if lq is K and q.birth < p.birth < q.death and not p.cycle.support.isdisjoint(q.cycle.support)
            ]
            assert (lab is K) == (not blockers)
            deleted += lab is Dl
    assert deleted > 0


def test_box_missing_window_gives_identity(gauss2_a25):
    far = L.BoxRegion((10, 10), (12, 12))
    for r in range(100):
        clan = S.classify(S.build_clan(W3, gauss2_a25, seed=0, replica=r))
        assert S.restricted_window_answer(clan, W3, far) == frozenset()


def test_uniqueness_disagreement_decays():
    cat = L.enumerate_cycles(2, L.Cutoffs(6, 2), P.gaussian(2), 2.0)
    eta = L.Permutation(frozenset({
        L.canonicalize([(-1, -1), (0, -1)]),
        L.canonicalize([(0, 0), (1, 0), (1, 1), (0, 1)]),
        L.canonicalize([(-1, 1), (-1, 0)]),
    }))
    grid = (0.0, 0.5, 1.0, 2.0, 4.0, 8.0)
    n = 1000
    freq = []
    clans = [S.build_clan(W3, cat, seed=12, replica=r) for r in range(n)]
    for t in grid:
        dis = sum(
            S.uniqueness_forward_coupling(eta, t, W3, cat, seed=12, replica=r, clan=c).disagree
            for r, c in enumerate(clans)
        )
        freq.append(dis / n)
    assert freq[0] > 0.9
    for a, b in zip(freq, freq[1:]):
        assert b <= a + 3 * math.sqrt(max(a, 1 / n) / n)
    assert freq[-1] < 0.01
