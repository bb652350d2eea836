from fractions import Fraction
from itertools import combinations, permutations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tools.errors import (
    DuplicatePointError,
    LatticeDistanceError,
    MultipleTripletError,
    SearchExhaustedError,
    WorkbenchError,
)
from tools.lattice_resonance import (
    LargeDivisor,
    LineDecomposition,
    LocusKind,
    PairKind,
    Site,
    TangentialSet,
    Verdict,
    block_partition,
    brute_force_admissible,
    circle_sites,
    classify_site,
    classify_sites,
    cluster_cardinalities,
    galerkin_disc,
    line_decomposition,
    max_near_cluster,
    norm_multiplicities,
    resonance_locus,
    right_angle_triple,
    search_admissible,
    verify_admissible,
)

coords = st.integers(min_value=-30, max_value=30)
points = st.tuples(coords, coords)


# ---------- circles and right angles ----------

def test_circle_sites_small_radii():
    assert circle_sites(0) == [Site(0, 0)]
    assert circle_sites(3) == []


def test_circle_sites_25():
    sites = circle_sites(25)
    assert len(sites) == 12
    for s in [(3, 4), (-3, 4), (3, -4), (-3, -4), (4, 3), (-4, -3), (5, 0), (-5, 0), (0, 5), (0, -5)]:
        assert Site(*s) in sites
    assert sites == sorted(sites)


@given(st.integers(min_value=0, max_value=400))
def test_circle_sites_match_brute_force(R2):
    r = int(np.sqrt(R2)) + 1
    brute = sorted(Site(a, b) for a in range(-r, r + 1) for b in range(-r, r + 1) if a * a + b * b == R2)
    assert circle_sites(R2) == brute


def test_right_angle_examples():
    assert right_angle_triple((0, 0), (1, 0), (0, 1))
    assert not right_angle_triple((0, 0), (1, 0), (2, 0))
    assert right_angle_triple((0, 0), (2, 1), (1, 3))


def test_right_angle_rejects_duplicates():
    with pytest.raises(DuplicatePointError):
        right_angle_triple((1, 1), (1, 1), (0, 2))


@given(points, points, points)
def test_right_angle_is_symmetric(a, b, c):
    if len({a, b, c}) < 3:
        return
    verdicts = {right_angle_triple(*p) for p in permutations((a, b, c))}
    assert len(verdicts) == 1


# ---------- loci and classification ----------

def test_first_type_locus_is_a_line():
    locus = resonance_locus((1, 0), (0, 1), PairKind.FIRST)
    assert locus.kind == LocusKind.LINE
    assert locus.coeffs == (1, -1, -1)
    assert locus.contains((0, 1))
    assert locus.partner(Site(0, 1)) == Site(1, 0)


def test_second_type_locus_is_the_thales_circle():
    locus = resonance_locus((1, 0), (0, 1), PairKind.SECOND)
    assert locus.kind == LocusKind.CIRCLE
    assert locus.center == (Fraction(1, 2), Fraction(1, 2))
    assert locus.r2 == Fraction(1, 2)
    for n in [(0, 0), (1, 1), (1, 0), (0, 1)]:
        assert locus.contains(n)

    symmetric = resonance_locus((1, 0), (-1, 0), PairKind.SECOND)
    assert symmetric.center == (0, 0)
    assert symmetric.r2 == 1


def test_locus_needs_distinct_sites():
    with pytest.raises(DuplicatePointError):
        resonance_locus((2, 2), (2, 2), PairKind.FIRST)


def test_classify_origin_is_second_type(desk_set):
    pair = classify_site((0, 0), desk_set)
    assert pair.kind == PairKind.SECOND
    assert pair.m == Site(1, 1)
    assert {pair.i, pair.j} == {Site(1, 0), Site(0, 1)}


def test_classify_off_every_locus(desk_set):
    assert classify_site((5, 5), desk_set) is None


def test_classify_sites_finds_first_type_partners(desk_set):
    normal = [n for n in galerkin_disc(2) if n not in desk_set]
    L1, L2 = classify_sites(normal, desk_set)
    assert set(L2) == {Site(0, 0), Site(1, 1)}
    assert L1[Site(-1, 0)].m == Site(0, -1)
    assert L1[Site(0, -1)].m == Site(-1, 0)
    for n, pair in L1.items():
        assert pair.m - pair.n == pair.i - pair.j or pair.n - pair.m == pair.i - pair.j


def test_multiple_triplets_listed():
    pool = [s for s in galerkin_disc(3) if s.norm2]
    for sites in combinations(pool, 3):
        S = TangentialSet(sites)
        report = verify_admissible(S, 12)
        if report.admissible or not report.witness or "n" not in report.witness:
            continue
        n = report.witness["n"]
        with pytest.raises(MultipleTripletError) as exc:
            classify_site(n, S)
        assert len(exc.value.triplets) >= 2
        return
    pytest.fail("no non-admissible set with a lattice witness in the pool")


# ---------- admissibility ----------

def test_right_angle_set_violates_condition_one():
    report = verify_admissible(TangentialSet(((0, 0), (1, 0), (0, 1))), 10)
    assert report.verdict == Verdict.VIOLATION
    assert report.witness["condition"] == 1


def test_desk_set_is_admissible(desk_set):
    report = verify_admissible(desk_set, 20)
    assert report.admissible
    assert report.cross_check_agrees


def test_pair_with_origin_cross_checks():
    report = verify_admissible(TangentialSet(((0, 0), (1, 0))), 30)
    assert report.cross_check_agrees


def test_exact_and_brute_force_agree_on_random_sets():
    rng = np.random.default_rng(2024)
    pool = galerkin_disc(10)
    bound = 60
    for trial in range(102):
        b = [2, 3, 4][trial % 3]
        picks = rng.choice(len(pool), size=b, replace=False)
        S = TangentialSet(tuple(pool[p] for p in sorted(picks)))
        exact = verify_admissible(S, bound)
        brute = brute_force_admissible(S, bound)
        assert exact.cross_check_agrees
        if exact.witness and (exact.witness["condition"] == 1 or "coincident_loci" in exact.witness):
            assert brute.verdict == Verdict.VIOLATION
            if exact.witness["condition"] == 1:
                assert brute.witness["condition"] == 1
            continue
        inside = [(c, n) for c, n in exact.violations if n[0] ** 2 + n[1] ** 2 <= bound * bound]
        assert brute.verdict == (Verdict.VIOLATION if inside else Verdict.ADMISSIBLE)
        assert {c for c, _ in inside} == {c for c, _ in brute.violations}
        if inside:
            assert brute.witness["condition"] == min(c for c, _ in inside)


def test_search_admissible_pair():
    S = search_admissible(2, 5, 1)
    assert S.b == 2
    assert verify_admissible(S, 30).admissible


def test_search_admissible_four_set():
    S = search_admissible(4, 10, 7)
    assert S.b == 4
    assert brute_force_admissible(S, 40).verdict == Verdict.ADMISSIBLE


def test_search_exhaustion_reports_attempts():
    # five sites of the unit disc always contain a right angle
    with pytest.raises(SearchExhaustedError) as exc:
        search_admissible(5, 1, 0, max_attempts=10)
    assert exc.value.attempts == 10


def test_search_needs_two_sites():
    with pytest.raises(WorkbenchError):
        search_admissible(1, 5, 0)


def test_tangential_set_rejects_duplicates():
    with pytest.raises(DuplicatePointError):
        TangentialSet(((1, 2), (1, 2)))


# ---------- blocks and clusters ----------

def test_block_partition_delta_zero():
    sites = [(3, 4), (4, 3), (5, 0)]
    blocks = block_partition(sites, 0)
    assert len(blocks) == 3
    assert all(len(blk) == 1 for blk in blocks)


def test_block_partition_delta_two():
    blocks = block_partition([(3, 4), (4, 3), (5, 0)], 2)
    members = sorted(blk.members for blk in blocks)
    assert members == [(Site(3, 4), Site(4, 3)), (Site(5, 0),)]


def test_block_partition_chain_closure():
    blocks = block_partition([(3, 4), (4, 3), (5, 0), (0, 5)], 4)
    assert len(blocks) == 1
    assert set(blocks[0].members) == {Site(3, 4), Site(4, 3), Site(5, 0), Site(0, 5)}


@given(st.lists(points, min_size=1, max_size=12, unique=True), st.integers(min_value=0, max_value=6))
def test_blocks_partition_sites_by_norm(sites, Delta):
    blocks = block_partition(sites, Delta)
    covered = [s for blk in blocks for s in blk.members]
    assert sorted(covered) == sorted(Site(*s) for s in sites)
    for blk in blocks:
        assert all(s.norm2 == blk.norm_sq for s in blk.members)


def test_near_clusters_have_at_most_two_sites():
    report = cluster_cardinalities(100, 10 ** 4, "lines")
    assert report.max_near_cluster <= 2
    assert report.counterexamples == []


def test_near_cluster_methods_agree():
    assert max_near_cluster(10, 60, "lines")[0] == max_near_cluster(10, 60, "brute")[0]


# ---------- line decomposition ----------

def test_line_decomposition_example():
    ld = line_decomposition((100, 0), (100, 1), 1)
    assert isinstance(ld, LineDecomposition)
    assert ld.c == Site(1, 0)
    assert ld.t == 100
    assert ld.n0 == Site(0, 0)
    assert ld.n0_prime == Site(0, 1)


def test_line_decomposition_equal_sites():
    ld = line_decomposition((5, 5), (5, 5), 1)
    assert ld.t == 0
    assert ld.n0 == Site(5, 5)


def test_line_decomposition_large_divisor():
    assert isinstance(line_decomposition((3, 0), (2, 0), 1), LargeDivisor)


def test_line_decomposition_distance_error():
    with pytest.raises(LatticeDistanceError):
        line_decomposition((0, 0), (3, 0), 1)


@settings(max_examples=200)
@given(points, st.tuples(st.integers(-4, 4), st.integers(-4, 4)), st.integers(min_value=6, max_value=40))
def test_line_decomposition_reconstructs(n_prime, d, K):
    n_prime = Site(*n_prime)
    n = n_prime + d
    ld = line_decomposition(n, n_prime, K)
    if isinstance(ld, LargeDivisor):
        assert abs((n - n_prime).n1 * n_prime.n1 + (n - n_prime).n2 * n_prime.n2) > K * K
        return
    assert ld.n0 + ld.c.scaled(ld.t) == n
    assert ld.n0_prime + ld.c.scaled(ld.t) == n_prime
    diff = n - n_prime
    assert diff.n1 * ld.c.n1 + diff.n2 * ld.c.n2 == 0


def test_norm_multiplicities():
    mult = norm_multiplicities(5)
    assert mult[0] == 1
    assert mult[1] == 4
    assert mult[2] == 4
    assert mult[25] == 12
    assert 3 not in mult
    assert all(mult[N] == len(circle_sites(N)) for N in mult)
