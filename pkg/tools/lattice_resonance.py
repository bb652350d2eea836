"""
Exact integer/rational geometry of resonances on Z^2.

Circle lattice points, right-angle triples, the line and circle loci of
first/second type resonant pairs, the admissible-set decision procedure,
block decomposition, cluster scans and the line decomposition used by the
measure estimates. No floating point enters any decision made here.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from itertools import combinations, permutations
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel

from tools.config import get_settings
from tools.errors import (
    DuplicatePointError,
    LatticeDistanceError,
    MultipleTripletError,
    SearchExhaustedError,
    WorkbenchError,
)

logger = logging.getLogger("lattice_resonance")


# ---------- Domain types ----------

class Site(NamedTuple):
    n1: int
    n2: int

    @property
    def norm2(self) -> int:
        return self.n1 * self.n1 + self.n2 * self.n2

    def __add__(self, other):
        return Site(self.n1 + other[0], self.n2 + other[1])

    def __sub__(self, other):
        return Site(self.n1 - other[0], self.n2 - other[1])

    def scaled(self, t: int) -> "Site":
        return Site(t * self.n1, t * self.n2)


def as_site(p: Sequence[int]) -> Site:
    return p if isinstance(p, Site) else Site(int(p[0]), int(p[1]))


def dot(a: Sequence[int], b: Sequence[int]) -> int:
    return a[0] * b[0] + a[1] * b[1]


@dataclass(frozen=True)
class TangentialSet:
    sites: Tuple[Site, ...]

    def __post_init__(self):
        sites = tuple(as_site(s) for s in self.sites)
        object.__setattr__(self, "sites", sites)
        if len(sites) < 2:
            raise WorkbenchError("a tangential set needs b >= 2 sites",
                                 {"b": len(sites)}, module="lattice_resonance",
                                 condition="too_few_sites")
        if len(set(sites)) != len(sites):
            raise DuplicatePointError("tangential sites must be distinct",
                                      {"sites": [list(s) for s in sites]})

    @property
    def b(self) -> int:
        return len(self.sites)

    def index(self, site: Site) -> int:
        return self.sites.index(site)

    def __contains__(self, site) -> bool:
        return as_site(site) in self.sites

    def __iter__(self):
        return iter(self.sites)

    def to_list(self) -> List[List[int]]:
        return [list(s) for s in self.sites]


class PairKind(str, Enum):
    FIRST = "FirstType"
    SECOND = "SecondType"


@dataclass(frozen=True)
class ResonantPair:
    kind: PairKind
    n: Site
    m: Site
    i: Site
    j: Site

    def to_dict(self) -> Dict:
        return {
            "kind": self.kind.value,
            "n": list(self.n),
            "m": list(self.m),
            "i": list(self.i),
            "j": list(self.j),
        }


class LocusKind(str, Enum):
    LINE = "Line"
    CIRCLE = "Circle"


@dataclass(frozen=True)
class ResonanceLocus:
    """A line a*n1 + b*n2 = c, or a circle |n - center|^2 = r2, carrying the pair that generated it"""
    kind: LocusKind
    i: Site
    j: Site
    pair_kind: PairKind
    coeffs: Optional[Tuple[int, int, int]] = None
    center: Optional[Tuple[Fraction, Fraction]] = None
    r2: Optional[Fraction] = None

    def partner(self, n: Site) -> Site:
        if self.pair_kind == PairKind.FIRST:
            return n + self.i - self.j
        return self.i + self.j - n

    def contains(self, n: Sequence[int]) -> bool:
        if self.kind == LocusKind.LINE:
            a, b, c = self.coeffs
            return a * n[0] + b * n[1] == c
        return (n[0] - self.center[0]) ** 2 + (n[1] - self.center[1]) ** 2 == self.r2

    def to_dict(self) -> Dict:
        if self.kind == LocusKind.LINE:
            return {"kind": "Line", "coeffs": list(self.coeffs)}
        return {"kind": "Circle", "center": [str(self.center[0]), str(self.center[1])],
                "r2": str(self.r2)}


@dataclass(frozen=True)
class Block:
    norm_sq: int
    members: Tuple[Site, ...]

    def __len__(self) -> int:
        return len(self.members)

    def to_dict(self) -> Dict:
        return {"norm_sq": self.norm_sq, "members": [list(s) for s in self.members]}


@dataclass(frozen=True)
class LargeDivisor:
    """|<n - n', n'>| exceeds K^2: the divisor is larger than one, no small divisor"""
    inner: int
    K: int

    def to_dict(self) -> Dict:
        return {"large_divisor": True, "inner": self.inner, "K": self.K}


@dataclass(frozen=True)
class LineDecomposition:
    n0: Site
    n0_prime: Site
    c: Site
    t: int

    def to_dict(self) -> Dict:
        return {"n0": list(self.n0), "n0_prime": list(self.n0_prime), "c": list(self.c), "t": self.t}


class Verdict(str, Enum):
    ADMISSIBLE = "Admissible"
    VIOLATION = "Violation"


class AdmissibilityReport(BaseModel):
    verdict: Verdict
    witness: Optional[Dict] = None
    violations: List[Tuple[int, Tuple[int, int]]] = []
    search_bound_used: int
    cross_check_agrees: Optional[bool] = None

    @property
    def admissible(self) -> bool:
        return self.verdict == Verdict.ADMISSIBLE


class ClusterReport(BaseModel):
    Delta: int
    scan_bound: int
    max_equal_norm_count: int
    cardinality_bound: Optional[float] = None
    bound_asserted: bool = False
    bound_holds: Optional[bool] = None
    max_near_cluster: int
    counterexamples: List[List[List[int]]] = []


# ---------- Circle sites and right angles ----------

def circle_sites(R2: int) -> List[Site]:
    """All (m1, m2) in Z^2 with m1^2 + m2^2 = R2, sorted lexicographically"""
    if R2 < 0:
        raise ValueError("R2 must be nonnegative")
    out = []
    r = math.isqrt(R2)
    for m1 in range(-r, r + 1):
        rest = R2 - m1 * m1
        m2 = math.isqrt(rest)
        if m2 * m2 == rest:
            out.append(Site(m1, m2))
            if m2 != 0:
                out.append(Site(m1, -m2))
    return sorted(out)


def right_angle_triple(a: Sequence[int], b: Sequence[int], c: Sequence[int]) -> bool:
    """True iff some vertex of the triangle abc sees the other two at a right angle"""
    a, b, c = as_site(a), as_site(b), as_site(c)
    if a == b or b == c or a == c:
        raise DuplicatePointError("right_angle_triple needs three distinct points",
                                  {"points": [list(a), list(b), list(c)]})
    return (dot(a - b, c - b) == 0 or dot(b - a, c - a) == 0 or dot(a - c, b - c) == 0)


# ---------- Loci ----------

def _normalize_line(a: int, b: int, c: int) -> Tuple[int, int, int]:
    g = math.gcd(math.gcd(a, b), c)
    if g:
        a, b, c = a // g, b // g, c // g
    if a < 0 or (a == 0 and b < 0):
        a, b, c = -a, -b, -c
    return a, b, c


def resonance_locus(i: Sequence[int], j: Sequence[int], kind: PairKind) -> ResonanceLocus:
    """
    Locus of normal sites n resonant with the tangential pair (i, j).

    FirstType: -2<n, i-j> = |i-j|^2 - |i|^2 + |j|^2, partner m = n + i - j.
    SecondType: the Thales circle on diameter ij, partner m = i + j - n.
    """
    i, j = as_site(i), as_site(j)
    if i == j:
        raise DuplicatePointError("resonance locus needs i != j", {"i": list(i)})
    d = i - j
    if kind == PairKind.FIRST:
        coeffs = _normalize_line(-2 * d.n1, -2 * d.n2, d.norm2 - i.norm2 + j.norm2)
        return ResonanceLocus(LocusKind.LINE, i, j, kind, coeffs=coeffs)
    center = (Fraction(i.n1 + j.n1, 2), Fraction(i.n2 + j.n2, 2))
    return ResonanceLocus(LocusKind.CIRCLE, i, j, kind, center=center, r2=Fraction(d.norm2, 4))


def _all_loci(S: TangentialSet) -> List[ResonanceLocus]:
    loci = [resonance_locus(i, j, PairKind.FIRST) for i, j in permutations(S.sites, 2)]
    # second-type loci are symmetric in (i, j)
    loci += [resonance_locus(i, j, PairKind.SECOND) for i, j in combinations(S.sites, 2)]
    return loci


def _triplets_at(n: Site, S: TangentialSet, loci: Iterable[ResonanceLocus]) -> Dict[Tuple, ResonantPair]:
    """Valid triplets through n keyed by (kind, partner); same partner counts once"""
    found: Dict[Tuple, ResonantPair] = {}
    if n in S:
        return found
    for locus in loci:
        if not locus.contains(n):
            continue
        m = locus.partner(n)
        if m in S or m == n:
            continue
        key = (locus.pair_kind, m)
        if key not in found:
            found[key] = ResonantPair(locus.pair_kind, n, m, locus.i, locus.j)
    return found


def classify_site(n: Sequence[int], S: TangentialSet) -> Optional[ResonantPair]:
    """The unique resonant pair containing n, or None; several triplets raise MultipleTripletError"""
    n = as_site(n)
    found = _triplets_at(n, S, _all_loci(S))
    if not found:
        return None
    if len(found) > 1:
        pairs = sorted(found.values(), key=lambda p: (p.kind.value, p.m))
        raise MultipleTripletError(f"site {tuple(n)} has {len(pairs)} resonant triplets", pairs)
    return next(iter(found.values()))


def classify_sites(sites: Iterable[Site], S: TangentialSet) -> Tuple[Dict[Site, ResonantPair], Dict[Site, ResonantPair]]:
    """Split sites into first-type and second-type maps site -> pair"""
    L1: Dict[Site, ResonantPair] = {}
    L2: Dict[Site, ResonantPair] = {}
    loci = _all_loci(S)
    for n in sites:
        n = as_site(n)
        found = _triplets_at(n, S, loci)
        if len(found) > 1:
            raise MultipleTripletError(f"site {tuple(n)} has {len(found)} resonant triplets",
                                       list(found.values()))
        for pair in found.values():
            (L1 if pair.kind == PairKind.FIRST else L2)[n] = pair
    return L1, L2


# ---------- Exact intersections ----------

def _line_line(l1: Tuple[int, int, int], l2: Tuple[int, int, int]):
    a1, b1, c1 = l1
    a2, b2, c2 = l2
    det = a1 * b2 - a2 * b1
    if det == 0:
        if l1 == l2:
            return "coincident"
        return []
    return [(Fraction(c1 * b2 - c2 * b1, det), Fraction(a1 * c2 - a2 * c1, det))]


def _rational_sqrt(q: Fraction) -> Optional[Fraction]:
    if q < 0:
        return None
    p, r = q.numerator, q.denominator
    sp, sr = math.isqrt(p), math.isqrt(r)
    if sp * sp == p and sr * sr == r:
        return Fraction(sp, sr)
    return None


def _line_circle(line, center, r2) -> List[Tuple[Fraction, Fraction]]:
    """Rational intersection points only (irrational ones carry no lattice points)"""
    a, b, c = (Fraction(x) for x in line)
    cx, cy = center
    if b != 0:
        # n2 = (c - a n1) / b
        k0, k1 = c / b, -a / b
        A = 1 + k1 * k1
        B = -2 * cx + 2 * k1 * (k0 - cy)
        C = cx * cx + (k0 - cy) ** 2 - r2
        disc = B * B - 4 * A * C
        root = _rational_sqrt(disc)
        if root is None:
            return []
        xs = {(-B + root) / (2 * A), (-B - root) / (2 * A)}
        return [(x, k0 + k1 * x) for x in sorted(xs)]
    x = c / a
    rest = r2 - (x - cx) ** 2
    root = _rational_sqrt(rest)
    if root is None:
        return []
    return [(x, y) for y in sorted({cy + root, cy - root})]


def _circle_circle(c1, r1, c2, r2):
    if c1 == c2:
        return "coincident" if r1 == r2 else []
    # radical line: 2(c2-c1).n = |c2|^2 - |c1|^2 - r2 + r1
    a = 2 * (c2[0] - c1[0])
    b = 2 * (c2[1] - c1[1])
    c = c2[0] ** 2 + c2[1] ** 2 - c1[0] ** 2 - c1[1] ** 2 - r2 + r1
    den = math.lcm(a.denominator, b.denominator, c.denominator)
    line = (int(a * den), int(b * den), int(c * den))
    return _line_circle(line, c1, r1)


def _intersect(L: ResonanceLocus, M: ResonanceLocus):
    if L.kind == LocusKind.LINE and M.kind == LocusKind.LINE:
        return _line_line(L.coeffs, M.coeffs)
    if L.kind == LocusKind.CIRCLE and M.kind == LocusKind.CIRCLE:
        return _circle_circle(L.center, L.r2, M.center, M.r2)
    line, circle = (L, M) if L.kind == LocusKind.LINE else (M, L)
    return _line_circle(line.coeffs, circle.center, circle.r2)


def _condition_for(k1: PairKind, k2: PairKind) -> int:
    if k1 == k2:
        return 2 if k1 == PairKind.FIRST else 3
    return 4


def _condition_one(S: TangentialSet) -> Optional[Dict]:
    for a, b, c in combinations(S.sites, 3):
        if right_angle_triple(a, b, c):
            return {"condition": 1, "sites": [list(a), list(b), list(c)]}
    return None


# ---------- Admissibility ----------

def _exact_violations(S: TangentialSet) -> Tuple[List[Tuple[int, Site]], Optional[Dict]]:
    loci = _all_loci(S)
    violations = set()
    coincident = None
    for L, M in combinations(loci, 2):
        points = _intersect(L, M)
        if points == "coincident":
            if coincident is None:
                coincident = {"condition": _condition_for(L.pair_kind, M.pair_kind),
                              "coincident_loci": [L.to_dict(), M.to_dict()],
                              "pairs": [[list(L.i), list(L.j)], [list(M.i), list(M.j)]]}
            continue
        for x, y in points:
            if x.denominator != 1 or y.denominator != 1:
                continue
            n = Site(int(x), int(y))
            if n in S:
                continue
            m1, m2 = L.partner(n), M.partner(n)
            if m1 in S or m2 in S:
                continue
            if L.pair_kind == M.pair_kind and m1 == m2:
                continue
            violations.add((_condition_for(L.pair_kind, M.pair_kind), n))
    return sorted(violations, key=lambda v: (v[0], v[1].norm2, v[1])), coincident


def brute_force_violations(S: TangentialSet, bound: int) -> List[Tuple[int, Site]]:
    """Scan every n with |n| <= bound for more than one triplet"""
    loci = _all_loci(S)
    out = set()
    for n in galerkin_disc(bound):
        found = _triplets_at(n, S, loci)
        if len(found) < 2:
            continue
        kinds = [k for k, _ in found]
        first = kinds.count(PairKind.FIRST)
        second = kinds.count(PairKind.SECOND)
        if first >= 2:
            out.add((2, n))
        if second >= 2:
            out.add((3, n))
        if first and second:
            out.add((4, n))
    return sorted(out, key=lambda v: (v[0], v[1].norm2, v[1]))


def _report(verdict_violations, witness, bound, agrees=None) -> AdmissibilityReport:
    violations = [(c, (n.n1, n.n2)) for c, n in verdict_violations]
    verdict = Verdict.VIOLATION if (witness or violations) else Verdict.ADMISSIBLE
    if witness is None and violations:
        c, n = verdict_violations[0]
        witness = {"condition": c, "n": list(n)}
    return AdmissibilityReport(verdict=verdict, witness=witness, violations=violations,
                               search_bound_used=bound, cross_check_agrees=agrees)


def brute_force_admissible(S: TangentialSet, bound: int) -> AdmissibilityReport:
    witness = _condition_one(S)
    if witness:
        return _report([], witness, bound)
    return _report(brute_force_violations(S, bound), None, bound)


def verify_admissible(S: TangentialSet, check_bound: int) -> AdmissibilityReport:
    """
    Decide admissibility exactly.

    Condition 1 is checked over all triples. Conditions 2-4 reduce to the
    integer points where two loci meet, found with rational arithmetic. The
    brute-force scan over |n| <= check_bound must find exactly the exact
    violations that lie inside that disc.

    Args:
        S: tangential set
        check_bound: radius of the brute-force cross-check

    Returns:
        AdmissibilityReport with every violating (condition, n) found
    """
    if S.b < 2:
        raise WorkbenchError("b must be at least 2", module="lattice_resonance", condition="too_few_sites")
    witness = _condition_one(S)
    if witness:
        return _report([], witness, check_bound, agrees=True)

    exact, coincident = _exact_violations(S)
    brute = brute_force_violations(S, check_bound)
    inside = [v for v in exact if v[1].norm2 <= check_bound * check_bound]
    agrees = inside == brute
    if coincident is not None:
        agrees = bool(brute)
    if not agrees:
        logger.error(f"Exact and brute-force admissibility disagree for {S.to_list()}")
    return _report(exact, coincident, check_bound, agrees)


def search_admissible(b: int, site_bound: int, seed: int,
                      max_attempts: Optional[int] = None) -> TangentialSet:
    """Draw random b-sets from the disc |n| <= site_bound until one is admissible"""
    if b < 2:
        raise WorkbenchError("b must be at least 2", module="lattice_resonance", condition="too_few_sites")
    attempts_allowed = max_attempts or get_settings().max_search_attempts
    candidates = galerkin_disc(site_bound)
    rng = np.random.default_rng(seed)
    check_bound = 2 * site_bound + 2
    if len(candidates) < b:
        raise SearchExhaustedError(f"only {len(candidates)} sites with |n| <= {site_bound}", 0)

    for attempt in range(1, attempts_allowed + 1):
        picks = rng.choice(len(candidates), size=b, replace=False)
        S = TangentialSet(tuple(candidates[p] for p in sorted(picks)))
        report = verify_admissible(S, check_bound)
        if report.admissible:
            logger.info(f"Admissible set found after {attempt} attempts: {S.to_list()}")
            return S
    raise SearchExhaustedError(
        f"no admissible {b}-set found in {attempts_allowed} attempts (site_bound={site_bound})",
        attempts_allowed)


# ---------- Blocks ----------

def galerkin_disc(bound: int) -> List[Site]:
    """All sites with |n| <= bound, sorted by (norm, n)"""
    out = [Site(a, b) for a in range(-bound, bound + 1) for b in range(-bound, bound + 1)
           if a * a + b * b <= bound * bound]
    return sorted(out, key=lambda s: (s.norm2, s))


def block_partition(sites: Iterable[Sequence[int]], Delta: int) -> List[Block]:
    """Transitive closure of |a|^2 = |b|^2, |a - b| <= Delta"""
    if Delta < 0:
        raise ValueError("Delta must be nonnegative")
    by_norm: Dict[int, List[Site]] = {}
    for s in {as_site(s) for s in sites}:
        by_norm.setdefault(s.norm2, []).append(s)

    blocks = []
    for norm_sq, members in by_norm.items():
        parent = {s: s for s in members}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for a, b in combinations(members, 2):
            if (a - b).norm2 <= Delta * Delta:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
        groups: Dict[Site, List[Site]] = {}
        for s in members:
            groups.setdefault(find(s), []).append(s)
        blocks += [Block(norm_sq, tuple(sorted(g))) for g in groups.values()]
    return sorted(blocks, key=lambda blk: (blk.norm_sq, blk.members[0]))


# ---------- Cluster scans ----------

def norm_multiplicities(R: int) -> Dict[int, int]:
    """Number of lattice points on each circle |a|^2 = N for N <= R^2"""
    ax = np.arange(-R, R + 1)
    n1, n2 = np.meshgrid(ax, ax, indexing="ij")
    norms = (n1 * n1 + n2 * n2).ravel()
    norms = norms[norms <= R * R]
    values, counts = np.unique(norms, return_counts=True)
    return dict(zip(values.tolist(), counts.tolist()))


def _near_offsets(Delta: int) -> List[Site]:
    """Nonzero d with |d| <= Delta^(1/3), decided exactly via |d|^6 <= Delta^2"""
    r = int(round(Delta ** (1.0 / 3.0))) + 1
    return [Site(a, b) for a in range(-r, r + 1) for b in range(-r, r + 1)
            if (a or b) and (a * a + b * b) ** 3 <= Delta * Delta]


def _cluster_size_at(a: Site, offsets: List[Site]) -> int:
    return 1 + sum(1 for d in offsets if 2 * dot(a, d) + d.norm2 == 0)


def _line_has_point_in_annulus(d: Site, Delta: int, scan_bound: int) -> Optional[Site]:
    # integer points of 2<a,d> = -|d|^2
    A, B, C = 2 * d.n1, 2 * d.n2, -d.norm2
    g = math.gcd(A, B)
    if C % g:
        return None
    # particular solution by extended gcd
    def egcd(x, y):
        if y == 0:
            return (x, 1, 0)
        q, u, v = egcd(y, x % y)
        return (q, v, u - (x // y) * v)
    gg, u, v = egcd(abs(A), abs(B))
    u = u if A >= 0 else -u
    v = v if B >= 0 else -v
    a0 = Site(u * (C // g), v * (C // g))
    step = Site(-B // g, A // g)
    t_star = -dot(a0, step) / step.norm2
    span = int(scan_bound / math.sqrt(step.norm2)) + 2
    for t in range(int(t_star) - span, int(t_star) + span + 1):
        a = a0 + step.scaled(t)
        if Delta * Delta < a.norm2 <= scan_bound * scan_bound:
            return a
    return None


def max_near_cluster(Delta: int, scan_bound: int, method: str = "lines") -> Tuple[int, List[List[Site]]]:
    """
    Largest set of equal-norm sites within Delta^(1/3) of some a, Delta < |a| <= scan_bound.

    method="lines" intersects the lines 2<a,d> = -|d|^2 exactly;
    method="brute" scans the disc with numpy (small bounds only).
    """
    offsets = _near_offsets(Delta)
    if not offsets:
        return 1, []

    if method == "brute":
        ax = np.arange(-scan_bound, scan_bound + 1)
        A1, A2 = np.meshgrid(ax, ax, indexing="ij")
        norms = A1 * A1 + A2 * A2
        mask = (norms > Delta * Delta) & (norms <= scan_bound * scan_bound)
        counts = np.ones_like(norms)
        for d in offsets:
            counts += (2 * (A1 * d.n1 + A2 * d.n2) + d.norm2 == 0)
        counts = np.where(mask, counts, 0)
        best = int(counts.max()) if mask.any() else 0
        bad = []
        if best > 2:
            for x, y in zip(*np.nonzero(counts > 2)):
                a = Site(int(ax[x]), int(ax[y]))
                bad.append([a] + [a + d for d in offsets if 2 * dot(a, d) + d.norm2 == 0])
        return best, bad[:10]

    best = 1
    for d in offsets:
        if _line_has_point_in_annulus(d, Delta, scan_bound) is not None:
            best = 2
            break
    bad = []
    lines = [(2 * d.n1, 2 * d.n2, -d.norm2) for d in offsets]
    seen = set()
    for l1, l2 in combinations(lines, 2):
        pts = _line_line(l1, l2)
        if pts == "coincident":
            continue
        for x, y in pts:
            if x.denominator != 1 or y.denominator != 1:
                continue
            a = Site(int(x), int(y))
            if a in seen or not (Delta * Delta < a.norm2 <= scan_bound * scan_bound):
                continue
            seen.add(a)
            size = _cluster_size_at(a, offsets)
            best = max(best, size)
            if size > 2:
                bad.append([a] + [a + d for d in offsets if 2 * dot(a, d) + d.norm2 == 0])
    return best, bad[:10]


def cluster_cardinalities(Delta: int, scan_bound: int, method: str = "lines") -> ClusterReport:
    """Report equal-norm counts for |a| <= Delta and near-cluster sizes beyond"""
    if scan_bound <= Delta:
        raise ValueError("scan_bound must exceed Delta")
    mult = norm_multiplicities(Delta)
    max_count = max(mult.values())
    bound = None
    asserted = False
    holds = None
    if Delta >= 16:
        bound = math.exp(math.log(Delta) / math.log(math.log(Delta)))
        holds = max_count <= bound
        asserted = Delta >= get_settings().cardinality_threshold
        if not holds:
            level = logging.ERROR if asserted else logging.WARNING
            logger.log(level, f"Cardinality {max_count} exceeds exp(log D/loglog D)={bound:.2f} at Delta={Delta}")

    near, bad = max_near_cluster(Delta, scan_bound, method)
    if near > 2:
        logger.warning(f"Near-cluster of size {near} found beyond Delta={Delta}")
    return ClusterReport(Delta=Delta, scan_bound=scan_bound, max_equal_norm_count=max_count,
                         cardinality_bound=bound, bound_asserted=asserted, bound_holds=holds,
                         max_near_cluster=near,
                         counterexamples=[[list(s) for s in group] for group in bad])


# ---------- Line decomposition ----------

def line_decomposition(n: Sequence[int], n_prime: Sequence[int], K: int) -> Union[LargeDivisor, LineDecomposition]:
    """
    Write n = n0 + t c, n' = n0' + t c with c perpendicular to n - n'.

    Returns LargeDivisor when |<n - n', n'>| > K^2.
    """
    n, n_prime = as_site(n), as_site(n_prime)
    d = n - n_prime
    if d.norm2 > K * K:
        raise LatticeDistanceError(f"|n - n'| exceeds K={K}", {"n": list(n), "n_prime": list(n_prime)})
    inner = dot(d, n_prime)
    if abs(inner) > K * K:
        return LargeDivisor(inner, K)
    if d == Site(0, 0):
        return LineDecomposition(n, n_prime, Site(1, 0), 0)
    c = Site(-d.n2, d.n1)
    # n' = x1 c + x2 d with c orthogonal to d and |c| = |d|
    t = dot(n_prime, c) // d.norm2
    n0_prime = n_prime - c.scaled(t)
    return LineDecomposition(n0_prime + d, n0_prime, c, t)
