"""
Sparse Fourier-Taylor series on the truncated phase space (theta, I, z, zbar).

A term c * e^{i<k,theta>} I^l z^alpha zbar^beta is stored under a
MultiIndex(k, l, alpha, beta); alpha/beta are sorted tuples of (site, power).
Series are treated as immutable values: every operation returns a new series.

Bracket convention:
    {F,G} = <F_I,G_theta> - <F_theta,G_I> + i(<F_z,G_zbar> - <F_zbar,G_z>)
and the flow of H is dG/dt = {G,H}.
"""

import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from tools.config import get_settings
from tools.lattice_resonance import Site, as_site

logger = logging.getLogger("hamiltonian_algebra")

Powers = Tuple[Tuple[Site, int], ...]


# ---------- Indices ----------

class MultiIndex(NamedTuple):
    k: Tuple[int, ...]
    l: Tuple[int, ...]
    alpha: Powers
    beta: Powers

    @staticmethod
    def make(b: int, k=None, l=None, alpha=None, beta=None) -> "MultiIndex":
        k = tuple(int(x) for x in k) if k is not None else (0,) * b
        l = tuple(int(x) for x in l) if l is not None else (0,) * b
        if len(k) != b or len(l) != b:
            raise ValueError(f"k and l must have length {b}")
        if any(x < 0 for x in l):
            raise ValueError("l must be nonnegative")
        return MultiIndex(k, l, _powers(alpha), _powers(beta))

    @property
    def k_norm(self) -> int:
        return sum(abs(x) for x in self.k)

    @property
    def l_norm(self) -> int:
        return sum(self.l)

    @property
    def degree(self) -> int:
        return sum(p for _, p in self.alpha) + sum(p for _, p in self.beta)

    @property
    def degrees(self) -> Tuple[int, int]:
        return sum(p for _, p in self.alpha), sum(p for _, p in self.beta)

    @property
    def mode_weight(self) -> float:
        """sum_n |n| (alpha_n + beta_n)"""
        return sum(math.hypot(*n) * p for n, p in self.alpha) + sum(math.hypot(*n) * p for n, p in self.beta)

    @property
    def max_mode(self) -> float:
        sites = [n for n, _ in self.alpha] + [n for n, _ in self.beta]
        return max((math.hypot(*n) for n in sites), default=0.0)

    def sites(self) -> List[Site]:
        return sorted({n for n, _ in self.alpha} | {n for n, _ in self.beta})


def _powers(p) -> Powers:
    if not p:
        return ()
    if isinstance(p, dict):
        items = p.items()
    else:
        items = p
    acc: Dict[Site, int] = defaultdict(int)
    for n, e in items:
        if e < 0:
            raise ValueError("exponents must be nonnegative")
        if e:
            acc[as_site(n)] += int(e)
    return tuple(sorted(acc.items()))


def _merge(a: Powers, b: Powers) -> Powers:
    if not a:
        return b
    if not b:
        return a
    acc = dict(a)
    for n, e in b:
        acc[n] = acc.get(n, 0) + e
    return tuple(sorted(acc.items()))


def _lower(a: Powers, n: Site) -> Powers:
    out = []
    for m, e in a:
        if m == n:
            if e > 1:
                out.append((m, e - 1))
        else:
            out.append((m, e))
    return tuple(out)


def _sub_vec(a: Tuple[int, ...], p: int) -> Tuple[int, ...]:
    return a[:p] + (a[p] - 1,) + a[p + 1:]


# ---------- Domain ----------

@dataclass(frozen=True)
class WeightedDomain:
    r: float
    s: float
    rho: float

    def __post_init__(self):
        if self.r <= 0 or self.s <= 0 or self.rho <= 0:
            raise ValueError("r, s and rho must be positive")

    def weight(self, key: MultiIndex) -> float:
        """Majorant of |e^{i<k,theta>} I^l w^alpha wbar^beta| on the domain"""
        return (math.exp(key.k_norm * self.r) * self.s ** (2 * key.l_norm + key.degree)
                * math.exp(-self.rho * key.mode_weight))


# ---------- Series ----------

class FourierTaylorSeries:
    """
    Sparse map MultiIndex -> complex coefficient with truncation bounds.

    b is the number of angle/action pairs (0 for a series in the normal
    coordinates alone). Bounds left as None are not enforced.
    """

    __slots__ = ("terms", "b", "mode_bound", "degree_bound", "k_bound", "action_bound")

    def __init__(self, terms: Optional[Dict[MultiIndex, complex]] = None, b: int = 0,
                 mode_bound: Optional[float] = None, degree_bound: Optional[int] = None,
                 k_bound: Optional[int] = None, action_bound: Optional[int] = None):
        self.b = b
        self.mode_bound = mode_bound
        self.degree_bound = degree_bound
        self.k_bound = k_bound
        self.action_bound = action_bound
        self.terms: Dict[MultiIndex, complex] = {}
        for key, c in (terms or {}).items():
            if c != 0 and self.admits(key):
                self.terms[key] = complex(c)

    # --- construction ---

    @classmethod
    def zero_like(cls, other: "FourierTaylorSeries") -> "FourierTaylorSeries":
        return cls({}, **other.bounds())

    @classmethod
    def monomial(cls, c: complex, b: int = 0, k=None, l=None, alpha=None, beta=None,
                 **bounds) -> "FourierTaylorSeries":
        return cls({MultiIndex.make(b, k, l, alpha, beta): c}, b=b, **bounds)

    def bounds(self) -> Dict:
        return {"b": self.b, "mode_bound": self.mode_bound, "degree_bound": self.degree_bound,
                "k_bound": self.k_bound, "action_bound": self.action_bound}

    def with_terms(self, terms: Dict[MultiIndex, complex]) -> "FourierTaylorSeries":
        return FourierTaylorSeries(terms, **self.bounds())

    def admits(self, key: MultiIndex) -> bool:
        if len(key.k) != self.b:
            raise ValueError(f"index has b={len(key.k)}, series has b={self.b}")
        if self.degree_bound is not None and key.degree > self.degree_bound:
            return False
        if self.k_bound is not None and key.k_norm > self.k_bound:
            return False
        if self.action_bound is not None and key.l_norm > self.action_bound:
            return False
        if self.mode_bound is not None and key.max_mode > self.mode_bound + 1e-12:
            return False
        return True

    # --- container protocol ---

    def __len__(self) -> int:
        return len(self.terms)

    def __iter__(self) -> Iterator[MultiIndex]:
        return iter(self.terms)

    def items(self):
        return self.terms.items()

    def __getitem__(self, key: MultiIndex) -> complex:
        return self.terms.get(key, 0j)

    def coefficient(self, k=None, l=None, alpha=None, beta=None) -> complex:
        return self.terms.get(MultiIndex.make(self.b, k, l, alpha, beta), 0j)

    def is_zero(self) -> bool:
        return not self.terms

    def max_abs(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    def sites(self) -> List[Site]:
        out = set()
        for key in self.terms:
            out.update(key.sites())
        return sorted(out)

    def __repr__(self) -> str:
        return f"FourierTaylorSeries(b={self.b}, terms={len(self.terms)})"

    # --- arithmetic ---

    def __add__(self, other: "FourierTaylorSeries") -> "FourierTaylorSeries":
        out = dict(self.terms)
        for key, c in other.terms.items():
            out[key] = out.get(key, 0j) + c
        return self.with_terms(out)

    def __neg__(self) -> "FourierTaylorSeries":
        return self.scale(-1)

    def __sub__(self, other: "FourierTaylorSeries") -> "FourierTaylorSeries":
        return self + other.scale(-1)

    def scale(self, c: complex) -> "FourierTaylorSeries":
        if c == 0:
            return self.with_terms({})
        return self.with_terms({key: c * v for key, v in self.terms.items()})

    def __mul__(self, other):
        if isinstance(other, FourierTaylorSeries):
            return multiply(self, other)
        return self.scale(other)

    __rmul__ = __mul__

    def filter(self, pred: Callable[[MultiIndex, complex], bool]) -> "FourierTaylorSeries":
        return self.with_terms({key: c for key, c in self.terms.items() if pred(key, c)})

    def degree_part(self, d: int) -> "FourierTaylorSeries":
        return self.filter(lambda key, c: key.degree == d)

    def average(self) -> "FourierTaylorSeries":
        """The k = 0 part"""
        return self.filter(lambda key, c: not any(key.k))

    def truncate(self, **bounds) -> "FourierTaylorSeries":
        merged = self.bounds()
        merged.update(bounds)
        return FourierTaylorSeries(self.terms, **merged)

    def prune(self, rel_tol: Optional[float] = None) -> "FourierTaylorSeries":
        """Drop coefficients at or below rel_tol * max|c|"""
        tol = get_settings().drop_tolerance if rel_tol is None else rel_tol
        cut = tol * self.max_abs()
        return self.filter(lambda key, c: abs(c) > cut)

    def conjugate(self) -> "FourierTaylorSeries":
        """Complex conjugate as a function on the real phase space"""
        return self.with_terms({MultiIndex(tuple(-x for x in key.k), key.l, key.beta, key.alpha): c.conjugate()
                                for key, c in self.terms.items()})

    def real_part(self) -> "FourierTaylorSeries":
        return (self + self.conjugate()).scale(0.5)

    def is_real(self, tol: float = 1e-12) -> bool:
        diff = self - self.conjugate()
        return diff.max_abs() <= tol * max(1.0, self.max_abs())

    def derivative(self, kind: str, index) -> "FourierTaylorSeries":
        """Formal derivative w.r.t. theta_p, I_p, z_n or zbar_n"""
        out: Dict[MultiIndex, complex] = defaultdict(complex)
        if kind == "theta":
            for key, c in self.terms.items():
                if key.k[index]:
                    out[key] += 1j * key.k[index] * c
        elif kind == "I":
            for key, c in self.terms.items():
                if key.l[index]:
                    out[MultiIndex(key.k, _sub_vec(key.l, index), key.alpha, key.beta)] += key.l[index] * c
        elif kind in ("z", "zbar"):
            n = as_site(index)
            for key, c in self.terms.items():
                powers = dict(key.alpha if kind == "z" else key.beta)
                e = powers.get(n, 0)
                if not e:
                    continue
                if kind == "z":
                    new = MultiIndex(key.k, key.l, _lower(key.alpha, n), key.beta)
                else:
                    new = MultiIndex(key.k, key.l, key.alpha, _lower(key.beta, n))
                out[new] += e * c
        else:
            raise ValueError(f"unknown variable kind {kind!r}")
        return self.with_terms(dict(out))

    # --- serialization ---

    def to_jsonl(self) -> str:
        lines = []
        for key in sorted(self.terms):
            c = self.terms[key]
            lines.append(json.dumps({
                "k": list(key.k),
                "l": list(key.l),
                "alpha": {f"{n[0]},{n[1]}": p for n, p in key.alpha},
                "beta": {f"{n[0]},{n[1]}": p for n, p in key.beta},
                "re": c.real,
                "im": c.imag,
            }))
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_jsonl(cls, text: str, b: Optional[int] = None, **bounds) -> "FourierTaylorSeries":
        terms: Dict[MultiIndex, complex] = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            row = json.loads(line)
            if b is None:
                b = len(row["k"])

            def parse(d):
                return {tuple(int(x) for x in key.split(",")): p for key, p in d.items()}

            key = MultiIndex.make(b, row["k"], row["l"], parse(row["alpha"]), parse(row["beta"]))
            terms[key] = terms.get(key, 0j) + complex(row["re"], row["im"])
        return cls(terms, b=b or 0, **bounds)


def _result_bounds(F: FourierTaylorSeries, G: FourierTaylorSeries) -> Dict:
    def pick(a, b):
        if a is None:
            return b
        if b is None:
            return a
        return min(a, b)

    if F.b != G.b:
        raise ValueError(f"series have different b ({F.b} vs {G.b})")
    return {"b": F.b,
            "mode_bound": pick(F.mode_bound, G.mode_bound),
            "degree_bound": pick(F.degree_bound, G.degree_bound),
            "k_bound": pick(F.k_bound, G.k_bound),
            "action_bound": pick(F.action_bound, G.action_bound)}


# ---------- Products and brackets ----------

def multiply(F: FourierTaylorSeries, G: FourierTaylorSeries) -> FourierTaylorSeries:
    bounds = _result_bounds(F, G)
    out: Dict[MultiIndex, complex] = defaultdict(complex)
    for f, cf in F.items():
        for g, cg in G.items():
            key = MultiIndex(tuple(a + b for a, b in zip(f.k, g.k)),
                             tuple(a + b for a, b in zip(f.l, g.l)),
                             _merge(f.alpha, g.alpha), _merge(f.beta, g.beta))
            out[key] += cf * cg
    return FourierTaylorSeries(dict(out), **bounds)


def _bracket_index(G: FourierTaylorSeries):
    """G's terms indexed by which variables they carry"""
    by_theta, by_I = defaultdict(list), defaultdict(list)
    by_z, by_zbar = defaultdict(list), defaultdict(list)
    for key, c in G.items():
        entry = (key, c)
        for p in range(G.b):
            if key.k[p]:
                by_theta[p].append(entry)
            if key.l[p]:
                by_I[p].append(entry)
        for n, _ in key.alpha:
            by_z[n].append(entry)
        for n, _ in key.beta:
            by_zbar[n].append(entry)
    return by_theta, by_I, by_z, by_zbar


def poisson_bracket(F: FourierTaylorSeries, G: FourierTaylorSeries) -> FourierTaylorSeries:
    """
    Exact termwise bracket {F,G}, truncated to the common bounds.

    For monomials f, g the angle-action part lands on (k+k', l+l'-e_p) with
    coefficient i c c' (l_p k'_p - k_p l'_p); the normal part lands on
    (alpha+alpha'-e_n, beta+beta'-e_n) with i c c' (alpha_n beta'_n - beta_n alpha'_n).
    """
    bounds = _result_bounds(F, G)
    template = FourierTaylorSeries({}, **bounds)
    by_theta, by_I, by_z, by_zbar = _bracket_index(G)
    out: Dict[MultiIndex, complex] = defaultdict(complex)

    for f, cf in F.items():
        partners = {}
        for p in range(F.b):
            if f.l[p]:
                for g, cg in by_theta.get(p, ()):
                    partners[g] = cg
            if f.k[p]:
                for g, cg in by_I.get(p, ()):
                    partners[g] = cg
        f_alpha, f_beta = dict(f.alpha), dict(f.beta)
        for n in f_alpha:
            for g, cg in by_zbar.get(n, ()):
                partners[g] = cg
        for n in f_beta:
            for g, cg in by_z.get(n, ()):
                partners[g] = cg

        for g, cg in partners.items():
            k = tuple(a + b for a, b in zip(f.k, g.k))
            l_sum = tuple(a + b for a, b in zip(f.l, g.l))
            alpha = _merge(f.alpha, g.alpha)
            beta = _merge(f.beta, g.beta)
            cc = 1j * cf * cg
            for p in range(F.b):
                w = f.l[p] * g.k[p] - f.k[p] * g.l[p]
                if w:
                    out[MultiIndex(k, _sub_vec(l_sum, p), alpha, beta)] += cc * w
            g_alpha, g_beta = dict(g.alpha), dict(g.beta)
            for n in set(f_alpha) | set(f_beta):
                w = f_alpha.get(n, 0) * g_beta.get(n, 0) - f_beta.get(n, 0) * g_alpha.get(n, 0)
                if w:
                    out[MultiIndex(k, l_sum, _lower(alpha, n), _lower(beta, n))] += cc * w

    return FourierTaylorSeries({key: c for key, c in out.items() if c != 0 and template.admits(key)}, **bounds)


# ---------- Norms ----------

def majorant_norm(F: FourierTaylorSeries, D: WeightedDomain) -> float:
    return sum(abs(c) * D.weight(key) for key, c in F.items())


def vector_field_norm(F: FourierTaylorSeries, D: WeightedDomain) -> float:
    """
    ||F_I|| + s^-2 ||F_theta|| + s^-1 sum_n (||F_{w_n}|| + ||F_{wbar_n}||) e^{|n| rho}

    Each component is the majorant norm of the formal derivative; the
    vector components are summed in l1.
    """
    total = 0.0
    s, rho = D.s, D.rho
    for key, c in F.items():
        base = abs(c) * D.weight(key)
        if not base:
            continue
        if key.l_norm:
            total += key.l_norm * base / s ** 2
        if key.k_norm:
            total += key.k_norm * base / s ** 2
        for n, p in key.alpha + key.beta:
            total += p * base / s ** 2 * math.exp(2 * rho * math.hypot(*n))
    return total


# ---------- Truncation ----------

def truncate_R(P: FourierTaylorSeries, K: int, L2_sites: Iterable[Site], blocks=None) -> FourierTaylorSeries:
    """
    The part of P that the homological equation removes.

    Keeps |k| <= K and:
      degree 0 with |l| <= 1;
      degree 1 with l = 0 on block sites |n| <= K (L2 sites always);
      degree 2 with l = 0: z z / zbar zbar with |i+j| <= K, z zbar with
      |i-j| <= K (any pair touching an L2 site is kept).
    """
    L2 = {as_site(n) for n in L2_sites}
    if blocks is not None:
        block_sites = {s for blk in blocks for s in blk.members}
    else:
        block_sites = None

    def keep(key: MultiIndex, c) -> bool:
        if key.k_norm > K:
            return False
        d = key.degree
        if d == 0:
            return key.l_norm <= 1
        if key.l_norm or d > 2:
            return False
        sites = [n for n, p in key.alpha for _ in range(p)] + [n for n, p in key.beta for _ in range(p)]
        if block_sites is not None and any(n not in block_sites and n not in L2 for n in sites):
            return False
        if any(n in L2 for n in sites):
            return True
        if d == 1:
            return math.hypot(*sites[0]) <= K
        na, nb = key.degrees
        a, b = sites
        if na == 1:
            diff = (a[0] - b[0], a[1] - b[1])
            return math.hypot(*diff) <= K
        summ = (a[0] + b[0], a[1] + b[1])
        return math.hypot(*summ) <= K

    return P.filter(keep)


# ---------- Lie series ----------

@dataclass
class LieTransformResult:
    series: FourierTaylorSeries
    remainder: Optional[float]
    order_used: int


def lie_series(H: FourierTaylorSeries, F: FourierTaylorSeries, order: Optional[int] = None,
               domain: Optional[WeightedDomain] = None) -> LieTransformResult:
    """
    H o phi_F = sum_{j<=order} ad_F^j H / j!, ad_F H = {H,F}.

    When a domain is given the majorant norm of the first discarded term is
    returned as the remainder estimate.
    """
    order = get_settings().lie_order if order is None else order
    if order < 1:
        raise ValueError("order must be at least 1")
    total = H
    current = H
    used = 0
    for j in range(1, order + 1):
        current = poisson_bracket(current, F).scale(1.0 / j)
        if current.is_zero():
            break
        total = total + current
        used = j
    remainder = None
    if domain is not None:
        tail = poisson_bracket(current, F).scale(1.0 / (order + 1)) if not current.is_zero() else current
        remainder = majorant_norm(tail, domain)
    logger.debug(f"Lie series: {len(H)} -> {len(total)} terms, order {used}")
    return LieTransformResult(total.prune(), remainder, used)


def lie_transform(H: FourierTaylorSeries, F: FourierTaylorSeries, order: Optional[int] = None) -> FourierTaylorSeries:
    return lie_series(H, F, order).series


# ---------- Numeric evaluation ----------

class CompiledSeries:
    """
    Vectorized evaluator of a series and its Hamiltonian vector field.

    A point is (theta, I, z, zbar) with z/zbar ordered as `self.sites`.
    The field is (theta', I', z', zbar') = (-F_I, F_theta, i F_zbar, -i F_z).
    """

    def __init__(self, F: FourierTaylorSeries, sites: Optional[Sequence[Site]] = None):
        self.b = F.b
        self.sites = list(sites) if sites is not None else F.sites()
        pos = {n: i for i, n in enumerate(self.sites)}
        keys = list(F.terms)
        T, N = len(keys), len(self.sites)
        self.coeffs = np.array([F.terms[key] for key in keys], dtype=complex)
        self.K = np.zeros((T, self.b))
        self.L = np.zeros((T, self.b), dtype=int)
        self.A = np.zeros((T, N), dtype=int)
        self.B = np.zeros((T, N), dtype=int)
        for t, key in enumerate(keys):
            self.K[t] = key.k
            self.L[t] = key.l
            for n, p in key.alpha:
                self.A[t, pos[n]] = p
            for n, p in key.beta:
                self.B[t, pos[n]] = p

    @property
    def dim(self) -> int:
        return 2 * self.b + 2 * len(self.sites)

    def split(self, y: np.ndarray):
        b, N = self.b, len(self.sites)
        return y[:b], y[b:2 * b], y[2 * b:2 * b + N], y[2 * b + N:]

    @staticmethod
    def _partial(P: np.ndarray, base: np.ndarray, x: np.ndarray, col: int):
        """d/dx_col of base * prod x^P, for the rows where P[:, col] > 0"""
        rows = np.nonzero(P[:, col])[0]
        if not rows.size:
            return rows, rows
        powers = x[None, :] ** P[rows]
        e = P[rows, col]
        powers[:, col] = e * x[col] ** (e - 1)
        return rows, base[rows] * np.prod(powers, axis=1)

    def _parts(self, theta, I, z, zbar):
        phase = self.coeffs * np.exp(1j * (self.K @ theta))
        pI = np.prod(I[None, :] ** self.L, axis=1) if self.b else np.ones(len(self.coeffs))
        pz = np.prod(z[None, :] ** self.A, axis=1) if len(self.sites) else np.ones(len(self.coeffs))
        pzb = np.prod(zbar[None, :] ** self.B, axis=1) if len(self.sites) else np.ones(len(self.coeffs))
        return phase, pI, pz, pzb

    def value(self, y: np.ndarray) -> complex:
        theta, I, z, zbar = self.split(np.asarray(y, dtype=complex))
        phase, pI, pz, pzb = self._parts(theta, I, z, zbar)
        return complex(np.sum(phase * pI * pz * pzb))

    def vector_field(self, y: np.ndarray) -> np.ndarray:
        theta, I, z, zbar = self.split(np.asarray(y, dtype=complex))
        phase, pI, pz, pzb = self._parts(theta, I, z, zbar)
        full = phase * pI * pz * pzb
        N = len(self.sites)
        out = np.zeros(self.dim, dtype=complex)
        for p in range(self.b):
            out[p] = -self._sum_partial(self.L, phase * pz * pzb, I, p)
            out[self.b + p] = np.sum(1j * self.K[:, p] * full)
        for j in range(N):
            out[2 * self.b + j] = 1j * self._sum_partial(self.B, phase * pI * pz, zbar, j)
            out[2 * self.b + N + j] = -1j * self._sum_partial(self.A, phase * pI * pzb, z, j)
        return out

    def _sum_partial(self, P, base, x, col) -> complex:
        rows, vals = self._partial(P, base, x, col)
        return complex(np.sum(vals)) if rows.size else 0j


def hamiltonian_vector_field(F: FourierTaylorSeries, point: np.ndarray,
                             sites: Optional[Sequence[Site]] = None) -> np.ndarray:
    return CompiledSeries(F, sites).vector_field(point)
