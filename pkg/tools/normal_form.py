"""
Birkhoff normal form of the truncated 2D cubic NLS and the rotated form
N + B + Bbar + P used by the KAM iteration.

Pipeline (build_normal_form):
    quartic lattice Hamiltonian in q
    -> time-one map of the Birkhoff generator (Lie series)
    -> action-angle variables q_j = sqrt(I_j + xi_j) e^{-i theta_j} on S
    -> scaling xi -> eps^3 xi, I -> eps^5 I, w -> eps^{5/2} w, H -> eps^-8 H
    -> symplectic rotation removing the angles from the resonant quadratic terms
"""

import logging
import math
from dataclasses import dataclass, field, replace
from itertools import product
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel
from scipy import linalg
from scipy.special import binom

from tools.config import get_settings
from tools.errors import (
    ClassificationConflictError,
    NonAdmissibleError,
    NonUnitaryError,
    PairKindError,
    ParameterError,
)
from tools.hamiltonian_algebra import (
    FourierTaylorSeries,
    MultiIndex,
    WeightedDomain,
    lie_series,
    multiply,
    vector_field_norm,
)
from tools.lattice_resonance import (
    Block,
    PairKind,
    ResonantPair,
    Site,
    TangentialSet,
    as_site,
    block_partition,
    classify_sites,
    galerkin_disc,
    verify_admissible,
)

logger = logging.getLogger("normal_form")

PI2 = math.pi ** 2


# ---------- Parameters and frequencies ----------

@dataclass(frozen=True)
class Parameters:
    xi: Tuple[float, ...]
    eps: float
    box: Tuple[float, float] = (1.0, 2.0)

    def __post_init__(self):
        object.__setattr__(self, "xi", tuple(float(x) for x in self.xi))
        if self.eps <= 0:
            raise ParameterError("eps must be positive", {"eps": self.eps})
        if any(x <= 0 for x in self.xi):
            raise ParameterError("xi must be positive", {"xi": list(self.xi)})
        lo, hi = self.box
        if not 0 < lo <= hi:
            raise ParameterError("box must satisfy 0 < xi_min <= xi_max", {"box": list(self.box)})

    @property
    def xi_array(self) -> np.ndarray:
        return np.array(self.xi)

    def in_box(self) -> bool:
        lo, hi = self.box
        return all(lo <= x <= hi for x in self.xi)


@dataclass
class FrequencyMap:
    omega: np.ndarray
    Omega: Dict[Site, float]
    tangential: TangentialSet
    a_exponent: float = 3.0
    l1_branch: Dict[Site, int] = field(default_factory=dict)
    eps: Optional[float] = None
    xi_total: float = 0.0

    def omega_of(self, i: Site) -> float:
        return float(self.omega[self.tangential.index(as_site(i))])

    def Omega_of(self, n: Sequence[int]) -> float:
        """Normal frequency; sites outside the map get the plain value"""
        n = as_site(n)
        if n in self.Omega:
            return self.Omega[n]
        if self.eps is None:
            raise KeyError(n)
        return n.norm2 / self.eps ** 3 + self.xi_total / (2 * PI2)

    def to_dict(self) -> Dict:
        return {
            "omega": [float(x) for x in self.omega],
            "Omega": [{"site": list(n), "value": float(v)} for n, v in sorted(self.Omega.items())],
            "a_exponent": self.a_exponent,
            "l1_branch": [{"site": list(n), "branch": b} for n, b in sorted(self.l1_branch.items())],
        }


@dataclass
class L2BlockMatrix:
    pair: ResonantPair
    entries: np.ndarray

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.entries)

    @property
    def hyperbolic(self) -> bool:
        return bool(np.any(np.abs(self.eigenvalues.imag) > 1e-14 * max(1.0, np.abs(self.entries).max())))

    def to_dict(self) -> Dict:
        ev = self.eigenvalues
        return {"pair": self.pair.to_dict(),
                "entries": [[float(x.real) for x in row] for row in self.entries],
                "eigenvalues": [[float(e.real), float(e.imag)] for e in ev]}


def _check_params(p: Parameters, S: TangentialSet):
    if len(p.xi) != S.b:
        raise ParameterError(f"xi has {len(p.xi)} entries, S has {S.b} sites")


def tangential_frequencies(p: Parameters, S: TangentialSet) -> np.ndarray:
    """omega_i = eps^-3 |i|^2 - xi_i / 4 pi^2 + sum_j xi_j / 2 pi^2"""
    _check_params(p, S)
    xi = p.xi_array
    lam = np.array([s.norm2 for s in S.sites], dtype=float)
    return lam / p.eps ** 3 - xi / (4 * PI2) + xi.sum() / (2 * PI2)


def l1_split(xi_i: float, xi_j: float) -> float:
    return math.sqrt(xi_i * xi_i + 14 * xi_i * xi_j + xi_j * xi_j) / (8 * PI2)


def _l1_upper(pair: ResonantPair, xi_i: float, xi_j: float) -> bool:
    """Whether pair.n carries the + branch of its first-type split"""
    if xi_i != xi_j:
        return xi_i < xi_j
    return pair.n < pair.m


def normal_frequencies(p: Parameters, S: TangentialSet, sites: Iterable[Site],
                       L1: Dict[Site, ResonantPair], L2: Dict[Site, ResonantPair]) -> FrequencyMap:
    """
    Plain sites: eps^-3|n|^2 + sum xi / 2 pi^2.
    First-type sites: eps^-3(|n|^2+|i|^2) + sum xi / pi^2 - (xi_i+xi_j)/8 pi^2 +- split.
    Second-type sites keep the plain value; their dynamics live in l2_block_matrix.
    """
    _check_params(p, S)
    omega = tangential_frequencies(p, S)
    total = sum(p.xi)
    xi = {s: x for s, x in zip(S.sites, p.xi)}
    Omega: Dict[Site, float] = {}
    branch: Dict[Site, int] = {}
    for n in sites:
        n = as_site(n)
        if n in L1 and n in L2:
            raise ClassificationConflictError(f"site {tuple(n)} is both first and second type",
                                              {"site": list(n)})
        if n in L1:
            pair = L1[n]
            xi_i, xi_j = xi[pair.i], xi[pair.j]
            sign = 1 if _l1_upper(pair, xi_i, xi_j) else -1
            Omega[n] = ((n.norm2 + pair.i.norm2) / p.eps ** 3 + total / PI2
                        - (xi_i + xi_j) / (8 * PI2) + sign * l1_split(xi_i, xi_j))
            branch[n] = sign
        else:
            Omega[n] = n.norm2 / p.eps ** 3 + total / (2 * PI2)
    return FrequencyMap(omega=omega, Omega=Omega, tangential=S, a_exponent=3.0, l1_branch=branch,
                        eps=p.eps, xi_total=float(total))


def l2_block_matrix(p: Parameters, pair: ResonantPair, fm: FrequencyMap) -> L2BlockMatrix:
    """[[Omega_n - omega_i, -a], [a, -(Omega_m - omega_j)]] with a = sqrt(xi_i xi_j) / 2 pi^2"""
    if pair.kind != PairKind.SECOND:
        raise PairKindError("l2_block_matrix needs a second-type pair", {"pair": pair.to_dict()})
    S = fm.tangential
    xi_i, xi_j = p.xi[S.index(pair.i)], p.xi[S.index(pair.j)]
    a = math.sqrt(xi_i * xi_j) / (2 * PI2)
    d_n = fm.Omega[pair.n] - fm.omega_of(pair.i)
    d_m = fm.Omega[pair.m] - fm.omega_of(pair.j)
    return L2BlockMatrix(pair, np.array([[d_n, -a], [a, -d_m]]))


def is_partially_hyperbolic(xi_i: float, xi_j: float) -> bool:
    if xi_i <= 0 or xi_j <= 0:
        raise ParameterError("amplitudes must be positive", {"xi_i": xi_i, "xi_j": xi_j})
    return xi_i * xi_i + xi_j * xi_j < 14 * xi_i * xi_j


# ---------- Lattice Hamiltonian and Birkhoff generator ----------

def galerkin_sites(mode_bound: int) -> List[Site]:
    return galerkin_disc(mode_bound)


def _quadruples(sites: Sequence[Site]):
    """Ordered (i, j, n, m) with i - j + n - m = 0 inside the site set"""
    pool = set(sites)
    for i in sites:
        for j in sites:
            for n in sites:
                m = Site(i.n1 - j.n1 + n.n1, i.n2 - j.n2 + n.n2)
                if m in pool:
                    yield i, j, n, m


def quartic_hamiltonian(S: TangentialSet, sites: Sequence[Site],
                        degree_bound: Optional[int] = None) -> FourierTaylorSeries:
    """sum lambda_n |q_n|^2 + (1/8 pi^2) sum q_i qbar_j q_n qbar_m, normal degree <= degree_bound"""
    terms: Dict[MultiIndex, complex] = {}
    for n in sites:
        key = MultiIndex.make(0, alpha={n: 1}, beta={n: 1})
        terms[key] = complex(n.norm2)
    for i, j, n, m in _quadruples(sites):
        if degree_bound is not None and sum(x not in S for x in (i, j, n, m)) > degree_bound:
            continue
        key = MultiIndex.make(0, alpha=[(i, 1), (n, 1)], beta=[(j, 1), (m, 1)])
        terms[key] = terms.get(key, 0j) + 1 / (8 * PI2)
    return FourierTaylorSeries(terms, b=0, degree_bound=6)


def birkhoff_coefficient(i: Site, j: Site, n: Site, m: Site) -> complex:
    delta = i.norm2 - j.norm2 + n.norm2 - m.norm2
    return 1j / (8 * PI2 * delta)


def birkhoff_generator(S: TangentialSet, mode_bound: int) -> FourierTaylorSeries:
    """
    Sum of i / (8 pi^2 (lambda_i - lambda_j + lambda_n - lambda_m)) q_i qbar_j q_n qbar_m
    over non-resonant quadruples with at least two tangential positions.
    """
    if mode_bound * mode_bound < max(s.norm2 for s in S.sites):
        raise ParameterError("mode_bound must cover the tangential sites", {"mode_bound": mode_bound})
    sites = galerkin_sites(mode_bound)
    terms: Dict[MultiIndex, complex] = {}
    for i, j, n, m in _quadruples(sites):
        if sum(x in S for x in (i, j, n, m)) < 2:
            continue
        if i.norm2 - j.norm2 + n.norm2 - m.norm2 == 0:
            continue
        key = MultiIndex.make(0, alpha=[(i, 1), (n, 1)], beta=[(j, 1), (m, 1)])
        terms[key] = terms.get(key, 0j) + birkhoff_coefficient(i, j, n, m)
    return FourierTaylorSeries(terms, b=0, degree_bound=6)


# ---------- Action-angle substitution and scaling ----------

def action_angle_substitution(H: FourierTaylorSeries, S: TangentialSet, xi_phys: Sequence[float],
                              action_order: int = 2, degree_bound: Optional[int] = None,
                              mode_bound: Optional[float] = None) -> FourierTaylorSeries:
    """q_j = sqrt(I_j + xi_j) e^{-i theta_j} on S, Taylor-expanded in I to |l| <= action_order"""
    b = S.b
    pos = {s: p for p, s in enumerate(S.sites)}
    out: Dict[MultiIndex, complex] = {}
    for key, c in H.items():
        a = [0] * b
        a_bar = [0] * b
        alpha, beta = [], []
        for n, e in key.alpha:
            if n in pos:
                a[pos[n]] += e
            else:
                alpha.append((n, e))
        for n, e in key.beta:
            if n in pos:
                a_bar[pos[n]] += e
            else:
                beta.append((n, e))
        if degree_bound is not None and sum(e for _, e in alpha + beta) > degree_bound:
            continue
        k = tuple(a_bar[p] - a[p] for p in range(b))
        half = [(a[p] + a_bar[p]) / 2 for p in range(b)]
        for l in product(range(action_order + 1), repeat=b):
            if sum(l) > action_order:
                continue
            coeff = c
            for p in range(b):
                if half[p] == 0:
                    if l[p]:
                        coeff = 0
                        break
                    continue
                coeff *= binom(half[p], l[p]) * xi_phys[p] ** (half[p] - l[p])
            if coeff == 0:
                continue
            new = MultiIndex(k, tuple(l), tuple(sorted(alpha)), tuple(sorted(beta)))
            out[new] = out.get(new, 0j) + coeff
    return FourierTaylorSeries(out, b=b, degree_bound=degree_bound, action_bound=action_order,
                               mode_bound=mode_bound)


def scale_series(H: FourierTaylorSeries, eps: float) -> FourierTaylorSeries:
    """I -> eps^5 I, w -> eps^{5/2} w, H -> eps^-8 H"""
    return H.with_terms({key: c * eps ** (5 * key.l_norm + 2.5 * key.degree - 8)
                         for key, c in H.items()})


# ---------- Symplectic rotation ----------

@dataclass
class SymplecticRotation:
    """
    z = S E w, I_+ = I + sum_j |w_j|^2 k_j, theta unchanged,
    E = diag(e^{i<k_j, theta>}) over `sites`.
    """
    sites: Tuple[Site, ...]
    k_vectors: Tuple[Tuple[int, ...], ...]
    S: np.ndarray

    def check_unitary(self, tol: float = 1e-12):
        S = np.asarray(self.S, dtype=complex)
        m = len(self.sites)
        if S.shape != (m, m) or len(self.k_vectors) != m:
            raise NonUnitaryError("rotation shape mismatch", {"sites": m, "S": list(S.shape)})
        err = np.abs(S.T @ S.conj() - np.eye(m)).max()
        if err > tol:
            raise NonUnitaryError(f"S^T Sbar deviates from I by {err:.3e}", {"deviation": float(err)})

    def pullback_point(self, y: np.ndarray, b: int, sites: Sequence[Site]) -> np.ndarray:
        """New coordinates (theta, I_+, z, zbar) -> old (theta, I, w, wbar)"""
        y = np.asarray(y, dtype=complex)
        N = len(sites)
        theta, I, z, zbar = y[:b], y[b:2 * b], y[2 * b:2 * b + N], y[2 * b + N:]
        idx = [list(sites).index(s) for s in self.sites]
        S = np.asarray(self.S, dtype=complex)
        u = S.conj().T @ z[idx]
        ubar = S.T @ zbar[idx]
        K = np.array(self.k_vectors, dtype=float).reshape(len(self.sites), b)
        phase = np.exp(-1j * (K @ theta))
        w, wbar = z.copy(), zbar.copy()
        w[idx] = phase * u
        wbar[idx] = ubar / phase
        I_old = I - (u * ubar) @ K
        return np.concatenate([theta, I_old, w, wbar])


def _substitutions(rot: SymplecticRotation, bounds: Dict):
    b = bounds["b"]
    S = np.asarray(rot.S, dtype=complex)
    W, Wbar = {}, {}
    for jj, site in enumerate(rot.sites):
        k = tuple(-x for x in rot.k_vectors[jj])
        W[site] = FourierTaylorSeries({MultiIndex.make(b, k=k, alpha={a: 1}): S[aa, jj].conjugate()
                                       for aa, a in enumerate(rot.sites)}, **bounds)
        Wbar[site] = FourierTaylorSeries({MultiIndex.make(b, k=rot.k_vectors[jj], beta={a: 1}): S[aa, jj]
                                          for aa, a in enumerate(rot.sites)}, **bounds)
    shifts = {}
    for p in range(b):
        terms = {MultiIndex.make(b, l=tuple(int(q == p) for q in range(b))): 1.0}
        for jj in range(len(rot.sites)):
            kp = rot.k_vectors[jj][p]
            if not kp:
                continue
            for aa, a in enumerate(rot.sites):
                for bb, c in enumerate(rot.sites):
                    coeff = -kp * S[aa, jj].conjugate() * S[bb, jj]
                    if coeff:
                        key = MultiIndex.make(b, alpha={a: 1}, beta={c: 1})
                        terms[key] = terms.get(key, 0j) + coeff
        shifts[p] = FourierTaylorSeries(terms, **bounds)
    return W, Wbar, shifts


def apply_symplectic_rotation(rot, H: FourierTaylorSeries) -> FourierTaylorSeries:
    """Express H (in theta, I, w) in the rotated variables (theta, I_+, z)"""
    if isinstance(rot, (list, tuple)):
        for r in rot:
            H = apply_symplectic_rotation(r, H)
        return H
    rot.check_unitary()
    bounds = H.bounds()
    W, Wbar, shifts = _substitutions(rot, bounds)
    moving = set(rot.sites)
    shifted = {p for p in range(H.b) if any(k[p] for k in rot.k_vectors)}
    cache: Dict[Tuple, FourierTaylorSeries] = {}

    def power(kind, var, e):
        key = (kind, var, e)
        if key not in cache:
            base = {"w": W, "wbar": Wbar, "I": shifts}[kind][var]
            cache[key] = base if e == 1 else multiply(power(kind, var, e - 1), base)
        return cache[key]

    out: Dict[MultiIndex, complex] = {}
    for key, c in H.items():
        touches = any(n in moving for n, _ in key.alpha + key.beta) or any(key.l[p] for p in shifted)
        if not touches:
            out[key] = out.get(key, 0j) + c
            continue
        l_rest = tuple(0 if p in shifted else key.l[p] for p in range(H.b))
        rest = MultiIndex(key.k, l_rest,
                          tuple((n, e) for n, e in key.alpha if n not in moving),
                          tuple((n, e) for n, e in key.beta if n not in moving))
        acc = FourierTaylorSeries({rest: c}, **bounds)
        for n, e in key.alpha:
            if n in moving:
                acc = multiply(acc, power("w", n, e))
        for n, e in key.beta:
            if n in moving:
                acc = multiply(acc, power("wbar", n, e))
        for p in shifted:
            if key.l[p]:
                acc = multiply(acc, power("I", p, key.l[p]))
        for k2, c2 in acc.items():
            out[k2] = out.get(k2, 0j) + c2
    return FourierTaylorSeries(out, **bounds)


# ---------- Normal form state ----------

@dataclass
class L2Coefficients:
    """Coefficients of d_n |z_n|^2 + d_m |z_m|^2 + b z_n z_m + c zbar_n zbar_m"""
    pair: ResonantPair
    d_n: float
    d_m: float
    b: complex
    c: complex

    @property
    def generator(self) -> np.ndarray:
        return np.array([[self.d_n, -self.b], [self.c, -self.d_m]], dtype=complex)

    def to_dict(self) -> Dict:
        return {"pair": self.pair.to_dict(), "d_n": self.d_n, "d_m": self.d_m,
                "b": [self.b.real, self.b.imag], "c": [self.c.real, self.c.imag]}


@dataclass
class NormalFormState:
    omega: np.ndarray
    quad: Dict[Tuple[Site, Site], complex]
    l2: List[L2Coefficients]
    S: TangentialSet
    params: Parameters
    sites: Tuple[Site, ...]
    rotations: List[SymplecticRotation] = field(default_factory=list)
    birkhoff: Optional[FourierTaylorSeries] = None
    l1_pairs: List[ResonantPair] = field(default_factory=list)

    @property
    def b(self) -> int:
        return self.S.b

    @property
    def l2_sites(self) -> set:
        return {s for c in self.l2 for s in (c.pair.n, c.pair.m)}

    @property
    def plain_sites(self) -> List[Site]:
        l2 = self.l2_sites
        return [s for s in self.sites if s not in l2]

    def blocks(self, Delta: int) -> List[Block]:
        return block_partition(self.plain_sites, Delta)

    def block_matrix(self, block: Block) -> np.ndarray:
        m = len(block.members)
        A = np.zeros((m, m), dtype=complex)
        for x, a in enumerate(block.members):
            for y, c in enumerate(block.members):
                A[x, y] = self.quad.get((a, c), 0j)
        return A

    def Omega(self, n: Site) -> float:
        return float(self.quad.get((n, n), 0j).real)

    def l2_by_site(self) -> Dict[Site, L2Coefficients]:
        out = {}
        for c in self.l2:
            out[c.pair.n] = c
            out[c.pair.m] = c
        return out

    def frequency_map(self) -> FrequencyMap:
        Omega = {n: self.Omega(n) for n in self.plain_sites}
        for c in self.l2:
            Omega[c.pair.n] = c.d_n + float(self.omega[self.S.index(c.pair.i)])
            Omega[c.pair.m] = c.d_m + float(self.omega[self.S.index(c.pair.j)])
        return FrequencyMap(omega=np.array(self.omega, dtype=float), Omega=Omega, tangential=self.S,
                            eps=self.params.eps, xi_total=float(sum(self.params.xi)))

    def l2_matrices(self) -> Dict[Tuple[Site, Site], np.ndarray]:
        return {(c.pair.n, c.pair.m): c.generator for c in self.l2}

    def _bounds(self, like: Optional[FourierTaylorSeries]) -> Dict:
        return like.bounds() if like is not None else {"b": self.b}

    def N_series(self, like: Optional[FourierTaylorSeries] = None) -> FourierTaylorSeries:
        b = self.b
        terms = {}
        for p in range(b):
            terms[MultiIndex.make(b, l=tuple(int(q == p) for q in range(b)))] = complex(self.omega[p])
        for (a, c), v in self.quad.items():
            terms[MultiIndex.make(b, alpha={a: 1}, beta={c: 1})] = v
        for c in self.l2:
            terms[MultiIndex.make(b, alpha={c.pair.n: 1}, beta={c.pair.n: 1})] = c.d_n
            terms[MultiIndex.make(b, alpha={c.pair.m: 1}, beta={c.pair.m: 1})] = c.d_m
        return FourierTaylorSeries(terms, **self._bounds(like))

    def B_series(self, like: Optional[FourierTaylorSeries] = None) -> FourierTaylorSeries:
        terms = {MultiIndex.make(self.b, alpha=[(c.pair.n, 1), (c.pair.m, 1)]): c.b for c in self.l2}
        return FourierTaylorSeries(terms, **self._bounds(like))

    def Bbar_series(self, like: Optional[FourierTaylorSeries] = None) -> FourierTaylorSeries:
        terms = {MultiIndex.make(self.b, beta=[(c.pair.n, 1), (c.pair.m, 1)]): c.c for c in self.l2}
        return FourierTaylorSeries(terms, **self._bounds(like))

    def integrable_part(self, like: Optional[FourierTaylorSeries] = None) -> FourierTaylorSeries:
        return self.N_series(like) + self.B_series(like) + self.Bbar_series(like)

    def copy(self) -> "NormalFormState":
        return replace(self, omega=np.array(self.omega), quad=dict(self.quad),
                       l2=[replace(c) for c in self.l2])

    def to_dict(self) -> Dict:
        return {
            "S": self.S.to_list(),
            "xi": list(self.params.xi),
            "eps": self.params.eps,
            "omega": [float(x) for x in self.omega],
            "quadratic": [{"a": list(a), "b": list(c), "re": v.real, "im": v.imag}
                          for (a, c), v in sorted(self.quad.items())],
            "l2": [c.to_dict() for c in self.l2],
            "l1_pairs": [p.to_dict() for p in self.l1_pairs],
        }


def _unique_pairs(classified: Dict[Site, ResonantPair], present: set) -> List[ResonantPair]:
    seen, out = set(), []
    for n in sorted(classified):
        pair = classified[n]
        key = frozenset((pair.n, pair.m))
        if key in seen or pair.m not in present:
            continue
        seen.add(key)
        out.append(pair)
    return out


def _unit(b: int, p: int, sign: int = 1) -> Tuple[int, ...]:
    return tuple(sign * int(q == p) for q in range(b))


def build_normal_form(p: Parameters, S: TangentialSet, mode_bound: int,
                      degree_bound: int) -> Tuple[NormalFormState, FourierTaylorSeries]:
    """
    Build N + B + Bbar + P on the Galerkin disc |n| <= mode_bound.

    Returns the state (frequencies, quadratic coefficients, second-type pair
    coefficients, rotations) and the perturbation P in scaled, rotated
    variables, keeping monomials of normal degree <= degree_bound.
    """
    _check_params(p, S)
    if mode_bound <= 0 or degree_bound <= 0:
        raise ParameterError("bounds must be positive", {"mode_bound": mode_bound, "degree_bound": degree_bound})
    report = verify_admissible(S, max(2 * mode_bound, 2 * max(math.isqrt(s.norm2) + 1 for s in S.sites)))
    if not report.admissible:
        raise NonAdmissibleError("tangential set is not admissible", report.model_dump())

    sites = galerkin_sites(mode_bound)
    normal = [n for n in sites if n not in S]
    xi_phys = [p.eps ** 3 * x for x in p.xi]

    H = quartic_hamiltonian(S, sites, degree_bound)
    F_B = birkhoff_generator(S, mode_bound)
    H1 = lie_series(H, F_B.scale(-1), order=2).series
    H1 = H1.filter(lambda key, c: sum(e for n, e in key.alpha + key.beta if n not in S) <= degree_bound)
    logger.info(f"Birkhoff step: {len(H)} -> {len(H1)} terms on {len(sites)} sites")

    Haa = action_angle_substitution(H1, S, xi_phys, action_order=2, degree_bound=degree_bound,
                                    mode_bound=mode_bound)
    Hs = scale_series(Haa, p.eps)

    L1, L2 = classify_sites(normal, S)
    present = set(normal)
    l1_pairs = _unique_pairs(L1, present)
    l2_pairs = _unique_pairs(L2, present)

    b = S.b
    rotations: List[SymplecticRotation] = []
    for pair in l1_pairs:
        rotations.append(SymplecticRotation((pair.n, pair.m),
                                            (_unit(b, S.index(pair.i), -1), _unit(b, S.index(pair.j), -1)),
                                            np.eye(2)))
    for pair in l2_pairs:
        rotations.append(SymplecticRotation((pair.n, pair.m),
                                            (_unit(b, S.index(pair.i)), _unit(b, S.index(pair.j))),
                                            np.eye(2)))
    Hr = apply_symplectic_rotation(rotations, Hs)

    xi = {s: x for s, x in zip(S.sites, p.xi)}
    mixing: List[SymplecticRotation] = []
    zero = (0,) * b
    for pair in l1_pairs:
        M = np.array([[Hr.coefficient(alpha={x: 1}, beta={y: 1}) for y in (pair.n, pair.m)]
                      for x in (pair.n, pair.m)])
        M = (M + M.conj().T) / 2
        _, V = linalg.eigh(M)
        if _l1_upper(pair, xi[pair.i], xi[pair.j]):
            V = V[:, ::-1]
        for col in range(2):
            pivot = V[np.argmax(np.abs(V[:, col])), col]
            V[:, col] *= abs(pivot) / pivot
        mixing.append(SymplecticRotation((pair.n, pair.m), (zero, zero), V.T))
    Hr = apply_symplectic_rotation(mixing, Hr)
    rotations += mixing

    omega = np.array([Hr.coefficient(l=_unit(b, q)).real for q in range(b)])
    quad = {}
    l2_set = {s for pair in l2_pairs for s in (pair.n, pair.m)}
    for n in normal:
        if n not in l2_set:
            quad[(n, n)] = complex(Hr.coefficient(alpha={n: 1}, beta={n: 1}).real)
    l2 = []
    for pair in l2_pairs:
        l2.append(L2Coefficients(
            pair,
            Hr.coefficient(alpha={pair.n: 1}, beta={pair.n: 1}).real,
            Hr.coefficient(alpha={pair.m: 1}, beta={pair.m: 1}).real,
            Hr.coefficient(alpha=[(pair.n, 1), (pair.m, 1)]),
            Hr.coefficient(beta=[(pair.n, 1), (pair.m, 1)]),
        ))
    state = NormalFormState(omega=omega, quad=quad, l2=l2, S=S, params=p, sites=tuple(normal),
                            rotations=rotations, birkhoff=F_B, l1_pairs=l1_pairs)

    integrable = state.integrable_part(Hr)
    P = (Hr - integrable).filter(lambda key, c: key.degree or key.l_norm or any(key.k))
    P = P.prune()
    logger.info(f"Normal form: {len(l1_pairs)} first-type pairs, {len(l2_pairs)} second-type pairs, "
                f"|P| = {len(P)} terms")
    return state, P


# ---------- Assumption checks ----------

class A1A2Report(BaseModel):
    b: int
    jacobian: List[List[float]]
    det: float
    det_closed_form: float
    a_exponent: float = 3.0
    omega_tilde_bound: float
    whitney_step: float


def closed_form_det(b: int) -> float:
    """det (1/4 pi^2)(2J - I) = (2b - 1)(-1)^{b-1} / (4 pi^2)^b"""
    return (2 * b - 1) * (-1) ** (b - 1) / (4 * PI2) ** b


_STENCILS = {
    0: ((0,), (1.0,)),
    1: ((-1, 1), (-0.5, 0.5)),
    2: ((-1, 0, 1), (1.0, -2.0, 1.0)),
    3: ((-2, -1, 1, 2), (-0.5, 1.0, -1.0, 0.5)),
    4: ((-2, -1, 0, 1, 2), (1.0, -4.0, 6.0, -4.0, 1.0)),
}


def whitney_norm(func: Callable[[np.ndarray], float], xi: Sequence[float], step: Optional[float] = None,
                 order: int = 4, top_only: bool = False) -> float:
    """max over |alpha| <= order (or |alpha| = order) of |d^alpha func(xi)|, by central differences"""
    h = get_settings().whitney_step if step is None else step
    xi = np.asarray(xi, dtype=float)
    b = len(xi)
    best = 0.0
    for alpha in product(range(order + 1), repeat=b):
        if sum(alpha) > order or (top_only and sum(alpha) != order):
            continue
        stencils = [_STENCILS[a] for a in alpha]
        total = 0.0
        for combo in product(*[list(zip(*st)) for st in stencils]):
            offset = np.array([o for o, _ in combo], dtype=float)
            weight = np.prod([w for _, w in combo])
            total += weight * func(xi + h * offset)
        best = max(best, abs(total) / h ** sum(alpha))
    return best


def check_A1_A2(p: Parameters, S: TangentialSet) -> A1A2Report:
    """Jacobian of xi -> omega, its determinant, and the C^4 bound L of the frequency corrections"""
    _check_params(p, S)
    step = get_settings().whitney_step
    b = S.b
    J = np.zeros((b, b))
    for q in range(b):
        e = np.zeros(b)
        e[q] = step
        up = tangential_frequencies(replace(p, xi=tuple(p.xi_array + e)), S)
        down = tangential_frequencies(replace(p, xi=tuple(p.xi_array - e)), S)
        J[:, q] = (up - down) / (2 * step)

    funcs = [lambda x: float(np.sum(x)) / (2 * PI2)]
    for u, v in [(u, v) for u in range(b) for v in range(b) if u != v]:
        funcs.append(lambda x, u=u, v=v: float(np.sum(x)) / PI2 - (x[u] + x[v]) / (8 * PI2) + l1_split(x[u], x[v]))
        funcs.append(lambda x, u=u, v=v: float(np.sum(x)) / PI2 - (x[u] + x[v]) / (8 * PI2) - l1_split(x[u], x[v]))
    L = max(whitney_norm(f, p.xi, step=step) for f in funcs)
    return A1A2Report(b=b, jacobian=J.tolist(), det=float(np.linalg.det(J)), det_closed_form=closed_form_det(b),
                      omega_tilde_bound=L, whitney_step=step)


def kron_sum_det(A: np.ndarray, B: np.ndarray, sign: int) -> float:
    """det(A (x) I +- I (x) B) for 2x2 A, B in closed form"""
    dA, dB = np.linalg.det(A), np.linalg.det(B)
    tA, tB = np.trace(A), np.trace(B)
    return (dA - dB) ** 2 + dA * tB ** 2 + dB * tA ** 2 + sign * (dA + dB) * tA * tB


def check_A4(P: FourierTaylorSeries, domain: WeightedDomain, eps: float) -> float:
    """Ratio ||X_P|| / eps"""
    return vector_field_norm(P, domain) / eps
