"""
Monte-Carlo estimates of the parameter measure removed by the small-divisor
conditions.

Every resonant set is a condition |D(xi)| < gamma * weight on the amplitude
parameter xi. Linear divisors D = <k,omega> + sum c_n Omega_n (+ a lattice
offset for line limits) are evaluated in batch as integer part * eps^-3 plus
the xi-dependent corrections; second-type pairs contribute 2x2 and 4x4
determinants. For each sample the smallest |D| / weight is the critical
gamma: the sample is excluded at gamma iff its critical gamma is below it,
which makes the estimate exactly monotone in gamma and zero at gamma = 0.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel
from tqdm import tqdm

from tools.errors import FitError
from tools.homological_solver import L2Case, l2_operator
from tools.kam_engine import lattice_ball
from tools.lattice_resonance import (
    LargeDivisor,
    ResonantPair,
    Site,
    TangentialSet,
    as_site,
    block_partition,
    classify_sites,
    dot,
    line_decomposition,
)
from tools.normal_form import (
    PI2,
    FrequencyMap,
    Parameters,
    galerkin_sites,
    normal_frequencies,
    whitney_norm,
)

logger = logging.getLogger("measure_estimator")


# ---------- Records ----------

class SetClass(str, Enum):
    RK = "Rk"
    RK_BLOCK = "RkBlock"
    RK_BLOCK_BLOCK = "RkBlockBlock"
    CKNN = "Cknn"


@dataclass
class ResonantSetSpec:
    """
    |D(xi)| < gamma * weight.

    Linear specs: D = <k,omega> + sum coef * Omega_site + offset * eps^-3.
    Second-type specs carry `l2` = (case, cell, other): case "linear" with
    other None, "mixed" with other (site, sign), "pair" with other a cell.
    """
    cls: SetClass
    k: Tuple[int, ...]
    gamma: float
    K: int
    tau: float
    weight: float
    sites: Tuple[Tuple[Site, int], ...] = ()
    offset: int = 0
    l2: Optional[Tuple] = None
    shell: str = ""
    ids: Dict = field(default_factory=dict)

    @property
    def threshold(self) -> float:
        return self.gamma * self.weight

    def to_dict(self) -> Dict:
        return {"class": self.cls.value, "k": list(self.k), "gamma": self.gamma, "K": self.K, "tau": self.tau,
                "threshold": self.threshold, "sites": [[list(n), c] for n, c in self.sites],
                "offset": self.offset, "shell": self.shell, "ids": self.ids}


class MeasureEstimate(BaseModel):
    gamma: float
    K: int
    tau: float
    fraction: float
    ci95: float
    samples: int
    seed: int
    shell_fractions: Dict[str, float] = {}


class DetPolynomialReport(BaseModel):
    k: List[int]
    cells: List[int]
    nodes: int
    checks: int
    max_rel_error: float
    passed: bool


class FourthDerivativeReport(BaseModel):
    k: List[int]
    xi: List[float]
    value: float
    bound: float
    passed: bool


def binomial_ci95(p: float, n: int) -> float:
    return 1.96 * math.sqrt(p * (1 - p) / n) if n > 0 else 0.0


# ---------- Spec enumeration ----------

Cell = Tuple[int, str]          # (second-type pair index, "A" | "B")


def _cell_generator(kind: str, d_n, d_m, a):
    """(..., 2, 2) generators of the (z_n, zbar_m) cell "A" and the (zbar_n, z_m) cell "B\""""
    shape = np.shape(d_n)
    G = np.zeros(shape + (2, 2))
    if kind == "A":
        G[..., 0, 0], G[..., 0, 1], G[..., 1, 0], G[..., 1, 1] = d_n, -a, a, -d_m
    else:
        G[..., 0, 0], G[..., 0, 1], G[..., 1, 0], G[..., 1, 1] = -d_n, a, -a, d_m
    return G


class ExclusionSampler:
    """
    Problem context for the measure estimates: tangential set, eps, the
    parameter box, the Galerkin normal sites and their resonance classes.
    """

    def __init__(self, S: TangentialSet, eps: float, box: Tuple[float, float] = (1.0, 2.0),
                 mode_bound: int = 3, Delta: int = 2, threads: int = 1, progress: bool = False):
        self.S = S
        self.eps = eps
        self.box = box
        self.threads = max(1, threads)
        self.progress = progress
        normal = [n for n in galerkin_sites(mode_bound) if n not in S]
        L1, L2 = classify_sites(normal, S)
        seen, pairs = set(), []
        for n in sorted(L2):
            pair = L2[n]
            key = frozenset((pair.n, pair.m))
            if key not in seen and pair.m in set(normal):
                seen.add(key)
                pairs.append(pair)
        self.l2_pairs: List[ResonantPair] = pairs
        l2_sites = {s for p in pairs for s in (p.n, p.m)}
        self.sites: List[Site] = [n for n in normal if n not in l2_sites]
        self.blocks = block_partition(self.sites, Delta)
        self.cells: List[Cell] = [(pi, kind) for pi in range(len(pairs)) for kind in ("A", "B")]
        self._classes: Dict[Site, Optional[ResonantPair]] = {}
        self._cache: Dict[Tuple, np.ndarray] = {}
        self._classify(self.sites)

    # --- frequencies ---

    def _classify(self, sites):
        fresh = [as_site(n) for n in sites if as_site(n) not in self._classes and as_site(n) not in self.S]
        if not fresh:
            return
        L1, _ = classify_sites(fresh, self.S)
        for n in fresh:
            self._classes[n] = L1.get(n)

    def integer_part(self, n: Site) -> int:
        """eps^-3 coefficient of Omega_n"""
        pair = self._classes.get(n)
        return n.norm2 + (pair.i.norm2 if pair is not None else 0)

    def frequency_map(self, xi: Sequence[float], extra: Sequence[Site] = ()) -> FrequencyMap:
        self._classify(extra)
        sites = sorted(set(self.sites) | {as_site(n) for n in extra if as_site(n) not in self.S})
        L1 = {n: self._classes[n] for n in sites if self._classes.get(n) is not None}
        return normal_frequencies(Parameters(tuple(xi), self.eps, self.box), self.S, sites, L1, {})

    def corrections(self, xis: np.ndarray, sites: Sequence[Site]) -> Tuple[np.ndarray, np.ndarray]:
        """(omega - eps^-3|i|^2, Omega - eps^-3 * integer part) for a batch of samples"""
        xis = np.atleast_2d(xis)
        total = xis.sum(axis=1)
        omega = -xis / (4 * PI2) + total[:, None] / (2 * PI2)
        pos = {s: p for p, s in enumerate(self.S.sites)}
        Omega = np.zeros((xis.shape[0], len(sites)))
        for col, n in enumerate(sites):
            pair = self._classes.get(n)
            if pair is None:
                Omega[:, col] = total / (2 * PI2)
                continue
            xi_i, xi_j = xis[:, pos[pair.i]], xis[:, pos[pair.j]]
            split = np.sqrt(xi_i ** 2 + 14 * xi_i * xi_j + xi_j ** 2) / (8 * PI2)
            upper = np.where(xi_i != xi_j, xi_i < xi_j, pair.n < pair.m)
            Omega[:, col] = total / PI2 - (xi_i + xi_j) / (8 * PI2) + np.where(upper, split, -split)
        return omega, Omega

    def l2_generators(self, xis: np.ndarray, centered: bool = False) -> Dict[Cell, np.ndarray]:
        """
        Cell generators per sample. With centered=True the eps^-3 diagonal
        (cell_integers * eps^-3) is left out.
        """
        xis = np.atleast_2d(xis)
        omega_corr, _ = self.corrections(xis, [])
        total = xis.sum(axis=1)
        pos = {s: p for p, s in enumerate(self.S.sites)}
        inv = 0.0 if centered else self.eps ** -3
        out = {}
        for pi, pair in enumerate(self.l2_pairs):
            d_n = (pair.n.norm2 - pair.i.norm2) * inv + total / (2 * PI2) - omega_corr[:, pos[pair.i]]
            d_m = (pair.m.norm2 - pair.j.norm2) * inv + total / (2 * PI2) - omega_corr[:, pos[pair.j]]
            a = np.sqrt(xis[:, pos[pair.i]] * xis[:, pos[pair.j]]) / (2 * PI2)
            for kind in ("A", "B"):
                out[(pi, kind)] = _cell_generator(kind, d_n, d_m, a)
        return out

    def cell_integers(self, cell: Cell) -> Tuple[int, int]:
        """eps^-3 coefficients on the generator diagonal"""
        pair = self.l2_pairs[cell[0]]
        e_n, e_m = pair.n.norm2 - pair.i.norm2, pair.m.norm2 - pair.j.norm2
        return (e_n, -e_m) if cell[1] == "A" else (-e_n, e_m)

    # --- specs ---

    def build_specs(self, K_lo: int, K_hi: int, tau: float, gamma: float = 1.0,
                    lines: bool = True) -> List[ResonantSetSpec]:
        return build_specs(self, K_lo, K_hi, tau, gamma, lines)

    def divisor_pass(self, xi: Sequence[float], specs: Sequence[ResonantSetSpec]) -> np.ndarray:
        return divisor_pass(xi, specs, lambda x, extra=(): self.frequency_map(x, extra), self)

    # --- batch evaluation ---

    def critical_gammas(self, xis: np.ndarray, specs: Sequence[ResonantSetSpec]) -> np.ndarray:
        """(samples, specs) array of |D| / weight"""
        linear = [s for s in specs if s.l2 is None]
        other = [s for s in specs if s.l2 is not None]
        sites = sorted({n for s in linear for n, _ in s.sites})
        self._classify(sites)
        col = {n: c for c, n in enumerate(sites)}
        b = self.S.b
        lam = np.array([s.norm2 for s in self.S.sites])
        coef = np.zeros((len(linear), b + len(sites)))
        const = np.zeros(len(linear))
        inv = self.eps ** -3
        for row, spec in enumerate(linear):
            coef[row, :b] = spec.k
            integer = int(np.dot(spec.k, lam)) + spec.offset
            for n, c in spec.sites:
                coef[row, b + col[n]] += c
                integer += c * self.integer_part(n)
            const[row] = integer * inv
        weights = np.array([s.weight for s in linear] + [s.weight for s in other])

        def chunk(xs: np.ndarray) -> np.ndarray:
            omega, Omega = self.corrections(xs, sites)
            X = np.hstack([omega, Omega])
            values = [np.abs(X @ coef.T + const)]
            if other:
                gens = self.l2_generators(xs, centered=True)
                values.append(np.stack([np.abs(self._l2_values(xs, s, gens)) for s in other], axis=1))
            return np.hstack(values) / weights

        parts = np.array_split(xis, max(1, math.ceil(len(xis) / 512)))
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            results = list(tqdm(pool.map(chunk, parts), total=len(parts), disable=not self.progress,
                                desc="divisor pass"))
        ordered = linear + other
        index = {id(s): i for i, s in enumerate(ordered)}
        out = np.vstack(results)
        return out[:, [index[id(s)] for s in specs]]

    def _l2_values(self, xs: np.ndarray, spec: ResonantSetSpec,
                   gens: Optional[Dict[Cell, np.ndarray]] = None) -> np.ndarray:
        """
        Determinants of the second-type operators. The eps^-3 integer
        diagonal is combined exactly before scaling.
        """
        gens = self.l2_generators(xs, centered=True) if gens is None else gens
        omega, _ = self.corrections(xs, [])
        lam = np.array([s.norm2 for s in self.S.sites])
        kappa = omega @ np.asarray(spec.k, dtype=float)
        kint = int(np.dot(spec.k, lam))
        inv = self.eps ** -3
        n = xs.shape[0]
        case, cell, other = spec.l2
        G = gens[cell]
        ints = np.array(self.cell_integers(cell))
        eye2 = np.eye(2)
        if case == "linear":
            M = np.einsum("s,ij->sij", kappa, eye2) + np.diag((kint - ints) * inv) - G
        elif case == "mixed":
            site, sign = other
            _, Om = self.corrections(xs, [site])
            shift = kint - sign * self.integer_part(site)
            M = np.einsum("s,ij->sij", kappa - sign * Om[:, 0], eye2) + np.diag((shift - ints) * inv) - G
        else:
            G2 = gens[other]
            ints2 = np.array(self.cell_integers(other))
            left = np.einsum("sij,ab->siajb", G, eye2).reshape(n, 4, 4)
            right = np.einsum("ij,sab->siajb", eye2, G2).reshape(n, 4, 4)
            diag = (kint - ints[:, None] - ints2[None, :]).reshape(4)
            M = np.einsum("s,ij->sij", kappa, np.eye(4)) + np.diag(diag * inv) - left - right
        return np.linalg.det(M)

    def draw(self, samples: int, seed: int) -> np.ndarray:
        lo, hi = self.box
        rng = np.random.default_rng(seed)
        return rng.uniform(lo, hi, size=(samples, self.S.b))

    def excluded_measure(self, gamma: float, K: int, tau: float, samples: int, seed: int,
                         shells: Optional[Sequence[int]] = None) -> MeasureEstimate:
        return excluded_measure(self, gamma, K, tau, samples, seed, shells)


def _resonant(sampler: ExclusionSampler, integer: int, weight_terms: int) -> bool:
    """Whether a divisor with this eps^-3 integer part can be small anywhere in the box"""
    if integer == 0:
        return True
    bound = 2 * (sampler.S.b + 1) * sampler.box[1] / PI2 * weight_terms + 1.0
    return abs(integer) * sampler.eps ** -3 <= bound


def build_specs(sampler: ExclusionSampler, K_lo: int, K_hi: int, tau: float, gamma: float = 1.0,
                lines: bool = True) -> List[ResonantSetSpec]:
    """
    Resonant sets for K_lo < |k| <= K_hi with threshold gamma / K_hi^tau; line
    sets use gamma / K_hi^{tau/5} on the limit and gamma / K_hi^tau for
    |t| <= K_hi^{tau/5}. Divisors whose eps^-3 part cannot cancel are skipped.
    """
    S = sampler.S
    lam = [s.norm2 for s in S.sites]
    w = 1.0 / K_hi ** tau
    w_lim = 1.0 / K_hi ** (tau / 5)
    t_max = int(math.floor(K_hi ** (tau / 5)))
    shell = f"({K_lo},{K_hi}]"
    sites = sampler.sites
    ints = {n: sampler.integer_part(n) for n in sites}
    specs: List[ResonantSetSpec] = []

    def add(cls, k, weight, **kw):
        specs.append(ResonantSetSpec(cls=cls, k=k, gamma=gamma, K=K_hi, tau=tau, weight=weight, shell=shell, **kw))

    ks = [k for k in lattice_ball(S.b, K_hi) if sum(abs(x) for x in k) > K_lo and any(k)]
    for k in ks:
        kint = sum(a * b for a, b in zip(k, lam))
        knorm = sum(abs(x) for x in k)
        if _resonant(sampler, kint, knorm):
            add(SetClass.RK, k, w)
        for n in sites:
            for sign in (1, -1):
                if _resonant(sampler, kint + sign * ints[n], knorm + 1):
                    add(SetClass.RK_BLOCK, k, w, sites=((n, sign),), ids={"n": list(n), "sign": sign})
        for x, n in enumerate(sites):
            for m in sites[x:]:
                for s1, s2 in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                    if n == m and s1 != s2:
                        continue
                    if _resonant(sampler, kint + s1 * ints[n] + s2 * ints[m], knorm + 2):
                        add(SetClass.RK_BLOCK_BLOCK, k, w, sites=((n, s1), (m, s2)),
                            ids={"n": list(n), "m": list(m), "signs": [s1, s2]})
        for ci, cell in enumerate(sampler.cells):
            es = sampler.cell_integers(cell)
            if any(_resonant(sampler, kint - e, knorm + 2) for e in es):
                add(SetClass.RK_BLOCK, k, w, l2=("linear", cell, None), ids={"cell": list(cell)})
            for n in sites:
                for sign in (1, -1):
                    if any(_resonant(sampler, kint - sign * ints[n] - e, knorm + 3) for e in es):
                        add(SetClass.RK_BLOCK_BLOCK, k, w, l2=("mixed", cell, (n, sign)),
                            ids={"cell": list(cell), "n": list(n), "sign": sign})
            for other in sampler.cells[ci:]:
                if any(_resonant(sampler, kint - e - f, knorm + 4) for e in es for f in sampler.cell_integers(other)):
                    add(SetClass.RK_BLOCK_BLOCK, k, w, l2=("pair", cell, other),
                        ids={"cells": [list(cell), list(other)]})
        if not lines:
            continue
        seen = set()
        for n in sites:
            for n_prime in sites:
                d = n - n_prime
                if n == n_prime or d.norm2 > K_hi * K_hi:
                    continue
                ld = line_decomposition(n, n_prime, K_hi)
                if isinstance(ld, LargeDivisor):
                    continue
                key = (ld.n0, ld.n0_prime, ld.c)
                if key in seen:
                    continue
                seen.add(key)
                ids = {"n0": list(ld.n0), "n0_prime": list(ld.n0_prime), "c": list(ld.c)}
                offset = ld.n0.norm2 - ld.n0_prime.norm2
                if _resonant(sampler, kint + offset, knorm):
                    add(SetClass.CKNN, k, w_lim, offset=offset, ids={**ids, "stage": "limit"})
                for t in range(-t_max, t_max + 1):
                    a, a_prime = ld.n0 + ld.c.scaled(t), ld.n0_prime + ld.c.scaled(t)
                    if a in S or a_prime in S:
                        continue
                    sampler._classify([a, a_prime])
                    if _resonant(sampler, kint + sampler.integer_part(a) - sampler.integer_part(a_prime), knorm + 2):
                        add(SetClass.CKNN, k, w, sites=((a, 1), (a_prime, -1)), ids={**ids, "stage": "t", "t": t})
    logger.debug(f"{len(specs)} resonant set specs for shell {shell}")
    return specs


# ---------- Single-sample pass ----------

def _spec_divisor(spec: ResonantSetSpec, xi: Sequence[float], fm: FrequencyMap,
                  sampler: Optional[ExclusionSampler]) -> float:
    kappa = float(np.dot(spec.k, fm.omega))
    if spec.l2 is None:
        value = kappa + sum(c * fm.Omega_of(n) for n, c in spec.sites) + spec.offset / fm.eps ** 3
        return abs(value)
    gens = sampler.l2_generators(np.asarray([xi], dtype=float))
    case, cell, other = spec.l2
    G = gens[cell][0]
    if case == "linear":
        M = l2_operator(kappa, G, None, L2Case.LINEAR)
    elif case == "mixed":
        site, sign = other
        M = l2_operator(kappa, G, None, L2Case.MIXED, sign * fm.Omega_of(site))
    else:
        M = l2_operator(kappa, G, gens[other][0], L2Case.PAIR_PAIR)
    return abs(np.linalg.det(M))


def divisor_pass(xi: Sequence[float], specs: Sequence[ResonantSetSpec],
                 fm_builder: Callable[..., FrequencyMap],
                 sampler: Optional[ExclusionSampler] = None) -> np.ndarray:
    """Membership bit-vector: spec i flagged iff |D_i(xi)| < its threshold"""
    extra = sorted({n for s in specs for n, _ in s.sites})
    fm = fm_builder(xi, extra)
    return np.array([_spec_divisor(s, xi, fm, sampler) < s.threshold for s in specs], dtype=bool)


# ---------- Measure ----------

def excluded_measure(sampler: ExclusionSampler, gamma: float, K: int, tau: float, samples: int, seed: int,
                     shells: Optional[Sequence[int]] = None) -> MeasureEstimate:
    """
    Fraction of uniformly drawn xi in the union of all resonant sets with
    0 < |k| <= K. `shells` (increasing cutoffs ending at K) splits k into
    (K_{j-1}, K_j] with threshold gamma / K_j^tau.
    """
    if samples < 1000:
        raise ValueError("at least 1000 samples are needed")
    ladder = tuple(shells) if shells else (K,)
    key = (K, tau, samples, seed, ladder)
    if key not in sampler._cache:
        xis = sampler.draw(samples, seed)
        per_shell = []
        lo = 0
        for hi in ladder:
            specs = build_specs(sampler, lo, hi, tau)
            crit = sampler.critical_gammas(xis, specs).min(axis=1) if specs else np.full(samples, np.inf)
            per_shell.append(crit)
            lo = hi
        sampler._cache[key] = np.vstack(per_shell)
    crit = sampler._cache[key]
    excluded = crit < gamma
    fraction = float(np.mean(excluded.any(axis=0)))
    labels = [f"({lo},{hi}]" for lo, hi in zip((0,) + ladder[:-1], ladder)]
    estimate = MeasureEstimate(gamma=gamma, K=K, tau=tau, fraction=fraction, ci95=binomial_ci95(fraction, samples),
                               samples=samples, seed=seed,
                               shell_fractions={lab: float(np.mean(row)) for lab, row in zip(labels, excluded)})
    logger.info(f"Excluded measure gamma={gamma:.1e} K={K}: {fraction:.4f} +- {estimate.ci95:.4f}")
    return estimate


def line_divisor(k: Sequence[int], n0: Site, n0_prime: Site, c: Site, fm: FrequencyMap, t: int) -> float:
    """<k,omega> + Omega_{n0 + tc} - Omega_{n0' + tc}"""
    a, a_prime = as_site(n0) + as_site(c).scaled(t), as_site(n0_prime) + as_site(c).scaled(t)
    return float(np.dot(k, fm.omega)) + fm.Omega_of(a) - fm.Omega_of(a_prime)


def limit_divisor(k: Sequence[int], n0: Sequence[int], n0_prime: Sequence[int], c: Sequence[int],
                  fm: FrequencyMap, t_max: int) -> Union[Tuple[float, float], LargeDivisor]:
    """
    Limit of the divisor along (n0 + tc, n0' + tc) and sup_{1<=|t|<=t_max} |t| |M(t) - limit|.
    When <n0 - n0', c> != 0 the divisor grows linearly in t and a LargeDivisor is returned.
    """
    n0, n0_prime, c = as_site(n0), as_site(n0_prime), as_site(c)
    inner = dot(n0 - n0_prime, c)
    if inner != 0:
        return LargeDivisor(inner, t_max)
    limit = float(np.dot(k, fm.omega)) + (n0.norm2 - n0_prime.norm2) / fm.eps ** 3
    rate = 0.0
    for t in range(1, t_max + 1):
        for tt in (t, -t):
            rate = max(rate, t * abs(line_divisor(k, n0, n0_prime, c, fm, tt) - limit))
    return limit, rate


def gamma_scaling_fit(estimates: Sequence[MeasureEstimate],
                      gammas: Optional[Sequence[float]] = None) -> Tuple[float, float]:
    """Least-squares fit fraction = constant * gamma^exponent in log-log, zero fractions dropped"""
    gammas = [e.gamma for e in estimates] if gammas is None else list(gammas)
    positive = [g for g in gammas if g > 0]
    if len(positive) < 4 or max(positive) / min(positive) < 1e3:
        logger.warning("gamma fit on fewer than 4 values or under 3 decades")
    pts = [(g, e.fraction) for g, e in zip(gammas, estimates) if e.fraction > 0 and g > 0]
    if not pts:
        raise FitError("all excluded fractions are zero; increase K or samples",
                       {"gammas": list(gammas)})
    if len(pts) < 2:
        raise FitError("need at least two nonzero fractions for a fit", {"points": len(pts)})
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(math.exp(intercept))


def bound_constant(estimates: Sequence[MeasureEstimate], exponent: float = 0.25) -> float:
    """Smallest c with fraction <= c gamma^exponent for every estimate"""
    return max((e.fraction / e.gamma ** exponent for e in estimates if e.gamma > 0), default=0.0)


# ---------- Determinant checks ----------

def _pair_det(sampler: ExclusionSampler, k: Sequence[int], cell_a: Cell, cell_b: Cell, xis: np.ndarray) -> np.ndarray:
    spec = ResonantSetSpec(cls=SetClass.RK_BLOCK_BLOCK, k=tuple(k), gamma=0.0, K=1, tau=0.0, weight=1.0,
                           l2=("pair", cell_a, cell_b))
    return sampler._l2_values(np.atleast_2d(xis), spec).real


def det_polynomial_check(sampler: ExclusionSampler, k: Sequence[int], cell_a: Cell, cell_b: Cell,
                         nodes: int = 5, checks: int = 20, seed: int = 0) -> DetPolynomialReport:
    """
    Interpolate det(<k,omega> - G_a (x) I - I (x) G_b) on a tensor grid with
    `nodes` points per variable (degree nodes - 1) and compare at random xi.
    """
    b = sampler.S.b
    lo, hi = sampler.box
    mid, half = (lo + hi) / 2, (hi - lo) / 2
    grid_1d = np.linspace(-1.0, 1.0, nodes)
    exps = np.array(np.meshgrid(*[np.arange(nodes)] * b, indexing="ij")).reshape(b, -1).T
    pts = np.array(np.meshgrid(*[grid_1d] * b, indexing="ij")).reshape(b, -1).T

    def vander(x: np.ndarray) -> np.ndarray:
        return np.prod(x[:, None, :] ** exps[None, :, :], axis=2)

    values = _pair_det(sampler, k, cell_a, cell_b, mid + half * pts)
    coeffs = np.linalg.solve(vander(pts), values)
    rng = np.random.default_rng(seed)
    trial_points = rng.uniform(-1.0, 1.0, size=(checks, b))
    exact = _pair_det(sampler, k, cell_a, cell_b, mid + half * trial_points)
    scale = max(np.abs(values).max(), np.abs(exact).max(), 1e-300)
    err = float(np.abs(vander(trial_points) @ coeffs - exact).max() / scale)
    return DetPolynomialReport(k=list(k), cells=[cell_a[0], cell_b[0]], nodes=nodes, checks=checks,
                               max_rel_error=err, passed=err <= 1e-8)


def fourth_derivative_report(sampler: ExclusionSampler, k: Sequence[int], cell_a: Cell, cell_b: Cell,
                             xi: Sequence[float], step: Optional[float] = None) -> FourthDerivativeReport:
    """max over |alpha| = 4 of |d^alpha det| against 1/2 |k|; failures are logged"""
    value = whitney_norm(lambda x: float(_pair_det(sampler, k, cell_a, cell_b, np.asarray(x))[0]),
                         xi, step=step, order=4, top_only=True)
    bound = 0.5 * sum(abs(x) for x in k)
    passed = value >= bound
    if not passed:
        logger.warning(f"fourth derivative {value:.3e} below {bound:.3e} at k={list(k)}")
    return FourthDerivativeReport(k=list(k), xi=[float(x) for x in xi], value=value, bound=bound, passed=passed)
