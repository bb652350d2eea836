"""
Homological equations of one KAM step.

The linear flow of N + B + Bbar leaves a family of small "cells" invariant:
one z-cell and one zbar-cell per block [n], and two mixed cells
(z_n, zbar_m), (zbar_n, z_m) per second-type pair. On a cell with generator G
({Q, x_a} = -i sum_b G_ba x_b) the equations read

    (<k,omega> - G) f = i r                 (linear terms)
    (<k,omega> - G) X - X G'^T = i C        (quadratic terms, cells G, G')

and every solve goes through an explicit divisor that is checked against a
floor before dividing.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from tools.config import get_settings
from tools.errors import AsymmetricBlockError, SmallDivisorError
from tools.hamiltonian_algebra import FourierTaylorSeries, MultiIndex, poisson_bracket
from tools.lattice_resonance import Site

logger = logging.getLogger("homological_solver")


# ---------- Records ----------

class DivisorKind(str, Enum):
    SCALAR = "Scalar"
    BLOCK_EIGEN = "BlockEigen"
    TENSOR4 = "Tensor4"


@dataclass
class SmallDivisorReport:
    divisor_value: float
    threshold: float
    kind: DivisorKind
    indices: Dict = field(default_factory=dict)

    @property
    def flagged(self) -> bool:
        return abs(self.divisor_value) < self.threshold

    def to_dict(self) -> Dict:
        return {
            "divisor_value": float(self.divisor_value),
            "threshold": float(self.threshold),
            "kind": self.kind.value,
            "indices": self.indices,
            "flagged": self.flagged,
        }


@dataclass
class BlockDiagonalization:
    Q: np.ndarray
    Lambda: np.ndarray
    unitary: bool

    def residual(self, A: np.ndarray) -> float:
        return float(np.abs(self.Q.conj().T @ A @ self.Q - np.diag(self.Lambda)).max())


class L2Case(str, Enum):
    LINEAR = "linear"
    MIXED = "mixed"
    PAIR_PAIR = "pair_pair"


def _floor(floor: Optional[float]) -> float:
    absolute = get_settings().absolute_divisor_floor
    return absolute if floor is None else max(floor, absolute)


def _kappa(k: Sequence[int], omega: Sequence[float]) -> float:
    return float(np.dot(np.asarray(k, dtype=float), np.asarray(omega, dtype=float)))


# ---------- Elementary solves ----------

def solve_scalar(k: Sequence[int], omega: Sequence[float], rhs: complex,
                 floor: Optional[float] = None) -> complex:
    """<k,omega> F = i rhs"""
    if rhs == 0:
        return 0j
    kappa = _kappa(k, omega)
    thr = _floor(floor)
    if abs(kappa) < thr:
        report = SmallDivisorReport(kappa, thr, DivisorKind.SCALAR, {"k": list(k)})
        raise SmallDivisorError(f"|<k,omega>| = {abs(kappa):.3e} below {thr:.3e}", [report])
    return 1j * rhs / kappa


def diagonalize_block(A: np.ndarray) -> BlockDiagonalization:
    """Q^H A Q = Lambda for a (numerically) Hermitian block"""
    A = np.atleast_2d(np.asarray(A))
    scale = max(np.abs(A).max(), 1e-300)
    asym = np.abs(A - A.conj().T).max()
    if asym > 1e-12 * scale:
        raise AsymmetricBlockError(f"block asymmetry {asym:.3e} exceeds tolerance",
                                   {"asymmetry": float(asym), "norm": float(scale)})
    H = (A + A.conj().T) / 2
    if np.isrealobj(H) or np.abs(H.imag).max() == 0:
        lam, Q = linalg.eigh(H.real)
        return BlockDiagonalization(Q, lam, unitary=False)
    lam, Q = linalg.eigh(H)
    return BlockDiagonalization(Q, lam, unitary=True)


def solve_block_vector(k: Sequence[int], omega: Sequence[float], A_block: np.ndarray, rhs: np.ndarray,
                       sign: int, floor: Optional[float] = None) -> np.ndarray:
    """(<k,omega> I + sign A) F = i rhs via the eigenbasis of A"""
    rhs = np.asarray(rhs, dtype=complex)
    if not np.any(rhs):
        return np.zeros_like(rhs)
    kappa = _kappa(k, omega)
    diag = diagonalize_block(A_block)
    divisors = kappa + sign * diag.Lambda
    thr = _floor(floor)
    bad = [SmallDivisorReport(float(d), thr, DivisorKind.BLOCK_EIGEN, {"k": list(k), "eigen": j})
           for j, d in enumerate(divisors) if abs(d) < thr]
    if bad:
        raise SmallDivisorError(f"{len(bad)} block divisors below {thr:.3e}", bad)
    Q = diag.Q
    return Q @ ((1j * (Q.conj().T @ rhs)) / divisors)


def _eigen_frame(M: np.ndarray):
    """(eigenvalues, V, V^-1) with the Hermitian route when possible"""
    M = np.atleast_2d(M)
    if np.allclose(M, M.conj().T, rtol=0, atol=1e-12 * max(1.0, np.abs(M).max())):
        lam, V = linalg.eigh((M + M.conj().T) / 2)
        return lam, V, V.conj().T
    lam, V = linalg.eig(M)
    return lam, V, linalg.inv(V)


def spectral_gap(A: np.ndarray, B: np.ndarray, signs: Tuple[int, int], kappa: float) -> float:
    """min |kappa + s1 lambda_i(A) + s2 mu_j(B)|: the operator is invertible iff this is nonzero"""
    la = np.linalg.eigvals(np.atleast_2d(A))
    lb = np.linalg.eigvals(np.atleast_2d(B))
    return float(np.abs(kappa + signs[0] * la[:, None] + signs[1] * lb[None, :]).min())


def solve_sylvester(k: Sequence[int], omega: Sequence[float], A: np.ndarray, B: np.ndarray, C: np.ndarray,
                    signs: Tuple[int, int], floor: Optional[float] = None) -> np.ndarray:
    """
    (<k,omega> I + s1 A) X + s2 X B = i C, solved entrywise in the frame
    diagonalizing A and B: X^_ij = i C^_ij / (<k,omega> + s1 lambda_i + s2 mu_j).
    """
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    C = np.asarray(C, dtype=complex).reshape(A.shape[0], B.shape[0])
    if not np.any(C):
        return np.zeros_like(C)
    kappa = _kappa(k, omega)
    la, VA, VA_inv = _eigen_frame(A)
    lb, VB, VB_inv = _eigen_frame(B)
    divisors = kappa + signs[0] * la[:, None] + signs[1] * lb[None, :]
    thr = _floor(floor)
    small = np.argwhere(np.abs(divisors) < thr)
    if small.size:
        reports = [SmallDivisorReport(float(abs(divisors[i, j])), thr, DivisorKind.TENSOR4,
                                      {"k": list(k), "eigen": [int(i), int(j)]}) for i, j in small]
        raise SmallDivisorError(f"Sylvester operator has {len(reports)} divisors below {thr:.3e}", reports)
    C_hat = VA_inv @ C @ VB
    X_hat = 1j * C_hat / divisors
    return VA @ X_hat @ VB_inv


def l2_operator(kappa: float, An: np.ndarray, An_prime: Optional[np.ndarray], case: L2Case,
                Omega_n: float = 0.0) -> np.ndarray:
    An = np.atleast_2d(np.asarray(An, dtype=complex))
    if case == L2Case.LINEAR:
        return kappa * np.eye(An.shape[0]) - An
    if case == L2Case.MIXED:
        return (kappa - Omega_n) * np.eye(An.shape[0]) - An
    Bp = np.atleast_2d(np.asarray(An_prime, dtype=complex))
    return (kappa * np.eye(An.shape[0] * Bp.shape[0])
            - np.kron(An, np.eye(Bp.shape[0])) - np.kron(np.eye(An.shape[0]), Bp))


def solve_l2_coupled(k: Sequence[int], omega: Sequence[float], An: np.ndarray, An_prime: Optional[np.ndarray],
                     rhs: np.ndarray, case: L2Case, Omega_n: float = 0.0,
                     floor: Optional[float] = None) -> np.ndarray:
    """
    Coupled systems of second-type cells, with the cell generators as inputs.

    LINEAR:    (<k,omega> I - An) f = i rhs
    MIXED:     ((<k,omega> - Omega_n) I - An) f = i rhs
    PAIR_PAIR: (<k,omega> I - An (x) I - I (x) An') f = i rhs, basis (nn', nm', mn', m'm)
    """
    rhs = np.asarray(rhs, dtype=complex).ravel()
    M = l2_operator(_kappa(k, omega), An, An_prime, case, Omega_n)
    if not np.any(rhs):
        return np.zeros_like(rhs)
    det = complex(np.linalg.det(M))
    thr = _floor(floor)
    if abs(det) < thr:
        report = SmallDivisorReport(abs(det), thr, DivisorKind.TENSOR4, {"k": list(k), "case": case.value})
        raise SmallDivisorError(f"|det| = {abs(det):.3e} below {thr:.3e}", [report])
    return linalg.solve(M, 1j * rhs)


def _solve_kron(kappa: float, G1: np.ndarray, G2: np.ndarray, C: np.ndarray, thr: float, k) -> np.ndarray:
    """(kappa - G1) X - X G2^T = i C for cells of any size, by the vectorized operator"""
    n1, n2 = G1.shape[0], G2.shape[0]
    M = kappa * np.eye(n1 * n2) - np.kron(G1, np.eye(n2)) - np.kron(np.eye(n1), G2)
    sigma = linalg.svdvals(M).min()
    if sigma < thr:
        report = SmallDivisorReport(float(sigma), thr, DivisorKind.TENSOR4, {"k": list(k), "size": [n1, n2]})
        raise SmallDivisorError(f"coupled operator singular value {sigma:.3e} below {thr:.3e}", [report])
    return linalg.solve(M, 1j * C.ravel()).reshape(n1, n2)


def divisor_floor(k: Sequence[int], omega: Sequence[float], lambdas: Sequence[Sequence[float]],
                  dets: Sequence[complex], gamma: float, K: int, tau: float,
                  norms: Optional[Sequence[int]] = None) -> List[SmallDivisorReport]:
    """
    Every below-threshold divisor at this k, threshold gamma / K^tau:
    |<k,omega>| (k != 0), |<k,omega> +- l|, |<k,omega> +- l +- l'| and |det| of the coupled systems.
    At k = 0 the differences inside one block, or between blocks of equal norm, are not conditions.
    """
    thr = gamma / K ** tau
    kappa = _kappa(k, omega)
    zero_k = not any(k)
    out: List[SmallDivisorReport] = []
    if thr <= 0:
        return out
    if not zero_k and abs(kappa) < thr:
        out.append(SmallDivisorReport(kappa, thr, DivisorKind.SCALAR, {"k": list(k)}))

    owner = np.array([bi for bi, group in enumerate(lambdas) for _ in group], dtype=int)
    lam = np.array([float(x) for group in lambdas for x in group])
    for sign in (1, -1):
        for j in np.nonzero(np.abs(kappa + sign * lam) < thr)[0]:
            out.append(SmallDivisorReport(float(kappa + sign * lam[j]), thr, DivisorKind.BLOCK_EIGEN,
                                          {"k": list(k), "block": int(owner[j]), "sign": sign}))

    if lam.size:
        upper = np.triu(np.ones((lam.size, lam.size), dtype=bool))
        if zero_k:
            block_norm = np.asarray(norms)[owner] if norms is not None else owner
            same = (owner[:, None] == owner[None, :]) | (block_norm[:, None] == block_norm[None, :])
        for s1, s2 in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
            d = kappa + s1 * lam[:, None] + s2 * lam[None, :]
            mask = upper & (np.abs(d) < thr)
            if zero_k and s1 != s2:
                mask &= ~same
            for x, y in np.argwhere(mask):
                out.append(SmallDivisorReport(float(d[x, y]), thr, DivisorKind.BLOCK_EIGEN,
                                              {"k": list(k), "blocks": [int(owner[x]), int(owner[y])],
                                               "signs": [s1, s2]}))
    for idx, det in enumerate(dets):
        if abs(det) < thr:
            out.append(SmallDivisorReport(abs(det), thr, DivisorKind.TENSOR4, {"k": list(k), "system": idx}))
    return out


# ---------- Cells ----------

Var = Tuple[Site, str]


@dataclass
class Cell:
    kind: str                     # "z", "zbar" (block cells) or "l2a", "l2b"
    vars: Tuple[Var, ...]
    G: np.ndarray
    norm_sq: Optional[int] = None
    group: int = 0                # block index or second-type pair index
    A: Optional[np.ndarray] = None

    @property
    def is_block(self) -> bool:
        return self.kind in ("z", "zbar")

    def sylvester_form(self, left: bool) -> Tuple[int, np.ndarray]:
        """(sign, matrix) so that the cell enters as (kappa + s A) X or s X B"""
        if left:
            return (-1, self.A) if self.kind == "z" else (1, self.A.T)
        return (-1, self.A.T) if self.kind == "z" else (1, self.A)


def build_cells(state, Delta: int) -> List[Cell]:
    cells: List[Cell] = []
    for bi, block in enumerate(state.blocks(Delta)):
        A = state.block_matrix(block)
        cells.append(Cell("z", tuple((s, "z") for s in block.members), A, block.norm_sq, bi, A))
        cells.append(Cell("zbar", tuple((s, "zbar") for s in block.members), -A.T, block.norm_sq, bi, A))
    for pi, c in enumerate(state.l2):
        n, m = c.pair.n, c.pair.m
        cells.append(Cell("l2a", ((n, "z"), (m, "zbar")), c.generator, None, pi))
        cells.append(Cell("l2b", ((n, "zbar"), (m, "z")),
                          np.array([[-c.d_n, c.c], [-c.b, c.d_m]], dtype=complex), None, pi))
    return cells


def _vars_of(key: MultiIndex) -> List[Var]:
    out = []
    for n, e in key.alpha:
        out += [(n, "z")] * e
    for n, e in key.beta:
        out += [(n, "zbar")] * e
    return out


def _key_of(b: int, k: Tuple[int, ...], variables: Sequence[Var]) -> MultiIndex:
    alpha = [(n, 1) for n, kind in variables if kind == "z"]
    beta = [(n, 1) for n, kind in variables if kind == "zbar"]
    return MultiIndex.make(b, k=k, alpha=alpha, beta=beta)


# ---------- Full solve ----------

@dataclass
class HomologicalSolution:
    F: FourierTaylorSeries
    kept: FourierTaylorSeries
    deferred: FourierTaylorSeries
    omega_hat: np.ndarray
    quad_shift: Dict[Tuple[Site, Site], complex]
    l2_shift: Dict[int, Dict[str, complex]]
    reports: List[SmallDivisorReport]


def _is_kept_pair(c1: Cell, c2: Cell) -> bool:
    if c1.is_block and c2.is_block:
        return c1.group == c2.group and {c1.kind, c2.kind} == {"z", "zbar"}
    if not c1.is_block and not c2.is_block:
        return c1.group == c2.group and c1.kind != c2.kind
    return False


def _is_deferred_pair(c1: Cell, c2: Cell) -> bool:
    """z zbar terms between distinct blocks of equal norm at k = 0"""
    return (c1.is_block and c2.is_block and c1.group != c2.group
            and {c1.kind, c2.kind} == {"z", "zbar"} and c1.norm_sq == c2.norm_sq)


def solve_homological(state, R: FourierTaylorSeries, Delta: int, floor: Optional[float] = None) -> HomologicalSolution:
    """
    Solve {N + B + Bbar, F} + R - kept = 0 term class by term class.

    Kept (moved into the new normal form): constants, <omega_hat, I>, the k = 0
    z zbar terms inside each block and the k = 0 quadratic terms of each
    second-type pair. Deferred (left in P): k = 0 z zbar couplings between
    different blocks of equal norm.
    """
    b = state.b
    thr = _floor(floor)
    omega = np.asarray(state.omega, dtype=float)
    cells = build_cells(state, Delta)
    where: Dict[Var, Tuple[int, int]] = {}
    for ci, cell in enumerate(cells):
        for pos, var in enumerate(cell.vars):
            where[var] = (ci, pos)

    bounds = R.bounds()
    F_terms: Dict[MultiIndex, complex] = {}
    kept: Dict[MultiIndex, complex] = {}
    deferred: Dict[MultiIndex, complex] = {}
    omega_hat = np.zeros(b)
    quad_shift: Dict[Tuple[Site, Site], complex] = defaultdict(complex)
    l2_shift: Dict[int, Dict[str, complex]] = defaultdict(lambda: defaultdict(complex))
    reports: List[SmallDivisorReport] = []

    linear: Dict[Tuple, np.ndarray] = {}
    quadratic: Dict[Tuple, np.ndarray] = {}

    for key, c in R.items():
        zero_k = not any(key.k)
        d = key.degree
        if d == 0:
            if zero_k:
                kept[key] = c
                if key.l_norm == 1:
                    omega_hat[key.l.index(1)] += c.real
                continue
            try:
                F_terms[key] = solve_scalar(key.k, omega, c, thr)
            except SmallDivisorError as e:
                reports += e.reports
            continue

        variables = _vars_of(key)
        if d == 1:
            ci, pos = where[variables[0]]
            vec = linear.setdefault((key.k, ci), np.zeros(len(cells[ci].vars), dtype=complex))
            vec[pos] += c
            continue

        (c1, p1), (c2, p2) = where[variables[0]], where[variables[1]]
        if (c2, p2) < (c1, p1):
            (c1, p1), (c2, p2) = (c2, p2), (c1, p1)
        cell1, cell2 = cells[c1], cells[c2]
        if zero_k and _is_kept_pair(cell1, cell2):
            kept[key] = c
            if cell1.is_block:
                a = variables[0][0] if variables[0][1] == "z" else variables[1][0]
                bb = variables[1][0] if variables[0][1] == "z" else variables[0][0]
                quad_shift[(a, bb)] += c
            else:
                kinds = "".join(sorted(kind for _, kind in variables))
                pair = state.l2[cell1.group].pair
                if kinds == "zzbar":
                    l2_shift[cell1.group]["d_n" if variables[0][0] == pair.n else "d_m"] += c
                elif kinds == "zz":
                    l2_shift[cell1.group]["b"] += c
                else:
                    l2_shift[cell1.group]["c"] += c
            continue
        if zero_k and _is_deferred_pair(cell1, cell2):
            deferred[key] = c
            continue
        mat = quadratic.setdefault((key.k, c1, c2),
                                   np.zeros((len(cell1.vars), len(cell2.vars)), dtype=complex))
        if c1 == c2 and p1 != p2:
            mat[p1, p2] += c / 2
            mat[p2, p1] += c / 2
        else:
            mat[p1, p2] += c

    for (k, ci), r in linear.items():
        cell = cells[ci]
        try:
            if cell.is_block:
                sign, A = cell.sylvester_form(left=True)
                f = solve_block_vector(k, omega, A, r, sign, thr)
            else:
                f = solve_l2_coupled(k, omega, cell.G, None, r, L2Case.LINEAR, floor=thr)
        except SmallDivisorError as e:
            reports += e.reports
            continue
        for pos, var in enumerate(cell.vars):
            if f[pos] != 0:
                F_terms[_key_of(b, k, [var])] = f[pos]

    for (k, c1, c2), C in quadratic.items():
        cell1, cell2 = cells[c1], cells[c2]
        kappa = _kappa(k, omega)
        try:
            if cell1.is_block and cell2.is_block:
                s1, A = cell1.sylvester_form(left=True)
                s2, B = cell2.sylvester_form(left=False)
                X = solve_sylvester(k, omega, A, B, C, (s1, s2), thr)
            elif cell1.is_block and len(cell1.vars) == 1:
                x = solve_l2_coupled(k, omega, cell2.G, None, C[0], L2Case.MIXED,
                                     Omega_n=complex(cell1.G[0, 0]).real, floor=thr)
                X = x.reshape(1, -1)
            elif not cell1.is_block and not cell2.is_block:
                x = solve_l2_coupled(k, omega, cell1.G, cell2.G, C.ravel(), L2Case.PAIR_PAIR, floor=thr)
                X = x.reshape(2, 2)
            else:
                X = _solve_kron(kappa, cell1.G, cell2.G, C, thr, k)
        except SmallDivisorError as e:
            reports += e.reports
            continue
        for p1, v1 in enumerate(cell1.vars):
            for p2, v2 in enumerate(cell2.vars):
                if c1 == c2:
                    if p2 < p1:
                        continue
                    value = X[p1, p2] if p1 == p2 else 2 * X[p1, p2]
                else:
                    value = X[p1, p2]
                if value != 0:
                    key = _key_of(b, k, [v1, v2])
                    F_terms[key] = F_terms.get(key, 0j) + value

    if reports:
        raise SmallDivisorError(f"{len(reports)} small divisors in the homological equation", reports)

    F = FourierTaylorSeries(F_terms, **bounds)
    logger.debug(f"Homological solve: {len(R)} R terms -> {len(F)} F terms, {len(kept)} kept, {len(deferred)} deferred")
    return HomologicalSolution(F=F, kept=R.with_terms(kept), deferred=R.with_terms(deferred),
                               omega_hat=omega_hat, quad_shift=dict(quad_shift),
                               l2_shift={g: dict(v) for g, v in l2_shift.items()}, reports=reports)


def homological_residual(state, solution: HomologicalSolution, R: FourierTaylorSeries) -> float:
    """max |coefficient| of {N+B+Bbar, F} + R - kept - deferred, relative to max |R|"""
    integrable = state.integrable_part(R)
    res = poisson_bracket(integrable, solution.F) + R - solution.kept - solution.deferred
    scale = R.max_abs() or 1.0
    return res.max_abs() / scale
