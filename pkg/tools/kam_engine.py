"""
KAM iteration on a Galerkin truncation.

One step: truncate P to R, solve the homological equation for F, move the
kept averages into N + B + Bbar, and transform the Hamiltonian with the
time-one map of F. The schedule (r, s, eps, K, rho, Delta, L) follows the
usual geometric recursions; eps is always the vector-field norm of the
current perturbation on the current domain.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from itertools import product
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel
from scipy import integrate, optimize

from debug_tools.divisor_debugger import divisor_debugger
from tools.config import get_settings
from tools.errors import IntegrationError, SmallDivisorError
from tools.hamiltonian_algebra import (
    CompiledSeries,
    FourierTaylorSeries,
    WeightedDomain,
    lie_series,
    truncate_R,
    vector_field_norm,
)
from tools.homological_solver import (
    L2Case,
    SmallDivisorReport,
    build_cells,
    diagonalize_block,
    divisor_floor,
    homological_residual,
    l2_operator,
    solve_homological,
)
from tools.lattice_resonance import Site, dot
from tools.normal_form import NormalFormState, check_A1_A2

logger = logging.getLogger("kam_engine")

# eps at or below this is rounding noise on O(1) frequencies
PRECISION_FLOOR = 1e-13


# ---------- State and schedule ----------

def rho_for(K: int) -> float:
    """rho with K^{1 + 3 eps_exp} rho = 1"""
    return K ** -(1 + 3 * get_settings().rho_exponent)


@dataclass
class KamState:
    nu: int
    r: float
    s: float
    eps: float
    K: int
    rho: float
    Delta: int
    gamma: float
    tau: float
    L: float
    normal: NormalFormState
    P: FourierTaylorSeries
    r0: float
    excluded_xi_fraction: float = 0.0
    transforms: List[FourierTaylorSeries] = field(default_factory=list)
    lie_order: Optional[int] = None

    @property
    def domain(self) -> WeightedDomain:
        return WeightedDomain(self.r, self.s, self.rho)

    def summary(self) -> Dict:
        return {"nu": self.nu, "r": self.r, "s": self.s, "eps": self.eps, "K": self.K, "rho": self.rho,
                "Delta": self.Delta, "gamma": self.gamma, "tau": self.tau, "L": self.L,
                "excluded_xi_fraction": self.excluded_xi_fraction, "terms": len(self.P)}


class ScheduleParams(BaseModel):
    nu: int
    r: float
    s: float
    eps_target: Optional[float]
    K: int
    rho: float
    Delta: int
    L: float
    eta: float


class StepReport(BaseModel):
    nu: int
    K: int
    eps_before: float
    eps_after: float
    divisor_flags: int
    F_norm: float
    remainder_norm: Optional[float]
    contraction_exponent_estimate: Optional[float]
    envelope_constant: Optional[float]
    omega_shift: float
    p011_shift: float
    bounds_ok: bool
    residual: float
    diverged: bool


@dataclass
class IterationResult:
    state: KamState
    reports: List[StepReport]
    aborted: Optional[Dict] = None


def initial_state(normal: NormalFormState, P: FourierTaylorSeries, r: float = 0.5, s: float = 1.0,
                  K0: int = 2, gamma: Optional[float] = None, tau: float = 2.0, Delta: int = 2,
                  rho: Optional[float] = None, lie_order: Optional[int] = None) -> KamState:
    """
    Step-0 state. gamma defaults to eps_0^{1/50}; L starts at the C^4 bound of
    the frequency corrections.
    """
    rho = rho_for(K0) if rho is None else rho
    eps0 = vector_field_norm(P, WeightedDomain(r, s, rho))
    if gamma is None:
        gamma = eps0 ** (1 / 50) if eps0 > 0 else 0.0
    L = check_A1_A2(normal.params, normal.S).omega_tilde_bound
    logger.info(f"Initial state: eps0={eps0:.3e}, gamma={gamma:.3e}, K0={K0}, |P|={len(P)}")
    return KamState(nu=0, r=r, s=s, eps=eps0, K=K0, rho=rho, Delta=Delta, gamma=gamma, tau=tau, L=L,
                    normal=normal, P=P, r0=r, lie_order=lie_order)


def _radius(r0: float, nu: int) -> float:
    """r_nu = r0 (1 - sum_{i=2}^{nu+1} 2^-i)"""
    return r0 * (0.5 + 2.0 ** -(nu + 1))


def _eps_target(eps: float, gamma: float, r: float, r_next: float, K: int, tau: float) -> Optional[float]:
    if gamma <= 0:
        return None
    settings = get_settings()
    return (settings.step_constant * gamma ** -5 * (r - r_next) ** -settings.radius_exponent
            * K ** (5 * (tau + 1)) * eps ** (4 / 3))


def schedule(nu: int, base: KamState) -> ScheduleParams:
    """Schedule parameters at step nu, iterated from `base` with eps following its target recursion"""
    if nu < base.nu:
        raise ValueError("nu must not precede the base state")
    r, s, eps, K, Delta, L = base.r, base.s, base.eps, base.K, base.Delta, base.L
    rho = base.rho
    for j in range(base.nu, nu):
        r_next = _radius(base.r0, j + 1)
        target = _eps_target(eps, base.gamma, r, r_next, K, base.tau)
        s = s * eps ** (1 / 3) / 4
        L = L + eps
        Delta = K ** 3
        K = 3 * K
        rho = rho_for(K)
        r = r_next
        eps = target if target is not None else eps
    target = _eps_target(eps, base.gamma, r, _radius(base.r0, nu + 1), K, base.tau)
    return ScheduleParams(nu=nu, r=r, s=s, eps_target=target, K=K, rho=rho, Delta=Delta, L=L,
                          eta=eps ** (1 / 3))


def initial_cutoff(eps0: float, r0: float, r1: float) -> int:
    """Smallest integer K on the decreasing branch with K^2 e^{-K (r0 - r1)} <= eps0^{1/3}"""
    delta = r0 - r1
    if delta <= 0 or eps0 <= 0:
        raise ValueError("need r0 > r1 and eps0 > 0")

    def g(K: float) -> float:
        return 2 * math.log(K) - K * delta - math.log(eps0) / 3

    peak = max(2 / delta, 1.0)
    if g(peak) <= 0:
        return 1
    hi = peak * 2
    while g(hi) > 0:
        hi *= 2
    return int(math.ceil(optimize.brentq(g, peak, hi)))


# ---------- Divisor conditions ----------

def lattice_ball(b: int, K: int):
    for k in product(range(-K, K + 1), repeat=b):
        if sum(abs(x) for x in k) <= K:
            yield k


def divisor_conditions(normal: NormalFormState, K: int, gamma: float, tau: float,
                       Delta: int) -> List[SmallDivisorReport]:
    """All flagged divisors for |k| <= K at the current frequencies"""
    if gamma <= 0:
        return []
    blocks = normal.blocks(Delta)
    lambdas = [diagonalize_block(normal.block_matrix(blk)).Lambda for blk in blocks]
    norms = [blk.norm_sq for blk in blocks]
    l2_cells = [c.G for c in build_cells(normal, Delta) if not c.is_block]
    plain = [float(x) for group in lambdas for x in group]
    out: List[SmallDivisorReport] = []
    for k in lattice_ball(normal.b, K):
        kappa = float(np.dot(k, normal.omega))
        dets = []
        for x, G1 in enumerate(l2_cells):
            for G2 in l2_cells[x:]:
                dets.append(np.linalg.det(l2_operator(kappa, G1, G2, L2Case.PAIR_PAIR)))
            for Om in plain:
                dets.append(np.linalg.det(l2_operator(kappa, G1, None, L2Case.MIXED, Om)))
                dets.append(np.linalg.det(l2_operator(kappa, G1, None, L2Case.MIXED, -Om)))
        out += divisor_floor(k, normal.omega, lambdas, dets, gamma, K, tau, norms)
    return out


# ---------- Step ----------

def _next_state(state: KamState, normal: NormalFormState, P: FourierTaylorSeries,
                F: Optional[FourierTaylorSeries]) -> KamState:
    K_next = 3 * state.K
    r_next = _radius(state.r0, state.nu + 1)
    s_next = state.s * state.eps ** (1 / 3) / 4 if state.eps > 0 else state.s
    rho_next = rho_for(K_next)
    eps_next = vector_field_norm(P, WeightedDomain(r_next, s_next, rho_next))
    transforms = state.transforms + ([F] if F is not None else [])
    return replace(state, nu=state.nu + 1, r=r_next, s=s_next, eps=eps_next, K=K_next, rho=rho_next,
                   Delta=state.K ** 3, L=state.L + state.eps, normal=normal, P=P, transforms=transforms)


def kam_step(state: KamState) -> Tuple[KamState, StepReport]:
    """
    One KAM step.

    Raises SmallDivisorError (after logging the reports to the divisor ledger)
    when a homological solve meets a divisor below gamma / K^tau.
    """
    normal = state.normal
    if state.P.is_zero():
        nxt = _next_state(state, normal.copy(), state.P, None)
        report = StepReport(nu=state.nu, K=state.K, eps_before=state.eps, eps_after=nxt.eps, divisor_flags=0,
                            F_norm=0.0, remainder_norm=0.0, contraction_exponent_estimate=None,
                            envelope_constant=None, omega_shift=0.0, p011_shift=0.0, bounds_ok=True,
                            residual=0.0, diverged=False)
        return nxt, report

    floor = state.gamma / state.K ** state.tau if state.gamma > 0 else None
    blocks = normal.blocks(state.Delta)
    R = truncate_R(state.P, state.K, normal.l2_sites, blocks)
    try:
        sol = solve_homological(normal, R, state.Delta, floor)
    except SmallDivisorError as e:
        divisor_debugger.log_reports(e.reports, nu=state.nu, K=state.K)
        raise
    residual = homological_residual(normal, sol, R)

    new = normal.copy()
    new.omega = new.omega + sol.omega_hat
    for key, v in sol.quad_shift.items():
        new.quad[key] = new.quad.get(key, 0j) + v
    for g, shifts in sol.l2_shift.items():
        c = new.l2[g]
        c.d_n += shifts.get("d_n", 0j).real
        c.d_m += shifts.get("d_m", 0j).real
        c.b += shifts.get("b", 0j)
        c.c += shifts.get("c", 0j)

    H = normal.integrable_part(state.P) + state.P
    lie = lie_series(H, sol.F, state.lie_order, domain=state.domain)
    H_plus = lie.series
    P_plus = (H_plus - new.integrable_part(H_plus)).filter(
        lambda key, c: bool(key.degree or key.l_norm or any(key.k))).prune()

    omega_shift = float(np.abs(sol.omega_hat).max()) if sol.omega_hat.size else 0.0
    p011_shift = max((abs(v) for v in sol.quad_shift.values()), default=0.0)
    bounds_ok = omega_shift < state.eps and all(
        abs(v) < state.eps * math.exp(-state.rho * math.hypot(a.n1 - c.n1, a.n2 - c.n2))
        for (a, c), v in sol.quad_shift.items())
    if not bounds_ok:
        logger.warning(f"Step {state.nu}: frequency or P011 shift exceeds eps={state.eps:.3e}")

    nxt = _next_state(state, new, P_plus, sol.F)
    flags = divisor_conditions(new, state.K, state.gamma, state.tau, state.Delta)
    if flags:
        divisor_debugger.log_reports(flags, nu=state.nu, K=state.K)

    eps, eps_after = state.eps, nxt.eps
    exponent = None
    if 0 < eps < 1 and eps_after > 0:
        exponent = math.log(eps_after) / math.log(eps)
    envelope = None
    if state.gamma > 0 and eps > 0:
        envelope = eps_after / (state.gamma ** -5 * state.K ** (5 * (state.tau + 1)) * eps ** (4 / 3))
    report = StepReport(nu=state.nu, K=state.K, eps_before=eps, eps_after=eps_after, divisor_flags=len(flags),
                        F_norm=vector_field_norm(sol.F, state.domain), remainder_norm=lie.remainder,
                        contraction_exponent_estimate=exponent, envelope_constant=envelope,
                        omega_shift=omega_shift, p011_shift=p011_shift, bounds_ok=bounds_ok,
                        residual=residual, diverged=eps_after > max(eps, PRECISION_FLOOR))
    logger.info(f"Step {state.nu}: eps {eps:.3e} -> {eps_after:.3e}, K={state.K}, |F|={len(sol.F)}, "
                f"flags={len(flags)}")
    return nxt, report


def iterate(state0: KamState, steps: int) -> IterationResult:
    """Repeated kam_step; stops on a small divisor or on divergence"""
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    state = state0
    reports: List[StepReport] = []
    for _ in range(steps):
        try:
            state, report = kam_step(state)
        except SmallDivisorError as e:
            logger.error(f"Iteration aborted at step {state.nu}: {e.message}")
            return IterationResult(state, reports, e.to_dict())
        reports.append(report)
        if report.diverged:
            logger.warning(f"Divergence at step {report.nu}: eps {report.eps_before:.3e} -> {report.eps_after:.3e}")
            break
    return IterationResult(state, reports)


def run_iteration(state0: KamState, steps: int) -> List[StepReport]:
    return iterate(state0, steps).reports


def contraction_exponent(reports: Sequence[StepReport], floor: float = PRECISION_FLOOR) -> Optional[float]:
    """Slope of log eps_{nu+1} against log eps_nu over the steps that end above `floor`"""
    pts = [(r.eps_before, r.eps_after) for r in reports if r.eps_before > 0 and r.eps_after > floor]
    if not pts:
        return None
    if len(pts) == 1:
        before, after = pts[0]
        return math.log(after) / math.log(before) if before != 1 else None
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    if np.ptp(x) == 0:
        return None
    return float(np.polyfit(x, y, 1)[0])


def smallness_margin(state: KamState) -> Dict:
    """eps against gamma^{15/2} K^{-(15/2)(tau+1)} (r - r_+)^c"""
    r_next = _radius(state.r0, state.nu + 1)
    threshold = (state.gamma ** 7.5 * state.K ** (-7.5 * (state.tau + 1))
                 * (state.r - r_next) ** get_settings().radius_exponent)
    return {"eps": state.eps, "threshold": threshold,
            "ratio": state.eps / threshold if threshold > 0 else None,
            "satisfied": state.eps < threshold}


# ---------- Toplitz-Lipschitz check ----------

class ToeplitzReport(BaseModel):
    lines_sampled: int
    lines_with_data: int
    constant_lines: int
    max_constant_deviation: float
    rate_constant: float
    max_limit: float
    envelope_bound: float
    envelope_holds: bool
    constant_holds: bool
    vacuous: bool


def _primitive_directions(K: int) -> List[Site]:
    out = []
    for a in range(-K, K + 1):
        for b in range(-K, K + 1):
            if (a, b) != (0, 0) and math.gcd(a, b) == 1:
                out.append(Site(a, b))
    return out


def _second_derivative(quad: FourierTaylorSeries, kind: str, a: Site, c: Site) -> complex:
    """d^2/dw_a dw_c of the quadratic part; kind is zzbar, zz or zbarzbar"""
    zero = (0,) * quad.b
    if kind == "zzbar":
        return quad.coefficient(k=zero, alpha={a: 1}, beta={c: 1})
    powers, factor = ({a: 2}, 2) if a == c else ([(a, 1), (c, 1)], 1)
    if kind == "zz":
        return factor * quad.coefficient(k=zero, alpha=powers)
    return factor * quad.coefficient(k=zero, beta=powers)


def _anchors(quad: FourierTaylorSeries, pool: set) -> List[Tuple[str, Site, Site]]:
    out = []
    for key, v in quad.terms.items():
        if not v:
            continue
        ns = [n for n, p in key.alpha for _ in range(p)]
        ms = [n for n, p in key.beta for _ in range(p)]
        if len(ns) == 1:
            kind, pair = "zzbar", (ns[0], ms[0])
        else:
            kind, pair = ("zz", ns) if ns else ("zbarzbar", ms)
        if pair[0] in pool and pair[1] in pool:
            out.append((kind, pair[0], pair[1]))
    return sorted(out)


def _limit_fit(ts: np.ndarray, values: np.ndarray) -> complex:
    """M(inf) from a least-squares fit of M(t) = M(inf) + a / t + b / t^2"""
    design = np.column_stack([np.ones(len(ts)), 1.0 / ts, 1.0 / ts ** 2]).astype(complex)
    coef, *_ = np.linalg.lstsq(design, values, rcond=None)
    return complex(coef[0])


def toeplitz_check(normal: NormalFormState, P: FourierTaylorSeries, K: int, lines: int, seed: int = 0,
                   eps: Optional[float] = None, rho: Optional[float] = None, constant: float = 10.0,
                   directions: Optional[Sequence[Site]] = None, samples: int = 48) -> ToeplitzReport:
    """
    Second derivatives of B + P along lattice lines.

    Each line starts from a coupling (n, m) of B + P on the truncated sites and
    a primitive direction c. z zbar couplings move along (n + tc, m + tc),
    z z and zbar zbar couplings along (n + tc, m - tc). A z zbar line with
    <n - m, c> = 0 must be exactly constant wherever both sites carry modes.
    Every other line is sampled on both rays |t| in [K, 100K]; M(inf) comes
    from a fit of M(t) = M(inf) + a/t + b/t^2, and the weighted rate
    sup |t| |M(t) - M(inf)| e^{|n -+ m| rho} must stay below constant * eps.
    """
    rng = np.random.default_rng(seed)
    rho = rho_for(K) if rho is None else rho
    quad = (normal.B_series(P) + normal.Bbar_series(P) + P).filter(
        lambda key, c: key.degree == 2 and not any(key.k) and not key.l_norm)
    eps = quad.max_abs() if eps is None else eps
    bound = constant * eps
    truncated = set(normal.sites)
    pool = truncated | set(quad.sites())
    anchors = _anchors(quad, truncated)
    directions = list(directions) if directions is not None else _primitive_directions(max(K, 1))
    ts = np.unique(np.rint(np.geomspace(max(K, 1), 100 * max(K, 1), samples)).astype(int))
    with_data = constant_count = 0
    deviation = rate = limit_max = 0.0
    for _ in range(lines if anchors else 0):
        kind, n, m = anchors[rng.integers(len(anchors))]
        c = directions[rng.integers(len(directions))]
        shift = dot(n - m, c)
        partner = 1 if kind == "zzbar" else -1

        def second(t: int) -> complex:
            return _second_derivative(quad, kind, n + c.scaled(t), m + c.scaled(partner * t))

        if kind == "zzbar" and shift == 0:
            span = range(-100 * max(K, 1), 100 * max(K, 1) + 1)
            ref = second(0)
            values = [second(t) for t in span if n + c.scaled(t) in pool and m + c.scaled(t) in pool]
            with_data += 1
            constant_count += 1
            deviation = max(deviation, max(abs(v - ref) for v in values))
            continue
        weight = math.exp(rho * math.hypot(*((n - m) if kind == "zzbar" else (n + m))))
        has_data = False
        for sign in (1, -1):
            values = weight * np.array([second(sign * int(t)) for t in ts], dtype=complex)
            if not values.any():
                continue
            has_data = True
            limit = _limit_fit(ts.astype(float), values)
            limit_max = max(limit_max, abs(limit))
            rate = max(rate, float(np.max(ts * np.abs(values - limit))))
        with_data += has_data
    scale = max(1.0, quad.max_abs())
    report = ToeplitzReport(lines_sampled=lines, lines_with_data=with_data, constant_lines=constant_count,
                            max_constant_deviation=deviation, rate_constant=rate, max_limit=limit_max,
                            envelope_bound=bound, envelope_holds=rate <= bound,
                            constant_holds=deviation <= 1e-12 * scale, vacuous=with_data == 0)
    if not report.envelope_holds:
        logger.warning(f"Toplitz-Lipschitz rate {rate:.3e} above {bound:.3e} over {with_data} lines")
    return report


# ---------- Conjugacy ----------

def flow(series: FourierTaylorSeries, y0: np.ndarray, t: float, sites: Sequence[Site],
         rtol: float = 1e-11, atol: float = 1e-13) -> np.ndarray:
    """Time-t map of the Hamiltonian vector field of `series`"""
    if t == 0 or series.is_zero():
        return np.asarray(y0, dtype=complex)
    cs = CompiledSeries(series, sites)
    sol = integrate.solve_ivp(lambda _, y: cs.vector_field(y), (0.0, t), np.asarray(y0, dtype=complex),
                              method="DOP853", rtol=rtol, atol=atol)
    if not sol.success or not np.all(np.isfinite(sol.y[:, -1])):
        raise IntegrationError(f"flow integration failed: {sol.message}", {"t": t})
    return sol.y[:, -1]


def conjugacy_defect(H: FourierTaylorSeries, F: FourierTaylorSeries, H_plus: FourierTaylorSeries,
                     point: np.ndarray, t: float, sites: Optional[Sequence[Site]] = None) -> float:
    """max |phi_H^t(Phi(y)) - Phi(phi_{H+}^t(y))| with Phi the time-one map of F"""
    if sites is None:
        sites = sorted(set(H.sites()) | set(F.sites()) | set(H_plus.sites()))
    lhs = flow(H, flow(F, point, 1.0, sites), t, sites)
    rhs = flow(F, flow(H_plus, point, t, sites), 1.0, sites)
    return float(np.abs(lhs - rhs).max())
