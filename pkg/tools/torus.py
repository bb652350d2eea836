"""
Approximate invariant torus and its validation against the Galerkin ODE.

The torus in final KAM coordinates is {I = 0, z = zbar = 0}. Its embedding
into the original mode amplitudes undoes, in order, the KAM transforms, the
symplectic rotations, the scaling, the action-angle change and the Birkhoff
map.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel
from scipy import integrate

from tools.errors import IntegrationError
from tools.hamiltonian_algebra import FourierTaylorSeries
from tools.kam_engine import KamState, flow
from tools.lattice_resonance import Site, TangentialSet
from tools.normal_form import PI2, Parameters, SymplecticRotation, galerkin_sites

logger = logging.getLogger("torus")


@dataclass
class TorusApproximation:
    xi: Parameters
    omega_infty: np.ndarray
    S: TangentialSet
    sites: Sequence[Site]
    transforms: List[FourierTaylorSeries] = field(default_factory=list)
    rotations: List[SymplecticRotation] = field(default_factory=list)
    birkhoff: Optional[FourierTaylorSeries] = None
    mode_bound: int = 0

    @property
    def all_sites(self) -> List[Site]:
        return sorted(set(self.S.sites) | set(self.sites), key=lambda n: (n.norm2, n))

    @property
    def physical_frequencies(self) -> np.ndarray:
        """omega in the original time scale (eps^3 omega_infty)"""
        return self.xi.eps ** 3 * np.asarray(self.omega_infty, dtype=float)

    def normal_form_point(self, theta: Sequence[float]) -> np.ndarray:
        """(theta, I, w, wbar) in scaled, unrotated coordinates"""
        b, N = self.S.b, len(self.sites)
        y = np.concatenate([np.asarray(theta, dtype=complex), np.zeros(b + 2 * N, dtype=complex)])
        for F in reversed(self.transforms):
            y = flow(F, y, 1.0, self.sites)
        for rot in reversed(self.rotations):
            y = rot.pullback_point(y, b, self.sites)
        return y

    def embedding(self, theta: Sequence[float]) -> Dict[Site, complex]:
        """Mode amplitudes q_n at the torus angle theta"""
        b, N = self.S.b, len(self.sites)
        eps = self.xi.eps
        y = self.normal_form_point(theta)
        theta_c, I, w, wbar = y[:b], y[b:2 * b], y[2 * b:2 * b + N], y[2 * b + N:]
        amp = np.sqrt(eps ** 5 * I + eps ** 3 * np.asarray(self.xi.xi, dtype=complex))
        q = {s: amp[p] * np.exp(-1j * theta_c[p]) for p, s in enumerate(self.S.sites)}
        qbar = {s: amp[p] * np.exp(1j * theta_c[p]) for p, s in enumerate(self.S.sites)}
        for j, n in enumerate(self.sites):
            q[n] = eps ** 2.5 * w[j]
            qbar[n] = eps ** 2.5 * wbar[j]
        if self.birkhoff is not None and not self.birkhoff.is_zero():
            order = self.all_sites
            point = np.array([q[n] for n in order] + [qbar[n] for n in order], dtype=complex)
            point = flow(self.birkhoff.scale(-1), point, 1.0, order)
            q = {n: point[i] for i, n in enumerate(order)}
        return q

    def trajectory(self, t: float, theta0: Optional[Sequence[float]] = None) -> Dict[Site, complex]:
        """q(t) on the torus; the angles rotate as theta(t) = theta0 - omega t"""
        theta0 = np.zeros(self.S.b) if theta0 is None else np.asarray(theta0, dtype=float)
        return self.embedding(theta0 - self.physical_frequencies * t)

    def to_dict(self) -> Dict:
        return {"S": self.S.to_list(), "xi": list(self.xi.xi), "eps": self.xi.eps,
                "omega_infty": [float(x) for x in self.omega_infty],
                "physical_frequencies": [float(x) for x in self.physical_frequencies],
                "steps": len(self.transforms), "mode_bound": self.mode_bound}


def extract_torus(state: KamState) -> TorusApproximation:
    normal = state.normal
    mode_bound = max((math.isqrt(n.norm2) + 1 for n in normal.sites), default=0)
    torus = TorusApproximation(xi=normal.params, omega_infty=np.array(normal.omega, dtype=float), S=normal.S,
                               sites=tuple(normal.sites), transforms=list(state.transforms),
                               rotations=list(normal.rotations), birkhoff=normal.birkhoff,
                               mode_bound=mode_bound)
    logger.info(f"Torus after {len(state.transforms)} steps: omega = {torus.physical_frequencies}")
    return torus


# ---------- Galerkin ODE ----------

class OdeReport(BaseModel):
    T: float
    dt: float
    mode_bound: int
    samples: int
    energy_drift: float
    mass_drift: float
    frequencies_fft: List[float]
    frequencies_predicted: List[float]
    frequencies_linear: List[float]
    max_error_predicted: float
    max_error_linear: float
    xi_scale: float


class GalerkinNLS:
    """q_n' = i (|n|^2 q_n + (1/4 pi^2) (|v|^2 v)_n), v the trigonometric polynomial of q"""

    def __init__(self, mode_bound: int):
        self.sites = galerkin_sites(mode_bound)
        M = 4
        while M < 4 * mode_bound + 2:
            M *= 2
        self.M = M
        self.i1 = np.array([n.n1 % M for n in self.sites])
        self.i2 = np.array([n.n2 % M for n in self.sites])
        self.lam = np.array([n.norm2 for n in self.sites], dtype=float)

    def field(self, q: np.ndarray) -> np.ndarray:
        M = self.M
        Q = np.zeros((M, M), dtype=complex)
        Q[self.i1, self.i2] = q
        v = np.fft.ifft2(Q) * (M * M)
        nl = np.fft.fft2(np.abs(v) ** 2 * v) / (M * M)
        return 1j * (self.lam * q + nl[self.i1, self.i2] / (4 * PI2))

    def energy(self, q: np.ndarray) -> float:
        M = self.M
        Q = np.zeros((M, M), dtype=complex)
        Q[self.i1, self.i2] = q
        v = np.fft.ifft2(Q) * (M * M)
        return float(np.sum(self.lam * np.abs(q) ** 2) + np.mean(np.abs(v) ** 4) / (8 * PI2))


def peak_frequency(signal: np.ndarray, dt: float) -> float:
    """Angular frequency of the dominant e^{i w t} component (Hann window, parabolic refinement)"""
    N = len(signal)
    spec = np.abs(np.fft.fft(signal * np.hanning(N)))
    i = int(np.argmax(spec))
    a, b, c = spec[(i - 1) % N], spec[i], spec[(i + 1) % N]
    denom = a - 2 * b + c
    delta = 0.5 * (a - c) / denom if denom != 0 else 0.0
    freqs = 2 * math.pi * np.fft.fftfreq(N, dt)
    return float(freqs[i] + delta * 2 * math.pi / (N * dt))


def ode_validate(torus: TorusApproximation, mode_bound: int, T: float, dt: float,
                 theta0: Optional[Sequence[float]] = None) -> OdeReport:
    """
    Integrate the Galerkin NLS from the torus initial data and compare the
    tangential FFT peaks with the torus frequencies.
    """
    if T <= 0 or dt <= 0:
        raise ValueError("T and dt must be positive")
    system = GalerkinNLS(mode_bound)
    theta0 = np.zeros(torus.S.b) if theta0 is None else theta0
    data = torus.embedding(theta0)
    q0 = np.array([data.get(n, 0j) for n in system.sites], dtype=complex)

    t_eval = np.arange(0.0, T + dt / 2, dt)
    sol = integrate.solve_ivp(lambda _, q: system.field(q), (0.0, float(t_eval[-1])), q0, method="DOP853",
                              t_eval=t_eval, rtol=1e-13, atol=1e-15)
    if not sol.success or not np.all(np.isfinite(sol.y)):
        raise IntegrationError(f"Galerkin integration failed: {sol.message}", {"T": T, "dt": dt})

    stride = max(1, len(t_eval) // 2000)
    E0, m0 = system.energy(q0), float(np.sum(np.abs(q0) ** 2))
    energy_drift = max(abs(system.energy(sol.y[:, j]) - E0) for j in range(0, len(t_eval), stride)) / abs(E0)
    mass_drift = float(np.abs(np.sum(np.abs(sol.y) ** 2, axis=0) - m0).max() / m0)

    pos = {n: i for i, n in enumerate(system.sites)}
    fft = [peak_frequency(sol.y[pos[s]], dt) for s in torus.S.sites]
    predicted = [float(x) for x in torus.physical_frequencies]
    linear = [float(s.norm2) for s in torus.S.sites]
    report = OdeReport(T=T, dt=dt, mode_bound=mode_bound, samples=len(t_eval), energy_drift=float(energy_drift),
                       mass_drift=mass_drift, frequencies_fft=fft, frequencies_predicted=predicted,
                       frequencies_linear=linear,
                       max_error_predicted=max(abs(a - b) for a, b in zip(fft, predicted)),
                       max_error_linear=max(abs(a - b) for a, b in zip(fft, linear)),
                       xi_scale=torus.xi.eps ** 3 * max(torus.xi.xi))
    logger.info(f"ODE validation: energy drift {energy_drift:.2e}, max |w_fft - w| {report.max_error_predicted:.2e}")
    return report
