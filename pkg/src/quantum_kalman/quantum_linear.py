"""Linear quantum systems in canonical two-phase form and their measurement models.

A single-mode system with coupling ``Cx`` and free parameter ``F`` has the
two quadrature transfer functions

    Gx = (-Cx^2/2 + F, -Cx, Cx, 1),   Gy = (-Cx^2/2 - F, -Cx, Cx, 1)

which satisfy the duality ``Gx(s) Gy(-s) = 1``.  Measuring the x output
gives a two-state filter model driven by one shared noise vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .errors import DimensionMismatch, DomainError, ZeroCoupling
from .filtering import ExperimentResult, LinearFilterModel
from .riccati import filter_hamiltonian, ric
from .statespace import (StateSpaceSystem, frequency_response, match_multisets, poles,
                         sample_points, zeros)

DUALITY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class QuantumLinearSystem:
    Cx: float
    F: float
    Gx: StateSpaceSystem
    Gy: StateSpaceSystem


@dataclass(frozen=True)
class DualityReport:
    max_residual: float
    pole_zero_symmetric: bool
    norm_tradeoff_ok: bool

    @property
    def holds(self) -> bool:
        return (self.max_residual < DUALITY_TOL and self.pole_zero_symmetric
                and self.norm_tradeoff_ok)


def verify_duality(gx: StateSpaceSystem, gy: StateSpaceSystem, n_points: int = 20,
                   radius: float = 10.0, seed: int = 0,
                   omegas=None) -> DualityReport:
    """Check ``Gx(s) Gy(-s) = 1`` on random points and the pole/zero mirror."""
    if not (gx.is_siso and gy.is_siso):
        raise DimensionMismatch("duality is defined for SISO pairs")
    rng = np.random.default_rng(seed)
    px, py = poles(gx), poles(gy)
    pts = sample_points(rng, n_points, radius, avoid=np.concatenate([px, -py]))
    # Points where either resolvent is singular are skipped (NaN).
    prod = frequency_response(gx, pts)[:, 0, 0] * frequency_response(gy, -pts)[:, 0, 0]
    dev = np.abs(prod - 1)
    res = float(np.max(dev[np.isfinite(dev)], initial=0.0))
    sym = match_multisets(zeros(gx), -py)
    if omegas is None:
        omegas = np.concatenate([[0.0], np.logspace(-3, 3, 121)])
    jw = 1j * np.asarray(omegas, dtype=float)
    mag = np.abs(frequency_response(gx, jw)[:, 0, 0]) * np.abs(frequency_response(gy, jw)[:, 0, 0])
    ok = bool(np.all(mag[np.isfinite(mag)] >= 1 - DUALITY_TOL))
    return DualityReport(float(res), bool(sym), bool(ok))


def canonical_system(Cx: float, F: float) -> QuantumLinearSystem:
    if Cx == 0:
        raise ZeroCoupling("Cx must be nonzero")
    Cx, F = float(Cx), float(F)
    gx = StateSpaceSystem([[-Cx**2 / 2 + F]], [[-Cx]], [[Cx]], [[1.0]])
    gy = StateSpaceSystem([[-Cx**2 / 2 - F]], [[-Cx]], [[Cx]], [[1.0]])
    report = verify_duality(gx, gy)
    if report.max_residual >= DUALITY_TOL:
        raise ArithmeticError(f"duality residual {report.max_residual:.2e}")
    return QuantumLinearSystem(Cx, F, gx, gy)


@dataclass(frozen=True, eq=False)
class MeasuredQuantumSystem:
    model: LinearFilterModel
    drive: np.ndarray | None = None
    shared_noise: bool = True
    qsys: QuantumLinearSystem | None = None


def _shared(B, D) -> np.ndarray:
    return np.eye(B.shape[1], D.shape[1])


def measured_system(qsys: QuantumLinearSystem) -> MeasuredQuantumSystem:
    """Filter model for measuring the x phase; the y output carries no information."""
    gx, gy = qsys.Gx, qsys.Gy
    A = la.block_diag(gx.A, gy.A)
    B = la.block_diag(gx.B, gy.B)
    C = np.array([[gx.C[0, 0], 0.0], [0.0, 0.0]])
    D = np.array([[gx.D[0, 0], 0.0], [0.0, 0.0]])
    return MeasuredQuantumSystem(LinearFilterModel(A, B, C, D, _shared(B, D)), qsys=qsys)


def stationary_covariance(Cx: float, F: float) -> np.ndarray:
    """Closed-form stationary filter covariance ``diag(r, 1/r)``, ``r = 1 + 2F/Cx^2``."""
    if Cx == 0:
        raise ZeroCoupling("Cx must be nonzero")
    if F <= -Cx**2 / 2:
        raise DomainError(f"stationary covariance needs F > -Cx^2/2 (got F={F})")
    r = 1 + 2 * F / Cx**2
    return np.diag([r, 1 / r])


def stationary_from_riccati(msys: MeasuredQuantumSystem) -> np.ndarray:
    m = msys.model
    return ric(filter_hamiltonian(m.A, m.B, m.C, m.D, m.S_corr)).X.real


def scenario_cavity(K: float) -> MeasuredQuantumSystem:
    return measured_system(canonical_system(K, 0.0))


def scenario_driven_cavity(K: float, hx: float, hy: float) -> MeasuredQuantumSystem:
    """Cavity with a known constant drive entering the mean equations only."""
    base = scenario_cavity(K)
    return MeasuredQuantumSystem(base.model, np.array([hx, hy], dtype=float),
                                 qsys=base.qsys)


def scenario_inefficient(K: float, delta: float) -> MeasuredQuantumSystem:
    """Cavity read out through a lossy detector.

    An extra independent noise column with weight ``delta`` in the first
    measurement row gives ``DD^T = 1 + delta^2``, i.e. detection efficiency
    ``1 / (1 + delta^2)``.
    """
    if K <= 0:
        raise DomainError("K must be positive")
    if delta < 0:
        raise DomainError("delta must be non-negative")
    qsys = canonical_system(K, 0.0)
    A = -K**2 / 2 * np.eye(2)
    B = np.array([[-K, 0.0, 0.0], [0.0, -K, 0.0]])
    C = np.array([[K, 0.0], [0.0, 0.0]])
    D = np.array([[1.0, 0.0, delta], [0.0, 0.0, 0.0]])
    return MeasuredQuantumSystem(LinearFilterModel(A, B, C, D, np.eye(3)), qsys=qsys)


def update_coefficient(msys: MeasuredQuantumSystem) -> float:
    """Weight ``(DD^T)^+`` applied to the measured channel's innovation."""
    return float(msys.model.DDinv[0, 0])


@dataclass(frozen=True)
class LindbladReport:
    max_deviation_se: float
    max_deviation: float
    consistent: bool


def lindblad_consistency(msys: MeasuredQuantumSystem, ensemble: ExperimentResult,
                         x0_mean, n_se: float = 3.0) -> LindbladReport:
    """Ensemble mean of ``x_hat`` against the unconditional mean dynamics.

    The innovation has zero mean, so the path-averaged estimate obeys
    ``m_{k+1} = (I + A dt) m_k + u dt`` exactly under the Euler scheme; this
    recursion tends to the flow of ``dx = (A x + u) dt`` as ``dt -> 0``.
    Components with vanishing spread (zero gain) must match to rounding.
    """
    A = msys.model.A
    n = A.shape[0]
    u = np.zeros(n) if msys.drive is None else msys.drive
    dt = ensemble.dt
    step = np.eye(n) + A * dt
    m = np.asarray(x0_mean, dtype=float).copy()
    xh = ensemble.x_hat
    npaths = xh.shape[1]
    k_done = 0
    worst_se, worst = 0.0, 0.0
    for k, t in enumerate(ensemble.times):
        target = int(round(t / dt))
        while k_done < target:
            m = step @ m + u * dt
            k_done += 1
        if k == 0:
            continue
        mean = xh[k].mean(axis=0)
        se = xh[k].std(axis=0, ddof=1) / np.sqrt(npaths)
        dev = np.abs(mean - m)
        worst = max(worst, float(dev.max()))
        tiny = 1e-9 * (1 + np.abs(m))
        active = se > tiny
        if np.any(active):
            worst_se = max(worst_se, float((dev[active] / se[active]).max()))
        if np.any(~active & (dev > tiny)):
            worst_se = np.inf
    return LindbladReport(worst_se, worst, worst_se < n_se)
