"""Hamiltonian matrices and algebraic/differential Riccati equations.

Block convention: ``H = [[A, R], [Q, -A^H]]`` and ``X = Ric[H]`` solves

    A^H X + X A + X R X - Q = 0

with ``A + R X`` stable, equivalently ``H [I; X] = [I; X] (A + R X)``.
A filtering Riccati equation ``A P + P A^T + B B^T - P C^T C P = 0`` is
therefore encoded as ``H = [[A^T, -C^T C], [-B B^T, -A]]``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from ._linalg import hermitize, min_eig, psd_factor, psd_pinv
from .errors import (DimensionMismatch, IndefiniteBlock, NoStabilizingSolution,
                     OddDimension, StepTooLarge, SubspaceDimensionMismatch)
from .statespace import hautus_controllable, hautus_observable

HAMILTONIAN_RTOL = 1e-10
MARGINAL_TOL = 1e-10
SYMMETRY_TOL = 1e-9


def sigma(n: int) -> np.ndarray:
    """The symplectic form ``[[0, -I], [I, 0]]`` of size 2n."""
    I = np.eye(n)
    Z = np.zeros((n, n))
    return np.block([[Z, -I], [I, Z]])


def omega(n: int) -> np.ndarray:
    """Commutator form ``[[0, -iI], [iI, 0]]`` for states ordered (x..., y...).

    For a single mode (n = 2) this is ``[[0, -i], [i, 0]]``.
    """
    if n % 2:
        raise OddDimension("the commutator form needs an even state dimension")
    k = n // 2
    I = np.eye(k)
    Z = np.zeros((k, k))
    return np.block([[Z, -1j * I], [1j * I, Z]])


def is_hamiltonian(M, rtol: float = HAMILTONIAN_RTOL) -> bool:
    """True iff ``Sigma M + M^H Sigma`` vanishes relative to ``|M|``."""
    M = np.atleast_2d(np.asarray(M))
    if M.shape[0] != M.shape[1]:
        raise DimensionMismatch("Hamiltonian candidates must be square")
    if M.shape[0] % 2:
        raise OddDimension(f"dimension {M.shape[0]} is odd")
    S = sigma(M.shape[0] // 2)
    res = np.linalg.norm(S @ M + M.conj().T @ S)
    return bool(res <= rtol * max(np.linalg.norm(M), np.finfo(float).tiny))


@dataclass(frozen=True, eq=False)
class HamiltonianMatrix:
    H: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H))
        if H.dtype.kind not in "fc":
            H = H.astype(float)
        if not is_hamiltonian(H):
            raise ValueError("matrix is not Hamiltonian")
        H = H.copy()
        H.setflags(write=False)
        object.__setattr__(self, "H", H)

    @classmethod
    def from_blocks(cls, A, R, Q) -> "HamiltonianMatrix":
        A, R, Q = (np.atleast_2d(np.asarray(M)) for M in (A, R, Q))
        return cls(np.block([[A, R], [Q, -A.conj().T]]))

    @property
    def n(self) -> int:
        return self.H.shape[0] // 2

    @property
    def A(self) -> np.ndarray:
        return self.H[:self.n, :self.n]

    @property
    def R(self) -> np.ndarray:
        return self.H[:self.n, self.n:]

    @property
    def Q(self) -> np.ndarray:
        return self.H[self.n:, :self.n]

    def transformed(self, T) -> "HamiltonianMatrix":
        T = np.asarray(T)
        return HamiltonianMatrix(T @ self.H @ np.linalg.inv(T))


def filter_hamiltonian(A, B, C, D, S_corr=None) -> HamiltonianMatrix:
    """Hamiltonian matrix of the stationary filtering Riccati equation.

    The cross term ``G = B S_corr D^T`` between dynamical and measurement
    noise is removed from the drift before building the blocks, so that

        ``Ric[H] = P`` with ``A P + P A^T + B B^T - (P C^T + G) M (P C^T + G)^T = 0``

    and ``M = (D D^T)^+``.
    """
    A, B, C, D = (np.atleast_2d(np.asarray(x, dtype=float)) for x in (A, B, C, D))
    S = np.zeros((B.shape[1], D.shape[1])) if S_corr is None else np.atleast_2d(S_corr)
    G = B @ S @ D.T
    M = psd_pinv(D @ D.T)
    Abar = A - G @ M @ C
    R = -C.T @ M @ C
    Q = -(B @ B.T - G @ M @ G.T)
    return HamiltonianMatrix.from_blocks(Abar.T, hermitize(R), hermitize(Q))


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    X: np.ndarray
    closed_loop_eigs: np.ndarray
    residual: float
    used_marginal: int = 0


def riccati_residual(H: HamiltonianMatrix, X: np.ndarray) -> float:
    """Relative residual ``|A^H X + X A + X R X - Q| / (1 + |X|^2)``."""
    A, R, Q = H.A, H.R, H.Q
    r = A.conj().T @ X + X @ A + X @ R @ X - Q
    return float(np.linalg.norm(r) / (1 + np.linalg.norm(X) ** 2))


def ric(H: HamiltonianMatrix, marginal_tol: float = MARGINAL_TOL) -> RiccatiSolution:
    """Stabilizing solution ``Ric[H]`` from an ordered Schur decomposition.

    Eigenvalues with ``Re < -marginal_tol`` span the stable subspace.  If it
    has fewer than n dimensions, eigenvalues with ``|Re| <= marginal_tol``
    are appended until it reaches n; the result is accepted only if it is
    Hermitian.
    """
    if not isinstance(H, HamiltonianMatrix):
        H = HamiltonianMatrix(H)
    n = H.n
    M = H.H.astype(complex)
    T, Z, k_s = la.schur(M, output="complex",
                         sort=lambda lam: lam.real < -marginal_tol)
    used_marginal = 0
    if k_s > n:
        raise SubspaceDimensionMismatch(
            f"{k_s} stable eigenvalues for an n={n} problem")
    if k_s < n:
        T2, Z2, k_m = la.schur(T[k_s:, k_s:], output="complex",
                               sort=lambda lam: abs(lam.real) <= marginal_tol)
        if k_s + k_m < n:
            raise SubspaceDimensionMismatch(
                f"only {k_s} stable and {k_m} marginal eigenvalues; need {n}")
        Z = Z.copy()
        Z[:, k_s:] = Z[:, k_s:] @ Z2
        used_marginal = n - k_s
    U1, U2 = Z[:n, :n], Z[n:, :n]
    if np.linalg.cond(U1) > 1e12:
        raise NoStabilizingSolution("invariant subspace has no graph basis [I; X]")
    X = np.linalg.solve(U1.T, U2.T).T
    asym = np.linalg.norm(X - X.conj().T)
    if asym > SYMMETRY_TOL * max(1.0, np.linalg.norm(X)):
        raise NoStabilizingSolution(f"solution is not Hermitian (|X - X^H| = {asym:.2e})")
    X = hermitize(X)
    if not np.iscomplexobj(H.H):
        X = X.real
    elif np.abs(X.imag).max() == 0:
        X = X.real
    eigs = la.eigvals(H.A + H.R @ X)
    return RiccatiSolution(X, eigs, riccati_residual(H, X), used_marginal)


@dataclass(frozen=True, eq=False)
class ShiftCheck:
    shifted: HamiltonianMatrix
    X: np.ndarray
    X_shifted: np.ndarray
    shift_error: float
    min_eig: float
    holds: bool


def ric_shift_check(H: HamiltonianMatrix, psd_tol: float = 1e-9) -> ShiftCheck:
    """Solve for ``Ric[T H T^-1]`` with ``T = [[I, 0], [Omega, I]]``.

    The result should equal ``Ric[H] + Omega``; ``holds`` reports whether it
    is positive semidefinite, i.e. whether the stationary covariance obeys
    ``P + Omega >= 0``.
    """
    if not isinstance(H, HamiltonianMatrix):
        H = HamiltonianMatrix(H)
    n = H.n
    W = omega(n)
    T = np.block([[np.eye(n), np.zeros((n, n))], [W, np.eye(n)]])
    shifted = H.transformed(T)
    X = ric(H).X
    Xs = ric(shifted).X
    err = float(np.linalg.norm(Xs - (X + W)) / max(1.0, np.linalg.norm(X)))
    lo = min_eig(Xs)
    scale = max(1.0, np.linalg.norm(Xs))
    return ShiftCheck(shifted, X, Xs, err, lo, bool(lo >= -psd_tol * scale))


@dataclass(frozen=True, eq=False)
class DetectabilityReport:
    A_T: np.ndarray
    B_T: np.ndarray
    C_T: np.ndarray
    detectable: bool
    no_imaginary_uncontrollable: bool


def detectability_condition(H_shifted: HamiltonianMatrix) -> DetectabilityReport:
    """Factor ``[[A_T^H, -C_T^H C_T], [-B_T B_T^H, -A_T]]`` and run Hautus tests."""
    if not isinstance(H_shifted, HamiltonianMatrix):
        H_shifted = HamiltonianMatrix(H_shifted)
    A_T = H_shifted.A.conj().T
    try:
        C_T, _ = psd_factor(-H_shifted.R, what="-C_T^H C_T block")
        Bh, _ = psd_factor(-H_shifted.Q, what="-B_T B_T^H block")
    except ValueError as exc:
        raise IndefiniteBlock(str(exc)) from None
    B_T = Bh.conj().T
    return DetectabilityReport(
        A_T=A_T, B_T=B_T, C_T=C_T,
        detectable=hautus_observable(C_T, A_T, only_unstable=True),
        no_imaginary_uncontrollable=hautus_controllable(A_T, B_T, only_imaginary=True),
    )


# ---------------------------------------------------------------------------
# Riccati differential equation
# ---------------------------------------------------------------------------

def riccati_rhs(P, A, B, C, D, S_corr=None, DDinv=None) -> np.ndarray:
    """Right-hand side of the correlated-noise filter Riccati ODE."""
    G = B @ (np.zeros((B.shape[1], D.shape[1])) if S_corr is None else S_corr) @ D.T
    if DDinv is None:
        DDinv = psd_pinv(D @ D.T)
    N = P @ C.T + G
    return A @ P + P @ A.T + B @ B.T - N @ DDinv @ N.T


def rk4_step(f, P: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(P)
    k2 = f(P + 0.5 * dt * k1)
    k3 = f(P + 0.5 * dt * k2)
    k4 = f(P + dt * k3)
    return P + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def check_covariance(P: np.ndarray, tol: float = 1e-8) -> None:
    if not np.all(np.isfinite(P)):
        raise StepTooLarge("covariance became non-finite")
    lo = min_eig(P)
    if lo < -tol * max(1.0, float(np.abs(P).max())):
        raise StepTooLarge(f"covariance lost positive semidefiniteness ({lo:.3e})")


@dataclass(frozen=True, eq=False)
class RiccatiSeries:
    times: np.ndarray
    P: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.P[-1]

    def to_csv(self) -> str:
        n = self.P.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"P{i}{j}" for i in range(n) for j in range(n)])
        for t, P in zip(self.times, self.P):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in P.ravel()])
        return buf.getvalue()


def default_dt(A) -> float:
    return 1e-3 / max(1.0, float(np.linalg.norm(np.atleast_2d(A), 2)))


def integrate_riccati(A, B, C, D, S_corr, P0, dt: float | None = None,
                      t_end: float = 1.0, record_every: int = 1) -> RiccatiSeries:
    """Fixed-step RK4 integration of the filter Riccati ODE.

    ``P`` is symmetrized after every step; a step that leaves the PSD cone
    by more than ``1e-8`` raises :class:`StepTooLarge`.
    """
    A, B, C, D = (np.atleast_2d(np.asarray(x, dtype=float)) for x in (A, B, C, D))
    if dt is None:
        dt = default_dt(A)
    if dt <= 0:
        raise ValueError("dt must be positive")
    S = None if S_corr is None else np.atleast_2d(np.asarray(S_corr, dtype=float))
    DDinv = psd_pinv(D @ D.T)
    P = np.array(np.atleast_2d(P0), dtype=float)
    steps = int(round(t_end / dt))
    times, out = [0.0], [P.copy()]

    def f(X):
        return riccati_rhs(X, A, B, C, D, S, DDinv)

    for k in range(1, steps + 1):
        P = hermitize(rk4_step(f, P, dt))
        check_covariance(P)
        if k % record_every == 0 or k == steps:
            times.append(k * dt)
            out.append(P.copy())
    return RiccatiSeries(np.array(times), np.array(out))
