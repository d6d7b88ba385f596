"""State-space linear systems and their transfer functions.

A system ``(A, B, C, D)`` maps an input ``u`` to an output ``m`` through

    dx/dt = A x + B u,      m = C x + D u,

with transfer function ``G(s) = C (sI - A)^{-1} B + D``.  Matrices may be
complex; all routines treat the real case as a special case.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.linalg as la

from .errors import DimensionMismatch, SingularResolvent, SingularTransform

# Resolvent condition-number cap used by eval_transfer.
RESOLVENT_COND_CAP = 1e12
# Relative singular-value threshold for Hautus rank tests.
RANK_RTOL = 1e-8


def _as_matrix(M, rows=None, cols=None) -> np.ndarray:
    a = np.asarray(M)
    if a.dtype.kind not in "fc":
        a = a.astype(float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1) if rows == 1 else a.reshape(-1, 1)
    if a.size == 0 and rows is not None and cols is not None:
        a = np.zeros((rows, cols), dtype=a.dtype)
    return a


@dataclass(frozen=True, eq=False)
class StateSpaceSystem:
    """Linear system ``(A, B, C, D)``.

    ``A`` is n x n, ``B`` n x m, ``C`` p x n and ``D`` p x m.  A pure
    feedthrough is represented with ``n = 0``.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        D = _as_matrix(self.D)
        p, m = D.shape
        A = np.asarray(self.A)
        n = 0 if A.size == 0 else _as_matrix(A).shape[0]
        A = _as_matrix(self.A, n, n)
        B = _as_matrix(self.B, n, m)
        C = _as_matrix(self.C, p, n)
        if A.shape != (n, n):
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        if B.shape != (n, m):
            raise DimensionMismatch(f"B must be {n}x{m}, got {B.shape}")
        if C.shape != (p, n):
            raise DimensionMismatch(f"C must be {p}x{n}, got {C.shape}")
        for name, val in zip("ABCD", (A, B, C, D)):
            val = val.copy()
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def nstates(self) -> int:
        return self.A.shape[0]

    @property
    def ninputs(self) -> int:
        return self.D.shape[1]

    @property
    def noutputs(self) -> int:
        return self.D.shape[0]

    @property
    def is_siso(self) -> bool:
        return self.D.shape == (1, 1)

    def __call__(self, s: complex) -> np.ndarray:
        return eval_transfer(self, s)

    def __repr__(self) -> str:
        return (f"StateSpaceSystem(n={self.nstates}, inputs={self.ninputs}, "
                f"outputs={self.noutputs})")

    # -- JSON ---------------------------------------------------------------
    def to_dict(self) -> dict:
        return {k: _matrix_to_json(getattr(self, k)) for k in "ABCD"}

    @classmethod
    def from_dict(cls, obj: dict) -> "StateSpaceSystem":
        missing = [k for k in "ABCD" if k not in obj]
        if missing:
            raise KeyError(f"system is missing matrices {missing}")
        extra = sorted(set(obj) - set("ABCD"))
        if extra:
            raise KeyError(f"unknown system keys {extra}")
        return cls(*(_matrix_from_json(obj[k]) for k in "ABCD"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "StateSpaceSystem":
        return cls.from_dict(json.loads(text))


def _matrix_to_json(M: np.ndarray) -> list:
    if np.iscomplexobj(M) and np.any(M.imag != 0):
        return [[[float(z.real), float(z.imag)] for z in row] for row in M]
    return [[float(z) for z in np.real(row)] for row in M]


def _matrix_from_json(rows) -> np.ndarray:
    """Rows of reals or ``[re, im]`` pairs; ``[]`` is an empty matrix."""
    if not isinstance(rows, list):
        raise TypeError("matrix must be a list of rows")
    if len(rows) == 0:
        return np.zeros((0, 0))
    out = []
    for row in rows:
        if not isinstance(row, list):
            raise TypeError("matrix rows must be lists")
        vals = []
        for entry in row:
            if isinstance(entry, list):
                if len(entry) != 2:
                    raise TypeError("complex entries must be [re, im] pairs")
                vals.append(complex(float(entry[0]), float(entry[1])))
            elif isinstance(entry, (int, float)) and not isinstance(entry, bool):
                vals.append(float(entry))
            else:
                raise TypeError(f"bad matrix entry {entry!r}")
        out.append(vals)
    if len({len(r) for r in out}) > 1:
        raise TypeError("ragged matrix")
    arr = np.array(out)
    if arr.ndim == 2 and arr.shape[1] == 0:
        arr = np.zeros((arr.shape[0], 0))
    return arr


def eval_transfer(sys: StateSpaceSystem, s: complex) -> np.ndarray:
    """Evaluate ``C (sI - A)^{-1} B + D`` at the complex point ``s``."""
    n = sys.nstates
    D = sys.D.astype(complex)
    if n == 0:
        return D
    M = s * np.eye(n) - sys.A
    if not np.all(np.isfinite(M)):
        raise SingularResolvent(f"non-finite resolvent at s={s}")
    if np.linalg.cond(M) > RESOLVENT_COND_CAP:
        raise SingularResolvent(f"sI - A is singular at s={s}")
    return sys.C @ np.linalg.solve(M, sys.B) + D


def frequency_response(sys: StateSpaceSystem, points) -> np.ndarray:
    """``G(s)`` at many points, shape ``(k, p, m)``; NaN where ``sI - A`` is singular."""
    pts = np.atleast_1d(np.asarray(points, dtype=complex))
    n = sys.nstates
    out = np.broadcast_to(sys.D.astype(complex), (pts.size,) + sys.D.shape).copy()
    if n == 0:
        return out
    M = pts[:, None, None] * np.eye(n) - sys.A
    finite = np.all(np.isfinite(M), axis=(1, 2))
    ok = finite.copy()
    ok[finite] = np.linalg.cond(M[finite]) <= RESOLVENT_COND_CAP
    out[ok] += sys.C @ np.linalg.solve(M[ok], np.broadcast_to(sys.B, (int(ok.sum()),) + sys.B.shape))
    out[~ok] = np.nan
    return out


def similarity_transform(sys: StateSpaceSystem, T) -> StateSpaceSystem:
    """Return ``(T A T^-1, T B, C T^-1, D)``."""
    T = np.asarray(T)
    n = sys.nstates
    if T.shape != (n, n):
        raise DimensionMismatch(f"T must be {n}x{n}")
    if n and np.linalg.cond(T) > 1 / np.finfo(float).eps:
        raise SingularTransform("T is not invertible")
    Tinv = np.linalg.inv(T) if n else T
    return StateSpaceSystem(T @ sys.A @ Tinv, T @ sys.B, sys.C @ Tinv, sys.D)


def cascade(g1: StateSpaceSystem, g2: StateSpaceSystem) -> StateSpaceSystem:
    """Series connection ``G1 G2``: the output of ``g2`` feeds ``g1``."""
    if g1.ninputs != g2.noutputs:
        raise DimensionMismatch(
            f"g1 takes {g1.ninputs} inputs but g2 has {g2.noutputs} outputs")
    n1, n2 = g1.nstates, g2.nstates
    A = np.block([[g1.A, g1.B @ g2.C],
                  [np.zeros((n2, n1)), g2.A]])
    B = np.vstack([g1.B @ g2.D, g2.B])
    C = np.hstack([g1.C, g1.D @ g2.C])
    return StateSpaceSystem(A.reshape(n1 + n2, n1 + n2),
                            B.reshape(n1 + n2, g2.ninputs),
                            C.reshape(g1.noutputs, n1 + n2), g1.D @ g2.D)


def poles(sys: StateSpaceSystem) -> np.ndarray:
    if sys.nstates == 0:
        return np.zeros(0, dtype=complex)
    return la.eigvals(sys.A).astype(complex)


def zeros(sys: StateSpaceSystem) -> np.ndarray:
    """Finite transmission zeros of a SISO system.

    Computed as the finite generalized eigenvalues of the pencil
    ``([[A, B], [C, D]], diag(I, 0))``.
    """
    if not sys.is_siso:
        raise DimensionMismatch("zeros() is defined for SISO systems only")
    n = sys.nstates
    if n == 0:
        return np.zeros(0, dtype=complex)
    M = np.block([[sys.A, sys.B], [sys.C, sys.D]])
    N = np.zeros_like(M, dtype=float)
    N[:n, :n] = np.eye(n)
    alpha, beta = la.eig(M, N, right=False, homogeneous_eigvals=True)
    finite = np.abs(beta) > 1e-10 * np.maximum(np.abs(alpha), 1e-300)
    return (alpha[finite] / beta[finite]).astype(complex)


def match_multisets(a: Sequence[complex], b: Sequence[complex],
                    tol: float = 1e-8) -> bool:
    """Greedy nearest-neighbour matching of two complex multisets."""
    a = list(np.asarray(a, dtype=complex))
    b = list(np.asarray(b, dtype=complex))
    if len(a) != len(b):
        return False
    for z in a:
        if not b:
            return False
        d = [abs(z - w) for w in b]
        j = int(np.argmin(d))
        if d[j] > tol * max(1.0, abs(z)):
            return False
        b.pop(j)
    return True


def _rank(M: np.ndarray) -> int:
    if M.size == 0:
        return 0
    sv = la.svdvals(M)
    if sv[0] == 0:
        return 0
    return int(np.sum(sv > RANK_RTOL * sv[0]))


def hautus_controllable(A, B, only_unstable: bool = False,
                        only_imaginary: bool = False, imag_tol: float = 1e-10
                        ) -> bool:
    """PBH test: ``rank [A - lam I, B] = n`` at the selected eigenvalues."""
    A = np.atleast_2d(A)
    n = A.shape[0]
    B = np.asarray(B).reshape(n, -1)
    for lam in la.eigvals(A):
        if only_unstable and lam.real < 0:
            continue
        if only_imaginary and abs(lam.real) > imag_tol:
            continue
        if _rank(np.hstack([A - lam * np.eye(n), B])) < n:
            return False
    return True


def hautus_observable(C, A, only_unstable: bool = False) -> bool:
    A = np.atleast_2d(A)
    n = A.shape[0]
    C = np.asarray(C).reshape(-1, n)
    return hautus_controllable(A.conj().T, C.conj().T, only_unstable)


@dataclass(frozen=True)
class StructuralReport:
    stable: bool
    controllable: bool
    observable: bool
    stabilizable: bool
    detectable: bool


def structural_tests(sys: StateSpaceSystem) -> StructuralReport:
    """Stability plus Hautus controllability/observability tests.

    Stabilizability and detectability restrict the rank test to the
    eigenvalues with non-negative real part.
    """
    A, B, C = sys.A, sys.B, sys.C
    if sys.nstates == 0:
        return StructuralReport(True, True, True, True, True)
    return StructuralReport(
        stable=bool(np.all(la.eigvals(A).real < 0)),
        controllable=hautus_controllable(A, B),
        observable=hautus_observable(C, A),
        stabilizable=hautus_controllable(A, B, only_unstable=True),
        detectable=hautus_observable(C, A, only_unstable=True),
    )


def power_spectrum_map(sys: StateSpaceSystem,
                       input_spectrum: Callable[[float], float],
                       omega: float) -> float:
    """Output power spectrum ``|G(i w)|^2 S_uu(w)`` of a SISO system."""
    if not sys.is_siso:
        raise DimensionMismatch("power_spectrum_map needs a SISO system")
    g = eval_transfer(sys, 1j * omega)[0, 0]
    return float(abs(g) ** 2 * input_spectrum(omega))


def is_squeezing(sys: StateSpaceSystem, omegas: Iterable[float] | None = None
                 ) -> bool:
    """Stable SISO system with ``|G(i w)| < 1`` on a frequency grid.

    The noise-reduction condition is checked on the imaginary axis.
    """
    if omegas is None:
        omegas = np.concatenate([[0.0], np.logspace(-4, 4, 161)])
    if not structural_tests(sys).stable:
        return False
    return all(abs(eval_transfer(sys, 1j * w)[0, 0]) < 1 for w in omegas)


def sample_points(rng: np.random.Generator, count: int, radius: float,
                  avoid: Sequence[complex] = (), margin: float = 1e-3
                  ) -> np.ndarray:
    """Random complex points in a disk, rejecting those near ``avoid``."""
    avoid = np.asarray(avoid, dtype=complex)
    pts = []
    while len(pts) < count:
        r = radius * np.sqrt(rng.uniform())
        s = r * np.exp(2j * np.pi * rng.uniform())
        if avoid.size and np.min(np.abs(avoid - s)) < margin:
            continue
        pts.append(s)
    return np.array(pts)
