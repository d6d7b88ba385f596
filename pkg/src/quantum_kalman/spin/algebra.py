"""Exact angular-momentum coupling coefficients and spin operator algebra.

All angular momenta are passed doubled (``two_j = 2 j``) so half-integer
spins stay integral.  Coupling coefficients are computed with Racah's sums in
exact rational arithmetic; only the final square root is taken in floating
point.
"""

from __future__ import annotations

import math
from fractions import Fraction
from functools import lru_cache

import numpy as np

from ..errors import RangeError

_fact = math.factorial


def _triangle(a: int, b: int, c: int) -> bool:
    return (a + b + c) % 2 == 0 and abs(a - b) <= c <= a + b


def _sqrt(x: Fraction) -> float:
    return math.sqrt(float(x))


@lru_cache(maxsize=None)
def clebsch_gordan(two_j1: int, two_m1: int, two_j2: int, two_m2: int,
                   two_J: int, two_M: int) -> float:
    """``<j1 m1; j2 m2 | J M>``; zero when a selection rule fails."""
    if two_m1 + two_m2 != two_M or not _triangle(two_j1, two_j2, two_J):
        return 0.0
    for j, m in ((two_j1, two_m1), (two_j2, two_m2), (two_J, two_M)):
        if abs(m) > j or (j + m) % 2:
            return 0.0
    a = (two_j1 + two_j2 - two_J) // 2
    b = (two_j1 - two_m1) // 2
    c = (two_j2 + two_m2) // 2
    d = (two_J - two_j2 + two_m1) // 2
    e = (two_J - two_j1 - two_m2) // 2
    total = 0
    for k in range(max(0, -d, -e), min(a, b, c) + 1):
        term = Fraction(1, _fact(k) * _fact(a - k) * _fact(b - k) * _fact(c - k)
                        * _fact(d + k) * _fact(e + k))
        total += -term if k % 2 else term
    pref = Fraction(
        (two_J + 1) * _fact((two_J + two_j1 - two_j2) // 2) * _fact((two_J - two_j1 + two_j2) // 2)
        * _fact(a), _fact((two_j1 + two_j2 + two_J) // 2 + 1))
    pref *= (_fact((two_J + two_M) // 2) * _fact((two_J - two_M) // 2)
             * _fact((two_j1 - two_m1) // 2) * _fact((two_j1 + two_m1) // 2)
             * _fact((two_j2 - two_m2) // 2) * _fact((two_j2 + two_m2) // 2))
    mag = _sqrt(total * total * pref)
    return mag if total >= 0 else -mag


def _delta(a: int, b: int, c: int) -> Fraction:
    return Fraction(_fact((a + b - c) // 2) * _fact((a - b + c) // 2) * _fact((-a + b + c) // 2),
                    _fact((a + b + c) // 2 + 1))


@lru_cache(maxsize=None)
def six_j(two_j1: int, two_j2: int, two_j3: int,
          two_j4: int, two_j5: int, two_j6: int) -> float:
    """Wigner 6j symbol ``{j1 j2 j3; j4 j5 j6}``; zero if a triad fails."""
    a, b, c, d, e, f = two_j1, two_j2, two_j3, two_j4, two_j5, two_j6
    triads = ((a, b, c), (a, e, f), (d, b, f), (d, e, c))
    if not all(_triangle(*t) for t in triads):
        return 0.0
    lo = max(sum(t) for t in triads) // 2
    hi = min(a + b + d + e, a + c + d + f, b + c + e + f) // 2
    total = 0
    for t in range(lo, hi + 1):
        den = _fact(t - (a + b + c) // 2) * _fact(t - (a + e + f) // 2) \
            * _fact(t - (d + b + f) // 2) * _fact(t - (d + e + c) // 2) \
            * _fact((a + b + d + e) // 2 - t) * _fact((a + c + d + f) // 2 - t) \
            * _fact((b + c + e + f) // 2 - t)
        term = Fraction(_fact(t + 1), den)
        total += -term if t % 2 else term
    sq = total * total
    for tr in triads:
        sq *= _delta(*tr)
    mag = _sqrt(sq)
    return mag if total >= 0 else -mag


class SpinAlgebra:
    """Spin-S operators in the basis ``|S, m>``, ``m = S, S-1, ..., -S``.

    Two normalizations are carried.  ``Jx, Jy, Jz, Jplus, Jminus`` are the
    standard ones.  The spherical components used with the Wigner kernel are
    ``Splus = Jplus / sqrt(2)``, ``Sminus = Jminus / sqrt(2)``, ``Sz = Jz``,
    with cartesian ``Sx = Splus + Sminus`` and ``Sy = -i (Splus - Sminus)``,
    so that ``[Sx, Sy] = 2i Sz``.

    Polarization operators are built on demand and cached.
    """

    def __init__(self, two_S: int):
        if two_S < 0:
            raise RangeError("spin must be non-negative")
        self.two_S = int(two_S)
        self.S = two_S / 2
        self.dim = two_S + 1
        self.epsilon = 1.0 / self.dim
        self.two_m = np.arange(two_S, -two_S - 1, -2)
        m = self.two_m / 2
        S = self.S
        self.Jz = np.diag(m).astype(complex)
        up = np.sqrt(S * (S + 1) - m[1:] * (m[1:] + 1))
        self.Jplus = np.diag(up, 1).astype(complex)
        self.Jminus = self.Jplus.conj().T
        self.Jx = 0.5 * (self.Jplus + self.Jminus)
        self.Jy = -0.5j * (self.Jplus - self.Jminus)
        self.Splus = self.Jplus / np.sqrt(2)
        self.Sminus = self.Jminus / np.sqrt(2)
        self.Sz = self.Jz
        self.Sx = self.Splus + self.Sminus
        self.Sy = -1j * (self.Splus - self.Sminus)
        self._T: dict = {}

    def __repr__(self):
        return f"SpinAlgebra(S={self.S:g})"

    def check(self, L: int, M: int):
        if not (0 <= L <= self.two_S and abs(M) <= L):
            raise RangeError(f"(L, M) = ({L}, {M}) outside 0 <= L <= 2S, |M| <= L")

    def T(self, L: int, M: int) -> np.ndarray:
        """Polarization operator ``T[m', m] = sqrt((2L+1)/(2S+1)) <S m; L M | S m'>``."""
        self.check(L, M)
        key = (L, M)
        if key not in self._T:
            out = np.zeros((self.dim, self.dim), dtype=complex)
            scale = math.sqrt((2 * L + 1) / self.dim)
            for j, tm in enumerate(self.two_m):
                tmp = tm + 2 * M
                if abs(tmp) > self.two_S:
                    continue
                i = (self.two_S - tmp) // 2
                out[i, j] = scale * clebsch_gordan(self.two_S, tm, 2 * L, 2 * M,
                                                   self.two_S, tmp)
            out.setflags(write=False)
            self._T[key] = out
        return self._T[key]

    def coefficients(self, X: np.ndarray, lmax: int | None = None) -> np.ndarray:
        """Harmonic coefficients of the Wigner function ``W_X``.

        ``c[L, M] = sqrt(4 pi / (2S+1)) Tr(T_LM^dagger X)``; trailing
        coefficient axes are absent (scalar field).
        """
        lmax = self.two_S if lmax is None else min(lmax, self.two_S)
        X = np.asarray(X)
        c = np.zeros((lmax + 1, 2 * lmax + 1), dtype=complex)
        k = math.sqrt(4 * math.pi / self.dim)
        for L in range(lmax + 1):
            for M in range(-L, L + 1):
                c[L, M + lmax] = k * np.vdot(self.T(L, M), X)
        return c

    def operator(self, c: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`coefficients` (band ``L <= 2S`` only)."""
        lmax = c.shape[0] - 1
        if lmax > self.two_S and np.any(np.abs(c[self.two_S + 1:]) > 0):
            raise RangeError("coefficients beyond L = 2S have no operator")
        X = np.zeros((self.dim, self.dim), dtype=complex)
        k = math.sqrt(self.dim / (4 * math.pi))
        for L in range(min(lmax, self.two_S) + 1):
            for M in range(-L, L + 1):
                if c[L, M + lmax] != 0:
                    X += k * c[L, M + lmax] * self.T(L, M)
        return X

    def kernel_coefficients(self, lmax: int | None = None) -> np.ndarray:
        """Matrix-valued coefficients of the kernel ``w(Omega)``: ``c[L, M] = sqrt(4pi/N) T_LM^dagger``."""
        lmax = self.two_S if lmax is None else min(lmax, self.two_S)
        c = np.zeros((lmax + 1, 2 * lmax + 1, self.dim, self.dim), dtype=complex)
        k = math.sqrt(4 * math.pi / self.dim)
        for L in range(lmax + 1):
            for M in range(-L, L + 1):
                c[L, M + lmax] = k * self.T(L, M).conj().T
        return c
