"""Sphere quadrature and spectral operators on spherical-harmonic coefficients.

A band-limited function is stored as an array ``c[L, M + Lmax, ...]`` of
coefficients of the orthonormal, Condon-Shortley phased ``Y_LM``; trailing
axes let the coefficients themselves be vectors or matrices.  Entries with
``|M| > L`` are always zero.  Every operator below acts exactly on the
coefficients (no finite differences).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_legendre, sph_harm_y

from ..errors import GridTooCoarse


def empty(lmax: int, trail: tuple = (), dtype=complex) -> np.ndarray:
    return np.zeros((lmax + 1, 2 * lmax + 1) + tuple(trail), dtype=dtype)


def lmax_of(c: np.ndarray) -> int:
    return c.shape[0] - 1


def pad(c: np.ndarray, lmax: int) -> np.ndarray:
    """Embed ``c`` in a larger band limit."""
    old = lmax_of(c)
    if lmax < old:
        raise ValueError("cannot shrink a coefficient array with pad()")
    out = empty(lmax, c.shape[2:], np.result_type(c, complex))
    out[:old + 1, lmax - old:lmax + old + 1] = c
    return out


def _ms(lmax):
    return np.arange(-lmax, lmax + 1)


def _bcast(v, c):
    return v.reshape(v.shape + (1,) * (c.ndim - v.ndim))


def Lz(c: np.ndarray) -> np.ndarray:
    """``-i d/dphi``: multiplies ``Y_LM`` by ``M``."""
    return c * _bcast(_ms(lmax_of(c))[None, :], c)


def L2(c: np.ndarray) -> np.ndarray:
    ls = np.arange(lmax_of(c) + 1)
    return c * _bcast((ls * (ls + 1.0))[:, None], c)


def _ladder(c: np.ndarray, step: int) -> np.ndarray:
    lmax = lmax_of(c)
    out = np.zeros_like(c, dtype=complex)
    for L in range(lmax + 1):
        for M in range(-L, L + 1):
            Mn = M + step
            if abs(Mn) > L:
                continue
            out[L, Mn + lmax] += np.sqrt(L * (L + 1) - M * Mn) * c[L, M + lmax]
    return out


def Lplus(c):
    return _ladder(c, +1)


def Lminus(c):
    return _ladder(c, -1)


def Lx(c):
    return 0.5 * (Lplus(c) + Lminus(c))


def Ly(c):
    return (Lplus(c) - Lminus(c)) / 2j


def _up(L, M):
    """Coefficient of ``Y_{L+1,M}`` in ``cos(theta) Y_LM``."""
    return np.sqrt(((L + 1) ** 2 - M ** 2) / ((2 * L + 1) * (2 * L + 3)))


def _down(L, M):
    """Coefficient of ``Y_{L-1,M}`` in ``cos(theta) Y_LM``."""
    if L == 0:
        return 0.0
    return np.sqrt((L ** 2 - M ** 2) / ((2 * L - 1) * (2 * L + 1)))


def _recur(c, up, down, dM):
    lmax = lmax_of(c)
    out = empty(lmax + 1, c.shape[2:])
    for L in range(lmax + 1):
        for M in range(-L, L + 1):
            v = c[L, M + lmax]
            Mn = M + dM
            if abs(Mn) <= L + 1:
                out[L + 1, Mn + lmax + 1] += up(L, M) * v
            if L >= 1 and abs(Mn) <= L - 1:
                out[L - 1, Mn + lmax + 1] += down(L, M) * v
    return out


def cos_theta(c):
    return _recur(c, _up, _down, 0)


def sin_dtheta(c):
    """``sin(theta) d/dtheta``."""
    return _recur(c, lambda L, M: L * _up(L, M), lambda L, M: -(L + 1) * _down(L, M), 0)


def alpha(c):
    """Multiplication by ``alpha = sin(theta) exp(i phi)``."""
    return _recur(
        c,
        lambda L, M: -np.sqrt((L + M + 1) * (L + M + 2) / ((2 * L + 1) * (2 * L + 3))),
        lambda L, M: np.sqrt((L - M) * (L - M - 1) / ((2 * L - 1) * (2 * L + 1))),
        +1)


def alpha_conj(c):
    """Multiplication by ``conj(alpha) = sin(theta) exp(-i phi)``."""
    return _recur(
        c,
        lambda L, M: np.sqrt((L - M + 1) * (L - M + 2) / ((2 * L + 1) * (2 * L + 3))),
        lambda L, M: -np.sqrt((L + M) * (L + M - 1) / ((2 * L - 1) * (2 * L + 1))),
        -1)


# ---------------------------------------------------------------------------
# Quadrature grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SphereGrid:
    """Gauss-Legendre nodes in ``cos(theta)`` times a uniform ``phi`` grid.

    ``degree`` is the largest total harmonic degree integrated exactly, so
    ``Y_LM conj(Y_L'M')`` is exact whenever ``L + L' <= degree``.
    """

    n_theta: int
    n_phi: int
    theta: np.ndarray = field(init=False)
    phi: np.ndarray = field(init=False)
    weights: np.ndarray = field(init=False)   # (n_theta, n_phi)
    _ycache: dict = field(init=False, default_factory=dict, repr=False)

    def __post_init__(self):
        x, wx = roots_legendre(self.n_theta)
        theta = np.arccos(x)
        phi = 2 * np.pi * np.arange(self.n_phi) / self.n_phi
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "weights",
                           np.outer(wx, np.full(self.n_phi, 2 * np.pi / self.n_phi)))

    @classmethod
    def for_spin(cls, two_S: int) -> "SphereGrid":
        """``N_theta = 4S + 2`` and ``N_phi = 8S + 2`` nodes."""
        return cls(2 * two_S + 2, 4 * two_S + 2)

    @classmethod
    def for_band(cls, lmax: int) -> "SphereGrid":
        """Smallest grid resolving products of two band-``lmax`` functions."""
        return cls(lmax + 1, 2 * lmax + 1)

    @property
    def degree(self) -> int:
        return min(2 * self.n_theta - 1, self.n_phi - 1)

    @property
    def band(self) -> int:
        """Largest ``L`` for which the harmonics stay orthonormal on the grid."""
        return self.degree // 2

    @property
    def shape(self):
        return (self.n_theta, self.n_phi)

    def mesh(self):
        return np.meshgrid(self.theta, self.phi, indexing="ij")

    def require(self, lmax: int):
        if self.band < lmax:
            raise GridTooCoarse(f"grid resolves L <= {self.band}, need {lmax}")

    def ylm_theta(self, lmax: int) -> np.ndarray:
        """``Y[L, M + lmax, i]`` at ``(theta_i, phi = 0)`` (cached)."""
        if lmax not in self._ycache:
            Y = np.zeros((lmax + 1, 2 * lmax + 1, self.n_theta), dtype=complex)
            for L in range(lmax + 1):
                for M in range(-L, L + 1):
                    Y[L, M + lmax] = sph_harm_y(L, M, self.theta, 0.0)
            self._ycache[lmax] = Y
        return self._ycache[lmax]

    def _phase(self, lmax: int) -> np.ndarray:
        return np.exp(1j * np.outer(np.arange(-lmax, lmax + 1), self.phi))

    def integrate(self, values: np.ndarray) -> complex:
        return np.sum(self.weights * values)

    def synthesize(self, c: np.ndarray) -> np.ndarray:
        """Values ``sum c_LM Y_LM`` on the nodes; trailing coefficient axes are kept."""
        lmax = lmax_of(c)
        # Sum over L per (M, theta), then over M against exp(i M phi).
        cm = np.einsum("lmt,lm...->mt...", self.ylm_theta(lmax), c)
        return np.einsum("mt...,mp->tp...", cm, self._phase(lmax))

    def analyze(self, values: np.ndarray, lmax: int) -> np.ndarray:
        """Coefficients ``int values conj(Y_LM) dOmega`` up to ``lmax``."""
        self.require(lmax)
        wphi = 2 * np.pi / self.n_phi
        wtheta = self.weights[:, 0] / wphi
        vm = np.einsum("mp,tp...->mt...", self._phase(lmax).conj(), values) * wphi
        return np.einsum("lmt,t,mt...->lm...", self.ylm_theta(lmax).conj(), wtheta, vm)
