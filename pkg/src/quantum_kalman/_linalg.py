"""Small dense linear-algebra helpers for symmetric/Hermitian matrices."""

from __future__ import annotations

import numpy as np
import scipy.linalg as la

PINV_RTOL = 1e-10


def hermitize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.conj().swapaxes(-1, -2))


def psd_pinv(M: np.ndarray, rtol: float = PINV_RTOL) -> np.ndarray:
    """Pseudoinverse of a Hermitian positive semidefinite matrix.

    Eigenvalues below ``rtol`` times the largest are treated as zero.  A
    diagonal input is inverted entrywise, so e.g. ``[[1 + d**2]]`` maps to
    exactly ``1 / (1 + d**2)``.
    """
    M = np.atleast_2d(np.asarray(M))
    if M.size == 0:
        return M.copy()
    if np.count_nonzero(M - np.diag(np.diagonal(M))) == 0:
        d = np.diagonal(M).real
        top = np.abs(d).max()
        out = np.zeros_like(d)
        keep = np.abs(d) > rtol * top if top > 0 else np.zeros(d.shape, bool)
        out[keep] = 1.0 / d[keep]
        return np.diag(out).astype(M.dtype)
    w, V = la.eigh(hermitize(M))
    top = np.abs(w).max()
    keep = np.abs(w) > rtol * top if top > 0 else np.zeros(w.shape, bool)
    winv = np.zeros_like(w)
    winv[keep] = 1.0 / w[keep]
    return (V * winv) @ V.conj().T


def psd_sqrt(M: np.ndarray) -> np.ndarray:
    """Hermitian square root of a PSD matrix (negative eigenvalues clipped)."""
    w, V = la.eigh(hermitize(np.atleast_2d(M)))
    return (V * np.sqrt(np.clip(w, 0, None))) @ V.conj().T


def min_eig(M: np.ndarray) -> float:
    M = np.atleast_2d(M)
    if M.size == 0:
        return 0.0
    return float(la.eigvalsh(hermitize(M))[0])


def psd_factor(M: np.ndarray, neg_tol: float = 1e-9, what: str = "block"):
    """Return ``F`` with ``F^H F = M`` for Hermitian PSD ``M``.

    Returns ``(F, min_eigenvalue)``; ``F`` has one row per retained
    eigenvalue (at least one row, zero if ``M`` vanishes).  Raises
    ``ValueError`` when ``M`` has an eigenvalue below ``-neg_tol`` scaled by
    ``max(1, |M|)``.
    """
    M = hermitize(np.atleast_2d(np.asarray(M, dtype=complex)))
    n = M.shape[0]
    w, V = la.eigh(M)
    scale = max(1.0, float(np.abs(M).max()))
    if w[0] < -neg_tol * scale:
        raise ValueError(f"{what} is not semidefinite (eigenvalue {w[0]:.3e})")
    keep = w > neg_tol * scale
    if not np.any(keep):
        return np.zeros((1, n), dtype=complex), float(w[0])
    F = np.sqrt(w[keep])[:, None] * V[:, keep].conj().T
    return F, float(w[0])
