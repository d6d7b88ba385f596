"""Spin Wigner functions and numerical checks of the large-spin calculus.

The kernel is ``w(Omega) = sqrt(4 pi / N) sum_LM Y_LM(Omega) T_LM^dagger``
with ``N = 2S + 1`` and ``W_X(Omega) = Tr(X w(Omega))``.  Functions on the
sphere are handled through their harmonic coefficients (see
:mod:`.harmonics`), so angular derivatives are exact.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import harmonics as H
from .algebra import SpinAlgebra
from .harmonics import SphereGrid

PROFILE_BAND = 4


@dataclass(frozen=True, eq=False)
class SpinWignerField:
    values: np.ndarray     # (n_theta, n_phi)
    two_S: int
    grid: SphereGrid

    def to_csv(self) -> str:
        th, ph = self.grid.mesh()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["theta", "phi", "re", "im"])
        for t, p, v in zip(th.ravel(), ph.ravel(), self.values.ravel()):
            w.writerow([repr(float(t)), repr(float(p)), repr(float(v.real)), repr(float(v.imag))])
        return buf.getvalue()


def spin_wigner(alg: SpinAlgebra, X, grid: SphereGrid | None = None) -> SpinWignerField:
    grid = SphereGrid.for_spin(alg.two_S) if grid is None else grid
    grid.require(alg.two_S)
    c = alg.coefficients(np.asarray(X))
    return SpinWignerField(grid.synthesize(c), alg.two_S, grid)


def reconstruct(field: SpinWignerField, alg: SpinAlgebra) -> np.ndarray:
    """Recover the operator from its Wigner function by quadrature."""
    c = field.grid.analyze(field.values, alg.two_S)
    return alg.operator(c)


def expectation_from_wigner(rho_field: SpinWignerField, a_field: SpinWignerField) -> complex:
    """``Tr(rho A) = N / (4 pi) * int W_rho W_A dOmega``."""
    N = rho_field.two_S + 1
    return N / (4 * math.pi) * rho_field.grid.integrate(rho_field.values * a_field.values)


def kernel_on_grid(alg: SpinAlgebra, grid: SphereGrid) -> np.ndarray:
    """``w(Omega)`` as ``(n_theta, n_phi, N, N)`` matrices."""
    grid.require(alg.two_S)
    return grid.synthesize(alg.kernel_coefficients())


# ---------------------------------------------------------------------------
# Smooth test states
# ---------------------------------------------------------------------------

def north_profile(band: int = PROFILE_BAND) -> np.ndarray:
    """Harmonic coefficients of ``((1 + cos theta) / 2)^band``.

    This is the angular shape of a spin-``band/2`` coherent state at the
    north pole; it is exactly band-limited to ``L <= band``.
    """
    g = SphereGrid.for_band(2 * band)
    th, _ = g.mesh()
    return g.analyze(((1 + np.cos(th)) / 2) ** band, band)


def profile_state(alg: SpinAlgebra, profile: np.ndarray | None = None) -> np.ndarray:
    """Unit-trace operator whose Wigner function is proportional to ``profile``.

    Holding the angular shape fixed while ``S`` grows isolates the
    ``epsilon`` dependence of the large-spin expansions.
    """
    profile = north_profile() if profile is None else profile
    rho = alg.operator(profile)
    return rho / np.trace(rho).real


# ---------------------------------------------------------------------------
# Correspondences between operator products and differential operators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CorrespondenceReport:
    two_S: int
    splus_rho: float
    rho_splus: float
    sminus_rho: float
    rho_sminus: float

    @property
    def worst(self) -> float:
        return max(self.splus_rho, self.rho_splus, self.sminus_rho, self.rho_sminus)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def _field_max(c: np.ndarray) -> float:
    g = SphereGrid.for_band(2 * H.lmax_of(c))
    return float(np.abs(g.synthesize(c)).max())


def verify_correspondences(alg: SpinAlgebra, rho, lmax: int | None = None
                           ) -> CorrespondenceReport:
    """First-order large-spin forms of multiplication by ``S+`` and ``S-``.

    With ``c = sqrt(S(S+1)/2)``, ``alpha = sin(theta) e^{i phi}``:

        S+ rho  ->  c (alpha + eps L+) W        rho S+  ->  c (alpha - eps L+) W
        S- rho  ->  c (alpha* + eps L-) W       rho S-  ->  c (alpha* - eps L-) W

    (``d/d alpha*`` acts on the sphere as ``2 L+``.)  Each residual is the
    sup over a fine grid of ``|W_exact - approximation|`` divided by
    ``c max|W_rho|``.  ``lmax`` limits the band of ``rho`` that is used;
    pass it for band-limited states at large ``S``.
    """
    lmax = alg.two_S if lmax is None else lmax
    rho = np.asarray(rho)
    band = min(lmax + 1, alg.two_S)
    w = alg.coefficients(rho, lmax)
    cc = math.sqrt(alg.S * (alg.S + 1) / 2)
    eps = alg.epsilon
    scale = cc * _field_max(w)
    top = H.lmax_of(w) + 1

    def resid(X, mult, ladder, sign):
        exact = H.pad(alg.coefficients(X, band), top)
        approx = cc * (mult(w) + sign * eps * H.pad(ladder(w), top))
        return _field_max(exact - approx) / scale

    return CorrespondenceReport(
        alg.two_S,
        resid(alg.Splus @ rho, H.alpha, H.Lplus, +1),
        resid(rho @ alg.Splus, H.alpha, H.Lplus, -1),
        resid(alg.Sminus @ rho, H.alpha_conj, H.Lminus, +1),
        resid(rho @ alg.Sminus, H.alpha_conj, H.Lminus, -1))


# ---------------------------------------------------------------------------
# Commutator / anticommutator identities of the kernel
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IdentityReport:
    two_S: int
    commutator_y: float
    commutator_z: float
    anticommutator_z: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def anticommutator_truncation(c: np.ndarray, eps: float) -> np.ndarray:
    """``[cos/eps - (eps/2) cos (L^2 + 1) - (eps/2) sin d_theta]`` applied to ``c``."""
    return (H.cos_theta(c) / eps - 0.5 * eps * H.cos_theta(H.L2(c) + c)
            - 0.5 * eps * H.sin_dtheta(c))


def anticommutator_residual(alg: SpinAlgebra, profile: np.ndarray | None = None) -> float:
    """Relative error of the truncated ``{Sz, w}`` expansion on a fixed smooth state.

    Uses ``Tr(X {Sz, w}) = W_{{Sz, X}}`` so the check runs on the
    band-limited Wigner function of ``X`` rather than on the full kernel.
    """
    profile = north_profile() if profile is None else profile
    band = H.lmax_of(profile)
    X = alg.operator(profile)
    exact = alg.coefficients(alg.Sz @ X + X @ alg.Sz, band + 1)
    approx = anticommutator_truncation(alg.coefficients(X, band), alg.epsilon)
    return _field_max(exact - approx) / _field_max(profile)


def verify_appendix_identities(alg: SpinAlgebra, grid: SphereGrid | None = None,
                               with_anticommutator: bool = True) -> IdentityReport:
    """Kernel commutators against angular-momentum differential operators.

    ``[J_y, w] = -L_y w`` and ``[S_z, w] = -L_z w`` are compared entrywise at
    every grid node.  The y identity holds for the standard-normalized
    component ``J_y = S_y / sqrt(2)``; with the ``[Sx, Sy] = 2i Sz``
    convention ``[S_y, w] = -sqrt(2) L_y w``.
    """
    grid = SphereGrid.for_spin(alg.two_S) if grid is None else grid
    kc = alg.kernel_coefficients()
    w = grid.synthesize(kc)
    comm = lambda A: np.einsum("ij,abjk->abik", A, w) - np.einsum("abij,jk->abik", w, A)
    ry = np.abs(comm(alg.Jy) + grid.synthesize(H.Ly(kc))).max()
    rz = np.abs(comm(alg.Sz) + grid.synthesize(H.Lz(kc))).max()
    ra = anticommutator_residual(alg) if with_anticommutator and alg.two_S >= 2 * PROFILE_BAND else None
    return IdentityReport(alg.two_S, float(ry), float(rz), ra)


# ---------------------------------------------------------------------------
# Convergence ladders
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvergenceStudy:
    two_S: tuple
    residuals: tuple

    @property
    def ratio(self) -> float:
        return self.residuals[0] / self.residuals[1]


def north_coherent_state(alg: SpinAlgebra) -> np.ndarray:
    """Density matrix of the spin coherent state ``|S, S>`` at the north pole."""
    rho = np.zeros((alg.dim, alg.dim), dtype=complex)
    rho[0, 0] = 1.0
    return rho


def correspondence_convergence(two_S_pair=(20, 40), state: str = "coherent") -> ConvergenceStudy:
    """Worst correspondence residual at two spins.

    ``state="coherent"`` uses ``|S, S>`` with its full harmonic band; its
    Wigner function narrows like ``S^-1/2``, so the residual falls a little
    slower than ``eps^2``.  ``state="profile"`` holds a fixed smooth profile
    on the sphere and isolates the ``eps^2`` truncation error.
    """
    res = []
    for two_S in two_S_pair:
        alg = SpinAlgebra(two_S)
        if state == "coherent":
            res.append(verify_correspondences(alg, north_coherent_state(alg)).worst)
        elif state == "profile":
            res.append(verify_correspondences(alg, profile_state(alg), PROFILE_BAND).worst)
        else:
            raise ValueError(f"unknown state {state!r}")
    return ConvergenceStudy(tuple(two_S_pair), tuple(res))


def anticommutator_convergence(two_S_pair=(40, 80)) -> ConvergenceStudy:
    res = [anticommutator_residual(SpinAlgebra(t)) for t in two_S_pair]
    return ConvergenceStudy(tuple(two_S_pair), tuple(res))


# ---------------------------------------------------------------------------
# Bosonic limit near the pole
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BosonLimitReport:
    two_S: int
    n_local: int
    mu_squared: float
    ladder_error: float
    commutator_error: float
    number_form_error: float


def holstein_primakoff_check(two_S: int, n_local: int = 4) -> BosonLimitReport:
    """Compare scaled spin ladders with boson ladders on the top states.

    With ``mu = 1 / sqrt(2S)``, ``A- = mu J+`` and ``A+ = mu J-`` act on
    ``|S, S - n>`` (``n < n_local``) like annihilation and creation
    operators up to ``O(mu^2)``; ``[A-, A+] = 1 - 2 mu^2 (S - Jz)`` there.
    """
    alg = SpinAlgebra(two_S)
    if n_local + 1 > alg.dim:
        raise ValueError("n_local exceeds the spin dimension")
    mu2 = 1.0 / two_S
    mu = math.sqrt(mu2)
    k = n_local
    Aminus = (mu * alg.Jplus)[:k, :k]
    a = np.diag(np.sqrt(np.arange(1, k)), 1)
    ladder = float(np.abs(Aminus - a).max())
    full_m = mu * alg.Jplus
    full_p = mu * alg.Jminus
    comm = (full_m @ full_p - full_p @ full_m)[:k, :k]
    ident = np.eye(k)
    commutator = float(np.abs(comm - ident).max())
    number = np.diag(np.arange(k, dtype=float))
    exact = float(np.abs(comm - (ident - 2 * mu2 * number)).max())
    return BosonLimitReport(two_S, n_local, mu2, ladder, commutator, exact)
