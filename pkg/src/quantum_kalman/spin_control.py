"""Moment filter for a continuously measured large spin and its feedback control.

State ``x = (x, y, z)`` of a spin of size ``S`` measured along ``z``:

    dx = A(h) x dt + B x dw,        dm = C x dt + sqrt(eps) dv,

with ``eps = 1 / (2S + 1)``, independent ``w`` and ``v``, and a control
rate ``h`` rotating ``x`` into ``z``.  The filter carries the conditional
mean, covariance ``P`` and second moment ``V``:

    dx_hat = A x_hat dt + P C^T / eps (dm - C x_hat dt)
    dP/dt  = A P + P A^T + B V B^T - P C^T C P / eps
    dV/dt  = A V + V A^T + B V B^T
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.stats import binomtest

from ._linalg import hermitize
from .errors import EpsilonTooLarge, StepTooLarge
from .filtering import LinearFilterModel, NoiseStreams, particle_filter_oracle
from .riccati import HamiltonianMatrix, RiccatiSolution, ric

QND_EPS_MAX = 0.05
H_GUARD = 1e-6


@dataclass(frozen=True)
class SpinFilterModel:
    S: float
    K: float

    @property
    def epsilon(self) -> float:
        return 1.0 / (2 * self.S + 1)

    def A(self, h=0.0) -> np.ndarray:
        """``A(h)``; an array of ``h`` gives a stack of matrices."""
        h = np.asarray(h, dtype=float)
        out = np.zeros(h.shape + (3, 3))
        out[..., 0, 0] = out[..., 1, 1] = -self.K**2 / 2
        out[..., 0, 2] = h
        out[..., 2, 0] = -h
        return out

    @property
    def B(self) -> np.ndarray:
        K = self.K
        return np.array([[0.0, -K, 0.0], [K, 0.0, 0.0], [0.0, 0.0, 0.0]])

    @property
    def C(self) -> np.ndarray:
        return np.array([[0.0, 0.0, self.K]])

    def coherent_start(self):
        """Mean, covariance and second moment of a coherent state along x."""
        S = self.S
        return (np.array([S, 0.0, 0.0]), np.diag([0.0, S / 2, S / 2]),
                np.diag([S**2, S / 2, S / 2]))


@dataclass(frozen=True, eq=False)
class SpinFilterState:
    x_hat: np.ndarray   # (3,) or (paths, 3)
    P: np.ndarray       # (3, 3) or (paths, 3, 3)
    V: np.ndarray
    t: float = 0.0

    def moment_gap(self) -> np.ndarray:
        """Smallest eigenvalue of ``V - x_hat x_hat^T`` (diagnostic only)."""
        x = self.x_hat
        G = self.V - x[..., :, None] * x[..., None, :]
        return np.linalg.eigvalsh(hermitize(G))[..., 0]


def _tr(M):
    return np.swapaxes(M, -1, -2)


def moment_rhs(model: SpinFilterModel, A, P, V):
    B, C = model.B, model.C
    BVB = B @ V @ B.T
    PC = P @ C.T
    dP = A @ P + P @ _tr(A) + BVB - PC @ _tr(PC) / model.epsilon
    dV = A @ V + V @ _tr(A) + BVB
    return dP, dV


def _check(P, tol=1e-8):
    if not np.all(np.isfinite(P)):
        raise StepTooLarge("spin covariance became non-finite")
    lo = np.linalg.eigvalsh(hermitize(P))[..., 0]
    scale = np.maximum(1.0, np.abs(P).max(axis=(-1, -2)))
    if np.any(lo < -tol * scale):
        raise StepTooLarge(f"spin covariance lost positivity ({np.min(lo):.3e})")


def spin_filter_step(model: SpinFilterModel, state: SpinFilterState, dm, dt: float,
                     h=0.0):
    """Advance the moment filter by ``dt`` with ``h`` held fixed over the step.

    The mean uses an Euler step against the innovation; ``P`` and ``V`` use
    a classical RK4 step.  Returns ``(new_state, innovation)``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    A = model.A(h)
    x = state.x_hat
    C = model.C
    dv = np.asarray(dm, dtype=float) - (x @ C.T) * dt
    gain = (state.P @ C.T) / model.epsilon          # (..., 3, 1)
    dx = np.einsum("...ij,...j->...i", A, x) * dt + (gain @ dv[..., :, None])[..., 0]

    P, V = state.P, state.V
    k1 = moment_rhs(model, A, P, V)
    k2 = moment_rhs(model, A, P + 0.5 * dt * k1[0], V + 0.5 * dt * k1[1])
    k3 = moment_rhs(model, A, P + 0.5 * dt * k2[0], V + 0.5 * dt * k2[1])
    k4 = moment_rhs(model, A, P + dt * k3[0], V + dt * k3[1])
    P = hermitize(P + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]))
    V = hermitize(V + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]))
    _check(P)
    return SpinFilterState(x + dx, P, V, state.t + dt), dv


# ---------------------------------------------------------------------------
# Stationary moments
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StationaryMoments:
    V_s: np.ndarray
    P_s: np.ndarray


def stationary_moments(S: float, K: float) -> StationaryMoments:
    """Closed-form limits of ``V`` and ``P`` for ``h = 0`` from a coherent start.

    ``V_s = diag(S(S+1/2)/2, S(S+1/2)/2, S/2)`` and
    ``P_s = diag(S(S+1/2)/(2K^2), S(S+1/2)/(2K^2), 0)``.  The ``P_s`` form
    coincides with the limit of the moment equations only at ``K = 1``;
    see :func:`integrate_moments` for the general limit.
    """
    a = S * (S + 0.5) / 2
    return StationaryMoments(np.diag([a, a, S / 2]), np.diag([a / K**2, a / K**2, 0.0]))


def integrate_moments(S: float, K: float, t_end: float = 2000.0, h: float = 0.0,
                      rtol: float = 1e-11, atol: float = 1e-13):
    """Integrate the ``P``/``V`` equations from a coherent start; returns ``(P, V)``."""
    model = SpinFilterModel(S, K)
    _, P0, V0 = model.coherent_start()
    A = model.A(h)

    def f(t, y):
        dP, dV = moment_rhs(model, A, y[:9].reshape(3, 3), y[9:].reshape(3, 3))
        return np.concatenate([dP.ravel(), dV.ravel()])

    sol = solve_ivp(f, (0.0, t_end), np.concatenate([P0.ravel(), V0.ravel()]),
                    method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise ArithmeticError(sol.message)
    y = sol.y[:, -1]
    return hermitize(y[:9].reshape(3, 3)), hermitize(y[9:].reshape(3, 3))


def stationary_hamiltonian(S: float, K: float) -> HamiltonianMatrix:
    """6x6 Hamiltonian matrix of the stationary ``P`` equation at ``V = V_s``."""
    model = SpinFilterModel(S, K)
    A = model.A(0.0)
    Vs = stationary_moments(S, K).V_s
    R = -model.C.T @ model.C / model.epsilon
    Q = -model.B @ Vs @ model.B.T
    return HamiltonianMatrix.from_blocks(A.T, R, Q)


def stationary_riccati(S: float, K: float) -> RiccatiSolution:
    return ric(stationary_hamiltonian(S, K))


def relative_error(X, ref) -> float:
    """Frobenius-norm relative error."""
    return float(np.linalg.norm(X - ref) / np.linalg.norm(ref))


# ---------------------------------------------------------------------------
# Local QND description
# ---------------------------------------------------------------------------

def local_qnd_filter(S: float, K: float) -> LinearFilterModel:
    """Two-variable model near the pole: ``X`` measured, ``Y`` kicked by back-action.

    ``dX = 0``, ``dY = k dw``, ``dm = k X dt + dv`` with
    ``k = K / sqrt(2 eps)`` and independent noises.
    """
    eps = 1.0 / (2 * S + 1)
    if eps > QND_EPS_MAX:
        raise EpsilonTooLarge(f"eps = {eps:.3g} exceeds {QND_EPS_MAX}")
    k = K / np.sqrt(2 * eps)
    return LinearFilterModel(np.zeros((2, 2)), [[0.0], [k]], [[k, 0.0]], [[1.0]], [[0.0]])


# ---------------------------------------------------------------------------
# Lyapunov controller
# ---------------------------------------------------------------------------

def lyapunov_controller(x_hat, h, k_gain: float, dt: float):
    """Control increment ``dh = (2 x z - k h) dt``.

    Where ``|h| < 1e-6`` the damping term is dropped and ``h`` integrates
    ``2 x z`` alone.
    """
    if k_gain < 0:
        raise ValueError("k_gain must be non-negative")
    x_hat = np.asarray(x_hat, dtype=float)
    h = np.asarray(h, dtype=float)
    drive = 2 * x_hat[..., 0] * x_hat[..., 2]
    damp = np.where(np.abs(h) < H_GUARD, 0.0, k_gain * h)
    return (drive - damp) * dt


def lyapunov_generator(x_hat, h, P_zz, k_gain: float):
    """Generator of ``U = z^2 + h^2`` along the closed loop: ``h(-2xz + Q) + P_zz^2``."""
    x_hat = np.asarray(x_hat, dtype=float)
    xz = x_hat[..., 0] * x_hat[..., 2]
    Q = 2 * xz - k_gain * np.asarray(h)
    return h * (-2 * xz + Q) + np.asarray(P_zz) ** 2


def default_k_gain(S: float) -> float:
    """Critical damping of the linearized loop ``z'' + k z' + 2 S^2 z = 0``."""
    return 2 * np.sqrt(2.0) * S


# ---------------------------------------------------------------------------
# Closed-loop Monte Carlo
# ---------------------------------------------------------------------------

@dataclass
class EntanglementReport:
    S: float
    K: float
    k_gain: float
    dt: float
    T: float
    seed: int
    paths: int
    threshold: float
    fraction_controlled: float
    fraction_uncontrolled: float
    p_value: float
    ci_low: float
    ci_high: float
    P_zz_initial: float
    P_zz_final_mean: float
    handoff_events: int
    final_z_hat: list = field(default_factory=list, repr=False)
    final_z_hat_uncontrolled: list = field(default_factory=list, repr=False)
    trace: dict = field(default_factory=dict, repr=False)

    @property
    def significant(self) -> bool:
        return self.p_value < 0.05

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("trace")
        d["significant"] = self.significant
        return d

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2)

    def trace_csv(self, path: int) -> str:
        tr = self.trace
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "x_hat", "y_hat", "z_hat", "h", "P_zz", "local"])
        for k, t in enumerate(tr["t"]):
            x = tr["x_hat"][k, path]
            w.writerow([repr(float(t))] + [repr(float(v)) for v in x]
                       + [repr(float(tr["h"][k, path])), repr(float(tr["P_zz"][k, path])),
                          int(tr["local"][k, path])])
        return buf.getvalue()


def _closed_loop(model: SpinFilterModel, k_gain: float, dt: float, n_steps: int,
                 seed: int, paths: int, threshold: float, controlled: bool,
                 h_max: float, k_local: float, record_every: int):
    x0, P0, V0 = model.coherent_start()
    rng = NoiseStreams(seed, range(paths), 2)
    init = NoiseStreams(seed, [10**9 + i for i in range(paths)], 2)
    start = init.draw()
    truth = np.tile(x0, (paths, 1))
    truth[:, 1:] += start * np.sqrt(model.S / 2)
    state = SpinFilterState(np.tile(x0, (paths, 1)), np.tile(P0, (paths, 1, 1)),
                            np.tile(V0, (paths, 1, 1)))
    h = np.zeros(paths)
    local = np.zeros(paths, dtype=bool)
    handoffs = 0
    B, C = model.B, model.C
    sq = np.sqrt(dt)
    se = np.sqrt(model.epsilon)
    rec = {"t": [0.0], "x_hat": [state.x_hat.copy()], "h": [h.copy()],
           "P_zz": [state.P[:, 2, 2].copy()], "local": [local.copy()]}
    for k in range(n_steps):
        xi = rng.draw()
        A = model.A(h)
        dm = (truth @ C.T) * dt + se * sq * xi[:, 1:2]
        truth = truth + np.einsum("pij,pj->pi", A, truth) * dt + (truth @ B.T) * (sq * xi[:, :1])
        state, _ = spin_filter_step(model, state, dm, dt, h)
        if controlled:
            z = state.x_hat[:, 2]
            enter = ~local & (np.abs(z) < threshold)
            leave = local & (np.abs(z) > 1.2 * threshold)
            handoffs += int(enter.sum())
            local = (local | enter) & ~leave
            h_lyap = h + lyapunov_controller(state.x_hat, h, k_gain, dt)
            h_loc = k_local * z * np.sign(state.x_hat[:, 0])
            h = np.clip(np.where(local, h_loc, h_lyap), -h_max, h_max)
        if (k + 1) % record_every == 0 or k + 1 == n_steps:
            rec["t"].append((k + 1) * dt)
            rec["x_hat"].append(state.x_hat.copy())
            rec["h"].append(h.copy())
            rec["P_zz"].append(state.P[:, 2, 2].copy())
            rec["local"].append(local.copy())
    rec = {key: np.array(v) for key, v in rec.items()}
    return state, handoffs, rec


def entanglement_experiment(S: float, K: float, k_gain: float | None = None,
                            dt: float = 1e-3, T: float = 2.0, seed: int = 0,
                            paths: int = 100, threshold_frac: float = 0.05,
                            h_max: float | None = None, k_local: float = 1.0,
                            record_every: int = 10) -> EntanglementReport:
    """Drive the measured spin's ``z`` estimate to zero and compare with no control.

    Both arms use the same per-path noise streams.  A path counts as
    stabilized if ``|z_hat(T)| < threshold_frac * S``.  Below the threshold
    the Lyapunov law hands over to proportional feedback ``h = k_local z sgn(x)``
    until ``|z_hat|`` exceeds 1.2 times the threshold.
    """
    model = SpinFilterModel(S, K)
    if model.epsilon > QND_EPS_MAX:
        raise EpsilonTooLarge(f"eps = {model.epsilon:.3g} exceeds {QND_EPS_MAX}")
    k_gain = default_k_gain(S) if k_gain is None else k_gain
    h_max = 10 * K**2 if h_max is None else h_max
    n_steps = int(round(T / dt))
    thr = threshold_frac * S
    args = (model, k_gain, dt, n_steps, seed, paths, thr)
    st_c, handoffs, rec = _closed_loop(*args, True, h_max, k_local, record_every)
    st_u, _, _ = _closed_loop(*args, False, h_max, k_local, record_every)
    zc, zu = st_c.x_hat[:, 2], st_u.x_hat[:, 2]
    nc, nu = int(np.sum(np.abs(zc) < thr)), int(np.sum(np.abs(zu) < thr))
    p0 = nu / paths
    if p0 <= 0:
        p_value = 0.0 if nc > 0 else 1.0
    elif p0 >= 1:
        p_value = 1.0
    else:
        p_value = binomtest(nc, paths, p0, alternative="greater").pvalue
    ci = binomtest(nc, paths).proportion_ci(0.95)
    return EntanglementReport(
        S=S, K=K, k_gain=k_gain, dt=dt, T=n_steps * dt, seed=seed, paths=paths,
        threshold=thr, fraction_controlled=nc / paths, fraction_uncontrolled=p0,
        p_value=float(p_value), ci_low=float(ci.low), ci_high=float(ci.high),
        P_zz_initial=float(model.coherent_start()[1][2, 2]),
        P_zz_final_mean=float(st_c.P[:, 2, 2].mean()), handoff_events=handoffs,
        final_z_hat=zc.tolist(), final_z_hat_uncontrolled=zu.tolist(), trace=rec)


# ---------------------------------------------------------------------------
# Particle-filter comparison
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpinOracleComparison:
    max_mean_difference: float
    rms_mean_difference: float
    final_moment_filter: np.ndarray
    final_particle: np.ndarray


def spin_particle_comparison(S: float = 2.0, K: float = 1.0, dt: float = 1e-3,
                             n_steps: int = 1000, n_particles: int = 4000,
                             seed: int = 0) -> SpinOracleComparison:
    """Moment filter against a particle filter on one simulated record (h = 0).

    The particle filter sees the bilinear noise ``B x dw`` exactly, while the
    moment filter closes it with ``B V B^T``; the difference is reported,
    not asserted.
    """
    model = SpinFilterModel(S, K)
    x0, P0, V0 = model.coherent_start()
    A, B, C = model.A(0.0), model.B, model.C
    noise = NoiseStreams(seed, [0], 2)
    truth = x0 + np.concatenate([[0.0], NoiseStreams(seed, [10**9], 2).draw()[0]]) * np.sqrt(S / 2)
    sq, se = np.sqrt(dt), np.sqrt(model.epsilon)
    dms = []
    state = SpinFilterState(x0.copy(), P0.copy(), V0.copy())
    means = []
    for _ in range(n_steps):
        xi = noise.draw()[0]
        dm = C @ truth * dt + se * sq * xi[1:]
        truth = truth + A @ truth * dt + B @ truth * sq * xi[0]
        state, _ = spin_filter_step(model, state, dm, dt)
        dms.append(dm)
        means.append(state.x_hat)
    pf = particle_filter_oracle(
        lambda x, t: x @ A.T, lambda x, t: (x @ B.T)[..., :, None],
        lambda x: x @ C.T, [[se]], np.array(dms), dt, n_particles, seed + 1, x0, P0)
    diff = np.linalg.norm(pf.means - np.array(means), axis=1)
    return SpinOracleComparison(float(diff.max()), float(np.sqrt(np.mean(diff**2))),
                                np.array(means[-1]), pf.means[-1])
