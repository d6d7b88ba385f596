"""Kalman filtering with correlated noise, SDE simulation and a particle oracle.

Noise convention
----------------
A :class:`LinearFilterModel` describes

    dx = A x dt + B dw,         dm = C x dt + D dv,

with ``E[dw dv^T] = S_corr dt``.  The filter gain is
``(P C^T + B S_corr D^T) (D D^T)^+``.  Shared noise (the same Wiener
increment drives dynamics and measurement) is ``S_corr = I``.

Random numbers
--------------
Path ``i`` of a run with seed ``s`` draws from
``numpy.random.Generator(PCG64(SeedSequence([s, i])))`` via
``standard_normal``, consumed in (step, component) order in chunks of
:data:`CHUNK` steps.  The stream of a path therefore does not depend on how
many other paths run or how they are batched.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._linalg import hermitize, psd_pinv, psd_sqrt
from .errors import Degeneracy, DimensionMismatch, NonFinite
from .riccati import check_covariance, riccati_rhs, rk4_step

CHUNK = 256
NONFINITE_LIMIT = 1e150


def path_rng(seed: int, path: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, path])))


class NoiseStreams:
    """Standard normal increments for a batch of independent paths."""

    def __init__(self, seed: int, paths: Sequence[int], dim: int, chunk: int = CHUNK):
        self.gens = [path_rng(seed, int(p)) for p in paths]
        self.dim = dim
        self.chunk = chunk
        self._buf = np.empty((len(self.gens), 0, dim))
        self._pos = 0

    def draw(self) -> np.ndarray:
        """One ``(paths, dim)`` block of N(0, 1) variates."""
        if self._pos >= self._buf.shape[1]:
            self._buf = np.stack(
                [g.standard_normal((self.chunk, self.dim)) for g in self.gens])
            self._pos = 0
        out = self._buf[:, self._pos, :]
        self._pos += 1
        return out


# ---------------------------------------------------------------------------
# Linear model and Kalman step
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LinearFilterModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    S_corr: np.ndarray | None = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        B = np.asarray(self.B, dtype=float).reshape(n, -1)
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        if A.shape != (n, n) or C.shape[1] != n or D.shape[0] != C.shape[0]:
            raise DimensionMismatch("inconsistent A, B, C, D shapes")
        q, r = B.shape[1], D.shape[1]
        S = np.zeros((q, r)) if self.S_corr is None else np.atleast_2d(
            np.asarray(self.S_corr, dtype=float))
        if S.shape != (q, r):
            raise DimensionMismatch(f"S_corr must be {q}x{r}, got {S.shape}")
        if np.any(np.abs(S) > 1):
            raise ValueError("S_corr entries must lie in [-1, 1]")
        for name, val in zip(("A", "B", "C", "D", "S_corr"), (A, B, C, D, S)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        DDinv = psd_pinv(D @ D.T)
        object.__setattr__(self, "DDinv", DDinv)
        object.__setattr__(self, "cross", B @ S @ D.T)
        # (dw, dv) = L xi with xi standard normal; zero columns dropped.
        resid = np.eye(r) - S.T @ S
        if np.linalg.eigvalsh(hermitize(resid))[0] < -1e-12:
            raise ValueError("S_corr is not a valid cross-correlation")
        R = psd_sqrt(resid)
        L = np.block([[np.eye(q), np.zeros((q, r))], [S.T, R]])
        L = L[:, np.any(np.abs(L) > 1e-14, axis=0)]
        object.__setattr__(self, "noise_map", L)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def noise_dim(self) -> int:
        return self.noise_map.shape[1]

    def gain(self, P: np.ndarray) -> np.ndarray:
        return (P @ self.C.T + self.cross) @ self.DDinv

    def riccati_rhs(self, P: np.ndarray) -> np.ndarray:
        return riccati_rhs(P, self.A, self.B, self.C, self.D, self.S_corr, self.DDinv)

    def split_noise(self, xi: np.ndarray):
        """Map standard normals ``(..., noise_dim)`` to ``(dw/√dt, dv/√dt)``."""
        z = xi @ self.noise_map.T
        q = self.B.shape[1]
        return z[..., :q], z[..., q:]


@dataclass(frozen=True, eq=False)
class FilterState:
    x_hat: np.ndarray
    P: np.ndarray
    t: float = 0.0


def advance_covariance(model: LinearFilterModel, P: np.ndarray, dt: float) -> np.ndarray:
    P = hermitize(rk4_step(model.riccati_rhs, P, dt))
    check_covariance(P)
    return P


def kalman_step(model: LinearFilterModel, state: FilterState, dm, dt: float,
                drive=None):
    """One Euler step of the correlated-noise Kalman filter.

    Returns ``(new_state, dv)`` where ``dv = dm - C x_hat dt`` is the
    innovation increment.  ``drive`` is a known input added to the mean
    drift; it never touches the covariance.  ``x_hat`` and ``dm`` may carry
    a leading batch axis.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(state.x_hat, dtype=float)
    dv = np.asarray(dm, dtype=float) - (x @ model.C.T) * dt
    K = model.gain(state.P)
    dx = (x @ model.A.T) * dt + dv @ K.T
    if drive is not None:
        dx = dx + np.asarray(drive, dtype=float) * dt
    P = advance_covariance(model, state.P, dt)
    return FilterState(x + dx, P, state.t + dt), dv


# ---------------------------------------------------------------------------
# Euler-Maruyama engine
# ---------------------------------------------------------------------------

def affine_drift(A, c=None) -> Callable:
    """``a(x) = A x + c``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    c = np.zeros(A.shape[0]) if c is None else np.asarray(c, dtype=float)
    return lambda x, t: x @ A.T + c


def affine_diffusion(B0, Bx: Sequence | None = None) -> Callable:
    """``b(x)[:, j] = B0[:, j] + Bx[j] @ x`` (state-affine noise columns).

    For the bilinear form ``B x dw`` with scalar ``w`` use
    ``affine_diffusion(zeros((n, 1)), [B])``.
    """
    B0 = np.atleast_2d(np.asarray(B0, dtype=float))
    mats = None if Bx is None else np.stack([np.asarray(M, dtype=float) for M in Bx])

    def b(x, t):
        out = np.broadcast_to(B0, x.shape[:-1] + B0.shape).copy()
        if mats is not None:
            # (..., n) x (d, n, n) -> (..., n, d)
            out += np.einsum("jkl,...l->...kj", mats, x)
        return out
    return b


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    X: np.ndarray   # (records, paths, n)


def _check_finite(x: np.ndarray, step: int):
    if not np.all(np.isfinite(x)) or np.abs(x).max(initial=0) > NONFINITE_LIMIT:
        raise NonFinite(f"state left the finite range at step {step}")


def simulate_sde(drift: Callable, diffusion: Callable, x0, dt: float,
                 n_steps: int, seed: int, n_paths: int | None = None,
                 noise_dim: int | None = None, record_every: int = 1,
                 path_offset: int = 0) -> Trajectory:
    """Euler-Maruyama ``x += a(x) dt + b(x) sqrt(dt) xi``.

    ``drift(x, t)`` returns ``(paths, n)`` and ``diffusion(x, t)`` returns
    ``(paths, n, d)``.  With ``n_paths=None`` a single path is simulated and
    the path axis is still present in the output.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x0 = np.asarray(x0, dtype=float)
    paths = 1 if n_paths is None else n_paths
    x = np.broadcast_to(x0, (paths, x0.shape[-1])).copy()
    if noise_dim is None:
        noise_dim = diffusion(x[:1], 0.0).shape[-1]
    noise = NoiseStreams(seed, range(path_offset, path_offset + paths), noise_dim)
    sq = np.sqrt(dt)
    times, rec = [0.0], [x.copy()]
    for k in range(n_steps):
        t = k * dt
        xi = noise.draw()
        x = x + drift(x, t) * dt + np.einsum("pnd,pd->pn", diffusion(x, t), xi) * sq
        _check_finite(x, k + 1)
        if (k + 1) % record_every == 0 or k + 1 == n_steps:
            times.append((k + 1) * dt)
            rec.append(x.copy())
    return Trajectory(np.array(times), np.array(rec))


# ---------------------------------------------------------------------------
# Filtered experiment
# ---------------------------------------------------------------------------

@dataclass
class InnovationRecord:
    times: np.ndarray
    dv_under: np.ndarray   # (records, paths, p)


@dataclass
class WhitenessAccumulator:
    """Pooled sample autocorrelation of innovation increments, lags 1..L."""

    channels: int
    max_lag: int = 10
    sums: np.ndarray = field(init=False)
    counts: np.ndarray = field(init=False)
    _hist: list = field(init=False, default_factory=list)

    def __post_init__(self):
        self.sums = np.zeros((self.channels, self.max_lag + 1))
        self.counts = np.zeros(self.max_lag + 1)

    def add(self, dv: np.ndarray):
        """``dv`` has shape ``(paths, channels)``."""
        self._hist.insert(0, dv)
        del self._hist[self.max_lag + 1:]
        for lag, old in enumerate(self._hist):
            self.sums[:, lag] += np.sum(dv * old, axis=0)
            self.counts[lag] += dv.shape[0]

    def merge(self, other: "WhitenessAccumulator"):
        self.sums += other.sums
        self.counts += other.counts

    def autocorrelation(self) -> np.ndarray:
        """``(channels, max_lag)`` array; NaN for channels with no signal."""
        with np.errstate(invalid="ignore", divide="ignore"):
            c = (self.sums[:, 1:] / self.counts[1:]) / (self.sums[:, :1] / self.counts[0])
        return c

    def band(self) -> np.ndarray:
        """``3 / sqrt(N)`` per lag; infinite where a lag has no samples."""
        with np.errstate(divide="ignore"):
            return 3.0 / np.sqrt(self.counts[1:])

    def white(self) -> bool:
        rho = self.autocorrelation()
        rho = rho[np.all(np.isfinite(rho), axis=1)]
        return bool(np.all(np.abs(rho) < self.band()))


def whiteness_test(dv: np.ndarray, max_lag: int = 10):
    """Sample autocorrelations of a 1-D increment series and the 3/sqrt(N) band."""
    dv = np.asarray(dv, dtype=float).ravel()
    acc = WhitenessAccumulator(1, max_lag)
    for v in dv:
        acc.add(np.array([[v]]))
    return acc.autocorrelation()[0], acc.band()


@dataclass
class ExperimentResult:
    times: np.ndarray
    truth: np.ndarray        # (records, paths, n)
    x_hat: np.ndarray        # (records, paths, n)
    P: np.ndarray            # (records, n, n)
    dm: np.ndarray           # (records - 1, paths, p), summed over each interval
    innovations: InnovationRecord
    whiteness: WhitenessAccumulator
    error_moment: np.ndarray  # time/path average of (x - x_hat)(x - x_hat)^T
    error_samples: int
    seed: int
    dt: float

    @property
    def P_series(self) -> np.ndarray:
        return self.P

    def error_covariance_final(self) -> np.ndarray:
        e = self.truth[-1] - self.x_hat[-1]
        return e.T @ e / e.shape[0]

    def to_csv(self, path: int = 0) -> str:
        """Rows ``t, x..., x_hat..., dm..., dv...`` for one path."""
        n = self.truth.shape[2]
        p = self.dm.shape[2]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"x{i}" for i in range(n)] + [f"xhat{i}" for i in range(n)]
                   + [f"dm{i}" for i in range(p)] + [f"dv{i}" for i in range(p)])
        nan = [""] * p
        for k, t in enumerate(self.times):
            row = [t] + list(self.truth[k, path]) + list(self.x_hat[k, path])
            if k == 0:
                w.writerow([repr(float(v)) for v in row] + nan + nan)
            else:
                row += list(self.dm[k - 1, path]) + list(self.innovations.dv_under[k - 1, path])
                w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def _run_batch(model, x0_true, x0_filter, P0, dt, n_steps, seed, paths, drive,
               record_every, average_from, max_lag):
    n, p = model.n, model.C.shape[0]
    npaths = len(paths)
    noise = NoiseStreams(seed, paths, model.noise_dim)
    x_hat = np.broadcast_to(np.asarray(x0_filter, dtype=float), (npaths, n)).copy()
    P0 = np.atleast_2d(np.asarray(P0, dtype=float))
    if x0_true is None:
        # Truth drawn from the filter prior with the path's own stream.
        init = NoiseStreams(seed, [10**9 + i for i in paths], n)
        x = x_hat + init.draw() @ psd_sqrt(P0).T
    else:
        x = np.broadcast_to(np.asarray(x0_true, dtype=float), (npaths, n)).copy()
    state = FilterState(x_hat, P0.copy(), 0.0)
    sq = np.sqrt(dt)
    times, truth, est, covs = [0.0], [x.copy()], [x_hat.copy()], [P0.copy()]
    dms, dvs = [], []
    dm_acc = np.zeros((npaths, p))
    dv_acc = np.zeros((npaths, p))
    white = WhitenessAccumulator(p, max_lag)
    err_sum = np.zeros((n, n))
    err_count = 0
    drv = drive if callable(drive) or drive is None else (lambda t, d=np.asarray(drive): d)
    for k in range(n_steps):
        t = k * dt
        dw, dv = model.split_noise(noise.draw())
        dm = (x @ model.C.T) * dt + (dv @ model.D.T) * sq
        u = None if drv is None else drv(t)
        x = x + (x @ model.A.T) * dt + (dw @ model.B.T) * sq
        if u is not None:
            x = x + np.asarray(u) * dt
        _check_finite(x, k + 1)
        state, innov = kalman_step(model, state, dm, dt, drive=u)
        white.add(innov)
        dm_acc += dm
        dv_acc += innov
        if k + 1 >= average_from:
            e = x - state.x_hat
            err_sum += e.T @ e
            err_count += npaths
        if (k + 1) % record_every == 0 or k + 1 == n_steps:
            times.append((k + 1) * dt)
            truth.append(x.copy())
            est.append(state.x_hat.copy())
            covs.append(state.P.copy())
            dms.append(dm_acc)
            dvs.append(dv_acc)
            dm_acc = np.zeros((npaths, p))
            dv_acc = np.zeros((npaths, p))
    return dict(times=np.array(times), truth=np.array(truth), x_hat=np.array(est),
                P=np.array(covs), dm=np.array(dms).reshape(-1, npaths, p),
                dv=np.array(dvs).reshape(-1, npaths, p), white=white,
                err_sum=err_sum, err_count=err_count)


def run_filtered_experiment(model: LinearFilterModel, x0_true, x0_filter, P0,
                            dt: float, n_steps: int, seed: int, *,
                            n_paths: int = 1, drive=None, record_every: int = 1,
                            average_from: int | None = None, max_lag: int = 10,
                            batch_size: int = 2048, workers: int = 1
                            ) -> ExperimentResult:
    """Simulate truth and measurements, then filter them.

    Truth and measurement share the noise structure of ``model``.  If
    ``x0_true`` is None each path's initial truth is drawn from
    ``N(x0_filter, P0)``.  Paths run in batches (optionally on a thread
    pool) and are merged in path-index order.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if average_from is None:
        average_from = n_steps // 2
    batches = [list(range(i, min(i + batch_size, n_paths)))
               for i in range(0, n_paths, batch_size)]
    args = (model, x0_true, x0_filter, P0, dt, n_steps, seed)

    def job(paths):
        return _run_batch(*args, paths, drive, record_every, average_from, max_lag)

    if workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(job, batches))
    else:
        parts = [job(b) for b in batches]
    white = parts[0]["white"]
    for part in parts[1:]:
        white.merge(part["white"])
    cat = lambda key: np.concatenate([q[key] for q in parts], axis=1)
    err_count = sum(q["err_count"] for q in parts)
    err = sum(q["err_sum"] for q in parts) / max(err_count, 1)
    first = parts[0]
    return ExperimentResult(
        times=first["times"], truth=cat("truth"), x_hat=cat("x_hat"), P=first["P"],
        dm=cat("dm"), innovations=InnovationRecord(first["times"][1:], cat("dv")),
        whiteness=white, error_moment=err, error_samples=err_count, seed=seed, dt=dt)


# ---------------------------------------------------------------------------
# Particle filter oracle
# ---------------------------------------------------------------------------

@dataclass
class ParticleResult:
    means: np.ndarray      # (steps, n) posterior mean of x_{k+1} given dm_0..k
    stds: np.ndarray
    ess: np.ndarray
    stderr: np.ndarray
    resamples: int


def _systematic_resample(w: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    N = w.size
    positions = (rng.uniform() + np.arange(N)) / N
    idx = np.searchsorted(np.cumsum(w), positions)
    return np.minimum(idx, N - 1)


def particle_filter_oracle(drift: Callable, diffusion: Callable, measure: Callable,
                           D, dm_record, dt: float, n_particles: int, seed: int,
                           x0_mean, x0_cov, S_corr=None,
                           resample_threshold: float = 0.5,
                           min_ess: float = 10.0) -> ParticleResult:
    """Bootstrap particle filter with systematic resampling.

    Each particle is weighted by the likelihood of ``dm_k`` and then moved
    with the dynamics noise drawn conditionally on the measurement noise it
    implies, which is how cross-correlation ``S_corr`` enters.
    ``diffusion(x)`` returns ``(N, n, q)``; ``measure(x)`` returns ``(N, p)``.
    """
    rng = path_rng(seed, 0)
    D = np.atleast_2d(np.asarray(D, dtype=float))
    dm_record = np.asarray(dm_record, dtype=float).reshape(len(dm_record), -1)
    x0_mean = np.atleast_1d(np.asarray(x0_mean, dtype=float))
    n = x0_mean.size
    x = x0_mean + rng.standard_normal((n_particles, n)) @ psd_sqrt(np.atleast_2d(x0_cov)).T
    q = diffusion(x[:1], 0.0).shape[-1]
    S = np.zeros((q, D.shape[1])) if S_corr is None else np.atleast_2d(S_corr)
    DDinv = psd_pinv(D @ D.T)
    Kw = S @ D.T @ DDinv                        # E[dw | D dv = y] = Kw y
    cond_cov = np.eye(q) - Kw @ D @ S.T          # per unit dt
    Lw = psd_sqrt(cond_cov)
    logw = np.zeros(n_particles)
    sq = np.sqrt(dt)
    means, stds, esss, ses = [], [], [], []
    resamples = 0
    for k, dm in enumerate(dm_record):
        t = k * dt
        y = dm - measure(x) * dt
        logw += -0.5 * np.einsum("ip,pq,iq->i", y, DDinv, y) / dt
        w = np.exp(logw - logw.max())
        w /= w.sum()
        ess = 1.0 / np.sum(w ** 2)
        if ess < min_ess:
            raise Degeneracy(f"effective sample size {ess:.1f} at step {k}")
        if ess < resample_threshold * n_particles:
            idx = _systematic_resample(w, rng)
            x, y = x[idx], y[idx]
            w = np.full(n_particles, 1.0 / n_particles)
            resamples += 1
        logw = np.log(w)
        dw = y @ Kw.T + (rng.standard_normal((n_particles, q)) @ Lw.T) * sq
        x = x + drift(x, t) * dt + np.einsum("ind,id->in", diffusion(x, t), dw)
        _check_finite(x, k + 1)
        mu = w @ x
        var = w @ (x - mu) ** 2
        ess_now = 1.0 / np.sum(w ** 2)
        means.append(mu)
        stds.append(np.sqrt(var))
        esss.append(ess_now)
        ses.append(np.sqrt(var / ess_now))
    return ParticleResult(np.array(means), np.array(stds), np.array(esss),
                          np.array(ses), resamples)
