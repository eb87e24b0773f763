"""Linear time-invariant systems driven by isotropic Gaussian noise.

The data-generating process is

    x_{t+1} = A x_t + w_t,    w_t ~ N(0, noise_std**2 * I),

and a trajectory of T + 1 states is read as T (feature, label) pairs
Z_t = (x_t, x_{t+1}).  Besides simulation this module computes the
quantities needed to certify geometric mixing of the process: spectral
radius, stationary covariance and the constant/rate pair of the bound
beta(k) <= Gamma * rho**k.

Random numbers come from numpy's PCG64 bit generator and the ziggurat
normal sampler (``Generator.standard_normal``).  Trajectories are
reproducible within one build of numpy; nothing is promised across builds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.signal import lfilter

from .exceptions import NotContractiveError, RcpsError

InitMode = Union[str, Sequence[float], np.ndarray]

GRID_SIZE = 4096
LYAPUNOV_TOL = 1e-12
LYAPUNOV_MAX_ITER = 100_000
LYAPUNOV_RESIDUAL_MAX = 1e-8


def _as_square(A) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise RcpsError(f"matrix must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise RcpsError("matrix entries must be finite")
    return A


@dataclass(frozen=True, eq=False)
class LtiSystem:
    """Autonomous linear system x_{t+1} = A x_t + noise_std * e_t."""

    A: np.ndarray
    noise_std: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "A", _as_square(self.A))
        self.A.setflags(write=False)
        if not (math.isfinite(self.noise_std) and self.noise_std >= 0):
            raise RcpsError(f"noise_std must be finite and >= 0, got {self.noise_std}")

    @classmethod
    def scalar(cls, a: float, noise_std: float = 1.0) -> "LtiSystem":
        return cls(np.array([[float(a)]]), noise_std)

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def spectral_radius(self) -> float:
        return spectral_radius(self.A)

    @property
    def contractive(self) -> bool:
        return self.spectral_radius < 1.0

    @property
    def a(self) -> float:
        """The scalar dynamics coefficient; only defined for d == 1."""
        if self.d != 1:
            raise RcpsError("scalar coefficient requested for a system with d > 1")
        return float(self.A[0, 0])

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "noise_std": float(self.noise_std)}


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States x_1 .. x_{T+1}; pair t is (x_t, y_t) with y_t = x_{t+1}."""

    states: np.ndarray
    seed: int = 0

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if states.ndim != 2 or states.shape[0] < 2:
            raise RcpsError("a trajectory needs at least two states (one pair)")
        if not np.all(np.isfinite(states)):
            raise RcpsError("trajectory contains non-finite states")
        states.setflags(write=False)
        object.__setattr__(self, "states", states)

    @property
    def T(self) -> int:
        return self.states.shape[0] - 1

    @property
    def d(self) -> int:
        return self.states.shape[1]

    @property
    def x(self) -> np.ndarray:
        return self.states[:-1]

    @property
    def y(self) -> np.ndarray:
        return self.states[1:]


@dataclass(frozen=True, eq=False)
class StationaryCovariance:
    sigma_inf: np.ndarray
    residual_norm: float
    iterations: int = 0


@dataclass(frozen=True)
class MixingBound:
    """Geometric mixing certificate beta(k) <= pair_factor * gamma_const * decay_rate**k.

    ``pair_factor`` lifts a bound on the state process to the process of
    consecutive pairs (x_t, x_{t+1}) that calibration actually consumes.
    """

    gamma_const: float
    decay_rate: float
    pair_factor: float = 2.0

    def __post_init__(self):
        if not self.gamma_const >= 0:
            raise RcpsError("gamma_const must be nonnegative")
        if not 0 < self.decay_rate < 1:
            raise RcpsError("decay_rate must lie in (0, 1)")
        if not self.pair_factor >= 1:
            raise RcpsError("pair_factor must be >= 1")

    @property
    def effective_gamma(self) -> float:
        return self.pair_factor * self.gamma_const

    def bound(self, k) -> float:
        return min(1.0, self.effective_gamma * self.decay_rate ** k)


# -- randomness ---------------------------------------------------------------

def derive_seed(seed: int, index: int) -> int:
    """Independent 64-bit seed for stream ``index`` of a master ``seed``."""
    ss = np.random.SeedSequence([int(seed), int(index)])
    return int(ss.generate_state(1, np.uint64)[0])


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


# -- spectral quantities -------------------------------------------------------

def _closed_form_radius(A: np.ndarray) -> float:
    if A.shape[0] == 1:
        return abs(float(A[0, 0]))
    (p, q), (r, s) = A
    half_tr = 0.5 * (p + s)
    det = p * s - q * r
    disc = half_tr * half_tr - det
    if disc >= 0:
        root = math.sqrt(disc)
        return max(abs(half_tr + root), abs(half_tr - root))
    # complex conjugate pair, |lambda|^2 = det
    return math.sqrt(det)


def _gelfand_radius(A: np.ndarray, tol: float = 1e-7, max_doublings: int = 40) -> float:
    # M * exp(log_scale) == A^(2^j); normalizing keeps squaring in range
    M = A.copy()
    log_scale = 0.0
    prev = None
    est = 0.0
    for j in range(max_doublings + 1):
        nrm = np.linalg.norm(M, "fro")
        if nrm == 0.0:
            return 0.0
        est = math.exp((math.log(nrm) + log_scale) / 2.0 ** j)
        if prev is not None and abs(est - prev) < tol:
            return est
        prev = est
        log_scale += math.log(nrm)
        M = M / nrm
        M = M @ M
        log_scale *= 2.0
    return est


def spectral_radius(A, method: str = "auto") -> float:
    """Spectral radius of a square matrix.

    ``method`` is ``"auto"`` (closed form for d <= 2, Gelfand otherwise),
    ``"closed_form"`` or ``"gelfand"``.
    """
    A = _as_square(A)
    if method == "auto":
        method = "closed_form" if A.shape[0] <= 2 else "gelfand"
    if method == "closed_form":
        if A.shape[0] > 2:
            raise RcpsError("closed-form spectral radius only for d <= 2")
        return _closed_form_radius(A)
    if method == "gelfand":
        return _gelfand_radius(A)
    raise RcpsError(f"unknown method {method!r}")


def solve_lyapunov(system: LtiSystem) -> StationaryCovariance:
    """Stationary covariance from the fixed point of S <- A S A^T + q I."""
    A = system.A
    if system.spectral_radius >= 1.0:
        raise NotContractiveError("Lyapunov iteration diverges: spectral radius >= 1")
    Q = system.noise_std ** 2 * np.eye(system.d)
    S = np.zeros_like(A)
    it = 0
    for it in range(1, LYAPUNOV_MAX_ITER + 1):
        S_next = A @ S @ A.T + Q
        change = np.linalg.norm(S_next - S, "fro")
        S = S_next
        if change < LYAPUNOV_TOL:
            break
    S = 0.5 * (S + S.T)
    residual = float(np.linalg.norm(A @ S @ A.T - S + Q, "fro"))
    if residual > LYAPUNOV_RESIDUAL_MAX:
        raise NotContractiveError(
            f"Lyapunov iteration did not converge (residual {residual:.3e} after {it} iterations)")
    S.setflags(write=False)
    return StationaryCovariance(S, residual, it)


def _sigma_min_on_circle(A: np.ndarray, radius: float, theta: np.ndarray) -> np.ndarray:
    # real embedding of zI - A: [[X, -Y], [Y, X]] has the same singular
    # values as the complex matrix, each repeated twice
    d = A.shape[0]
    theta = np.atleast_1d(theta)
    re = radius * np.cos(theta)
    im = radius * np.sin(theta)
    eye = np.eye(d)
    X = re[:, None, None] * eye - A
    Y = im[:, None, None] * eye
    M = np.empty((theta.size, 2 * d, 2 * d))
    M[:, :d, :d] = X
    M[:, :d, d:] = -Y
    M[:, d:, :d] = Y
    M[:, d:, d:] = X
    return np.linalg.svd(M, compute_uv=False)[:, -1]


def resolvent_sup_norm(A, radius: float) -> float:
    """max over |z| = radius of the operator norm of (zI - A)^{-1}."""
    A = _as_square(A)
    rho = spectral_radius(A)
    if radius <= rho + 1e-9:
        raise RcpsError(
            f"resolvent evaluated inside spectrum: radius {radius} <= spectral radius {rho}")
    theta = np.linspace(0.0, 2.0 * np.pi, GRID_SIZE, endpoint=False)
    values = 1.0 / _sigma_min_on_circle(A, radius, theta)
    i = int(np.argmax(values))
    best = float(values[i])
    step = theta[1] - theta[0]

    def f(t):
        return float(1.0 / _sigma_min_on_circle(A, radius, np.array([t]))[0])

    lo, hi = theta[i] - step, theta[i] + step
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = hi - invphi * (hi - lo)
    e = lo + invphi * (hi - lo)
    fc, fe = f(c), f(e)
    while hi - lo > 1e-12:
        if abs(fc - fe) <= 1e-6 * max(fc, fe) and hi - lo < 1e-6:
            break
        if fc > fe:
            hi, e, fe = e, c, fc
            c = hi - invphi * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, e, fe
            e = lo + invphi * (hi - lo)
            fe = f(e)
    return max(best, fc, fe)


def mixing_bound(system: LtiSystem, margin: float = 0.5,
                 pair_factor: float = 2.0) -> MixingBound:
    """Certified geometric mixing bound for a contractive system.

    The decay rate is pushed a fraction ``margin`` of the way from rho(A)
    to 1 so that the resolvent is evaluated on a circle strictly outside
    the spectrum and the constant stays finite.
    """
    if not 0 < margin < 1:
        raise RcpsError("margin must lie in (0, 1)")
    rho = system.spectral_radius
    if rho >= 1.0:
        raise NotContractiveError("mixing bound requires a contractive system")
    rate = rho + margin * (1.0 - rho)
    C = resolvent_sup_norm(system.A, rate)
    cov = solve_lyapunov(system)
    gamma = 0.5 * C * math.sqrt(np.trace(cov.sigma_inf) + system.d / (1.0 - rate ** 2))
    return MixingBound(gamma, rate, pair_factor)


# -- simulation ----------------------------------------------------------------

def _stationary_factor(system: LtiSystem) -> np.ndarray:
    if not system.contractive:
        raise NotContractiveError("no stationary distribution: spectral radius >= 1")
    S = solve_lyapunov(system).sigma_inf
    vals, vecs = np.linalg.eigh(S)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _initial_states(system: LtiSystem, init: InitMode, n: int,
                    rng: np.random.Generator) -> np.ndarray:
    d = system.d
    if isinstance(init, str):
        if init == "zero":
            return np.zeros((n, d))
        if init == "stationary":
            L = _stationary_factor(system)
            return rng.standard_normal((n, d)) @ L.T
        raise RcpsError(f"unknown init mode {init!r}")
    x1 = np.asarray(init, dtype=float).reshape(-1)
    if x1.shape != (d,) or not np.all(np.isfinite(x1)):
        raise RcpsError(f"explicit initial state must be a finite {d}-vector")
    return np.broadcast_to(x1, (n, d)).copy()


def simulate_paths(system: LtiSystem, T: int, n_paths: int, rng: np.random.Generator,
                   init: InitMode = "zero") -> np.ndarray:
    """Simulate ``n_paths`` independent trajectories, shape (n_paths, T + 1, d)."""
    if T < 1:
        raise RcpsError("T must be >= 1")
    d = system.d
    x1 = _initial_states(system, init, n_paths, rng)
    noise = rng.standard_normal((n_paths, T, d))
    if system.noise_std != 1.0:
        noise *= system.noise_std
    out = np.empty((n_paths, T + 1, d))
    out[:, 0] = x1
    if d == 1:
        a = system.a
        zi = (a * x1[:, 0])[:, None]
        out[:, 1:, 0] = lfilter([1.0], [1.0, -a], noise[:, :, 0], axis=1, zi=zi)[0]
    else:
        A_T = system.A.T
        for t in range(T):
            out[:, t + 1] = out[:, t] @ A_T + noise[:, t]
    return out


def simulate(system: LtiSystem, T: int, init: InitMode = "zero", seed: int = 0) -> Trajectory:
    """Simulate one trajectory of T pairs from the stream determined by ``seed``."""
    rng = make_rng(seed)
    states = simulate_paths(system, T, 1, rng, init)[0]
    return Trajectory(states, int(seed))


def state_moments(system: LtiSystem, t: int, init: InitMode = "zero"):
    """Mean and covariance of x_t (1-indexed) for a deterministic or stationary start."""
    if t < 1:
        raise RcpsError("time index must be >= 1")
    d = system.d
    q = system.noise_std ** 2
    if isinstance(init, str) and init == "stationary":
        return np.zeros(d), solve_lyapunov(system).sigma_inf.copy()
    x1 = _initial_states(system, init, 1, make_rng(0))[0]
    if d == 1:
        a = system.a
        steps = t - 1
        a2 = a * a
        var = q * steps if a2 == 1.0 else q * (1.0 - a2 ** steps) / (1.0 - a2)
        return np.array([a ** steps * x1[0]]), np.array([[var]])
    A = system.A
    mean = x1.copy()
    cov = np.zeros((d, d))
    Q = q * np.eye(d)
    for _ in range(t - 1):
        mean = A @ mean
        cov = A @ cov @ A.T + Q
    return mean, cov
