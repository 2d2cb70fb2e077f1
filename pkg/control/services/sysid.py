from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg
from joblib import Parallel, delayed

from ..conf import toolkit_setting
from ..exceptions import DimensionError, PreconditionError, RankDeficientError
from .lti import LinearSystem, NoiseSpec

logger = logging.getLogger(__name__)

RANK_TOL = 1e-10
ROLLOUT_SCHEMA_VERSION = 1


class RegressionMode(str, enum.Enum):
    FULL = "full"
    LAST_SAMPLE = "last-sample"


class ErrorSource(str, enum.Enum):
    THEORY = "theory-independent"
    DATA = "data-dependent"
    BOOTSTRAP = "bootstrap"
    ORACLE = "oracle"


# ---------------------------------------------------------------------------
# Value objects
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RolloutData:
    """N rollouts of length T started from x_0 = 0.

    ``states`` has shape (N, T + 1, n), ``inputs`` (N, T, p) and the optional
    ``noises`` (N, T, n).
    """

    states: np.ndarray
    inputs: np.ndarray
    noises: np.ndarray | None = None
    seed: int | None = None
    noise: NoiseSpec | None = None

    def __post_init__(self) -> None:
        states = np.asarray(self.states, dtype=float)
        inputs = np.asarray(self.inputs, dtype=float)
        if states.ndim != 3 or inputs.ndim != 3:
            raise DimensionError("states and inputs must be (rollouts, time, dimension) arrays")
        if states.shape[0] != inputs.shape[0] or states.shape[1] != inputs.shape[1] + 1:
            raise DimensionError(f"states {states.shape} and inputs {inputs.shape} disagree on N or T")
        if inputs.shape[1] < 1:
            raise DimensionError("rollouts need at least one step")
        if np.any(states[:, 0, :] != 0.0):
            raise DimensionError("every rollout must start from x_0 = 0")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "inputs", inputs)
        if self.noises is not None:
            noises = np.asarray(self.noises, dtype=float)
            if noises.shape != (states.shape[0], inputs.shape[1], states.shape[2]):
                raise DimensionError(f"noises have shape {noises.shape}, expected {(states.shape[0], inputs.shape[1], states.shape[2])}")
            object.__setattr__(self, "noises", noises)

    @property
    def N(self) -> int:
        return self.states.shape[0]

    @property
    def T(self) -> int:
        return self.inputs.shape[1]

    @property
    def n(self) -> int:
        return self.states.shape[2]

    @property
    def p(self) -> int:
        return self.inputs.shape[2]

    def header(self) -> dict:
        return {
            "schema_version": ROLLOUT_SCHEMA_VERSION,
            "n": self.n,
            "p": self.p,
            "N": self.N,
            "T": self.T,
            "seed": self.seed,
            "sigma_u": None if self.noise is None else self.noise.sigma_u,
            "sigma_w": None if self.noise is None else self.noise.sigma_w,
        }


@dataclass(frozen=True)
class RegressionMatrices:
    """Stacked regressors z = [x; u] and the matching next states."""

    Z: np.ndarray
    X_next: np.ndarray
    mode: RegressionMode = RegressionMode.FULL

    def __post_init__(self) -> None:
        if self.Z.shape[0] != self.X_next.shape[0]:
            raise DimensionError(f"row counts differ: {self.Z.shape[0]} vs {self.X_next.shape[0]}")
        if self.Z.shape[1] <= self.X_next.shape[1]:
            raise DimensionError("regressor must have n + p columns with p >= 1")

    @property
    def n(self) -> int:
        return self.X_next.shape[1]

    @property
    def p(self) -> int:
        return self.Z.shape[1] - self.n

    @property
    def rows(self) -> int:
        return self.Z.shape[0]

    @classmethod
    def from_rollouts(cls, data: RolloutData, mode: RegressionMode | str = RegressionMode.FULL) -> "RegressionMatrices":
        mode = RegressionMode(mode)
        if mode is RegressionMode.FULL:
            x = data.states[:, :-1, :].reshape(-1, data.n)
            u = data.inputs.reshape(-1, data.p)
            y = data.states[:, 1:, :].reshape(-1, data.n)
        else:
            x = data.states[:, -2, :]
            u = data.inputs[:, -1, :]
            y = data.states[:, -1, :]
        return cls(np.hstack([x, u]), y, mode)

    @classmethod
    def from_samples(cls, y: np.ndarray, x: np.ndarray, u: np.ndarray) -> "RegressionMatrices":
        return cls(np.hstack([np.atleast_2d(x), np.atleast_2d(u)]), np.atleast_2d(y))


@dataclass(frozen=True)
class EstimateWithError:
    """Nominal model with operator-norm error radii and where they came from."""

    A_hat: np.ndarray
    B_hat: np.ndarray
    eps_A: float = 0.0
    eps_B: float = 0.0
    source: ErrorSource = ErrorSource.ORACLE

    def __post_init__(self) -> None:
        system = LinearSystem(self.A_hat, self.B_hat)
        object.__setattr__(self, "A_hat", system.A)
        object.__setattr__(self, "B_hat", system.B)
        for name in ("eps_A", "eps_B"):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value < 0:
                raise DimensionError(f"{name} must be finite and nonnegative, got {value}")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "source", ErrorSource(self.source))

    @property
    def system(self) -> LinearSystem:
        return LinearSystem(self.A_hat, self.B_hat)

    @property
    def n(self) -> int:
        return self.A_hat.shape[0]

    @property
    def p(self) -> int:
        return self.B_hat.shape[1]

    def with_errors(self, eps_A: float, eps_B: float, source: ErrorSource | str) -> "EstimateWithError":
        return replace(self, eps_A=eps_A, eps_B=eps_B, source=ErrorSource(source))

    def to_dict(self) -> dict:
        return {
            "A_hat": self.A_hat.tolist(),
            "B_hat": self.B_hat.tolist(),
            "eps_A": self.eps_A,
            "eps_B": self.eps_B,
            "source": self.source.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EstimateWithError":
        return cls(data["A_hat"], data["B_hat"], data.get("eps_A", 0.0), data.get("eps_B", 0.0), data.get("source", "oracle"))


@dataclass(frozen=True)
class DataDependentBound:
    E_bound: np.ndarray
    eps_A: float
    eps_B: float


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


def propagate(system: LinearSystem, x0: np.ndarray, inputs: np.ndarray, noises: np.ndarray) -> np.ndarray:
    """Run x_{t+1} = A x_t + B u_t + w_t for a batch of rollouts at once."""

    rollouts, T, _ = inputs.shape
    states = np.empty((rollouts, T + 1, system.n))
    states[:, 0, :] = x0
    for t in range(T):
        states[:, t + 1, :] = states[:, t, :] @ system.A.T + inputs[:, t, :] @ system.B.T + noises[:, t, :]
    return states


def _simulate_one(system: LinearSystem, noise: NoiseSpec, T: int, seed_sequence: np.random.SeedSequence):
    rng = np.random.default_rng(seed_sequence)
    inputs = noise.sigma_u * rng.standard_normal((1, T, system.p))
    noises = noise.sigma_w * rng.standard_normal((1, T, system.n))
    states = propagate(system, np.zeros(system.n), inputs, noises)
    return states[0], inputs[0], noises[0]


def simulate_rollouts(
    system: LinearSystem,
    noise: NoiseSpec,
    N: int,
    T: int,
    seed: int,
    *,
    record_noise: bool = True,
    n_jobs: int | None = None,
) -> RolloutData:
    """Independent Gaussian-excited rollouts, one RNG stream per rollout."""

    if N < 1 or T < 1:
        raise DimensionError(f"need N >= 1 and T >= 1, got N={N}, T={T}")
    streams = np.random.SeedSequence(seed).spawn(N)
    n_jobs = n_jobs or toolkit_setting("POOL_SIZE")
    if n_jobs > 1 and N > 1:
        results = Parallel(n_jobs=n_jobs)(delayed(_simulate_one)(system, noise, T, stream) for stream in streams)
    else:
        results = [_simulate_one(system, noise, T, stream) for stream in streams]
    states, inputs, noises = (np.stack(part) for part in zip(*results))
    logger.debug("simulated %d rollouts of length %d (seed %s)", N, T, seed)
    return RolloutData(states, inputs, noises if record_noise else None, seed, noise)


# ---------------------------------------------------------------------------
# Estimation
# ---------------------------------------------------------------------------


def regression_rank(Z: np.ndarray, tol: float = RANK_TOL) -> int:
    if Z.shape[0] == 0:
        return 0
    _, R, _ = scipy.linalg.qr(Z, mode="economic", pivoting=True)
    diagonal = np.abs(np.diag(R))
    if diagonal.size == 0 or diagonal[0] == 0.0:
        return 0
    return int(np.sum(diagonal > tol * diagonal[0]))


def solve_least_squares(regression: RegressionMatrices) -> tuple[np.ndarray, np.ndarray]:
    required = regression.n + regression.p
    rank = regression_rank(regression.Z)
    if rank < required:
        raise RankDeficientError(
            f"{regression.mode.value} regression with {regression.rows} rows is rank deficient", rank, required
        )
    theta, *_ = scipy.linalg.lstsq(regression.Z, regression.X_next)
    return theta[: regression.n].T.copy(), theta[regression.n :].T.copy()


def ls_estimate(data: RolloutData, mode: RegressionMode | str = RegressionMode.FULL) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares (A_hat, B_hat) from all transitions or from the last one of each rollout."""

    return solve_least_squares(RegressionMatrices.from_rollouts(data, mode))


def estimate_noise_levels(data: RolloutData, A_hat: np.ndarray, B_hat: np.ndarray) -> NoiseSpec:
    """Plug-in input and process-noise levels from the data and a fitted model."""

    inputs = data.inputs.reshape(-1, data.p)
    sigma_u = float(np.sqrt(np.mean(inputs**2)))
    regression = RegressionMatrices.from_rollouts(data, RegressionMode.FULL)
    residual = regression.X_next - regression.Z @ np.hstack([A_hat, B_hat]).T
    dof = max(regression.rows - (data.n + data.p), 1)
    sigma_w = float(np.sqrt(np.sum(residual**2) / (dof * data.n)))
    return NoiseSpec(sigma_u, sigma_w)


# ---------------------------------------------------------------------------
# Error bounds
# ---------------------------------------------------------------------------


def independent_sample_threshold(n: int, p: int, delta: float) -> float:
    return 8 * (n + p) + 16 * math.log(4 / delta)


def theory_bound_independent(
    lambda_G: float, n: int, p: int, N: int, delta: float, noise: NoiseSpec
) -> tuple[float, float]:
    """Closed-form radii for the last-sample estimator with independent rollouts."""

    if not 0 < delta < 1:
        raise DimensionError(f"delta must lie in (0, 1), got {delta}")
    required = independent_sample_threshold(n, p, delta)
    if N < required:
        raise PreconditionError("too few rollouts for the independent-data bound", required, N)
    if lambda_G <= 0 or noise.sigma_u <= 0:
        raise PreconditionError("bound needs a positive Gramian eigenvalue and input level", 0.0, min(lambda_G, noise.sigma_u))
    rate = math.sqrt((n + 2 * p) * math.log(36 / delta) / N)
    eps_A = 16 * noise.sigma_w / math.sqrt(lambda_G) * rate
    eps_B = 16 * noise.sigma_w / noise.sigma_u * rate
    return eps_A, eps_B


def data_dependent_bound(samples: RegressionMatrices, delta: float, sigma_w: float) -> DataDependentBound:
    """Matrix dominator C(n, p, delta) (sum z z^T)^{-1} and the per-block radii it implies."""

    n, p = samples.n, samples.p
    if samples.rows < n + p:
        raise PreconditionError("too few independent samples for the data-dependent bound", n + p, samples.rows)
    if not 0 < delta < 1:
        raise DimensionError(f"delta must lie in (0, 1), got {delta}")
    if sigma_w == 0:
        return DataDependentBound(np.zeros((n + p, n + p)), 0.0, 0.0)

    scale = sigma_w**2 * (math.sqrt(n + p) + math.sqrt(n) + math.sqrt(2 * math.log(1 / delta))) ** 2
    gram = samples.Z.T @ samples.Z
    eigenvalues = np.linalg.eigvalsh(gram)
    if eigenvalues.min() <= RANK_TOL * max(eigenvalues.max(), 1.0):
        return DataDependentBound(np.full((n + p, n + p), math.inf), math.inf, math.inf)
    E_bound = scale * np.linalg.inv(gram)
    E_bound = (E_bound + E_bound.T) / 2
    eps_A = math.sqrt(max(np.linalg.eigvalsh(E_bound[:n, :n]).max(), 0.0))
    eps_B = math.sqrt(max(np.linalg.eigvalsh(E_bound[n:, n:]).max(), 0.0))
    return DataDependentBound(E_bound, eps_A, eps_B)


def true_errors(system: LinearSystem, A_hat: np.ndarray, B_hat: np.ndarray) -> tuple[float, float]:
    return float(np.linalg.norm(A_hat - system.A, 2)), float(np.linalg.norm(B_hat - system.B, 2))


__all__ = [
    "RegressionMode",
    "ErrorSource",
    "RolloutData",
    "RegressionMatrices",
    "EstimateWithError",
    "DataDependentBound",
    "propagate",
    "simulate_rollouts",
    "regression_rank",
    "solve_least_squares",
    "ls_estimate",
    "estimate_noise_levels",
    "independent_sample_threshold",
    "theory_bound_independent",
    "data_dependent_bound",
    "true_errors",
]
