from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg

from ..decorators import STABILITY_MARGIN, square_required, stable_required
from ..exceptions import ConvergenceError, DimensionError, NotStabilizableError, UnstableSystemError

logger = logging.getLogger(__name__)

RICCATI_TOL = 1e-8
HINF_REL_TOL = 1e-6
HINF_GRID_POINTS = 512


def _as_matrix(value, name: str, shape: tuple[int | None, int | None] | None = None) -> np.ndarray:
    matrix = np.array(value, dtype=float, copy=True)
    if matrix.ndim == 0:
        matrix = matrix.reshape(1, 1)
    elif matrix.ndim == 1:
        as_column = shape is not None and shape[0] == matrix.size and shape[1] in (None, 1)
        matrix = matrix.reshape(-1, 1) if as_column else matrix.reshape(1, -1)
    if matrix.ndim != 2:
        raise DimensionError(f"{name} must be a matrix, got {matrix.ndim} dimensions")
    if not np.all(np.isfinite(matrix)):
        raise DimensionError(f"{name} has non-finite entries")
    if shape is not None:
        for expected, actual in zip(shape, matrix.shape):
            if expected is not None and expected != actual:
                raise DimensionError(f"{name} has shape {matrix.shape}, expected {shape}")
    matrix.setflags(write=False)
    return matrix


# ---------------------------------------------------------------------------
# Value objects
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearSystem:
    """State-space pair (A, B) of x_{t+1} = A x_t + B u_t + w_t."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self) -> None:
        A = _as_matrix(self.A, "A")
        if A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got {A.shape}")
        B = _as_matrix(self.B, "B", (A.shape[0], None))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.B.shape[1]

    def closed_loop(self, gain: "StateFeedbackGain | np.ndarray") -> np.ndarray:
        K = gain.K if isinstance(gain, StateFeedbackGain) else _as_matrix(gain, "K", (self.p, self.n))
        return self.A + self.B @ K

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "B": self.B.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "LinearSystem":
        return cls(A=data["A"], B=data["B"])


@dataclass(frozen=True)
class CostWeights:
    """Quadratic weights Q (PSD) and R (PD)."""

    Q: np.ndarray
    R: np.ndarray
    tol: float = field(default=1e-12, repr=False)

    def __post_init__(self) -> None:
        Q = _as_matrix(self.Q, "Q")
        R = _as_matrix(self.R, "R")
        for name, matrix in (("Q", Q), ("R", R)):
            if matrix.shape[0] != matrix.shape[1]:
                raise DimensionError(f"{name} must be square, got {matrix.shape}")
            if not np.allclose(matrix, matrix.T, atol=1e-12, rtol=1e-10):
                raise DimensionError(f"{name} must be symmetric")
        if np.linalg.eigvalsh(Q).min() < -self.tol:
            raise DimensionError("Q must be positive semidefinite")
        if np.linalg.eigvalsh(R).min() <= self.tol:
            raise DimensionError("R must be positive definite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    @classmethod
    def identity(cls, n: int, p: int) -> "CostWeights":
        return cls(Q=np.eye(n), R=np.eye(p))

    def check_compatible(self, system: LinearSystem) -> None:
        if self.Q.shape[0] != system.n or self.R.shape[0] != system.p:
            raise DimensionError(
                f"weights of size ({self.Q.shape[0]}, {self.R.shape[0]}) do not fit system ({system.n}, {system.p})"
            )

    @property
    def Q_half(self) -> np.ndarray:
        return psd_sqrt(self.Q)

    @property
    def R_half(self) -> np.ndarray:
        return psd_sqrt(self.R)

    def to_dict(self) -> dict:
        return {"Q": self.Q.tolist(), "R": self.R.tolist()}


@dataclass(frozen=True)
class NoiseSpec:
    """Standard deviations of the exciting input and of the process noise.

    Zero is accepted so that noiseless data can be generated; the operations
    that divide by a level check for positivity themselves.
    """

    sigma_u: float = 1.0
    sigma_w: float = 1.0

    def __post_init__(self) -> None:
        for name in ("sigma_u", "sigma_w"):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value < 0:
                raise DimensionError(f"{name} must be finite and nonnegative, got {value}")
            object.__setattr__(self, name, value)

    def to_dict(self) -> dict:
        return {"sigma_u": self.sigma_u, "sigma_w": self.sigma_w}


@dataclass(frozen=True)
class StateFeedbackGain:
    """Static gain for u_t = K x_t."""

    K: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "K", _as_matrix(self.K, "K"))

    @property
    def n(self) -> int:
        return self.K.shape[1]

    @property
    def p(self) -> int:
        return self.K.shape[0]

    def check_compatible(self, system: LinearSystem) -> None:
        if self.K.shape != (system.p, system.n):
            raise DimensionError(f"gain of shape {self.K.shape} does not fit system ({system.n}, {system.p})")

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.K, 2))


@dataclass(frozen=True)
class DecayEnvelope:
    """Certified bound ||M^t|| <= C rho^t for t up to ``horizon``."""

    C: float
    rho: float
    horizon: int


@dataclass(frozen=True)
class StateSpace:
    """Realization (A, B, C, D) of a discrete-time transfer matrix C (zI - A)^{-1} B + D."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self) -> None:
        A = np.array(self.A, dtype=float, ndmin=2)
        k = A.shape[0] if A.size else 0
        A = A.reshape(k, k)
        B = np.array(self.B, dtype=float).reshape(k, -1) if k else np.array(self.B, dtype=float, ndmin=2)
        C = np.array(self.C, dtype=float).reshape(-1, k) if k else np.array(self.C, dtype=float, ndmin=2)
        D = np.array(self.D, dtype=float, ndmin=2)
        if k:
            if D.shape != (C.shape[0], B.shape[1]):
                raise DimensionError(f"D has shape {D.shape}, expected {(C.shape[0], B.shape[1])}")
        for name, matrix in (("A", A), ("B", B), ("C", C), ("D", D)):
            if not np.all(np.isfinite(matrix)):
                raise DimensionError(f"realization block {name} has non-finite entries")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)

    @property
    def order(self) -> int:
        return self.A.shape[0]

    @classmethod
    def resolvent(cls, M: np.ndarray) -> "StateSpace":
        M = np.atleast_2d(np.asarray(M, dtype=float))
        n = M.shape[0]
        return cls(A=M, B=np.eye(n), C=np.eye(n), D=np.zeros((n, n)))

    @classmethod
    def fir(cls, coefficients: list[np.ndarray]) -> "StateSpace":
        """Shift-register realization of sum_k G_k z^{-k}, k = 1..L."""

        if not coefficients:
            raise DimensionError("an FIR realization needs at least one coefficient")
        rows, cols = np.atleast_2d(coefficients[0]).shape
        L = len(coefficients)
        A = np.zeros((cols * L, cols * L))
        if L > 1:
            A[cols:, :-cols] = np.eye(cols * (L - 1))
        B = np.zeros((cols * L, cols))
        B[:cols] = np.eye(cols)
        C = np.hstack([np.atleast_2d(G) for G in coefficients])
        return cls(A=A, B=B, C=C, D=np.zeros((rows, cols)))

    def frequency_response(self, theta: float) -> np.ndarray:
        if self.order == 0:
            return self.D.astype(complex)
        z = np.exp(1j * theta)
        return self.C @ np.linalg.solve(z * np.eye(self.order) - self.A, self.B) + self.D


class LqrSolution(NamedTuple):
    P: np.ndarray
    K: StateFeedbackGain
    J_per_sigma: float


class Gramians(NamedTuple):
    controllability: np.ndarray
    noise: np.ndarray
    lambda_G: float


# ---------------------------------------------------------------------------
# Elementary helpers
# ---------------------------------------------------------------------------


def psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    values, vectors = np.linalg.eigh((matrix + matrix.T) / 2)
    return (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.T


@square_required
def spectral_radius(M: np.ndarray) -> float:
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(scipy.linalg.eigvals(M))))


def is_stable(M: np.ndarray, margin: float = STABILITY_MARGIN) -> bool:
    return spectral_radius(M) < 1.0 - margin


@stable_required
def dlyap(M: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Solve X = M X M^T + W for stable M."""

    W = _as_matrix(W, "W", M.shape)
    X = scipy.linalg.solve_discrete_lyapunov(M, W)
    X = (X + X.T) / 2
    residual = np.linalg.norm(X - M @ X @ M.T - W, "fro")
    if residual > 1e-9 * (1 + np.linalg.norm(X, "fro")):
        # refine once on the residual
        correction = scipy.linalg.solve_discrete_lyapunov(M, W - (X - M @ X @ M.T))
        X = X + (correction + correction.T) / 2
    return X


# ---------------------------------------------------------------------------
# Riccati
# ---------------------------------------------------------------------------


def riccati_residual(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray, P: np.ndarray) -> float:
    BtPA = B.T @ P @ A
    rhs = Q + A.T @ P @ A - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA)
    return float(np.linalg.norm(P - rhs, "fro"))


def _riccati_value_iteration(A, B, Q, R, P0, tol, max_iter) -> np.ndarray:
    P = P0
    for iteration in range(max_iter):
        BtPA = B.T @ P @ A
        P_next = Q + A.T @ P @ A - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA)
        P_next = (P_next + P_next.T) / 2
        scale = np.linalg.norm(P_next, "fro")
        if not np.isfinite(scale) or scale > 1e14:
            raise NotStabilizableError(f"Riccati iteration diverged after {iteration} steps")
        if np.linalg.norm(P_next - P, "fro") <= tol * (1 + scale):
            return P_next
        P = P_next
    raise ConvergenceError(f"Riccati iteration did not converge in {max_iter} steps")


def dare_lqr(system: LinearSystem, cost: CostWeights, *, tol: float = RICCATI_TOL, max_iter: int = 100_000) -> LqrSolution:
    """Stabilizing Riccati solution, optimal gain and per-noise-variance cost trace(P)."""

    cost.check_compatible(system)
    A, B, Q, R = system.A, system.B, cost.Q, cost.R
    try:
        P = scipy.linalg.solve_discrete_are(A, B, Q, R)
        P = (P + P.T) / 2
    except (np.linalg.LinAlgError, ValueError) as exc:
        logger.debug("solve_discrete_are failed (%s); falling back to value iteration", exc)
        P = _riccati_value_iteration(A, B, Q, R, Q.copy(), tol * 1e-2, max_iter)

    if not np.all(np.isfinite(P)) or riccati_residual(A, B, Q, R, P) > tol * max(1.0, np.linalg.norm(P, "fro")):
        logger.debug("refining Riccati solution by value iteration")
        start = P if np.all(np.isfinite(P)) else Q.copy()
        P = _riccati_value_iteration(A, B, Q, R, start, tol * 1e-2, max_iter)

    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    if not is_stable(A + B @ K):
        raise NotStabilizableError(
            f"Riccati gain does not stabilize (A, B): spectral radius {spectral_radius(A + B @ K):.6g}"
        )
    return LqrSolution(P=P, K=StateFeedbackGain(K), J_per_sigma=float(np.trace(P)))


def lqr_cost_closed_loop(
    system: LinearSystem, gain: StateFeedbackGain | np.ndarray, cost: CostWeights, sigma_w: float = 1.0
) -> float:
    """Average LQR cost of u = Kx; ``math.inf`` marks an unstable closed loop."""

    cost.check_compatible(system)
    K = gain.K if isinstance(gain, StateFeedbackGain) else _as_matrix(gain, "K", (system.p, system.n))
    closed = system.A + system.B @ K
    if not is_stable(closed):
        return math.inf
    X = dlyap(closed, np.eye(system.n))
    return float(sigma_w**2 * np.trace((cost.Q + K.T @ cost.R @ K) @ X))


# ---------------------------------------------------------------------------
# Norms, Gramians and decay
# ---------------------------------------------------------------------------


def _continuous_equivalent(ss: StateSpace) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Bilinear map z = (1 + s)/(1 - s); the H-infinity norm is preserved."""

    identity = np.eye(ss.order)
    inv = np.linalg.inv(ss.A + identity)
    Ac = inv @ (ss.A - identity)
    Bc = math.sqrt(2.0) * inv @ ss.B
    Cc = math.sqrt(2.0) * ss.C @ inv
    Dc = ss.D - ss.C @ inv @ ss.B
    return Ac, Bc, Cc, Dc


def _imaginary_axis_frequencies(Ac, Bc, Cc, Dc, gamma: float, tol: float = 1e-8) -> np.ndarray:
    """Frequencies of Hamiltonian eigenvalues on the imaginary axis for level gamma."""

    m = Dc.shape[1]
    Rg = gamma**2 * np.eye(m) - Dc.T @ Dc
    Rinv = np.linalg.inv(Rg)
    F = Ac + Bc @ Rinv @ Dc.T @ Cc
    top = np.hstack([F, Bc @ Rinv @ Bc.T])
    bottom = np.hstack([-Cc.T @ (np.eye(Dc.shape[0]) + Dc @ Rinv @ Dc.T) @ Cc, -F.T])
    eigs = scipy.linalg.eigvals(np.vstack([top, bottom]))
    on_axis = np.abs(eigs.real) <= tol * np.maximum(1.0, np.abs(eigs))
    return np.abs(eigs[on_axis].imag)


def hinf_norm_lti(
    ss: StateSpace, *, rel_tol: float = HINF_REL_TOL, grid_points: int = HINF_GRID_POINTS, max_iter: int = 200
) -> float:
    """Peak gain over the unit circle; the returned value is the upper end of the bisection bracket."""

    if ss.order == 0:
        return float(np.linalg.norm(ss.D, 2)) if ss.D.size else 0.0
    radius = spectral_radius(ss.A)
    if radius >= 1.0 - STABILITY_MARGIN:
        raise UnstableSystemError("H-infinity norm needs a stable realization", radius)

    thetas = np.append(2 * np.pi * np.arange(grid_points) / grid_points, np.pi)
    lower = max(float(np.linalg.norm(ss.frequency_response(theta), 2)) for theta in thetas)
    if lower == 0.0:
        return 0.0

    Ac, Bc, Cc, Dc = _continuous_equivalent(ss)

    def crosses(level: float) -> bool:
        nonlocal lower
        frequencies = _imaginary_axis_frequencies(Ac, Bc, Cc, Dc, level)
        for omega in frequencies:
            gain = float(np.linalg.norm(ss.frequency_response(2 * math.atan(omega)), 2))
            lower = max(lower, gain)
        return frequencies.size > 0

    upper = 2.0 * lower
    while crosses(upper):
        upper *= 2.0
        if upper > 1e12 * lower:
            raise ConvergenceError("H-infinity bracket did not close")

    for _ in range(max_iter):
        if upper - lower <= rel_tol * upper:
            break
        middle = (lower + upper) / 2
        if crosses(middle):
            lower = max(lower, middle)
        else:
            upper = middle
    return float(upper)


def gramians(system: LinearSystem, noise: NoiseSpec, T: int) -> Gramians:
    if T < 1:
        raise DimensionError(f"horizon must be at least 1, got {T}")
    controllability = np.zeros((system.n, system.n))
    noise_gramian = np.zeros((system.n, system.n))
    power = np.eye(system.n)
    for _ in range(T):
        controllability += power @ system.B @ system.B.T @ power.T
        noise_gramian += power @ power.T
        power = system.A @ power
    weighted = noise.sigma_u**2 * controllability + noise.sigma_w**2 * noise_gramian
    lambda_G = float(np.linalg.eigvalsh((weighted + weighted.T) / 2).min())
    return Gramians(controllability, noise_gramian, lambda_G)


@stable_required
def decay_envelope(M: np.ndarray, *, patience: int = 10, max_horizon: int = 100_000) -> DecayEnvelope:
    """Midpoint-rate envelope, certified by evaluating powers out to twice the horizon."""

    rho = (1.0 + spectral_radius(M)) / 2.0
    n = M.shape[0]
    ratios = [1.0]
    power = np.eye(n)
    t = 0
    decreasing = 0
    while True:
        t += 1
        if t > max_horizon:
            raise ConvergenceError(f"decay envelope did not settle within {max_horizon} steps")
        power = power @ M
        ratio = float(np.linalg.norm(power, 2)) / rho**t
        decreasing = decreasing + 1 if ratio <= ratios[-1] else 0
        ratios.append(ratio)
        if decreasing < patience:
            continue
        horizon = t
        C = max(ratios)
        verify = power
        intact = True
        for s in range(horizon + 1, 2 * horizon + 1):
            verify = verify @ M
            extra = float(np.linalg.norm(verify, 2)) / rho**s
            if extra > C:
                intact = False
                break
        if intact:
            return DecayEnvelope(C=max(1.0, C), rho=rho, horizon=horizon)
        decreasing = 0


def random_system(n: int, p: int, rho: float, rng: np.random.Generator) -> LinearSystem:
    """Upper-triangular A with diagonal ``rho`` and clipped Gaussian entries elsewhere."""

    A = np.triu(np.clip(rng.standard_normal((n, n)), -1.0, 1.0), k=1) + rho * np.eye(n)
    B = np.clip(rng.standard_normal((n, p)), -1.0, 1.0)
    return LinearSystem(A, B)


def laplacian_example() -> tuple[LinearSystem, CostWeights, NoiseSpec]:
    """Marginally unstable graph-Laplacian example used by the experiments."""

    A = np.array([[1.01, 0.01, 0.0], [0.01, 1.01, 0.01], [0.0, 0.01, 1.01]])
    return LinearSystem(A, np.eye(3)), CostWeights(1e-3 * np.eye(3), np.eye(3)), NoiseSpec(1.0, 1.0)


__all__ = [
    "LinearSystem",
    "CostWeights",
    "NoiseSpec",
    "StateFeedbackGain",
    "DecayEnvelope",
    "StateSpace",
    "LqrSolution",
    "Gramians",
    "psd_sqrt",
    "spectral_radius",
    "is_stable",
    "dlyap",
    "riccati_residual",
    "dare_lqr",
    "lqr_cost_closed_loop",
    "hinf_norm_lti",
    "gramians",
    "decay_envelope",
    "random_system",
    "laplacian_example",
]
