from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from ..conf import toolkit_setting
from ..exceptions import DimensionError, RankDeficientError
from .lti import LinearSystem, NoiseSpec
from .sysid import (
    EstimateWithError,
    ErrorSource,
    RegressionMatrices,
    RegressionMode,
    RolloutData,
    estimate_noise_levels,
    propagate,
    solve_least_squares,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BootstrapConfig:
    """Trial count M, confidence delta and the noise levels used for re-simulation.

    With ``noise=None`` the levels are estimated from residuals when
    ``estimate_noise`` is set, and otherwise taken from the levels recorded with
    the data (unit levels if none were recorded).
    """

    trials: int = 500
    delta: float = 0.05
    seed: int = 0
    noise: NoiseSpec | None = None
    estimate_noise: bool = False
    max_retries: int = 3

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise DimensionError(f"bootstrap needs at least one trial, got {self.trials}")
        if not 0 < self.delta < 1:
            raise DimensionError(f"delta must lie in (0, 1), got {self.delta}")


@dataclass(frozen=True)
class BootstrapResult:
    eps_A: float
    eps_B: float
    trial_eps_A: np.ndarray
    trial_eps_B: np.ndarray
    percentile_index: int
    noise: NoiseSpec

    def as_estimate(self, A_hat: np.ndarray, B_hat: np.ndarray) -> EstimateWithError:
        return EstimateWithError(A_hat, B_hat, self.eps_A, self.eps_B, ErrorSource.BOOTSTRAP)


def percentile_index(trials: int, delta: float) -> int:
    """Nearest-rank position (1-based) of the 100(1 - delta)th percentile."""

    position = math.ceil(round((1 - delta) * trials, 9))
    return min(max(position, 1), trials)


def _run_trial(
    model: LinearSystem, x0: np.ndarray, N: int, T: int, noise: NoiseSpec, seed: int, trial: int, max_retries: int
) -> tuple[float, float]:
    failure: RankDeficientError | None = None
    for attempt in range(max_retries + 1):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial, attempt)))
        inputs = noise.sigma_u * rng.standard_normal((N, T, model.p))
        noises = noise.sigma_w * rng.standard_normal((N, T, model.n))
        states = propagate(model, x0, inputs, noises)
        regression = RegressionMatrices.from_rollouts(RolloutData(states, inputs), RegressionMode.FULL)
        try:
            A_tilde, B_tilde = solve_least_squares(regression)
        except RankDeficientError as exc:
            failure = exc
            logger.warning("bootstrap trial %d rank deficient (attempt %d)", trial, attempt + 1)
            continue
        return float(np.linalg.norm(model.A - A_tilde, 2)), float(np.linalg.norm(model.B - B_tilde, 2))
    raise failure


def bootstrap_errors(
    data: RolloutData,
    estimate: tuple[np.ndarray, np.ndarray],
    cfg: BootstrapConfig,
    *,
    n_jobs: int | None = None,
) -> BootstrapResult:
    """Parametric bootstrap of the least-squares error radii around (A_hat, B_hat)."""

    A_hat, B_hat = estimate
    model = LinearSystem(A_hat, B_hat)
    if model.n != data.n or model.p != data.p:
        raise DimensionError(f"estimate ({model.n}, {model.p}) does not fit data ({data.n}, {data.p})")

    if cfg.noise is not None:
        noise = cfg.noise
    elif cfg.estimate_noise:
        noise = estimate_noise_levels(data, model.A, model.B)
    else:
        noise = data.noise or NoiseSpec()

    x0 = data.states[:, 0, :]
    n_jobs = n_jobs or toolkit_setting("POOL_SIZE")
    if n_jobs > 1:
        samples = Parallel(n_jobs=n_jobs)(
            delayed(_run_trial)(model, x0, data.N, data.T, noise, cfg.seed, trial, cfg.max_retries) for trial in range(cfg.trials)
        )
    else:
        samples = [_run_trial(model, x0, data.N, data.T, noise, cfg.seed, trial, cfg.max_retries) for trial in range(cfg.trials)]

    trial_eps_A = np.array([a for a, _ in samples])
    trial_eps_B = np.array([b for _, b in samples])
    index = percentile_index(cfg.trials, cfg.delta)
    eps_A = float(np.sort(trial_eps_A)[index - 1])
    eps_B = float(np.sort(trial_eps_B)[index - 1])
    logger.debug("bootstrap over %d trials: eps_A=%.4g eps_B=%.4g", cfg.trials, eps_A, eps_B)
    return BootstrapResult(eps_A, eps_B, trial_eps_A, trial_eps_B, index, noise)


__all__ = ["BootstrapConfig", "BootstrapResult", "percentile_index", "bootstrap_errors"]
