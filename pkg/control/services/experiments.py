from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import re
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from ..conf import toolkit_setting
from ..exceptions import CoarseIdError, DimensionError
from .bootstrap import BootstrapConfig, bootstrap_errors
from .lti import CostWeights, LinearSystem, NoiseSpec, dare_lqr, gramians, laplacian_example
from .synthesis import (
    GammaSearch,
    SynthesisResult,
    cl_synthesis,
    closed_loop_cost,
    fir_label,
    fir_synthesis,
    is_stabilizing,
    nominal_lqr,
)
from .sysid import (
    ErrorSource,
    EstimateWithError,
    RegressionMatrices,
    RegressionMode,
    data_dependent_bound,
    ls_estimate,
    simulate_rollouts,
    theory_bound_independent,
    true_errors,
)

logger = logging.getLogger(__name__)

CONFIG_SCHEMA_VERSION = 1
LAPLACIAN_EXAMPLE = "laplacian-example"

RESULT_COLUMNS = [
    "run_id",
    "N",
    "T",
    "trial",
    "method",
    "eps_A_source",
    "eps_A",
    "eps_B",
    "status",
    "gamma",
    "alpha",
    "nominal_cost",
    "true_cost",
    "J_star",
    "rel_subopt",
    "stabilized",
    "err_A",
    "err_B",
]

ERROR_SOURCES = {
    "bootstrap": ErrorSource.BOOTSTRAP,
    "oracle": ErrorSource.ORACLE,
    "theory": ErrorSource.THEORY,
    "data-dependent": ErrorSource.DATA,
}

_FIR = re.compile(r"^fir\((\d+)(,\s*v0)?\)$")
_FIXED = re.compile(r"^fixed-gamma\(([^)]+)\)(?::fir\((\d+)(,\s*v0)?\))?$")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MethodSpec:
    """One synthesis method of the grid, parsed from its config string.

    ``fir(L,v0)`` pins the FIR slack block to zero instead of optimizing it.
    """

    program: str
    L: int | None = None
    fixed_gamma: float | None = None
    zero_slack: bool = False

    @classmethod
    def parse(cls, text: str) -> "MethodSpec":
        text = text.strip()
        if text in ("nominal", "cl"):
            return cls(text)
        match = _FIR.match(text)
        if match:
            return cls("fir", L=int(match.group(1)), zero_slack=bool(match.group(2)))
        match = _FIXED.match(text)
        if match:
            try:
                gamma = float(match.group(1))
            except ValueError:
                raise ValueError(f"bad gamma in method {text!r}") from None
            if not 0 < gamma < 1:
                raise ValueError(f"fixed gamma must lie in (0, 1), got {gamma}")
            L = match.group(2)
            return cls(
                "fir" if L else "cl", L=int(L) if L else None, fixed_gamma=gamma, zero_slack=bool(match.group(3))
            )
        raise ValueError(
            f"unknown method {text!r}; use nominal, cl, fir(L), fir(L,v0), fixed-gamma(g) or fixed-gamma(g):fir(L)"
        )

    def __post_init__(self) -> None:
        if self.program == "fir" and (self.L is None or self.L < 1):
            raise ValueError("fir methods need a length L >= 1")
        if self.zero_slack and self.program != "fir":
            raise ValueError("only fir methods take the v0 flag")

    @property
    def label(self) -> str:
        if self.program == "fir":
            base = fir_label(self.L, self.zero_slack)
        else:
            base = self.program
        if self.fixed_gamma is None:
            return base
        prefix = f"fixed-gamma({self.fixed_gamma:g})"
        return prefix if self.program == "cl" else f"{prefix}:{base}"

    def synthesize(self, est: EstimateWithError, cost: CostWeights) -> SynthesisResult:
        if self.program == "nominal":
            return nominal_lqr(est, cost)
        search = GammaSearch() if self.fixed_gamma is None else GammaSearch.fixed_at(self.fixed_gamma)
        if self.program == "cl":
            return cl_synthesis(est, cost, search)
        return fir_synthesis(est, cost, self.L, search, zero_slack=self.zero_slack)


@dataclass(frozen=True)
class ExperimentConfig:
    system: LinearSystem
    cost: CostWeights
    noise: NoiseSpec
    rollout_counts: tuple[int, ...]
    horizons: tuple[int, ...] = (6,)
    bootstrap_trials: int = 500
    delta: float = 0.05
    methods: tuple[MethodSpec, ...] = (MethodSpec("nominal"),)
    error_sources: tuple[str, ...] = ("bootstrap",)
    trials: int = 1
    seed: int = 0
    output_dir: Path | None = None
    system_label: str = "explicit"

    def __post_init__(self) -> None:
        if not self.rollout_counts or not self.horizons or not self.methods or not self.error_sources:
            raise DimensionError("rollout counts, horizons, methods and error sources must all be non-empty")
        if min(self.rollout_counts) < 1 or min(self.horizons) < 1 or self.trials < 1 or self.bootstrap_trials < 1:
            raise DimensionError("counts, horizons, trials and bootstrap trials must be positive")
        if not 0 < self.delta < 1:
            raise DimensionError(f"delta must lie in (0, 1), got {self.delta}")
        unknown = set(self.error_sources) - set(ERROR_SOURCES)
        if unknown:
            raise DimensionError(f"unknown error sources {sorted(unknown)}")
        self.cost.check_compatible(self.system)

    @classmethod
    def laplacian(cls, rollout_counts, **overrides) -> "ExperimentConfig":
        system, cost, noise = laplacian_example()
        overrides.setdefault("cost", cost)
        overrides.setdefault("noise", noise)
        return cls(system, rollout_counts=tuple(rollout_counts), system_label=LAPLACIAN_EXAMPLE, **overrides)

    def to_dict(self) -> dict:
        system = LAPLACIAN_EXAMPLE if self.system_label == LAPLACIAN_EXAMPLE else self.system.to_dict()
        return {
            "schema_version": CONFIG_SCHEMA_VERSION,
            "system": system,
            "cost": self.cost.to_dict(),
            "noise": self.noise.to_dict(),
            "rollout_counts": list(self.rollout_counts),
            "horizons": list(self.horizons),
            "bootstrap_trials": self.bootstrap_trials,
            "delta": self.delta,
            "methods": [method.label for method in self.methods],
            "error_sources": list(self.error_sources),
            "trials": self.trials,
            "seed": self.seed,
        }

    @property
    def run_id(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:12]

    def cells(self) -> list[tuple[int, int, int]]:
        return [(N, T, trial) for T in self.horizons for N in self.rollout_counts for trial in range(self.trials)]


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResultRow:
    run_id: str
    N: int
    T: int
    trial: int
    method: str
    eps_A_source: str
    eps_A: float
    eps_B: float
    status: str
    gamma: float
    alpha: float
    nominal_cost: float
    true_cost: float
    J_star: float
    rel_subopt: float
    stabilized: bool
    err_A: float
    err_B: float

    def as_csv_row(self) -> list[str]:
        return [_format(getattr(self, column)) for column in RESULT_COLUMNS]


def _format(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


@dataclass
class CellOutcome:
    rows: list[ResultRow] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)
    hard_failure: str | None = None


@dataclass
class ExperimentResult:
    run_id: str
    rows: list[ResultRow]
    errors: list[str]
    hard_failures: list[str]
    csv_path: Path | None = None

    @property
    def ok(self) -> bool:
        return not self.hard_failures


# ---------------------------------------------------------------------------
# Cells
# ---------------------------------------------------------------------------


def cell_seeds(seed: int, N: int, T: int, trial: int) -> tuple[int, int]:
    """Independent data and bootstrap seeds for one (N, T, trial) cell."""

    data_seed, bootstrap_seed = np.random.SeedSequence([seed, N, trial, T]).generate_state(2)
    return int(data_seed), int(bootstrap_seed)


def _error_radii(cfg: ExperimentConfig, source: str, data, estimate, truth, bootstrap_seed: int) -> EstimateWithError:
    A_hat, B_hat = estimate
    if source == "oracle":
        eps_A, eps_B = truth
    elif source == "bootstrap":
        result = bootstrap_errors(
            data,
            estimate,
            BootstrapConfig(trials=cfg.bootstrap_trials, delta=cfg.delta, seed=bootstrap_seed, noise=cfg.noise),
            n_jobs=1,
        )
        eps_A, eps_B = result.eps_A, result.eps_B
    elif source == "theory":
        lambda_G = gramians(cfg.system, cfg.noise, data.T).lambda_G
        eps_A, eps_B = theory_bound_independent(lambda_G, data.n, data.p, data.N, cfg.delta, cfg.noise)
    else:
        samples = RegressionMatrices.from_rollouts(data, RegressionMode.LAST_SAMPLE)
        bound = data_dependent_bound(samples, cfg.delta, cfg.noise.sigma_w)
        eps_A, eps_B = bound.eps_A, bound.eps_B
    return EstimateWithError(A_hat, B_hat, eps_A, eps_B, ERROR_SOURCES[source])


def run_cell(cfg: ExperimentConfig, N: int, T: int, trial: int, J_star: float) -> CellOutcome:
    """Simulate, estimate, bound and synthesize for one cell; module errors become rows, not exceptions."""

    outcome = CellOutcome()
    run_id = cfg.run_id
    try:
        data_seed, bootstrap_seed = cell_seeds(cfg.seed, N, T, trial)
        data = simulate_rollouts(cfg.system, cfg.noise, N, T, data_seed, record_noise=False, n_jobs=1)
        estimates = {}
        for source in cfg.error_sources:
            mode = RegressionMode.FULL if source in ("bootstrap", "oracle") else RegressionMode.LAST_SAMPLE
            if mode not in estimates:
                try:
                    estimates[mode] = ls_estimate(data, mode)
                except CoarseIdError as exc:
                    estimates[mode] = exc
            base = {"run_id": run_id, "N": N, "T": T, "trial": trial, "eps_A_source": ERROR_SOURCES[source].value}
            estimate = estimates[mode]
            if isinstance(estimate, CoarseIdError):
                outcome.errors.append(f"N={N} T={T} trial={trial} {source}: {estimate}")
                outcome.rows.extend(_error_row(base, method.label, (math.nan, math.nan), J_star) for method in cfg.methods)
                continue
            truth = true_errors(cfg.system, *estimate)
            try:
                est = _error_radii(cfg, source, data, estimate, truth, bootstrap_seed)
            except CoarseIdError as exc:
                outcome.errors.append(f"N={N} T={T} trial={trial} {source}: {exc}")
                outcome.rows.extend(_error_row(base, method.label, truth, J_star) for method in cfg.methods)
                continue
            for method in cfg.methods:
                outcome.rows.append(_method_row(cfg, base, method, est, truth, J_star, outcome))
    except Exception as exc:  # noqa: BLE001
        logger.exception("cell N=%d T=%d trial=%d failed", N, T, trial)
        outcome.hard_failure = f"N={N} T={T} trial={trial}: {type(exc).__name__}: {exc}"
    return outcome


def _error_row(base: dict, method: str, truth: tuple[float, float], J_star: float) -> ResultRow:
    return ResultRow(
        method=method,
        eps_A=math.nan,
        eps_B=math.nan,
        status="error",
        gamma=math.nan,
        alpha=math.nan,
        nominal_cost=math.nan,
        true_cost=math.nan,
        J_star=J_star,
        rel_subopt=math.nan,
        stabilized=False,
        err_A=truth[0],
        err_B=truth[1],
        **base,
    )


def _method_row(
    cfg: ExperimentConfig,
    base: dict,
    method: MethodSpec,
    est: EstimateWithError,
    truth: tuple[float, float],
    J_star: float,
    outcome: CellOutcome,
) -> ResultRow:
    try:
        result = method.synthesize(est, cfg.cost)
    except CoarseIdError as exc:
        outcome.errors.append(f"N={base['N']} T={base['T']} trial={base['trial']} {method.label}: {exc}")
        row = _error_row(base, method.label, truth, J_star)
        return replace(row, eps_A=est.eps_A, eps_B=est.eps_B)

    if result.realization is not None:
        stabilized = is_stabilizing(cfg.system, result.realization)
        true_cost = closed_loop_cost(cfg.system, result.realization, cfg.cost, cfg.noise.sigma_w)
    else:
        stabilized, true_cost = False, math.inf
    rel_subopt = (true_cost - J_star) / J_star if math.isfinite(true_cost) else math.inf
    nominal = result.nominal_cost * cfg.noise.sigma_w**2 if math.isfinite(result.nominal_cost) else result.nominal_cost
    return ResultRow(
        method=method.label,
        eps_A=est.eps_A,
        eps_B=est.eps_B,
        status=result.status.value,
        gamma=result.gamma_star,
        alpha=result.alpha,
        nominal_cost=nominal,
        true_cost=true_cost,
        J_star=J_star,
        rel_subopt=rel_subopt,
        stabilized=stabilized,
        err_A=truth[0],
        err_B=truth[1],
        **base,
    )


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------


class ResultWriter:
    """Single writer for the result CSV; rows land in a temporary file that replaces the target on close."""

    def __init__(self, path: Path) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        handle, self._temporary = tempfile.mkstemp(dir=self.path.parent, prefix=f".{self.path.name}.", suffix=".tmp")
        self._file = os.fdopen(handle, "w", newline="")
        self._writer = csv.writer(self._file, lineterminator="\n")
        self._writer.writerow(RESULT_COLUMNS)

    def write(self, rows: list[ResultRow]) -> None:
        self._writer.writerows(row.as_csv_row() for row in rows)
        self._file.flush()

    def close(self) -> Path:
        self._file.close()
        os.replace(self._temporary, self.path)
        return self.path

    def abort(self) -> None:
        self._file.close()
        Path(self._temporary).unlink(missing_ok=True)


def optimal_cost(cfg: ExperimentConfig) -> float:
    return dare_lqr(cfg.system, cfg.cost).J_per_sigma * cfg.noise.sigma_w**2


def run_experiment(cfg: ExperimentConfig, *, n_jobs: int | None = None, csv_path: Path | str | None = None) -> ExperimentResult:
    """Run every (N, T, trial) cell of the grid and collect one row per (error source, method)."""

    J_star = optimal_cost(cfg)
    cells = cfg.cells()
    n_jobs = n_jobs or toolkit_setting("POOL_SIZE")
    logger.info("experiment %s: %d cells, %d methods, pool of %d", cfg.run_id, len(cells), len(cfg.methods), n_jobs)

    if n_jobs > 1:
        outcomes = Parallel(n_jobs=n_jobs, return_as="generator")(
            delayed(run_cell)(cfg, N, T, trial, J_star) for N, T, trial in cells
        )
    else:
        outcomes = (run_cell(cfg, N, T, trial, J_star) for N, T, trial in cells)

    writer = ResultWriter(Path(csv_path)) if csv_path is not None else None
    rows: list[ResultRow] = []
    errors: list[str] = []
    hard: list[str] = []
    try:
        for (N, T, trial), outcome in zip(cells, outcomes):
            rows.extend(outcome.rows)
            errors.extend(outcome.errors)
            if outcome.hard_failure:
                hard.append(outcome.hard_failure)
            if writer is not None:
                writer.write(outcome.rows)
            logger.info("cell N=%d T=%d trial=%d done (%d rows)", N, T, trial, len(outcome.rows))
    except BaseException:
        if writer is not None:
            writer.abort()
        raise
    written = writer.close() if writer is not None else None
    if written is not None:
        logger.info("wrote %s", written)
    return ExperimentResult(cfg.run_id, rows, errors, hard, written)


__all__ = [
    "CONFIG_SCHEMA_VERSION",
    "LAPLACIAN_EXAMPLE",
    "RESULT_COLUMNS",
    "ERROR_SOURCES",
    "MethodSpec",
    "ExperimentConfig",
    "ResultRow",
    "CellOutcome",
    "ExperimentResult",
    "cell_seeds",
    "run_cell",
    "ResultWriter",
    "optimal_cost",
    "run_experiment",
]
