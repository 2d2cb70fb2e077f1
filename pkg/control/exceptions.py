from __future__ import annotations

from typing import Iterable


class CoarseIdError(Exception):
    """Base class for every failure raised by the control services."""


class DimensionError(CoarseIdError, ValueError):
    """Shapes disagree, a matrix is not square, or entries are not finite."""


class UnstableSystemError(CoarseIdError, ValueError):
    def __init__(self, message: str, spectral_radius: float) -> None:
        super().__init__(f"{message} (spectral radius {spectral_radius:.6g})")
        self.spectral_radius = spectral_radius


class NotStabilizableError(CoarseIdError):
    """The Riccati iteration diverged or produced a non-stabilizing gain."""


class ConvergenceError(CoarseIdError):
    pass


class RankDeficientError(CoarseIdError, ValueError):
    def __init__(self, message: str, rank: int, required: int) -> None:
        super().__init__(f"{message}: rank {rank} < required {required}")
        self.rank = rank
        self.required = required


class PreconditionError(CoarseIdError, ValueError):
    """A closed-form bound is used outside its validity range; ``required`` and ``actual`` say by how much."""

    def __init__(self, message: str, required: float, actual: float) -> None:
        super().__init__(f"{message} (required {required:.6g}, got {actual:.6g})")
        self.required = required
        self.actual = actual


class SolverError(CoarseIdError):
    def __init__(self, message: str, status: str, gammas: Iterable[float] = ()) -> None:
        self.status = status
        self.gammas = tuple(gammas)
        detail = f" at gamma in {[round(g, 6) for g in self.gammas]}" if self.gammas else ""
        super().__init__(f"{message} [{status}]{detail}")
