from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..conf import toolkit_setting
from ..exceptions import CoarseIdError, DimensionError, PreconditionError, SolverError, UnstableSystemError
from .conic import Affine, ConicProgram, ConicSolution, ConicStatus, bmat, hstack, solve_conic, vstack
from .lti import (
    CostWeights,
    DecayEnvelope,
    LinearSystem,
    NoiseSpec,
    StateFeedbackGain,
    StateSpace,
    dare_lqr,
    dlyap,
    gramians,
    hinf_norm_lti,
    is_stable,
    spectral_radius,
)
from .sysid import EstimateWithError

logger = logging.getLogger(__name__)

GAMMA_UPPER = 1 - 1e-4
GAMMA_TOL = 1e-3
FIXED_GAMMA = 0.999
GAIN_EXTRACTION_TOL = 1e-8
ALPHA_EDGE = 1e-6
INV_GOLDEN = (math.sqrt(5) - 1) / 2


class SynthesisStatus(str, enum.Enum):
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    NUMERICAL_FAILURE = "numerical-failure"


# ---------------------------------------------------------------------------
# Search options
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GammaSearch:
    """Bracket and tolerance of the outer search; ``fixed`` pins gamma instead."""

    lower: float = 0.0
    upper: float = GAMMA_UPPER
    tol: float = GAMMA_TOL
    fixed: float | None = None

    def __post_init__(self) -> None:
        if not 0 <= self.lower < self.upper < 1:
            raise DimensionError(f"gamma bracket must satisfy 0 <= lower < upper < 1, got [{self.lower}, {self.upper}]")
        if self.fixed is not None and not 0 < self.fixed < 1:
            raise DimensionError(f"fixed gamma must lie in (0, 1), got {self.fixed}")

    @classmethod
    def fixed_at(cls, gamma: float = FIXED_GAMMA) -> "GammaSearch":
        return cls(fixed=gamma)


@dataclass(frozen=True)
class AlphaSearch:
    """Both programs keep alpha as a decision variable unless it is pinned here."""

    fixed: float | None = None

    def __post_init__(self) -> None:
        if self.fixed is not None and not 0 < self.fixed < 1:
            raise DimensionError(f"alpha must lie in (0, 1), got {self.fixed}")


# ---------------------------------------------------------------------------
# Responses and controllers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FirResponse:
    """Coefficients Phi_x(1..L), Phi_u(1..L) and the slack block V."""

    phi_x: np.ndarray
    phi_u: np.ndarray
    V: np.ndarray

    def __post_init__(self) -> None:
        phi_x = np.asarray(self.phi_x, dtype=float)
        phi_u = np.asarray(self.phi_u, dtype=float)
        V = np.atleast_2d(np.asarray(self.V, dtype=float))
        if phi_x.ndim != 3 or phi_u.ndim != 3 or phi_x.shape[0] < 1:
            raise DimensionError("responses must be (L, rows, n) stacks with L >= 1")
        L, n, _ = phi_x.shape
        if phi_x.shape != (L, n, n) or phi_u.shape[0] != L or phi_u.shape[2] != n or V.shape != (n, n):
            raise DimensionError(f"inconsistent response shapes {phi_x.shape}, {phi_u.shape}, {V.shape}")
        if not (np.all(np.isfinite(phi_x)) and np.all(np.isfinite(phi_u)) and np.all(np.isfinite(V))):
            raise DimensionError("response blocks must be finite")
        object.__setattr__(self, "phi_x", phi_x)
        object.__setattr__(self, "phi_u", phi_u)
        object.__setattr__(self, "V", V)

    @property
    def L(self) -> int:
        return self.phi_x.shape[0]

    @property
    def n(self) -> int:
        return self.phi_x.shape[1]

    @property
    def p(self) -> int:
        return self.phi_u.shape[1]

    def starts_at_identity(self, atol: float = 1e-6) -> bool:
        return bool(np.allclose(self.phi_x[0], np.eye(self.n), atol=atol))

    @classmethod
    def from_static_gain(cls, system: LinearSystem, gain: StateFeedbackGain, L: int) -> "FirResponse":
        """Truncated response of u = Kx; the slack V is minus the L-th closed-loop power."""

        closed = system.closed_loop(gain)
        powers = [np.eye(system.n)]
        for _ in range(L - 1):
            powers.append(closed @ powers[-1])
        phi_x = np.stack(powers)
        phi_u = np.stack([gain.K @ block for block in powers])
        return cls(phi_x, phi_u, -(closed @ powers[-1]))

    def stacked_coefficients(self, eps_A: float, eps_B: float, alpha: float) -> list[np.ndarray]:
        scale_x = eps_A / math.sqrt(alpha)
        scale_u = eps_B / math.sqrt(1 - alpha)
        return [np.vstack([scale_x * self.phi_x[k], scale_u * self.phi_u[k]]) for k in range(self.L)]

    def h2_squared(self, cost: CostWeights) -> float:
        Q_half, R_half = cost.Q_half, cost.R_half
        return float(
            sum(np.sum((Q_half @ self.phi_x[k]) ** 2) + np.sum((R_half @ self.phi_u[k]) ** 2) for k in range(self.L))
        )

    def to_dict(self) -> dict:
        return {"L": self.L, "phi_x": self.phi_x.tolist(), "phi_u": self.phi_u.tolist(), "V": self.V.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "FirResponse":
        return cls(data["phi_x"], data["phi_u"], data["V"])


@dataclass(frozen=True)
class RealizedController:
    """xi_{t+1} = A_K xi_t + B_K x_t,  u_t = C_K xi_t + D_K x_t."""

    A_K: np.ndarray
    B_K: np.ndarray
    C_K: np.ndarray
    D_K: np.ndarray
    L: int = 1

    @property
    def n(self) -> int:
        return self.D_K.shape[1]

    @property
    def p(self) -> int:
        return self.D_K.shape[0]

    @property
    def state_dim(self) -> int:
        return self.A_K.shape[0]

    @classmethod
    def from_static_gain(cls, gain: StateFeedbackGain | np.ndarray) -> "RealizedController":
        K = gain.K if isinstance(gain, StateFeedbackGain) else np.atleast_2d(np.asarray(gain, dtype=float))
        p, n = K.shape
        return cls(np.zeros((0, 0)), np.zeros((0, n)), np.zeros((p, 0)), K.copy(), 1)

    def closed_loop_matrix(self, system: LinearSystem) -> np.ndarray:
        if system.n != self.n or system.p != self.p:
            raise DimensionError(f"controller ({self.n}, {self.p}) does not fit system ({system.n}, {system.p})")
        top_left = system.A + system.B @ self.D_K
        if self.state_dim == 0:
            return top_left
        return np.block([[top_left, system.B @ self.C_K], [self.B_K, self.A_K]])

    def simulate(self, system: LinearSystem, noises: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Closed-loop states x_0..x_T and inputs u_0..u_{T-1} from zero initial state."""

        T = noises.shape[0]
        states = np.zeros((T + 1, system.n))
        inputs = np.zeros((T, system.p))
        xi = np.zeros(self.state_dim)
        for t in range(T):
            x = states[t]
            inputs[t] = self.C_K @ xi + self.D_K @ x
            xi = self.A_K @ xi + self.B_K @ x
            states[t + 1] = system.A @ x + system.B @ inputs[t] + noises[t]
        return states, inputs

    def to_dict(self) -> dict:
        return {
            "L": self.L,
            "A_K": self.A_K.tolist(),
            "B_K": self.B_K.tolist(),
            "C_K": self.C_K.tolist(),
            "D_K": self.D_K.tolist(),
        }


Controller = StateFeedbackGain | FirResponse | RealizedController


def realize_controller(resp: FirResponse) -> RealizedController:
    """Innovation-form realization; the internal state holds the last L - 1 innovations."""

    if not resp.starts_at_identity():
        raise DimensionError("Phi_x(1) must be the identity to realize a response")
    n, p, L = resp.n, resp.p, resp.L
    if L == 1:
        return RealizedController.from_static_gain(resp.phi_u[0])
    H_x = np.hstack(list(resp.phi_x[1:]))
    H_u = np.hstack(list(resp.phi_u[1:]))
    size = n * (L - 1)
    shift = np.zeros((size, size))
    shift[n:, :-n] = np.eye(size - n)
    first = np.zeros((size, n))
    first[:n] = np.eye(n)
    return RealizedController(
        A_K=shift - first @ H_x,
        B_K=first,
        C_K=H_u - resp.phi_u[0] @ H_x,
        D_K=resp.phi_u[0].copy(),
        L=L,
    )


def as_realization(controller: Controller) -> RealizedController:
    if isinstance(controller, RealizedController):
        return controller
    if isinstance(controller, FirResponse):
        return realize_controller(controller)
    return RealizedController.from_static_gain(controller)


def closed_loop_cost(system: LinearSystem, controller: Controller, cost: CostWeights, sigma_w: float = 1.0) -> float:
    """Average LQR cost of any realized controller; ``math.inf`` when the loop is unstable."""

    realized = as_realization(controller)
    A_cl = realized.closed_loop_matrix(system)
    if not is_stable(A_cl):
        return math.inf
    size = A_cl.shape[0]
    E = np.zeros((size, system.n))
    E[: system.n] = np.eye(system.n)
    covariance = dlyap(A_cl, E @ E.T)
    state_map = E.T
    input_map = np.hstack([realized.D_K, realized.C_K])
    value = np.trace(cost.Q @ state_map @ covariance @ state_map.T) + np.trace(
        cost.R @ input_map @ covariance @ input_map.T
    )
    return float(sigma_w**2 * value)


def is_stabilizing(system: LinearSystem, controller: Controller) -> bool:
    return is_stable(as_realization(controller).closed_loop_matrix(system))


# ---------------------------------------------------------------------------
# Robustness certificates
# ---------------------------------------------------------------------------


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0 < alpha < 1:
        raise DimensionError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha


def halpha(resp: FirResponse, eps_A: float, eps_B: float, alpha: float) -> float:
    """H-infinity norm of the weighted FIR stack [eps_A/sqrt(a) Phi_x; eps_B/sqrt(1-a) Phi_u]."""

    alpha = _check_alpha(alpha)
    if eps_A == 0 and eps_B == 0:
        return 0.0
    return hinf_norm_lti(StateSpace.fir(resp.stacked_coefficients(eps_A, eps_B, alpha)))


def closed_loop_halpha(system: LinearSystem, controller: Controller, eps_A: float, eps_B: float, alpha: float) -> float:
    """Same weighted norm, evaluated on the response the controller actually produces on ``system``."""

    alpha = _check_alpha(alpha)
    if eps_A == 0 and eps_B == 0:
        return 0.0
    realized = as_realization(controller)
    A_cl = realized.closed_loop_matrix(system)
    size = A_cl.shape[0]
    E = np.zeros((size, system.n))
    E[: system.n] = np.eye(system.n)
    outputs = np.vstack(
        [
            eps_A / math.sqrt(alpha) * E.T,
            eps_B / math.sqrt(1 - alpha) * np.hstack([realized.D_K, realized.C_K]),
        ]
    )
    return hinf_norm_lti(StateSpace(A_cl, E, outputs, np.zeros((outputs.shape[0], system.n))))


@dataclass(frozen=True)
class Certificate:
    """Outcome of the small-gain check.

    ``cost_upper_bound`` is in squared-cost units (compare with
    ``lqr_cost_closed_loop``); ``h2_upper_bound`` is its square root.
    """

    certified: bool
    h_value: float
    alpha: float
    nominal_cost: float
    cost_upper_bound: float
    h2_upper_bound: float

    def to_dict(self) -> dict:
        return {
            "certified": self.certified,
            "h_value": self.h_value,
            "alpha": self.alpha,
            "nominal_cost": self.nominal_cost,
            "cost_upper_bound": self.cost_upper_bound,
            "h2_upper_bound": self.h2_upper_bound,
        }


def golden_section_search(
    func: Callable[[float], float], lower: float, upper: float, tol: float
) -> tuple[float, float, dict[float, float]]:
    """Minimize a quasi-convex function; +inf marks points outside the feasible set.

    Infeasibility is assumed to sit at the left of the bracket, so when both
    evaluations are infeasible the left part is discarded. Returns the best point
    (ties go to the smaller argument), its value and the cache of every evaluation.
    """

    cache: dict[float, float] = {}

    def evaluate(x: float) -> float:
        if x not in cache:
            cache[x] = func(x)
        return cache[x]

    a, b = lower, upper
    c = b - INV_GOLDEN * (b - a)
    d = a + INV_GOLDEN * (b - a)
    fc, fd = evaluate(c), evaluate(d)
    while b - a > tol:
        if (math.isinf(fc) and math.isinf(fd)) or fc > fd:
            a, c, fc = c, d, fd
            d = a + INV_GOLDEN * (b - a)
            fd = evaluate(d)
        else:
            b, d, fd = d, c, fc
            c = b - INV_GOLDEN * (b - a)
            fc = evaluate(c)
    if all(math.isinf(value) for value in cache.values()):
        evaluate(upper)
    best = min(cache, key=lambda x: (cache[x], x))
    return best, cache[best], cache


def best_alpha(halpha_of: Callable[[float], float], tol: float = 1e-4) -> tuple[float, float]:
    alpha, value, _ = golden_section_search(halpha_of, ALPHA_EDGE, 1 - ALPHA_EDGE, tol)
    return alpha, value


def certify_and_bound(
    system: LinearSystem | None,
    controller: Controller,
    est: EstimateWithError,
    alpha: float | None = 0.5,
    cost: CostWeights | None = None,
    sigma_w: float = 1.0,
) -> Certificate:
    """Small-gain certificate for ``controller`` against the uncertainty ball of ``est``.

    ``system`` is the model the response is computed on and defaults to the
    estimate. ``alpha=None`` searches for the alpha with the smallest norm.
    """

    system = system or est.system
    cost = cost or CostWeights.identity(system.n, system.p)
    realized = as_realization(controller)
    A_cl = realized.closed_loop_matrix(system)
    if not is_stable(A_cl):
        raise UnstableSystemError("controller does not stabilize the nominal model", spectral_radius(A_cl))
    nominal = closed_loop_cost(system, realized, cost, sigma_w)

    if est.eps_A == 0 and est.eps_B == 0:
        h_value, alpha = 0.0, 0.5 if alpha is None else alpha
    elif alpha is None:
        alpha, h_value = best_alpha(lambda a: closed_loop_halpha(system, realized, est.eps_A, est.eps_B, a))
    else:
        h_value = closed_loop_halpha(system, realized, est.eps_A, est.eps_B, alpha)

    certified = h_value < 1
    if certified:
        cost_bound = nominal / (1 - h_value) ** 2
        h2_bound = math.sqrt(nominal) / (1 - h_value)
    else:
        cost_bound = h2_bound = math.inf
    return Certificate(certified, h_value, float(alpha), nominal, cost_bound, h2_bound)


# ---------------------------------------------------------------------------
# Synthesis programs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GammaEvaluation:
    gamma: float
    value: float
    status: str


@dataclass(frozen=True)
class SynthesisResult:
    method: str
    status: SynthesisStatus
    controller: StateFeedbackGain | FirResponse | None = None
    realization: RealizedController | None = None
    gamma_star: float = math.nan
    alpha: float = math.nan
    robust_upper_bound: float = math.inf
    nominal_cost: float = math.inf
    certificate: Certificate | None = None
    evaluations: tuple[GammaEvaluation, ...] = field(default_factory=tuple)
    diagnostics: str = ""

    @property
    def is_feasible(self) -> bool:
        return self.status is SynthesisStatus.FEASIBLE

    def to_dict(self) -> dict:
        if isinstance(self.controller, StateFeedbackGain):
            controller = {"type": "static", "K": self.controller.K.tolist()}
        elif isinstance(self.controller, FirResponse):
            controller = {"type": "fir", **self.controller.to_dict()}
        else:
            controller = None
        return {
            "method": self.method,
            "status": self.status.value,
            "gamma": self.gamma_star,
            "alpha": self.alpha,
            "robust_upper_bound": self.robust_upper_bound,
            "nominal_cost": self.nominal_cost,
            "certificate": None if self.certificate is None else self.certificate.to_dict(),
            "controller": controller,
            "realization": None if self.realization is None else self.realization.to_dict(),
            "evaluations": [[e.gamma, e.value, e.status] for e in self.evaluations],
            "diagnostics": self.diagnostics,
        }


@dataclass
class _Point:
    """Inner solve at one gamma: the value the search compares and the solution behind it."""

    value: float
    solution: ConicSolution | None
    extras: dict = field(default_factory=dict)


class _GammaSearchRunner:
    """Runs the outer gamma search over an inner program builder and keeps every point."""

    def __init__(self, name: str, inner: Callable[[float], _Point]) -> None:
        self.name = name
        self.inner = inner
        self.points: dict[float, _Point] = {}

    def evaluate(self, gamma: float) -> float:
        try:
            point = self.inner(gamma)
        except CoarseIdError as exc:
            logger.warning("%s: gamma=%.6g failed (%s); treated as infeasible", self.name, gamma, exc)
            point = _Point(math.inf, None, {"status": ConicStatus.NUMERICAL_FAILURE.value})
        self.points[gamma] = point
        logger.debug("%s: gamma=%.6g value=%.6g", self.name, gamma, point.value)
        return point.value

    def run(self, search: GammaSearch, only_zero: bool = False) -> tuple[float, _Point]:
        if search.fixed is not None:
            gamma = search.fixed
            self.evaluate(gamma)
        elif only_zero:
            gamma = 0.0
            self.evaluate(gamma)
        else:
            gamma, _, _ = golden_section_search(self.evaluate, search.lower, search.upper, search.tol)
        return gamma, self.points[gamma]

    def history(self) -> tuple[GammaEvaluation, ...]:
        return tuple(
            GammaEvaluation(gamma, point.value, point.extras.get("status", "optimal"))
            for gamma, point in sorted(self.points.items())
        )

    def failed_gammas(self) -> list[float]:
        return [g for g, point in self.points.items() if point.extras.get("status") == ConicStatus.NUMERICAL_FAILURE.value]


def _point_from(solution: ConicSolution, value: float, **extras) -> _Point:
    if solution.status is ConicStatus.OPTIMAL:
        return _Point(value, solution, {"status": solution.status.value, **extras})
    if solution.status is ConicStatus.NUMERICAL_FAILURE:
        logger.warning("inner program reported a numerical failure: %s", solution.diagnostics)
    return _Point(math.inf, None, {"status": solution.status.value})


def _finish(
    method: str,
    est: EstimateWithError,
    cost: CostWeights,
    runner: _GammaSearchRunner,
    gamma: float,
    point: _Point,
    controller: StateFeedbackGain | FirResponse | None,
    alpha: float,
    bound: float,
) -> SynthesisResult:
    history = runner.history()
    if controller is None:
        return SynthesisResult(method, SynthesisStatus.NUMERICAL_FAILURE, gamma_star=gamma, alpha=alpha,
                               evaluations=history, diagnostics=point.extras.get("diagnostics", ""))
    realization = as_realization(controller)
    try:
        certificate = certify_and_bound(est.system, realization, est, alpha, cost)
        if not certificate.certified and (est.eps_A > 0 and est.eps_B > 0):
            certificate = certify_and_bound(est.system, realization, est, None, cost)
    except UnstableSystemError as exc:
        return SynthesisResult(method, SynthesisStatus.NUMERICAL_FAILURE, controller, realization, gamma, alpha,
                               bound, math.inf, None, history, f"solution fails the stability check: {exc}")
    status = SynthesisStatus.FEASIBLE if certificate.certified else SynthesisStatus.NUMERICAL_FAILURE
    diagnostics = "" if certificate.certified else f"post-hoc norm {certificate.h_value:.6g} >= 1"
    return SynthesisResult(method, status, controller, realization, gamma, alpha, bound,
                           certificate.nominal_cost, certificate, history, diagnostics)


def _clip_alpha(alpha: float) -> float:
    return min(max(float(alpha), ALPHA_EDGE), 1 - ALPHA_EDGE)


def _common_lyapunov_program(
    est: EstimateWithError, cost: CostWeights, gamma: float, alpha_fixed: float | None
) -> tuple[ConicProgram, dict[str, Affine]]:
    n, p = est.n, est.p
    A, B = est.A_hat, est.B_hat
    prog = ConicProgram(f"common-lyapunov[gamma={gamma:.6g}]")
    X = prog.variable("X", n, symmetric=True)
    Z = prog.variable("Z", (p, n))
    W = prog.variable("W", n + p, symmetric=True)
    W11, W12, W21, W22 = W[:n, :n], W[:n, n:], W[n:, :n], W[n:, n:]
    prog.add_psd(bmat([[X, X, Z.T], [X, W11, W12], [Z, W21, W22]]), "h2-gramian")

    robust_terms = []
    if est.eps_A > 0:
        robust_terms.append(("A", est.eps_A * X, n))
    if est.eps_B > 0:
        robust_terms.append(("B", est.eps_B * Z.T, p))
    alpha = None
    if alpha_fixed is None and robust_terms:
        alpha = prog.variable("alpha")
        prog.add_nonneg(alpha, "alpha-lower")
        prog.add_nonneg(1 - alpha, "alpha-upper")
        shares = {"A": alpha, "B": 1 - alpha}
    else:
        share = 0.5 if alpha_fixed is None else alpha_fixed
        shares = {"A": Affine.of(share), "B": Affine.of(1 - share)}

    closed = A @ X + B @ Z
    count = len(robust_terms)
    rows = [
        [X - np.eye(n), closed] + [None] * count,
        [closed.T, X] + [block for _, block, _ in robust_terms],
    ]
    for index, (which, block, size) in enumerate(robust_terms):
        row = [None, block.T] + [None] * count
        row[2 + index] = shares[which] * (gamma**2 * np.eye(size))
        rows.append(row)
    prog.add_psd(bmat(rows), "hinf-lyapunov")
    prog.minimize((cost.Q @ W11).trace() + (cost.R @ W22).trace())
    handles = {"X": X, "Z": Z}
    if alpha is not None:
        handles["alpha"] = alpha
    return prog, handles


def cl_synthesis(
    est: EstimateWithError,
    cost: CostWeights,
    gamma_search: GammaSearch | None = None,
    alpha_search: AlphaSearch | None = None,
    *,
    backend=None,
    tol: float | None = None,
) -> SynthesisResult:
    """Static robust gain from the common-Lyapunov relaxation, K = Z X^{-1}."""

    gamma_search = gamma_search or GammaSearch()
    alpha_search = alpha_search or AlphaSearch()
    cost.check_compatible(est.system)
    tol = toolkit_setting("SYNTHESIS_TOL") if tol is None else tol
    method = "cl" if gamma_search.fixed is None else f"fixed-gamma({gamma_search.fixed:g})"

    def inner(gamma: float) -> _Point:
        prog, handles = _common_lyapunov_program(est, cost, gamma, alpha_search.fixed)
        solution = solve_conic(prog, tol, backend)
        if not solution.is_optimal:
            return _point_from(solution, math.inf)
        value = solution.objective if gamma_search.fixed is not None else solution.objective / (1 - gamma) ** 2
        return _point_from(solution, value, objective=solution.objective, handles=handles)

    runner = _GammaSearchRunner(method, inner)
    nominal_only = est.eps_A == 0 and est.eps_B == 0
    gamma, point = runner.run(gamma_search, only_zero=nominal_only)
    if point.solution is None:
        failed = runner.failed_gammas()
        if failed and len(failed) == len(runner.points):
            raise SolverError("common-Lyapunov program failed at every gamma", ConicStatus.NUMERICAL_FAILURE.value, failed)
        return SynthesisResult(method, SynthesisStatus.INFEASIBLE, evaluations=runner.history(),
                               diagnostics="no gamma in the bracket admits a solution")

    solution, handles = point.solution, point.extras["handles"]
    X, Z = solution.value(handles["X"]), solution.value(handles["Z"])
    alpha = alpha_search.fixed if alpha_search.fixed is not None else (
        _clip_alpha(solution.value(handles["alpha"])[0, 0]) if "alpha" in handles else 0.5
    )
    bound = point.extras["objective"] / (1 - gamma) ** 2
    if np.linalg.eigvalsh((X + X.T) / 2).min() <= GAIN_EXTRACTION_TOL:
        point.extras["diagnostics"] = "X is too close to singular to extract a gain"
        return _finish(method, est, cost, runner, gamma, point, None, alpha, bound)
    K = np.linalg.solve(X, Z.T).T
    return _finish(method, est, cost, runner, gamma, point, StateFeedbackGain(K), alpha, bound)


def _shift_register(n: int, L: int) -> tuple[np.ndarray, np.ndarray]:
    size = n * L
    A = np.zeros((size, size))
    if L > 1:
        A[n:, :-n] = np.eye(size - n)
    B = np.zeros((size, n))
    B[:n] = np.eye(n)
    return A, B


def _fir_program(
    est: EstimateWithError,
    cost: CostWeights,
    L: int,
    gamma: float,
    alpha_fixed: float | None,
    zero_slack: bool,
) -> tuple[ConicProgram, dict]:
    n, p = est.n, est.p
    A, B = est.A_hat, est.B_hat
    prog = ConicProgram(f"fir[L={L},gamma={gamma:.6g}]")
    phi_x = [prog.variable(f"phi_x{k + 1}", (n, n)) for k in range(L)]
    phi_u = [prog.variable(f"phi_u{k + 1}", (p, n)) for k in range(L)]
    V = prog.variable("V", (n, n))

    prog.add_equality(phi_x[0], np.eye(n), "phi_x1")
    for k in range(L - 1):
        prog.add_equality(phi_x[k + 1], A @ phi_x[k] + B @ phi_u[k], f"response{k + 2}")
    prog.add_equality(V, -(A @ phi_x[-1] + B @ phi_u[-1]), "slack")

    t = prog.variable("t")
    Q_half, R_half = cost.Q_half, cost.R_half
    prog.add_soc(t, vstack([Q_half @ block for block in phi_x] + [R_half @ block for block in phi_u]), "h2")
    prog.minimize(t)

    handles: dict = {"phi_x": phi_x, "phi_u": phi_u, "V": V, "t": t}
    budget = None
    if est.eps_A > 0 or est.eps_B > 0:
        A_sr, B_sr = _shift_register(n, L)
        P = prog.variable("P", n * L, symmetric=True)
        output_rows, weights = [], []
        if est.eps_A > 0:
            a = prog.variable("a")
            prog.add_nonneg(a, "a-nonneg")
            output_rows.append(hstack([est.eps_A * block for block in phi_x]))
            weights.append(a * np.eye(n))
            handles["a"] = a
        if est.eps_B > 0:
            b = prog.variable("b")
            prog.add_nonneg(b, "b-nonneg")
            output_rows.append(hstack([est.eps_B * block for block in phi_u]))
            weights.append(b * np.eye(p))
            handles["b"] = b
        if "a" in handles and "b" in handles and alpha_fixed is not None:
            prog.add_equality((1 - alpha_fixed) * handles["a"] - alpha_fixed * handles["b"], 0.0, "alpha")
        budget = handles["a"] + handles["b"] if "a" in handles and "b" in handles else handles.get("a", handles.get("b"))
        C_tilde = vstack(output_rows)
        weight_block = bmat([[w if i == j else None for j, w in enumerate(weights)] for i, w in enumerate(weights)])
        storage = P - A_sr.T @ P @ A_sr
        cross = -(A_sr.T @ P @ B_sr)
        input_block = budget * np.eye(n) - B_sr.T @ P @ B_sr
        prog.add_psd(
            bmat([[storage, cross, C_tilde.T], [cross.T, input_block, None], [C_tilde, None, weight_block]]),
            "bounded-real",
        )

    if zero_slack:
        prog.add_equality(V, 0.0, "zero-slack")
        if budget is not None:
            prog.add_less_equal(budget, gamma, "gamma-split")
    else:
        gamma_V = prog.variable("gamma_V")
        prog.add_psd(bmat([[gamma_V * np.eye(n), V], [V.T, gamma_V * np.eye(n)]]), "slack-norm")
        prog.add_less_equal(gamma_V if budget is None else budget + gamma_V, gamma, "gamma-split")
    return prog, handles


def fir_label(L: int, zero_slack: bool = False) -> str:
    return f"fir({L},v0)" if zero_slack else f"fir({L})"


def fir_synthesis(
    est: EstimateWithError,
    cost: CostWeights,
    L: int,
    gamma_search: GammaSearch | None = None,
    alpha_search: AlphaSearch | None = None,
    *,
    zero_slack: bool = False,
    backend=None,
    tol: float | None = None,
) -> SynthesisResult:
    """Robust FIR response of length L with slack V, realized as a dynamic controller."""

    if L < 1:
        raise DimensionError(f"FIR length must be at least 1, got {L}")
    gamma_search = gamma_search or GammaSearch()
    alpha_search = alpha_search or AlphaSearch()
    cost.check_compatible(est.system)
    tol = toolkit_setting("SYNTHESIS_TOL") if tol is None else tol
    method = fir_label(L, zero_slack)
    if gamma_search.fixed is not None:
        method = f"fixed-gamma({gamma_search.fixed:g}):{method}"

    def inner(gamma: float) -> _Point:
        prog, handles = _fir_program(est, cost, L, gamma, alpha_search.fixed, zero_slack)
        solution = solve_conic(prog, tol, backend)
        if not solution.is_optimal:
            return _point_from(solution, math.inf)
        h2 = solution.objective
        value = h2 if gamma_search.fixed is not None else h2 / (1 - gamma)
        return _point_from(solution, value, objective=h2, handles=handles)

    runner = _GammaSearchRunner(method, inner)
    gamma, point = runner.run(gamma_search)
    if point.solution is None:
        failed = runner.failed_gammas()
        if failed and len(failed) == len(runner.points):
            raise SolverError("FIR program failed at every gamma", ConicStatus.NUMERICAL_FAILURE.value, failed)
        return SynthesisResult(method, SynthesisStatus.INFEASIBLE, evaluations=runner.history(),
                               diagnostics="no gamma in the bracket admits a solution; consider larger L or more data")

    solution, handles = point.solution, point.extras["handles"]
    response = FirResponse(
        np.stack([solution.value(block) for block in handles["phi_x"]]),
        np.stack([solution.value(block) for block in handles["phi_u"]]),
        solution.value(handles["V"]),
    )
    if alpha_search.fixed is not None:
        alpha = alpha_search.fixed
    elif "a" in handles and "b" in handles:
        a, b = solution.value(handles["a"])[0, 0], solution.value(handles["b"])[0, 0]
        alpha = _clip_alpha(a / (a + b)) if a + b > 0 else 0.5
    else:
        alpha = 1 - ALPHA_EDGE if "a" in handles else (ALPHA_EDGE if "b" in handles else 0.5)
    bound = (point.extras["objective"] / (1 - gamma)) ** 2
    return _finish(method, est, cost, runner, gamma, point, response, alpha, bound)


def nominal_lqr(est: EstimateWithError, cost: CostWeights) -> SynthesisResult:
    """Certainty-equivalent Riccati gain on the estimated model."""

    solution = dare_lqr(est.system, cost)
    realization = RealizedController.from_static_gain(solution.K)
    return SynthesisResult(
        "nominal",
        SynthesisStatus.FEASIBLE,
        solution.K,
        realization,
        gamma_star=math.nan,
        alpha=math.nan,
        robust_upper_bound=math.nan,
        nominal_cost=solution.J_per_sigma,
    )


# ---------------------------------------------------------------------------
# Sub-optimality calculators
# ---------------------------------------------------------------------------

ZETA_LIMIT_INFINITE = 0.2


def robustness_margin(eps_A: float, eps_B: float, K_star: StateFeedbackGain | np.ndarray, resolvent_hinf: float) -> float:
    K_norm = K_star.norm if isinstance(K_star, StateFeedbackGain) else float(np.linalg.norm(K_star, 2))
    return (eps_A + eps_B * K_norm) * resolvent_hinf


def fir_horizon_bound(env: DecayEnvelope, zeta: float) -> int:
    """Smallest FIR length the truncated program needs for the given margin."""

    if zeta <= 0:
        raise PreconditionError("margin must be positive", 0.0, zeta)
    if zeta >= env.C:
        return 0
    return math.ceil(4 * math.log(env.C / zeta) / (1 - env.rho))


def suboptimality_calculator(
    eps_A: float,
    eps_B: float,
    K_star: StateFeedbackGain | np.ndarray,
    resolvent_hinf: float,
    which: str = "infinite",
    *,
    envelope: DecayEnvelope | None = None,
    L: int | None = None,
) -> float:
    """Relative cost bound 5 zeta (infinite program) or 10 zeta (FIR program)."""

    if which not in ("infinite", "fir"):
        raise ValueError(f"unknown program {which!r}; use 'infinite' or 'fir'")
    zeta = robustness_margin(eps_A, eps_B, K_star, resolvent_hinf)
    if zeta == 0:
        return 0.0
    if which == "infinite":
        if zeta >= ZETA_LIMIT_INFINITE:
            raise PreconditionError("margin too large for the infinite-horizon bound", ZETA_LIMIT_INFINITE, zeta)
        return 5 * zeta

    if envelope is None:
        raise PreconditionError("the FIR bound needs the decay envelope of the optimal closed loop", 1.0, 0.0)
    K_norm = K_star.norm if isinstance(K_star, StateFeedbackGain) else float(np.linalg.norm(K_star, 2))
    limit = (1 - envelope.rho) / (10 * envelope.C)
    if eps_A + eps_B * K_norm > limit:
        raise PreconditionError("errors too large for the FIR bound", limit, eps_A + eps_B * K_norm)
    if L is not None:
        required = fir_horizon_bound(envelope, zeta)
        if L < required:
            raise PreconditionError("FIR length too short for the FIR bound", required, L)
    return 10 * zeta


def lqr_complexity(system: LinearSystem, cost: CostWeights, noise: NoiseSpec, T: int, C0: float = 1.0) -> float:
    """The problem-dependent constant C_LQR of the end-to-end rate."""

    solution = dare_lqr(system, cost)
    resolvent = hinf_norm_lti(StateSpace.resolvent(system.closed_loop(solution.K)))
    lambda_G = gramians(system, noise, T).lambda_G
    return C0 * noise.sigma_w * (1 / math.sqrt(lambda_G) + solution.K.norm / noise.sigma_u) * resolvent


def end_to_end_bound(
    system: LinearSystem, cost: CostWeights, noise: NoiseSpec, T: int, N: int, delta: float, C0: float = 1.0
) -> float:
    n, p = system.n, system.p
    return lqr_complexity(system, cost, noise, T, C0) * math.sqrt((n + p) * math.log(1 / delta) / N)


def required_rollouts(
    system: LinearSystem, cost: CostWeights, noise: NoiseSpec, T: int, delta: float, C1: float = 1.0
) -> float:
    solution = dare_lqr(system, cost)
    resolvent = hinf_norm_lti(StateSpace.resolvent(system.closed_loop(solution.K)))
    lambda_G = gramians(system, noise, T).lambda_G
    return (
        C1 * (system.n + system.p) * noise.sigma_w**2 * resolvent**2
        * (1 / lambda_G + solution.K.norm**2 / noise.sigma_u**2) * math.log(1 / delta)
    )


__all__ = [
    "SynthesisStatus",
    "GammaSearch",
    "AlphaSearch",
    "FirResponse",
    "RealizedController",
    "Controller",
    "realize_controller",
    "as_realization",
    "closed_loop_cost",
    "is_stabilizing",
    "halpha",
    "closed_loop_halpha",
    "Certificate",
    "golden_section_search",
    "best_alpha",
    "certify_and_bound",
    "GammaEvaluation",
    "SynthesisResult",
    "cl_synthesis",
    "fir_label",
    "fir_synthesis",
    "nominal_lqr",
    "robustness_margin",
    "fir_horizon_bound",
    "suboptimality_calculator",
    "lqr_complexity",
    "end_to_end_bound",
    "required_rollouts",
]
