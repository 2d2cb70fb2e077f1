from __future__ import annotations

import enum
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from numbers import Number
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from ..conf import toolkit_setting
from ..exceptions import DimensionError

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Affine expressions
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class Variable:
    """Decision variable; symmetric matrices are parameterized by their lower triangle."""

    name: str
    shape: tuple[int, int]
    symmetric: bool = False
    offset: int = 0

    @property
    def size(self) -> int:
        rows, cols = self.shape
        return rows * (rows + 1) // 2 if self.symmetric else rows * cols

    def embedding(self) -> sp.csr_matrix:
        """Map from parameters to the row-major vectorized matrix."""

        rows, cols = self.shape
        if not self.symmetric:
            return sp.identity(rows * cols, format="csr")
        i, j = np.divmod(np.arange(rows * cols), cols)
        hi, lo = np.maximum(i, j), np.minimum(i, j)
        params = hi * (hi + 1) // 2 + lo
        return sp.csr_matrix((np.ones(rows * cols), (np.arange(rows * cols), params)), shape=(rows * cols, self.size))

    def unpack(self, params: np.ndarray) -> np.ndarray:
        return (self.embedding() @ params).reshape(self.shape)


def _transpose_permutation(rows: int, cols: int) -> sp.csr_matrix:
    """Permutation taking vec_r(X) to vec_r(X^T)."""

    target = np.arange(rows * cols)
    r, c = np.divmod(target, rows)  # target indexes the (cols x rows) transpose
    source = c * cols + r
    return sp.csr_matrix((np.ones(rows * cols), (target, source)), shape=(rows * cols, rows * cols))


class Affine:
    """Matrix-valued affine function of the program variables."""

    __array_ufunc__ = None

    def __init__(self, shape: tuple[int, int], terms: dict[Variable, sp.csr_matrix] | None = None, constant=None):
        self.shape = (int(shape[0]), int(shape[1]))
        self.terms = {var: sp.csr_matrix(coeff) for var, coeff in (terms or {}).items()}
        if constant is None:
            constant = np.zeros(self.shape)
        self.constant = np.asarray(constant, dtype=float).reshape(self.shape)

    # -- construction -----------------------------------------------------

    @classmethod
    def of(cls, value) -> "Affine":
        if isinstance(value, Affine):
            return value
        array = np.asarray(value, dtype=float)
        if array.ndim > 2:
            raise DimensionError(f"constants must be at most 2-D, got shape {array.shape}")
        array = np.atleast_2d(array)
        return cls(array.shape, constant=array)

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "Affine":
        return cls((rows, cols))

    @property
    def rows(self) -> int:
        return self.shape[0]

    @property
    def cols(self) -> int:
        return self.shape[1]

    @property
    def variables(self) -> tuple[Variable, ...]:
        return tuple(self.terms)

    def _linear_map(self, operator: sp.spmatrix, shape: tuple[int, int], constant: np.ndarray) -> "Affine":
        operator = sp.csr_matrix(operator)
        return Affine(shape, {var: operator @ coeff for var, coeff in self.terms.items()}, constant)

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other) -> "Affine":
        other = Affine.of(other)
        if other.shape != self.shape:
            raise DimensionError(f"cannot add shapes {self.shape} and {other.shape}")
        terms = dict(self.terms)
        for var, coeff in other.terms.items():
            terms[var] = terms[var] + coeff if var in terms else coeff
        return Affine(self.shape, terms, self.constant + other.constant)

    __radd__ = __add__

    def __neg__(self) -> "Affine":
        return self * -1.0

    def __sub__(self, other) -> "Affine":
        return self + (-Affine.of(other))

    def __rsub__(self, other) -> "Affine":
        return Affine.of(other) + (-self)

    def __mul__(self, other) -> "Affine":
        if isinstance(other, Affine):
            raise DimensionError("product of two affine expressions is not affine")
        if isinstance(other, Number) or np.ndim(other) == 0:
            scale = float(other)
            return Affine(self.shape, {var: coeff * scale for var, coeff in self.terms.items()}, self.constant * scale)
        array = np.atleast_2d(np.asarray(other, dtype=float))
        if self.shape != (1, 1):
            raise DimensionError("only a scalar expression can scale a matrix")
        column = sp.csr_matrix(array.reshape(-1, 1))
        return Affine(array.shape, {var: column @ coeff for var, coeff in self.terms.items()}, array * self.constant[0, 0])

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Affine":
        return self * (1.0 / float(other))

    def __matmul__(self, other) -> "Affine":
        if isinstance(other, Affine):
            raise DimensionError("product of two affine expressions is not affine")
        right = np.atleast_2d(np.asarray(other, dtype=float))
        if right.shape[0] != self.cols:
            raise DimensionError(f"cannot multiply {self.shape} by {right.shape}")
        operator = sp.kron(sp.identity(self.rows), sp.csr_matrix(right.T))
        return self._linear_map(operator, (self.rows, right.shape[1]), self.constant @ right)

    def __rmatmul__(self, other) -> "Affine":
        left = np.atleast_2d(np.asarray(other, dtype=float))
        if left.shape[1] != self.rows:
            raise DimensionError(f"cannot multiply {left.shape} by {self.shape}")
        operator = sp.kron(sp.csr_matrix(left), sp.identity(self.cols))
        return self._linear_map(operator, (left.shape[0], self.cols), left @ self.constant)

    @property
    def T(self) -> "Affine":
        return self._linear_map(_transpose_permutation(*self.shape), (self.cols, self.rows), self.constant.T)

    def __getitem__(self, key) -> "Affine":
        if not isinstance(key, tuple) or len(key) != 2:
            raise DimensionError("index expressions with a (rows, cols) pair")
        row_index = np.atleast_1d(np.arange(self.rows)[key[0]])
        col_index = np.atleast_1d(np.arange(self.cols)[key[1]])
        picked = (row_index[:, None] * self.cols + col_index[None, :]).ravel()
        operator = sp.csr_matrix(
            (np.ones(picked.size), (np.arange(picked.size), picked)), shape=(picked.size, self.rows * self.cols)
        )
        shape = (row_index.size, col_index.size)
        return self._linear_map(operator, shape, self.constant[np.ix_(row_index, col_index)])

    def trace(self) -> "Affine":
        if self.rows != self.cols:
            raise DimensionError(f"trace of non-square expression {self.shape}")
        diagonal = np.arange(self.rows) * (self.cols + 1)
        operator = sp.csr_matrix((np.ones(self.rows), (np.zeros(self.rows, dtype=int), diagonal)), shape=(1, self.rows * self.cols))
        return self._linear_map(operator, (1, 1), np.trace(self.constant).reshape(1, 1))

    def vec(self) -> "Affine":
        """Row-major vectorization as a column."""

        return Affine((self.rows * self.cols, 1), self.terms, self.constant.reshape(-1, 1))

    def symmetric_part(self) -> "Affine":
        return (self + self.T) * 0.5

    # -- evaluation -------------------------------------------------------

    def evaluate(self, params: dict[Variable, np.ndarray]) -> np.ndarray:
        flat = self.constant.ravel().copy()
        for var, coeff in self.terms.items():
            flat += coeff @ params[var]
        return flat.reshape(self.shape)

    def __repr__(self) -> str:
        names = ", ".join(var.name for var in self.terms) or "constant"
        return f"Affine(shape={self.shape}, vars=[{names}])"


def bmat(blocks: Sequence[Sequence]) -> Affine:
    """Block matrix; ``None`` entries are zero blocks sized from their row and column."""

    heights: list[int | None] = [None] * len(blocks)
    widths: list[int | None] = [None] * max(len(row) for row in blocks)
    if any(len(row) != len(widths) for row in blocks):
        raise DimensionError("every block row needs the same number of blocks")
    for i, row in enumerate(blocks):
        for j, block in enumerate(row):
            if block is None:
                continue
            rows, cols = Affine.of(block).shape
            if heights[i] not in (None, rows) or widths[j] not in (None, cols):
                raise DimensionError(f"block ({i}, {j}) of shape {(rows, cols)} does not line up")
            heights[i], widths[j] = rows, cols
    if None in heights or None in widths:
        raise DimensionError("each block row and column needs at least one sized block")

    total_rows, total_cols = sum(heights), sum(widths)
    row_offsets = np.concatenate([[0], np.cumsum(heights)])
    col_offsets = np.concatenate([[0], np.cumsum(widths)])
    result = Affine.zeros(total_rows, total_cols)
    for i, row in enumerate(blocks):
        for j, block in enumerate(row):
            if block is None:
                continue
            block = Affine.of(block)
            local_r, local_c = np.divmod(np.arange(block.rows * block.cols), block.cols)
            target = (local_r + row_offsets[i]) * total_cols + local_c + col_offsets[j]
            placement = sp.csr_matrix(
                (np.ones(target.size), (target, np.arange(target.size))), shape=(total_rows * total_cols, target.size)
            )
            constant = np.zeros((total_rows, total_cols))
            constant[row_offsets[i] : row_offsets[i + 1], col_offsets[j] : col_offsets[j + 1]] = block.constant
            result = result + block._linear_map(placement, (total_rows, total_cols), constant)
    return result


def hstack(blocks: Iterable) -> Affine:
    return bmat([list(blocks)])


def vstack(blocks: Iterable) -> Affine:
    return bmat([[block] for block in blocks])


# ---------------------------------------------------------------------------
# Programs
# ---------------------------------------------------------------------------


class ConicStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical-failure"


@dataclass(frozen=True)
class PsdConstraint:
    expr: Affine
    name: str


@dataclass(frozen=True)
class SocConstraint:
    t: Affine
    v: Affine
    name: str


@dataclass(frozen=True)
class LinearConstraint:
    expr: Affine
    kind: str  # "eq" (expr == 0) or "nonneg" (expr >= 0)
    name: str


@dataclass(frozen=True)
class ConeDims:
    l: int
    q: tuple[int, ...]
    s: tuple[int, ...]


@dataclass
class StandardForm:
    """minimize c^T x + c0  s.t.  G x + s = h, s in K,  A x = b."""

    c: np.ndarray
    c0: float
    G: sp.csr_matrix
    h: np.ndarray
    dims: ConeDims
    A: sp.csr_matrix
    b: np.ndarray
    infeasible_reason: str = ""
    unbounded_reason: str = ""


class ConicProgram:
    """Linear objective over scalar and matrix variables with affine cone constraints."""

    def __init__(self, name: str = "program") -> None:
        self.name = name
        self._variables: list[Variable] = []
        self._objective: Affine | None = None
        self.constraints: list[PsdConstraint | SocConstraint | LinearConstraint] = []

    @property
    def variables(self) -> tuple[Variable, ...]:
        return tuple(self._variables)

    @property
    def num_parameters(self) -> int:
        return sum(var.size for var in self._variables)

    def variable(self, name: str, shape: int | tuple[int, int] = (1, 1), *, symmetric: bool = False) -> Affine:
        if isinstance(shape, int):
            shape = (shape, shape) if symmetric else (shape, 1)
        if symmetric and shape[0] != shape[1]:
            raise DimensionError(f"symmetric variable {name} must be square, got {shape}")
        if any(var.name == name for var in self._variables):
            raise DimensionError(f"variable {name!r} declared twice")
        var = Variable(name, (int(shape[0]), int(shape[1])), symmetric, self.num_parameters)
        self._variables.append(var)
        return Affine(var.shape, {var: var.embedding()})

    def _check(self, expr: Affine) -> Affine:
        expr = Affine.of(expr)
        declared = set(map(id, self._variables))
        for var in expr.terms:
            if id(var) not in declared:
                raise DimensionError(f"variable {var.name!r} does not belong to program {self.name!r}")
        return expr

    def _name(self, name: str | None, kind: str) -> str:
        return name or f"{kind}{len(self.constraints)}"

    def minimize(self, expr) -> None:
        expr = self._check(expr)
        if expr.shape != (1, 1):
            raise DimensionError(f"objective must be scalar, got {expr.shape}")
        self._objective = expr

    def add_psd(self, expr, name: str | None = None) -> PsdConstraint:
        expr = self._check(expr)
        if expr.rows != expr.cols:
            raise DimensionError(f"PSD block must be square, got {expr.shape}")
        constraint = PsdConstraint(expr.symmetric_part(), self._name(name, "psd"))
        self.constraints.append(constraint)
        return constraint

    def add_soc(self, t, v, name: str | None = None) -> SocConstraint:
        t, v = self._check(t), self._check(v)
        if t.shape != (1, 1):
            raise DimensionError(f"cone height must be scalar, got {t.shape}")
        constraint = SocConstraint(t, v.vec(), self._name(name, "soc"))
        self.constraints.append(constraint)
        return constraint

    def add_equality(self, lhs, rhs=0.0, name: str | None = None) -> LinearConstraint:
        lhs = self._check(lhs)
        if isinstance(rhs, Number):
            rhs = np.full(lhs.shape, float(rhs))
        rhs = self._check(rhs)
        if lhs.shape != rhs.shape:
            raise DimensionError(f"equality sides have shapes {lhs.shape} and {rhs.shape}")
        constraint = LinearConstraint(lhs - rhs, "eq", self._name(name, "eq"))
        self.constraints.append(constraint)
        return constraint

    def add_nonneg(self, expr, name: str | None = None) -> LinearConstraint:
        constraint = LinearConstraint(self._check(expr), "nonneg", self._name(name, "nonneg"))
        self.constraints.append(constraint)
        return constraint

    def add_less_equal(self, lhs, rhs, name: str | None = None) -> LinearConstraint:
        return self.add_nonneg(Affine.of(rhs) - Affine.of(lhs), name)

    # -- lowering ---------------------------------------------------------

    def _flatten(self, expr: Affine) -> tuple[sp.csr_matrix, np.ndarray]:
        size = expr.rows * expr.cols
        blocks = []
        for var, coeff in expr.terms.items():
            coo = coeff.tocoo()
            blocks.append((coo.data, coo.row, coo.col + var.offset))
        if blocks:
            data, rows, cols = (np.concatenate(part) for part in zip(*blocks))
        else:
            data, rows, cols = np.zeros(0), np.zeros(0, dtype=int), np.zeros(0, dtype=int)
        F = sp.csr_matrix((data, (rows, cols)), shape=(size, self.num_parameters))
        return F, expr.constant.ravel().copy()

    def standard_form(self) -> StandardForm:
        if self._objective is None:
            raise DimensionError(f"program {self.name!r} has no objective")
        N = self.num_parameters
        c_row, c_const = self._flatten(self._objective)
        c = np.asarray(c_row.todense()).ravel()

        linear, socs, psds, eqs = [], [], [], []
        q_dims, s_dims = [], []
        for constraint in self.constraints:
            if isinstance(constraint, LinearConstraint):
                (eqs if constraint.kind == "eq" else linear).append(self._flatten(constraint.expr))
            elif isinstance(constraint, SocConstraint):
                socs.append(self._flatten(vstack([constraint.t, constraint.v])))
                q_dims.append(constraint.v.rows + 1)
            else:
                psds.append(self._flatten(constraint.expr))
                s_dims.append(constraint.expr.rows)
        cone_parts = linear + socs + psds
        l_dim = sum(F.shape[0] for F, _ in linear)
        if cone_parts:
            G = -sp.vstack([F for F, _ in cone_parts]).tocsr()
            h = np.concatenate([f for _, f in cone_parts])
        else:
            G, h = sp.csr_matrix((0, N)), np.zeros(0)

        if eqs:
            A = sp.vstack([F for F, _ in eqs]).tocsr()
            b = -np.concatenate([f for _, f in eqs])
        else:
            A, b = sp.csr_matrix((0, N)), np.zeros(0)

        form = StandardForm(c, float(c_const[0]), G, h, ConeDims(l_dim, tuple(q_dims), tuple(s_dims)), A, b)
        _presolve(form)
        return form

    def to_sdpa(self, path: str | Path) -> Path:
        """Write the program in SDPA sparse format.

        Equalities become pairs of LP rows and second-order cones become arrow
        matrices, so the file holds only LP and PSD blocks.
        """

        if self._objective is None:
            raise DimensionError(f"program {self.name!r} has no objective")
        N = self.num_parameters
        c = np.asarray(self._flatten(self._objective)[0].todense()).ravel()
        lp_rows: list[tuple[sp.csr_matrix, np.ndarray]] = []
        psd_blocks: list[tuple[sp.csr_matrix, np.ndarray, int]] = []
        for constraint in self.constraints:
            if isinstance(constraint, LinearConstraint):
                F, f = self._flatten(constraint.expr)
                lp_rows.append((F, f))
                if constraint.kind == "eq":
                    lp_rows.append((-F, -f))
            elif isinstance(constraint, SocConstraint):
                k = constraint.v.rows
                arrow = bmat([[constraint.t, constraint.v.T], [constraint.v, constraint.t * np.eye(k)]])
                F, f = self._flatten(arrow)
                psd_blocks.append((F, f, k + 1))
            else:
                F, f = self._flatten(constraint.expr)
                psd_blocks.append((F, f, constraint.expr.rows))

        lines = [f'"{self.name}"', str(N)]
        structure = [str(size) for _, _, size in psd_blocks]
        lp_size = sum(F.shape[0] for F, _ in lp_rows)
        if lp_size:
            structure.append(str(-lp_size))
        lines.append(str(len(structure)))
        lines.append(" ".join(structure))
        lines.append(" ".join(f"{value:.17g}" for value in c))

        entries: list[tuple[int, int, int, int, float]] = []
        for block_no, (F, f, size) in enumerate(psd_blocks, start=1):
            for flat, value in enumerate(f):
                i, j = divmod(flat, size)
                if i <= j and value != 0.0:
                    entries.append((0, block_no, i + 1, j + 1, -value))
            coo = F.tocoo()
            for flat, var, value in zip(coo.row, coo.col, coo.data):
                i, j = divmod(int(flat), size)
                if i <= j and value != 0.0:
                    entries.append((int(var) + 1, block_no, i + 1, j + 1, value))
        if lp_size:
            block_no = len(psd_blocks) + 1
            F = sp.vstack([F for F, _ in lp_rows]).tocoo()
            f = np.concatenate([f for _, f in lp_rows])
            entries.extend((0, block_no, i + 1, i + 1, -value) for i, value in enumerate(f) if value != 0.0)
            entries.extend((int(var) + 1, block_no, int(i) + 1, int(i) + 1, value) for i, var, value in zip(F.row, F.col, F.data) if value != 0.0)
        entries.sort()
        lines.extend(f"{m} {blk} {i} {j} {value:.17g}" for m, blk, i, j, value in entries)

        path = Path(path)
        path.write_text("\n".join(lines) + "\n")
        return path


def _presolve(form: StandardForm, rank_tol: float = 1e-10) -> None:
    """Drop dependent equality rows and pin parameters that no constraint touches."""

    N = form.c.size
    if form.A.shape[0]:
        A = form.A.toarray()
        b = form.b
        nonzero = np.abs(A).max(axis=1) > 0
        if np.any(np.abs(b[~nonzero]) > 1e-12):
            form.infeasible_reason = "equality 0 = b with b != 0"
        A, b = A[nonzero], b[nonzero]
        if A.shape[0]:
            _, R, pivots = scipy.linalg.qr(A.T, mode="economic", pivoting=True)
            diagonal = np.abs(np.diag(R))
            rank = int(np.sum(diagonal > rank_tol * diagonal[0])) if diagonal.size else 0
            kept = np.sort(pivots[:rank])
            solution, *_ = scipy.linalg.lstsq(A[kept], b[kept])
            if np.linalg.norm(A @ solution - b) > 1e-8 * (1 + np.linalg.norm(b)):
                form.infeasible_reason = "inconsistent equality constraints"
            A, b = A[kept], b[kept]
        form.A, form.b = sp.csr_matrix(A), b

    touched = np.zeros(N, dtype=bool)
    for M in (form.A, form.G):
        if M.shape[0]:
            touched |= np.asarray(abs(M).sum(axis=0)).ravel() > 0
    free = np.flatnonzero(~touched)
    if free.size:
        if np.any(form.c[free] != 0):
            form.unbounded_reason = "objective depends on an unconstrained parameter"
        pin = sp.csr_matrix((np.ones(free.size), (np.arange(free.size), free)), shape=(free.size, N))
        form.A = sp.vstack([form.A, pin]).tocsr()
        form.b = np.concatenate([form.b, np.zeros(free.size)])


# ---------------------------------------------------------------------------
# Solutions and backends
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Residuals:
    primal: float
    dual: float
    gap: float


@dataclass(frozen=True)
class BackendResult:
    status: ConicStatus
    x: np.ndarray | None
    z: np.ndarray | None = None
    y: np.ndarray | None = None
    residuals: Residuals | None = None
    primal_objective: float = math.nan
    dual_objective: float = math.nan
    diagnostics: str = ""


@dataclass(frozen=True)
class ConicSolution:
    status: ConicStatus
    values: dict[str, np.ndarray]
    objective: float
    dual_objective: float
    residuals: Residuals
    backend: str
    certificate: dict[str, np.ndarray] | None = None
    diagnostics: str = ""
    params: dict[Variable, np.ndarray] = field(default_factory=dict, repr=False, compare=False)

    @property
    def is_optimal(self) -> bool:
        return self.status is ConicStatus.OPTIMAL

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def value(self, expr: Affine) -> np.ndarray:
        return expr.evaluate(self.params)


def _cone_violation(form: StandardForm, slack: np.ndarray) -> float:
    """Largest distance-like violation of ``slack`` from the cone."""

    worst = 0.0
    l = form.dims.l
    if l:
        worst = max(worst, float(np.max(-slack[:l], initial=0.0)))
    offset = l
    for size in form.dims.q:
        block = slack[offset : offset + size]
        worst = max(worst, float(np.linalg.norm(block[1:]) - block[0]))
        offset += size
    for size in form.dims.s:
        block = slack[offset : offset + size * size].reshape(size, size)
        worst = max(worst, float(-np.linalg.eigvalsh((block + block.T) / 2).min()))
        offset += size * size
    return max(worst, 0.0)


def kkt_residuals(form: StandardForm, x: np.ndarray, z: np.ndarray, y: np.ndarray) -> tuple[Residuals, float, float]:
    """Relative primal/dual residuals and gap, with the primal and dual objectives."""

    primal_scale = max(1.0, float(np.linalg.norm(np.concatenate([form.h, form.b]))))
    dual_scale = max(1.0, float(np.linalg.norm(form.c)))
    slack = form.h - form.G @ x
    primal = max(_cone_violation(form, slack), float(np.linalg.norm(form.A @ x - form.b))) / primal_scale
    stationarity = form.c + form.G.T @ z + form.A.T @ y
    dual = max(float(np.linalg.norm(stationarity)), _cone_violation(form, z)) / dual_scale
    primal_objective = float(form.c @ x) + form.c0
    dual_objective = float(-form.h @ z - form.b @ y) + form.c0
    gap = abs(primal_objective - dual_objective) / max(1.0, min(abs(primal_objective), abs(dual_objective)))
    return Residuals(primal, dual, gap), primal_objective, dual_objective


class ConicBackend(ABC):
    name: str = ""

    @abstractmethod
    def solve(self, form: StandardForm, tol: float) -> BackendResult:
        raise NotImplementedError


class CvxoptBackend(ConicBackend):
    """cvxopt's conelp: primal-dual path following on the homogeneous self-dual embedding."""

    name = "cvxopt"

    def __init__(self, max_iters: int = 200) -> None:
        import cvxopt
        import cvxopt.solvers

        self.max_iters = max_iters
        self._cvxopt = cvxopt

    def _sparse(self, M: sp.csr_matrix):
        coo = M.tocoo()
        return self._cvxopt.spmatrix(coo.data.tolist(), coo.row.tolist(), coo.col.tolist(), M.shape)

    def solve(self, form: StandardForm, tol: float) -> BackendResult:
        matrix = self._cvxopt.matrix
        dims = {"l": form.dims.l, "q": list(form.dims.q), "s": list(form.dims.s)}
        options = {"show_progress": False, "abstol": tol, "reltol": tol, "feastol": tol, "maxiters": self.max_iters}
        try:
            solution = self._cvxopt.solvers.conelp(
                matrix(form.c.astype(float)),
                self._sparse(form.G),
                matrix(form.h.astype(float)),
                dims,
                self._sparse(form.A),
                matrix(form.b.astype(float)) if form.b.size else matrix(0.0, (0, 1)),
                options=options,
            )
        except (ArithmeticError, ValueError) as exc:
            return BackendResult(ConicStatus.NUMERICAL_FAILURE, None, diagnostics=f"cvxopt: {exc}")

        status = {
            "optimal": ConicStatus.OPTIMAL,
            "primal infeasible": ConicStatus.INFEASIBLE,
            "dual infeasible": ConicStatus.UNBOUNDED,
        }.get(solution["status"], ConicStatus.NUMERICAL_FAILURE)

        def vector(key):
            return None if solution[key] is None else np.array(solution[key]).ravel()

        gap_candidates = [value for value in (solution["gap"], solution["relative gap"]) if value is not None]
        residuals = Residuals(
            primal=_or_nan(solution["primal infeasibility"]),
            dual=_or_nan(solution["dual infeasibility"]),
            gap=min(gap_candidates) if gap_candidates else math.nan,
        )
        return BackendResult(
            status,
            vector("x"),
            vector("z"),
            vector("y"),
            residuals,
            _or_nan(solution["primal objective"]) + form.c0,
            _or_nan(solution["dual objective"]) + form.c0,
            diagnostics=f"cvxopt status {solution['status']!r} after {solution['iterations']} iterations",
        )


def _solver_options(solver: str, tol: float) -> dict:
    """Stopping tolerances in each binding's own option names, one decade below ``tol``."""

    target = tol / 10
    return {
        "CLARABEL": {"tol_gap_abs": target, "tol_gap_rel": target, "tol_feas": target},
        "SCS": {"eps_abs": target, "eps_rel": target},
        "CVXOPT": {"abstol": target, "reltol": target, "feastol": target},
    }.get(solver.upper(), {})


class CvxpyBackend(ConicBackend):
    """Binds whichever conic solver cvxpy is configured with."""

    name = "cvxpy"

    def __init__(self, solver: str | None = None) -> None:
        import cvxpy

        self.solver = solver
        self._cvxpy = cvxpy

    def solve(self, form: StandardForm, tol: float) -> BackendResult:
        cp = self._cvxpy

        N = form.c.size
        x = cp.Variable(N)
        F = -form.G
        constraints = []
        if form.dims.l:
            constraints.append(F[: form.dims.l] @ x + form.h[: form.dims.l] >= 0)
        offset = form.dims.l
        for size in form.dims.q:
            block = F[offset : offset + size] @ x + form.h[offset : offset + size]
            constraints.append(cp.SOC(block[0], block[1:]))
            offset += size
        for size in form.dims.s:
            rows = slice(offset, offset + size * size)
            block = cp.reshape(F[rows] @ x + form.h[rows], (size, size), order="C")
            constraints.append((block + block.T) / 2 >> 0)
            offset += size * size
        if form.A.shape[0]:
            constraints.append(form.A @ x == form.b)

        problem = cp.Problem(cp.Minimize(form.c @ x + form.c0), constraints)
        solver = self.solver or toolkit_setting("CVXPY_SOLVER")
        try:
            problem.solve(solver=solver, **_solver_options(solver, tol))
        except cp.SolverError as exc:
            return BackendResult(ConicStatus.NUMERICAL_FAILURE, None, diagnostics=f"cvxpy/{solver}: {exc}")

        status = {
            cp.OPTIMAL: ConicStatus.OPTIMAL,
            cp.INFEASIBLE: ConicStatus.INFEASIBLE,
            cp.UNBOUNDED: ConicStatus.UNBOUNDED,
        }.get(problem.status, ConicStatus.NUMERICAL_FAILURE)

        duals = []
        for constraint in constraints[: len(constraints) - (1 if form.A.shape[0] else 0)]:
            value = constraint.dual_value
            if value is None:
                duals = []
                break
            parts = value if isinstance(value, (list, tuple)) else [value]
            duals.append(np.concatenate([np.ravel(np.asarray(part, dtype=float)) for part in parts]))
        z = np.concatenate(duals) if duals else None
        y = None
        if form.A.shape[0]:
            y_value = constraints[-1].dual_value
            y = None if y_value is None else np.ravel(np.asarray(y_value, dtype=float))
        else:
            y = np.zeros(0)

        x_value = None if x.value is None else np.asarray(x.value, dtype=float)
        result = BackendResult(status, x_value, z, y, diagnostics=f"cvxpy/{solver} status {problem.status!r}")
        if status is ConicStatus.OPTIMAL and x_value is not None and z is not None and y is not None:
            residuals, primal_objective, dual_objective = kkt_residuals(form, x_value, z, y)
            result = BackendResult(status, x_value, z, y, residuals, primal_objective, dual_objective, result.diagnostics)
        return result


def _or_nan(value) -> float:
    return math.nan if value is None else float(value)


BACKENDS: dict[str, type[ConicBackend]] = {
    CvxoptBackend.name: CvxoptBackend,
    CvxpyBackend.name: CvxpyBackend,
}


def get_backend(backend: str | ConicBackend | None = None) -> ConicBackend:
    if isinstance(backend, ConicBackend):
        return backend
    name = backend or toolkit_setting("CONIC_BACKEND")
    try:
        binding = BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown conic backend {name!r}; choose from {sorted(BACKENDS)}") from None
    try:
        return binding()
    except ImportError as exc:
        raise ValueError(f"conic backend {name!r} is not installed ({exc}); install it or set COARSE_ID_CONIC_BACKEND") from exc


def solve_conic(program: ConicProgram, tol: float | None = None, backend: str | ConicBackend | None = None) -> ConicSolution:
    tol = toolkit_setting("SOLVER_TOL") if tol is None else tol
    engine = get_backend(backend)
    form = program.standard_form()
    empty = Residuals(math.nan, math.nan, math.nan)

    if form.infeasible_reason or form.unbounded_reason:
        status = ConicStatus.INFEASIBLE if form.infeasible_reason else ConicStatus.UNBOUNDED
        logger.debug("program %s decided in presolve: %s", program.name, status.value)
        return ConicSolution(status, {}, math.nan, math.nan, empty, engine.name,
                             diagnostics=form.infeasible_reason or form.unbounded_reason)

    result = engine.solve(form, tol)
    residuals = result.residuals or empty
    status = result.status
    if status is ConicStatus.OPTIMAL and not (
        residuals.primal <= tol and residuals.dual <= tol and residuals.gap <= tol
    ):
        status = ConicStatus.NUMERICAL_FAILURE
    logger.debug("program %s solved by %s: %s (%s)", program.name, engine.name, status.value, result.diagnostics)

    if status is not ConicStatus.OPTIMAL or result.x is None:
        certificate = None
        if status is ConicStatus.INFEASIBLE and result.z is not None:
            certificate = {"z": result.z, "y": result.y if result.y is not None else np.zeros(0)}
        return ConicSolution(status, {}, math.nan, math.nan, residuals, engine.name, certificate, result.diagnostics)

    params = {var: result.x[var.offset : var.offset + var.size] for var in program.variables}
    values = {var.name: var.unpack(params[var]) for var in program.variables}
    return ConicSolution(
        status,
        values,
        result.primal_objective,
        result.dual_objective,
        residuals,
        engine.name,
        diagnostics=result.diagnostics,
        params=params,
    )


__all__ = [
    "Variable",
    "Affine",
    "bmat",
    "hstack",
    "vstack",
    "ConicStatus",
    "PsdConstraint",
    "SocConstraint",
    "LinearConstraint",
    "ConeDims",
    "StandardForm",
    "ConicProgram",
    "Residuals",
    "ConicSolution",
    "ConicBackend",
    "CvxoptBackend",
    "CvxpyBackend",
    "BACKENDS",
    "get_backend",
    "kkt_residuals",
    "solve_conic",
]
