"""Semidefinite programs over Hermitian matrix variables.

A ``ConicProgram`` collects affine expressions (``Affine``) built from declared
variables, then hands them to a backend. Every Hermitian PSD membership is
passed to the backend through its real symmetric embedding, so any real
symmetric-cone solver can serve.

Backends: Clarabel (interior point), SCS (first order, for programs whose
dense interior-point scaling blocks would not fit in memory), ``auto`` which
picks between the two by size, and a tiny SLSQP backend for toy cross-checks.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp

from .operators import real_symmetric_embedding

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical-failure"


class ConicError(ValueError):
    pass


class Affine:
    """``const + sum_v terms[v] @ x_v`` with array-valued coefficients.

    ``const`` has the expression shape ``S``; each term has shape ``S + (n_v,)``
    where ``n_v`` is the number of real parameters of variable ``v``.
    """

    __slots__ = ("const", "terms")

    def __init__(self, const, terms: Mapping[str, np.ndarray] | None = None):
        self.const = np.asarray(const, dtype=complex)
        self.terms = dict(terms or {})

    @property
    def shape(self) -> tuple[int, ...]:
        return self.const.shape

    def apply(self, fn: Callable[[np.ndarray], np.ndarray]) -> "Affine":
        """Push a linear map that accepts trailing batch axes through the expression."""
        return Affine(fn(self.const), {k: fn(v) for k, v in self.terms.items()})

    def __add__(self, other) -> "Affine":
        if not isinstance(other, Affine):
            return Affine(self.const + other, self.terms)
        terms = dict(self.terms)
        for k, v in other.terms.items():
            terms[k] = terms[k] + v if k in terms else v
        return Affine(self.const + other.const, terms)

    __radd__ = __add__

    def __neg__(self) -> "Affine":
        return Affine(-self.const, {k: -v for k, v in self.terms.items()})

    def __sub__(self, other) -> "Affine":
        return self + (-other)

    def __rsub__(self, other) -> "Affine":
        return (-self) + other

    def __mul__(self, scalar) -> "Affine":
        if np.ndim(scalar) != 0:
            raise ConicError("use Affine.times for array factors")
        return Affine(self.const * scalar, {k: v * scalar for k, v in self.terms.items()})

    __rmul__ = __mul__

    def times(self, mat: np.ndarray) -> "Affine":
        """Scalar expression times a constant array."""
        if self.shape != ():
            raise ConicError("times() needs a scalar expression")
        mat = np.asarray(mat)
        return Affine(mat * self.const, {k: mat[..., None] * v for k, v in self.terms.items()})

    def trace(self) -> "Affine":
        return self.apply(lambda a: np.trace(a, axis1=0, axis2=1))

    def inner(self, mat: np.ndarray) -> "Affine":
        """``tr(mat @ self)`` for a constant matrix."""
        return self.apply(lambda a: np.einsum("ij,ji...->...", mat, a))

    def contract(self, vec: np.ndarray) -> "Affine":
        """``vec . self`` for a vector-shaped expression."""
        return self.apply(lambda a: np.tensordot(vec, a, axes=(0, 0)))

    def value(self, x: Mapping[str, np.ndarray]) -> np.ndarray:
        out = self.const.copy()
        for k, v in self.terms.items():
            out = out + v @ x[k]
        return out


@dataclass(frozen=True)
class Variable:
    name: str
    kind: str  # "hermitian" or "real"
    size: int

    @property
    def n_params(self) -> int:
        return self.size ** 2 if self.kind == "hermitian" else self.size


def hermitian_parameter_basis(dim: int) -> np.ndarray:
    """Array ``E`` of shape ``(dim, dim, dim**2)`` with ``H = E @ x`` Hermitian for real ``x``.

    Parameters are ordered: diagonal entries, then ``Re H_ij``, ``Im H_ij`` for ``i < j``.
    """
    E = np.zeros((dim, dim, dim * dim), dtype=complex)
    k = 0
    for i in range(dim):
        E[i, i, k] = 1
        k += 1
    for i in range(dim):
        for j in range(i + 1, dim):
            E[i, j, k] = E[j, i, k] = 1
            E[i, j, k + 1], E[j, i, k + 1] = 1j, -1j
            k += 2
    return E


def hermitian_from_params(x: np.ndarray, dim: int) -> np.ndarray:
    H = np.zeros((dim, dim), dtype=complex)
    H[np.diag_indices(dim)] = x[:dim]
    iu = np.triu_indices(dim, 1)
    re, im = x[dim::2], x[dim + 1::2]
    H[iu] = re + 1j * im
    H[(iu[1], iu[0])] = re - 1j * im
    return H


@dataclass
class Tolerances:
    feasibility: float = 1e-8
    gap_rel: float = 1e-8
    gap_abs: float = 1e-8
    max_iter: int = 200
    # acceptance thresholds for residuals of a returned optimum
    eq_residual: float = 1e-7
    psd_residual: float = 1e-7
    # first-order backends converge to looser accuracy; callers repair certificates
    first_order_eps: float = 1e-7
    first_order_max_iter: int = 100_000
    first_order_residual: float = 1e-5


@dataclass
class SdpSolution:
    status: str
    objective: float
    values: dict[str, np.ndarray]
    eq_residual: float
    psd_residual: float
    dual_objective: float | None = None
    solve_time: float = 0.0
    message: str = ""
    backend: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class ConicProgram:
    """Minimize a real linear objective subject to equalities and PSD memberships."""

    def __init__(self):
        self.variables: dict[str, Variable] = {}
        self.equalities: list[tuple[Affine, float]] = []
        self.psd_constraints: list[tuple[str, Affine]] = []
        self.objective: Affine = Affine(0.0)

    def hermitian(self, name: str, dim: int) -> Affine:
        self._declare(Variable(name, "hermitian", dim))
        return Affine(np.zeros((dim, dim)), {name: hermitian_parameter_basis(dim)})

    def real(self, name: str, size: int) -> Affine:
        self._declare(Variable(name, "real", size))
        return Affine(np.zeros(size), {name: np.eye(size)})

    def _declare(self, var: Variable):
        if var.name in self.variables:
            raise ConicError(f"variable {var.name!r} declared twice")
        self.variables[var.name] = var

    def _check(self, expr: Affine):
        unknown = set(expr.terms) - set(self.variables)
        if unknown:
            raise ConicError(f"expression references undeclared variables {sorted(unknown)}")

    def add_equality(self, expr: Affine, rhs: float = 0.0):
        self._check(expr)
        if expr.shape != ():
            for idx in np.ndindex(expr.shape):
                self.add_equality(expr.apply(lambda a, idx=idx: a[idx]), np.asarray(rhs)[idx] if np.ndim(rhs) else rhs)
            return
        self.equalities.append((expr, float(np.real(rhs))))

    def add_psd(self, expr: Affine, name: str = ""):
        self._check(expr)
        if len(expr.shape) != 2 or expr.shape[0] != expr.shape[1]:
            raise ConicError(f"PSD constraint needs a square matrix expression, got {expr.shape}")
        self.psd_constraints.append((name or f"psd{len(self.psd_constraints)}", expr))

    def minimize(self, expr: Affine):
        self._check(expr)
        if expr.shape != ():
            raise ConicError("objective must be scalar")
        self.objective = expr

    # -- residual recomputation, independent of any backend -------------------
    def unpack(self, x: np.ndarray) -> dict[str, np.ndarray]:
        """Raw parameter vectors per variable from the stacked vector."""
        out, k = {}, 0
        for name, var in self.variables.items():
            out[name] = x[k:k + var.n_params]
            k += var.n_params
        return out

    def residuals(self, params: Mapping[str, np.ndarray]) -> tuple[float, float]:
        eq = max((abs(e.value(params).real - rhs) for e, rhs in self.equalities), default=0.0)
        psd = min(
            (float(np.linalg.eigvalsh(_herm(e.value(params)))[0]) for _, e in self.psd_constraints),
            default=0.0,
        )
        return float(eq), psd

    def assignments(self, params: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        out = {}
        for name, var in self.variables.items():
            x = np.asarray(params[name])
            out[name] = hermitian_from_params(x, var.size) if var.kind == "hermitian" else x.copy()
        return out

    def to_json(self) -> str:
        """Self-describing dump for debugging; not an interchange format."""
        def enc(e: Affine):
            return {
                "shape": list(e.shape),
                "const": [np.real(e.const).tolist(), np.imag(e.const).tolist()],
                "terms": {k: [v.real.tolist(), v.imag.tolist()] for k, v in e.terms.items()},
            }
        return json.dumps({
            "variables": [vars(v) for v in self.variables.values()],
            "equalities": [{"expr": enc(e), "rhs": r} for e, r in self.equalities],
            "psd": [{"name": n, "expr": enc(e)} for n, e in self.psd_constraints],
            "objective": enc(self.objective),
        })


def _herm(m: np.ndarray) -> np.ndarray:
    return (m + m.conj().T) / 2


def _stack(expr: Affine, program: ConicProgram, rows: int) -> sp.csr_matrix:
    """Real coefficient block of shape ``(rows, n_x)`` for an already-flattened expression."""
    blocks = []
    for name, var in program.variables.items():
        t = expr.terms.get(name)
        if t is None:
            blocks.append(sp.csr_matrix((rows, var.n_params)))
        else:
            blocks.append(sp.csr_matrix(np.real(t).reshape(rows, var.n_params)))
    return sp.hstack(blocks, format="csr")


def _svec_indices(n: int, order: str = "upper-col") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Indices and scaling of a scaled triangle vectorization.

    ``upper-col``: upper triangle column by column (Clarabel). ``lower-col``:
    lower triangle column by column (SCS); read off a symmetric matrix it is
    the upper triangle row by row.
    """
    if order == "upper-col":
        r, c = np.tril_indices(n)
        i, j = c, r
    elif order == "lower-col":
        i, j = np.triu_indices(n)
    else:
        raise ConicError(f"unknown vectorization {order!r}")
    scale = np.where(i == j, 1.0, np.sqrt(2.0))
    return i, j, scale


@dataclass
class _Assembled:
    A: sp.csc_matrix
    b: np.ndarray
    q: np.ndarray
    n_zero: int
    psd_sizes: list[int]


def _assemble(program: ConicProgram, order: str) -> _Assembled:
    """``A x + s = b`` with ``s`` in (zero cone) x (PSD cones); objective ``q . x``."""
    n_x = sum(v.n_params for v in program.variables.values())
    A_blocks, b_parts, sizes = [], [], []
    for expr, rhs in program.equalities:
        A_blocks.append(_stack(expr.apply(lambda a: a.reshape((1,) + a.shape)), program, 1))
        b_parts.append(np.array([rhs - expr.const.real]))
    for _, expr in program.psd_constraints:
        m = 2 * expr.shape[0]
        i, j, scale = _svec_indices(m, order)
        svec = expr.apply(lambda a: real_symmetric_embedding(a)[i, j] * scale.reshape((-1,) + (1,) * (a.ndim - 2)))
        A_blocks.append(-_stack(svec, program, len(i)))
        b_parts.append(svec.const.real)
        sizes.append(m)
    A = sp.vstack(A_blocks, format="csc") if A_blocks else sp.csc_matrix((0, n_x))
    b = np.concatenate(b_parts) if b_parts else np.zeros(0)
    q = _stack(program.objective.apply(lambda a: a.reshape((1,) + a.shape)), program, 1).toarray().ravel()
    return _Assembled(A, b, q, len(program.equalities), sizes)


def scaling_block_entries(program: ConicProgram) -> int:
    """Entries of the dense per-cone blocks an interior-point KKT system carries."""
    return sum((2 * e.shape[0] * (2 * e.shape[0] + 1) // 2) ** 2 for _, e in program.psd_constraints)


class ClarabelBackend:
    name = "clarabel"
    approximate = False

    def solve(self, program: ConicProgram, tol: Tolerances) -> tuple[str, np.ndarray | None, float | None, float, str]:
        import clarabel

        asm = _assemble(program, "upper-col")
        cones = ([clarabel.ZeroConeT(asm.n_zero)] if asm.n_zero else []) + [
            clarabel.PSDTriangleConeT(m) for m in asm.psd_sizes
        ]
        n_x = asm.A.shape[1]
        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.tol_feas = tol.feasibility
        settings.tol_gap_rel = tol.gap_rel
        settings.tol_gap_abs = tol.gap_abs
        settings.max_iter = tol.max_iter
        try:
            solver = clarabel.DefaultSolver(sp.csc_matrix((n_x, n_x)), asm.q, asm.A, asm.b, cones, settings)
            sol = solver.solve()
        except Exception as exc:  # solver breakdown must not crash callers
            return NUMERICAL_FAILURE, None, None, 0.0, f"clarabel raised: {exc}"
        status = str(sol.status)
        const = float(program.objective.const.real)
        if status in ("Solved", "AlmostSolved"):
            return OPTIMAL, np.asarray(sol.x), float(sol.obj_val_dual) + const, sol.solve_time, status
        if "PrimalInfeasible" in status:
            return INFEASIBLE, None, None, sol.solve_time, status
        return NUMERICAL_FAILURE, np.asarray(sol.x), None, sol.solve_time, status


class ScsBackend:
    """Splitting conic solver, warm-started across programs of identical structure.

    Bisection and see-saw loops re-solve the same constraints with a new
    objective, so the previous primal-dual point is an excellent start.
    """

    name = "scs"
    approximate = True

    def __init__(self):
        self._warm: tuple | None = None

    def solve(self, program: ConicProgram, tol: Tolerances):
        import scs

        asm = _assemble(program, "lower-col")
        key = (asm.A.shape, asm.A.nnz, asm.n_zero, tuple(asm.psd_sizes), hash(asm.A.data.tobytes()),
               hash(asm.b.tobytes()))
        cone = {"z": asm.n_zero, "s": asm.psd_sizes} if asm.n_zero else {"s": asm.psd_sizes}
        data = {"A": asm.A, "b": asm.b, "c": asm.q}
        try:
            solver = scs.SCS(data, cone, eps_abs=tol.first_order_eps, eps_rel=tol.first_order_eps,
                             max_iters=tol.first_order_max_iter, verbose=False)
            if self._warm is not None and self._warm[0] == key:
                sol = solver.solve(warm_start=True, x=self._warm[1], y=self._warm[2], s=self._warm[3])
            else:
                sol = solver.solve()
        except Exception as exc:
            return NUMERICAL_FAILURE, None, None, 0.0, f"scs raised: {exc}"
        info = sol["info"]
        status = info["status"]
        seconds = (info.get("setup_time", 0.0) + info.get("solve_time", 0.0)) / 1e3
        msg = f"{status} after {info['iter']} iterations"
        const = float(program.objective.const.real)
        if status in ("solved", "solved_inaccurate"):
            self._warm = (key, sol["x"], sol["y"], sol["s"])
            return OPTIMAL, np.asarray(sol["x"]), float(info["dobj"]) + const, seconds, msg
        if status.startswith("infeasible"):
            return INFEASIBLE, None, None, seconds, msg
        return NUMERICAL_FAILURE, np.asarray(sol["x"]), None, seconds, msg


class AutoBackend:
    """Clarabel unless its dense scaling blocks exceed ``max_entries``, then SCS."""

    name = "auto"
    max_entries = 40_000_000

    def __init__(self):
        self.clarabel = ClarabelBackend()
        self.scs = ScsBackend()

    def pick(self, program: ConicProgram):
        return self.clarabel if scaling_block_entries(program) <= self.max_entries else self.scs

    @property
    def approximate(self) -> bool:  # conservative: either child may run
        return True

    def solve(self, program: ConicProgram, tol: Tolerances):
        return self.pick(program).solve(program, tol)


class ToyBackend:
    """SLSQP over the raw parameters with eigenvalue constraints.

    Only meant for toy programs (a handful of parameters, PSD blocks of size <= 2),
    whose answers can be checked by hand or by brute force.
    """

    name = "toy"
    approximate = False
    max_params = 12
    max_block = 2

    def solve(self, program: ConicProgram, tol: Tolerances):
        from scipy.optimize import minimize

        n_x = sum(v.n_params for v in program.variables.values())
        if n_x > self.max_params or any(e.shape[0] > self.max_block for _, e in program.psd_constraints):
            return NUMERICAL_FAILURE, None, None, 0.0, "program too large for the toy backend"

        def f(x):
            return float(program.objective.value(program.unpack(x)).real)

        cons = [
            {"type": "eq", "fun": lambda x, e=e, r=r: float(e.value(program.unpack(x)).real - r)}
            for e, r in program.equalities
        ]
        cons += [
            {"type": "ineq", "fun": lambda x, e=e: float(np.linalg.eigvalsh(_herm(e.value(program.unpack(x))))[0])}
            for _, e in program.psd_constraints
        ]
        rng = np.random.default_rng(0)
        best = None
        for start in [np.zeros(n_x)] + [rng.normal(size=n_x) for _ in range(7)]:
            res = minimize(f, start, method="SLSQP", constraints=cons, options={"ftol": 1e-12, "maxiter": 500})
            eq, psd = program.residuals(program.unpack(res.x))
            if eq <= 1e-6 and psd >= -1e-6 and (best is None or res.fun < best.fun):
                best = res
        if best is None:
            return INFEASIBLE, None, None, 0.0, "no feasible start converged"
        return OPTIMAL, best.x, None, 0.0, "slsqp"


BACKENDS = {"auto": AutoBackend, "clarabel": ClarabelBackend, "scs": ScsBackend, "toy": ToyBackend}
BACKEND_ENV = "MARGENT_BACKEND"
_instances: dict[str, object] = {}


def get_backend(name: str):
    """Shared backend instance (keeps warm-start state between solves)."""
    name = name.lower()
    if name not in BACKENDS:
        raise ConicError(f"unknown backend {name!r}; choose from {sorted(BACKENDS)}")
    if name not in _instances:
        _instances[name] = BACKENDS[name]()
    return _instances[name]


def default_backend():
    return get_backend(os.environ.get(BACKEND_ENV, "auto"))


def _effective(backend, program: ConicProgram):
    return backend.pick(program) if isinstance(backend, AutoBackend) else backend


def solve(program: ConicProgram, tolerances: Tolerances | None = None, backend=None) -> SdpSolution:
    """Solve ``program`` and re-verify the returned point independently of the backend."""
    tol = tolerances or Tolerances()
    if isinstance(backend, str):
        backend = get_backend(backend)
    backend = _effective(backend or default_backend(), program)
    status, x, dual, t, msg = backend.solve(program, tol)
    if x is None:
        return SdpSolution(status, float("nan"), {}, float("inf"), float("-inf"), dual, t, msg, backend.name)
    params = program.unpack(x)
    eq, psd = program.residuals(params)
    obj = float(program.objective.value(params).real)
    eq_tol, psd_tol = ((tol.first_order_residual, tol.first_order_residual) if backend.approximate
                       else (tol.eq_residual, tol.psd_residual))
    if status == OPTIMAL and (eq > eq_tol or psd < -psd_tol):
        status = NUMERICAL_FAILURE
        msg = f"{msg}; residuals eq={eq:.2e} psd={psd:.2e} exceed tolerance"
    return SdpSolution(status, obj, program.assignments(params), eq, psd, dual, t, msg, backend.name)
