"""Decomposable witnesses supported on known marginals.

The witness program minimizes ``tr(W rho)`` over operators ``W`` with
``tr(W) = 1`` that are spanned by correlations inside the known pairs and that
split as ``W = P_M + Q_M^{T_M}`` (``P_M, Q_M >= 0``) for every bipartition.
A negative optimum rules out every PPT mixture, hence every biseparable state,
and the objective only touches the known marginals.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from . import conic
from .operators import (
    Bipartition,
    DensityOperator,
    HermitianOperator,
    OperatorError,
    PatternTerm,
    QuditRegister,
    bipartitions,
    matrix_to_json,
    ptrace,
    ptranspose,
    two_body_subspace,
)

DETECTION_THRESHOLD = -1e-7
MARGINAL_CONSISTENCY_ATOL = 1e-8


class WitnessError(ValueError):
    pass


class SolverFailure(RuntimeError):
    def __init__(self, solution: conic.SdpSolution, what: str):
        super().__init__(f"{what}: solver status {solution.status} ({solution.message})")
        self.solution = solution


def classify(value: float) -> str:
    if value < DETECTION_THRESHOLD:
        return "detected"
    if value < 0:
        return "undecided"
    return "not-detected"


@dataclass(frozen=True)
class MarginalPattern:
    register: QuditRegister
    pairs: tuple[tuple[int, int], ...]
    triples: tuple[tuple[int, int, int], ...] = ()

    def __post_init__(self):
        pairs = sorted({self.register.check_parties(p) for p in self.pairs})
        if not pairs:
            raise WitnessError("pattern needs at least one pair")
        if any(len(p) != 2 for p in pairs):
            raise WitnessError(f"invalid pairs {pairs}")
        triples = sorted({self.register.check_parties(t) for t in self.triples})
        if any(len(t) != 3 for t in triples):
            raise WitnessError(f"invalid triples {triples}")
        object.__setattr__(self, "pairs", tuple(pairs))
        object.__setattr__(self, "triples", tuple(triples))

    @classmethod
    def all_pairs(cls, register: QuditRegister, with_triples: bool = False) -> "MarginalPattern":
        return cls(register, tuple(register.pairs()), tuple(register.triples()) if with_triples else ())

    @classmethod
    def parse(cls, register: QuditRegister, text: str | Iterable | None) -> "MarginalPattern":
        """Accept ``None``/``"all"``, ``"AB,BC"``, ``"01,12"`` or a list of pairs."""
        if text is None or text == "all":
            return cls.all_pairs(register)
        if isinstance(text, str):
            pairs = []
            for tok in text.replace(" ", "").split(","):
                if len(tok) != 2:
                    raise WitnessError(f"cannot parse pair {tok!r}")
                pairs.append(tuple(party_index(c) for c in tok))
            return cls(register, tuple(pairs))
        return cls(register, tuple(tuple(p) for p in text))

    @property
    def connected(self) -> bool:
        """Every party appears in some pair and the pair graph is connected."""
        n = self.register.n_parties
        seen, frontier = {0}, [0]
        while frontier:
            a = frontier.pop()
            for p, q in self.pairs:
                for x, y in ((p, q), (q, p)):
                    if x == a and y not in seen:
                        seen.add(y)
                        frontier.append(y)
        return len(seen) == n

    def covers(self, support: tuple[int, ...]) -> bool:
        if len(support) <= 1:
            return not support or any(support[0] in p for p in self.pairs)
        return tuple(sorted(support)) in self.pairs

    def labels(self) -> list[str]:
        return [_pair_label(p) for p in self.pairs]

    def to_json(self) -> dict:
        return {"pairs": [list(p) for p in self.pairs], "triples": [list(t) for t in self.triples]}


def party_index(c: str) -> int:
    if c.isdigit():
        return int(c)
    return ord(c.upper()) - ord("A")


def _pair_label(p: Iterable[int]) -> str:
    return "".join(chr(ord("A") + i) for i in p)


@dataclass(frozen=True, eq=False)
class MarginalSet:
    pattern: MarginalPattern
    states: Mapping[tuple[int, int], np.ndarray] = field(repr=False)

    def __post_init__(self):
        reg = self.pattern.register
        states = {}
        for pair in self.pattern.pairs:
            if pair not in self.states:
                raise WitnessError(f"missing marginal for pair {pair}")
            mat = np.asarray(self.states[pair], dtype=complex)
            d = reg.dims[pair[0]] * reg.dims[pair[1]]
            if mat.shape != (d, d):
                raise WitnessError(f"marginal {pair} has shape {mat.shape}, expected {(d, d)}")
            states[pair] = mat
        # overlapping pairs must agree on their shared single-party reductions
        singles: dict[int, np.ndarray] = {}
        for (a, b), mat in states.items():
            dims = (reg.dims[a], reg.dims[b])
            for party, keep in ((a, 0), (b, 1)):
                red = ptrace(mat, dims, [keep])
                if party in singles and np.max(np.abs(singles[party] - red)) > MARGINAL_CONSISTENCY_ATOL:
                    raise WitnessError(f"marginals disagree on party {party}")
                singles.setdefault(party, red)
        object.__setattr__(self, "states", states)

    @classmethod
    def from_state(cls, rho: HermitianOperator | np.ndarray, pattern: MarginalPattern) -> "MarginalSet":
        mat = rho.matrix if isinstance(rho, HermitianOperator) else np.asarray(rho)
        dims = pattern.register.dims
        return cls(pattern, {p: ptrace(mat, dims, p) for p in pattern.pairs})

    @property
    def register(self) -> QuditRegister:
        return self.pattern.register

    def expectation(self, term: PatternTerm) -> float:
        """``tr(B rho)`` for a pattern term, from the pair marginal covering its support."""
        reg = self.register
        if not term.support:
            return 1.0
        for pair, mat in self.states.items():
            if set(term.support) <= set(pair):
                if len(term.support) == 2:
                    op = term.local_matrix(reg)
                else:
                    i = pair.index(term.support[0])
                    loc = term.local_matrix(reg)
                    other = np.eye(reg.dims[pair[1 - i]])
                    op = np.kron(loc, other) if i == 0 else np.kron(other, loc)
                return float(np.einsum("ij,ji->", op, mat).real)
        raise WitnessError(f"no known marginal covers support {term.support}")

    def to_json(self) -> dict:
        reg = self.register
        return {
            "pattern": self.pattern.to_json(),
            "states": {
                _pair_label(p): matrix_to_json(m, [reg.dims[p[0]], reg.dims[p[1]]]) for p, m in self.states.items()
            },
        }


@dataclass(frozen=True, eq=False)
class Witness:
    register: QuditRegister
    pattern: MarginalPattern | None
    terms: tuple[PatternTerm, ...] | None = field(repr=False)
    coefficients: np.ndarray | None = field(repr=False)
    operator: np.ndarray = field(repr=False)
    certificates: Mapping[tuple[int, ...], tuple[np.ndarray, np.ndarray]] = field(repr=False)

    @classmethod
    def from_coefficients(cls, pattern: MarginalPattern, coefficients, certificates=None) -> "Witness":
        terms = tuple(two_body_subspace(pattern.register, pattern))
        coefficients = np.asarray(coefficients, dtype=float)
        op = np.einsum("k,kij->ij", coefficients, np.array([t.operator.matrix for t in terms]))
        return cls(pattern.register, pattern, terms, coefficients, op, dict(certificates or {}))

    def expect(self, rho: HermitianOperator | np.ndarray) -> float:
        mat = rho.matrix if isinstance(rho, HermitianOperator) else np.asarray(rho)
        return float(np.einsum("ij,ji->", self.operator, mat).real)

    def to_json(self) -> dict:
        dims = self.register.dims
        out = {
            "dims": list(dims),
            "pattern": self.pattern.to_json() if self.pattern else None,
            "operator": matrix_to_json(self.operator, dims),
            "certificates": {
                "".join(map(str, M)): {"P": matrix_to_json(P, dims), "Q": matrix_to_json(Q, dims)}
                for M, (P, Q) in self.certificates.items()
            },
        }
        if self.terms is not None:
            out["coefficients"] = {t.label: float(c) for t, c in zip(self.terms, self.coefficients)}
        return out


def _expectations(target, pattern: MarginalPattern, terms) -> np.ndarray:
    if isinstance(target, MarginalSet):
        missing = [p for p in pattern.pairs if p not in target.pattern.pairs]
        if missing:
            raise WitnessError(f"marginal set lacks pairs {missing}")
        if target.register != pattern.register:
            raise WitnessError("marginal set register does not match pattern")
        return np.array([target.expectation(t) for t in terms])
    mat = target.matrix if isinstance(target, HermitianOperator) else np.asarray(target)
    if isinstance(target, HermitianOperator) and target.register != pattern.register:
        raise WitnessError("state register does not match pattern")
    if mat.shape[0] != pattern.register.total_dim:
        raise WitnessError("state dimension does not match pattern register")
    return np.array([np.einsum("ij,ji->", t.operator.matrix, mat).real for t in terms])


def _decomposability(prog: conic.ConicProgram, W: conic.Affine, register: QuditRegister):
    D = register.total_dim
    for bp in bipartitions(register):
        tag = "".join(map(str, bp.M))
        Q = prog.hermitian(f"Q_{tag}", D)
        prog.add_psd(Q, f"Q_{tag}")
        prog.add_psd(W - Q.apply(lambda a, M=bp.M: ptranspose(a, register.dims, M)), f"P_{tag}")


def _psd_part(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.conj().T) / 2)
    return (vecs * np.clip(vals, 0, None)) @ vecs.conj().T


def repair_certificates(W_mat: np.ndarray, Q_mats: Mapping[tuple[int, ...], np.ndarray],
                        register: QuditRegister) -> tuple[float, dict]:
    """Turn approximate solver output into an exactly decomposable witness.

    Each ``Q_M`` is projected onto the PSD cone and ``P_M = W - Q_M^{T_M}`` is
    recomputed. If the worst ``P_M`` eigenvalue is ``-delta < 0``, the witness
    ``(W + delta 1) / (1 + delta D)`` with ``P_M + delta 1`` and ``Q_M`` (both
    rescaled) is valid and keeps unit trace. Returns ``delta`` and the
    certificates for ``W + delta 1`` before rescaling.
    """
    D = register.total_dim
    certs, delta = {}, 0.0
    for M, Q in Q_mats.items():
        Q = _psd_part(Q)
        P = W_mat - ptranspose(Q, register.dims, M)
        delta = max(delta, -float(np.linalg.eigvalsh((P + P.conj().T) / 2)[0]))
        certs[M] = (P, Q)
    delta = max(delta, 0.0)
    if delta > 0:
        # a touch above delta so rounding cannot leave a negative eigenvalue
        delta *= 1 + 1e-9
        certs = {M: (P + delta * np.eye(D), Q) for M, (P, Q) in certs.items()}
    return delta, certs


def _repaired(sol: conic.SdpSolution, W_mat: np.ndarray, register: QuditRegister):
    Qs = {bp.M: sol.values[f"Q_{''.join(map(str, bp.M))}"] for bp in bipartitions(register)}
    delta, certs = repair_certificates(W_mat, Qs, register)
    scale = 1.0 + delta * register.total_dim
    op = (W_mat + delta * np.eye(register.total_dim)) / scale
    return delta, scale, op, {M: (P / scale, Q / scale) for M, (P, Q) in certs.items()}


def build_witness_program(target, pattern: MarginalPattern) -> tuple[conic.ConicProgram, tuple[PatternTerm, ...]]:
    """Witness program restricted to the pattern; the objective uses marginals only."""
    reg = pattern.register
    terms = tuple(two_body_subspace(reg, pattern))
    expect = _expectations(target, pattern, terms)
    stack = np.moveaxis(np.array([t.operator.matrix for t in terms]), 0, -1)
    prog = conic.ConicProgram()
    w = prog.real("w", len(terms))
    W = conic.Affine(np.zeros(stack.shape[:2]), {"w": stack})
    prog.add_equality(W.trace(), 1.0)
    _decomposability(prog, W, reg)
    prog.minimize(w.contract(expect))
    return prog, terms


def min_witness_value(target, pattern: MarginalPattern, *, tolerances=None, backend=None) -> tuple[float, Witness]:
    """Optimal decomposable witness supported on ``pattern`` for ``target``.

    ``target`` is a global state or a ``MarginalSet``; only the pattern
    marginals enter the objective either way.
    """
    prog, terms = build_witness_program(target, pattern)
    sol = conic.solve(prog, tolerances, backend)
    if not sol.optimal:
        raise SolverFailure(sol, "witness program")
    coeffs = np.array(sol.values["w"], dtype=float)
    op = np.einsum("k,kij->ij", coeffs, np.array([t.operator.matrix for t in terms]))
    op = (op + op.conj().T) / 2
    delta, scale, op, certs = _repaired(sol, op, pattern.register)
    coeffs[0] += delta  # terms[0] is the identity
    coeffs /= scale
    wit = Witness(pattern.register, pattern, terms, coeffs, op, certs)
    return float(coeffs @ _expectations(target, pattern, terms)), wit


def min_witness_value_unrestricted(target: HermitianOperator, *, tolerances=None, backend=None) -> tuple[float, Witness]:
    """Same program with ``W`` ranging over all Hermitian operators."""
    reg = target.register
    prog = conic.ConicProgram()
    W = prog.hermitian("W", reg.total_dim)
    prog.add_equality(W.trace(), 1.0)
    _decomposability(prog, W, reg)
    prog.minimize(W.inner(target.matrix))
    sol = conic.solve(prog, tolerances, backend)
    if not sol.optimal:
        raise SolverFailure(sol, "unrestricted witness program")
    op = (sol.values["W"] + sol.values["W"].conj().T) / 2
    _, _, op, certs = _repaired(sol, op, reg)
    return float(np.einsum("ij,ji->", op, target.matrix).real), Witness(reg, None, None, None, op, certs)


def witness_value(W: Witness, marginals: MarginalSet) -> float:
    """``tr(W rho)`` evaluated from pair marginals alone."""
    if W.terms is None:
        raise WitnessError("an unrestricted witness cannot be evaluated from marginals")
    for t in W.terms:
        if len(t.support) == 2 and t.support not in marginals.pattern.pairs:
            raise WitnessError(f"witness uses pair {t.support} missing from the marginals")
    return float(sum(c * marginals.expectation(t) for t, c in zip(W.terms, W.coefficients)))


@dataclass
class WitnessReport:
    trace_residual: float
    subspace_residual: float
    decomposition: dict[str, dict[str, float]]
    trace_tol: float = 1e-8
    subspace_tol: float = 1e-8
    split_tol: float = 1e-7
    psd_tol: float = 1e-7

    @property
    def passed(self) -> bool:
        if self.trace_residual > self.trace_tol or self.subspace_residual > self.subspace_tol:
            return False
        return all(
            d["split_residual"] <= self.split_tol and d["min_eig_P"] >= -self.psd_tol and d["min_eig_Q"] >= -self.psd_tol
            for d in self.decomposition.values()
        )

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "trace_residual": self.trace_residual,
            "subspace_residual": self.subspace_residual,
            "decomposition": self.decomposition,
        }


def validate_witness(W: Witness) -> WitnessReport:
    """Re-check every witness invariant from the stored matrices alone."""
    reg = W.register
    op = W.operator
    trace_res = abs(np.trace(op).real - 1.0)
    if W.pattern is not None:
        terms = two_body_subspace(reg, W.pattern)
        proj = np.zeros_like(op)
        for t in terms:
            B = t.operator.matrix
            proj += np.einsum("ij,ji->", B, op) / np.einsum("ij,ji->", B, B) * B
        sub_res = float(np.linalg.norm(op - proj))
    else:
        sub_res = 0.0
    decomp = {}
    for bp in bipartitions(reg):
        P, Q = W.certificates.get(bp.M, (None, None))
        if P is None:
            decomp[bp.label()] = {"split_residual": float("inf"), "min_eig_P": float("-inf"), "min_eig_Q": float("-inf")}
            continue
        split = float(np.linalg.norm(op - P - ptranspose(Q, reg.dims, bp.M)))
        decomp[bp.label()] = {
            "split_residual": split,
            "min_eig_P": float(np.linalg.eigvalsh((P + P.conj().T) / 2)[0]),
            "min_eig_Q": float(np.linalg.eigvalsh((Q + Q.conj().T) / 2)[0]),
        }
    return WitnessReport(float(trace_res), sub_res, decomp)


def trivial_witness(pattern: MarginalPattern) -> Witness:
    """``W = 1/D`` with the certificates ``P_M = W, Q_M = 0``."""
    reg = pattern.register
    D = reg.total_dim
    coeffs = np.zeros(len(two_body_subspace(reg, pattern)))
    coeffs[0] = 1.0 / D
    op = np.eye(D, dtype=complex) / D
    certs = {bp.M: (op.copy(), np.zeros((D, D), dtype=complex)) for bp in bipartitions(reg)}
    return Witness.from_coefficients(pattern, coeffs, certs)
