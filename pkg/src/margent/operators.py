"""Multi-qudit register bookkeeping and operator algebra.

Two layers live here. The array layer (``ptrace``, ``ptranspose``,
``project_party``) works on plain numpy arrays of shape ``(D, D, *batch)``;
trailing batch axes are carried through untouched, which is what lets the
conic layer push whole coefficient tensors through the same maps. The typed
layer (``HermitianOperator``, ``DensityOperator``, ``PureState``) wraps a
matrix together with its ``QuditRegister`` and enforces the invariants.
"""

from __future__ import annotations

import itertools
import string
from dataclasses import dataclass, field
from functools import lru_cache, reduce
from typing import Iterable, Sequence

import numpy as np

HERMITIAN_ATOL = 1e-9
TRACE_ATOL = 1e-10
PSD_ATOL = 1e-9
NORM_ATOL = 1e-12


class OperatorError(ValueError):
    """Raised when an operator violates a structural invariant."""


@dataclass(frozen=True)
class QuditRegister:
    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims:
            raise OperatorError("register needs at least one party")
        if any(d < 2 for d in dims):
            raise OperatorError(f"local dimensions must be >= 2, got {dims}")
        object.__setattr__(self, "dims", dims)

    @classmethod
    def qubits(cls, n: int) -> "QuditRegister":
        return cls((2,) * n)

    @property
    def n_parties(self) -> int:
        return len(self.dims)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.dims))

    @property
    def parties(self) -> tuple[int, ...]:
        return tuple(range(len(self.dims)))

    def sub(self, parties: Iterable[int]) -> "QuditRegister":
        return QuditRegister(tuple(self.dims[p] for p in sorted(parties)))

    def check_parties(self, parties: Iterable[int]) -> tuple[int, ...]:
        out = tuple(sorted(set(int(p) for p in parties)))
        for p in out:
            if not 0 <= p < self.n_parties:
                raise OperatorError(f"party {p} not in register of {self.n_parties} parties")
        return out

    def pairs(self) -> list[tuple[int, int]]:
        return list(itertools.combinations(self.parties, 2))

    def triples(self) -> list[tuple[int, int, int]]:
        return list(itertools.combinations(self.parties, 3))


# ---------------------------------------------------------------------------
# array layer
# ---------------------------------------------------------------------------

def _letters(n: int) -> list[str]:
    pool = string.ascii_letters
    if n > len(pool):
        raise OperatorError("too many tensor indices")
    return list(pool[:n])


def ptranspose(arr: np.ndarray, dims: Sequence[int], parties: Iterable[int]) -> np.ndarray:
    """Partial transpose of ``arr`` (shape ``(D, D, *batch)``) on ``parties``."""
    parties = sorted(set(parties))
    if not parties:
        return arr.copy()
    n = len(dims)
    batch = arr.shape[2:]
    t = arr.reshape(tuple(dims) + tuple(dims) + batch)
    axes = list(range(t.ndim))
    for p in parties:
        axes[p], axes[n + p] = axes[n + p], axes[p]
    D = int(np.prod(dims))
    return np.ascontiguousarray(t.transpose(axes)).reshape((D, D) + batch)


def ptrace(arr: np.ndarray, dims: Sequence[int], keep: Iterable[int]) -> np.ndarray:
    """Reduce ``arr`` (shape ``(D, D, *batch)``) to the parties in ``keep``."""
    keep = sorted(set(keep))
    n = len(dims)
    if keep == list(range(n)):
        return arr.copy()
    batch = arr.shape[2:]
    letters = _letters(2 * n)
    rows, cols = letters[:n], letters[n:]
    cols = [cols[i] if i in keep else rows[i] for i in range(n)]
    out = [rows[i] for i in keep] + [cols[i] for i in keep]
    subscripts = "".join(rows) + "".join(cols) + "...->" + "".join(out) + "..."
    t = arr.reshape(tuple(dims) + tuple(dims) + batch)
    d_keep = int(np.prod([dims[i] for i in keep]))
    return np.einsum(subscripts, t).reshape((d_keep, d_keep) + batch)


def project_party(arr: np.ndarray, dims: Sequence[int], party: int, vec: np.ndarray) -> np.ndarray:
    """Return ``<c| arr |c>`` with ``|c>`` acting on one party (unnormalized)."""
    n = len(dims)
    batch = arr.shape[2:]
    letters = _letters(2 * n + 2)
    rows, cols = letters[:n], letters[n:2 * n]
    subscripts = (
        "".join(rows) + "".join(cols) + "...,"
        + rows[party] + "," + cols[party] + "->"
        + "".join(r for i, r in enumerate(rows) if i != party)
        + "".join(c for i, c in enumerate(cols) if i != party) + "..."
    )
    t = arr.reshape(tuple(dims) + tuple(dims) + batch)
    out = np.einsum(subscripts, t, np.conj(vec), vec)
    d_rest = int(np.prod(dims)) // dims[party]
    return out.reshape((d_rest, d_rest) + batch)


def hermitian_part(mat: np.ndarray, atol: float = HERMITIAN_ATOL) -> np.ndarray:
    """Project onto the Hermitian part, rejecting asymmetry above ``atol``."""
    mat = np.asarray(mat, dtype=complex)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise OperatorError(f"expected a square matrix, got shape {mat.shape}")
    skew = np.max(np.abs(mat - mat.conj().T)) if mat.size else 0.0
    if skew > atol:
        raise OperatorError(f"matrix is not Hermitian (asymmetry {skew:.3e})")
    return (mat + mat.conj().T) / 2


def real_symmetric_embedding(mat: np.ndarray) -> np.ndarray:
    """``[[Re H, -Im H], [Im H, Re H]]`` for arrays of shape ``(m, m, *batch)``."""
    re, im = mat.real, mat.imag
    return np.concatenate(
        [np.concatenate([re, -im], axis=1), np.concatenate([im, re], axis=1)], axis=0
    )


# ---------------------------------------------------------------------------
# typed layer
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HermitianOperator:
    register: QuditRegister
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        mat = hermitian_part(self.matrix)
        D = self.register.total_dim
        if mat.shape != (D, D):
            raise OperatorError(f"matrix shape {mat.shape} does not match register dimension {D}")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @property
    def dims(self) -> tuple[int, ...]:
        return self.register.dims

    def eigvalsh(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def expect(self, other: "HermitianOperator | np.ndarray") -> float:
        """Trace inner product ``tr(self @ other)``."""
        mat = other.matrix if isinstance(other, HermitianOperator) else np.asarray(other)
        return float(np.einsum("ij,ji->", self.matrix, mat).real)

    def to_json(self) -> dict:
        return matrix_to_json(self.matrix, self.dims)


class DensityOperator(HermitianOperator):
    """Hermitian, positive semidefinite, unit trace."""

    def __post_init__(self):
        super().__post_init__()
        tr = np.trace(self.matrix).real
        if abs(tr - 1) > TRACE_ATOL:
            raise OperatorError(f"trace {tr!r} differs from 1")
        lo = np.linalg.eigvalsh(self.matrix)[0]
        if lo < -PSD_ATOL:
            raise OperatorError(f"minimum eigenvalue {lo:.3e} is negative")

    @classmethod
    def from_pure(cls, state: "PureState") -> "DensityOperator":
        v = state.amplitudes
        return cls(state.register, np.outer(v, v.conj()))

    @classmethod
    def maximally_mixed(cls, register: QuditRegister) -> "DensityOperator":
        D = register.total_dim
        return cls(register, np.eye(D) / D)

    @classmethod
    def repaired(cls, register: QuditRegister, matrix: np.ndarray) -> "DensityOperator":
        """Clip solver round-off (tiny negative eigenvalues, trace drift)."""
        mat = np.asarray(matrix, dtype=complex)
        mat = (mat + mat.conj().T) / 2
        vals, vecs = np.linalg.eigh(mat)
        if vals[0] < -1e-6:
            raise OperatorError(f"cannot repair eigenvalue {vals[0]:.3e}")
        vals = np.clip(vals, 0.0, None)
        mat = (vecs * vals) @ vecs.conj().T
        return cls(register, mat / np.trace(mat).real)

    def purity(self) -> float:
        return float(np.einsum("ij,ji->", self.matrix, self.matrix).real)

    def rank(self, tol: float = 1e-10) -> int:
        return int(np.sum(self.eigvalsh() > tol))


@dataclass(frozen=True, eq=False)
class PureState:
    register: QuditRegister
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.amplitudes, dtype=complex).ravel()
        if v.shape != (self.register.total_dim,):
            raise OperatorError("amplitude vector does not match register")
        norm = np.linalg.norm(v)
        if abs(norm ** 2 - 1) > NORM_ATOL:
            raise OperatorError(f"squared norm {norm ** 2!r} differs from 1")
        v.setflags(write=False)
        object.__setattr__(self, "amplitudes", v)

    @classmethod
    def from_terms(cls, register: QuditRegister, terms: dict[str, complex]) -> "PureState":
        """Build from ``{"0101": amplitude}``; digits are local levels in party order."""
        v = np.zeros(register.total_dim, dtype=complex)
        for key, amp in terms.items():
            v[basis_index(register, key)] += amp
        return cls(register, v)

    def density(self) -> DensityOperator:
        return DensityOperator.from_pure(self)


def basis_index(register: QuditRegister, digits: str | Sequence[int]) -> int:
    levels = [int(c) for c in digits]
    if len(levels) != register.n_parties:
        raise OperatorError(f"basis label {digits!r} has wrong length")
    return int(np.ravel_multi_index(levels, register.dims))


@dataclass(frozen=True)
class Bipartition:
    register: QuditRegister
    M: tuple[int, ...]

    def __post_init__(self):
        M = self.register.check_parties(self.M)
        if not M or len(M) == self.register.n_parties:
            raise OperatorError("bipartition side must be a nonempty proper subset")
        if 0 not in M:
            M = tuple(p for p in self.register.parties if p not in M)
        object.__setattr__(self, "M", M)

    @property
    def complement(self) -> tuple[int, ...]:
        return tuple(p for p in self.register.parties if p not in self.M)

    def label(self) -> str:
        return "".join(map(str, self.M)) + "|" + "".join(map(str, self.complement))


def bipartitions(register: QuditRegister) -> list[Bipartition]:
    """All ``2**(N-1) - 1`` splits, canonical form with party 0 in ``M``."""
    rest = register.parties[1:]
    out = []
    for r in range(len(rest)):
        for extra in itertools.combinations(rest, r):
            out.append(Bipartition(register, (0,) + extra))
    return out


def tensor_product(factors: Sequence[HermitianOperator]) -> HermitianOperator:
    if not factors:
        raise OperatorError("tensor_product needs at least one factor")
    dims = tuple(d for f in factors for d in f.dims)
    mat = reduce(np.kron, [f.matrix for f in factors])
    cls = DensityOperator if all(isinstance(f, DensityOperator) for f in factors) else HermitianOperator
    return cls(QuditRegister(dims), mat)


def partial_trace(op: HermitianOperator, keep: Iterable[int]) -> HermitianOperator:
    keep = op.register.check_parties(keep)
    if not keep:
        raise OperatorError("partial_trace needs a nonempty set of kept parties")
    mat = ptrace(op.matrix, op.dims, keep)
    cls = DensityOperator if isinstance(op, DensityOperator) else HermitianOperator
    if cls is DensityOperator:
        mat = mat / np.trace(mat).real
    return cls(op.register.sub(keep), mat)


def partial_transpose(op: HermitianOperator, M: Iterable[int]) -> HermitianOperator:
    M = op.register.check_parties(M)
    return HermitianOperator(op.register, ptranspose(op.matrix, op.dims, M))


def min_pt_eigenvalue(mat: np.ndarray, dims: Sequence[int], M: Iterable[int]) -> float:
    return float(np.linalg.eigvalsh(ptranspose(mat, dims, M))[0])


def mix_with_white_noise(rho: DensityOperator, p: float) -> DensityOperator:
    if not 0.0 <= p <= 1.0:
        raise OperatorError(f"noise fraction {p} outside [0, 1]")
    D = rho.register.total_dim
    return DensityOperator(rho.register, (1 - p) * rho.matrix + p * np.eye(D) / D)


# ---------------------------------------------------------------------------
# operator bases
# ---------------------------------------------------------------------------

PAULI = (
    np.eye(2, dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)


@dataclass(frozen=True, eq=False)
class OperatorBasis:
    dim: int
    elements: tuple[np.ndarray, ...] = field(repr=False)

    def __len__(self):
        return len(self.elements)

    def norms(self) -> np.ndarray:
        return np.array([np.trace(b @ b).real for b in self.elements])

    def expand(self, mat: np.ndarray) -> np.ndarray:
        """Real coefficients ``c`` with ``mat = sum_i c_i B_i`` for Hermitian ``mat``."""
        return np.array([np.trace(b @ mat).real for b in self.elements]) / self.norms()

    def synthesize(self, coeffs: Sequence[float]) -> np.ndarray:
        return np.einsum("k,kij->ij", np.asarray(coeffs), np.array(self.elements))


@lru_cache(maxsize=None)
def operator_basis(d: int) -> OperatorBasis:
    """Identity plus Pauli matrices (d=2) or generalized Gell-Mann matrices."""
    if d < 2:
        raise OperatorError(f"local dimension must be >= 2, got {d}")
    if d == 2:
        return OperatorBasis(2, PAULI)
    els = [np.eye(d, dtype=complex)]
    for j in range(d):
        for k in range(j + 1, d):
            s = np.zeros((d, d), dtype=complex)
            s[j, k] = s[k, j] = 1
            els.append(s)
            a = np.zeros((d, d), dtype=complex)
            a[j, k], a[k, j] = -1j, 1j
            els.append(a)
    for l in range(1, d):
        diag = np.zeros(d)
        diag[:l] = 1
        diag[l] = -l
        els.append(np.diag(diag * np.sqrt(2 / (l * (l + 1)))).astype(complex))
    for e in els:
        e.setflags(write=False)
    return OperatorBasis(d, tuple(els))


@dataclass(frozen=True, eq=False)
class PatternTerm:
    """Product of local basis elements; ``local[i]`` acts on ``support[i]``."""

    support: tuple[int, ...]
    local: tuple[int, ...]
    operator: HermitianOperator = field(repr=False)

    @property
    def label(self) -> str:
        if not self.support:
            return "I"
        return "*".join(f"{p}:{k}" for p, k in zip(self.support, self.local))

    def local_matrix(self, register: QuditRegister) -> np.ndarray:
        """The non-identity factor on ``support`` (1x1 identity for the global identity)."""
        mats = [operator_basis(register.dims[p]).elements[k] for p, k in zip(self.support, self.local)]
        return reduce(np.kron, mats, np.eye(1, dtype=complex))


def embed_local(register: QuditRegister, support: Sequence[int], local: Sequence[int]) -> np.ndarray:
    mats = []
    for p, d in enumerate(register.dims):
        if p in support:
            mats.append(operator_basis(d).elements[local[list(support).index(p)]])
        else:
            mats.append(np.eye(d, dtype=complex))
    return reduce(np.kron, mats)


def two_body_subspace(register: QuditRegister, pattern) -> list[PatternTerm]:
    """Trace-orthogonal product basis of operators supported inside the pattern's pairs.

    ``pattern`` is anything with a ``pairs`` attribute, or an iterable of pairs.
    Terms are ordered by support size, then support, then local indices.
    """
    pairs = getattr(pattern, "pairs", pattern)
    pairs = [register.check_parties(p) for p in pairs]
    if not pairs:
        raise OperatorError("pattern has no pairs")
    for p in pairs:
        if len(p) != 2:
            raise OperatorError(f"invalid pair {p}")
    supports = {()}
    for a, b in pairs:
        supports.update({(a,), (b,), (a, b)})
    terms = []
    for support in sorted(supports, key=lambda s: (len(s), s)):
        ranges = [range(1, register.dims[p] ** 2) for p in support]
        for local in itertools.product(*ranges):
            mat = embed_local(register, support, local)
            terms.append(PatternTerm(support, tuple(local), HermitianOperator(register, mat)))
    return terms


def full_operator_basis(register: QuditRegister) -> list[PatternTerm]:
    """Product basis of the whole operator space."""
    terms = []
    for support_size in range(register.n_parties + 1):
        for support in itertools.combinations(register.parties, support_size):
            ranges = [range(1, register.dims[p] ** 2) for p in support]
            for local in itertools.product(*ranges):
                mat = embed_local(register, support, local)
                terms.append(PatternTerm(support, tuple(local), HermitianOperator(register, mat)))
    return terms


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def matrix_to_json(mat: np.ndarray, dims: Sequence[int]) -> dict:
    mat = np.asarray(mat)
    return {"dims": list(dims), "re": mat.real.tolist(), "im": mat.imag.tolist()}


def matrix_from_json(obj: dict) -> tuple[tuple[int, ...], np.ndarray]:
    try:
        dims = tuple(int(d) for d in obj["dims"])
        mat = np.asarray(obj["re"], dtype=float) + 1j * np.asarray(obj["im"], dtype=float)
    except (KeyError, TypeError) as exc:
        raise OperatorError(f"malformed matrix object: {exc}") from exc
    return dims, mat


def density_from_json(obj: dict) -> DensityOperator:
    dims, mat = matrix_from_json(obj)
    return DensityOperator(QuditRegister(dims), mat)
