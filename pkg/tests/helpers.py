"""Random states and small utilities shared by the test modules."""

import numpy as np

from margent.operators import DensityOperator, QuditRegister, ptranspose


def random_density(register: QuditRegister, rng: np.random.Generator, rank: int | None = None) -> DensityOperator:
    D = register.total_dim
    rank = rank or D
    g = rng.normal(size=(D, rank)) + 1j * rng.normal(size=(D, rank))
    mat = g @ g.conj().T
    return DensityOperator(register, mat / np.trace(mat).real)


def random_hermitian(D: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.normal(size=(D, D)) + 1j * rng.normal(size=(D, D))
    return (g + g.conj().T) / 2


def random_ppt_state(register: QuditRegister, M, rng: np.random.Generator) -> np.ndarray:
    """A state PPT across ``M``: a random state mixed with white noise until its PT is PSD."""
    rho = random_density(register, rng).matrix
    D = register.total_dim
    lo = np.linalg.eigvalsh(ptranspose(rho, register.dims, M))[0]
    if lo >= 0:
        return rho
    # (1-t) rho + t 1/D has PT eigenvalues >= (1-t) lo + t/D
    t = -lo / (1 / D - lo) + 1e-9
    return (1 - t) * rho + t * np.eye(D) / D


def random_ppt_mixture(register: QuditRegister, bipartitions, rng: np.random.Generator) -> np.ndarray:
    weights = rng.dirichlet(np.ones(len(bipartitions)))
    return sum(w * random_ppt_state(register, bp.M, rng) for w, bp in zip(weights, bipartitions))


def pt_min(mat: np.ndarray, dims, M) -> float:
    return float(np.linalg.eigvalsh(ptranspose(mat, dims, M))[0])
