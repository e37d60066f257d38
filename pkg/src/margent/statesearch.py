"""Most negative state for a fixed witness, under marginal PPT constraints.

Constraints on the global state ``rho``: PSD, unit trace, every listed pair
marginal PPT, optionally every listed triple marginal PPT across each of its
internal cuts, and optionally a strict PPT margin ``eps`` on unnormalized
post-measurement operators ``<c|rho|c>``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import conic
from .operators import (
    DensityOperator,
    HermitianOperator,
    OperatorError,
    QuditRegister,
    project_party,
    ptrace,
    ptranspose,
)
from .witness import SolverFailure, Witness

GOLDEN_ANGLE = np.pi * (3 - np.sqrt(5))


@dataclass(frozen=True)
class MeasurementDirection:
    party: int
    theta: float
    phi: float

    @property
    def vector(self) -> np.ndarray:
        return np.array([np.cos(self.theta / 2), np.exp(1j * self.phi) * np.sin(self.theta / 2)])

    @property
    def projector(self) -> np.ndarray:
        v = self.vector
        return np.outer(v, v.conj())

    @property
    def bloch(self) -> np.ndarray:
        return np.array([
            np.sin(self.theta) * np.cos(self.phi),
            np.sin(self.theta) * np.sin(self.phi),
            np.cos(self.theta),
        ])


@dataclass(frozen=True)
class PostMeasurementConstraint:
    direction: MeasurementDirection
    eps: float

    def __post_init__(self):
        if self.eps <= 0:
            raise OperatorError("post-measurement margin must be positive")


@dataclass(frozen=True)
class ConstraintSet:
    """``two_body_ppt=None`` means every pair of the register."""

    two_body_ppt: tuple[tuple[int, int], ...] | None = None
    three_body_ppt: tuple[tuple[int, int, int], ...] = ()
    post_measurement: tuple[PostMeasurementConstraint, ...] = field(default=(), repr=False)

    def pairs(self, register: QuditRegister) -> list[tuple[int, int]]:
        if self.two_body_ppt is None:
            return register.pairs()
        return [register.check_parties(p) for p in self.two_body_ppt]

    def to_json(self) -> dict:
        eps = sorted({c.eps for c in self.post_measurement})
        return {
            "two_body_ppt": None if self.two_body_ppt is None else [list(p) for p in self.two_body_ppt],
            "three_body_ppt": [list(t) for t in self.three_body_ppt],
            "post_measurement": {
                "count": len(self.post_measurement),
                "parties": sorted({c.direction.party for c in self.post_measurement}),
                "eps": eps,
            },
        }


def sample_measurement_directions(register: QuditRegister, party: int, count: int) -> list[MeasurementDirection]:
    """Fibonacci lattice on the Bloch sphere, poles included for ``count >= 2``."""
    if count < 1:
        raise OperatorError("count must be positive")
    if register.dims[party] != 2:
        raise OperatorError(f"party {party} is not a qubit")
    if count == 1:
        return [MeasurementDirection(party, 0.0, 0.0)]
    k = np.arange(count)
    z = 1 - 2 * (k + 0.5) / count
    z[0], z[-1] = 1.0, -1.0
    theta = np.arccos(np.clip(z, -1, 1))
    phi = np.mod(k * GOLDEN_ANGLE, 2 * np.pi)
    return [MeasurementDirection(party, float(t), float(p)) for t, p in zip(theta, phi)]


def default_post_measurement(register: QuditRegister, total: int = 1000, eps: float = 1e-4,
                             parties=None) -> tuple[PostMeasurementConstraint, ...]:
    """``total`` directions split as evenly as possible over the measured parties."""
    parties = list(register.parties if parties is None else parties)
    base, extra = divmod(total, len(parties))
    out = []
    for i, p in enumerate(parties):
        n = base + (1 if i >= len(parties) - extra else 0)
        out.extend(PostMeasurementConstraint(d, eps) for d in sample_measurement_directions(register, p, n))
    return tuple(out)


def post_measurement_state(rho: HermitianOperator, direction: MeasurementDirection) -> HermitianOperator:
    """Unnormalized ``<c|rho|c>`` on the remaining parties."""
    reg = rho.register
    if reg.dims[direction.party] != 2:
        raise OperatorError("measurement directions are defined for qubit parties")
    rest = [p for p in reg.parties if p != direction.party]
    mat = project_party(rho.matrix, reg.dims, direction.party, direction.vector)
    return HermitianOperator(reg.sub(rest), mat)


# single-party side of each internal cut of a triple, in local indices
TRIPLE_CUTS = ((0,), (1,), (2,))


def build_state_program(W: Witness | np.ndarray, register: QuditRegister, constraints: ConstraintSet):
    op = W.operator if isinstance(W, Witness) else np.asarray(W)
    if op.shape != (register.total_dim, register.total_dim):
        raise OperatorError("witness does not match register")
    dims = register.dims
    prog = conic.ConicProgram()
    rho = prog.hermitian("rho", register.total_dim)
    prog.add_psd(rho, "rho")
    prog.add_equality(rho.trace(), 1.0)
    for pair in constraints.pairs(register):
        sub = [dims[p] for p in pair]
        marg = rho.apply(lambda a, pair=pair: ptrace(a, dims, pair))
        prog.add_psd(marg.apply(lambda a, sub=sub: ptranspose(a, sub, [0])), f"ppt{pair}")
    for triple in constraints.three_body_ppt:
        triple = register.check_parties(triple)
        sub = [dims[p] for p in triple]
        marg = rho.apply(lambda a, t=triple: ptrace(a, dims, t))
        for side in TRIPLE_CUTS:
            prog.add_psd(marg.apply(lambda a, sub=sub, side=side: ptranspose(a, sub, side)), f"ppt{triple}/{side}")
    for k, pm in enumerate(constraints.post_measurement):
        d = pm.direction
        rest = [dims[p] for p in register.parties if p != d.party]
        cond = rho.apply(lambda a, d=d: project_party(a, dims, d.party, d.vector))
        pt = cond.apply(lambda a, rest=rest: ptranspose(a, rest, [0]))
        prog.add_psd(pt - pm.eps * np.eye(pt.shape[0]), f"pm{k}")
    prog.minimize(rho.inner(op))
    return prog


def min_state_for_witness(W: Witness | np.ndarray, constraints: ConstraintSet | None = None, *,
                          register: QuditRegister | None = None, tolerances=None, backend=None
                          ) -> tuple[float, DensityOperator]:
    """Minimize ``tr(W rho)`` over states obeying ``constraints``.

    Raises ``SolverFailure`` for infeasible constraint sets or solver breakdown.
    """
    constraints = constraints or ConstraintSet()
    register = register or W.register
    prog = build_state_program(W, register, constraints)
    sol = conic.solve(prog, tolerances, backend)
    if not sol.optimal:
        raise SolverFailure(sol, "state program")
    rho = DensityOperator.repaired(register, sol.values["rho"])
    op = W.operator if isinstance(W, Witness) else np.asarray(W)
    return float(np.einsum("ij,ji->", op, rho.matrix).real), rho


def constraint_report(rho: DensityOperator, constraints: ConstraintSet) -> dict:
    """Recompute every constrained PT spectrum outside the solver."""
    reg = rho.register
    dims = reg.dims
    pairs = {}
    for pair in constraints.pairs(reg):
        m = ptrace(rho.matrix, dims, pair)
        pairs["".join(map(str, pair))] = float(np.linalg.eigvalsh(ptranspose(m, [dims[p] for p in pair], [0]))[0])
    triples = {}
    for t in constraints.three_body_ppt:
        m = ptrace(rho.matrix, dims, t)
        sub = [dims[p] for p in t]
        triples["".join(map(str, t))] = min(
            float(np.linalg.eigvalsh(ptranspose(m, sub, side))[0]) for side in TRIPLE_CUTS
        )
    pm_margin = None
    if constraints.post_measurement:
        pm_margin = min(
            float(np.linalg.eigvalsh(ptranspose(post_measurement_state(rho, c.direction).matrix,
                                                [dims[p] for p in reg.parties if p != c.direction.party], [0]))[0]) - c.eps
            for c in constraints.post_measurement
        )
    worst = min(list(pairs.values()) + list(triples.values()) + ([pm_margin] if pm_margin is not None else []))
    return {"pairs": pairs, "triples": triples, "post_measurement_margin": pm_margin, "worst": worst}
