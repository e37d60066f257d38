"""See-saw search: alternate the witness program and the state program."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .operators import DensityOperator, PureState, QuditRegister, ptrace
from .statesearch import ConstraintSet, constraint_report, min_state_for_witness
from .witness import (
    DETECTION_THRESHOLD,
    MarginalPattern,
    MarginalSet,
    SolverFailure,
    Witness,
    min_witness_value,
    validate_witness,
)

log = logging.getLogger(__name__)

SUCCESS = "success"
STALLED = "stalled"
INFEASIBLE = "infeasible"
SOLVER_FAILURE = "solver-failure"


@dataclass
class SearchConfig:
    register: QuditRegister
    pattern: MarginalPattern
    constraints: ConstraintSet = field(default_factory=ConstraintSet)
    seed: int = 0
    max_rounds: int = 50
    stall_tol: float = 1e-6
    threshold: float = DETECTION_THRESHOLD
    polish_rounds: int = 10

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.pattern.register != self.register:
            raise ValueError("pattern register does not match")

    def to_json(self) -> dict:
        return {
            "dims": list(self.register.dims),
            "pattern": self.pattern.to_json(),
            "constraints": self.constraints.to_json(),
            "seed": self.seed,
            "max_rounds": self.max_rounds,
            "stall_tol": self.stall_tol,
            "threshold": self.threshold,
            "polish_rounds": self.polish_rounds,
        }


@dataclass
class SearchOutcome:
    status: str
    state: DensityOperator | None
    witness: Witness | None
    history: list[dict] = field(default_factory=list)
    rounds_to_success: int | None = None
    best_value: float = float("inf")
    verification: dict = field(default_factory=dict)
    message: str = ""

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "rounds_to_success": self.rounds_to_success,
            "best_value": self.best_value,
            "history": self.history,
            "verification": self.verification,
            "message": self.message,
            "state": self.state.to_json() if self.state is not None else None,
            "witness": self.witness.to_json() if self.witness is not None else None,
        }


def random_pure_seed(register: QuditRegister, seed: int) -> DensityOperator:
    """Haar-random pure state from normalized complex Gaussian amplitudes."""
    rng = np.random.default_rng(seed)
    D = register.total_dim
    v = rng.normal(size=D) + 1j * rng.normal(size=D)
    v /= np.linalg.norm(v)
    return PureState(register, v).density()


def verify_outcome(state: DensityOperator, witness: Witness, config: SearchConfig) -> dict:
    """Re-check a certified example from scratch."""
    report = validate_witness(witness)
    constraints = constraint_report(state, config.constraints)
    marg_value = None
    if witness.terms is not None:
        from .witness import witness_value

        marg_value = witness_value(witness, MarginalSet.from_state(state, config.pattern))
    ok = report.passed and constraints["worst"] >= -1e-7 and marg_value is not None and marg_value < config.threshold
    return {"witness": report.to_json(), "constraints": constraints, "marginal_value": marg_value, "passed": bool(ok)}


def run_seesaw(config: SearchConfig, *, seed_state: DensityOperator | None = None, tolerances=None,
               backend=None) -> SearchOutcome:
    """Alternate witness and state optimization from a random pure seed.

    Success is declared the first round the state program returns a value
    below ``config.threshold``; up to ``polish_rounds`` further rounds then
    keep the state with the most negative marginal-witness value.
    """
    rho = seed_state if seed_state is not None else random_pure_seed(config.register, config.seed)
    history: list[dict] = []
    previous = None
    success_round = None
    best = (float("inf"), None, None)
    total = config.max_rounds
    rnd = 0
    try:
        while rnd < total:
            rnd += 1
            v1, W = min_witness_value(rho, config.pattern, tolerances=tolerances, backend=backend)
            if success_round is not None and v1 < best[0]:
                best = (v1, rho, W)
            v2, rho_next = min_state_for_witness(W, config.constraints, tolerances=tolerances, backend=backend)
            history.append({"round": rnd, "step1": v1, "step2": v2})
            log.debug("round %d: step1=%.6g step2=%.6g", rnd, v1, v2)
            if success_round is None:
                if v2 < config.threshold:
                    success_round = rnd
                    total = rnd + config.polish_rounds
                elif previous is not None and abs(previous - v2) < config.stall_tol:
                    return SearchOutcome(STALLED, rho_next, W, history, None, min(h["step2"] for h in history),
                                         message=f"no improvement above {config.stall_tol} in round {rnd}")
            previous = v2
            rho = rho_next
        if success_round is None:
            return SearchOutcome(STALLED, rho, None, history, None, min(h["step2"] for h in history),
                                 message="max_rounds reached without a negative state value")
        # score the last state too
        v1, W = min_witness_value(rho, config.pattern, tolerances=tolerances, backend=backend)
        if v1 < best[0]:
            best = (v1, rho, W)
    except SolverFailure as exc:
        status = INFEASIBLE if exc.solution.status == "infeasible" else SOLVER_FAILURE
        return SearchOutcome(status, None, None, history, success_round, message=str(exc))
    value, state, witness = best
    outcome = SearchOutcome(SUCCESS, state, witness, history, success_round, value)
    outcome.verification = verify_outcome(state, witness, config)
    return outcome


def marginal_fingerprint(state: DensityOperator) -> dict[str, list[float]]:
    """Sorted pair-marginal spectra; invariant under local unitaries."""
    reg = state.register
    return {
        "".join(map(str, p)): np.round(np.sort(np.linalg.eigvalsh(ptrace(state.matrix, reg.dims, p))), 6).tolist()
        for p in reg.pairs()
    }
