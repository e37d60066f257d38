import numpy as np
import pytest

from margent import catalog, conic
from margent.operators import DensityOperator, OperatorError, QuditRegister
from margent.statesearch import (
    ConstraintSet,
    MeasurementDirection,
    PostMeasurementConstraint,
    constraint_report,
    default_post_measurement,
    min_state_for_witness,
    post_measurement_state,
    sample_measurement_directions,
)
from margent.witness import MarginalPattern, SolverFailure, min_witness_value, trivial_witness

Q3 = QuditRegister.qubits(3)


@pytest.fixture(scope="module")
def n3_witness():
    e = catalog.build("rho_n3")
    return min_witness_value(e.state, MarginalPattern.all_pairs(e.register))[1]


class TestDirections:
    @pytest.mark.parametrize("count", [50, 334])
    def test_fibonacci_spread(self, count):
        dirs = sample_measurement_directions(Q3, 0, count)
        assert len(dirs) == count
        B = np.array([d.bloch for d in dirs])
        np.testing.assert_allclose(np.linalg.norm(B, axis=1), 1.0)
        cos = np.clip(B @ B.T, -1, 1)
        np.fill_diagonal(cos, -1)
        assert np.degrees(np.arccos(cos.max())) > 3.0
        assert B[0] == pytest.approx([0, 0, 1]) and B[-1][2] == pytest.approx(-1)

    def test_projector(self):
        d = MeasurementDirection(0, np.pi / 2, 0.0)
        np.testing.assert_allclose(d.projector, np.full((2, 2), 0.5), atol=1e-12)

    def test_default_split(self):
        cons = default_post_measurement(Q3, 1000, 1e-4)
        counts = [sum(c.direction.party == p for c in cons) for p in range(3)]
        assert sum(counts) == 1000 and max(counts) - min(counts) <= 1

    def test_errors(self):
        with pytest.raises(OperatorError):
            sample_measurement_directions(Q3, 0, 0)
        with pytest.raises(OperatorError):
            sample_measurement_directions(QuditRegister((3, 3)), 0, 4)
        with pytest.raises(OperatorError):
            PostMeasurementConstraint(MeasurementDirection(0, 0, 0), 0.0)

    def test_post_measurement_state(self):
        ghz = catalog.build("ghz3").state
        cond = post_measurement_state(ghz, MeasurementDirection(2, np.pi / 2, 0.0))
        assert cond.trace() == pytest.approx(0.5)
        assert cond.register.dims == (2, 2)


class TestStateProgram:
    def test_trivial_witness_value(self):
        W = trivial_witness(MarginalPattern.all_pairs(Q3))
        value, rho = min_state_for_witness(W)
        assert value == pytest.approx(1 / 8, abs=1e-8)

    def test_target_is_feasible_so_value_is_lower(self, n3_witness):
        rho0 = catalog.build("rho_n3").state
        value, rho = min_state_for_witness(n3_witness)
        assert value <= n3_witness.expect(rho0) + 1e-8
        assert isinstance(rho, DensityOperator)
        assert constraint_report(rho, ConstraintSet())["worst"] >= -1e-7

    def test_unconstrained_pairs_reach_lower(self, n3_witness):
        constrained, _ = min_state_for_witness(n3_witness)
        loose, _ = min_state_for_witness(n3_witness, ConstraintSet(two_body_ppt=()))
        assert loose <= constrained + 1e-8
        assert loose == pytest.approx(np.linalg.eigvalsh(n3_witness.operator)[0], abs=1e-6)

    def test_post_measurement_constraints_hold(self, n3_witness):
        cons = ConstraintSet(post_measurement=default_post_measurement(Q3, 30, 1e-4))
        value, rho = min_state_for_witness(n3_witness, cons)
        rep = constraint_report(rho, cons)
        assert rep["post_measurement_margin"] >= -1e-7
        assert cons.to_json()["post_measurement"]["count"] == 30

    def test_infeasible_margin(self, n3_witness):
        cons = ConstraintSet(post_measurement=default_post_measurement(Q3, 6, 0.5))
        with pytest.raises(SolverFailure) as info:
            min_state_for_witness(n3_witness, cons)
        assert info.value.solution.status == conic.INFEASIBLE

    def test_triple_constraints(self):
        reg = QuditRegister.qubits(4)
        W = trivial_witness(MarginalPattern.all_pairs(reg))
        cons = ConstraintSet(three_body_ppt=tuple(reg.triples()))
        value, rho = min_state_for_witness(W, cons)
        assert value == pytest.approx(1 / 16, abs=1e-8)
        assert set(constraint_report(rho, cons)["triples"]) == {"012", "013", "023", "123"}

    def test_wrong_register(self, n3_witness):
        with pytest.raises(OperatorError):
            min_state_for_witness(n3_witness, register=QuditRegister.qubits(4))
