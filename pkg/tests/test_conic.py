import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from margent import conic
from margent.conic import Affine, ConicError, ConicProgram, Tolerances, get_backend, solve

SZ = np.diag([1.0, -1.0]).astype(complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)

SOLVERS = ["clarabel", "scs", "toy"]


def lambda_max_program(H):
    """min t  s.t.  t*1 - H >= 0  (optimum: largest eigenvalue of H)."""
    prog = ConicProgram()
    t = prog.real("t", 1).apply(lambda a: a[0])
    prog.add_psd(t.times(np.eye(H.shape[0])) - H, "gap")
    prog.minimize(t)
    return prog


@pytest.mark.parametrize("backend", SOLVERS)
def test_largest_eigenvalue(backend):
    sol = solve(lambda_max_program(SZ + 0.5 * SX), backend=get_backend(backend))
    assert sol.optimal
    assert sol.objective == pytest.approx(np.sqrt(1.25), abs=1e-5)


@pytest.mark.parametrize("backend", SOLVERS)
def test_min_trace_with_fixed_entry(backend):
    prog = ConicProgram()
    X = prog.hermitian("X", 2)
    prog.add_psd(X, "X")
    prog.add_equality(X.apply(lambda a: a[0, 0]), 1.0)
    prog.minimize(X.trace())
    sol = solve(prog, backend=get_backend(backend))
    assert sol.optimal
    assert sol.objective == pytest.approx(1.0, abs=1e-5)
    np.testing.assert_allclose(sol.values["X"], np.diag([1.0, 0.0]), atol=1e-3)


def test_complex_coupling_needs_embedding():
    """min Re tr(C X) with complex C, X a 2x2 state: the optimum is lambda_min(C)."""
    C = np.array([[0, -1j], [1j, 0]]) + 0.3 * SZ
    prog = ConicProgram()
    X = prog.hermitian("X", 2)
    prog.add_psd(X)
    prog.add_equality(X.trace(), 1.0)
    prog.minimize(X.inner(C))
    for b in SOLVERS:
        sol = solve(prog, backend=get_backend(b))
        assert sol.objective == pytest.approx(np.linalg.eigvalsh(C)[0], abs=1e-5), b


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_toy_agrees_with_clarabel(seed):
    rng = np.random.default_rng(seed)
    H = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    H = (H + H.conj().T) / 2
    prog = lambda_max_program(H)
    a = solve(prog, backend=get_backend("clarabel")).objective
    b = solve(prog, backend=get_backend("toy")).objective
    assert a == pytest.approx(np.linalg.eigvalsh(H)[-1], abs=1e-7)
    assert b == pytest.approx(a, abs=1e-5)


def test_weak_duality_and_residuals():
    rng = np.random.default_rng(0)
    G = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    sol = solve(lambda_max_program((G + G.conj().T) / 2))
    assert sol.optimal
    assert sol.objective >= sol.dual_objective - 1e-6
    assert sol.eq_residual <= 1e-7 and sol.psd_residual >= -1e-7


@pytest.mark.parametrize("backend", ["clarabel", "scs"])
def test_infeasible(backend):
    prog = ConicProgram()
    X = prog.hermitian("X", 2)
    prog.add_psd(X)
    prog.add_equality(X.trace(), -1.0)
    prog.minimize(X.trace())
    sol = solve(prog, backend=get_backend(backend))
    assert sol.status == conic.INFEASIBLE
    assert not sol.optimal


def test_solver_exception_becomes_status():
    class Broken:
        name = "broken"
        approximate = False

        def solve(self, program, tol):
            return conic.NUMERICAL_FAILURE, None, None, 0.0, "boom"

    sol = solve(lambda_max_program(SZ), backend=Broken())
    assert sol.status == conic.NUMERICAL_FAILURE


def test_residual_check_downgrades_bad_points():
    class Liar:
        name = "liar"
        approximate = False

        def solve(self, program, tol):
            return conic.OPTIMAL, np.array([-5.0]), None, 0.0, "claims optimal"

    sol = solve(lambda_max_program(SZ), backend=Liar())
    assert sol.status == conic.NUMERICAL_FAILURE
    assert "residual" in sol.message


def test_toy_refuses_large_programs():
    prog = lambda_max_program(np.eye(3))
    assert solve(prog, backend=get_backend("toy")).status == conic.NUMERICAL_FAILURE


def test_auto_dispatch_by_size():
    auto = get_backend("auto")
    small = lambda_max_program(SZ)
    assert auto.pick(small) is auto.clarabel
    big = ConicProgram()
    X = big.hermitian("X", 4)
    for _ in range(3):
        big.add_psd(X)
    big.minimize(X.trace())
    assert conic.scaling_block_entries(big) == 3 * 36 ** 2
    old = auto.max_entries
    try:
        auto.max_entries = 1000
        assert auto.pick(big) is auto.scs
    finally:
        auto.max_entries = old


def test_scs_warm_start_reuses_structure():
    scs_backend = conic.ScsBackend()
    first = solve(lambda_max_program(SZ), backend=scs_backend)
    assert scs_backend._warm is not None
    second = solve(lambda_max_program(SZ), backend=scs_backend)
    assert second.objective == pytest.approx(first.objective, abs=1e-6)


class TestAffine:
    def test_arithmetic(self):
        prog = ConicProgram()
        x = prog.real("x", 2)
        e = 2 * x - x + 1.0
        np.testing.assert_allclose(e.value({"x": np.array([3.0, 4.0])}), [4.0, 5.0])
        assert (-e).value({"x": np.zeros(2)})[0] == -1.0

    def test_rejects_array_scalar(self):
        prog = ConicProgram()
        x = prog.real("x", 1)
        with pytest.raises(ConicError):
            x * np.eye(2)

    def test_undeclared_variable(self):
        other = ConicProgram().real("y", 1)
        with pytest.raises(ConicError):
            ConicProgram().minimize(other.apply(lambda a: a[0]))

    def test_duplicate_variable(self):
        prog = ConicProgram()
        prog.real("x", 1)
        with pytest.raises(ConicError):
            prog.real("x", 2)

    def test_psd_shape_check(self):
        prog = ConicProgram()
        with pytest.raises(ConicError):
            prog.add_psd(prog.real("x", 3))

    @settings(max_examples=20, deadline=None)
    @given(dim=st.integers(1, 5), seed=st.integers(0, 2**32 - 1))
    def test_hermitian_parameterization(self, dim, seed):
        x = np.random.default_rng(seed).normal(size=dim * dim)
        E = conic.hermitian_parameter_basis(dim)
        H = E @ x
        np.testing.assert_allclose(H, H.conj().T)
        np.testing.assert_allclose(conic.hermitian_from_params(x, dim), H)


def test_program_json_dump():
    blob = json.loads(lambda_max_program(SZ).to_json())
    assert blob["variables"][0]["name"] == "t"
    assert blob["psd"][0]["name"] == "gap"


def test_default_tolerances():
    tol = Tolerances()
    assert tol.feasibility == 1e-8 and tol.gap_rel == 1e-8


def test_unknown_backend(monkeypatch):
    monkeypatch.setenv(conic.BACKEND_ENV, "nope")
    with pytest.raises(ConicError):
        conic.default_backend()
