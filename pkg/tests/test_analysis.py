import numpy as np
import pytest

from helpers import random_density
from margent import catalog
from margent.analysis import (
    MARGINAL,
    UNRESTRICTED,
    compatibility_range,
    compatible_face,
    complement_directions,
    detection_value,
    localizable_sweep,
    marginal_audit,
    noise_tolerance,
    range_along,
)
from margent.operators import DensityOperator, OperatorError, PureState, QuditRegister, full_operator_basis
from margent.witness import MarginalPattern, MarginalSet

Q3 = QuditRegister.qubits(3)


@pytest.fixture(scope="module")
def n3():
    return catalog.build("rho_n3")


@pytest.fixture(scope="module")
def n3_tolerance(n3):
    return noise_tolerance(n3.state, MarginalPattern.all_pairs(Q3))


# -- tolerance bisection -----------------------------------------------------

def test_tolerance_bracket_and_prediction(n3_tolerance):
    r = n3_tolerance
    assert r.detected
    assert r.mode == MARGINAL
    assert abs(r.p_star - 0.137) <= 0.005
    assert 2 * r.bracket <= 1e-4
    # bracket endpoints are evaluated points on opposite sides of the root
    vals = dict(r.evaluations)
    assert any(v < 0 and abs(p - r.lower) < 1e-12 for p, v in vals.items())
    assert any(v >= 0 and abs(p - r.upper) < 1e-12 for p, v in vals.items())
    assert len(r.evaluations) <= 20


def test_tolerance_json_roundtrip(n3_tolerance):
    j = n3_tolerance.to_json()
    assert j["lower"] < j["p_star"] < j["upper"]
    assert j["pattern"] == [[0, 1], [0, 2], [1, 2]]


def test_value_is_affine_and_single_crossing(n3):
    """V(p) is affine in p for the trace-normalized program: tiny second differences, one sign change."""
    pat = MarginalPattern.all_pairs(Q3)
    ps = np.linspace(0, 0.27, 10)
    vs = np.array([detection_value(n3.state, p, pat) for p in ps])
    assert np.max(np.abs(np.diff(vs, 2))) <= 1e-5
    signs = np.sign(vs)
    assert np.count_nonzero(signs[1:] != signs[:-1]) == 1


def test_tolerance_of_undetected_state():
    rho = DensityOperator.maximally_mixed(Q3)
    r = noise_tolerance(rho)
    assert r.p_star == 0.0 and not r.detected


def test_unrestricted_mode_exceeds_marginal(n3, n3_tolerance):
    r = noise_tolerance(n3.state, mode=UNRESTRICTED)
    assert abs(r.p_star - 0.286) <= 0.005
    assert r.p_star > n3_tolerance.p_star
    assert r.pattern is None


def test_unknown_mode_rejected(n3):
    with pytest.raises(OperatorError):
        noise_tolerance(n3.state, mode="bogus")


# -- PPT audits --------------------------------------------------------------

def test_audit_flags_bell_pair():
    psi = PureState.from_terms(Q3, {"000": 1 / np.sqrt(2), "110": 1 / np.sqrt(2)})
    a = marginal_audit(psi.density())
    assert a["pairs"]["01"]["min_pt_eigenvalue"] == pytest.approx(-0.5, abs=1e-12)
    assert a["pairs"]["01"]["verdict"] == "NPT"
    assert a["pairs"]["02"]["ppt"] and a["pairs"]["12"]["ppt"]
    assert not a["all_pairs_ppt"]


@pytest.mark.parametrize("name", ["rho_n3", "unique3", "n4", "robust4", "qutrit3", "no_localizable3"])
def test_catalog_pairs_are_ppt(name):
    assert marginal_audit(catalog.build(name).state)["all_pairs_ppt"]


def test_audit_triples_of_triple_state():
    e = catalog.build("rho_n4_triples")
    a = marginal_audit(e.state, include_triples=True)
    assert a["all_pairs_ppt"] and a["all_triples_ppt"]
    assert set(a["triples"]) == {"012", "013", "023", "123"}


def test_audit_respects_pattern():
    e = catalog.build("rho_n3")
    a = marginal_audit(e.state, MarginalPattern.parse(Q3, "AB"))
    assert list(a["pairs"]) == ["01"]


# -- uniqueness --------------------------------------------------------------

def _report(name, pattern=None, **kw):
    e = catalog.build(name)
    pat = MarginalPattern.parse(e.register, pattern or e.expected.get("pattern", "all"))
    return compatibility_range(MarginalSet.from_state(e.state, pat), reference=e.state, **kw)


@pytest.mark.parametrize("name", ["rho_n3", "unique3", "n4"])
def test_unique_states(name):
    rep = _report(name)
    assert rep.verdict == "unique"
    assert rep.max_range < 1e-6
    assert rep.hull_dim == 0


def test_ghz_marginals_do_not_fix_the_state():
    rep = _report("ghz3")
    assert rep.verdict == "non-unique"
    assert rep.max_range == pytest.approx(2.0, abs=1e-5)


def test_maximally_mixed_marginals_are_not_unique():
    rho = DensityOperator.maximally_mixed(Q3)
    rep = compatibility_range(MarginalSet.from_state(rho, MarginalPattern.all_pairs(Q3)), reference=rho)
    assert rep.verdict == "non-unique"
    assert rep.face_dim == 8 and rep.hull_dim == 27
    assert 1e-4 < rep.max_range <= 2 + 1e-6


def test_dicke_ghz_phase_direction_has_positive_range():
    e = catalog.build("dicke_ghz4")
    X = catalog.dicke_ghz4(1).density().matrix - catalog.dicke_ghz4(-1).density().matrix
    ms = MarginalSet.from_state(e.state, MarginalPattern.parse(e.register, "AB,BC,CD"))
    lo, hi = range_along(ms, X, reference=e.state)
    assert hi - lo > 1e-4
    ref = float(np.trace(X @ e.state.matrix).real)
    assert lo - 1e-6 <= ref <= hi + 1e-6


def test_range_without_reference_is_reconstructed():
    rho = DensityOperator.maximally_mixed(Q3)
    ms = MarginalSet.from_state(rho, MarginalPattern.all_pairs(Q3))
    X = next(t for t in full_operator_basis(Q3) if len(t.support) == 3).operator.matrix
    lo, hi = range_along(ms, X)
    assert lo < -0.1 and hi > 0.1


def test_complement_directions_count():
    assert len(complement_directions(Q3, MarginalPattern.all_pairs(Q3))) == 27
    assert len(complement_directions(Q3, MarginalPattern.parse(Q3, "AB"))) == 64 - 16


def test_face_rejects_incompatible_reference(n3):
    ms = MarginalSet.from_state(n3.state, MarginalPattern.all_pairs(Q3))
    with pytest.raises(OperatorError):
        compatible_face(ms, DensityOperator.maximally_mixed(Q3))


@pytest.mark.parametrize("name", ["n4", "unique3"])
def test_uniqueness_is_basis_independent(name):
    """Rotating the complement basis leaves the range of a pinned state at zero."""
    e = catalog.build(name)
    ms = MarginalSet.from_state(e.state, MarginalPattern.all_pairs(e.register))
    dirs = np.array([t.operator.matrix for t in complement_directions(e.register, ms.pattern)])
    rng = np.random.default_rng(3)
    R = np.linalg.qr(rng.normal(size=(len(dirs), len(dirs))))[0]
    for row in R[:5]:
        lo, hi = range_along(ms, np.tensordot(row, dirs, axes=1), reference=e.state)
        assert hi - lo < 1e-6


def test_random_mixed_state_is_not_pinned():
    rng = np.random.default_rng(3)
    rho = random_density(Q3, rng)
    rep = compatibility_range(MarginalSet.from_state(rho, MarginalPattern.all_pairs(Q3)), reference=rho)
    assert rep.verdict == "non-unique"


def test_jobs_give_same_answer():
    a = _report("ghz3")
    b = _report("ghz3", jobs=2)
    assert a.max_range == pytest.approx(b.max_range, abs=1e-6)


# -- post-measurement sweeps -------------------------------------------------

def test_ghz_post_measurement_is_entangled():
    rho = catalog.build("ghz3").state
    s = localizable_sweep(rho, 2)
    # an equatorial outcome leaves a Bell pair with probability 1/2 (unnormalized conditional state)
    assert s["minimum"] == pytest.approx(-0.25, abs=1e-8)


@pytest.mark.parametrize("party", [0, 1, 2])
def test_no_localizable_state_stays_ppt(party):
    rho = catalog.build("no_localizable3").state
    assert localizable_sweep(rho, party)["minimum"] >= -1e-8


def test_product_state_sweep_nonnegative():
    rho = PureState.from_terms(Q3, {"000": 1.0}).density()
    assert localizable_sweep(rho, 1)["minimum"] >= -1e-12


def test_sweep_grid_refinement_stable():
    rho = catalog.build("rho_n3").state
    a = localizable_sweep(rho, 0, (60, 120))["minimum"]
    b = localizable_sweep(rho, 0, (120, 240))["minimum"]
    assert abs(a - b) < 1e-5


def test_sweep_rejects_qutrit_party():
    with pytest.raises(OperatorError):
        localizable_sweep(catalog.build("qutrit3").state, 0)
