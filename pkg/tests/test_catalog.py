import numpy as np
import pytest

from helpers import pt_min
from margent import catalog
from margent.catalog import compose_many_party, composed_pair_marginal, default_windows
from margent.operators import QuditRegister, bipartitions, ptrace

IDS = catalog.ids()


@pytest.mark.parametrize("cid", IDS)
def test_states_are_valid(cid):
    e = catalog.build(cid)
    rho = e.state.matrix
    assert np.trace(rho).real == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.eigvalsh(rho)[0] >= -1e-12
    if e.pure is not None:
        assert np.linalg.norm(e.pure.amplitudes) == pytest.approx(1.0, abs=1e-12)
    assert e.to_json()["id"] == cid


@pytest.mark.parametrize("cid", [c for c in IDS if c != "ghz3"])
def test_pair_marginals_ppt(cid):
    e = catalog.build(cid)
    dims = e.register.dims
    for pair in e.register.pairs():
        m = ptrace(e.state.matrix, dims, pair)
        assert pt_min(m, [dims[p] for p in pair], [0]) >= -1e-12, pair


def test_ghz_marginals_separable_but_classical():
    e = catalog.build("ghz3")
    m = ptrace(e.state.matrix, (2, 2, 2), (0, 1))
    np.testing.assert_allclose(m, np.diag([0.5, 0, 0, 0.5]), atol=1e-12)


def test_dicke_ghz4_opposite_phase_is_conjugate():
    plus = catalog.build("dicke_ghz4", phi_sign=1).state.matrix
    minus = catalog.build("dicke_ghz4", phi_sign=-1).state.matrix
    assert not np.allclose(plus, minus)
    np.testing.assert_allclose(minus, plus.conj(), atol=1e-12)
    for pair in [(0, 1), (1, 2), (2, 3)]:
        np.testing.assert_allclose(ptrace(minus, (2,) * 4, pair), ptrace(plus, (2,) * 4, pair).conj(), atol=1e-12)
    with pytest.raises(ValueError):
        catalog.dicke_ghz4(phi_sign=0)


def test_unknown_id():
    with pytest.raises(catalog.CatalogError):
        catalog.build("nope")


def test_descriptions():
    assert all(catalog.describe(i) for i in IDS)


class TestComposition:
    @pytest.mark.parametrize("n", [5, 6, 8, 9])
    def test_windows_fit(self, n):
        comp = compose_many_party(n)
        per_party = {p: 0 for p in range(n)}
        for w in comp.party_windows():
            for p in w:
                per_party[p] += 1
        assert max(per_party.values()) <= 2
        assert set(q // 2 for f in comp.factors for q in f) == set(range(n))
        assert default_windows(n) == comp.party_windows()

    @pytest.mark.parametrize("n", [5, 6, 7, 8])
    def test_all_pair_marginals_ppt(self, n):
        comp = compose_many_party(n)
        for a in range(n):
            for b in range(a + 1, n):
                m = composed_pair_marginal(comp, (a, b))
                assert m.trace() == pytest.approx(1.0)
                assert pt_min(m.matrix, (4, 4), [0]) >= -1e-12, (a, b)

    def test_pair_marginal_matches_global_state(self):
        comp = compose_many_party(5)
        psi = comp.global_state()
        rho = np.outer(psi.amplitudes, psi.amplitudes.conj())
        for pair in [(0, 1), (1, 3), (0, 4)]:
            qubits = [2 * pair[0], 2 * pair[0] + 1, 2 * pair[1], 2 * pair[1] + 1]
            np.testing.assert_allclose(ptrace(rho, (2,) * 10, qubits), composed_pair_marginal(comp, pair).matrix,
                                       atol=1e-12)

    def test_five_party_state_has_no_product_bipartition(self):
        comp = compose_many_party(5)
        v = comp.global_state().amplitudes.reshape((4,) * 5)
        for bp in bipartitions(QuditRegister((4,) * 5)):
            rest = bp.complement
            mat = np.transpose(v, list(bp.M) + list(rest)).reshape(4 ** len(bp.M), -1)
            s = np.linalg.svd(mat, compute_uv=False)
            assert s[1] > 1e-6, bp.label()

    def test_bad_windows(self):
        with pytest.raises(ValueError):
            compose_many_party(5, [(0, 1, 2, 3), (0, 1, 2, 4), (0, 1, 3, 4)])
        with pytest.raises(ValueError):
            compose_many_party(4)
        with pytest.raises(ValueError):
            composed_pair_marginal(compose_many_party(5), (1, 1))
