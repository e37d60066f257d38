import numpy as np
import pytest

from margent.iterate import (
    STALLED,
    SUCCESS,
    SearchConfig,
    marginal_fingerprint,
    random_pure_seed,
    run_seesaw,
)
from margent.operators import QuditRegister
from margent.statesearch import ConstraintSet
from margent.witness import MarginalPattern

Q3 = QuditRegister.qubits(3)


@pytest.fixture(scope="module")
def outcome():
    return run_seesaw(SearchConfig(Q3, MarginalPattern.all_pairs(Q3), seed=1, polish_rounds=3))


def test_seed_is_reproducible():
    a, b = random_pure_seed(Q3, 5), random_pure_seed(Q3, 5)
    np.testing.assert_array_equal(a.matrix, b.matrix)
    assert a.purity() == pytest.approx(1.0)
    assert not np.allclose(a.matrix, random_pure_seed(Q3, 6).matrix)


def test_success(outcome):
    assert outcome.status == SUCCESS
    assert outcome.rounds_to_success <= 3
    assert outcome.best_value < -1e-7
    assert outcome.verification["passed"]
    assert outcome.history[outcome.rounds_to_success - 1]["step2"] < 0


def test_step1_monotone_after_round_one(outcome):
    step1 = [h["step1"] for h in outcome.history]
    assert all(b <= a + 1e-6 for a, b in zip(step1[1:], step1[2:]))


def test_serializes(outcome):
    blob = outcome.to_json()
    assert blob["status"] == SUCCESS
    assert blob["state"]["dims"] == [2, 2, 2]
    assert set(marginal_fingerprint(outcome.state)) == {"01", "02", "12"}


def test_single_pair_pattern_stalls():
    cfg = SearchConfig(Q3, MarginalPattern.parse(Q3, "AB"), seed=0, max_rounds=5)
    out = run_seesaw(cfg)
    assert out.status == STALLED
    assert out.best_value >= -1e-7


def test_config_validation():
    with pytest.raises(ValueError):
        SearchConfig(Q3, MarginalPattern.all_pairs(Q3), max_rounds=0)
    with pytest.raises(ValueError):
        SearchConfig(QuditRegister.qubits(4), MarginalPattern.all_pairs(Q3))
    assert SearchConfig(Q3, MarginalPattern.all_pairs(Q3), ConstraintSet()).to_json()["seed"] == 0
