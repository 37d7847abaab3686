import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from vertexfuzz.backends import LinearModel
from vertexfuzz.core import (
    BudgetExhausted,
    DimensionMismatch,
    InputVector,
    Probe,
    QueryLedger,
    ScoreOracle,
    SearchRegion,
    is_adversarial,
    l2_distance,
    linf_distance,
    make_region,
    predict_label,
)

pixels = hnp.arrays(np.float64, 6, elements=st.floats(0, 255))


class Fixed:
    def __init__(self, scores):
        self.scores = np.asarray(scores, dtype=float)

    def evaluate_batch(self, xs):
        return np.tile(self.scores, (len(xs), 1))


def test_input_vector_validates_range_and_shape():
    with pytest.raises(ValueError):
        InputVector(np.array([256.0]), (1, 1, 1))
    with pytest.raises(ValueError):
        InputVector(np.array([-0.5]), (1, 1, 1))
    with pytest.raises(DimensionMismatch):
        InputVector(np.zeros(5), (2, 2, 1))
    v = InputVector.from_image(np.arange(12.0).reshape(2, 2, 3))
    assert v.n == 12 and v.shape == (2, 2, 3)
    assert np.array_equal(v.image()[1, 0], [6.0, 7.0, 8.0])


def test_distances():
    assert linf_distance([0, 0], [3, -4]) == 4
    assert l2_distance([0, 0], [3, -4]) == 5
    with pytest.raises(DimensionMismatch):
        linf_distance([0, 0], [1, 2, 3])


@given(pixels, pixels, pixels)
def test_linf_triangle_inequality(a, b, c):
    assert linf_distance(a, b) <= linf_distance(a, c) + linf_distance(c, b) + 1e-9


@given(pixels, st.floats(0, 300), st.lists(st.booleans(), min_size=6, max_size=6))
def test_region_contains_centre_and_vertices_stay_close(x, d, mask):
    region = make_region(x, d)
    assert region.contains(x)
    v = region.vertex(mask)
    assert region.is_vertex(v)
    assert linf_distance(x, v) <= d + 1e-9
    assert v.min() >= 0 and v.max() <= 255


def test_make_region_clamps_to_pixel_range():
    region = make_region([2.0, 250.0], 8)
    assert np.array_equal(region.lower, [0.0, 242.0])
    assert np.array_equal(region.upper, [10.0, 255.0])
    with pytest.raises(ValueError):
        make_region([1.0], -1)


def test_region_rejects_inverted_interval():
    with pytest.raises(ValueError):
        SearchRegion([1.0], [0.0])


def test_predict_label_tie_and_binary_rules():
    assert predict_label([0.5, 0.5]) == 0
    assert predict_label([1.0, 3.0, 3.0]) == 1
    assert predict_label([0.2]) == 0
    assert predict_label([0.0]) == 1
    assert predict_label([-1.0]) == 1


@pytest.mark.parametrize(
    "scores, expected",
    [((0.9, 0.1), False), ((0.1, 0.9), True), ((0.5, 0.5), False)],
)
def test_is_adversarial_examples(scores, expected):
    oracle = ScoreOracle(Fixed(scores), QueryLedger(10))
    assert is_adversarial(oracle, [0.0], 0) is expected
    assert oracle.ledger.attack_queries == 1


@given(st.lists(st.integers(0, 5), max_size=8), st.integers(0, 6))
def test_ledger_counts_singles_plus_batch_sizes(batches, singles):
    model = LinearModel([[1.0], [2.0]], [0.0, 0.0])
    oracle = ScoreOracle(model, QueryLedger(10**6))
    for _ in range(singles):
        oracle.scores([1.0])
    for size in batches:
        oracle.scores_batch([[1.0]] * size)
    assert oracle.ledger.attack_queries == singles + sum(batches)


def test_ledger_refuses_to_exceed_budget():
    oracle = ScoreOracle(Fixed([1, 0]), QueryLedger(3))
    oracle.scores_batch([[0.0]] * 3)
    with pytest.raises(BudgetExhausted):
        oracle.scores([0.0])
    assert oracle.ledger.attack_queries == 3


def test_refinement_counter_is_separate():
    ledger = QueryLedger(1, refinement_budget=2)
    oracle = ScoreOracle(Fixed([1, 0]), ledger)
    with oracle.using_phase("refinement"):
        oracle.scores_batch([[0.0], [1.0]])
        with pytest.raises(BudgetExhausted):
            oracle.scores([2.0])
    assert ledger.attack_queries == 0 and ledger.refinement_queries == 2
    assert math.isinf(QueryLedger(1).remaining("refinement"))


def test_probe_serves_repeats_from_memory():
    oracle = ScoreOracle(Fixed([1, 0]), QueryLedger(2))
    probe = Probe(oracle)
    a, b = np.array([1.0]), np.array([2.0])
    probe.scores_many([a, b, a])
    probe.scores(b)
    assert oracle.ledger.attack_queries == 2 and probe.fresh == 2
    with pytest.raises(BudgetExhausted):
        probe.scores(np.array([3.0]))


def test_probe_cap_limits_fresh_queries():
    probe = Probe(ScoreOracle(Fixed([1, 0]), QueryLedger(100)), cap=1)
    probe.scores(np.array([0.0]))
    with pytest.raises(BudgetExhausted):
        probe.scores(np.array([1.0]))


def test_oracle_rejects_non_finite_scores():
    oracle = ScoreOracle(Fixed([np.nan, 0.0]), QueryLedger(5))
    with pytest.raises(FloatingPointError):
        oracle.scores([0.0])
    assert oracle.ledger.attack_queries == 1
