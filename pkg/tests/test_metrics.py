import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from activeil.errors import ParseError, RequestError, ValidationError
from activeil.metrics import (
    ConfusionSummary,
    average_incremental_accuracy,
    balance_trace,
    coefficient_of_variation,
    mean_std,
)


def test_cv_examples():
    assert coefficient_of_variation([500] * 100) == 0.0
    assert coefficient_of_variation([10, 90]) == pytest.approx(0.8)
    # 100 classes, mean 500, population sigma 376.17
    counts = [500 + 376.17, 500 - 376.17] * 50
    assert round(coefficient_of_variation(counts), 4) == 0.7523


def test_cv_errors():
    for bad in ([], [0, 0], [1, -1]):
        with pytest.raises(ValidationError):
            coefficient_of_variation(bad)


@given(st.lists(st.floats(0.1, 1e4), min_size=1, max_size=30), st.floats(1e-3, 1e3))
@settings(max_examples=100, deadline=None)
def test_cv_scale_invariant(counts, alpha):
    a = coefficient_of_variation(counts)
    b = coefficient_of_variation([alpha * c for c in counts])
    assert abs(a - b) <= 1e-12 * max(1.0, a) * 1e3


def test_average_incremental_accuracy():
    assert average_incremental_accuracy([0.9, 0.5, 0.7]) == pytest.approx(0.6)
    assert average_incremental_accuracy([0.1, 0.42]) == 0.42
    assert average_incremental_accuracy([0.99] + [0.6142] * 9) == pytest.approx(0.6142)
    with pytest.raises(RequestError):
        average_incremental_accuracy([0.5])


def test_mean_std_modes():
    assert mean_std([0.5, 0.7], "population") == pytest.approx((0.6, 0.1))
    assert mean_std([0.5, 0.7]) == pytest.approx((0.6, 0.1414213562))
    assert mean_std([0.3]) == (0.3, 0.0)


def test_confusion_summary_matches_direct():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 5, 500)
    p = np.where(rng.random(500) < 0.7, y, rng.integers(0, 5, 500))
    cs = ConfusionSummary.from_predictions(y, p)
    assert abs(cs.accuracy - np.mean(y == p)) <= 1e-12
    for c, r in cs.recall.items():
        assert abs(r - np.mean(p[y == c] == c)) <= 1e-12


def ev(state, label):
    return {"state": state, "revealed_label": label}


def test_balance_trace_examples():
    assert balance_trace([]) == []
    alt = balance_trace([ev(1, i % 2) for i in range(10)])
    assert all(alt[i] == 0.0 for i in range(1, 10, 2))
    one = balance_trace([ev(1, 0)] * 10, {1: [0, 1]})
    assert all(v == pytest.approx(1.0) for v in one[1::2])


def test_balance_trace_resets_per_state_and_final_matches_cv():
    events = [ev(1, 0), ev(1, 1), ev(1, 1), ev(2, 2), ev(2, 3), ev(2, 3), ev(2, 3)]
    trace = balance_trace(events)
    assert trace[3] == 0.0
    assert trace[-1] == coefficient_of_variation([1, 3])


def test_balance_trace_file_and_errors(tmp_path):
    p = tmp_path / "e.jsonl"
    p.write_text("\n".join(json.dumps(ev(1, c)) for c in (0, 1, 1)) + "\n")
    assert balance_trace(p)[-1] == coefficient_of_variation([1, 2])
    p.write_text(json.dumps(ev(1, 0)) + "\n{oops\n")
    with pytest.raises(ParseError) as err:
        balance_trace(p)
    assert err.value.line == 2
    with pytest.raises(ParseError):
        balance_trace([{"state": 1}])
