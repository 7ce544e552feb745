import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from activeil.data import (
    BudgetLedger,
    GeneratorSpec,
    LabelingPool,
    Samples,
    generate_gaussian_stream,
    load_feature_dataset,
    make_imbalanced_counts,
    quantize,
    read_feature_csv,
    split_budget,
    split_classes,
    write_feature_csv,
)
from activeil.errors import (
    BudgetError,
    ConfigurationError,
    InfeasibleError,
    LookupFailure,
    ParseError,
    ValidationError,
)
from activeil.metrics import coefficient_of_variation


def pop_cv(counts):
    c = np.asarray(counts, float)
    return c.std() / c.mean()


def test_uniform_stream_split():
    spec = GeneratorSpec(num_classes=10, dim=4, samples_per_class=(50,) * 10)
    stream = generate_gaussian_stream(spec, 2)
    assert stream.classes_per_state == [[0, 1, 2, 3, 4], [5, 6, 7, 8, 9]]
    assert [len(s) for s in stream.train] == [250, 250]
    assert stream.classes_up_to(1) == 10
    ids = np.concatenate([s.ids for s in stream.train + stream.test])
    assert len(np.unique(ids)) == len(ids)


def test_split_classes():
    assert split_classes(10, 3) == [4, 3, 3]
    assert split_classes(5, 5) == [1] * 5
    with pytest.raises(ConfigurationError):
        split_classes(3, 4)


def test_cv_targeting_imagenet_like():
    counts = make_imbalanced_counts(100, 300, 0.75, seed=1)
    assert len(counts) == 100 and min(counts) >= 25
    assert 0.74 <= pop_cv(counts) <= 0.76
    assert abs(np.mean(counts) - 300) / 300 <= 0.02


def test_cv_targeting_two_classes():
    counts = make_imbalanced_counts(2, 50, 0.8, min_per_class=1)
    assert sorted(counts) == [10, 90]
    assert pop_cv(counts) == pytest.approx(0.8)


def test_cv_targeting_respects_floor():
    counts = make_imbalanced_counts(101, 750, 0.79, min_per_class=25)
    assert min(counts) >= 25
    assert abs(pop_cv(counts) - 0.79) <= 0.01


def test_cv_infeasible():
    # two classes, mean 50, floor 40: max cv is 10/50 = 0.2
    with pytest.raises(InfeasibleError):
        make_imbalanced_counts(2, 50, 0.5, min_per_class=40)


@given(st.integers(2, 60), st.integers(30, 400), st.floats(0.0, 0.9), st.integers(0, 100))
@settings(max_examples=60, deadline=None)
def test_cv_targeting_property(n, mean, cv, seed):
    try:
        counts = make_imbalanced_counts(n, mean, cv, min_per_class=25, seed=seed)
    except InfeasibleError:
        return
    assert min(counts) >= 25
    assert sum(counts) == round(n * mean)
    assert abs(pop_cv(counts) - cv) <= 0.01
    assert pop_cv(counts) == pytest.approx(coefficient_of_variation(counts))


def test_generator_is_deterministic():
    spec = GeneratorSpec.with_target_cv(6, 60, 0.5, dim=3, seed=7)
    a, b = generate_gaussian_stream(spec, 3), generate_gaussian_stream(spec, 3)
    for sa, sb in zip(a.train + a.test, b.train + b.test):
        assert sa.features.tobytes() == sb.features.tobytes()
        assert np.array_equal(sa.labels, sb.labels)
    other = generate_gaussian_stream(GeneratorSpec.with_target_cv(6, 60, 0.5, dim=3, seed=8), 3)
    assert a.train[0].features.tobytes() != other.train[0].features.tobytes()


def test_generator_counts_match_spec():
    spec = GeneratorSpec(num_classes=4, dim=2, samples_per_class=(5, 10, 20, 40), test_per_class=3)
    stream = generate_gaussian_stream(spec, 2)
    labels = np.concatenate([s.labels for s in stream.train])
    assert np.bincount(labels).tolist() == [5, 10, 20, 40]
    assert np.bincount(stream.cumulative_test(1).labels).tolist() == [3] * 4


# --- CSV --------------------------------------------------------------------

def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    s = Samples(np.arange(7) * 3, rng.normal(size=(7, 3)), np.array([0, 1, 2, 0, 1, 2, 2]))
    write_feature_csv(s, tmp_path / "a.csv")
    back = read_feature_csv(tmp_path / "a.csv")
    assert np.array_equal(back.ids, s.ids) and np.array_equal(back.labels, s.labels)
    assert back.features.tobytes() == s.features.tobytes()


@pytest.mark.parametrize("body,line", [
    ("id,label,f0\n0,0,1.0\n1,x,2.0\n", 3),
    ("id,label,f0\n0,0,1.0\n0,1,2.0\n", 3),
    ("id,label,f0\n0,0,1.0\n1,0,nan\n", 3),
    ("id,label,f0\n0,0,1.0,2.0\n", 2),
    ("id,lab,f0\n0,0,1.0\n", 1),
    ("", 1),
])
def test_csv_errors_carry_line(tmp_path, body, line):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(ParseError) as err:
        read_feature_csv(p)
    assert err.value.line == line
    assert f"line {line}" in str(err.value)


def test_one_class_file_cannot_fill_two_states(tmp_path):
    p = tmp_path / "one.csv"
    p.write_text("id,label,f0\n" + "".join(f"{i},3,{i}.0\n" for i in range(10)))
    with pytest.raises(ConfigurationError):
        load_feature_dataset(p, num_states=2, seed=0)


def test_load_feature_dataset_split(tmp_path):
    rng = np.random.default_rng(1)
    labels = np.repeat([10, 20, 30, 40], 25)
    s = Samples(np.arange(100), rng.normal(size=(100, 2)), labels)
    write_feature_csv(s, tmp_path / "d.csv")
    stream = load_feature_dataset(tmp_path / "d.csv", num_states=2, seed=3)
    assert stream.classes_per_state == [[0, 1], [2, 3]]
    assert sorted(stream.label_map.values()) == [10, 20, 30, 40]
    tr = Samples.concat(stream.train)
    te = Samples.concat(stream.test)
    assert np.bincount(te.labels).tolist() == [5] * 4
    assert len(tr) == 80
    assert not set(tr.ids.tolist()) & set(te.ids.tolist())


# --- budget and oracle ------------------------------------------------------

def test_quantize_is_decimal_exact():
    assert quantize(100, 0.29) == 29
    assert quantize(100, 0.2) == 20
    assert quantize(7, 0.5) == 3


def test_split_budget_remainder_to_last():
    assert split_budget(200, [0.4, 0.2, 0.2, 0.2]) == [80, 40, 40, 40]
    assert split_budget(10, [1 / 3] * 3) == [3, 3, 4]


def test_pool_reveals_exactly_budget():
    spec = GeneratorSpec(num_classes=2, dim=2, samples_per_class=(50, 50))
    samples = generate_gaussian_stream(spec, 1).train[0]
    pool = LabelingPool(samples, BudgetLedger(quantize(len(samples), 0.2)))
    ids, _ = pool.unlabeled()
    for sid in ids[:20]:
        assert pool.reveal(sid) == samples.labels[samples.ids == sid][0]
    assert pool.budget.remaining == 0 and len(pool.labeled_ids) == 20
    with pytest.raises(BudgetError):
        pool.reveal(ids[20])
    assert pool.num_unlabeled == 80


def test_pool_rejects_unknown_and_repeats():
    samples = Samples(np.array([5, 6]), np.zeros((2, 1)), np.array([0, 1]))
    pool = LabelingPool(samples, BudgetLedger(5))
    with pytest.raises(LookupFailure):
        pool.reveal(99)
    pool.reveal(5)
    with pytest.raises(ValidationError):
        pool.reveal(5)
    assert pool.budget.remaining == 4


@given(st.lists(st.integers(0, 49), max_size=60), st.integers(0, 60))
@settings(max_examples=60, deadline=None)
def test_pool_partition_invariant(picks, budget):
    samples = Samples(np.arange(50), np.zeros((50, 1)), np.arange(50) % 3)
    pool = LabelingPool(samples, BudgetLedger(budget))
    for sid in picks:
        try:
            pool.reveal(sid)
        except (BudgetError, ValidationError):
            pass
        ids, _ = pool.unlabeled()
        assert len(ids) + len(pool.labeled_ids) == 50
        assert not set(ids.tolist()) & set(pool.labeled_ids)
        assert pool.budget.spent == len(pool.labeled_ids) <= budget
