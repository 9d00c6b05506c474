import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ksat.data import generate_synthetic_task, subsample
from ksat.encoder import EncoderConfig
from ksat.errors import DomainError, MissingIdentifierError
from ksat.evalharness import (
    THRESHOLD_CANDIDATES,
    MetricReport,
    TrainingConfig,
    accuracy,
    cgka,
    de_at_k,
    de_curve,
    f1,
    link_prediction_accuracy,
    link_predictions,
    run_task,
    tune_threshold,
)
from ksat.knowledge import EmbeddingTable, LabeledTriple, Triple

from conftest import brute_force_predictions, constructed_threshold_set, random_labeled


# ---------------------------------------------------------------- classification metrics


def test_accuracy_examples():
    assert accuracy([1, 0, 1], [1, 0, 1]) == 1.0
    assert accuracy([0, 1], [1, 0]) == 0.0
    assert accuracy([0, 1, 1, 0], [0, 1, 0, 0]) == 0.75


def test_accuracy_errors():
    with pytest.raises(DomainError):
        accuracy([], [])
    with pytest.raises(DomainError):
        accuracy([0], [0, 1])


def test_f1_examples():
    assert f1([1, 0, 1], [1, 0, 1]) == 1.0
    # TP=1 (idx0), FP=1 (idx1), FN=1 (idx2)
    assert f1([1, 1, 0], [1, 0, 1]) == 0.5
    assert f1([0, 0], [0, 0]) == 0.0


def test_f1_length_mismatch():
    with pytest.raises(DomainError):
        f1([1], [1, 0])


def test_constant_predictor_on_balanced_set():
    labels = [0, 1] * 10
    assert accuracy([1] * 20, labels) == 0.5


# ---------------------------------------------------------------- link prediction


def test_link_prediction_exact_and_orthogonal():
    table = EmbeddingTable(2, {"s": [1, 0], "p": [0, 1], "o": [1, 1], "q": [1, -1]})
    pos = LabeledTriple(Triple("s", "p", "o"), True)
    orth = LabeledTriple(Triple("s", "p", "q"), False)
    assert link_predictions(table, [pos, orth], 0.5) == [True, False]
    assert link_prediction_accuracy(table, [pos, orth], 0.5) == 1.0


def test_link_prediction_matches_brute_force_oracle():
    rng = np.random.default_rng(50)
    entries, labeled = random_labeled(rng, 12, 50, 4)
    table = EmbeddingTable(4, entries)
    for t in THRESHOLD_CANDIDATES:
        oracle = brute_force_predictions(entries, labeled, t)
        assert link_predictions(table, labeled, t) == oracle
        expected = sum(p == lt.label for p, lt in zip(oracle, labeled)) / len(labeled)
        assert link_prediction_accuracy(table, labeled, t) == expected


def test_link_prediction_missing_identifier():
    table = EmbeddingTable(2, {"s": [1, 0], "p": [0, 1]})
    with pytest.raises(MissingIdentifierError) as info:
        link_prediction_accuracy(table, [LabeledTriple(Triple("s", "p", "ghost"), True)], 0.5)
    assert info.value.identifier == "ghost"


def test_link_prediction_empty_rejected():
    with pytest.raises(DomainError):
        link_prediction_accuracy(EmbeddingTable(2, {}), [], 0.5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(THRESHOLD_CANDIDATES))
def test_link_prediction_scale_invariant(seed, threshold):
    rng = np.random.default_rng(seed)
    entries, labeled = random_labeled(rng, 8, 30, 3)
    table = EmbeddingTable(3, entries)
    assert link_predictions(table, labeled, threshold) == link_predictions(
        table.scaled(3.7), labeled, threshold
    )


def test_tune_threshold_constructed_set():
    table, labeled = constructed_threshold_set()
    scores = {t: link_prediction_accuracy(table, labeled, t) for t in THRESHOLD_CANDIDATES}
    assert scores[0.5] == 1.0 and all(v < 1.0 for t, v in scores.items() if t != 0.5)
    assert tune_threshold(table, labeled) == 0.5


def test_tune_threshold_all_tied_returns_zero():
    # zero-norm sum: every candidate predicts no-link, so all accuracies tie
    table = EmbeddingTable(2, {"s": [0, 0], "p": [0, 0], "o": [1, 0]})
    labeled = [LabeledTriple(Triple("s", "p", "o"), False)]
    assert tune_threshold(table, labeled) == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_tune_threshold_in_candidate_set(seed):
    rng = np.random.default_rng(seed)
    entries, labeled = random_labeled(rng, 6, 12, 3)
    table = EmbeddingTable(3, entries)
    t = tune_threshold(table, labeled)
    assert t in THRESHOLD_CANDIDATES
    best = max(link_prediction_accuracy(table, labeled, c) for c in THRESHOLD_CANDIDATES)
    assert link_prediction_accuracy(table, labeled, t) == best


# ---------------------------------------------------------------- cgka


def test_cgka_examples():
    assert cgka(1.0, 1.0) == 1.0
    assert cgka(0.8, 0.6) == pytest.approx(0.7, abs=1e-15)
    assert cgka(0.0, 0.6) == 0.3


def test_cgka_range():
    with pytest.raises(DomainError):
        cgka(1.2, 0.5)


unit = st.floats(0.0, 1.0)


@given(unit, unit, unit)
def test_cgka_symmetric_monotone(a, b, c):
    assert cgka(a, b) == cgka(b, a)
    lo, hi = sorted((b, c))
    assert cgka(a, lo) <= cgka(a, hi)
    if b < 1.0:
        assert cgka(0.0, b) < 0.5


# ---------------------------------------------------------------- report


def sample_report():
    return MetricReport("t", 0.8, 0.75, 0.9, 0.85, [[50, 0.7], [100, 0.8]], "semi-deep", 3, 1.25)


def test_report_json_roundtrip_and_fields():
    r = sample_report()
    data = json.loads(r.to_json())
    assert list(data) == MetricReport.field_names()
    assert MetricReport.from_json(r.to_json()) == r


def test_report_csv_column_order():
    header, row = sample_report().to_csv().splitlines()
    assert header.split(",") == MetricReport.field_names()
    assert "50:0.7;100:0.8" in row


@pytest.mark.parametrize("kwargs", [{"accuracy": 1.5}, {"de_curve": [[75, 0.5], [50, 0.5]]},
                                    {"policy": "bogus"}])
def test_report_validation(kwargs):
    base = dict(task="t", accuracy=0.5, f1=0.5)
    with pytest.raises(DomainError):
        MetricReport(**{**base, **kwargs})


# ---------------------------------------------------------------- training runs


@pytest.fixture(scope="module")
def small_task():
    return generate_synthetic_task(16, 40, 8, 16, seed=2)[0]


SMALL_CFG = EncoderConfig(n_blocks=1, n_heads=2, d_model=8, d_ff=8, vocab_size=40,
                          max_len=8, d_g=4, seed=5)
SMALL_TRAIN = TrainingConfig(epochs=3, learning_rate=0.1, batch_size=8)


def test_de_at_100_equals_full_run(small_task):
    full = run_task(small_task, None, "deep", SMALL_CFG, SMALL_TRAIN, seed=5)
    k, acc = de_at_k(small_task, 100, "deep", SMALL_CFG, SMALL_TRAIN, seed=5)
    assert k == 100 and acc == full.accuracy
    via_subsample = run_task(subsample(small_task, 100, 5), None, "deep", SMALL_CFG, SMALL_TRAIN, 5)
    assert via_subsample.params.equal(full.params)
    assert via_subsample.losses == full.losses


def test_de_curve_structure(small_task):
    curve = de_curve(small_task, [50, 75, 100], "none", SMALL_CFG, SMALL_TRAIN, seed=0)
    assert [k for k, _ in curve] == [50, 75, 100]
    assert all(0.0 <= a <= 1.0 for _, a in curve)


def test_de_curve_rejects_unsorted(small_task):
    with pytest.raises(DomainError):
        de_curve(small_task, [75, 50], "none", SMALL_CFG, SMALL_TRAIN, seed=0)


def test_run_task_same_base_init_across_policies(small_task):
    hashes = {run_task(small_task, None, p, SMALL_CFG, TrainingConfig(epochs=0), 0).initial_hash
              for p in ("none", "shallow", "semi-deep", "deep")}
    assert len(hashes) == 1


def test_run_task_rejects_dimension_mismatch(small_task):
    with pytest.raises(DomainError):
        run_task(small_task, EmbeddingTable(3, {}), "deep", SMALL_CFG, SMALL_TRAIN, 0)
