import itertools

import numpy as np
import pytest

from conftest import split_clips
from cutin import harness, strategies, synthgen
from cutin.errors import ConfigurationError
from cutin.harness import evaluate, grid_candidates, grid_search, metrics_from_confusion
from cutin.lstm import TABLE1_POOLS, Hyperparameters, TrainConfig
from cutin.trackdata import LabeledClip, ManeuverClass, Track

ZERO = TrainConfig(epochs=0, seed=3)
SMALL_POOLS = {"hidden_units": (60, 128), "batch_size": (5, 10), "optimizer": ("Adam",), "head_activation": ("Tanh",), "dropout_rate": (0.0,)}


def recount(truth, pred, K):
    """Per-sample recount, no matrix algebra."""
    correct = sum(t == p for t, p in zip(truth, pred))
    prec, rec = [], []
    for k in range(K):
        predicted = [t for t, p in zip(truth, pred) if p == k]
        actual = [p for t, p in zip(truth, pred) if t == k]
        prec.append(sum(t == k for t in predicted) / len(predicted) if predicted else None)
        rec.append(sum(p == k for p in actual) / len(actual) if actual else None)
    return correct / len(truth), prec, rec


def test_metrics_fixed_confusion():
    m = metrics_from_confusion([[45, 5], [10, 40]])
    assert m.accuracy == pytest.approx(0.85)
    assert m.precision[0] == pytest.approx(0.8182, abs=1e-4)
    assert m.recall[0] == pytest.approx(0.9, abs=1e-4)
    assert m.row()["accuracy"] == "0.8500"


def test_metrics_perfect_and_degenerate():
    m = metrics_from_confusion([[10, 0], [0, 10]])
    assert m.accuracy == 1.0 and m.precision == (1.0, 1.0) and m.recall == (1.0, 1.0)
    # always predicting class 0 on a balanced set
    m = metrics_from_confusion([[50, 0], [50, 0]], ["CutIn", "LanePass"])
    assert m.accuracy == 0.5 and m.recall[1] == 0.0 and m.precision[1] is None
    assert m.row()["precision_LanePass"] == ""
    with pytest.raises(ConfigurationError):
        metrics_from_confusion([[0, 0], [0, 0]])


@pytest.mark.parametrize("seed", range(5))
def test_metrics_match_recount_on_shuffled_input(seed):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(2, 4))
    truth = rng.integers(0, K, 200)
    pred = np.where(rng.random(200) < 0.7, truth, rng.integers(0, K, 200))
    perm = rng.permutation(200)
    m = metrics_from_confusion(harness.confusion_matrix(truth[perm], pred[perm], K))
    acc, prec, rec = recount(truth.tolist(), pred.tolist(), K)
    assert m.accuracy == pytest.approx(acc, abs=1e-12)
    for a, b in zip(m.precision + m.recall, prec + rec):
        assert (a is None and b is None) or a == pytest.approx(b, abs=1e-12)
    assert m.confusion.sum(axis=1).tolist() == np.bincount(truth, minlength=K).tolist()


def test_evaluate_row_sums_and_recount(trained):
    for kind, (strategy, test) in trained.items():
        m = evaluate(strategy, test)
        labels = strategies.target_labels(test, strategy.class_set)
        assert m.confusion.sum(axis=1).tolist() == np.bincount(labels, minlength=len(m.classes)).tolist()
        preds = [m.classes.index(strategies.classify(strategy, c.track, c.scene).label.value) for c in test]
        assert m.accuracy == pytest.approx(recount(labels.tolist(), preds, len(m.classes))[0])


def test_evaluate_three_class_on_two_class_metrics(trained):
    strategy, test = trained["3class"]
    m = evaluate(strategy, test, "cutin2")
    assert m.classes == ("CutIn", "LanePass")
    assert m.confusion.sum() == len(test)


def test_evaluate_empty():
    with pytest.raises(ConfigurationError):
        evaluate(None, [])


# grid ----------------------------------------------------------------------


def test_full_pools_give_432_candidates():
    cands = grid_candidates()
    assert len(cands) == 4 * 4 * 3 * 3 * 3 == 432
    assert len(set(cands)) == 432
    assert cands[0] == Hyperparameters(60, 5, "Adam", "ReLU", 0.0)
    assert cands[1].dropout_rate == 0.25
    expected = list(itertools.product(*(TABLE1_POOLS[k] for k in harness.GRID_ORDER)))
    assert [tuple(getattr(c, k) for k in harness.GRID_ORDER) for c in cands] == expected


def test_empty_pool_rejected():
    with pytest.raises(ConfigurationError):
        grid_candidates({"optimizer": ()})


def test_singleton_grid(small_dataset):
    tr, va, _ = split_clips(small_dataset)
    pools = {k: (getattr(Hyperparameters(), k),) for k in harness.GRID_ORDER}
    result = grid_search("baseline", tr, va, pools, ZERO)
    assert len(result.candidates) == 1 and result.best_index == 0
    assert result.best_strategy is not None


def test_grid_is_reproducible(small_dataset):
    tr, va, _ = split_clips(small_dataset)
    tc = TrainConfig(epochs=2, learning_rate=0.01, seed=9)
    a = grid_search("2classlr", tr, va, SMALL_POOLS, tc)
    b = grid_search("2classlr", tr, va, SMALL_POOLS, tc)
    key = lambda r: [(c.index, c.seed, c.val_accuracy) for c in r.leaderboard]
    assert key(a) == key(b)
    assert [c.seed for c in a.candidates] == [9 ^ i for i in range(4)]
    assert a.best_index == b.best_index


def test_grid_workers_match_serial(small_dataset):
    tr, va, _ = split_clips(small_dataset)
    a = grid_search("baseline", tr, va, SMALL_POOLS, ZERO, workers=1)
    b = grid_search("baseline", tr, va, SMALL_POOLS, ZERO, workers=2)
    assert [(c.index, c.val_accuracy) for c in a.leaderboard] == [(c.index, c.val_accuracy) for c in b.leaderboard]


def test_tie_goes_to_earliest_candidate(small_dataset, monkeypatch):
    tr, va, _ = split_clips(small_dataset)
    monkeypatch.setattr(harness, "evaluate", lambda s, clips, class_set=None: metrics_from_confusion([[1, 1], [1, 1]]))
    result = grid_search("baseline", tr, va, SMALL_POOLS, ZERO)
    assert result.best_index == 0
    assert [c.index for c in result.leaderboard] == [0, 1, 2, 3]


def test_failed_candidates_do_not_change_ranking(small_dataset, monkeypatch):
    tr, va, _ = split_clips(small_dataset)
    clean = grid_search("baseline", tr, va, SMALL_POOLS, ZERO)
    real = harness.train_strategy

    def flaky(kind, train, val, hp, tc, length):
        if hp.hidden_units == 128 and hp.batch_size == 5:
            raise FloatingPointError("boom")
        return real(kind, train, val, hp, tc, length)

    monkeypatch.setattr(harness, "train_strategy", flaky)
    dirty = grid_search("baseline", tr, va, SMALL_POOLS, ZERO)
    failed = [c for c in dirty.candidates if c.error]
    assert [c.index for c in failed] == [2] and "boom" in failed[0].error
    ok = lambda r: [(c.index, c.val_accuracy) for c in r.leaderboard if c.index != 2 and c.val_accuracy is not None]
    assert ok(clean) == ok(dirty)
    assert dirty.leaderboard[-1].index == 2


# sweep ---------------------------------------------------------------------

LANE = {
    ManeuverClass.LEFT_CUT_IN: ManeuverClass.LEFT_LANE_CHANGE,
    ManeuverClass.RIGHT_CUT_IN: ManeuverClass.RIGHT_LANE_CHANGE,
    ManeuverClass.LANE_PASS: ManeuverClass.NO_LANE_CHANGE,
}


def lane_change_clips(n):
    """50-frame clips in the lane-change class set."""
    out = []
    for c in synthgen.generate_dataset(n, seed=4, class_set="cutin3"):
        track = Track(c.track.target_id, c.track.observations[:50])
        out.append(LabeledClip(c.clip_id, c.scene, track, LANE[c.label], "lanechange"))
    return out


def test_sweep_fifty_frame_clips():
    clips = lane_change_clips(5)
    tr, va, te = split_clips(clips)
    pools = {k: (getattr(Hyperparameters(), k),) for k in harness.GRID_ORDER}
    rows = harness.sweep_lengths("3class", tr, va, te, [15, 30, 45], pools, ZERO)
    assert [r.length for r in rows] == [15, 30, 45]
    assert all(r.excluded == 0 and r.metrics is not None for r in rows)
    (row,) = harness.sweep_lengths("3class", tr, va, te, [60], pools, ZERO)
    assert row.excluded == len(clips) and row.metrics is None


def test_sweep_empty(caplog):
    assert harness.sweep_lengths("baseline", [], [], [], []) == []
    assert "no lengths" in caplog.text


# timing --------------------------------------------------------------------


def test_timing_report(trained):
    strategy, test = trained["2classlr"]
    report = harness.timing_report(strategy, test[:8], repetitions=2)
    assert report.outputs_stable
    assert report.sequences == 8 and report.repetitions == 2
    assert report.total == pytest.approx(report.tracking + report.features + report.classification)
    assert report.noise == pytest.approx(abs(report.measured_total - report.total))
    assert 0 < report.classification < 0.010
