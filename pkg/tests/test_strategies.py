from dataclasses import replace

import numpy as np
import pytest

from conftest import split_clips
from cutin import lstm, strategies, synthgen
from cutin.errors import ConfigurationError, InputError
from cutin.features import Side, normalize, resample, side_of
from cutin.lstm import Hyperparameters, LstmModel, TrainConfig
from cutin.strategies import (
    Strategy,
    classify,
    load_strategy,
    partition_by_side,
    save_strategy,
    to_three_class,
    to_two_class,
    train_strategy,
)
from cutin.trackdata import ManeuverClass

QUICK = TrainConfig(epochs=2, learning_rate=0.01, seed=5)


def fixed_model(probs, class_set="cutin2", length=30, H=4):
    """A model whose output ignores its input: zero weights, logits = log(probs)."""
    params = lstm.zero_params(H, len(probs))
    params["o"] = np.log(np.asarray(probs, dtype=float))
    return LstmModel(params, Hyperparameters(hidden_units=H, custom=True), class_set, length)


def test_two_class_lr_routes_and_annotates():
    left = fixed_model([0.9, 0.1])
    right = fixed_model([0.2, 0.8])
    s = Strategy("2classlr", {"left": left, "right": right}, 30)
    clip = synthgen.generate_clip(ManeuverClass.CUT_IN, Side.LEFT)
    d = classify(s, clip.track, clip.scene)
    assert d.label is ManeuverClass.CUT_IN and d.side is Side.LEFT
    np.testing.assert_allclose(d.probabilities, [0.9, 0.1], atol=1e-12)
    assert d.format() == "CutIn p=0.9000,0.1000 side=Left"
    clip = synthgen.generate_clip(ManeuverClass.CUT_IN, Side.RIGHT)
    d = classify(s, clip.track, clip.scene)
    assert d.label is ManeuverClass.LANE_PASS and d.side is Side.RIGHT


@pytest.mark.parametrize("kind,class_set,expected", [
    ("baseline", "cutin2", ManeuverClass.CUT_IN),
    ("3class", "cutin3", ManeuverClass.LEFT_CUT_IN),
    ("3class", "lanechange", ManeuverClass.LEFT_LANE_CHANGE),
])
def test_uniform_model_ties_to_lowest_index(kind, class_set, expected):
    K = 2 if class_set == "cutin2" else 3
    s = Strategy(kind, {"main": fixed_model([1 / K] * K, class_set)}, 30)
    clip = synthgen.generate_clip(ManeuverClass.LANE_PASS, Side.RIGHT)
    assert classify(s, clip.track, clip.scene).label is expected


def test_short_track_rejected():
    s = Strategy("baseline", {"main": fixed_model([0.5, 0.5], length=60)}, 60)
    clip = synthgen.generate_clip(ManeuverClass.CUT_IN, Side.LEFT, synthgen.GenParams(scene=replace(synthgen.default_scene(), fps=15)))
    with pytest.raises(InputError, match="sequence too short"):
        classify(s, clip.track, clip.scene)


def test_strategy_validation():
    with pytest.raises(ConfigurationError):
        Strategy("2classlr", {"main": fixed_model([0.5, 0.5])}, 30)
    with pytest.raises(ConfigurationError):
        Strategy("baseline", {"main": fixed_model([0.5, 0.5], length=15)}, 30)
    with pytest.raises(ConfigurationError):
        Strategy("2classlr", {"left": fixed_model([0.5, 0.5]), "right": fixed_model([0.3, 0.3, 0.4], "cutin3")}, 30)


def test_class_set_conversions():
    assert to_two_class(ManeuverClass.RIGHT_CUT_IN) is ManeuverClass.CUT_IN
    clip = synthgen.generate_clip(ManeuverClass.CUT_IN, Side.RIGHT)
    three = to_three_class(clip)
    assert three.label is ManeuverClass.RIGHT_CUT_IN and three.class_set == "cutin3"


def test_three_class_needs_three_class_labels(small_dataset):
    tr, va, _ = split_clips(small_dataset)
    with pytest.raises(ConfigurationError, match="class set mismatch"):
        train_strategy("3class", tr, va, Hyperparameters(), QUICK)


def test_partition_contract(small_dataset):
    left, right = partition_by_side(small_dataset)
    assert len(left) == len(right) == 80
    assert all(side_of(c.track, c.scene) is Side.LEFT for c in left)


def test_two_class_lr_submodels_see_their_side(small_dataset, monkeypatch):
    seen = []
    real = strategies._train_one

    def spy(train_clips, *args):
        seen.append([c.clip_id for c in train_clips])
        return real(train_clips, *args)

    monkeypatch.setattr(strategies, "_train_one", spy)
    train_strategy("2classlr", small_dataset, small_dataset[:8], Hyperparameters(), QUICK)
    left, right = partition_by_side(small_dataset)
    assert seen == [[c.clip_id for c in left], [c.clip_id for c in right]]


def test_training_is_seeded(small_dataset, tmp_path):
    tr, va, _ = split_clips(small_dataset)
    a, _ = train_strategy("2classlr", tr, va, Hyperparameters(), QUICK)
    b, _ = train_strategy("2classlr", tr, va, Hyperparameters(), QUICK)
    save_strategy(a, tmp_path / "a")
    save_strategy(b, tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_routing_independent_of_parameters(small_dataset):
    rng = np.random.default_rng(0)
    m = lambda: lstm.new_model(Hyperparameters(), "cutin2", 30, seed=int(rng.integers(1000)))
    s1 = Strategy("2classlr", {"left": m(), "right": m()}, 30)
    s2 = Strategy("2classlr", {"left": m(), "right": m()}, 30)
    for c in small_dataset[::7]:
        assert classify(s1, c.track, c.scene).side is classify(s2, c.track, c.scene).side is side_of(c.track, c.scene)


def test_baseline_is_plain_composition(trained):
    strategy, test = trained["baseline"]
    for c in test[:10]:
        d = classify(strategy, c.track, c.scene)
        direct = lstm.predict(strategy.models["main"], normalize(resample(c.track, 30), c.scene))
        assert d.probabilities.tobytes() == direct.tobytes()
        assert abs(d.probabilities.sum() - 1) < 1e-12


def test_trained_models_classify_prototypes(trained):
    proto = synthgen.GenParams(noise_sigma=0.0)
    cut_in = synthgen.generate_clip(ManeuverClass.CUT_IN, Side.LEFT, proto)
    for kind in ("baseline", "2classlr"):
        d = classify(trained[kind][0], cut_in.track, cut_in.scene)
        assert d.label is ManeuverClass.CUT_IN, kind
    right = synthgen.generate_clip(ManeuverClass.RIGHT_CUT_IN, gp=proto)
    d = classify(trained["3class"][0], right.track, right.scene)
    assert d.label is ManeuverClass.RIGHT_CUT_IN and d.side is Side.RIGHT


def test_strategy_file_round_trip(trained, tmp_path):
    for kind, (strategy, test) in trained.items():
        path = tmp_path / f"{kind}.cutin"
        save_strategy(strategy, path)
        loaded = load_strategy(path)
        assert loaded.kind == kind and loaded.length == 30
        for c in test[:5]:
            a = classify(strategy, c.track, c.scene).probabilities
            b = classify(loaded, c.track, c.scene).probabilities
            assert a.tobytes() == b.tobytes()


def test_load_rejects_plain_model(tmp_path):
    lstm.save_model(fixed_model([0.5, 0.5]), tmp_path / "m")
    with pytest.raises(ValueError):
        load_strategy(tmp_path / "m")
