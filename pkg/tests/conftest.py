import numpy as np
import pytest

from cutin import synthgen
from cutin.trackdata import BoundingBox, Detection, LabeledClip, SceneMeta, Track


def make_scene(width=1280, height=720, fps=30, ego=(500, 780)):
    field = ((0, height), (width, height), (0.7 * width, 0.55 * height), (0.3 * width, 0.55 * height))
    return SceneMeta(width, height, fps, field, ego)


def make_track(boxes, fps=30, target_id=1, start_frame=0):
    obs = [
        Detection(start_frame + k, int(round((start_frame + k) * 1000 / fps)), BoundingBox(*map(float, b)))
        for k, b in enumerate(boxes)
    ]
    return Track(target_id, obs)


def make_clip(boxes, label="CutIn", class_set="cutin2", clip_id="c0", scene=None, fps=30):
    scene = scene or make_scene(fps=fps)
    return LabeledClip(clip_id, scene, make_track(boxes, fps=scene.fps), label, class_set)


def linear_boxes(n, start=(200, 500, 80, 60), velocity=(5, 0, 0, 0)):
    start = np.asarray(start, dtype=float)
    return start + np.arange(n)[:, None] * np.asarray(velocity, dtype=float)


@pytest.fixture(scope="session")
def small_dataset():
    """160 noisy clips (40 per class and side)."""
    return synthgen.generate_dataset(40, seed=3)


def split_clips(clips, seed=0):
    from cutin.trackdata import select, split_dataset

    split = split_dataset(clips, seed=seed)
    return select(clips, split.train), select(clips, split.val), select(clips, split.test)


@pytest.fixture(scope="session")
def small_dataset3():
    return synthgen.generate_dataset(40, seed=3, class_set="cutin3")


@pytest.fixture(scope="session")
def trained(small_dataset, small_dataset3):
    """One trained strategy per kind on the small datasets, plus their test clips."""
    from cutin.lstm import Hyperparameters, TrainConfig
    from cutin.strategies import train_strategy

    out = {}
    settings = {
        "baseline": (small_dataset, Hyperparameters(), TrainConfig(epochs=100, learning_rate=0.003, early_stop_patience=0)),
        "2classlr": (small_dataset, Hyperparameters(optimizer="RMSProp"), TrainConfig(epochs=60, learning_rate=0.01, early_stop_patience=0)),
        "3class": (small_dataset3, Hyperparameters(optimizer="RMSProp"), TrainConfig(epochs=100, learning_rate=0.01, early_stop_patience=0)),
    }
    for kind, (clips, hp, tc) in settings.items():
        tr, va, te = split_clips(clips)
        strategy, _ = train_strategy(kind, tr, va, hp, tc, 30)
        out[kind] = (strategy, te)
    return out


# acceptance reporting ------------------------------------------------------

_CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion, reported in the summary")


@pytest.fixture
def detail(request):
    """Attach a measured value to the acceptance line of the running test."""
    notes = []
    request.node.criterion_notes = notes
    return notes.append


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        notes = "; ".join(getattr(item, "criterion_notes", []))
        _CRITERIA.append((marker.args[0], rep.passed, notes))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, notes in _CRITERIA:
        line = f"{'PASS' if passed else 'FAIL'}  {name}"
        terminalreporter.write_line(line + (f"  ({notes})" if notes else ""))
