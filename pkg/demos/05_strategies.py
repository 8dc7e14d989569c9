"""Baseline, three-class and left/right classification strategies.

Run: python demos/05_strategies.py
"""
from cutin import synthgen
from cutin.harness import evaluate
from cutin.lstm import Hyperparameters, TrainConfig
from cutin.strategies import classify, train_strategy
from cutin.trackdata import select, split_dataset

settings = {
    "baseline": (Hyperparameters(), TrainConfig(epochs=100, learning_rate=0.003, early_stop_patience=0, seed=0), "cutin2"),
    "2classlr": (Hyperparameters(optimizer="RMSProp"), TrainConfig(epochs=60, learning_rate=0.01, early_stop_patience=0, seed=0), "cutin2"),
    "3class": (Hyperparameters(optimizer="RMSProp"), TrainConfig(epochs=100, learning_rate=0.01, early_stop_patience=0, seed=0), "cutin3"),
}

for kind, (hp, tc, class_set) in settings.items():
    clips = synthgen.generate_dataset(40, seed=3, class_set=class_set)
    split = split_dataset(clips, seed=3)
    train, val, test = (select(clips, ids) for ids in (split.train, split.val, split.test))
    strategy, _ = train_strategy(kind, train, val, hp, tc)
    m = evaluate(strategy, test)
    sample = test[0]
    print(f"{kind:9s} test accuracy {m.accuracy:.3f}   e.g. {sample.label.value} -> "
          f"{classify(strategy, sample.track, sample.scene).format()}")
