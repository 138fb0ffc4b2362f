"""Independent baselines used to validate data before trusting the network.

Plain logistic regression on flattened feature tensors: if it cannot
separate the classes, the network has nothing to learn; if a probe cannot
tell domains apart on frozen representations, adaptation did its job.
"""

from __future__ import annotations

import numpy as np
from sklearn.linear_model import LogisticRegression

from .evaluation import (FoldPlan, prepare_dependent_fold,
                         prepare_independent_fold)
from .features import FeatureSample


def _flatten(samples: list[FeatureSample]) -> np.ndarray:
    return np.stack([s.x.reshape(-1) for s in samples])


def _labels(samples: list[FeatureSample], dimension: str) -> np.ndarray:
    return np.array([s.labels[dimension] for s in samples])


def logistic_accuracy(train: list[FeatureSample], test: list[FeatureSample],
                      dimension: str, seed: int = 0) -> float:
    """Test accuracy of logistic regression on flattened features."""
    clf = LogisticRegression(max_iter=5000, random_state=seed)
    clf.fit(_flatten(train), _labels(train, dimension))
    return float(clf.score(_flatten(test), _labels(test, dimension)))


def oracle_protocol_accuracy(samples: list[FeatureSample], plans: list[FoldPlan],
                             dimension: str, seed: int = 0) -> float:
    """Mean fold accuracy of the logistic oracle over the same fold plans
    and the same leak-free standardization the network pipeline uses."""
    accs = []
    for plan in plans:
        for fold in plan.folds:
            if plan.paradigm == "dependent":
                train, test = prepare_dependent_fold(samples, fold)
            else:
                train, test = prepare_independent_fold(samples, fold)
            accs.append(logistic_accuracy(train, test, dimension, seed))
    return float(np.mean(accs))


def planted_channel_weights(train: list[FeatureSample], dimension: str,
                            seed: int = 0) -> np.ndarray:
    """Per-channel mean |coefficient| of the oracle, for verifying where
    the class signal actually lives."""
    clf = LogisticRegression(max_iter=5000, random_state=seed)
    clf.fit(_flatten(train), _labels(train, dimension))
    n, k, d_b = train[0].x.shape
    coef = np.abs(clf.coef_).reshape(n, k, d_b)
    return coef.mean(axis=(1, 2))


def domain_probe_accuracy(source_features: np.ndarray,
                          target_features: np.ndarray,
                          source_groups=None, target_groups=None,
                          seed: int = 0, folds: int = 4) -> float:
    """Cross-validated accuracy of a fresh linear probe telling the two
    feature sets apart, on a balanced subsample.

    Rows belonging to one group (the samples cut from one trial) stay on
    one side of every probe split: near-duplicate siblings across the
    split would measure memorization, not domain signal.
    """
    rng = np.random.default_rng(seed)
    if source_groups is None:
        source_groups = np.arange(len(source_features))
    if target_groups is None:
        target_groups = np.arange(len(target_features))

    def by_group(features, groups):
        table: dict = {}
        for row, g in zip(features, groups):
            table.setdefault(g, []).append(row)
        return [np.stack(rows) for _, rows in sorted(table.items(),
                                                     key=lambda kv: str(kv[0]))]
    src = by_group(source_features, source_groups)
    tgt = by_group(target_features, target_groups)
    count = min(len(src), len(tgt))
    src = [src[i] for i in rng.permutation(len(src))[:count]]
    tgt = [tgt[i] for i in rng.permutation(len(tgt))[:count]]
    blocks = src + tgt
    labels = [0] * count + [1] * count
    order = rng.permutation(len(blocks))
    scores = []
    for fold in range(folds):
        test_ids = set(order[fold::folds])
        train_x = np.vstack([blocks[i] for i in range(len(blocks))
                             if i not in test_ids])
        train_y = np.concatenate([[labels[i]] * len(blocks[i])
                                  for i in range(len(blocks))
                                  if i not in test_ids])
        test_x = np.vstack([blocks[i] for i in test_ids])
        test_y = np.concatenate([[labels[i]] * len(blocks[i])
                                 for i in test_ids])
        clf = LogisticRegression(max_iter=5000, random_state=seed)
        clf.fit(train_x, train_y)
        scores.append(clf.score(test_x, test_y))
    return float(np.mean(scores))
