"""Independent reference implementations used as test oracles.

These deliberately avoid the package's own code paths: plain loops and
brute force instead of vectorized cumulative sums.
"""

import math
from fractions import Fraction

import numpy as np


def stump_predict(x, threshold, polarity):
    above = x > threshold
    return np.where(above, 1, 0) if polarity == 1 else np.where(above, 0, 1)


def brute_force_stump(x, y, w):
    """Minimum weighted-error threshold on 1-D data, trying every midpoint."""
    xs = np.unique(x)
    candidates = [-np.inf] + list((xs[:-1] + xs[1:]) / 2)
    best = None
    for th in candidates:
        for pol in (1, -1):
            err = float(np.sum(w[stump_predict(x, th, pol) != y]))
            if best is None or err < best[0] - 1e-12:
                best = (err, th, pol)
    return best[1], best[2]


def adaboost(x, y, rounds):
    """Discrete AdaBoost (β-form) with stumps; returns [(threshold, polarity, beta, eps, weights)]."""
    w = np.full(len(y), 1.0 / len(y))
    history = []
    for _ in range(rounds):
        w = w / w.sum()
        th, pol = brute_force_stump(x, y, w)
        miss = stump_predict(x, th, pol) != y
        eps = float(np.sum(w[miss]))
        if eps >= 0.5:
            break
        beta = max(eps / (1 - eps), 1e-10)
        history.append((th, pol, beta, eps, w.copy()))
        w = w * np.where(miss, 1.0 / beta, 1.0)
        if eps == 0:
            break
    return history


def adaboost_predict(history, x):
    """Weighted vote over every round; ties go to label 0."""
    votes = np.zeros((len(x), 2))
    for th, pol, beta, _, _ in history:
        pred = stump_predict(x, th, pol)
        votes[np.arange(len(x)), pred] += math.log(1.0 / beta)
    return np.where(votes[:, 1] > votes[:, 0], 1, 0)


def brute_force_fuse(dp, t0, t1):
    """Label by exact rational comparison of squared distances, so true ties are found.

    Profile entries are read through their decimal string (0.1 means 1/10);
    template entries are taken as the exact value of their float.
    """
    d = []
    for t in (t0, t1):
        total = Fraction(0)
        for i in range(len(dp)):
            for j in range(len(dp[i])):
                total += (Fraction(str(dp[i][j])) - Fraction(t[i][j])) ** 2
        d.append(total)
    if d[0] == d[1]:
        return 0, True
    return (0 if d[0] < d[1] else 1), False


class ScriptedLearner:
    """Weak learner that ignores its input and returns preset predictions."""

    def __init__(self, predictions):
        self.predictions = np.asarray(predictions)

    def fit(self, x, y, sample_weight):
        self.seen_weights = np.asarray(sample_weight).copy()
        return self

    def predict(self, x):
        return self.predictions


def stump_dataset():
    """20 points on a line, labelled 1 inside (0.3, 0.7): learnable by boosted stumps, not by one."""
    x = np.sort(np.random.default_rng(0).uniform(0, 1, 20))
    y = ((x > 0.3) & (x < 0.7)).astype(np.int64)
    return x, y


def hand_trace():
    """Two source, two target samples; two scripted rounds, weights updated by hand.

    Initial weights (0.2, 0.3 | 0.35, 0.15). Round 1 misses source 0 and
    target 1: ε = 0.15/0.5 = 0.3, β_1 = 3/7. Round 2 misses both source
    samples and no target sample: ε = 0, β_2 floored to 1e-10, run stops.
    """
    beta = 1.0 / (1.0 + math.sqrt(2.0 * math.log(2) / 2))
    w0 = [0.2, 0.3, 0.35, 0.15]
    w1 = [0.2 * beta, 0.3, 0.35, 0.15 * 7 / 3]
    w2 = [w1[0] * beta, w1[1] * beta, w1[2], w1[3]]
    total = sum(w2)
    return {
        "initial": np.array(w0),
        "predictions": [np.array([1, 0, 0, 0]), np.array([1, 1, 0, 1])],
        "labels": np.array([0, 0, 0, 1]),
        "beta": beta,
        "epsilons": [0.3, 0.0],
        "betas_t": [3 / 7, 1e-10],
        "after_round1": np.array(w1) / sum(w1),
        "final": np.array([v / total for v in w2]),
    }
