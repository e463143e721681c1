"""TrAdaBoost instance transfer (Dai et al., 2007) over any weighted learner.

Source samples that the current learner gets wrong are discounted by a fixed
factor β < 1; target samples it gets wrong are boosted by 1/β_t, where β_t
comes from the learner's weighted error on the target portion alone.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol, Sequence

import numpy as np

from .errors import ContractError

log = logging.getLogger(__name__)

SOURCE, TARGET = 0, 1
BETA_FLOOR = 1e-10
EPS_CEILING = 0.5 - 1e-6


class WeightedLearner(Protocol):
    def fit(self, x: np.ndarray, y: np.ndarray, sample_weight: np.ndarray) -> Any: ...

    def predict(self, x: np.ndarray) -> np.ndarray: ...


@dataclass
class WeightedDataset:
    """Source and target samples stacked together (source first)."""

    x: np.ndarray
    y: np.ndarray
    weights: np.ndarray
    domain: np.ndarray
    n: int
    m: int

    @classmethod
    def combine(cls, x_source, y_source, x_target, y_target, weights=None) -> WeightedDataset:
        x_source, x_target = np.asarray(x_source), np.asarray(x_target)
        y_source = np.asarray(y_source, dtype=np.int64)
        y_target = np.asarray(y_target, dtype=np.int64)
        n, m = len(x_source), len(x_target)
        if n != len(y_source) or m != len(y_target):
            raise ContractError("each sample needs exactly one label")
        if m == 0:
            raise ContractError("target dataset is empty")
        y = np.concatenate([y_source, y_target])
        if not np.all((y == 0) | (y == 1)):
            raise ContractError("labels must be binary (0/1)")
        if weights is None:
            weights = np.full(n + m, 1.0 / (n + m))
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (n + m,) or np.any(weights < 0) or weights.sum() <= 0:
            raise ContractError("weights must be nonnegative, one per sample, with positive total")
        x = np.concatenate([x_source, x_target]) if n else x_target.copy()
        domain = np.concatenate([np.full(n, SOURCE), np.full(m, TARGET)]).astype(np.int8)
        return cls(x, y, weights / weights.sum(), domain, n, m)

    @property
    def normalized_weights(self) -> np.ndarray:
        return self.weights / self.weights.sum()


@dataclass
class RoundRecord:
    learner: Any
    beta_t: float
    epsilon_t: float
    source_mass: float
    target_mass: float


@dataclass
class BoostedModel:
    rounds: list[RoundRecord]
    T: int
    beta: float
    n: int
    m: int
    weights: np.ndarray
    weight_trace: list[np.ndarray] = field(default_factory=list)
    stop_reason: str = "completed"

    def log_rows(self) -> list[dict]:
        return [
            {"round": i + 1, "epsilon_t": r.epsilon_t, "beta_t": r.beta_t,
             "source_weight_mass": r.source_mass, "target_weight_mass": r.target_mass}
            for i, r in enumerate(self.rounds)
        ]


def source_discount(n: int, T: int) -> float:
    """β = 1 / (1 + √(2·ln n / T))."""
    if n < 1 or T < 1:
        raise ContractError(f"need n >= 1 and T >= 1, got n={n}, T={T}")
    return 1.0 / (1.0 + math.sqrt(2.0 * math.log(n) / T))


def tradaboost_train(data: WeightedDataset, learner_factory: Callable[[int], WeightedLearner],
                     rounds: int) -> BoostedModel:
    """Run up to ``rounds`` boosting rounds and return the stored ensemble.

    Stops early when the target error reaches 0 (β_t floored at 1e-10, round
    kept) or 0.5 (round discarded).
    """
    if rounds < 1:
        raise ContractError(f"need at least one boosting round, got {rounds}")
    n, m = data.n, data.m
    beta = source_discount(max(n, 1), rounds)
    w = data.weights.astype(np.float64).copy()
    is_target = data.domain == TARGET
    records: list[RoundRecord] = []
    trace = [w / w.sum()]
    model = BoostedModel(records, rounds, beta, n, m, w / w.sum(), trace)

    for t in range(rounds):
        p = w / w.sum()
        learner = learner_factory(t)
        learner.fit(data.x, data.y, p)
        miss = (np.asarray(learner.predict(data.x)).astype(np.int64) != data.y).astype(np.float64)
        p_target = p[is_target]
        eps = float(np.dot(p_target, miss[is_target]) / p_target.sum())
        source_mass = float(p[~is_target].sum())
        target_mass = float(p_target.sum())

        if eps >= 0.5:
            log.warning("round %d: target error %.4f >= 0.5; round discarded, stopping", t + 1, eps)
            model.stop_reason = f"round {t + 1} discarded (epsilon={eps:.6f}, clamped to {EPS_CEILING})"
            break
        beta_t = eps / (1.0 - eps)
        if eps == 0.0:
            beta_t = BETA_FLOOR
        # misclassified source × β, misclassified target × β_t^-1
        factor = np.where(is_target, beta_t ** -miss, beta ** miss)
        w = w * factor
        records.append(RoundRecord(learner, beta_t, eps, source_mass, target_mass))
        model.weights = w / w.sum()
        trace.append(model.weights)
        log.info("round %d: epsilon=%.6f beta_t=%.6g", t + 1, eps, beta_t)
        if eps == 0.0:
            log.info("round %d: target fitted perfectly; stopping early", t + 1)
            model.stop_reason = f"perfect target fit at round {t + 1}"
            break
    return model


def voting_rounds(model: BoostedModel) -> Sequence[RoundRecord]:
    """Rounds t ∈ [⌈T/2⌉, T] of the executed rounds (1-based)."""
    executed = len(model.rounds)
    first = math.ceil(executed / 2)
    return model.rounds[max(first, 1) - 1:]


def boosted_predict(model: BoostedModel, x: np.ndarray) -> np.ndarray:
    """Weighted vote with weight ln(1/β_t) per voting learner; ties go to label 0."""
    if not model.rounds:
        raise ContractError("boosted model has no stored rounds")
    votes = np.zeros((len(x), 2))
    for rec in voting_rounds(model):
        pred = np.asarray(rec.learner.predict(x)).astype(np.int64)
        votes[np.arange(len(x)), pred] += math.log(1.0 / rec.beta_t)
    return np.where(votes[:, 1] > votes[:, 0], 1, 0)


def effective_weights(model: BoostedModel, n: int, m: int) -> np.ndarray:
    """Final normalized instance weights for a model trained on n source + m target samples."""
    if (n, m) != (model.n, model.m):
        raise ContractError(f"model was trained on n={model.n}, m={model.m}; got n={n}, m={m}")
    return model.weights / model.weights.sum()


def write_round_log(model: BoostedModel, path) -> None:
    fields = ["round", "epsilon_t", "beta_t", "source_weight_mass", "target_weight_mass"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in model.log_rows():
            writer.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})


class DecisionStump:
    """Single-feature threshold classifier minimizing weighted 0/1 error.

    Ties between candidate splits are broken toward the lowest feature index,
    then the lowest threshold, then polarity +1 (predict 1 above threshold).
    """

    def __init__(self):
        self.feature = 0
        self.threshold = -np.inf
        self.polarity = 1

    def fit(self, x, y, sample_weight=None) -> DecisionStump:
        x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
        y = np.asarray(y, dtype=np.int64)
        w = np.full(len(y), 1.0 / len(y)) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
        best = (np.inf, 0, -np.inf, 1)
        for f in range(x.shape[1]):
            order = np.argsort(x[:, f], kind="stable")
            xs, ys, ws = x[order, f], y[order], w[order]
            distinct = np.flatnonzero(np.diff(xs) > 0)
            thresholds = np.concatenate([[-np.inf], (xs[distinct] + xs[distinct + 1]) / 2])
            cut = np.concatenate([[0], distinct + 1])  # samples [0, cut) lie at or below the threshold
            w_pos = np.concatenate([[0.0], np.cumsum(ws * (ys == 1))])
            w_neg = np.concatenate([[0.0], np.cumsum(ws * (ys == 0))])
            total_neg = w_neg[-1]
            total_pos = w_pos[-1]
            # polarity +1: below -> 0, above -> 1
            err_plus = w_pos[cut] + (total_neg - w_neg[cut])
            err_minus = w_neg[cut] + (total_pos - w_pos[cut])
            for k in range(len(thresholds)):
                for err, pol in ((err_plus[k], 1), (err_minus[k], -1)):
                    if err < best[0] - 1e-12:
                        best = (err, f, thresholds[k], pol)
        _, self.feature, self.threshold, self.polarity = best
        return self

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
        above = x[:, self.feature] > self.threshold
        return np.where(above, 1, 0) if self.polarity == 1 else np.where(above, 0, 1)
