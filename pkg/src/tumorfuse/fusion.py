"""Decision-template fusion of several probabilistic classifiers.

A decision profile stacks the l classifiers' h-class outputs for one input
into an l×h matrix. The decision template of a class is the mean profile of
(up to ``N_cap``) training inputs of that class. A new profile is assigned by
its Frobenius distance to the two templates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, EstimationError

ROW_TOLERANCE = 1e-6
DEFAULT_N_CAP = 100
# distances closer than this (relative) are a tie; absorbs float rounding of exact ties
TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class DecisionProfile:
    matrix: np.ndarray

    @property
    def l(self) -> int:
        return self.matrix.shape[0]

    @property
    def h(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class DecisionTemplate:
    label: int
    matrix: np.ndarray
    sample_count: int


def build_decision_profile(outputs: Sequence[Sequence[float]]) -> DecisionProfile:
    """Stack classifier outputs row by row; each must be a probability vector."""
    rows = [np.asarray(o, dtype=np.float64).reshape(-1) for o in outputs]
    if not rows:
        raise ContractError("need at least one classifier output")
    h = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != h:
            raise ContractError(f"classifier {i} output has length {len(row)}, expected {h}")
        if np.any(row < -ROW_TOLERANCE) or abs(row.sum() - 1.0) > ROW_TOLERANCE:
            raise ContractError(f"classifier {i} output is not a probability vector (sum={row.sum():.8f})")
    return DecisionProfile(np.stack(rows))


def build_decision_templates(profiles: Iterable[tuple[DecisionProfile, int]], n_cap: int = DEFAULT_N_CAP,
                             num_labels: int = 2) -> dict[int, DecisionTemplate]:
    """Per-label mean of the first min(n_cap, available) profiles, in the order given."""
    if n_cap < 1:
        raise ContractError("n_cap must be >= 1")
    chosen: dict[int, list[np.ndarray]] = {k: [] for k in range(num_labels)}
    for dp, label in profiles:
        if label not in chosen:
            raise ContractError(f"label {label} outside 0..{num_labels - 1}")
        if len(chosen[label]) < n_cap:
            chosen[label].append(dp.matrix)
    templates = {}
    for label, mats in chosen.items():
        if not mats:
            raise EstimationError(f"no training profiles for label {label}")
        shapes = {m.shape for m in mats}
        if len(shapes) != 1:
            raise ContractError(f"profiles for label {label} have mixed shapes {shapes}")
        templates[label] = DecisionTemplate(label, np.mean(np.stack(mats), axis=0), len(mats))
    return templates


def template_distances(dp: DecisionProfile, templates: dict[int, DecisionTemplate]) -> tuple[float, float]:
    if 0 not in templates or 1 not in templates:
        raise ContractError("templates for labels 0 and 1 are required")
    out = []
    for k in (0, 1):
        tm = templates[k].matrix
        if tm.shape != dp.matrix.shape:
            raise ContractError(f"profile shape {dp.matrix.shape} != template {k} shape {tm.shape}")
        out.append(float(np.sqrt(np.sum((dp.matrix - tm) ** 2))))
    return out[0], out[1]


def fuse(dp: DecisionProfile, templates: dict[int, DecisionTemplate]) -> tuple[float, int]:
    """Return (score, label) with score = d0/(d0+d1). Label 1 needs score > 0.5; ties go to label 0."""
    d0, d1 = template_distances(dp, templates)
    total = d0 + d1
    if d0 - d1 <= TIE_TOLERANCE * total:
        return (0.5 if total == 0 else min(d0 / total, 0.5)), 0
    return d0 / total, 1


def fuse_batch(profiles: np.ndarray, templates: dict[int, DecisionTemplate]) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`fuse` over an array of profiles of shape (N, l, h)."""
    profiles = np.asarray(profiles, dtype=np.float64)
    t0, t1 = templates[0].matrix, templates[1].matrix
    if profiles.shape[1:] != t0.shape or t0.shape != t1.shape:
        raise ContractError(f"profile shape {profiles.shape[1:]} does not match templates {t0.shape}")
    d0 = np.sqrt(np.sum((profiles - t0) ** 2, axis=(1, 2)))
    d1 = np.sqrt(np.sum((profiles - t1) ** 2, axis=(1, 2)))
    total = d0 + d1
    with np.errstate(invalid="ignore", divide="ignore"):
        score = np.where(total == 0, 0.5, d0 / np.where(total == 0, 1, total))
    labels = (d0 - d1 > TIE_TOLERANCE * total).astype(np.int64)
    return np.where(labels == 0, np.minimum(score, 0.5), score), labels
