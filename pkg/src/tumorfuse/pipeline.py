"""End-to-end orchestration: data, three branches, decision templates, metrics, checkpoints."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, parse_config
from .data import LabeledDataset, ingest_dataset, split, synth_generate, truncate
from .errors import CheckpointError, ContractError
from .fusion import DecisionProfile, DecisionTemplate, build_decision_templates, fuse_batch
from .tradaboost import (BoostedModel, WeightedDataset, effective_weights, tradaboost_train, voting_rounds,
                         write_round_log)
from .training import BranchClassifier, BranchSpec, EpochRecord, FitConfig, weak_learner_factory

log = logging.getLogger(__name__)

BRANCH_ORDER = ("vit", "capsnet", "cnn")
BOOSTED_BRANCHES = ("vit", "capsnet")
# seed offsets keep the three branches' training streams independent
SEED_OFFSETS = {"vit": 11, "capsnet": 23, "cnn": 37}


@dataclass
class RunData:
    train: LabeledDataset
    test: LabeledDataset
    val: LabeledDataset
    source: LabeledDataset | None


def _load_domain(where: str, counts, cfg: RunConfig, domain: str) -> LabeledDataset | None:
    if where == "none":
        return None
    if where == "synthetic":
        return synth_generate(tuple(counts), cfg.image_size, cfg.seed, domain)
    return ingest_dataset(where, cfg.size)


def prepare_data(cfg: RunConfig) -> RunData:
    """Load or synthesize both domains and split the target.

    The curve "validation" split is the test split unless ``val_ratio`` > 0,
    in which case it is carved out of the training portion.
    """
    target = _load_domain(cfg.data.target, cfg.data.target_counts, cfg, "target")
    if target is None:
        raise ContractError("a target dataset is required")
    source = _load_domain(cfg.data.source, cfg.data.source_counts, cfg, "source")
    train, test = split(target, cfg.split_ratio, cfg.seed)
    val = test
    if cfg.val_ratio > 0:
        train, val = split(train, 1.0 - cfg.val_ratio, cfg.seed + 1)
    if cfg.data.target_truncate:
        train = truncate(train, cfg.data.target_truncate, cfg.seed)
    log.info("target train %s, test %s, source %s", train.counts(), test.counts(),
             source.counts() if source is not None else None)
    return RunData(train, test, val, source)


class BoostedBranch:
    """The voting ensemble of a TrAdaBoost run, exposed like a single branch.

    Class probabilities are the normalized vote masses ln(1/β_t) of the
    voting rounds.
    """

    def __init__(self, name: str, learners: list[BranchClassifier], betas: list[float]):
        if not learners:
            raise ContractError("boosted branch needs at least one learner")
        self.name = name
        self.learners = learners
        self.betas = betas
        self.history: list[EpochRecord] = []

    @classmethod
    def from_model(cls, name: str, model: BoostedModel) -> BoostedBranch:
        rounds = voting_rounds(model)
        return cls(name, [r.learner for r in rounds], [r.beta_t for r in rounds])

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        votes = np.zeros((len(x), 2))
        for learner, beta_t in zip(self.learners, self.betas):
            pred = learner.predict(x)
            votes[np.arange(len(x)), pred] += math.log(1.0 / beta_t)
        total = votes.sum(axis=1, keepdims=True)
        return np.where(total > 0, votes / np.where(total > 0, total, 1.0), 0.5)

    def predict(self, x: np.ndarray) -> np.ndarray:
        probs = self.predict_proba(x)
        return np.where(probs[:, 1] > probs[:, 0], 1, 0)


@dataclass
class Artifacts:
    config: RunConfig
    branches: dict[str, BranchClassifier | BoostedBranch]
    templates: dict[int, DecisionTemplate]
    boost_models: dict[str, BoostedModel] = field(default_factory=dict)

    @property
    def curves(self) -> dict[str, list[EpochRecord]]:
        return {name: list(self.branches[name].history) for name in BRANCH_ORDER}


def _train_boosted(kind: str, spec: BranchSpec, fit_cfg: FitConfig, data: RunData, cfg: RunConfig):
    source = data.source
    x_s = source.images if source is not None else data.train.images[:0]
    y_s = source.labels if source is not None else data.train.labels[:0]
    wd = WeightedDataset.combine(x_s, y_s, data.train.images, data.train.labels)
    factory = weak_learner_factory(spec, fit_cfg, epochs=cfg.boost.weak_epochs)
    model = tradaboost_train(wd, factory, cfg.boost.rounds)
    log.info("%s: %d boosting rounds kept (%s)", kind, len(model.rounds), model.stop_reason)
    if cfg.boost.mode == "ensemble":
        branch = BoostedBranch.from_model(kind, model)
        return branch, model
    weights = effective_weights(model, wd.n, wd.m)
    clf = BranchClassifier(spec, fit_cfg, name=kind)
    clf.fit(wd.x, wd.y, sample_weight=weights, val=(data.val.images, data.val.labels))
    return clf, model


def branch_profiles(branches: dict, images: np.ndarray) -> np.ndarray:
    """Decision profiles for a batch of images: N × 3 branches × 2 labels."""
    return np.stack([branches[name].predict_proba(images) for name in BRANCH_ORDER], axis=1)


def estimate_templates(branches: dict, train: LabeledDataset, cap: int, seed: int) -> dict[int, DecisionTemplate]:
    """Templates from training profiles, selected after a seeded shuffle."""
    order = np.random.default_rng([seed, 5]).permutation(len(train))
    profiles = branch_profiles(branches, train.images[order])
    labels = train.labels[order]
    return build_decision_templates(((DecisionProfile(p), int(y)) for p, y in zip(profiles, labels)), cap)


def train_all(cfg: RunConfig, data: RunData | None = None) -> Artifacts:
    """Boost branches 1 and 2 across domains, train branch 3 on the target, then fit templates."""
    data = data or prepare_data(cfg)
    branches: dict = {}
    boost_models: dict[str, BoostedModel] = {}
    for kind in BRANCH_ORDER:
        spec = cfg.branches[kind]
        fit_cfg = cfg.fit_config(SEED_OFFSETS[kind])
        if kind in BOOSTED_BRANCHES:
            branches[kind], boost_models[kind] = _train_boosted(kind, spec, fit_cfg, data, cfg)
        else:
            clf = BranchClassifier(spec, fit_cfg, name=kind)
            clf.fit(data.train.images, data.train.labels, val=(data.val.images, data.val.labels))
            branches[kind] = clf
    templates = estimate_templates(branches, data.train, cfg.template_cap, cfg.seed)
    return Artifacts(cfg, branches, templates, boost_models)


# -- evaluation -----------------------------------------------------------------
@dataclass
class Metrics:
    """Fused confusion matrix with tumor (label 0) as the positive class.

    ``confusion`` is indexed [true][predicted] over labels (0, 1), so it reads
    [[TP, FN], [FP, TN]].
    """

    confusion: np.ndarray
    accuracy: float
    branch_accuracy: dict[str, float]
    curves: dict[str, list[EpochRecord]] = field(default_factory=dict)

    @property
    def tp(self) -> int:
        return int(self.confusion[0, 0])

    @property
    def fn(self) -> int:
        return int(self.confusion[0, 1])

    @property
    def fp(self) -> int:
        return int(self.confusion[1, 0])

    @property
    def tn(self) -> int:
        return int(self.confusion[1, 1])

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion.astype(int).tolist(),
            "accuracy": self.accuracy,
            "branch_accuracy": dict(self.branch_accuracy),
            "curves": {name: [vars(r) for r in recs] for name, recs in self.curves.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> Metrics:
        curves = {name: [EpochRecord(**r) for r in recs] for name, recs in d.get("curves", {}).items()}
        return cls(np.asarray(d["confusion"], dtype=np.int64), float(d["accuracy"]),
                   {k: float(v) for k, v in d["branch_accuracy"].items()}, curves)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Metrics):
            return NotImplemented
        return json.dumps(self.to_dict(), sort_keys=True) == json.dumps(other.to_dict(), sort_keys=True)


def confusion_matrix(truth: np.ndarray, pred: np.ndarray) -> np.ndarray:
    cm = np.zeros((2, 2), dtype=np.int64)
    np.add.at(cm, (truth, pred), 1)
    return cm


def evaluate(artifacts: Artifacts, test: LabeledDataset) -> Metrics:
    if len(test) == 0:
        raise ContractError("test set is empty")
    profiles = branch_profiles(artifacts.branches, test.images)
    _, fused = fuse_batch(profiles, artifacts.templates)
    cm = confusion_matrix(test.labels, fused)
    branch_acc = {name: float(np.mean(np.argmax(profiles[:, i], axis=1) == test.labels))
                  for i, name in enumerate(BRANCH_ORDER)}
    accuracy = (cm[0, 0] + cm[1, 1]) / cm.sum()
    return Metrics(cm, float(accuracy), branch_acc, artifacts.curves)


# -- persistence ------------------------------------------------------------------
def _templates_meta(templates: dict[int, DecisionTemplate]) -> list[dict]:
    return [{"label": t.label, "matrix": t.matrix.tolist(), "sample_count": t.sample_count}
            for _, t in sorted(templates.items())]


def _templates_from_meta(rows: list[dict]) -> dict[int, DecisionTemplate]:
    return {int(r["label"]): DecisionTemplate(int(r["label"]), np.asarray(r["matrix"], dtype=np.float64),
                                              int(r["sample_count"])) for r in rows}


def save_artifacts(artifacts: Artifacts, outdir) -> list[Path]:
    """Write one checkpoint per branch (templates ride along in each) plus round logs."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    cfg = artifacts.config
    shared = {
        "config": cfg.to_ini(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "templates": _templates_meta(artifacts.templates),
    }
    written = []
    for name in BRANCH_ORDER:
        branch = artifacts.branches[name]
        meta = dict(shared, branch=name, history=[vars(r) for r in branch.history])
        if isinstance(branch, BoostedBranch):
            tensors = {}
            members = []
            for k, (learner, beta_t) in enumerate(zip(branch.learners, branch.betas)):
                tensors.update({f"member{k}.{key}": v for key, v in learner.state_dict().items()})
                members.append({"spec": learner.spec.to_dict(), "beta_t": beta_t})
            meta["ensemble"] = members
        else:
            tensors = dict(branch.state_dict())
            meta["spec"] = branch.spec.to_dict()
        path = outdir / f"{name}.fbst"
        save_checkpoint(path, tensors, meta)
        written.append(path)
    for name, model in artifacts.boost_models.items():
        write_round_log(model, outdir / f"{name}_rounds.csv")
    return written


def _spec_from_dict(d: dict) -> BranchSpec:
    return BranchSpec(**{**d, "image_size": tuple(d["image_size"]), "stage_channels": tuple(d["stage_channels"])})


def _restore_branch(name: str, tensors: dict, meta: dict):
    history = [EpochRecord(**r) for r in meta.get("history", [])]
    if "ensemble" in meta:
        learners, betas = [], []
        for k, member in enumerate(meta["ensemble"]):
            clf = BranchClassifier(_spec_from_dict(member["spec"]), name=f"{name}-member{k}")
            prefix = f"member{k}."
            clf.load_state_dict({key[len(prefix):]: v for key, v in tensors.items() if key.startswith(prefix)})
            learners.append(clf)
            betas.append(float(member["beta_t"]))
        branch = BoostedBranch(name, learners, betas)
    else:
        branch = BranchClassifier(_spec_from_dict(meta["spec"]), name=name)
        branch.load_state_dict(tensors)
    branch.history = history
    return branch


def load_artifacts(rundir) -> Artifacts:
    rundir = Path(rundir)
    branches, templates, cfg, config_hash = {}, None, None, None
    for name in BRANCH_ORDER:
        path = rundir / f"{name}.fbst"
        if not path.exists():
            raise CheckpointError(f"missing checkpoint {path}")
        tensors, meta = load_checkpoint(path)
        if config_hash is None:
            config_hash = meta["config_hash"]
            cfg = parse_config(meta["config"])
            templates = _templates_from_meta(meta["templates"])
        elif meta["config_hash"] != config_hash:
            raise CheckpointError(f"{path} belongs to a different run (config hash mismatch)")
        branches[name] = _restore_branch(name, tensors, meta)
    if cfg.config_hash() != config_hash:
        raise CheckpointError("stored config does not reproduce its recorded hash")
    return Artifacts(cfg, branches, templates)
