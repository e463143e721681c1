"""Branch classifiers and the mini-batch training loop shared by all three."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .attention import ViTClassifier, ViTConfig
from .backbones import BackboneConfig, VGGMini
from .capsnet import CapsNetClassifier, CapsNetConfig, capsule_lengths, lengths_to_probs, margin_loss
from .errors import ContractError, DivergenceError
from .nn import Linear, Module, Optimizer, cross_entropy, one_hot
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

BRANCH_KINDS = ("vit", "capsnet", "cnn")


class CNNClassifier(Module):
    """Classifier 3: conv/pool stages followed by two dense layers."""

    def __init__(self, backbone_cfg: BackboneConfig, hidden: int = 64, num_classes: int = 2):
        rng = np.random.default_rng(backbone_cfg.seed + 3)
        self.backbone = VGGMini(backbone_cfg)
        c, h, w = backbone_cfg.feature_shape()
        self.fc1 = Linear(c * h * w, hidden, rng)
        self.fc2 = Linear(hidden, num_classes, rng)

    def forward(self, images: Tensor) -> Tensor:
        batched = images.ndim == 4
        x = images if batched else T.reshape(images, (1,) + images.shape)
        feats = self.backbone(x)
        flat = T.reshape(feats, (feats.shape[0], -1))
        probs = T.softmax(self.fc2(T.relu(self.fc1(flat))), axis=-1)
        return probs if batched else T.reshape(probs, probs.shape[1:])


@dataclass
class BranchSpec:
    """Architecture of one branch; everything needed to rebuild it from a checkpoint."""

    kind: str
    image_size: tuple[int, int] = (64, 64)
    in_channels: int = 1
    stage_channels: tuple[int, ...] = (8, 16, 32)
    blocks_per_stage: int = 1
    d_model: int = 32
    heads: int = 4
    depth: int = 2
    token_source: str = "features"
    patch_size: int = 4
    routing_iterations: int = 3
    primary_types: int = 4
    primary_dim: int = 8
    class_dim: int = 16
    hidden: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.kind not in BRANCH_KINDS:
            raise ContractError(f"branch kind must be one of {BRANCH_KINDS}, got {self.kind!r}")
        self.image_size = tuple(int(s) for s in self.image_size)
        self.stage_channels = tuple(int(c) for c in self.stage_channels)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_size"] = list(self.image_size)
        d["stage_channels"] = list(self.stage_channels)
        return d

    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig(
            kind="resnet_mini" if self.kind == "capsnet" else "vgg_mini",
            stage_channels=self.stage_channels, blocks_per_stage=self.blocks_per_stage,
            input_size=self.image_size, in_channels=self.in_channels, seed=self.seed,
        )

    def build(self) -> Module:
        bcfg = self.backbone_config()
        if self.kind == "vit":
            return ViTClassifier(bcfg, ViTConfig(d_model=self.d_model, heads=self.heads, depth=self.depth,
                                                 token_source=self.token_source, patch_size=self.patch_size,
                                                 seed=self.seed))
        if self.kind == "capsnet":
            return CapsNetClassifier(bcfg, CapsNetConfig(d_model=self.d_model, heads=self.heads,
                                                         primary_types=self.primary_types,
                                                         primary_dim=self.primary_dim, class_dim=self.class_dim,
                                                         routing_iterations=self.routing_iterations,
                                                         seed=self.seed))
        return CNNClassifier(bcfg, hidden=self.hidden)


@dataclass
class FitConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    freeze_backbone: bool = False
    seed: int = 0


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float = float("nan")
    val_accuracy: float = float("nan")


class BranchClassifier:
    """A branch model plus its loss, trainable with per-sample weights.

    Also usable as a TrAdaBoost weak learner: ``fit`` receives normalized
    weights and rescales them by the sample count so they average to 1.
    """

    def __init__(self, spec: BranchSpec, fit_cfg: FitConfig | None = None, name: str | None = None):
        self.spec = spec
        self.fit_cfg = fit_cfg or FitConfig()
        self.name = name or spec.kind
        self.model = spec.build()
        self.history: list[EpochRecord] = []

    # -- forward helpers ------------------------------------------------------
    def _forward(self, x: Tensor, y: np.ndarray, weights: np.ndarray | None) -> tuple[Tensor, Tensor]:
        target = one_hot(y, 2)
        if self.spec.kind == "capsnet":
            v = self.model.class_capsules(x)
            probs = lengths_to_probs(capsule_lengths(v))
            return margin_loss(v, target, weights), probs
        probs = self.model(x)
        return cross_entropy(probs, target, weights), probs

    def trainable_parameters(self) -> list[Tensor]:
        if not self.fit_cfg.freeze_backbone:
            return self.model.parameters()
        backbone = getattr(self.model, "backbone", None)
        frozen = {id(p) for p in backbone.parameters()} if backbone is not None else set()
        for p in self.model.parameters():
            if id(p) in frozen:
                p.requires_grad = False
        return [p for p in self.model.parameters() if p.requires_grad]

    # -- training ----------------------------------------------------------------
    def fit(self, x: np.ndarray, y: np.ndarray, sample_weight: np.ndarray | None = None,
            val: tuple[np.ndarray, np.ndarray] | None = None, epochs: int | None = None) -> list[EpochRecord]:
        cfg = self.fit_cfg
        epochs = cfg.epochs if epochs is None else epochs
        x = np.asarray(x, dtype=np.float32)
        y = np.asarray(y, dtype=np.int64)
        n = len(y)
        if sample_weight is not None:
            w = np.asarray(sample_weight, dtype=np.float64)
            w = (w * (n / w.sum())).astype(np.float32)
        else:
            w = None
        opt = Optimizer(self.trainable_parameters(), kind="adam", lr=cfg.learning_rate)
        rng = np.random.default_rng([cfg.seed, self.spec.seed, 7])
        step = 0
        self.history = []
        for epoch in range(1, epochs + 1):
            order = rng.permutation(n)
            loss_sum, correct = 0.0, 0
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                opt.zero_grad()
                loss, probs = self._forward(Tensor(x[idx]), y[idx], None if w is None else w[idx])
                value = float(loss.data)
                step += 1
                if not np.isfinite(value):
                    raise DivergenceError(self.name, step, value)
                T.backward(loss)
                opt.step()
                loss_sum += value * len(idx)
                correct += int(np.sum(np.argmax(probs.data, axis=1) == y[idx]))
            rec = EpochRecord(epoch, loss_sum / n, correct / n)
            if val is not None:
                rec.val_loss, rec.val_accuracy = self.evaluate_loss(*val)
            self.history.append(rec)
            log.info("%s epoch %d: loss=%.4f acc=%.4f val_loss=%.4f val_acc=%.4f", self.name, epoch,
                     rec.train_loss, rec.train_accuracy, rec.val_loss, rec.val_accuracy)
        return self.history

    def evaluate_loss(self, x: np.ndarray, y: np.ndarray, batch_size: int = 128) -> tuple[float, float]:
        total, correct = 0.0, 0
        with no_grad():
            for start in range(0, len(y), batch_size):
                sl = slice(start, start + batch_size)
                loss, probs = self._forward(Tensor(np.asarray(x[sl], dtype=np.float32)), y[sl], None)
                total += float(loss.data) * len(y[sl])
                correct += int(np.sum(np.argmax(probs.data, axis=1) == y[sl]))
        return total / len(y), correct / len(y)

    def predict_proba(self, x: np.ndarray, batch_size: int = 128) -> np.ndarray:
        out = []
        with no_grad():
            for start in range(0, len(x), batch_size):
                batch = Tensor(np.asarray(x[start:start + batch_size], dtype=np.float32))
                out.append(self.model(batch).data.astype(np.float64))
        probs = np.concatenate(out)
        return probs / probs.sum(axis=1, keepdims=True)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(x), axis=1)

    def state_dict(self):
        return self.model.state_dict()

    def load_state_dict(self, state) -> None:
        self.model.load_state_dict(state)


def weak_learner_factory(spec: BranchSpec, fit_cfg: FitConfig, epochs: int = 2):
    """Factory for TrAdaBoost: round t gets a fresh branch seeded by t."""

    def make(t: int) -> BranchClassifier:
        round_spec = BranchSpec(**{**spec.to_dict(), "seed": spec.seed + 1000 * (t + 1)})
        cfg = FitConfig(epochs=epochs, batch_size=fit_cfg.batch_size, learning_rate=fit_cfg.learning_rate,
                        freeze_backbone=fit_cfg.freeze_backbone, seed=fit_cfg.seed + t + 1)
        return BranchClassifier(round_spec, cfg, name=f"{spec.kind}-round{t + 1}")

    return make
