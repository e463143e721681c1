"""Run configuration: an INI file with one section per concern.

Every key has a default (see ``DEFAULTS``); unknown sections or keys are
rejected so that typos never silently fall back to defaults.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .training import BranchSpec, FitConfig

DEFAULTS: dict[str, dict[str, str]] = {
    "run": {
        "seed": "0",
        "epochs": "10",
        "batch_size": "32",
        "learning_rate": "0.001",
        "split_ratio": "0.8",
        "val_ratio": "0",
        "image_size": "64",
        "template_cap": "100",
        "output_dir": "run",
    },
    "data": {
        # "synthetic" or a directory in the <root>/<class>/*.pgm|*.png layout
        "target": "synthetic",
        "source": "synthetic",
        "target_counts": "500,400",
        "source_counts": "200,250",
        "target_truncate": "0",
    },
    "tradaboost": {
        "rounds": "10",
        "weak_epochs": "2",
        # weights: final training on the union with boosted instance weights
        # ensemble: keep the voting ensemble as the branch model
        "mode": "weights",
    },
    "vit": {
        "stage_channels": "8,16,32",
        "blocks_per_stage": "1",
        "d_model": "32",
        "heads": "4",
        "depth": "2",
        "token_source": "features",
        "patch_size": "4",
    },
    "capsnet": {
        "stage_channels": "8,16,32",
        "blocks_per_stage": "1",
        "d_model": "32",
        "heads": "4",
        "routing_iterations": "3",
        "primary_types": "4",
        "primary_dim": "8",
        "class_dim": "16",
    },
    "cnn": {
        "stage_channels": "8,16,32",
        "blocks_per_stage": "1",
        "hidden": "64",
    },
}

BOOST_MODES = ("weights", "ensemble")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


@dataclass
class DataConfig:
    target: str = "synthetic"
    source: str = "synthetic"
    target_counts: tuple[int, int] = (500, 400)
    source_counts: tuple[int, int] = (200, 250)
    target_truncate: int = 0


@dataclass
class BoostConfig:
    rounds: int = 10
    weak_epochs: int = 2
    mode: str = "weights"


@dataclass
class RunConfig:
    seed: int = 0
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    split_ratio: float = 0.8
    val_ratio: float = 0.0
    image_size: int = 64
    template_cap: int = 100
    output_dir: str = "run"
    data: DataConfig = field(default_factory=DataConfig)
    boost: BoostConfig = field(default_factory=BoostConfig)
    branches: dict[str, BranchSpec] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.split_ratio < 1:
            raise ConfigError(f"split_ratio must lie in (0,1), got {self.split_ratio}")
        if not 0 <= self.val_ratio < 1:
            raise ConfigError(f"val_ratio must lie in [0,1), got {self.val_ratio}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.boost.rounds < 1:
            raise ConfigError(f"tradaboost rounds must be >= 1, got {self.boost.rounds}")
        if self.boost.mode not in BOOST_MODES:
            raise ConfigError(f"tradaboost mode must be one of {BOOST_MODES}, got {self.boost.mode!r}")
        if self.template_cap < 1:
            raise ConfigError("template_cap must be >= 1")
        for kind in ("vit", "capsnet", "cnn"):
            if kind not in self.branches:
                self.branches[kind] = _branch_from_section(kind, DEFAULTS[kind], self)

    @property
    def size(self) -> tuple[int, int]:
        return (self.image_size, self.image_size)

    def fit_config(self, seed_offset: int = 0) -> FitConfig:
        return FitConfig(epochs=self.epochs, batch_size=self.batch_size,
                         learning_rate=self.learning_rate, seed=self.seed + seed_offset)

    def to_dict(self) -> dict:
        return {
            "run": {k: getattr(self, k) for k in DEFAULTS["run"]},
            "data": {"target": self.data.target, "source": self.data.source,
                     "target_counts": list(self.data.target_counts),
                     "source_counts": list(self.data.source_counts),
                     "target_truncate": self.data.target_truncate},
            "tradaboost": {"rounds": self.boost.rounds, "weak_epochs": self.boost.weak_epochs,
                           "mode": self.boost.mode},
            "branches": {k: spec.to_dict() for k, spec in sorted(self.branches.items())},
        }

    def to_ini(self) -> str:
        """Serialize every key; ``parse_config(cfg.to_ini())`` reproduces ``cfg``."""
        d = self.to_dict()
        sections = {"run": d["run"], "data": d["data"], "tradaboost": d["tradaboost"]}
        for kind in ("vit", "capsnet", "cnn"):
            spec = d["branches"][kind]
            sections[kind] = {k: spec[k] for k in DEFAULTS[kind]}
        lines = []
        for name, keys in sections.items():
            lines.append(f"[{name}]")
            lines.extend(f"{k} = {_format_value(v)}" for k, v in keys.items())
            lines.append("")
        return "\n".join(lines)

    def config_hash(self) -> str:
        """SHA-256 over the canonical JSON form; output_dir is excluded."""
        d = self.to_dict()
        d["run"].pop("output_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode("utf-8")).hexdigest()


def _format_value(v) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(map(str, v))
    return repr(v) if isinstance(v, float) else str(v)


def _branch_from_section(kind: str, section, run: RunConfig) -> BranchSpec:
    kwargs = {"kind": kind, "image_size": run.size, "seed": run.seed}
    for key, raw in section.items():
        if key == "stage_channels":
            kwargs[key] = _ints(raw)
        elif key == "token_source":
            if raw not in ("features", "patches"):
                raise ConfigError(f"[{kind}] token_source must be 'features' or 'patches', got {raw!r}")
            kwargs[key] = raw
        else:
            kwargs[key] = int(raw)
    return BranchSpec(**kwargs)


def parse_config(text: str = "", overrides: dict[str, dict[str, str]] | None = None) -> RunConfig:
    """Parse INI text; ``overrides`` ({section: {key: value}}) win over the file."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
        parser.read_dict(overrides or {})
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    for section in parser.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown section [{section}]")
        unknown = set(parser[section]) - set(DEFAULTS[section])
        if unknown:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    merged = {name: {**keys, **(dict(parser[name]) if parser.has_section(name) else {})}
              for name, keys in DEFAULTS.items()}
    try:
        r = merged["run"]
        d = merged["data"]
        b = merged["tradaboost"]
        run = RunConfig(
            seed=int(r["seed"]), epochs=int(r["epochs"]), batch_size=int(r["batch_size"]),
            learning_rate=float(r["learning_rate"]), split_ratio=float(r["split_ratio"]),
            val_ratio=float(r["val_ratio"]), image_size=int(r["image_size"]),
            template_cap=int(r["template_cap"]), output_dir=r["output_dir"],
            data=DataConfig(d["target"], d["source"], _ints(d["target_counts"]), _ints(d["source_counts"]),
                            int(d["target_truncate"])),
            boost=BoostConfig(int(b["rounds"]), int(b["weak_epochs"]), b["mode"]),
            branches={},
        )
        run.branches = {kind: _branch_from_section(kind, merged[kind], run) for kind in ("vit", "capsnet", "cnn")}
    except ValueError as exc:
        raise ConfigError(f"bad value in config: {exc}") from exc
    return run


def load_config(path=None, overrides: dict[str, dict[str, str]] | None = None) -> RunConfig:
    """Read a config file (or start from defaults when ``path`` is None)."""
    text = ""
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, overrides)


def default_config_text() -> str:
    """The full default config, every key spelled out."""
    lines = []
    for section, keys in DEFAULTS.items():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {v}" for k, v in keys.items())
        lines.append("")
    return "\n".join(lines)
