"""Run configuration: one JSON document driving every command.

The model section is kept as a template dict because several of its
dimensions (event width, vocabulary size, embedding width) are only known
once vocabularies and embeddings have been built; training resolves the
template into a concrete model configuration and echoes the result next to
its outputs. Serialization is canonical (sorted keys), so load(save(c))
reproduces c exactly.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .model import ModelConfig

ENV_SEED = "CAPTIONER_SEED"

MODEL_TEMPLATE_DEFAULTS = {
    "acoustic_kind": "lma",
    "event_mode": "one_hot",
    "event_threshold": 0.1,
    "bigru1_cells": 32,
    "bigru2_cells": 64,
    "ling_gru_cells": 128,
    "dec_gru_cells": 128,
    "embedding_dim": 256,
    "max_caption_len": 30,
    "dropout": 0.5,
    "batch_size": 64,
    "epochs": 50,
    "train_embeddings": False,
}

FEATURE_DIMS = {"lma": 64, "pretrained": 2048}


class ConfigError(ValueError):
    """Raised for unreadable or inconsistent run configurations."""


@dataclass(frozen=True)
class RunConfig:
    out_dir: str = "run-output"
    seed: int | None = None
    model: dict = field(default_factory=dict)
    dev_manifest: str | None = None
    val_manifest: str | None = None
    eval_manifest: str | None = None
    audio_dir: str | None = None
    scores_dir: str | None = None
    features_dir: str | None = None
    events_dir: str | None = None
    embedding_kind: str = "word2vec"
    glove_path: str | None = None
    word2vec_window: int = 2
    word2vec_negatives: int = 5
    word2vec_epochs: int = 15
    train_lr: float = 1e-3
    thresholds: tuple = (0.1, 0.2, 0.3, 0.7)
    ablate_thresholds: tuple = ()
    ablate_batch_sizes: tuple = ()
    ablate_embeddings: tuple = ()

    def __post_init__(self):
        if self.embedding_kind not in ("word2vec", "glove", "random"):
            raise ConfigError(f"unknown embedding_kind {self.embedding_kind!r}")
        for t in self.thresholds:
            if not 0.0 <= t <= 1.0:
                raise ConfigError(f"threshold {t} outside [0, 1]")
        unknown = set(self.model) - set(MODEL_TEMPLATE_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown model keys {sorted(unknown)}")

    # ---- derived paths ----------------------------------------------------

    def resolved_features_dir(self) -> Path:
        return Path(self.features_dir or Path(self.out_dir) / "features")

    def resolved_events_dir(self) -> Path:
        return Path(self.events_dir or Path(self.out_dir) / "events")

    def model_template(self) -> dict:
        merged = dict(MODEL_TEMPLATE_DEFAULTS)
        merged.update(self.model)
        return merged

    def resolve_model(
        self, vocab_size: int, event_dim: int, embedding_dim: int
    ) -> ModelConfig:
        """Fill in the data-dependent dimensions and build the real config."""
        t = self.model_template()
        feature_dim = FEATURE_DIMS[t["acoustic_kind"]]
        return ModelConfig(
            feature_dim=feature_dim,
            event_dim=event_dim,
            vocab_size=vocab_size,
            embedding_dim=embedding_dim,
            acoustic_kind=t["acoustic_kind"],
            event_mode=t["event_mode"],
            event_threshold=t["event_threshold"],
            bigru1_cells=t["bigru1_cells"],
            bigru2_cells=t["bigru2_cells"],
            ling_gru_cells=t["ling_gru_cells"],
            dec_gru_cells=t["dec_gru_cells"],
            max_caption_len=t["max_caption_len"],
            dropout=t["dropout"],
            batch_size=t["batch_size"],
            epochs=t["epochs"],
            seed=self.seed if self.seed is not None else 0,
            train_embeddings=t["train_embeddings"],
        )

    # ---- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        data = asdict(self)
        for key in ("thresholds", "ablate_thresholds", "ablate_batch_sizes", "ablate_embeddings"):
            data[key] = list(data[key])
        return data

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")

    @staticmethod
    def from_dict(data: dict) -> "RunConfig":
        known = {f.name for f in RunConfig.__dataclass_fields__.values()}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        kwargs = dict(data)
        for key in ("thresholds", "ablate_thresholds", "ablate_batch_sizes", "ablate_embeddings"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return RunConfig(**kwargs)

    @staticmethod
    def load(path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return RunConfig.from_dict(data)


def resolve_seed(flag_seed: int | None, config_seed: int | None) -> int:
    """Flag beats config beats the environment variable beats zero."""
    if flag_seed is not None:
        return flag_seed
    if config_seed is not None:
        return config_seed
    env = os.environ.get(ENV_SEED)
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"{ENV_SEED}={env!r} is not an integer") from exc
    return 0


def with_overrides(cfg: RunConfig, seed: int | None = None, out_dir: str | None = None) -> RunConfig:
    """Apply CLI flag overrides, returning a new config."""
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if out_dir is not None:
        changes["out_dir"] = out_dir
    return replace(cfg, **changes) if changes else cfg
