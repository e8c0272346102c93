"""Run configuration with every tunable and its default."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .datasets import SbmSpec


@dataclass(frozen=True)
class RunConfig:
    smoothing_steps: int = 3
    n_tokens: int = 3
    # 256 reproduces the full-scale setting
    hidden_dim: int = 64
    steps_per_layer: int = 1
    task_lr: float = 0.005
    task_epochs: int = 200
    pretrain_lr: float = 0.001
    pretrain_epochs: int = 200
    temperature: float = 0.5
    edge_removal_prob: float = 0.2
    attr_mask_prob: float = 0.3
    fresh_views: bool = True
    ordering: str = "ascending"
    prompt_on: bool = True
    head_on: bool = True
    task_id_on: bool = True
    balanced_accuracy: bool = False
    oracle_task_ids: bool = False
    seed: int = 0
    bundle: str | None = None
    sbm: SbmSpec = field(default_factory=SbmSpec)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "sbm" in data:
            sbm = data["sbm"]
            data["sbm"] = sbm if isinstance(sbm, SbmSpec) else SbmSpec.from_dict(sbm)
        return cls(**data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))
