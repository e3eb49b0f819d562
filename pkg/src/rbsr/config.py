"""Hierarchical experiment configuration (YAML presets + dotted overrides).

A config file has up to four sections::

    model: {...}      # ModelConfig fields
    train: {...}      # TrainConfig fields
    synthesis: {...}  # SynthesisConfig fields
    eval: {frames: [2, 6, 10, 14]}

plus an optional top-level ``seed``. Any unknown section or key is rejected
before anything runs.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import List, Optional, Sequence

import yaml

from .data.synthesis import SynthesisConfig
from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig

PRESETS = ("tiny", "small", "full")
SECTIONS = ("model", "train", "synthesis", "eval", "seed")
EVAL_KEYS = ("frames",)


def _dataclass_from(cls, data: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown {section} config keys: {unknown}")
    floats = {f.name for f in fields(cls) if isinstance(f.default, float)}
    values = {}
    for k, v in data.items():
        if isinstance(v, list):
            v = tuple(v)
        elif k in floats and isinstance(v, str):
            # YAML 1.1 reads "1e-4" (no dot) as a string
            try:
                v = float(v)
            except ValueError as e:
                raise ConfigError(f"bad {section} config: {k}={v!r} is not a number") from e
        values[k] = v
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"bad {section} config: {e}") from e


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    eval_frames: List[int] = field(default_factory=lambda: [2, 4, 6, 8, 10, 12, 14])
    seed: int = 0

    def to_dict(self) -> dict:
        syn = {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self.synthesis).items()}
        return {"seed": self.seed, "model": asdict(self.model), "train": asdict(self.train),
                "synthesis": syn, "eval": {"frames": list(self.eval_frames)}}

    def dump(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))
        return path


def preset_dict(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")
    text = resources.files("rbsr.configs").joinpath(f"{name}.yaml").read_text()
    return yaml.safe_load(text) or {}


def merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(text: str) -> dict:
    """``"train.total_iters=100"`` -> ``{"train": {"total_iters": 100}}``."""
    if "=" not in text:
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    key, raw = text.split("=", 1)
    parts = key.strip().split(".")
    value = yaml.safe_load(raw)
    node: dict = {}
    cur = node
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
    cur[parts[-1]] = value
    return node


def build(data: dict) -> ExperimentConfig:
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config sections: {unknown}")
    ev = data.get("eval") or {}
    bad = sorted(set(ev) - set(EVAL_KEYS))
    if bad:
        raise ConfigError(f"unknown eval config keys: {bad}")
    frames = [int(n) for n in ev.get("frames", [2, 4, 6, 8, 10, 12, 14])]
    if not frames or min(frames) < 1:
        raise ConfigError(f"eval frame counts must be >= 1, got {frames}")
    seed = int(data.get("seed", 0))
    train_data = dict(data.get("train") or {})
    train_data.setdefault("seed", seed)
    return ExperimentConfig(
        model=_dataclass_from(ModelConfig, data.get("model") or {}, "model"),
        train=_dataclass_from(TrainConfig, train_data, "train"),
        synthesis=_dataclass_from(SynthesisConfig, data.get("synthesis") or {}, "synthesis"),
        eval_frames=frames,
        seed=seed,
    )


def load_config(preset: Optional[str] = None, path=None, overrides: Sequence[str] = (),
                seed: Optional[int] = None) -> ExperimentConfig:
    """Resolve preset <- file <- overrides <- seed, in that order of precedence."""
    data: dict = preset_dict(preset) if preset else {}
    if path is not None:
        loaded = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path} does not hold a mapping")
        data = merge(data, loaded)
    for ov in overrides:
        data = merge(data, parse_override(ov))
    if seed is not None:
        data["seed"] = seed
        data.setdefault("train", {})["seed"] = seed
    return build(data)
