"""Structured run configuration: one JSON file holding the model, training,
codec and pipeline sections. Unknown keys are rejected recursively; each
section is validated by its owning dataclass.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from .codec import CodecConfig
from .errors import ConfigError
from .rarn import RarnConfig
from .training import TrainConfig
from .tvc import TvcConfig


def _build_section(cls, data: dict, section: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be an object")
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in section {section!r}: {sorted(unknown)}")
    fixed = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            val = data[f.name]
            if isinstance(val, list) and (
                isinstance(f.default, tuple) or str(f.type).startswith("Tuple")
            ):
                val = tuple(val)
            fixed[f.name] = val
    try:
        return cls(**fixed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid section {section!r}: {exc}") from exc


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "vidprecode_out"
    scale: Optional[float] = 2.0
    size: Optional[Tuple[int, int]] = None          # (width, height) target
    methods: List[str] = field(default_factory=lambda: ["bicubic", "rarn"])
    upsample: str = "bicubic"
    model_checkpoint: Optional[str] = None
    inputs: List[str] = field(default_factory=list)
    train_data: str = "synthetic:8:64"              # or comma-joined y4m paths
    rarn: RarnConfig = field(default_factory=RarnConfig)
    tvc: TvcConfig = field(default_factory=TvcConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    codec: CodecConfig = field(default_factory=lambda: CodecConfig(kind="mock", ladder=[64, 48, 32, 16]))

    def __post_init__(self):
        if self.scale is None and self.size is None:
            raise ConfigError("one of 'scale' or 'size' is required")
        if self.upsample not in ("bicubic", "lanczos"):
            raise ConfigError(f"upsample must be bicubic|lanczos, got {self.upsample!r}")
        known = {"bicubic", "lanczos", "rarn", "rarn-lightweight"}
        bad = set(self.methods) - known
        if bad:
            raise ConfigError(f"unknown methods {sorted(bad)}; choose from {sorted(known)}")


_SECTIONS = {"rarn": RarnConfig, "tvc": TvcConfig, "train": TrainConfig, "codec": CodecConfig}


def load_run_config(path: str) -> Tuple[RunConfig, str]:
    """Parse and validate; returns (config, hash of the canonical document)."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path!r} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path!r} must hold a JSON object")

    digest = hashlib.sha256(json.dumps(raw, sort_keys=True).encode()).hexdigest()[:16]

    top_allowed = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(raw) - top_allowed
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")

    kwargs = {}
    for key, val in raw.items():
        if key in _SECTIONS:
            kwargs[key] = _build_section(_SECTIONS[key], val, key)
        elif key == "size" and val is not None:
            if not (isinstance(val, list) and len(val) == 2):
                raise ConfigError("'size' must be [width, height]")
            kwargs[key] = (int(val[0]), int(val[1]))
        else:
            kwargs[key] = val
    try:
        return RunConfig(**kwargs), digest
    except TypeError as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
