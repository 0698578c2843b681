"""Layered run configuration: flags > environment > file > defaults.

The file is JSON with exactly the field names below; unknown keys are
rejected so typos fail loudly. Environment overrides use the prefix
``EMSPIPE_`` plus the upper-cased field name (EMSPIPE_GATE_THRESHOLD=0.7).
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Mapping, Optional

from .errors import ConfigError

ENV_PREFIX = "EMSPIPE_"

ASR_KINDS = ("replay", "null", "adapter")
PROTOCOL_KINDS = ("builtin", "adapter")
VISION_KINDS = ("oracle", "adapter", "none")


@dataclass(frozen=True)
class RunConfig:
    host: str = "127.0.0.1"
    audio_port: int = 5801
    video_port: int = 5802
    feedback_port: int = 5803
    window_samples: int = 64_000
    sample_rate: int = 16_000
    gate_threshold: float = 0.5
    slo_target_us: int = 4_000_000
    asr: str = "replay"
    protocol: str = "builtin"
    vision: str = "oracle"
    epsilon: float = 0.0
    classifier_seed: int = 0
    impairment_seed: int = 0
    adapter_timeout_s: float = 3.5
    asr_adapter: str = ""
    protocol_adapter: str = ""
    vision_adapter: str = ""
    kb_path: str = ""  # empty selects the shipped reference knowledge base
    run_dir: str = "run_artifacts"
    scenario_dir: str = ""
    sigmoid_a: float = 4.0
    sigmoid_b: float = 0.5
    frame_timeout_ms: float = 500.0
    asr_delay_s: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, value, target_type: str):
    try:
        if target_type == "int":
            if isinstance(value, bool):
                raise ValueError("boolean is not an int")
            return int(value)
        if target_type == "float":
            return float(value)
        if target_type == "str":
            return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(name, f"cannot interpret {value!r}: {exc}") from exc
    raise ConfigError(name, f"unsupported field type {target_type}")


def _validate(config: RunConfig) -> RunConfig:
    def require(condition: bool, field: str, detail: str) -> None:
        if not condition:
            raise ConfigError(field, detail)

    require(config.window_samples > 0, "window_samples", "must be positive")
    require(config.sample_rate > 0, "sample_rate", "must be positive")
    require(0.0 <= config.gate_threshold <= 1.0, "gate_threshold", "must be in [0, 1]")
    require(0.0 <= config.epsilon <= 1.0, "epsilon", "must be in [0, 1]")
    require(config.slo_target_us > 0, "slo_target_us", "must be positive")
    require(config.adapter_timeout_s > 0, "adapter_timeout_s", "must be positive")
    require(config.frame_timeout_ms > 0, "frame_timeout_ms", "must be positive")
    require(config.asr_delay_s >= 0, "asr_delay_s", "must be nonnegative")
    for name in ("audio_port", "video_port", "feedback_port"):
        port = getattr(config, name)
        require(0 <= port <= 65535, name, "must be a valid port")
    require(config.asr in ASR_KINDS, "asr", f"must be one of {ASR_KINDS}")
    require(config.protocol in PROTOCOL_KINDS, "protocol", f"must be one of {PROTOCOL_KINDS}")
    require(config.vision in VISION_KINDS, "vision", f"must be one of {VISION_KINDS}")
    return config


def _layer(base: dict, overrides: Mapping, source: str) -> None:
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(key, f"unknown key (from {source})")
        base[key] = _coerce(key, value, _FIELD_TYPES[key])


def _env_overrides(environ: Mapping[str, str]) -> dict:
    out = {}
    for name in _FIELD_TYPES:
        value = environ.get(ENV_PREFIX + name.upper())
        if value is not None:
            out[name] = value
    return out


def parse_config(
    flags: Optional[Mapping] = None,
    file: Optional[os.PathLike] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """Merge configuration layers into a validated RunConfig."""
    merged = {f.name: getattr(RunConfig(), f.name) for f in fields(RunConfig)}
    if file is not None:
        try:
            raw = json.loads(Path(file).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError("config", f"cannot read {file}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid json in {file}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config", "config file must hold a JSON object")
        _layer(merged, raw, str(file))
    _layer(merged, _env_overrides(environ if environ is not None else os.environ), "environment")
    if flags:
        _layer(merged, flags, "flags")
    return _validate(RunConfig(**merged))
