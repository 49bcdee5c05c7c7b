"""Run configuration: defaults, JSON config file, flag overrides."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    kb_path: str | None = None
    gateway: str = "mock"
    base_url: str | None = None
    model: str | None = None
    mock_script: str | None = None
    mock_salt: str = "newscap-mock-v1"
    gazetteer: str | None = None
    delta: float = 0.95
    tau_face: float = 0.4
    tau_clip: float = 0.25
    face_conf: float = 0.8
    k_clip: int = 1
    n_ctx: int = 1024
    n_out: int = 50
    max_triples: int = 64
    retry_limit: int = 3
    retry_base_delay: float = 0.25
    max_in_flight: int = 8
    workers: int = 1
    seed: int = 0
    drain_timeout: float = 10.0

    def __post_init__(self) -> None:
        if self.gateway not in ("mock", "http"):
            raise ConfigError(f"gateway must be 'mock' or 'http', got {self.gateway!r}")
        if not 0.0 < self.delta <= 1.0:
            raise ConfigError("delta must be in (0, 1]")
        for name in ("tau_face", "tau_clip"):
            if not -1.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be in [-1, 1]")
        if not 0.0 <= self.face_conf <= 1.0:
            raise ConfigError("face_conf must be in [0, 1]")
        if self.n_ctx < 64:
            raise ConfigError("n_ctx must be >= 64")
        if self.n_out < 1:
            raise ConfigError("n_out must be >= 1")
        for name in ("k_clip", "max_triples", "workers", "max_in_flight"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.retry_limit < 0:
            raise ConfigError("retry_limit must be >= 0")

    def with_overrides(self, **overrides: Any) -> RunConfig:
        known = {f.name for f in fields(self)}
        unknown = set(overrides) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def to_dict(self) -> dict[str, Any]:
        return {"version": CONFIG_VERSION, **asdict(self)}


def load_config(path: str | Path | None, **overrides: Any) -> RunConfig:
    """Defaults, then the config file, then non-None overrides (flags win)."""
    cfg = RunConfig()
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        version = data.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {version}")
        cfg = cfg.with_overrides(**data)
    return cfg.with_overrides(**overrides)
