"""Pipeline configuration: one YAML file, environment overrides on top.

Precedence, lowest to highest: built-in defaults, the config file,
COOKGEN_* environment variables, CLI flags.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .backends.base import BackendDescriptor, BackendKind
from .errors import ConfigInvalid

BACKEND_ROLES = ("vlm", "detector", "inpainter", "embedder")


@dataclass
class Flags:
    auto_append_hands: bool = True
    mclip_crop: bool = True
    full_frame_fallback: bool = True


@dataclass
class PipelineConfig:
    detection_threshold: float = 0.3
    similarity_threshold: float = 80.0
    selection_strategy: str | None = None  # None = per-dataset default
    seed: int = 0
    workers: int = 1
    method_tag: str = "cookgen"
    prompts_dir: str | None = None
    flags: Flags = field(default_factory=Flags)
    backends: dict[str, BackendDescriptor] = field(default_factory=dict)

    def __post_init__(self):
        for role in BACKEND_ROLES:
            self.backends.setdefault(
                role, BackendDescriptor(kind=BackendKind(role))
            )

    def validate(self) -> None:
        if not (0.0 <= self.detection_threshold <= 1.0):
            raise ConfigInvalid(
                f"detection_threshold must be in [0, 1], got {self.detection_threshold}"
            )
        if not (0.0 <= self.similarity_threshold <= 100.0):
            raise ConfigInvalid(
                f"similarity_threshold must be in [0, 100], got {self.similarity_threshold}"
            )
        if self.workers < 1:
            raise ConfigInvalid(f"workers must be >= 1, got {self.workers}")
        if self.selection_strategy not in (None, "paper", "lego", "keyframes"):
            raise ConfigInvalid(f"unknown selection_strategy {self.selection_strategy!r}")

    def force_backend_mode(self, mode: str) -> None:
        """Apply the --backend mock|remote switch."""
        if mode == "mock":
            for desc in self.backends.values():
                desc.endpoint = "mock"
        elif mode == "remote":
            for role, desc in self.backends.items():
                if desc.is_mock:
                    raise ConfigInvalid(
                        f"--backend remote requires an endpoint for {role} "
                        f"(config or COOKGEN_{role.upper()}_ENDPOINT)"
                    )
        else:
            raise ConfigInvalid(f"unknown backend mode {mode!r}")


def _descriptor_from_mapping(role: str, mapping: dict, base_dir: Path) -> BackendDescriptor:
    known = {
        "endpoint", "model_tag", "timeout", "max_concurrency",
        "native_resolution", "embed_dim", "seed", "fixtures",
    }
    unknown = set(mapping) - known
    if unknown:
        raise ConfigInvalid(f"backend {role}: unknown keys {sorted(unknown)}")
    fixtures = mapping.get("fixtures")
    if fixtures is not None and not Path(fixtures).is_absolute():
        fixtures = str((base_dir / fixtures).resolve())
    try:
        return BackendDescriptor(
            kind=BackendKind(role),
            endpoint=str(mapping.get("endpoint", "mock")),
            model_tag=str(mapping.get("model_tag", "mock")),
            timeout=float(mapping.get("timeout", 30.0)),
            max_concurrency=int(mapping.get("max_concurrency", 1)),
            native_resolution=mapping.get("native_resolution"),
            embed_dim=int(mapping.get("embed_dim", 64)),
            seed=int(mapping.get("seed", 0)),
            fixtures=fixtures,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"backend {role}: {exc}") from exc


def load_config(path: str | Path | None = None) -> PipelineConfig:
    """Load configuration from a YAML file and apply environment overrides."""
    config = PipelineConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigInvalid(f"config file not found: {path}")
        with path.open("r", encoding="utf-8") as f:
            try:
                data = yaml.safe_load(f) or {}
            except yaml.YAMLError as exc:
                raise ConfigInvalid(f"config file {path} is not valid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigInvalid(f"config file {path} must hold a mapping")
        base_dir = path.parent
        simple = {
            "detection_threshold": float,
            "similarity_threshold": float,
            "seed": int,
            "workers": int,
            "method_tag": str,
        }
        for key, cast in simple.items():
            if key in data:
                try:
                    setattr(config, key, cast(data[key]))
                except (TypeError, ValueError) as exc:
                    raise ConfigInvalid(f"config key {key}: {exc}") from exc
        if "selection_strategy" in data:
            config.selection_strategy = data["selection_strategy"]
        if "prompts_dir" in data and data["prompts_dir"]:
            p = Path(data["prompts_dir"])
            config.prompts_dir = str(p if p.is_absolute() else (base_dir / p).resolve())
        for key, value in (data.get("flags") or {}).items():
            if not hasattr(config.flags, key):
                raise ConfigInvalid(f"unknown flag {key!r}")
            setattr(config.flags, key, bool(value))
        for role, mapping in (data.get("backends") or {}).items():
            if role == "mode":
                continue  # handled below, after descriptors exist
            if role not in BACKEND_ROLES:
                raise ConfigInvalid(f"unknown backend role {role!r}")
            config.backends[role] = _descriptor_from_mapping(role, mapping or {}, base_dir)
        mode = (data.get("backends") or {}).get("mode")
        if mode:
            config.force_backend_mode(str(mode))
    _apply_env(config)
    config.validate()
    return config


def _apply_env(config: PipelineConfig) -> None:
    env = os.environ
    mapping = {
        "COOKGEN_DETECTION_THRESHOLD": ("detection_threshold", float),
        "COOKGEN_SIMILARITY_THRESHOLD": ("similarity_threshold", float),
        "COOKGEN_SEED": ("seed", int),
        "COOKGEN_WORKERS": ("workers", int),
        "COOKGEN_METHOD_TAG": ("method_tag", str),
    }
    for var, (attr, cast) in mapping.items():
        if var in env:
            try:
                setattr(config, attr, cast(env[var]))
            except ValueError as exc:
                raise ConfigInvalid(f"{var}: {exc}") from exc
    for role in BACKEND_ROLES:
        desc = config.backends[role]
        prefix = f"COOKGEN_{role.upper()}"
        if f"{prefix}_ENDPOINT" in env:
            desc.endpoint = env[f"{prefix}_ENDPOINT"]
        if f"{prefix}_MODEL" in env:
            desc.model_tag = env[f"{prefix}_MODEL"]
        if f"{prefix}_TIMEOUT" in env:
            try:
                desc.timeout = float(env[f"{prefix}_TIMEOUT"])
            except ValueError as exc:
                raise ConfigInvalid(f"{prefix}_TIMEOUT: {exc}") from exc
    if "COOKGEN_BACKEND_MODE" in env:
        config.force_backend_mode(env["COOKGEN_BACKEND_MODE"])
