# src/core/config.py - Loads the versioned engine configuration file and the backend credential

import logging
import os
from pathlib import Path
from typing import Any, Optional

import yaml
from dotenv import load_dotenv
from pydantic import ValidationError

from ..models.config import CONFIG_VERSION, EngineConfig
from ..models.execution import ExecPolicy, sanitize_session_id
from ..utils.digests import digest_value
from .errors import ConfigError

logger = logging.getLogger(__name__)

API_KEY_VARIABLE = "HYPEREDGE_BACKEND_API_KEY"
LOG_LEVEL_VARIABLE = "HYPEREDGE_LOG_LEVEL"

_PATH_FIELDS = ("ontology_root", "artifact_dir", "trace_dir", "scenario_dir", "report_dir")


def _apply_override(data: dict[str, Any], dotted: str, value: Any) -> None:
    target = data
    *parents, leaf = dotted.split(".")
    for key in parents:
        target = target.setdefault(key, {})
    target[leaf] = value


def resolve_paths(config: EngineConfig, base: Path) -> EngineConfig:
    """Relative paths in the file are relative to the file's own directory."""
    def anchored(p: Optional[Path]) -> Optional[Path]:
        return p if p is None or p.is_absolute() else (base / p).resolve()

    updates: dict[str, Any] = {name: anchored(getattr(config, name)) for name in _PATH_FIELDS}
    updates["sources"] = {tag: anchored(path) for tag, path in config.sources.items()}
    updates["sandbox"] = config.sandbox.model_copy(update={"jail_root": anchored(config.sandbox.jail_root)})
    updates["backend"] = config.backend.model_copy(update={"fixtures": anchored(config.backend.fixtures)})
    return config.model_copy(update=updates)


def load_config(path: Optional[Path] = None, overrides: Optional[dict[str, Any]] = None) -> EngineConfig:
    """Reads the file (if any), applies dotted flag overrides, then resolves paths."""
    data: dict[str, Any] = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            loaded = yaml.safe_load(path.read_text(encoding="utf-8"))
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"Cannot read config file {path}: {e}", {"path": str(path)})
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError(f"Config file {path} must contain a mapping", {"path": str(path)})
        data = loaded or {}
        version = data.get("config_version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"Unsupported config_version {version!r}; expected {CONFIG_VERSION}",
                              {"path": str(path)})
        base = path.resolve().parent
    for dotted, value in (overrides or {}).items():
        if value is not None:
            _apply_override(data, dotted, value)
    try:
        config = EngineConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first.get("loc", ()))
        raise ConfigError(f"Invalid configuration at '{where}': {first.get('msg')}", {"field": where})
    config = resolve_paths(config, base)
    logger.info(f"Configuration loaded from {path or '<defaults>'}")
    return config


def config_digest(config: EngineConfig) -> str:
    return digest_value(config.model_dump(mode="json"))


def backend_api_key() -> Optional[str]:
    load_dotenv()
    return os.getenv(API_KEY_VARIABLE)


def session_policy(config: EngineConfig, session_id: str) -> ExecPolicy:
    """Each session gets its own jail directory under the configured jail root."""
    jail = Path(config.sandbox.jail_root) / sanitize_session_id(session_id)
    jail.mkdir(parents=True, exist_ok=True)
    return ExecPolicy(
        allowed_programs=list(config.sandbox.allowed_programs),
        working_root=jail,
        wall_timeout=config.sandbox.wall_timeout,
        max_output_bytes=config.sandbox.max_output_bytes,
        env_passthrough=list(config.sandbox.env_passthrough),
        allow_inline_code=config.sandbox.allow_inline_code,
        backend=config.sandbox.backend,
    )
