# src/models/config.py - Pydantic models for the engine configuration file

from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

from .access import Principal
from .engine import EngineMode
from .execution import DEFAULT_ALLOWED_PROGRAMS, DEFAULT_MAX_OUTPUT_BYTES, DEFAULT_WALL_TIMEOUT
from .retrieval import EmbeddingConfig, RetrievalConfig

CONFIG_VERSION = 1
DEFAULT_BUDGET = 50
DEFAULT_COMPACTION_THRESHOLD = 24_000


class BackendConfig(BaseModel):
    provider: Literal["scripted", "http"] = "scripted"
    endpoint: Optional[str] = None
    model: str = "gpt-4o-mini"
    timeout: float = Field(60.0, gt=0)
    retries: int = Field(2, ge=0, le=10)
    fixtures: Optional[Path] = Field(None, description="Scripted fixture directory; defaults to the mode's bundled set.")


class SandboxConfig(BaseModel):
    allowed_programs: list[str] = Field(default_factory=lambda: list(DEFAULT_ALLOWED_PROGRAMS))
    jail_root: Path = Path("sandbox")
    wall_timeout: float = Field(DEFAULT_WALL_TIMEOUT, gt=0)
    max_output_bytes: int = Field(DEFAULT_MAX_OUTPUT_BYTES, ge=0)
    env_passthrough: list[str] = Field(default_factory=list)
    allow_inline_code: bool = False
    backend: Literal["process", "container"] = "process"


class SubstrateConfig(BaseModel):
    persist_row_threshold: int = Field(200, ge=0)
    persist_byte_threshold: int = Field(16 * 1024, ge=0)
    key_batch_size: int = Field(500, ge=1)
    key_propagation_cap: int = Field(50_000, ge=1)


class PrincipalConfig(BaseModel):
    principal_id: str = "analyst"
    roles: list[str] = Field(default_factory=lambda: ["analyst"])
    tenant: Optional[str] = None
    max_visibility_tier: int = Field(0, ge=0)

    def to_principal(self) -> Principal:
        return Principal(principal_id=self.principal_id, roles=frozenset(self.roles), tenant=self.tenant,
                         max_visibility_tier=self.max_visibility_tier)


class EngineConfig(BaseModel):
    """Everything a session needs. Every field has a default, so an empty file is a valid config."""
    model_config = ConfigDict(extra="forbid")

    config_version: Literal[1] = CONFIG_VERSION
    ontology_root: Path = Path("ontology")
    sources: dict[str, Path] = Field(default_factory=dict, description="Source tag -> snapshot store path.")
    backend: BackendConfig = Field(default_factory=BackendConfig)
    embedding: EmbeddingConfig = Field(default_factory=EmbeddingConfig)
    retrieval: RetrievalConfig = Field(default_factory=RetrievalConfig)
    sandbox: SandboxConfig = Field(default_factory=SandboxConfig)
    substrate: SubstrateConfig = Field(default_factory=SubstrateConfig)
    principal: PrincipalConfig = Field(default_factory=PrincipalConfig)
    mode: EngineMode = "complete"
    budget: int = Field(DEFAULT_BUDGET, ge=0)
    compaction_threshold: int = Field(DEFAULT_COMPACTION_THRESHOLD, ge=1)
    artifact_dir: Path = Path("artifacts")
    trace_dir: Path = Path("traces")
    scenario_dir: Path = Path("scenario")
    report_dir: Path = Path("reports")
