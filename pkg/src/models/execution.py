# src/models/execution.py - Pydantic models for confined command and attachment execution

import re
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, Field, field_validator

# --- Defaults ---
DEFAULT_WALL_TIMEOUT = 30.0
DEFAULT_MAX_OUTPUT_BYTES = 64 * 1024
TIMEOUT_EXIT_STATUS = -9
DEFAULT_ALLOWED_PROGRAMS = ("ls", "cat", "wc", "head")


def sanitize_session_id(session_id: str) -> str:
    """Basic sanitization for session ids used in jail directory and container names."""
    sanitized = re.sub(r'[^a-zA-Z0-9_\-.]', '_', session_id)
    return sanitized[:50]


class ExecPolicy(BaseModel):
    """Confinement rules for one execution: allowlist, jail, wall clock, output cap, environment filter."""

    allowed_programs: list[str] = Field(default_factory=lambda: list(DEFAULT_ALLOWED_PROGRAMS))
    working_root: Path = Field(..., description="Directory jail; every path argument must resolve inside it.")
    wall_timeout: float = Field(DEFAULT_WALL_TIMEOUT, gt=0)
    max_output_bytes: int = Field(DEFAULT_MAX_OUTPUT_BYTES, ge=0)
    env_passthrough: list[str] = Field(default_factory=list)
    allow_inline_code: bool = Field(False, description="Permit interpreter program text such as python3 -c.")
    backend: Literal["process", "container"] = "process"
    container_image: str = "python:3.12-slim"
    container_mem_limit: str = "256m"

    @field_validator("working_root")
    @classmethod
    def _root_exists(cls, value: Path) -> Path:
        if not value.is_dir():
            raise ValueError(f"working_root '{value}' does not exist or is not a directory")
        return value.resolve()

    def is_narrower_than(self, other: "ExecPolicy") -> bool:
        """True when every permission here is also granted by `other`."""
        inside = self.working_root == other.working_root or other.working_root in self.working_root.parents
        return (
            set(self.allowed_programs) <= set(other.allowed_programs)
            and set(self.env_passthrough) <= set(other.env_passthrough)
            and self.wall_timeout <= other.wall_timeout
            and self.max_output_bytes <= other.max_output_bytes
            and (other.allow_inline_code or not self.allow_inline_code)
            and inside
        )


class PolicyViolationRecord(BaseModel):
    rule: Literal["program-not-allowed", "path-escape", "inline-code", "network-denied"]
    argument: str = ""
    message: str = ""


class ExecResult(BaseModel):
    """Outcome of one confined execution. Captures never exceed the policy's output cap."""

    exit_status: int
    stdout_capture: str = ""
    stderr_capture: str = ""
    stdout_truncated: bool = False
    stderr_truncated: bool = False
    timed_out: bool = False
    duration: float = 0.0
    policy_violations: list[PolicyViolationRecord] = Field(default_factory=list)
    attachment_digest: Optional[str] = None
