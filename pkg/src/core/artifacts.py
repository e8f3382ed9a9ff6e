# src/core/artifacts.py - Session-scoped evidence artifact persistence
# Large results are written as newline-delimited JSON with a sidecar provenance document.

import json
import logging
import threading
from pathlib import Path
from typing import Any, Iterator

from ..models.access import EvidenceArtifact, Provenance
from ..utils.digests import digest_file, sha256_bytes
from .errors import ArtifactIntegrityError, UnknownEntity

logger = logging.getLogger(__name__)

ROWS_SUFFIX = ".jsonl"
PROVENANCE_SUFFIX = ".prov"


def session_of(artifact_id: str) -> str:
    session_id, sep, _ = artifact_id.rpartition("-a")
    if not sep or not session_id:
        raise UnknownEntity(f"Malformed artifact id '{artifact_id}'")
    return session_id


class ArtifactStore:
    """Owns one session's artifact directory. Ids are '<session_id>-aNNNN'."""

    def __init__(self, root: Path, session_id: str):
        self.root = Path(root)
        self.session_id = session_id
        self.directory = self.root / session_id
        self._counter = 0
        self._lock = threading.Lock()

    def _next_id(self) -> str:
        with self._lock:
            self._counter += 1
            return f"{self.session_id}-a{self._counter:04d}"

    def persist(self, records: list[Any], producer: str, provenance: list[Provenance],
                header: dict[str, Any] | None = None) -> EvidenceArtifact:
        """Writes one record per line and returns the digest-pinned artifact descriptor."""
        self.directory.mkdir(parents=True, exist_ok=True)
        artifact_id = self._next_id()
        path = self.directory / f"{artifact_id}{ROWS_SUFFIX}"
        with open(path, "w", encoding="utf-8") as f:
            for record in records:
                f.write(json.dumps(record, ensure_ascii=False, default=str, separators=(",", ":")))
                f.write("\n")
        artifact = EvidenceArtifact(
            artifact_id=artifact_id,
            path=str(path),
            digest=digest_file(path),
            producer=producer,
            row_count=len(records),
            provenance=provenance,
        )
        sidecar = {"artifact": artifact.model_dump(mode="json"), "header": header or {}}
        (self.directory / f"{artifact_id}{PROVENANCE_SUFFIX}").write_text(
            json.dumps(sidecar, ensure_ascii=False, indent=2, sort_keys=True), encoding="utf-8"
        )
        logger.info(f"Artifact Persist (Session: {self.session_id}): {artifact_id} with {len(records)} records")
        return artifact


def _locate(artifact_root: Path, artifact_id: str) -> tuple[Path, Path]:
    directory = Path(artifact_root) / session_of(artifact_id)
    rows = directory / f"{artifact_id}{ROWS_SUFFIX}"
    prov = directory / f"{artifact_id}{PROVENANCE_SUFFIX}"
    if not rows.is_file() or not prov.is_file():
        raise UnknownEntity(f"Unknown artifact '{artifact_id}'")
    return rows, prov


def read_artifact(artifact_root: Path, artifact_id: str) -> tuple[bytes, EvidenceArtifact, dict[str, Any]]:
    """Returns content, descriptor and header after re-verifying the pinned digest."""
    rows, prov = _locate(artifact_root, artifact_id)
    sidecar = json.loads(prov.read_text(encoding="utf-8"))
    artifact = EvidenceArtifact.model_validate(sidecar["artifact"])
    content = rows.read_bytes()
    # the bytes handed back are the bytes verified
    actual = sha256_bytes(content)
    if actual != artifact.digest:
        logger.error(f"Artifact Read: digest mismatch for {artifact_id} (expected {artifact.digest}, got {actual})")
        raise ArtifactIntegrityError(
            f"Artifact '{artifact_id}' digest mismatch",
            {"artifact_id": artifact_id, "expected": artifact.digest, "actual": actual},
        )
    return content, artifact, sidecar.get("header", {})


def iter_records(artifact_root: Path, artifact_id: str) -> Iterator[Any]:
    content, _, _ = read_artifact(artifact_root, artifact_id)
    for line in content.decode("utf-8").splitlines():
        if line:
            yield json.loads(line)
