# src/core/documents.py - YAML document codec shared by ontology, reviews and scenarios

import logging
import re
from pathlib import Path
from typing import Any

import yaml

from .errors import OntologyParseError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
DOCUMENT_SUFFIX = ".yaml"


def safe_filename(entity_id: str) -> str:
    """Maps an entity id such as 'table:erp_sales_order' to a portable file stem."""
    return re.sub(r"[^A-Za-z0-9_.\-]", "_", entity_id)


def read_document(path: Path) -> dict[str, Any]:
    """Reads one structured-text document and checks its format version."""
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise OntologyParseError(str(path), None, f"unreadable: {e}")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise OntologyParseError(str(path), line, getattr(e, "problem", None) or str(e))
    if not isinstance(data, dict):
        raise OntologyParseError(str(path), 1, "top level must be a mapping")
    version = data.pop("format_version", None)
    if version != FORMAT_VERSION:
        raise OntologyParseError(str(path), 1, f"expected format_version: {FORMAT_VERSION}, got {version!r}")
    return data


def write_document(path: Path, payload: dict[str, Any]) -> None:
    """Writes a document with the format version as its first key."""
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {"format_version": FORMAT_VERSION, **payload}
    text = yaml.safe_dump(document, sort_keys=False, allow_unicode=True, default_flow_style=False)
    path.write_text(text, encoding="utf-8")
    logger.debug(f"Wrote document {path}")


def list_documents(directory: Path) -> list[Path]:
    if not directory.is_dir():
        return []
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix == DOCUMENT_SUFFIX)
