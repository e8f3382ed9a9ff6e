# src/utils/paths.py - Path confinement helpers shared by the ontology and the sandbox

import logging
from pathlib import Path
from typing import Optional

logger = logging.getLogger(__name__)


def resolve_inside_root(root: Path, user_path: str) -> Optional[Path]:
    """Resolves a user path relative to root. Returns None when it escapes root (symlinks included)."""
    if not user_path:
        user_path = "."
    base = root.resolve(strict=False)
    candidate = Path(user_path)
    if not candidate.is_absolute():
        candidate = base / candidate
    try:
        resolved = candidate.resolve(strict=False)
    except (OSError, RuntimeError, ValueError) as e:
        logger.warning(f"Path resolution failed for '{user_path}' under '{base}': {e}")
        return None
    if resolved != base and base not in resolved.parents:
        logger.debug(f"Path '{user_path}' resolved outside '{base}' to '{resolved}'")
        return None
    return resolved

