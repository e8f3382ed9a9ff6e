# src/utils/cleanup.py - Removal of generated outputs before they are rewritten

import logging
import shutil
from pathlib import Path

logger = logging.getLogger(__name__)


def clear_path(path: Path) -> bool:
    """Removes a file or a directory tree if present. Returns whether anything was removed."""
    path = Path(path)
    try:
        if path.is_dir():
            shutil.rmtree(path)
        elif path.exists():
            path.unlink()
        else:
            return False
    except OSError as e:
        logger.error(f"Cleanup: cannot remove {path}: {e}", exc_info=True)
        raise
    logger.debug(f"Cleanup: removed {path}")
    return True
