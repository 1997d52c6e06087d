"""
Filesystem utilities (Windows-friendly).

Purpose:
- Verified atomic replacement of the branch-store file after compaction.
- Handles read-only targets and transient locks with retries.
"""

from __future__ import annotations

import os
import stat
import time
from pathlib import Path
from typing import Optional, Tuple

from src.utils.log_utils import get_logger

logger = get_logger(__name__)


def make_writable(path: str | Path) -> None:
    """Clear the read-only bit if the file exists."""
    try:
        os.chmod(path, stat.S_IWRITE | stat.S_IREAD)
    except OSError:
        # the replace below reports the real failure
        pass


def remove_file_quietly(path: str | Path) -> bool:
    try:
        make_writable(path)
        os.remove(path)
        return True
    except FileNotFoundError:
        return True
    except OSError as e:
        logger.warning(f"Could not remove {path}: {e}")
        return False


def replace_file_verified(
    tmp_path: str | Path,
    target_path: str | Path,
    *,
    retries: int = 3,
    sleep_s: float = 0.25,
) -> Tuple[bool, Optional[str]]:
    """
    Atomically move tmp_path over target_path and verify the result.
    Retries when the target is locked or read-only.

    Returns (replaced_ok, error_message).
    """
    tmp_abs = os.path.abspath(tmp_path)
    target_abs = os.path.abspath(target_path)
    expected_size = os.path.getsize(tmp_abs)
    last_err: Optional[str] = None

    for attempt in range(1, retries + 1):
        try:
            if os.path.exists(target_abs):
                make_writable(target_abs)
            os.replace(tmp_abs, target_abs)

            if os.path.exists(target_abs) and os.path.getsize(target_abs) == expected_size:
                logger.debug(f"Replaced {target_abs} on attempt {attempt}")
                return True, None
            last_err = "target size mismatch after replace"
        except OSError as e:
            last_err = str(e)
            logger.debug(f"Replace attempt {attempt} failed: {e}")
        time.sleep(sleep_s)

    remove_file_quietly(tmp_abs)
    return False, last_err or "Unknown replace failure"
