"""
Shared utility functions for OccurRank

Small helpers used across the library and the command modules.
"""

import logging
import re
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import List, Sequence, Union

from core.errors import ValidationError

logger = logging.getLogger(__name__)

FRAME_EXTENSIONS = ('.png', '.jpg', '.jpeg', '.bmp', '.tif', '.tiff')

_RANGE_RE = re.compile(r'^\s*([^.:]+(?:\.\d+)?)\s*\.\.\s*([^:]+?)\s*(?::\s*(.+?))?\s*$')


def is_frame_file(filename: str, extensions: Sequence[str] = FRAME_EXTENSIONS) -> bool:
    """
    Check if a file is a frame image based on its extension.

    Args:
        filename: The filename to check
        extensions: Accepted extensions (e.g., ['.png', '.jpg'])

    Returns:
        True if the file is a frame image, False otherwise
    """
    ext = Path(filename).suffix.lower()
    return ext in [e.lower() for e in extensions]


def list_frame_files(frames_dir: Union[str, Path]) -> List[Path]:
    """Frame images in ``frames_dir`` sorted by filename."""
    frames_dir = Path(frames_dir)
    if not frames_dir.is_dir():
        raise ValidationError(f"frames directory not found: {frames_dir}")
    return sorted((p for p in frames_dir.iterdir() if p.is_file() and is_frame_file(p.name)),
                  key=lambda p: p.name)


def _to_decimal(text: str) -> Decimal:
    try:
        return Decimal(text.strip())
    except InvalidOperation:
        raise ValidationError(f"not a number: '{text.strip()}'")


def parse_value_list(values: str) -> List[Union[int, float]]:
    """
    Parse sweep values from a string, supporting ranges and comma-separated values.

    Ranges are inclusive ``start..stop:step`` (step defaults to 1). Decimal
    arithmetic keeps float ranges exact, so 0.4..0.9:0.1 yields six values.

    Examples:
        "4,8,16" -> [4, 8, 16]
        "4..16:2" -> [4, 6, 8, 10, 12, 14, 16]
        "0.4..0.9:0.1" -> [0.4, 0.5, 0.6, 0.7, 0.8, 0.9]

    Args:
        values: Input string

    Returns:
        List of ints when every value is integral, floats otherwise
    """
    parsed: List[Decimal] = []
    for part in values.split(','):
        part = part.strip()
        if not part:
            continue
        m = _RANGE_RE.match(part)
        if m:
            start = _to_decimal(m.group(1))
            stop = _to_decimal(m.group(2))
            step = _to_decimal(m.group(3)) if m.group(3) else Decimal(1)
            if step <= 0:
                raise ValidationError(f"range step must be positive in '{part}'")
            if start > stop:
                raise ValidationError(f"range start exceeds stop in '{part}'")
            value = start
            while value <= stop:
                parsed.append(value)
                value += step
            continue
        parsed.append(_to_decimal(part))

    if not parsed:
        raise ValidationError(f"no values in '{values}'")
    if all(v == v.to_integral_value() and '.' not in str(v) for v in parsed):
        return [int(v) for v in parsed]
    return [float(v) for v in parsed]


def sanitize_filename(filename: str) -> str:
    """
    Remove invalid characters from a filename.

    Args:
        filename: The filename to sanitize

    Returns:
        Sanitized filename
    """
    return re.sub(r'[<>:"/\\|?*]', '_', filename)


def read_id_list(path: Union[str, Path]) -> List[str]:
    """Read one id per line; blank lines and ``#`` comments are skipped."""
    try:
        lines = Path(path).read_text(encoding='utf-8').splitlines()
    except OSError as e:
        raise ValidationError(f"cannot read id list {path}: {e}")
    ids = [line.split('#', 1)[0].strip() for line in lines]
    return [i for i in ids if i]
