"""
Flow cache container

Each record is ``LTR3O\\0``, u16 version, u32 H, u32 W, u32 C,
u32 occurring_idx, then H*W*C little-endian float32 values, row-major.
The cache stores one file per (sample, candidate) with a single C=3 record;
flow imports use the same container with two C=2 records per file.
"""

import json
import logging
import os
import struct
from pathlib import Path
from typing import BinaryIO, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.errors import CacheFormatError, PipelineError
from shared.utils import sanitize_filename

logger = logging.getLogger(__name__)

MAGIC = b'LTR3O\0'
VERSION = 1
RECORD_SUFFIX = '.l3o'
META_FILENAME = 'cache_meta.json'
CANDIDATES_FILENAME = 'candidates.csv'

_HEADER = struct.Struct('<6sHIIII')
_DTYPE = np.dtype('<f4')


def entry_path(root: Union[str, Path], sample_id: str, j: int) -> Path:
    return Path(root) / sanitize_filename(sample_id) / f"{j:02d}{RECORD_SUFFIX}"


def write_record(fh: BinaryIO, array: np.ndarray, occurring_idx: int) -> None:
    array = np.ascontiguousarray(array, dtype=_DTYPE)
    if array.ndim != 3:
        raise CacheFormatError(f"records hold H x W x C arrays, got shape {array.shape}")
    h, w, c = array.shape
    fh.write(_HEADER.pack(MAGIC, VERSION, h, w, c, occurring_idx))
    fh.write(array.tobytes(order='C'))


def read_record(fh: BinaryIO, source: str = '<stream>',
                expected_channels: Optional[int] = None) -> Tuple[np.ndarray, int]:
    """
    Read one record.

    Returns:
        (H x W x C float32 array, occurring_idx)

    Raises:
        CacheFormatError: bad magic, version mismatch, channel mismatch, truncation
    """
    header = fh.read(_HEADER.size)
    if len(header) < len(MAGIC) or header[:len(MAGIC)] != MAGIC:
        raise CacheFormatError(f"{source}: not an LTR3O flow cache")
    if len(header) < _HEADER.size:
        raise CacheFormatError(f"{source}: truncated header")
    _, version, h, w, c, occurring_idx = _HEADER.unpack(header)
    if version != VERSION:
        raise CacheFormatError(f"{source}: unsupported cache version {version} (expected {VERSION})")
    if expected_channels is not None and c != expected_channels:
        raise CacheFormatError(f"{source}: record has {c} channels, expected {expected_channels}")
    n_bytes = h * w * c * _DTYPE.itemsize
    payload = fh.read(n_bytes)
    if len(payload) < n_bytes:
        raise CacheFormatError(f"{source}: truncated payload ({len(payload)} of {n_bytes} bytes)")
    array = np.frombuffer(payload, dtype=_DTYPE).reshape(h, w, c).astype(np.float32)
    return array, occurring_idx


def _atomic_write(path: Path, records: Sequence[Tuple[np.ndarray, int]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    try:
        with open(tmp, 'wb') as fh:
            for array, occurring_idx in records:
                write_record(fh, array, occurring_idx)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def flow_cache_write(root: Union[str, Path], sample_id: str, j: int,
                     image: np.ndarray, occurring_idx: int) -> Path:
    """Write one fused flow image; replaces any existing entry atomically."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise CacheFormatError(f"flow images are H x W x 3, got shape {image.shape}")
    path = entry_path(root, sample_id, j)
    _atomic_write(path, [(image, occurring_idx)])
    return path


def flow_cache_read(root: Union[str, Path], sample_id: str, j: int,
                    expected_shape: Optional[Tuple[int, int]] = None) -> Tuple[np.ndarray, int]:
    """
    Read one fused flow image.

    Raises:
        PipelineError: entry missing
        CacheFormatError: malformed entry or (H, W) differing from expected_shape
    """
    path = entry_path(root, sample_id, j)
    try:
        with open(path, 'rb') as fh:
            image, occurring_idx = read_record(fh, str(path), expected_channels=3)
    except FileNotFoundError:
        raise PipelineError(f"flow cache miss: ({sample_id}, {j}) not in {root}")
    if expected_shape is not None and image.shape[:2] != tuple(expected_shape):
        raise CacheFormatError(f"{path}: shape {image.shape[:2]}, expected {tuple(expected_shape)}")
    return image, occurring_idx


def write_import(path: Union[str, Path], flow_oo: np.ndarray, flow_of: np.ndarray, occurring_idx: int) -> None:
    """Write an import file: onset->occurring and occurring->offset fields."""
    for name, field in (('flow_oo', flow_oo), ('flow_of', flow_of)):
        if np.ndim(field) != 3 or np.shape(field)[2] != 2:
            raise CacheFormatError(f"{name} must be H x W x 2, got shape {np.shape(field)}")
    _atomic_write(Path(path), [(flow_oo, occurring_idx), (flow_of, occurring_idx)])


def read_import(path: Union[str, Path]) -> Tuple[np.ndarray, np.ndarray, int]:
    path = Path(path)
    with open(path, 'rb') as fh:
        flow_oo, occ_a = read_record(fh, str(path), expected_channels=2)
        flow_of, occ_b = read_record(fh, str(path), expected_channels=2)
    if flow_oo.shape != flow_of.shape:
        raise CacheFormatError(f"{path}: field shapes differ ({flow_oo.shape} vs {flow_of.shape})")
    if occ_a != occ_b:
        raise CacheFormatError(f"{path}: records disagree on occurring index ({occ_a} vs {occ_b})")
    return flow_oo, flow_of, occ_a


class FlowCache:
    """
    Directory of fused flow images plus the metadata that produced them.

    ``cache_meta.json`` records K, seed, flow scale, fuse mode, estimator
    and image size so consumers can refuse a cache built differently.
    """

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)

    @property
    def meta_path(self) -> Path:
        return self.root / META_FILENAME

    def write_meta(self, meta: Dict) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        with open(self.meta_path, 'w', encoding='utf-8') as f:
            json.dump(meta, f, indent=2, sort_keys=True)

    def read_meta(self) -> Dict:
        try:
            with open(self.meta_path, 'r', encoding='utf-8') as f:
                return json.load(f)
        except FileNotFoundError:
            raise PipelineError(f"{self.root} is not a flow cache (no {META_FILENAME})")
        except json.JSONDecodeError as e:
            raise CacheFormatError(f"{self.meta_path}: {e}")

    def write(self, sample_id: str, j: int, image: np.ndarray, occurring_idx: int) -> Path:
        return flow_cache_write(self.root, sample_id, j, image, occurring_idx)

    def read(self, sample_id: str, j: int, expected_shape: Optional[Tuple[int, int]] = None) -> Tuple[np.ndarray, int]:
        return flow_cache_read(self.root, sample_id, j, expected_shape)

    def has(self, sample_id: str, j: int) -> bool:
        return entry_path(self.root, sample_id, j).is_file()

    def missing(self, sample_ids: Iterable[str], k: int) -> List[Tuple[str, int]]:
        return [(s, j) for s in sample_ids for j in range(1, k + 1) if not self.has(s, j)]

    def count(self) -> int:
        return sum(1 for _ in self.root.glob(f"*/*{RECORD_SUFFIX}"))

    def load_sample(self, sample_id: str, k: int,
                    expected_shape: Optional[Tuple[int, int]] = None) -> Tuple[np.ndarray, List[int]]:
        """K x H x W x 3 stack of a sample's candidates and their occurring indices."""
        images, indices = [], []
        for j in range(1, k + 1):
            image, occurring_idx = self.read(sample_id, j, expected_shape)
            images.append(image)
            indices.append(occurring_idx)
        return np.stack(images), indices
