"""
Run records and JSON documents

Run outputs are plain JSON (indent 2) and JSON-lines logs, written
atomically so an interrupted run never leaves a half-written document.
"""

import json
import logging
import os
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from core._version import __version__
from core.errors import PipelineError

logger = logging.getLogger(__name__)

RUN_RECORD_FILENAME = 'run_record.json'
METRICS_FILENAME = 'metrics.json'
REPORT_FILENAME = 'report.txt'
TRAIN_LOG_FILENAME = 'train_log.jsonl'


def save_json(path: Union[str, Path], data: Any) -> Path:
    """Write ``data`` as indented JSON, replacing the file atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    try:
        with open(tmp, 'w', encoding='utf-8') as f:
            json.dump(data, f, indent=2, sort_keys=False)
            f.write('\n')
        os.replace(tmp, path)
    except (IOError, PermissionError) as e:
        raise PipelineError(f"could not save {path}: {e}")
    finally:
        if tmp.exists():
            tmp.unlink()
    return path


def load_json(path: Union[str, Path]) -> Any:
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except FileNotFoundError:
        raise PipelineError(f"{path} not found")
    except json.JSONDecodeError as e:
        raise PipelineError(f"could not parse {path}: {e}")


def append_jsonl(path: Union[str, Path], obj: Dict[str, Any]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'a', encoding='utf-8') as f:
        f.write(json.dumps(obj, sort_keys=False) + '\n')


def read_jsonl(path: Union[str, Path]) -> List[Dict[str, Any]]:
    path = Path(path)
    with open(path, 'r', encoding='utf-8') as f:
        return [json.loads(line) for line in f if line.strip()]


@dataclass
class EpochStats:
    epoch: int
    lr: float
    loss: float
    ce: float
    ro: float
    gap: float
    gap_ge_delta: float


@dataclass
class RunRecord:
    """What a run did and where its artifacts are; the config snapshot replays it."""

    command: str
    config: Dict[str, Any]
    epochs: List[Dict[str, Any]] = field(default_factory=list)
    checkpoint: Optional[str] = None
    metrics_path: Optional[str] = None
    wall_clock: float = 0.0
    extra: Dict[str, Any] = field(default_factory=dict)
    version: str = __version__
    platform: str = field(default_factory=platform.platform)

    def save(self, path: Union[str, Path]) -> Path:
        return save_json(path, asdict(self))

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'RunRecord':
        data = load_json(path)
        try:
            return cls(**data)
        except TypeError as e:
            raise PipelineError(f"{path}: not a run record ({e})")
