"""
Run configuration

Config files are flat UTF-8 ``key=value`` text, one key per line, ``#``
starting a comment. Only the keys in DEFAULT_SETTINGS are accepted.
"""

import logging
import math
from dataclasses import asdict, dataclass, replace as dc_replace
from pathlib import Path
from typing import Any, Callable, Dict, Union

from core.errors import ValidationError

logger = logging.getLogger(__name__)


DEFAULT_SETTINGS: Dict[str, Any] = {
    'k': 8,
    'delta': 0.7,
    'gamma': 0.1,
    'lambda': 1.0,
    'image_size': 112,
    'batch_size': 64,
    'initial_lr': 1e-4,
    'epochs': 30,
    'seed': 0,
    'backbone': 'tiny:128',
    'flow_scale': 8.0,
}

# file key -> dataclass field
_FIELD_NAMES = {key: ('lambda_' if key == 'lambda' else key) for key in DEFAULT_SETTINGS}

_BACKBONES = ('tiny', 'resnet18')


@dataclass(frozen=True)
class BackboneSpec:
    """Backbone identifier plus its feature dimension D."""

    name: str
    dim: int

    @classmethod
    def parse(cls, text: str) -> 'BackboneSpec':
        """Parse ``name:dim`` (``tiny:128``, ``resnet18:512``); dim defaults per name."""
        name, _, dim_text = text.strip().partition(':')
        name = name.strip().lower()
        if name not in _BACKBONES:
            raise ValidationError(f"unknown backbone '{name}' (expected one of {', '.join(_BACKBONES)})")
        if not dim_text:
            return cls(name, 512 if name == 'resnet18' else 128)
        try:
            dim = int(dim_text)
        except ValueError:
            raise ValidationError(f"backbone feature dim must be an integer, got '{dim_text}'")
        if dim <= 0:
            raise ValidationError(f"backbone feature dim must be positive, got {dim}")
        if name == 'resnet18' and dim != 512:
            raise ValidationError("resnet18 produces 512-dimensional features")
        return cls(name, dim)

    def __str__(self) -> str:
        return f"{self.name}:{self.dim}"


def _parse_int(text: str) -> int:
    return int(text)


def _parse_float(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"non-finite value {text}")
    return value


_PARSERS: Dict[str, Callable[[str], Any]] = {
    'k': _parse_int,
    'delta': _parse_float,
    'gamma': _parse_float,
    'lambda': _parse_float,
    'image_size': _parse_int,
    'batch_size': _parse_int,
    'initial_lr': _parse_float,
    'epochs': _parse_int,
    'seed': _parse_int,
    'backbone': BackboneSpec.parse,
    'flow_scale': _parse_float,
}


def high_group_size(k: int, gamma: float) -> int:
    """K_h = Ceil(gamma * K), guarded against float noise (0.25 * 8 must stay 2)."""
    return int(math.ceil(round(gamma * k, 9)))


@dataclass(frozen=True)
class Config:
    """Hyperparameters and run settings; validated on construction."""

    k: int = DEFAULT_SETTINGS['k']
    delta: float = DEFAULT_SETTINGS['delta']
    gamma: float = DEFAULT_SETTINGS['gamma']
    lambda_: float = DEFAULT_SETTINGS['lambda']
    image_size: int = DEFAULT_SETTINGS['image_size']
    batch_size: int = DEFAULT_SETTINGS['batch_size']
    initial_lr: float = DEFAULT_SETTINGS['initial_lr']
    epochs: int = DEFAULT_SETTINGS['epochs']
    seed: int = DEFAULT_SETTINGS['seed']
    backbone_spec: BackboneSpec = BackboneSpec.parse(DEFAULT_SETTINGS['backbone'])
    flow_scale: float = DEFAULT_SETTINGS['flow_scale']

    def __post_init__(self):
        if isinstance(self.backbone_spec, str):
            object.__setattr__(self, 'backbone_spec', BackboneSpec.parse(self.backbone_spec))
        self.validate()

    def validate(self) -> None:
        """
        Check cross-field invariants.

        Raises:
            ValidationError: naming the first offending key
        """
        if self.k < 2:
            raise ValidationError(f"k must be >= 2, got {self.k}")
        if not 0.0 < self.gamma:
            raise ValidationError(f"gamma must be > 0, got {self.gamma}")
        if high_group_size(self.k, self.gamma) > self.k - 1:
            raise ValidationError(
                f"gamma={self.gamma} with k={self.k} gives Ceil(gamma*k)="
                f"{high_group_size(self.k, self.gamma)}, leaving the low-score group empty"
            )
        if not 0.0 < self.delta <= 1.0:
            raise ValidationError(f"delta must lie in (0, 1], got {self.delta}")
        if self.lambda_ < 0.0:
            raise ValidationError(f"lambda must be >= 0, got {self.lambda_}")
        if self.image_size < 16:
            raise ValidationError(f"image_size must be >= 16, got {self.image_size}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.initial_lr > 0.0:
            raise ValidationError(f"initial_lr must be > 0, got {self.initial_lr}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if not -(2 ** 63) <= self.seed < 2 ** 64:
            raise ValidationError(f"seed must fit in 64 bits, got {self.seed}")
        if not self.flow_scale > 0.0:
            raise ValidationError(f"flow_scale must be > 0, got {self.flow_scale}")

    @property
    def k_high(self) -> int:
        return high_group_size(self.k, self.gamma)

    def replace(self, **changes: Any) -> 'Config':
        """Return a validated copy with the given fields changed."""
        return dc_replace(self, **changes)

    def snapshot(self) -> Dict[str, Any]:
        """JSON-able view keyed by config-file keys."""
        data = asdict(self)
        data['lambda'] = data.pop('lambda_')
        data['backbone'] = str(self.backbone_spec)
        data.pop('backbone_spec')
        return {key: data[key] for key in DEFAULT_SETTINGS}

    def to_text(self) -> str:
        """Serialize in the config-file format."""
        return ''.join(f"{key}={value}\n" for key, value in self.snapshot().items())

    @classmethod
    def from_settings(cls, settings: Dict[str, Any]) -> 'Config':
        """Build from a mapping keyed by config-file keys (e.g. a RunRecord snapshot)."""
        unknown = sorted(set(settings) - set(DEFAULT_SETTINGS))
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
        merged = DEFAULT_SETTINGS.copy()
        merged.update(settings)
        kwargs = {_FIELD_NAMES[key]: value for key, value in merged.items()}
        kwargs['backbone_spec'] = kwargs.pop('backbone')
        return cls(**kwargs)


def parse_config_text(text: str, source: str = '<config>') -> Dict[str, Any]:
    """
    Parse key=value text into a settings dict (only the keys present).

    Args:
        text: File contents
        source: Name used in error messages

    Returns:
        Dict of parsed values keyed by config-file key

    Raises:
        ValidationError: unknown/duplicate key, missing '=', unparsable value
    """
    settings: Dict[str, Any] = {}
    for line_num, raw in enumerate(text.splitlines(), 1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ValidationError(f"{source}:{line_num}: expected key=value, got '{raw.strip()}'")
        key, value = (part.strip() for part in line.split('=', 1))
        key = key.lower()
        if key not in DEFAULT_SETTINGS:
            raise ValidationError(f"{source}:{line_num}: unknown key '{key}'")
        if key in settings:
            raise ValidationError(f"{source}:{line_num}: duplicate key '{key}'")
        try:
            settings[key] = _PARSERS[key](value)
        except ValidationError as e:
            raise ValidationError(f"{source}:{line_num}: {e}")
        except ValueError:
            raise ValidationError(f"{source}:{line_num}: cannot parse {key}='{value}'")
    return settings


def load_config(path: Union[str, Path, None] = None, **overrides: Any) -> Config:
    """
    Load a config file, falling back to defaults for absent keys.

    Args:
        path: Config file, or None for pure defaults
        **overrides: Config-file keys applied after the file (None values ignored)

    Returns:
        Validated Config
    """
    settings: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding='utf-8')
        except OSError as e:
            raise ValidationError(f"cannot read config {path}: {e}")
        settings = parse_config_text(text, str(path))
        logger.debug("config: loaded %d keys from %s", len(settings), path)
    for key, value in overrides.items():
        if value is not None:
            settings[key] = value
    try:
        return Config.from_settings(settings)
    except ValidationError as e:
        if path is not None:
            raise ValidationError(f"{path}: {e}")
        raise

