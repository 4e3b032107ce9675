"""
Networks: shared backbone, ruler, fusion and classifier

One backbone parameter set is applied to each of a sample's K candidate
images. The ruler maps every candidate feature to a scalar logit; sigmoid
then normalization over the K candidates gives the expressiveness scores
alpha, which weight the features into a single fused vector that the
classifier turns into class probabilities.
"""

import logging
import math
from pathlib import Path
from typing import Any, Dict, NamedTuple, Optional, Union

import torch
import torch.nn as nn
import torch.nn.functional as F
import torchvision

from core.config import BackboneSpec
from core.errors import PipelineError, ValidationError
from core.rng import torch_seed

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 'occurrank-checkpoint'
CHECKPOINT_VERSION = 1
INPUT_CHANNELS = 3


class TinyBackbone(nn.Module):
    """Four conv -> GroupNorm -> ReLU -> avg-pool blocks, then global average pooling."""

    def __init__(self, dim: int = 128, in_channels: int = INPUT_CHANNELS):
        super().__init__()
        widths = [max(1, dim // 8), max(1, dim // 4), max(1, dim // 2), dim]
        layers = []
        prev = in_channels
        for i, width in enumerate(widths):
            layers += [
                nn.Conv2d(prev, width, kernel_size=3, padding=1),
                nn.GroupNorm(math.gcd(width, 4), width),
                nn.ReLU(inplace=True),
            ]
            if i < len(widths) - 1:
                layers.append(nn.AvgPool2d(2))
            prev = width
        self.features = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.dim = dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.flatten(self.pool(self.features(x)), 1)


class ResNet18Backbone(nn.Module):
    """torchvision ResNet18 with the classification head removed (D = 512)."""

    def __init__(self):
        super().__init__()
        net = torchvision.models.resnet18(weights=None)
        net.fc = nn.Identity()
        self.net = net
        self.dim = 512

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


def make_backbone(spec: BackboneSpec) -> nn.Module:
    if spec.name == 'tiny':
        return TinyBackbone(spec.dim)
    if spec.name == 'resnet18':
        return ResNet18Backbone()
    raise ValidationError(f"unknown backbone '{spec.name}'")


def normalize_ruler_logits(logits: torch.Tensor) -> torch.Tensor:
    """alpha_j = sigmoid(s_j) / sum_k sigmoid(s_k) over the last axis."""
    weights = torch.sigmoid(logits)
    return weights / weights.sum(dim=-1, keepdim=True)


def weighted_fusion(features: torch.Tensor, alpha: torch.Tensor) -> torch.Tensor:
    """Sum_j alpha_j x_j: (..., K, D) x (..., K) -> (..., D)."""
    if features.shape[:-1] != alpha.shape:
        raise ValidationError(f"features {tuple(features.shape)} and scores {tuple(alpha.shape)} disagree on K")
    return (alpha.unsqueeze(-1) * features).sum(dim=-2)


class ForwardOutput(NamedTuple):
    prediction: torch.Tensor  # N x C probabilities
    alpha: torch.Tensor       # N x K
    fused: torch.Tensor       # N x D
    logits: torch.Tensor      # N x C, pre-softmax
    features: torch.Tensor    # N x K x D
    ruler_logits: torch.Tensor  # N x K


class OccurRankNet(nn.Module):
    """
    Backbone f1, ruler f2 (D -> 1) and classifier f3 (D -> C).

    Inputs are N x K x 3 x H x W candidate images. Every stage treats the
    K candidates as a set, so permuting them permutes alpha and leaves the
    fused feature and prediction unchanged.
    """

    def __init__(self, backbone_spec: BackboneSpec, num_classes: int):
        super().__init__()
        if num_classes < 2:
            raise ValidationError(f"need at least 2 classes, got {num_classes}")
        self.backbone_spec = backbone_spec
        self.num_classes = num_classes
        self.backbone = make_backbone(backbone_spec)
        self.dim = self.backbone.dim
        self.ruler = nn.Linear(self.dim, 1)
        self.classifier = nn.Linear(self.dim, num_classes)

    def backbone_forward(self, inputs: torch.Tensor) -> torch.Tensor:
        """(N x) K x 3 x H x W -> (N x) K x D, one shared parameter set."""
        if inputs.dim() == 4:
            return self.backbone_forward(inputs.unsqueeze(0)).squeeze(0)
        if inputs.dim() != 5 or inputs.shape[2] != INPUT_CHANNELS:
            raise ValidationError(f"expected N x K x {INPUT_CHANNELS} x H x W inputs, got {tuple(inputs.shape)}")
        n, k = inputs.shape[:2]
        flat = inputs.reshape(n * k, *inputs.shape[2:])
        return self.backbone(flat).reshape(n, k, self.dim)

    def ruler_scores(self, features: torch.Tensor):
        """Returns (alpha, logits), both (..., K)."""
        logits = self.ruler(features).squeeze(-1)
        return normalize_ruler_logits(logits), logits

    def fuse_features(self, features: torch.Tensor, alpha: torch.Tensor) -> torch.Tensor:
        return weighted_fusion(features, alpha)

    def classify(self, fused: torch.Tensor):
        """Returns (probabilities, logits)."""
        logits = self.classifier(fused)
        return F.softmax(logits, dim=-1), logits

    def forward(self, inputs: torch.Tensor) -> ForwardOutput:
        features = self.backbone_forward(inputs)
        alpha, ruler_logits = self.ruler_scores(features)
        fused = self.fuse_features(features, alpha)
        prediction, logits = self.classify(fused)
        return ForwardOutput(prediction, alpha, fused, logits, features, ruler_logits)


def build_model(backbone_spec: BackboneSpec, num_classes: int, seed: int, tag: str = 'init',
                init_weights: Optional[Union[str, Path]] = None) -> OccurRankNet:
    """
    Construct a freshly initialized model.

    Initialization draws from a torch seed derived from (seed, tag) inside a
    forked RNG, so building a model never disturbs the global torch state.

    Args:
        init_weights: Optional backbone state_dict (e.g. pretrained ResNet18
            weights) loaded after initialization
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(torch_seed(seed, tag))
        model = OccurRankNet(backbone_spec, num_classes)
    if init_weights is not None:
        load_backbone_weights(model, init_weights)
    return model


def load_backbone_weights(model: OccurRankNet, path: Union[str, Path]) -> None:
    try:
        state = torch.load(str(path), map_location='cpu', weights_only=True)
    except (OSError, RuntimeError) as e:
        raise PipelineError(f"cannot load backbone weights from {path}: {e}")
    if isinstance(state, dict) and 'state_dict' in state:
        state = state['state_dict']
    target = model.backbone.net if isinstance(model.backbone, ResNet18Backbone) else model.backbone
    try:
        result = target.load_state_dict(state, strict=False)
    except (RuntimeError, TypeError, AttributeError) as e:
        raise PipelineError(f"backbone weights in {path} do not fit {model.backbone_spec}: {e}")
    if result.missing_keys:
        logger.warning("model: %d backbone parameters not in %s (kept at init)", len(result.missing_keys), path)
    if result.unexpected_keys:
        logger.info("model: ignored %d unexpected keys from %s", len(result.unexpected_keys), path)


def save_checkpoint(path: Union[str, Path], model: OccurRankNet, k: int,
                    extra: Optional[Dict[str, Any]] = None) -> Path:
    """Write a self-describing, version-tagged checkpoint."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        'format': CHECKPOINT_FORMAT,
        'version': CHECKPOINT_VERSION,
        'backbone': str(model.backbone_spec),
        'dim': model.dim,
        'num_classes': model.num_classes,
        'k': k,
        'extra': extra or {},
        'state_dict': model.state_dict(),
    }
    torch.save(payload, str(path))
    return path


def load_checkpoint(path: Union[str, Path]):
    """
    Load a checkpoint written by save_checkpoint.

    Returns:
        (model in eval mode, metadata dict without the state_dict)

    Raises:
        PipelineError: unreadable file, wrong format or version
    """
    try:
        payload = torch.load(str(path), map_location='cpu', weights_only=True)
    except (OSError, RuntimeError) as e:
        raise PipelineError(f"cannot read checkpoint {path}: {e}")
    if not isinstance(payload, dict) or payload.get('format') != CHECKPOINT_FORMAT:
        raise PipelineError(f"{path}: not an OccurRank checkpoint")
    if payload.get('version') != CHECKPOINT_VERSION:
        raise PipelineError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    spec = BackboneSpec.parse(payload['backbone'])
    model = OccurRankNet(spec, payload['num_classes'])
    model.load_state_dict(payload['state_dict'])
    model.eval()
    meta = {key: value for key, value in payload.items() if key != 'state_dict'}
    return model, meta
