"""
Ranking and classification losses

The ranking term sorts a sample's K scores in descending order, splits them
into the top K_h = ceil(gamma * K) and the rest, and applies a hinge with
margin delta to the difference of the two group means.
"""

import logging
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from core.config import high_group_size
from core.errors import ValidationError
from core.rng import make_rng

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


class RankSplit(NamedTuple):
    sorted_scores: torch.Tensor  # (..., K), descending, stable
    k_high: int
    high_mean: torch.Tensor      # (...)
    low_mean: torch.Tensor       # (...)

    @property
    def gap(self) -> torch.Tensor:
        return self.high_mean - self.low_mean


def rank_split(alpha: torch.Tensor, gamma: float) -> RankSplit:
    """
    Split scores into high and low groups.

    Raises:
        ValidationError: either group would be empty
    """
    k = alpha.shape[-1]
    k_high = high_group_size(k, gamma)
    if not 1 <= k_high <= k - 1:
        raise ValidationError(f"gamma={gamma} with K={k} gives K_h={k_high}; both groups must be nonempty")
    sorted_scores = torch.sort(alpha, dim=-1, descending=True, stable=True).values
    return RankSplit(
        sorted_scores=sorted_scores,
        k_high=k_high,
        high_mean=sorted_scores[..., :k_high].mean(dim=-1),
        low_mean=sorted_scores[..., k_high:].mean(dim=-1),
    )


def ro_loss(alpha: torch.Tensor, delta: float, gamma: float) -> torch.Tensor:
    """max(0, delta - (high_mean - low_mean)) per sample; the kink has subgradient 0."""
    split = rank_split(alpha, gamma)
    return F.relu(delta - split.gap)


def ce_loss(prediction: torch.Tensor, y_g: torch.Tensor) -> torch.Tensor:
    """
    -log p_true per sample, probabilities floored at 1e-12.

    Args:
        prediction: (..., C) probabilities
        y_g: (..., C) one-hot labels, or (...) integer class ids
    """
    if y_g.dtype in (torch.int64, torch.int32, torch.int16, torch.uint8):
        if prediction.shape[:-1] != y_g.shape:
            raise ValidationError(f"{tuple(y_g.shape)} labels for {tuple(prediction.shape)} predictions")
        y_g = F.one_hot(y_g.long(), prediction.shape[-1]).to(prediction.dtype)
    elif prediction.shape != y_g.shape:
        raise ValidationError(f"prediction {tuple(prediction.shape)} and label {tuple(y_g.shape)} lengths differ")
    return -(y_g * torch.log(prediction.clamp_min(PROB_FLOOR))).sum(dim=-1)


class LossTerms(NamedTuple):
    total: torch.Tensor
    ce: torch.Tensor   # per sample
    ro: torch.Tensor   # per sample (zeros when the ranking term is off)
    gap: torch.Tensor  # per sample, detached


def total_loss(prediction: torch.Tensor, y_g: torch.Tensor, alpha: torch.Tensor,
               delta: float, gamma: float, lambda_: float) -> LossTerms:
    """
    Batch mean of ce + lambda * ro.

    Single-candidate inputs (K = 1) have no ranking term.

    Raises:
        ValidationError: empty batch
    """
    if prediction.shape[0] == 0:
        raise ValidationError("empty batch")
    ce = ce_loss(prediction, y_g)
    if alpha.shape[-1] < 2:
        zeros = torch.zeros_like(ce)
        return LossTerms(ce.mean(), ce, zeros, zeros.detach())
    split = rank_split(alpha, gamma)
    ro = F.relu(delta - split.gap)
    if lambda_ == 0:
        total = ce.mean()
    else:
        total = (ce + lambda_ * ro).mean()
    return LossTerms(total, ce, ro, split.gap.detach())


def near_kink(alpha: torch.Tensor, delta: float, gamma: float, epsilon: float = 1e-5) -> bool:
    """
    True when a finite-difference step of epsilon could cross the ranking hinge.

    That is a gap within 10 * epsilon of delta, or two scores within
    2 * epsilon of each other.
    """
    split = rank_split(alpha.detach(), gamma)
    if bool(((split.gap - delta).abs() < 10 * epsilon).any()):
        return True
    steps = split.sorted_scores[..., :-1] - split.sorted_scores[..., 1:]
    return bool((steps <= 2 * epsilon).any())



def grad_check(loss_fn: Callable[[], torch.Tensor], params: Sequence[torch.Tensor], epsilon: float = 1e-5,
               max_entries: Optional[int] = None, seed: int = 0, kink: Optional[Callable[[], bool]] = None,
               jitter: float = 1e-3, max_resamples: int = 20) -> float:
    """
    Compare autograd against central finite differences.

    Args:
        loss_fn: Zero-argument closure returning a scalar built from ``params``
        params: Leaf tensors with requires_grad (float64 recommended)
        epsilon: Finite-difference step
        max_entries: Check at most this many entries per tensor (random subset)
        seed: Seed for the entry subset and the re-sampling noise
        kink: Closure that is true while ``params`` sit at a non-differentiable
            point; params are then perturbed in place with N(0, jitter) noise
        jitter: Standard deviation of the re-sampling noise
        max_resamples: Perturbations allowed before giving up

    Returns:
        Max over checked entries of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)

    Raises:
        ValidationError: params still at a kink after max_resamples perturbations
    """
    params = list(params)
    rng = make_rng(seed, 'gradcheck')
    if kink is not None:
        resamples = 0
        while kink():
            if resamples == max_resamples:
                raise ValidationError(f"grad_check: still at a kink after {max_resamples} resamples")
            with torch.no_grad():
                for param in params:
                    noise = rng.normal(0.0, jitter, size=tuple(param.shape))
                    param.add_(torch.from_numpy(noise).to(dtype=param.dtype, device=param.device))
            resamples += 1
        if resamples:
            logger.debug("grad_check: moved off a kink after %d resamples", resamples)
    analytic = torch.autograd.grad(loss_fn(), params, allow_unused=True)
    worst = 0.0
    for p_index, (param, grad) in enumerate(zip(params, analytic)):
        grad = torch.zeros_like(param) if grad is None else grad
        flat = param.data.view(-1)
        flat_grad = grad.reshape(-1)
        entries = np.arange(flat.numel())
        if max_entries is not None and flat.numel() > max_entries:
            entries = rng.choice(flat.numel(), size=max_entries, replace=False)
        for idx in entries:
            idx = int(idx)
            original = flat[idx].item()
            with torch.no_grad():
                flat[idx] = original + epsilon
                plus = loss_fn().item()
                flat[idx] = original - epsilon
                minus = loss_fn().item()
                flat[idx] = original
            numeric = (plus - minus) / (2.0 * epsilon)
            exact = flat_grad[idx].item()
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-8)
            if error > worst:
                logger.debug("grad_check: param %d entry %d analytic %.6g numeric %.6g", p_index, idx, exact, numeric)
                worst = error
    return worst
