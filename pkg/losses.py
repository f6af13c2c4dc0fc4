"""
Multi-task objective and boundary ground truth.

    total = l_sem * sem + l_cd * change + l_bd * boundary + l_sim * similarity

- sem: cross-entropy per timestamp over labeled (class > 0) pixels, averaged
- change: BCE-with-logits of the refined change map against the change mask
- boundary: BCE-with-logits against boundary_target, positive weight w_b
- similarity: cosine consistency of semantic features (pull unchanged
  pixels together, push changed pixels apart)
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from errors import NonFiniteLossError, ShapeError

logger = logging.getLogger(__name__)

SIMILARITY_EPS = 1e-8


@dataclass(frozen=True)
class LossWeights:
    sem: float = 1.0
    cd: float = 1.0
    bd: float = 0.5
    sim: float = 0.1

    def __post_init__(self):
        for name in ("sem", "cd", "bd", "sim"):
            if not getattr(self, name) > 0:
                raise ValueError(f"loss weight '{name}' must be positive")

    @classmethod
    def from_config(cls, config):
        return cls(config.lambda_sem, config.lambda_cd, config.lambda_bd, config.lambda_sim)


@dataclass
class LossReport:
    """Loss components of one step. ``total`` keeps its graph for backward()."""

    total: torch.Tensor
    sem: torch.Tensor
    change: torch.Tensor
    boundary: torch.Tensor
    similarity: torch.Tensor
    weights: LossWeights = field(default_factory=LossWeights)

    COMPONENTS = ("sem", "change", "boundary", "similarity")

    def to_dict(self):
        """Plain floats for logging and history."""
        values = {"total": float(self.total.detach())}
        values.update({name: float(getattr(self, name).detach()) for name in self.COMPONENTS})
        return values


def boundary_target(label_t1, label_t2):
    """
    Boundary pixels of the change mask.

    The change mask is (label_t1 > 0) | (label_t2 > 0); a pixel is a boundary
    pixel when the mask differs from at least one 4-neighbour. Borders are
    edge-replicated, so the image frame never creates boundary by itself.

    Args:
        label_t1 (np.ndarray): Integer map [..., H, W]
        label_t2 (np.ndarray): Integer map of the same shape

    Returns:
        np.ndarray: uint8 map [..., H, W] with 1 on boundary pixels
    """
    label_t1 = np.asarray(label_t1)
    label_t2 = np.asarray(label_t2)
    if label_t1.shape != label_t2.shape:
        raise ShapeError(f"label maps differ in shape: {label_t1.shape} vs {label_t2.shape}")
    if label_t1.ndim < 2:
        raise ShapeError(f"label maps need at least two dimensions, got {label_t1.shape}")

    mask = (label_t1 > 0) | (label_t2 > 0)
    if mask.size == 0:
        return mask.astype(np.uint8)
    pad = [(0, 0)] * (mask.ndim - 2) + [(1, 1), (1, 1)]
    padded = np.pad(mask, pad, mode="edge")
    center = padded[..., 1:-1, 1:-1]
    boundary = (
        (center != padded[..., :-2, 1:-1])
        | (center != padded[..., 2:, 1:-1])
        | (center != padded[..., 1:-1, :-2])
        | (center != padded[..., 1:-1, 2:])
    )
    return boundary.astype(np.uint8)


def _masked_mean(values, mask):
    if mask.any():
        return values[mask].mean()
    return values.sum() * 0.0


def similarity_loss(sem1_feat, sem2_feat, change_gt, margin=0.0, eps=SIMILARITY_EPS):
    """
    Semantic consistency between the two timestamps' decoder features.

    With per-pixel unit vectors a, b and c = <a, b>:
        mean over unchanged pixels of (1 - c)  +  mean over changed pixels of max(0, c - margin)
    An empty pixel set contributes 0. Norms are clamped to eps, so an all-zero
    feature vector has c = 0.

    Args:
        sem1_feat (torch.Tensor): [B, D, H, W]
        sem2_feat (torch.Tensor): [B, D, H, W]
        change_gt (torch.Tensor): [B, H, W] binary change mask

    Returns:
        torch.Tensor: Scalar loss
    """
    if sem1_feat.shape != sem2_feat.shape:
        raise ShapeError(f"semantic features differ: {tuple(sem1_feat.shape)} vs {tuple(sem2_feat.shape)}")
    if change_gt.shape != (sem1_feat.shape[0], *sem1_feat.shape[2:]):
        raise ShapeError(f"change mask {tuple(change_gt.shape)} does not match features {tuple(sem1_feat.shape)}")

    a = sem1_feat / sem1_feat.norm(dim=1, keepdim=True).clamp_min(eps)
    b = sem2_feat / sem2_feat.norm(dim=1, keepdim=True).clamp_min(eps)
    cosine = (a * b).sum(dim=1).clamp(-1.0, 1.0)
    dissimilarity = 1.0 - cosine

    changed = change_gt > 0
    return _masked_mean(dissimilarity, ~changed) + _masked_mean(F.relu(cosine - margin), changed)


def semantic_loss(logits, labels):
    """Cross-entropy averaged over pixels with label > 0; 0 when there are none."""
    ce = F.cross_entropy(logits, labels.long(), reduction="none")
    return _masked_mean(ce, labels > 0)


def _check_finite(name, value):
    if not torch.isfinite(value).all():
        raise NonFiniteLossError(name, float(value.detach()))


def scd_loss(preds, targets, weights=LossWeights(), boundary_pos_weight=5.0, similarity_margin=0.0):
    """
    Composite multi-task loss.

    Args:
        preds (Predictions): Network outputs
        targets (dict): Batch with 'label_t1', 'label_t2' (long [B, H, W]),
                        'change' and 'boundary' ([B, H, W], 0/1)
        weights (LossWeights, optional): Component weights
        boundary_pos_weight (float, optional): Positive-class weight of the boundary BCE
        similarity_margin (float, optional): Margin m in max(0, c - m)

    Returns:
        LossReport: Weighted total and its components

    Raises:
        NonFiniteLossError: If any component is NaN or infinite
    """
    label_t1, label_t2 = targets["label_t1"], targets["label_t2"]
    change = targets["change"].float().unsqueeze(1)
    boundary = targets["boundary"].float().unsqueeze(1)
    if preds.change_logits.shape != change.shape:
        raise ShapeError(f"change logits {tuple(preds.change_logits.shape)} vs targets {tuple(change.shape)}")

    sem = 0.5 * (semantic_loss(preds.sem1_logits, label_t1) + semantic_loss(preds.sem2_logits, label_t2))
    change_term = F.binary_cross_entropy_with_logits(preds.change_logits, change)
    pos_weight = torch.tensor(boundary_pos_weight, dtype=preds.boundary_logits.dtype,
                              device=preds.boundary_logits.device)
    boundary_term = F.binary_cross_entropy_with_logits(preds.boundary_logits, boundary, pos_weight=pos_weight)

    if preds.sem1_features is not None and preds.sem2_features is not None:
        similarity = similarity_loss(preds.sem1_features, preds.sem2_features,
                                     targets["change"], margin=similarity_margin)
    else:
        similarity = sem * 0.0

    for name, value in (("sem", sem), ("change", change_term),
                        ("boundary", boundary_term), ("similarity", similarity)):
        _check_finite(name, value)

    total = weights.sem * sem + weights.cd * change_term + weights.bd * boundary_term + weights.sim * similarity
    _check_finite("total", total)
    return LossReport(total, sem, change_term, boundary_term, similarity, weights)


if __name__ == "__main__":
    mask = np.zeros((4, 4), dtype=np.int64)
    mask[:, :2] = 1
    print("Boundary of a half-filled 4x4 mask:")
    print(boundary_target(mask, np.zeros_like(mask)))
    print(f"Uniform 5-class cross-entropy: {math.log(5):.4f}")
