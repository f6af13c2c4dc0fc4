"""
Task decoders.

- SemanticDecoder: shared by both timestamps (Siamese decoding)
- ChangeDecoder: change logits from BTAM features
- BoundaryDecoder: 1-channel projection sharpened by a fixed Sobel operator
- TaskInteraction: refines change logits with |semantic feature difference|

All upsampling is bilinear with align_corners=False.
"""
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from errors import ShapeError

SOBEL_EPS = 1e-8
SOBEL_X = ((-1.0, 0.0, 1.0), (-2.0, 0.0, 2.0), (-1.0, 0.0, 1.0))


@dataclass
class Predictions:
    """Network outputs, all at input resolution."""

    sem1_logits: torch.Tensor
    sem2_logits: torch.Tensor
    change_logits: torch.Tensor
    boundary_logits: torch.Tensor
    # Pre-projection semantic features, used by task interaction and the similarity loss
    sem1_features: Optional[torch.Tensor] = None
    sem2_features: Optional[torch.Tensor] = None


def upsample(x, size):
    return F.interpolate(x, size=size, mode="bilinear", align_corners=False)


def conv_bn_relu(in_channels, out_channels, kernel_size=3):
    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, kernel_size, padding=kernel_size // 2, bias=False),
        nn.BatchNorm2d(out_channels),
        nn.ReLU(inplace=True),
    )


class SemanticDecoder(nn.Module):
    """Deep features upsampled to the shallow grid, concatenated, refined, projected."""

    def __init__(self, shallow_channels, deep_channels, num_classes, width=64):
        super().__init__()
        self.refine = nn.Sequential(
            conv_bn_relu(shallow_channels + deep_channels, width),
            conv_bn_relu(width, width),
        )
        self.classify = nn.Conv2d(width, num_classes, 1)

    def forward(self, f_shallow, f_deep, out_size):
        """
        Returns:
            tuple: (logits [B, C, H, W], features [B, width, H, W])
        """
        deep = upsample(f_deep, f_shallow.shape[-2:])
        if deep.shape[0] != f_shallow.shape[0]:
            raise ShapeError(f"batch mismatch: {tuple(f_shallow.shape)} vs {tuple(f_deep.shape)}")
        features = self.refine(torch.cat([f_shallow, deep], dim=1))
        logits = upsample(self.classify(features), out_size)
        return logits, upsample(features, out_size)


class ChangeDecoder(nn.Module):
    def __init__(self, in_channels, width=64):
        super().__init__()
        self.refine = conv_bn_relu(in_channels, width)
        self.project = nn.Conv2d(width, 1, 1)

    def forward(self, f_change, out_size):
        return upsample(self.project(self.refine(f_change)), out_size)


class SobelEdges(nn.Module):
    """Gradient magnitude sqrt(Gx^2 + Gy^2 + eps) with fixed Sobel kernels."""

    def __init__(self, eps=SOBEL_EPS):
        super().__init__()
        self.eps = eps
        gx = torch.tensor(SOBEL_X)
        self.register_buffer("kernel", torch.stack([gx, gx.t()]).unsqueeze(1))  # [2, 1, 3, 3]

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != 1:
            raise ShapeError(f"Sobel edges need a single-channel [B, 1, H, W] map, got {tuple(x.shape)}")
        mode = "reflect" if min(x.shape[-2:]) > 1 else "replicate"
        grads = F.conv2d(F.pad(x, (1, 1, 1, 1), mode=mode), self.kernel.to(x.dtype))
        return torch.sqrt((grads ** 2).sum(dim=1, keepdim=True) + self.eps)


def sobel_edges(x, eps=SOBEL_EPS):
    """Functional form of SobelEdges for a [B, 1, H, W] map."""
    return SobelEdges(eps).to(x.device)(x)


class BoundaryDecoder(nn.Module):
    """logits = proj + sobel_edges(proj), upsampled to input resolution."""

    def __init__(self, in_channels):
        super().__init__()
        self.project = nn.Conv2d(in_channels, 1, 1)
        self.sobel = SobelEdges()

    def forward(self, f_shallow, out_size):
        proj = self.project(f_shallow)
        return upsample(proj + self.sobel(proj), out_size)


class TaskInteraction(nn.Module):
    """refined_change = change_logits + Conv1x1(|sem1_feat - sem2_feat|)."""

    def __init__(self, width=64):
        super().__init__()
        self.project = nn.Conv2d(width, 1, 1)

    def forward(self, sem1_feat, sem2_feat, change_logits):
        if sem1_feat.shape != sem2_feat.shape:
            raise ShapeError(f"semantic features differ: {tuple(sem1_feat.shape)} vs {tuple(sem2_feat.shape)}")
        if sem1_feat.shape[-2:] != change_logits.shape[-2:] or sem1_feat.shape[0] != change_logits.shape[0]:
            raise ShapeError(
                f"semantic features {tuple(sem1_feat.shape)} do not match change logits {tuple(change_logits.shape)}"
            )
        return change_logits + self.project(torch.abs(sem1_feat - sem2_feat))
