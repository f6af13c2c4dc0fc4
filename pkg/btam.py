"""
Bidirectional Temporal Awareness Module

Change features from the fused deep features of both timestamps:
- one shared multi-scale aggregation (MSA) block applied to the channel
  concatenation in both temporal orders
- ECA channel attention over the concatenated pair, reduced by a 1x1 conv
- combination with the absolute feature difference, then residual blocks
"""
import logging
import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from errors import ShapeError

logger = logging.getLogger(__name__)


@dataclass
class BidirPair:
    """MSA outputs for the (t1, t2) order and the (t2, t1) order."""

    forward: torch.Tensor
    backward: torch.Tensor

    def __post_init__(self):
        if self.forward.shape != self.backward.shape:
            raise ShapeError(
                f"bidirectional pair differs in shape: {tuple(self.forward.shape)} vs {tuple(self.backward.shape)}"
            )


def _check_pair(f_t1, f_t2):
    if f_t1.shape != f_t2.shape:
        raise ShapeError(f"temporal features differ in shape: {tuple(f_t1.shape)} vs {tuple(f_t2.shape)}")


class MSA(nn.Module):
    """
    Multi-scale aggregation:

        Y = Conv1x1(Concat(Conv1x1(X), DConv3x3_d2(X), Conv5x5(X))) + Conv1x1(X)

    Every branch keeps the spatial size; the widest support is 5x5.
    """

    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.point = nn.Conv2d(in_channels, out_channels, 1)
        self.dilated = nn.Conv2d(in_channels, out_channels, 3, padding=2, dilation=2)
        self.wide = nn.Conv2d(in_channels, out_channels, 5, padding=2)
        self.fuse = nn.Conv2d(3 * out_channels, out_channels, 1)
        self.residual = nn.Conv2d(in_channels, out_channels, 1)

    def forward(self, x):
        branches = torch.cat([self.point(x), self.dilated(x), self.wide(x)], dim=1)
        return self.fuse(branches) + self.residual(x)


def eca_kernel_size(channels, gamma=2, b=1):
    """Adaptive 1-D kernel size for ECA: |log2(C) + b| / gamma rounded up to odd."""
    t = int(abs((math.log2(channels) + b) / gamma))
    return t if t % 2 else t + 1


class ECA(nn.Module):
    """Efficient channel attention: GAP, 1-D conv across channels, sigmoid."""

    def __init__(self, channels):
        super().__init__()
        self.kernel_size = eca_kernel_size(channels)
        self.conv = nn.Conv1d(1, 1, self.kernel_size, padding=(self.kernel_size - 1) // 2, bias=False)

    def attention(self, x):
        """Per-channel weights in (0, 1), shape [B, C, 1, 1]."""
        y = F.adaptive_avg_pool2d(x, 1)                     # [B, C, 1, 1]
        y = self.conv(y.squeeze(-1).transpose(-1, -2))      # [B, 1, C]
        return torch.sigmoid(y.transpose(-1, -2).unsqueeze(-1))

    def forward(self, x):
        return x * self.attention(x)


def canonical_order(pair):
    """
    Order (forward, backward) per sample by descending activation sum.

    Ties keep the as-given order. Swapping the temporal inputs swaps the pair,
    so the canonical result is the same for both input orders.
    """
    f_sum = pair.forward.flatten(1).sum(dim=1)
    b_sum = pair.backward.flatten(1).sum(dim=1)
    keep = (f_sum >= b_sum).view(-1, *([1] * (pair.forward.dim() - 1)))
    first = torch.where(keep, pair.forward, pair.backward)
    second = torch.where(keep, pair.backward, pair.forward)
    return first, second


class ResidualBlock(nn.Module):
    """Channel-preserving two-conv residual block with batch normalization."""

    def __init__(self, channels):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(channels)

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + x)


class BTAM(nn.Module):
    """
    Bidirectional temporal awareness.

    Args:
        deep_channels (int): Channels C_d of each fused deep feature map
        msa_channels (int): Output channels C_msa
        canonical (bool): Order the bidirectional pair canonically before
                          ECA so the output is invariant to swapping t1/t2
        num_blocks (int): Residual refinement blocks
    """

    def __init__(self, deep_channels, msa_channels=256, canonical=True, num_blocks=2):
        super().__init__()
        self.canonical = canonical
        self.msa = MSA(2 * deep_channels, msa_channels)
        self.eca = ECA(2 * msa_channels)
        self.reduce = nn.Conv2d(2 * msa_channels, msa_channels, 1)
        self.combine = nn.Conv2d(msa_channels + deep_channels, msa_channels, 1)
        self.blocks = nn.Sequential(*[ResidualBlock(msa_channels) for _ in range(num_blocks)])

    def bidirectional(self, f_t1, f_t2):
        """Shared MSA over Concat(t1, t2) and Concat(t2, t1)."""
        _check_pair(f_t1, f_t2)
        # One call per direction so each output depends only on its own concat.
        forward = self.msa(torch.cat([f_t1, f_t2], dim=1))
        backward = self.msa(torch.cat([f_t2, f_t1], dim=1))
        return BidirPair(forward, backward)

    def eca_fuse(self, pair):
        """Concat the pair, apply ECA attention, reduce to C_msa channels."""
        if self.canonical:
            first, second = canonical_order(pair)
        else:
            first, second = pair.forward, pair.backward
        return self.reduce(self.eca(torch.cat([first, second], dim=1)))

    def forward(self, f_t1, f_t2):
        fused = self.eca_fuse(self.bidirectional(f_t1, f_t2))
        difference = torch.abs(f_t1 - f_t2)
        return self.blocks(self.combine(torch.cat([fused, difference], dim=1)))


class DifferenceHead(nn.Module):
    """Plain change features |F_t1 - F_t2| -> 1x1 conv, used when BTAM is off."""

    def __init__(self, deep_channels, msa_channels=256):
        super().__init__()
        self.project = nn.Conv2d(deep_channels, msa_channels, 1)

    def forward(self, f_t1, f_t2):
        _check_pair(f_t1, f_t2)
        return self.project(torch.abs(f_t1 - f_t2))
