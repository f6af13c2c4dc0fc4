"""
Encoder Module

Dual-branch Siamese feature extraction:
- a trainable local branch built from basic residual blocks
- a frozen global-prior branch with seeded random weights that stands in for
  a large pretrained encoder and exposes the same stride-4 / stride-16 taps

Both branches are applied with one parameter set to both timestamps.
"""
import hashlib
import logging
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from errors import ShapeError

logger = logging.getLogger(__name__)

SHALLOW_STRIDE = 4
DEEP_STRIDE = 16


@dataclass(frozen=True)
class BranchSpec:
    """Construction parameters of one encoder branch."""

    frozen: bool
    channels_shallow: int = 64
    channels_deep: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.channels_shallow < 1 or self.channels_deep < 1:
            raise ValueError("branch channel counts must be positive")


@dataclass
class EncoderFeatures:
    """Shallow (stride 4) and deep (stride 16) features of one timestamp."""

    res_shallow: torch.Tensor
    res_deep: torch.Tensor
    sam_shallow: Optional[torch.Tensor] = None
    sam_deep: Optional[torch.Tensor] = None

    def __post_init__(self):
        if self.sam_shallow is not None and self.sam_shallow.shape != self.res_shallow.shape:
            raise ShapeError(
                f"shallow features differ: {tuple(self.res_shallow.shape)} vs {tuple(self.sam_shallow.shape)}"
            )
        if self.sam_deep is not None and self.sam_deep.shape != self.res_deep.shape:
            raise ShapeError(
                f"deep features differ: {tuple(self.res_deep.shape)} vs {tuple(self.sam_deep.shape)}"
            )


def check_image(image):
    """
    Validate a [B, 3, H, W] image batch.

    Raises:
        ShapeError: If the rank, channel count or spatial size is unusable
    """
    if image.dim() != 4:
        raise ShapeError(f"expected a [B, 3, H, W] image, got shape {tuple(image.shape)}")
    batch, channels, height, width = image.shape
    if batch < 1 or channels != 3:
        raise ShapeError(f"expected a [B, 3, H, W] image, got shape {tuple(image.shape)}")
    if height < DEEP_STRIDE or width < DEEP_STRIDE or height % DEEP_STRIDE or width % DEEP_STRIDE:
        raise ShapeError(f"image height and width must be divisible by {DEEP_STRIDE}, got {height}x{width}")


class BasicBlock(nn.Module):
    """Two 3x3 conv-BN layers with an identity (or projected) shortcut."""

    def __init__(self, in_channels, out_channels, stride=1, dilation=1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=stride,
                               padding=dilation, dilation=dilation, bias=False)
        self.bn1 = nn.BatchNorm2d(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=dilation,
                               dilation=dilation, bias=False)
        self.bn2 = nn.BatchNorm2d(out_channels)

        self.shortcut = nn.Identity()
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_channels),
            )

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


def _make_stage(in_channels, out_channels, depth, stride=1, dilation=1):
    blocks = [BasicBlock(in_channels, out_channels, stride=stride, dilation=dilation)]
    blocks += [BasicBlock(out_channels, out_channels, dilation=dilation) for _ in range(depth - 1)]
    return nn.Sequential(*blocks)


class LocalBranch(nn.Module):
    """
    Reduced ResNet34-style branch.

    Four stages of basic blocks; the first stage output (stride 4) is the
    shallow tap, the last stage runs dilated at stride 16 and feeds a 1x1 neck
    whose output is the deep tap.
    """

    def __init__(self, spec, stage_depths=(2, 2, 2, 2)):
        super().__init__()
        if len(stage_depths) != 4:
            raise ValueError(f"expected four stage depths, got {stage_depths}")
        c_s, c_d = spec.channels_shallow, spec.channels_deep
        stem_channels = max(c_s // 2, 16)

        self.stem = nn.Sequential(
            nn.Conv2d(3, stem_channels, 7, stride=2, padding=3, bias=False),
            nn.BatchNorm2d(stem_channels),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(3, stride=2, padding=1),
        )
        self.layer1 = _make_stage(stem_channels, c_s, stage_depths[0])
        self.layer2 = _make_stage(c_s, 2 * c_s, stage_depths[1], stride=2)
        self.layer3 = _make_stage(2 * c_s, c_d, stage_depths[2], stride=2)
        self.layer4 = _make_stage(c_d, c_d, stage_depths[3], dilation=2)
        self.neck = nn.Conv2d(c_d, c_d, 1)

    def forward(self, image):
        check_image(image)
        shallow = self.layer1(self.stem(image))
        deep = self.layer4(self.layer3(self.layer2(shallow)))
        return shallow, self.neck(deep)


class PriorBranch(nn.Module):
    """
    Frozen global-prior branch.

    Patch-embedding style convolutions whose weights are drawn once from a
    generator seeded with ``spec.seed`` and never trained. No normalization
    layers, so the branch carries no running statistics that could drift.
    """

    def __init__(self, spec):
        super().__init__()
        c_s, c_d = spec.channels_shallow, spec.channels_deep
        self.seed = spec.seed

        self.patch_embed = nn.Conv2d(3, c_s, SHALLOW_STRIDE, stride=SHALLOW_STRIDE)
        self.shallow_mix = nn.Conv2d(c_s, c_s, 3, padding=1)
        self.downsample = nn.Conv2d(c_s, c_d, DEEP_STRIDE // SHALLOW_STRIDE,
                                    stride=DEEP_STRIDE // SHALLOW_STRIDE)
        self.deep_mix = nn.Conv2d(c_d, c_d, 3, padding=1)
        self.neck = nn.Conv2d(c_d, c_d, 1)

        self.reset_parameters()
        self.requires_grad_(False)
        super().train(False)

    @torch.no_grad()
    def reset_parameters(self):
        """Redraw all weights from the seeded generator."""
        generator = torch.Generator().manual_seed(self.seed)
        for conv in (self.patch_embed, self.shallow_mix, self.downsample, self.deep_mix, self.neck):
            fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
            std = (2.0 / fan_in) ** 0.5
            conv.weight.copy_(torch.randn(conv.weight.shape, generator=generator) * std)
            conv.bias.zero_()

    def train(self, mode=True):
        # Always evaluated as a fixed function.
        return super().train(False)

    @torch.no_grad()
    def forward(self, image):
        check_image(image)
        shallow = F.gelu(self.shallow_mix(F.gelu(self.patch_embed(image))))
        deep = F.gelu(self.deep_mix(F.gelu(self.downsample(shallow))))
        return shallow, self.neck(deep)


def parameter_checksum(module):
    """
    SHA-256 over every parameter and buffer of a module, in state_dict order.

    Args:
        module (nn.Module): Module to hash

    Returns:
        str: Hex digest
    """
    digest = hashlib.sha256()
    for name, tensor in module.state_dict().items():
        digest.update(name.encode("utf-8"))
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


class SiameseEncoder(nn.Module):
    """
    Apply the local branch (and, when enabled, the prior branch) to both
    timestamps with shared weights.
    """

    def __init__(self, local_spec, prior_spec=None, stage_depths=(2, 2, 2, 2)):
        super().__init__()
        if local_spec.frozen:
            raise ValueError("the local branch must be trainable")
        self.local = LocalBranch(local_spec, stage_depths)

        self.prior = None
        if prior_spec is not None:
            if not prior_spec.frozen:
                raise ValueError("the prior branch must be frozen")
            if (prior_spec.channels_shallow, prior_spec.channels_deep) != (
                local_spec.channels_shallow, local_spec.channels_deep
            ):
                raise ValueError("prior and local branches must agree on channel counts")
            self.prior = PriorBranch(prior_spec)
            logger.debug("Prior branch built with seed %d", prior_spec.seed)

    def encode_one(self, image):
        """Encode a single timestamp."""
        res_shallow, res_deep = self.local(image)
        sam_shallow = sam_deep = None
        if self.prior is not None:
            sam_shallow, sam_deep = self.prior(image)
        return EncoderFeatures(res_shallow, res_deep, sam_shallow, sam_deep)

    def forward(self, image_t1, image_t2):
        if image_t1.shape != image_t2.shape:
            raise ShapeError(
                f"bi-temporal images differ in shape: {tuple(image_t1.shape)} vs {tuple(image_t2.shape)}"
            )
        # Separate calls keep each timestamp's features independent of the other.
        return self.encode_one(image_t1), self.encode_one(image_t2)
