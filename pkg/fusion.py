"""
Fusion Module

Gaussian-smoothed projection of the prior branch's shallow features and the
convex feature gates that blend both encoder branches:

    F_shallow = (1 - alpha) * F_res_shallow + alpha * GSPM(F_sam_shallow)
    F_deep    = (1 - beta)  * F_res_deep    + beta  * F_sam_deep

alpha is a fixed hyperparameter; beta = sigmoid(beta_raw) is learned.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from errors import ShapeError

logger = logging.getLogger(__name__)

GSPM_SIGMAS = (1.0, 0.8, 0.6)
GAUSSIAN_SIZE = 3


@dataclass(frozen=True)
class GaussianKernel:
    """A normalized isotropic 2-D Gaussian on an odd square grid."""

    sigma: float
    size: int
    weights: np.ndarray


def gaussian_kernel(sigma, size=GAUSSIAN_SIZE):
    """
    Build a normalized Gaussian kernel.

    Args:
        sigma (float): Standard deviation in pixels, > 0
        size (int, optional): Odd kernel extent. Defaults to 3.

    Returns:
        GaussianKernel: weights[i][j] proportional to exp(-(di^2 + dj^2) / (2 sigma^2)),
                        summing to 1

    Raises:
        ValueError: If sigma is not positive or size is not a positive odd integer
    """
    if not sigma > 0 or not math.isfinite(sigma):
        raise ValueError(f"sigma must be a positive finite number, got {sigma}")
    if int(size) != size or size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be a positive odd integer, got {size}")

    offsets = np.arange(size, dtype=np.float64) - size // 2
    sq = offsets[:, None] ** 2 + offsets[None, :] ** 2
    weights = np.exp(-sq / (2.0 * sigma * sigma))
    weights /= weights.sum()
    return GaussianKernel(float(sigma), int(size), weights)


def _pad_mode(x, pad):
    # Reflection needs at least pad + 1 pixels along each axis.
    return "reflect" if min(x.shape[-2:]) > pad else "replicate"


class DepthwiseGaussianConv(nn.Module):
    """Per-channel fixed Gaussian blur with reflective padding."""

    def __init__(self, channels, sigma, size=GAUSSIAN_SIZE):
        super().__init__()
        kernel = gaussian_kernel(sigma, size)
        self.channels = channels
        self.sigma = kernel.sigma
        self.pad = size // 2
        weight = torch.from_numpy(kernel.weights).float()
        self.register_buffer("weight", weight.expand(channels, 1, size, size).clone())

    def forward(self, x):
        if x.shape[1] != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {x.shape[1]}")
        if self.pad:
            x = F.pad(x, (self.pad,) * 4, mode=_pad_mode(x, self.pad))
        return F.conv2d(x, self.weight.to(x.dtype), groups=self.channels)


class GaussianConvBlock(nn.Module):
    """Y = ReLU(BN(PointwiseConv(DepthwiseGaussianConv_sigma(X))))."""

    def __init__(self, channels, sigma, size=GAUSSIAN_SIZE):
        super().__init__()
        self.smooth = DepthwiseGaussianConv(channels, sigma, size)
        self.pointwise = nn.Conv2d(channels, channels, 1, bias=False)
        self.bn = nn.BatchNorm2d(channels)

    def forward(self, x):
        return F.relu(self.bn(self.pointwise(self.smooth(x))))


class GSPM(nn.Module):
    """
    Gaussian-smoothed projection module.

    Three Gaussian conv blocks with decreasing sigma, a 1x1 projection, and an
    independent 1x1 residual projection of the input.
    """

    def __init__(self, channels, sigmas=GSPM_SIGMAS, size=GAUSSIAN_SIZE):
        super().__init__()
        self.blocks = nn.Sequential(*[GaussianConvBlock(channels, s, size) for s in sigmas])
        self.project = nn.Conv2d(channels, channels, 1)
        self.residual = nn.Conv2d(channels, channels, 1)

    def forward(self, x):
        return self.project(self.blocks(x)) + self.residual(x)


def gate_fuse(f_res, f_other, gamma):
    """
    Convex blend (1 - gamma) * f_res + gamma * f_other.

    Args:
        f_res (torch.Tensor): Local-branch features
        f_other (torch.Tensor): Prior-branch (or projected prior) features
        gamma (float | torch.Tensor): Scalar gate in [0, 1]

    Returns:
        torch.Tensor: Fused features, same shape as the inputs

    Raises:
        ShapeError: If the two feature maps differ in shape
        ValueError: If gamma lies outside [0, 1]
    """
    if f_res.shape != f_other.shape:
        raise ShapeError(f"cannot fuse {tuple(f_res.shape)} with {tuple(f_other.shape)}")
    value = float(gamma.detach()) if torch.is_tensor(gamma) else float(gamma)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"gate value must lie in [0, 1], got {value}")
    return (1 - gamma) * f_res + gamma * f_other


class FeatureGates(nn.Module):
    """
    Shallow (fixed alpha) and deep (learnable beta) gates.

    alpha is stored as a buffer so it travels with checkpoints but is never
    optimized; beta_raw is a scalar parameter initialized to 0 (beta = 0.5).
    """

    def __init__(self, alpha=0.5):
        super().__init__()
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
        self.register_buffer("alpha", torch.tensor(float(alpha)))
        self.beta_raw = nn.Parameter(torch.zeros(()))

    @property
    def beta(self):
        return torch.sigmoid(self.beta_raw)

    def shallow(self, f_res, f_prior):
        return gate_fuse(f_res, f_prior, self.alpha.item())

    def deep(self, f_res, f_prior):
        return gate_fuse(f_res, f_prior, self.beta)


if __name__ == "__main__":
    for sigma in GSPM_SIGMAS:
        kernel = gaussian_kernel(sigma)
        print(f"sigma={sigma}:")
        print(np.array2string(kernel.weights, precision=4))
