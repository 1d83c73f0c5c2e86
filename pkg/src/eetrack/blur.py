"""Linear motion blur synthesis and the blur-robustness loss.

A blur kernel is a unit-sum line segment rasterized through the center of
an odd-sided square matrix; convolving an image with it simulates straight
camera or object motion during exposure.  The robustness loss is the
squared norm between template-token features of a clean pair and of the
same pair with a blurred template.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numerics as nm
from .numerics import Tensor


@dataclass
class BlurKernel:
    length: int
    angle: float
    weights: np.ndarray

    @property
    def is_identity(self) -> bool:
        return self.length == 1


@dataclass
class BlurPolicy:
    """Sampling law for training-time kernels."""

    lengths: tuple[int, ...] = (3, 5, 7)
    angle: float | None = None       # None = uniform over [0, pi)
    apply_prob: float = 1.0          # probability a sample gets a real kernel

    def __post_init__(self):
        if not self.lengths:
            raise ValueError("blur policy needs at least one admissible length")


def make_kernel(length: int, angle: float) -> BlurKernel:
    """Rasterize a centered line of ``length`` pixels at ``angle`` radians."""
    if length < 1 or length % 2 == 0:
        raise ValueError(f"kernel length must be odd and positive, got {length}")
    if length == 1:
        return BlurKernel(1, float(angle), np.ones((1, 1)))
    weights = np.zeros((length, length))
    center = (length - 1) / 2.0
    dx, dy = np.cos(angle), np.sin(angle)
    for i in range(length):
        offset = i - center
        col = int(np.floor(center + offset * dx + 0.5))
        row = int(np.floor(center + offset * dy + 0.5))
        weights[row, col] += 1.0
    weights /= weights.sum()
    return BlurKernel(length, float(angle), weights)


def apply_blur(image: np.ndarray, kernel: BlurKernel) -> np.ndarray:
    """Channel-wise 2-d convolution with reflect padding; shape-preserving."""
    if kernel.is_identity:
        return image.copy()
    single = image.ndim == 2
    img = image[:, :, None] if single else image
    pad = (kernel.length - 1) // 2
    k = Tensor(kernel.weights[None, None, :, :].astype(img.dtype, copy=False))
    channels = []
    with nm.no_grad():
        for c in range(img.shape[2]):
            out = nm.conv2d(Tensor(img[:, :, c][None, :, :]), k,
                            padding=pad, pad_mode="reflect")
            channels.append(out.data[0])
    blurred = np.stack(channels, axis=2)
    return blurred[:, :, 0] if single else blurred


def sample_blur(rng: np.random.Generator, policy: BlurPolicy) -> BlurKernel:
    """Draw a kernel per the policy; identity when the apply roll fails."""
    roll = rng.random()
    length = int(rng.choice(policy.lengths))
    angle = rng.uniform(0.0, np.pi) if policy.angle is None else policy.angle
    if roll >= policy.apply_prob:
        return make_kernel(1, 0.0)
    return make_kernel(length, angle)


def blur_loss(clean: Tensor, blurred: Tensor, reduction: str = "sum") -> Tensor:
    """Squared feature gap between clean and blurred template tokens.

    Default is the plain squared norm; ``reduction="mean"`` divides by the
    element count for scale-free comparisons.
    """
    if clean.shape != blurred.shape:
        raise nm.ShapeError(f"blur_loss shapes differ: {clean.shape} vs {blurred.shape}")
    sq = nm.square(nm.sub(clean, blurred))
    if reduction == "sum":
        return nm.tsum(sq)
    if reduction == "mean":
        return nm.tmean(sq)
    raise ValueError(f"unknown reduction {reduction!r}")


def dump_kernel_csv(kernel: BlurKernel, path) -> None:
    """Write length, angle, and the weight matrix for fixtures/inspection."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["length", kernel.length])
        writer.writerow(["angle", repr(float(kernel.angle))])
        for row in kernel.weights:
            writer.writerow([repr(float(v)) for v in row])


def load_kernel_csv(path) -> BlurKernel:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    length = int(rows[0][1])
    angle = float(rows[1][1])
    weights = np.array([[float(v) for v in row] for row in rows[2:]])
    return BlurKernel(length, angle, weights)
