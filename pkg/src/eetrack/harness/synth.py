"""Deterministic synthetic sequences with exact ground truth.

A sequence is a textured rectangle or disc gliding over a smooth random
background, optionally with distractor shapes and per-frame linear motion
blur applied to the rendered frame.  Everything derives from one seed, so
regeneration is bit-identical; the blur schedule draws from an independent
stream so a clean/blurred pair with the same seed shares every frame
before blurring.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..blur import BlurKernel, BlurPolicy, apply_blur, sample_blur
from ..head import BBox
from ..pipeline.crops import resize_bilinear


@dataclass
class SequenceSpec:
    frames: int = 40
    frame_size: int = 128
    object_kind: str = "rect"        # "rect" or "disc"
    min_size: int = 12
    max_size: int = 28
    max_speed: float = 3.0
    size_wobble: float = 0.0         # relative amplitude of slow size change
    distractors: int = 1
    blur_prob: float = 0.0           # per-frame chance of blurring the frame
    blur_lengths: tuple[int, ...] = (3, 5, 7)
    pixel_noise: float = 0.01
    seed: int = 0


@dataclass
class SyntheticSequence:
    frames: list[np.ndarray]
    gt_boxes: list[BBox]
    blur_schedule: list[BlurKernel | None]
    spec: SequenceSpec
    seed: int

    def __len__(self) -> int:
        return len(self.frames)


def _smooth_background(rng: np.random.Generator, size: int) -> np.ndarray:
    coarse = rng.uniform(0.2, 0.8, size=(4, 4, 3))
    return resize_bilinear(coarse, size, size)


def _texture(rng: np.random.Generator, contrast: float = 1.0) -> np.ndarray:
    base = rng.uniform(0.0, 1.0, size=(6, 6, 3))
    return np.clip(0.5 + (base - 0.5) * contrast, 0.0, 1.0)


@dataclass
class _Mover:
    pos: np.ndarray          # float center (x, y)
    vel: np.ndarray
    size: np.ndarray         # (w, h)
    texture: np.ndarray

    def advance(self, frame_size: int) -> None:
        self.pos += self.vel
        for axis in range(2):
            half = self.size[axis] / 2.0
            lo, hi = half + 1.0, frame_size - half - 1.0
            if self.pos[axis] < lo:
                self.pos[axis] = lo + (lo - self.pos[axis])
                self.vel[axis] = -self.vel[axis]
            elif self.pos[axis] > hi:
                self.pos[axis] = hi - (self.pos[axis] - hi)
                self.vel[axis] = -self.vel[axis]
        np.clip(self.pos, 1.0, frame_size - 2.0, out=self.pos)


def _spawn(rng: np.random.Generator, spec: SequenceSpec, contrast: float) -> _Mover:
    size = rng.uniform(spec.min_size, spec.max_size, size=2)
    margin = size.max() / 2.0 + 2.0
    pos = rng.uniform(margin, spec.frame_size - margin, size=2)
    vel = rng.uniform(-spec.max_speed, spec.max_speed, size=2)
    return _Mover(pos=pos, vel=vel, size=size, texture=_texture(rng, contrast))


def _paste(frame: np.ndarray, mover: _Mover, kind: str, scale: float = 1.0) -> None:
    w, h = mover.size * scale
    x0 = int(round(mover.pos[0] - w / 2.0))
    y0 = int(round(mover.pos[1] - h / 2.0))
    wpx, hpx = max(2, int(round(w))), max(2, int(round(h)))
    x0 = max(0, min(frame.shape[1] - wpx, x0))
    y0 = max(0, min(frame.shape[0] - hpx, y0))
    tile = resize_bilinear(mover.texture, hpx, wpx)
    if kind == "disc":
        ys, xs = np.mgrid[0:hpx, 0:wpx]
        mask = (((xs - (wpx - 1) / 2) / (wpx / 2)) ** 2
                + ((ys - (hpx - 1) / 2) / (hpx / 2)) ** 2) <= 1.0
        region = frame[y0:y0 + hpx, x0:x0 + wpx]
        region[mask] = tile[mask]
    else:
        frame[y0:y0 + hpx, x0:x0 + wpx] = tile


def generate_sequence(spec: SequenceSpec) -> SyntheticSequence:
    """Render a sequence and its exact box track from the spec's seed."""
    if spec.max_size >= spec.frame_size - 4:
        raise ValueError("object does not fit inside the frame")
    rng = np.random.default_rng(spec.seed)
    blur_rng = np.random.default_rng((spec.seed, 9173))

    background = _smooth_background(rng, spec.frame_size)
    target = _spawn(rng, spec, contrast=2.0)
    distractors = [_spawn(rng, spec, contrast=1.2) for _ in range(spec.distractors)]
    phase = rng.uniform(0.0, 2 * np.pi)

    policy = BlurPolicy(lengths=spec.blur_lengths, apply_prob=spec.blur_prob)
    frames: list[np.ndarray] = []
    gt: list[BBox] = []
    schedule: list[BlurKernel | None] = []
    for t in range(spec.frames):
        frame = background.copy()
        if spec.pixel_noise > 0:
            frame = np.clip(frame + rng.normal(0.0, spec.pixel_noise, frame.shape), 0, 1)
        scale = 1.0 + spec.size_wobble * np.sin(phase + 2 * np.pi * t / max(spec.frames, 1))
        for mover in distractors:
            _paste(frame, mover, spec.object_kind)
        _paste(frame, target, spec.object_kind, scale=scale)
        gt.append(BBox(cx=float(target.pos[0]), cy=float(target.pos[1]),
                       w=float(target.size[0] * scale), h=float(target.size[1] * scale)))

        kernel = sample_blur(blur_rng, policy) if spec.blur_prob > 0 else None
        if kernel is not None and not kernel.is_identity:
            frame = apply_blur(frame, kernel)
            schedule.append(kernel)
        else:
            schedule.append(None)
        frames.append(frame.astype(np.float32))  # [0,1] data; full frames are bulky

        target.advance(spec.frame_size)
        for mover in distractors:
            mover.advance(spec.frame_size)

    return SyntheticSequence(frames=frames, gt_boxes=gt, blur_schedule=schedule,
                             spec=spec, seed=spec.seed)


def matched_pair(spec: SequenceSpec) -> tuple[SyntheticSequence, SyntheticSequence]:
    """(clean, blurred) twins: identical content, every frame blurred in one."""
    from dataclasses import replace
    clean = generate_sequence(replace(spec, blur_prob=0.0))
    blurred = generate_sequence(replace(spec, blur_prob=1.0))
    return clean, blurred
