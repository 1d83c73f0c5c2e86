"""Sequence directory I/O: numbered image files plus groundtruth.txt.

The ground-truth file carries one ``x,y,w,h`` line per frame in top-left
pixel format (the usual tracking-benchmark convention); boxes convert to
center format on load.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..head import BBox
from .synth import SyntheticSequence

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass
class LoadedSequence:
    frames: list[np.ndarray]
    gt_boxes: list[BBox]
    path: Path | None = None

    def __len__(self) -> int:
        return len(self.frames)


class SequenceFormatError(ValueError):
    pass


def save_sequence(seq: SyntheticSequence, out_dir) -> Path:
    """Write frames as PNG plus groundtruth.txt; returns the directory."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq.frames):
        arr = np.clip(np.round(frame * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(arr).save(out_dir / f"{i + 1:04d}.png")
    with open(out_dir / "groundtruth.txt", "w") as fh:
        for box in seq.gt_boxes:
            x = box.cx - box.w / 2.0
            y = box.cy - box.h / 2.0
            fh.write(f"{x:.3f},{y:.3f},{box.w:.3f},{box.h:.3f}\n")
    return out_dir


def _parse_gt_line(line: str, lineno: int) -> BBox:
    parts = line.replace("\t", ",").split(",")
    if len(parts) != 4:
        raise SequenceFormatError(
            f"groundtruth.txt line {lineno}: expected 'x,y,w,h', got {line!r}")
    try:
        x, y, w, h = (float(p) for p in parts)
    except ValueError as exc:
        raise SequenceFormatError(
            f"groundtruth.txt line {lineno}: non-numeric field in {line!r}") from exc
    return BBox(cx=x + w / 2.0, cy=y + h / 2.0, w=w, h=h)


def load_sequence_dir(path) -> LoadedSequence:
    """Frames + boxes from a directory; errors name the offending line."""
    path = Path(path)
    frame_files = sorted(
        (p for p in path.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES),
        key=lambda p: (len(p.stem), p.stem))
    if not frame_files:
        raise SequenceFormatError(f"{path}: no image files found")
    gt_path = path / "groundtruth.txt"
    if not gt_path.exists():
        raise SequenceFormatError(f"{path}: missing groundtruth.txt")

    lines = [ln for ln in gt_path.read_text().splitlines() if ln.strip()]
    boxes = [_parse_gt_line(ln, i + 1) for i, ln in enumerate(lines)]
    if len(boxes) < len(frame_files):
        raise SequenceFormatError(
            f"groundtruth.txt line {len(boxes) + 1}: missing entry "
            f"({len(frame_files)} frames, {len(boxes)} boxes)")

    frames = [np.asarray(Image.open(p).convert("RGB"), dtype=np.float64) / 255.0
              for p in frame_files]
    return LoadedSequence(frames=frames, gt_boxes=boxes[: len(frames)], path=path)


def save_boxes(boxes: list[BBox], path, *, center_format: bool = True) -> None:
    """One 'frame_idx,cx,cy,w,h' line per frame, frame pixels."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for i, box in enumerate(boxes):
            if center_format:
                fh.write(f"{i},{box.cx:.4f},{box.cy:.4f},{box.w:.4f},{box.h:.4f}\n")
            else:
                fh.write(f"{i},{box.cx - box.w / 2:.4f},{box.cy - box.h / 2:.4f},"
                         f"{box.w:.4f},{box.h:.4f}\n")


def load_boxes(path) -> list[BBox]:
    """Read boxes written by save_boxes (center format with frame index)."""
    boxes = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise SequenceFormatError(
                f"{path} line {lineno}: expected 'frame,cx,cy,w,h', got {line!r}")
        _, cx, cy, w, h = (float(p) for p in parts)
        boxes.append(BBox(cx=cx, cy=cy, w=w, h=h))
    return boxes
