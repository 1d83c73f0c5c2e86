"""Fully-convolutional prediction head and bounding-box decoding.

Search tokens are reinterpreted as a (d, G, G) spatial map and passed
through three branches (classification, offset, size), each a stack of
conv / per-channel-norm / ReLU layers ending in a sigmoid so every map
lives in [0, 1].  The box decodes from the classification argmax: center
``(cell + offset) / G`` in normalized search coordinates, extent read from
the size map at the same cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .config import TrackerConfig
from .numerics import ParamStore, Tensor, trunc_normal

_BRANCHES = (("cls", 1), ("off", 2), ("size", 2))
_NORM_EPS = 1e-5


@dataclass
class BBox:
    """Center-format box; normalized [0,1] at the head, pixels elsewhere."""

    cx: float
    cy: float
    w: float
    h: float

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h])

    def corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2,
                self.cx + self.w / 2, self.cy + self.h / 2)


@dataclass
class HeadOutput:
    score: Tensor    # (G, G) classification map in [0, 1]
    offset: Tensor   # (2, G, G): x then y, sub-cell in [0, 1]
    size: Tensor     # (2, G, G): w then h, normalized in [0, 1]

    @property
    def grid(self) -> int:
        return self.score.shape[-1]


def _branch_channels(d: int, layers: int, out: int) -> list[tuple[int, int]]:
    dims = [max(out, d // (2 ** i)) for i in range(layers)] + [out]
    dims[0] = d
    return list(zip(dims[:-1], dims[1:]))


def build_head_params(store: ParamStore, cfg: TrackerConfig,
                      rng: np.random.Generator, dtype=np.float64) -> None:
    d = cfg.embed_dim
    for branch, out in _BRANCHES:
        pairs = _branch_channels(d, cfg.head_layers, out)
        for i, (cin, cout) in enumerate(pairs):
            p = f"head.{branch}.conv{i}"
            store.add(f"{p}.w", trunc_normal(rng, (cout, cin, 3, 3), dtype=dtype))
            store.add(f"{p}.b", np.zeros(cout, dtype=dtype))
            if i < len(pairs) - 1:  # final conv feeds the sigmoid directly
                store.add(f"{p}.norm_gain", np.ones(cout, dtype=dtype))
                store.add(f"{p}.norm_bias", np.zeros(cout, dtype=dtype))


def _spatial_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Per-channel standardization over the spatial map of each sample."""
    centered = nm.sub(x, nm.tmean(x, axis=(-2, -1), keepdims=True))
    var = nm.tmean(nm.square(centered), axis=(-2, -1), keepdims=True)
    inv = nm.div(1.0, nm.sqrt(nm.add(var, _NORM_EPS)))
    return nm.add(nm.mul(nm.mul(centered, inv), nm.reshape(gain, (-1, 1, 1))),
                  nm.reshape(bias, (-1, 1, 1)))


def _branch_forward(params: ParamStore, branch: str, fmap: Tensor,
                    cfg: TrackerConfig, out: int) -> Tensor:
    x = fmap
    pairs = _branch_channels(cfg.embed_dim, cfg.head_layers, out)
    for i in range(len(pairs)):
        p = f"head.{branch}.conv{i}"
        x = nm.conv2d(x, params[f"{p}.w"], params[f"{p}.b"], padding=1)
        if i < len(pairs) - 1:
            x = nm.relu(_spatial_norm(x, params[f"{p}.norm_gain"], params[f"{p}.norm_bias"]))
    return nm.sigmoid(x)


@dataclass
class HeadBatch:
    score: Tensor    # (B, G, G)
    offset: Tensor   # (B, 2, G, G)
    size: Tensor     # (B, 2, G, G)

    @property
    def grid(self) -> int:
        return self.score.shape[-1]


def head_forward_many(params: ParamStore, search_tokens: Tensor,
                      cfg: TrackerConfig) -> HeadBatch:
    """Branch maps for a (B, K_x, d) token stack."""
    b, k_x, d = search_tokens.shape
    grid = int(round(np.sqrt(k_x)))
    if grid * grid != k_x:
        raise nm.ShapeError(f"search token count {k_x} is not a perfect square")
    fmap = nm.transpose(nm.reshape(search_tokens, (b, grid, grid, d)), (0, 3, 1, 2))
    cls = _branch_forward(params, "cls", fmap, cfg, 1)
    return HeadBatch(
        score=nm.reshape(cls, (b, grid, grid)),
        offset=_branch_forward(params, "off", fmap, cfg, 2),
        size=_branch_forward(params, "size", fmap, cfg, 2),
    )


def head_forward(params: ParamStore, search_tokens: Tensor, cfg: TrackerConfig) -> HeadOutput:
    """Branch maps from one pair's search tokens."""
    batch = head_forward_many(params, nm.reshape(search_tokens,
                                                 (1,) + search_tokens.shape), cfg)
    grid = batch.grid
    return HeadOutput(
        score=nm.reshape(batch.score, (grid, grid)),
        offset=nm.reshape(batch.offset, (2, grid, grid)),
        size=nm.reshape(batch.size, (2, grid, grid)),
    )


def _argmax_cell(score_map: np.ndarray) -> tuple[int, int]:
    # row-major argmax; ties resolve to the lowest flat index
    flat = int(np.argmax(score_map))
    return flat // score_map.shape[1], flat % score_map.shape[1]


def _box_at(out: HeadOutput, row: int, col: int) -> BBox:
    g = out.grid
    off = out.offset.data
    size = out.size.data
    return BBox(cx=(col + off[0, row, col]) / g, cy=(row + off[1, row, col]) / g,
                w=float(size[0, row, col]), h=float(size[1, row, col]))


def decode_box(out: HeadOutput) -> tuple[BBox, float]:
    """Box at the raw classification peak, plus the peak score."""
    row, col = _argmax_cell(out.score.data)
    return _box_at(out, row, col), float(out.score.data[row, col])


def decode_box_windowed(out: HeadOutput, window: np.ndarray) -> tuple[BBox, float]:
    """Box at the argmax of score*window; offset/size still read raw."""
    if window.shape != out.score.shape:
        raise nm.ShapeError(f"window shape {window.shape} != map shape {out.score.shape}")
    row, col = _argmax_cell(out.score.data * window)
    return _box_at(out, row, col), float(out.score.data[row, col])


def hanning_window(grid: int) -> np.ndarray:
    """Center-weighted multiplicative penalty for the score map."""
    w = np.hanning(grid)
    return np.outer(w, w)


def box_tensor_at_cell(out: HeadOutput, row: int, col: int) -> Tensor:
    """Differentiable (cx, cy, w, h) read at a fixed cell (training path)."""
    g = out.grid
    cx = nm.div(nm.add(out.offset[0, row, col], float(col)), float(g))
    cy = nm.div(nm.add(out.offset[1, row, col], float(row)), float(g))
    return nm.stack_scalars([cx, cy, out.size[0, row, col], out.size[1, row, col]])


def box_tensors_at_cells(out: HeadBatch, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Differentiable (B, 4) box reads at one cell per sample."""
    g = out.grid
    idx = np.arange(len(rows))
    off_x = out.offset[idx, 0, rows, cols]
    off_y = out.offset[idx, 1, rows, cols]
    cx = nm.div(nm.add(off_x, cols.astype(off_x.dtype)), float(g))
    cy = nm.div(nm.add(off_y, rows.astype(off_y.dtype)), float(g))
    parts = [cx, cy, out.size[idx, 0, rows, cols], out.size[idx, 1, rows, cols]]
    return nm.concat([nm.reshape(p, (-1, 1)) for p in parts], axis=1)
