"""Analytic multiply-accumulate model of one inference forward pass.

Counts exactly what the instrumented matmul counter sees: patch embedding,
the executed transformer blocks, the examined exit gates, and the head
convolutions.  Pointwise work (norms, activations, residuals) is excluded
on both sides, so the analytic and measured numbers agree tightly.
"""

from __future__ import annotations

from ..config import TrackerConfig
from ..head import _BRANCHES, _branch_channels

CHANNELS = 3


def embed_macs(cfg: TrackerConfig) -> int:
    patch_len = cfg.patch * cfg.patch * CHANNELS
    return cfg.total_tokens * patch_len * cfg.embed_dim


def block_macs(cfg: TrackerConfig) -> int:
    k, d = cfg.total_tokens, cfg.embed_dim
    qkv = k * d * 3 * d
    attn = 2 * k * k * d          # scores and the value mix
    proj = k * d * d
    mlp = 2 * k * d * cfg.mlp_ratio * d
    return qkv + attn + proj + mlp


def gate_macs(cfg: TrackerConfig) -> int:
    return cfg.total_tokens


def head_macs(cfg: TrackerConfig) -> int:
    cells = cfg.grid * cfg.grid
    total = 0
    for _, out in _BRANCHES:
        for cin, cout in _branch_channels(cfg.embed_dim, cfg.head_layers, out):
            total += cells * cin * cout * 9
    return total


def flops_estimate(cfg: TrackerConfig, exit_layer: int,
                   examined_gates: int | None = None) -> float:
    """MACs of a forward pass that exits after ``exit_layer`` blocks.

    ``examined_gates`` defaults to the exit rule's count
    (exit_layer - enforced_blocks); pass 0 for a run with the gates off.
    """
    if not cfg.enforced_blocks < exit_layer <= cfg.blocks:
        raise ValueError(
            f"exit layer {exit_layer} outside ({cfg.enforced_blocks}, {cfg.blocks}]")
    if examined_gates is None:
        examined_gates = exit_layer - cfg.enforced_blocks
    return float(embed_macs(cfg) + exit_layer * block_macs(cfg)
                 + examined_gates * gate_macs(cfg) + head_macs(cfg))
