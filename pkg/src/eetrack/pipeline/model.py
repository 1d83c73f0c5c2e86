"""Parameter initialization and the two forward modes of the tracker.

Training runs the full depth, records every examinable exit score, and
resolves the exit layer afterwards so the head can consume the resolved
layer's tokens while gradients still reach the gates through the sparsity
loss.  Inference interleaves gates with blocks and genuinely stops: blocks
past the resolved exit layer are never evaluated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import backbone, deem, head
from ..backbone import TokenSequence
from ..config import TrackerConfig
from ..deem import ExitTrace
from ..numerics import DEFAULT_DTYPE, ParamStore


def init_tracker_params(cfg: TrackerConfig, seed: int,
                        dtype=DEFAULT_DTYPE) -> ParamStore:
    rng = np.random.default_rng(seed)
    store = ParamStore(rng_seed=seed)
    backbone.build_backbone_params(store, cfg, rng, dtype=dtype)
    deem.build_exit_params(store, cfg, rng, dtype=dtype)
    head.build_head_params(store, cfg, rng, dtype=dtype)
    return store


@dataclass
class TrainingForward:
    layers: list[TokenSequence]   # 0..blocks inclusive
    trace: ExitTrace


def forward_training(params: ParamStore, template: np.ndarray, search: np.ndarray,
                     cfg: TrackerConfig, force_full: bool = False) -> TrainingForward:
    """Full-depth forward with lazily resolved exit over recorded layers."""
    layers = backbone.full_forward(params, template, search, cfg)
    trace = deem.resolve_exit(
        lambda layer: deem.exit_score_for_layer(params, layers[layer - 1], layer, cfg),
        cfg, force_full=force_full)
    return TrainingForward(layers=layers, trace=trace)


def forward_inference(params: ParamStore, template: np.ndarray, search: np.ndarray,
                      cfg: TrackerConfig, use_exit: bool = True
                      ) -> tuple[TokenSequence, ExitTrace]:
    """Early-exit forward: examine each gate, run its block, stop on the
    threshold crossing.  With ``use_exit`` off, runs the full depth and
    evaluates no gates."""
    seq = backbone.patch_embed(params, template, search, cfg)
    for layer in range(1, cfg.enforced_blocks + 1):
        seq = backbone.block_forward(params, seq, layer, cfg)

    if not use_exit:
        for layer in range(cfg.enforced_blocks + 1, cfg.blocks + 1):
            seq = backbone.block_forward(params, seq, layer, cfg)
        trace = ExitTrace(exit_layer=cfg.blocks, exited_early=False,
                          first_examined=cfg.enforced_blocks + 1)
        return seq, trace

    threshold = 1.0 - cfg.exit_slack
    trace = ExitTrace(first_examined=cfg.enforced_blocks + 1)
    cumulative = 0.0
    for layer in range(cfg.enforced_blocks + 1, cfg.blocks + 1):
        score = deem.exit_score_for_layer(params, seq, layer, cfg).item()
        cumulative += cfg.exit_weight * score
        trace.scores.append(score)
        trace.cumulative.append(cumulative)
        seq = backbone.block_forward(params, seq, layer, cfg)
        if cumulative >= threshold:
            break
    trace.exit_layer = seq.layer
    trace.exited_early = seq.layer < cfg.blocks
    return seq, trace
