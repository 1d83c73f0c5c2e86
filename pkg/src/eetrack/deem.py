"""Dynamic early exit: per-block exit scores and the cumulative-score rule.

Each examinable block l (those after the enforced prefix) owns a small
gate: a linear map over the first-channel slice of the previous block's
tokens, squashed by a sigmoid.  The forward pass stops at the first block
whose weighted cumulative score reaches ``1 - exit_slack``; if the sum
never gets there the full depth runs.  Gates receive gradient only through
the sparsity loss, which pulls the mean examined score toward the
configured target.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import numerics as nm
from .backbone import TokenSequence
from .config import TrackerConfig
from .numerics import ParamStore, Tensor, trunc_normal


@dataclass
class ExitTrace:
    """Outcome of the exit rule for one forward pass."""

    scores: list = field(default_factory=list)       # Tensor or float per examined layer
    cumulative: list[float] = field(default_factory=list)
    exit_layer: int = 0
    exited_early: bool = False
    first_examined: int = 0                          # enforced prefix + 1

    @property
    def score_values(self) -> list[float]:
        return [s.item() if isinstance(s, Tensor) else float(s) for s in self.scores]

    @property
    def examined(self) -> int:
        return len(self.scores)


def build_exit_params(store: ParamStore, cfg: TrackerConfig,
                      rng: np.random.Generator, dtype=np.float64) -> None:
    k = cfg.total_tokens
    if cfg.share_exit_params:
        store.add("exit.shared.w", trunc_normal(rng, (k, 1), dtype=dtype))
        store.add("exit.shared.b", np.zeros(1, dtype=dtype))
        return
    for layer in range(cfg.enforced_blocks + 1, cfg.blocks + 1):
        store.add(f"exit{layer:02d}.w", trunc_normal(rng, (k, 1), dtype=dtype))
        store.add(f"exit{layer:02d}.b", np.zeros(1, dtype=dtype))


def _gate_names(cfg: TrackerConfig, layer: int) -> tuple[str, str]:
    if cfg.share_exit_params:
        return "exit.shared.w", "exit.shared.b"
    return f"exit{layer:02d}.w", f"exit{layer:02d}.b"


def slice_vector(seq: TokenSequence) -> Tensor:
    """One scalar per token: the first embedding channel of each row."""
    return nm.reshape(seq.tokens[:, 0:1], (seq.total,))


def exit_score(slice_vec: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Sigmoid of the affine map of the token slice; scalar in [0, 1]."""
    k = slice_vec.shape[0]
    if weight.shape[0] != k:
        raise nm.ShapeError(f"gate expects length {weight.shape[0]}, got {k}")
    logit = nm.add(nm.matmul(nm.reshape(slice_vec, (1, k)), weight), bias)
    return nm.reshape(nm.sigmoid(logit), ())


def exit_score_for_layer(params: ParamStore, seq: TokenSequence, layer: int,
                         cfg: TrackerConfig) -> Tensor:
    """Exit score of ``layer`` from the tokens the previous block produced."""
    if seq.layer != layer - 1:
        raise ValueError(f"gate {layer} examines layer-{layer - 1} tokens, got {seq.layer}")
    w_name, b_name = _gate_names(cfg, layer)
    return exit_score(slice_vector(seq), params[w_name], params[b_name])


def exit_scores_many(params: ParamStore, tokens: Tensor, layer: int,
                     cfg: TrackerConfig, count: int | None = None) -> Tensor:
    """Gate scores for the first ``count`` rows of a (B, K, d) layer stack."""
    w_name, b_name = _gate_names(cfg, layer)
    rows = tokens.shape[0] if count is None else count
    slices = nm.reshape(tokens[:rows, :, 0:1], (rows, tokens.shape[1]))
    logits = nm.add(nm.matmul(slices, params[w_name]), params[b_name])
    return nm.reshape(nm.sigmoid(logits), (rows,))


def resolve_exit_batch(score_matrix: np.ndarray, cfg: TrackerConfig,
                       force_full: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized exit rule on an (examinable_layers, B) float score matrix.

    Returns (exit_layer, examined_count) per sample; matches resolve_exit
    on each column (cumulative sums run in the same order).
    """
    n_ex, batch = score_matrix.shape
    if n_ex != cfg.blocks - cfg.enforced_blocks:
        raise ValueError(f"expected {cfg.blocks - cfg.enforced_blocks} score rows, got {n_ex}")
    if force_full:
        full = np.full(batch, cfg.blocks, dtype=int)
        return full, np.full(batch, n_ex, dtype=int)
    cum = np.cumsum(cfg.exit_weight * score_matrix, axis=0)
    crossed = cum >= 1.0 - cfg.exit_slack
    any_cross = crossed.any(axis=0)
    first = np.argmax(crossed, axis=0)
    counts = np.where(any_cross, first + 1, n_ex)
    exit_layers = np.where(any_cross, cfg.enforced_blocks + first + 1, cfg.blocks)
    return exit_layers.astype(int), counts.astype(int)


def resolve_exit(score_fn: Callable[[int], "Tensor | float"], cfg: TrackerConfig,
                 force_full: bool = False) -> ExitTrace:
    """Apply the cumulative exit rule, evaluating scores lazily.

    ``score_fn(layer)`` yields the score of an examinable layer; layers past
    the resolved exit are never requested.  ``force_full`` keeps examining
    through the final block regardless of the threshold (training warm-up
    and exit-disabled runs).
    """
    first = cfg.enforced_blocks + 1
    threshold = 1.0 - cfg.exit_slack
    trace = ExitTrace(first_examined=first)
    cumulative = 0.0
    exit_layer = cfg.blocks
    for layer in range(first, cfg.blocks + 1):
        score = score_fn(layer)
        value = score.item() if isinstance(score, Tensor) else float(score)
        cumulative += cfg.exit_weight * value
        trace.scores.append(score)
        trace.cumulative.append(cumulative)
        if not force_full and cumulative >= threshold:
            exit_layer = layer
            break
    trace.exit_layer = exit_layer
    trace.exited_early = exit_layer < cfg.blocks
    return trace


def sparsity_loss(trace: ExitTrace, sparsity_target: float) -> Tensor:
    """Squared gap between the mean examined exit score and the target."""
    if not trace.scores:
        raise ValueError("sparsity_loss needs at least one examined layer")
    mean = nm.tmean(nm.stack_scalars(trace.scores))
    return nm.square(nm.sub(mean, sparsity_target))
