"""Single-stream ViT over the concatenated template/search token sequence.

Images are (H, W, C) float arrays in [0, 1].  Template patches come first
in the token order, then search patches, so either group can be retrieved
later purely by index.  Blocks are pre-norm (LN before attention and MLP)
with a GELU MLP; one learned positional table spans the whole sequence.

All internals run on (B, K, d) stacks; the single-pair entry points wrap a
batch of one.  Training batches several samples through the same code path
(per-sample exit resolution happens downstream).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import numerics as nm
from .config import TrackerConfig
from .numerics import ParamStore, Tensor, trunc_normal

CHANNELS = 3

# Test hook: counts every transformer-block evaluation in this process
# (one batched call over B samples counts once per sample).
_block_invocations = 0


def block_invocations() -> int:
    return _block_invocations


def reset_block_invocations() -> None:
    global _block_invocations
    _block_invocations = 0


@dataclass
class TokenSequence:
    """Token matrix for one template/search pair at one depth."""

    tokens: Tensor            # (K, d)
    template_count: int       # leading rows belonging to the template
    search_count: int
    layer: int                # 0 = straight out of the patch embedding

    @property
    def total(self) -> int:
        return self.template_count + self.search_count


def build_backbone_params(store: ParamStore, cfg: TrackerConfig,
                          rng: np.random.Generator, dtype=np.float64) -> None:
    d = cfg.embed_dim
    patch_len = cfg.patch * cfg.patch * CHANNELS
    store.add("embed.weight", trunc_normal(rng, (patch_len, d), dtype=dtype))
    store.add("embed.bias", np.zeros(d, dtype=dtype))
    store.add("embed.pos", trunc_normal(rng, (cfg.total_tokens, d), dtype=dtype))
    hidden = cfg.mlp_ratio * d
    for i in range(1, cfg.blocks + 1):
        p = f"block{i:02d}"
        store.add(f"{p}.ln1.gain", np.ones(d, dtype=dtype))
        store.add(f"{p}.ln1.bias", np.zeros(d, dtype=dtype))
        store.add(f"{p}.attn.qkv_w", trunc_normal(rng, (d, 3 * d), dtype=dtype))
        store.add(f"{p}.attn.qkv_b", np.zeros(3 * d, dtype=dtype))
        store.add(f"{p}.attn.out_w", trunc_normal(rng, (d, d), dtype=dtype))
        store.add(f"{p}.attn.out_b", np.zeros(d, dtype=dtype))
        store.add(f"{p}.ln2.gain", np.ones(d, dtype=dtype))
        store.add(f"{p}.ln2.bias", np.zeros(d, dtype=dtype))
        store.add(f"{p}.mlp.fc1_w", trunc_normal(rng, (d, hidden), dtype=dtype))
        store.add(f"{p}.mlp.fc1_b", np.zeros(hidden, dtype=dtype))
        store.add(f"{p}.mlp.fc2_w", trunc_normal(rng, (hidden, d), dtype=dtype))
        store.add(f"{p}.mlp.fc2_b", np.zeros(d, dtype=dtype))


def extract_patches(image: np.ndarray, patch: int) -> np.ndarray:
    """(H, W, C) -> (n_patches, patch*patch*C), row-major patch order."""
    h, w, c = image.shape
    if h % patch or w % patch:
        raise ValueError(f"image side {h}x{w} not divisible by patch {patch}")
    gh, gw = h // patch, w // patch
    tiles = image.reshape(gh, patch, gw, patch, c).transpose(0, 2, 1, 3, 4)
    return tiles.reshape(gh * gw, patch * patch * c)


def pair_patches(template: np.ndarray, search: np.ndarray,
                 cfg: TrackerConfig) -> np.ndarray:
    if template.shape[0] != cfg.template_side or search.shape[0] != cfg.search_side:
        raise ValueError("image sides do not match the configuration")
    return np.concatenate([extract_patches(template, cfg.patch),
                           extract_patches(search, cfg.patch)], axis=0)


def embed_tokens(params: ParamStore, patch_stack: np.ndarray,
                 add_positional: bool = True) -> Tensor:
    """(B, K, patch_len) patches -> (B, K, d) tokens."""
    dtype = params["embed.weight"].dtype
    tokens = nm.add(nm.matmul(Tensor(patch_stack.astype(dtype, copy=False)),
                              params["embed.weight"]),
                    params["embed.bias"])
    if add_positional:
        tokens = nm.add(tokens, params["embed.pos"])
    return tokens


def patch_embed(params: ParamStore, template: np.ndarray, search: np.ndarray,
                cfg: TrackerConfig, add_positional: bool = True) -> TokenSequence:
    """Project flattened patches of one pair; template tokens lead."""
    stacked = embed_tokens(params, pair_patches(template, search, cfg)[None],
                           add_positional=add_positional)
    return TokenSequence(tokens=nm.reshape(stacked, stacked.shape[1:]),
                         template_count=cfg.template_tokens,
                         search_count=cfg.search_tokens, layer=0)


def _attention(params: ParamStore, prefix: str, x: Tensor, cfg: TrackerConfig) -> Tensor:
    b, k_total, d = x.shape
    h, dh = cfg.heads, cfg.head_dim
    qkv = nm.add(nm.matmul(x, params[f"{prefix}.qkv_w"]), params[f"{prefix}.qkv_b"])
    qkv = nm.transpose(nm.reshape(qkv, (b, k_total, 3, h, dh)), (2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]                       # (B, h, K, dh)
    scores = nm.mul(nm.matmul(q, nm.transpose(k, (0, 1, 3, 2))), float(1.0 / np.sqrt(dh)))
    attn = nm.softmax(scores, axis=-1)
    mixed = nm.reshape(nm.transpose(nm.matmul(attn, v), (0, 2, 1, 3)), (b, k_total, d))
    return nm.add(nm.matmul(mixed, params[f"{prefix}.out_w"]), params[f"{prefix}.out_b"])


def block_tokens(params: ParamStore, x: Tensor, layer: int,
                 cfg: TrackerConfig) -> Tensor:
    """One pre-norm block on a (B, K, d) stack: x + MHA(LN(x)), + MLP(LN(x))."""
    global _block_invocations
    _block_invocations += x.shape[0]
    p = f"block{layer:02d}"
    x = nm.add(x, _attention(params, f"{p}.attn",
                             nm.layernorm(x, params[f"{p}.ln1.gain"], params[f"{p}.ln1.bias"]),
                             cfg))
    normed = nm.layernorm(x, params[f"{p}.ln2.gain"], params[f"{p}.ln2.bias"])
    hidden = nm.gelu(nm.add(nm.matmul(normed, params[f"{p}.mlp.fc1_w"]),
                            params[f"{p}.mlp.fc1_b"]))
    mlp = nm.add(nm.matmul(hidden, params[f"{p}.mlp.fc2_w"]), params[f"{p}.mlp.fc2_b"])
    return nm.add(x, mlp)


def block_forward(params: ParamStore, seq: TokenSequence, layer: int,
                  cfg: TrackerConfig) -> TokenSequence:
    """Single-pair block step; checks the layer bookkeeping."""
    if seq.layer != layer - 1:
        raise ValueError(f"block {layer} fed tokens from layer {seq.layer}")
    stacked = nm.reshape(seq.tokens, (1,) + seq.tokens.shape)
    out = block_tokens(params, stacked, layer, cfg)
    return replace(seq, tokens=nm.reshape(out, out.shape[1:]), layer=layer)


def full_forward(params: ParamStore, template: np.ndarray, search: np.ndarray,
                 cfg: TrackerConfig) -> list[TokenSequence]:
    """Run every block on one pair; returns layers 0..blocks inclusive."""
    seq = patch_embed(params, template, search, cfg)
    layers = [seq]
    for layer in range(1, cfg.blocks + 1):
        seq = block_forward(params, seq, layer, cfg)
        layers.append(seq)
    return layers


def full_forward_many(params: ParamStore, templates: list[np.ndarray],
                      searches: list[np.ndarray], cfg: TrackerConfig) -> list[Tensor]:
    """Batched full-depth forward; returns (B, K, d) tokens per layer."""
    stacked = np.stack([pair_patches(t, s, cfg) for t, s in zip(templates, searches)])
    tokens = embed_tokens(params, stacked)
    layers = [tokens]
    for layer in range(1, cfg.blocks + 1):
        tokens = block_tokens(params, tokens, layer, cfg)
        layers.append(tokens)
    return layers


def template_slice(seq: TokenSequence) -> Tensor:
    """The rows belonging to the template, by token index."""
    return seq.tokens[: seq.template_count]


def search_slice(seq: TokenSequence) -> Tensor:
    return seq.tokens[seq.template_count:]
