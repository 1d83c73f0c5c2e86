"""Configuration dataclasses and the flat key=value config file format.

One file carries the model geometry, the exit-rule constants, the loss
weights, and the training hyperparameters.  Unknown keys are rejected so
typos fail loudly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class TrackerConfig:
    """Backbone geometry plus the early-exit rule constants."""

    blocks: int = 8                 # transformer depth
    embed_dim: int = 64
    heads: int = 4
    patch: int = 8                  # patch side in pixels
    template_side: int = 32
    search_side: int = 64
    enforced_blocks: int = 3        # always executed, never examined for exit
    exit_weight: float = 1.0        # weight on each exit score in the cumulative sum
    exit_slack: float = 0.01        # exit once the cumulative score reaches 1 - slack
    sparsity_target: float = 0.5    # target mean exit score over examined blocks
    share_exit_params: bool = False
    mlp_ratio: int = 4
    head_layers: int = 4            # conv layers per prediction branch

    def __post_init__(self):
        if self.template_side % self.patch or self.search_side % self.patch:
            raise ValueError("template/search sides must be multiples of the patch size")
        if self.embed_dim % self.heads:
            raise ValueError("embed_dim must be a multiple of heads")
        if not 0 < self.enforced_blocks < self.blocks:
            raise ValueError("enforced_blocks must satisfy 0 < enforced < blocks")
        if not 0 < self.exit_slack < 1:
            raise ValueError("exit_slack must lie in (0, 1)")
        if self.exit_weight <= 0:
            raise ValueError("exit_weight must be positive")
        if not 0 < self.sparsity_target <= 1:
            raise ValueError("sparsity_target must lie in (0, 1]")

    @property
    def template_tokens(self) -> int:
        return (self.template_side // self.patch) ** 2

    @property
    def search_tokens(self) -> int:
        return (self.search_side // self.patch) ** 2

    @property
    def total_tokens(self) -> int:
        return self.template_tokens + self.search_tokens

    @property
    def grid(self) -> int:
        return self.search_side // self.patch

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads


@dataclass
class LossWeights:
    """Coefficients of the combined objective."""

    iou_weight: float = 2.0
    l1_weight: float = 5.0
    blur_weight: float = 1e-4
    sparsity_weight: float = 1e3

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be nonnegative")


@dataclass
class TrainConfig:
    """Optimizer, schedule, and augmentation settings for one run."""

    steps: int = 300
    batch_size: int = 4
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    warmup_full_depth_steps: int = 200  # force full depth early so deep blocks train
    blur_lengths: tuple[int, ...] = (3, 5, 7)
    blur_prob: float = 1.0
    use_exit: bool = True               # early-exit module active (train + inference)
    seed: int = 0
    log_every: int = 10
    dtype: str = "float64"


@dataclass
class RunConfig:
    model: TrackerConfig = field(default_factory=TrackerConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)


_SECTIONS = {"model": TrackerConfig, "weights": LossWeights, "train": TrainConfig}


def _coerce(raw: str, target_type):
    if target_type is bool:
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    if target_type is str:
        return raw.strip()
    # tuple[int, ...] style fields
    return tuple(int(p) for p in raw.replace(",", " ").split())


def parse_kv_text(text: str) -> dict[str, str]:
    """Parse flat ``key = value`` lines; '#' starts a comment."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = stripped.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def run_config_from_mapping(mapping: dict[str, str]) -> RunConfig:
    """Build a RunConfig from flat keys, e.g. ``model.blocks`` or ``blocks``.

    Unprefixed keys are resolved against whichever section defines them;
    ambiguous or unknown keys raise.
    """
    by_section: dict[str, dict] = {name: {} for name in _SECTIONS}
    field_owner: dict[str, list[str]] = {}
    for section, cls in _SECTIONS.items():
        for f in dataclasses.fields(cls):
            field_owner.setdefault(f.name, []).append(section)

    for key, raw in mapping.items():
        if "." in key:
            section, name = key.split(".", 1)
            if section not in _SECTIONS:
                raise ValueError(f"unknown config section {section!r}")
        else:
            owners = field_owner.get(key, [])
            if not owners:
                raise ValueError(f"unknown config key {key!r}")
            if len(owners) > 1:
                raise ValueError(f"ambiguous config key {key!r}; prefix with section")
            section, name = owners[0], key
        cls = _SECTIONS[section]
        target = {f.name: f for f in dataclasses.fields(cls)}.get(name)
        if target is None:
            raise ValueError(f"unknown config key {section}.{name}")
        target_type = {"int": int, "float": float, "bool": bool, "str": str}.get(
            target.type if isinstance(target.type, str) else target.type.__name__, None)
        if target_type is None and "tuple" in str(target.type):
            target_type = tuple
        by_section[section][name] = _coerce(raw, target_type or str)

    return RunConfig(model=TrackerConfig(**by_section["model"]),
                     weights=LossWeights(**by_section["weights"]),
                     train=TrainConfig(**by_section["train"]))


def load_run_config(path) -> RunConfig:
    return run_config_from_mapping(parse_kv_text(Path(path).read_text()))


def run_config_to_text(cfg: RunConfig) -> str:
    lines = []
    for section, obj in (("model", cfg.model), ("weights", cfg.weights), ("train", cfg.train)):
        lines.append(f"# [{section}]")
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{section}.{f.name} = {value}")
        lines.append("")
    return "\n".join(lines)


def save_run_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(run_config_to_text(cfg))
