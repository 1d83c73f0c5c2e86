"""Named parameter store and its binary checkpoint format.

Checkpoint layout (all integers little-endian):

    magic   4 bytes  b"BDTK"
    version u32      currently 1
    count   u32      number of parameters
    then per parameter, in sorted-name order:
        name_len u32
        name     UTF-8 bytes
        rank     u32
        extents  rank * u64
        payload  little-endian float32, row-major

Parameters are stored as float32 regardless of the in-memory compute
dtype; loading casts back to the requested dtype.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .tensor import DEFAULT_DTYPE, Tensor

MAGIC = b"BDTK"
VERSION = 1


class CheckpointError(ValueError):
    """Raised on malformed checkpoint files."""


class ParamStore:
    """Mapping from unique dotted names to trainable tensors.

    Iteration is always sorted by name, so optimizer sweeps and
    serialization are deterministic.
    """

    def __init__(self, rng_seed: int = 0):
        self.rng_seed = int(rng_seed)
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(data), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self) -> list[tuple[str, Tensor]]:
        return [(n, self._params[n]) for n in self.names()]

    def zero_grad(self) -> None:
        for _, t in self.items():
            t.grad = None

    def n_values(self) -> int:
        return sum(t.size for t in self._params.values())


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02,
                 dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Normal(0, std) clipped to two standard deviations."""
    return np.clip(rng.normal(0.0, std, size=shape), -2.0 * std, 2.0 * std).astype(dtype)


def save_params(store: ParamStore, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        items = store.items()
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(items)))
        for name, tensor in items:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", tensor.ndim))
            for extent in tensor.shape:
                fh.write(struct.pack("<Q", extent))
            fh.write(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())


def load_params(path, dtype=DEFAULT_DTYPE) -> ParamStore:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    store = ParamStore()
    offset = 12
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        name = raw[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        extents = struct.unpack_from(f"<{rank}Q", raw, offset)
        offset += 8 * rank
        n = int(np.prod(extents)) if rank else 1
        payload = np.frombuffer(raw, dtype="<f4", count=n, offset=offset)
        offset += 4 * n
        store.add(name, payload.reshape(extents).astype(dtype))
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return store
