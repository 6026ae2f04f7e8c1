"""Small numeric kernels shared by the rest of the package.

Everything is float64. Random numbers come from named, independent streams so
that turning one consumer on or off never shifts the numbers another sees.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

STREAMS = ("data", "init", "noise", "dropout", "probe")


class ContractError(ValueError):
    """Raised when an input violates a documented precondition."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def gemm(a, b) -> np.ndarray:
    """Matrix product with an explicit shape check."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ContractError(f"gemm dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def softmax(logits, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(logits, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def sample_gaussian(shape, mean: float, std_per_entry, rng: np.random.Generator) -> np.ndarray:
    """Draw independent normals with a per-entry standard deviation.

    ``std_per_entry`` must have exactly ``prod(shape)`` entries (or the given
    shape). A zero std yields exactly ``mean`` without consuming extra draws
    beyond the fixed ``prod(shape)`` normals.
    """
    shape = (int(shape),) if np.isscalar(shape) else tuple(int(n) for n in shape)
    std = np.asarray(std_per_entry, dtype=np.float64)
    if std.size != int(np.prod(shape)):
        raise ContractError(f"std has {std.size} entries, shape {shape} needs {int(np.prod(shape))}")
    std = std.reshape(shape)
    if np.any(std < 0) or not np.all(np.isfinite(std)):
        raise ContractError("std_per_entry must be finite and non-negative")
    return mean + std * rng.standard_normal(shape)


def make_streams(seed: int, names: Sequence[str] = STREAMS) -> dict[str, np.random.Generator]:
    """One generator per consumer, derived from a single seed.

    Each stream is keyed by its position in ``STREAMS`` so new consumers can be
    appended without changing existing ones.
    """
    if seed < 0 or seed >= 2**64:
        raise ContractError("seed must be a 64-bit unsigned integer")
    out = {}
    for name in names:
        if name not in STREAMS:
            raise ContractError(f"unknown stream {name!r}")
        key = STREAMS.index(name)
        out[name] = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(key,))))
    return out


def check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {name}")
