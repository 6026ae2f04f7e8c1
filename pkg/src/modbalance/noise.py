"""Diagonal SGD-noise covariance estimation and the matching Gaussian noise term."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numkit import ContractError, sample_gaussian


@dataclass
class NoiseEstimate:
    """Per-entry variance of the mini-batch gradient, one array per tensor."""

    variance: dict[str, np.ndarray]
    m: int


def estimate_covariance_diag(per_sample_grads, mean_grad, m: int) -> NoiseEstimate:
    """Diagonal of ``(1/m) * (E[g g^T] - E[g] E[g]^T)`` using the batch as the population.

    ``per_sample_grads`` and ``mean_grad`` are dicts of arrays (or single
    arrays); each per-sample stack has the batch on axis 0.
    """
    single = not isinstance(per_sample_grads, dict)
    if single:
        per_sample_grads = {"_": per_sample_grads}
        mean_grad = {"_": mean_grad}
    if m < 2:
        raise ContractError("variance needs a batch of at least 2")
    out = {}
    for name, stack in per_sample_grads.items():
        stack = np.asarray(stack, dtype=np.float64)
        if stack.shape[0] == 0:
            raise ContractError(f"empty per-sample stack for {name}")
        mu = np.asarray(mean_grad[name], dtype=np.float64)
        if mu.shape != stack.shape[1:]:
            raise ContractError(f"mean gradient shape {mu.shape} does not match stack {stack.shape}")
        second = np.mean(stack * stack, axis=0)
        # cancellation can leave tiny negatives
        out[name] = np.maximum(second - mu * mu, 0.0) / m
    if single:
        return NoiseEstimate({"_": out["_"]}, m)
    return NoiseEstimate(out, m)


def sample_ge_noise(estimate: NoiseEstimate, rng: np.random.Generator, names=None) -> dict[str, np.ndarray]:
    """Fresh zero-mean normal noise with the estimated per-entry variance."""
    names = list(estimate.variance) if names is None else list(names)
    noise = {}
    for name in names:
        var = estimate.variance[name]
        noise[name] = sample_gaussian(var.shape, 0.0, np.sqrt(var), rng)
    return noise


def combined_update_variance(k: float, variance):
    """Predicted variance of ``k * xi + eps`` when both have variance ``variance``."""
    if not 0.0 < k <= 1.0:
        raise ContractError("k must lie in (0, 1]")
    return (k * k + 1.0) * np.asarray(variance, dtype=np.float64)


def noise_intensity(learning_rate: float, batch_size: int) -> float:
    if learning_rate <= 0 or batch_size <= 0:
        raise ContractError("learning rate and batch size must be positive")
    return learning_rate / batch_size
