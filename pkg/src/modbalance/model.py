"""Two-encoder multimodal classifier with a blocked linear head.

Logits are ``W_a f_a + W_v f_v + b`` where ``f_u`` is the output of a rectifier
MLP for modality ``u``. Gradients are derived by hand; per-sample gradients
come from the same cached activations as the batch gradient.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .numkit import ContractError, gemm, log_softmax, softmax

MODALITIES = ("a", "v")
FUSION_MODES = ("concatenation", "summation")


@dataclass
class Encoder:
    """Rectifier MLP. ``weights[i]`` has shape ``(d_out, d_in)``; the last layer is linear."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ContractError("encoder needs matching, non-empty weight and bias lists")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ContractError(f"layer {i}: weight {w.shape} does not match bias {b.shape}")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ContractError(f"layer {i} input {w.shape[1]} != previous output {self.weights[i - 1].shape[0]}")

    @property
    def d_in(self) -> int:
        return self.weights[0].shape[1]

    @property
    def d_out(self) -> int:
        return self.weights[-1].shape[0]


@dataclass
class FusionHead:
    mode: str
    w_a: np.ndarray
    w_v: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.mode not in FUSION_MODES:
            raise ContractError(f"unknown fusion mode {self.mode!r}")
        m = self.bias.shape[0]
        if m < 2 or self.w_a.shape[0] != m or self.w_v.shape[0] != m:
            raise ContractError("head blocks must share the class dimension M >= 2")
        if self.mode == "summation" and self.w_a.shape[1] != self.w_v.shape[1]:
            raise ContractError("summation fusion needs equal feature dims")

    @property
    def n_classes(self) -> int:
        return self.bias.shape[0]

    def block(self, modality: str) -> np.ndarray:
        if modality == "a":
            return self.w_a
        if modality == "v":
            return self.w_v
        raise ContractError(f"unknown modality {modality!r}")


@dataclass
class ModelParams:
    encoder_a: Encoder
    encoder_v: Encoder
    head: FusionHead

    def __post_init__(self):
        if self.encoder_a.d_out != self.head.w_a.shape[1] or self.encoder_v.d_out != self.head.w_v.shape[1]:
            raise ContractError("encoder output dims must match head blocks")

    def encoder(self, modality: str) -> Encoder:
        return {"a": self.encoder_a, "v": self.encoder_v}[modality]

    def tensors(self) -> dict[str, np.ndarray]:
        """Name -> array, in a fixed order. Arrays are the live parameters, not copies."""
        out: dict[str, np.ndarray] = {}
        for u in MODALITIES:
            enc = self.encoder(u)
            for i, (w, b) in enumerate(zip(enc.weights, enc.biases)):
                out[f"{u}.enc{i}.w"] = w
                out[f"{u}.enc{i}.b"] = b
        out["a.head"] = self.head.w_a
        out["v.head"] = self.head.w_v
        out["bias"] = self.head.bias
        return out

    def copy(self) -> "ModelParams":
        def cp(enc: Encoder) -> Encoder:
            return Encoder([w.copy() for w in enc.weights], [b.copy() for b in enc.biases])

        h = self.head
        return ModelParams(cp(self.encoder_a), cp(self.encoder_v),
                           FusionHead(h.mode, h.w_a.copy(), h.w_v.copy(), h.bias.copy()))

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name, arr in self.tensors().items():
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(arr).tobytes())
        return digest.hexdigest()


def tensor_modality(name: str) -> str:
    """'a', 'v' or 'shared' for a name produced by ``ModelParams.tensors``."""
    head = name.split(".", 1)[0]
    return head if head in MODALITIES else "shared"


def is_head_tensor(name: str) -> bool:
    return name.endswith(".head")


def init_encoder(dims, rng: np.random.Generator) -> Encoder:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    dims = list(dims)
    if len(dims) < 2:
        raise ContractError("encoder dims need at least input and output sizes")
    weights, biases = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(d_in)
        weights.append(rng.uniform(-bound, bound, size=(d_out, d_in)))
        biases.append(rng.uniform(-bound, bound, size=d_out))
    return Encoder(weights, biases)


def init_params(dims_a, dims_v, n_classes: int, mode: str, rng: np.random.Generator) -> ModelParams:
    enc_a = init_encoder(dims_a, rng)
    enc_v = init_encoder(dims_v, rng)
    d_feat = enc_a.d_out + enc_v.d_out
    bound = 1.0 / np.sqrt(d_feat)
    w_a = rng.uniform(-bound, bound, size=(n_classes, enc_a.d_out))
    w_v = rng.uniform(-bound, bound, size=(n_classes, enc_v.d_out))
    bias = rng.uniform(-bound, bound, size=n_classes)
    return ModelParams(enc_a, enc_v, FusionHead(mode, w_a, w_v, bias))


@dataclass
class EncoderCache:
    inputs: list[np.ndarray]
    pre: list[np.ndarray]


def encoder_forward(enc: Encoder, x) -> tuple[np.ndarray, EncoderCache]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != enc.d_in:
        raise ContractError(f"encoder expects (batch, {enc.d_in}) input, got {x.shape}")
    inputs, pre = [], []
    h = x
    last = len(enc.weights) - 1
    for i, (w, b) in enumerate(zip(enc.weights, enc.biases)):
        inputs.append(h)
        z = gemm(h, w.T) + b
        pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
    return h, EncoderCache(inputs, pre)


def encoder_backward(enc: Encoder, cache: EncoderCache, d_out: np.ndarray, per_sample: bool = False):
    """Backprop per-sample output gradients through the encoder.

    Returns ``(mean, stacks)`` where ``mean`` holds batch-averaged gradients
    per layer as ``(dW, db)`` tuples and ``stacks`` the per-sample versions
    (or None).
    """
    n = d_out.shape[0]
    mean: list = [None] * len(enc.weights)
    stacks: Optional[list] = [None] * len(enc.weights) if per_sample else None
    delta = d_out
    for i in range(len(enc.weights) - 1, -1, -1):
        inp = cache.inputs[i]
        mean[i] = (gemm(delta.T, inp) / n, delta.mean(axis=0))
        if per_sample:
            stacks[i] = (np.einsum("bo,bi->boi", delta, inp), delta.copy())
        if i:
            delta = gemm(delta, enc.weights[i]) * (cache.pre[i - 1] > 0)
    return mean, stacks


def fuse_logits(head: FusionHead, f_a, f_v) -> np.ndarray:
    f_a = np.asarray(f_a, dtype=np.float64)
    f_v = np.asarray(f_v, dtype=np.float64)
    if f_a.shape[0] != f_v.shape[0]:
        raise ContractError("modality batches differ in size")
    if f_a.shape[1] != head.w_a.shape[1] or f_v.shape[1] != head.w_v.shape[1]:
        raise ContractError("feature dims do not match head blocks")
    return gemm(f_a, head.w_a.T) + gemm(f_v, head.w_v.T) + head.bias


def unimodal_logits(head: FusionHead, f_u, modality: str) -> np.ndarray:
    """Approximate single-modality prediction ``W_u f_u + b/2``."""
    return gemm(f_u, head.block(modality).T) + head.bias / 2.0


def _check_labels(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
        raise ContractError("labels must be a 1-D integer array")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ContractError(f"labels must lie in [0, {n_classes})")
    return labels


def cross_entropy(logits, labels) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    labels = _check_labels(labels, logits.shape[1])
    logp = log_softmax(logits)
    return float(-np.mean(logp[np.arange(len(labels)), labels]))


def loss_grad_logits(logits, labels) -> np.ndarray:
    """Per-sample derivative of the sample loss w.r.t. its logits: softmax - onehot."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = _check_labels(labels, logits.shape[1])
    g = softmax(logits)
    g[np.arange(len(labels)), labels] -= 1.0
    return g


@dataclass
class ForwardResult:
    logits: np.ndarray
    f_a: np.ndarray
    f_v: np.ndarray
    cache_a: EncoderCache
    cache_v: EncoderCache


def forward(params: ModelParams, x_a, x_v) -> ForwardResult:
    f_a, cache_a = encoder_forward(params.encoder_a, x_a)
    f_v, cache_v = encoder_forward(params.encoder_v, x_v)
    return ForwardResult(fuse_logits(params.head, f_a, f_v), f_a, f_v, cache_a, cache_v)


@dataclass
class GradientBundle:
    """Batch-mean gradients keyed like ``ModelParams.tensors``.

    ``per_sample`` (when requested) stacks one gradient per sample along a new
    leading axis; its mean over that axis equals ``mean``.
    """

    mean: dict[str, np.ndarray]
    m: int
    per_sample: Optional[dict[str, np.ndarray]] = field(default=None)


def backward(params: ModelParams, fwd: ForwardResult, d_logits, per_sample: bool = False) -> GradientBundle:
    """Gradients of the batch-mean loss given per-sample ``d_logits``."""
    g = np.asarray(d_logits, dtype=np.float64)
    n = fwd.logits.shape[0]
    if g.shape != fwd.logits.shape or fwd.cache_a.inputs[0].shape[0] != n or fwd.cache_v.inputs[0].shape[0] != n:
        raise ContractError("stale forward cache: shapes do not match the logit gradient")
    head = params.head
    mean: dict[str, np.ndarray] = {}
    stacks: Optional[dict[str, np.ndarray]] = {} if per_sample else None

    for u, f_u, cache in (("a", fwd.f_a, fwd.cache_a), ("v", fwd.f_v, fwd.cache_v)):
        enc = params.encoder(u)
        d_feat = gemm(g, head.block(u))
        layer_mean, layer_stack = encoder_backward(enc, cache, d_feat, per_sample)
        for i, (dw, db) in enumerate(layer_mean):
            mean[f"{u}.enc{i}.w"] = dw
            mean[f"{u}.enc{i}.b"] = db
            if per_sample:
                stacks[f"{u}.enc{i}.w"], stacks[f"{u}.enc{i}.b"] = layer_stack[i]
        mean[f"{u}.head"] = gemm(g.T, f_u) / n
        if per_sample:
            stacks[f"{u}.head"] = np.einsum("bm,bd->bmd", g, f_u)
    mean["bias"] = g.mean(axis=0)
    if per_sample:
        stacks["bias"] = g.copy()

    order = list(params.tensors())
    mean = {k: mean[k] for k in order}
    if per_sample:
        stacks = {k: stacks[k] for k in order}
    return GradientBundle(mean, n, stacks)
