"""Training loop with per-modality gradient modulation and optional noise injection.

Each step: forward, measure the per-modality scores and coefficients, backprop,
optionally sample noise matched to the mini-batch gradient variance, then update
``theta_u <- theta_u - lr * (k_u * g_u + h_u)`` through SGD-momentum or Adam.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from .data import MultimodalBatch, Splits, minibatches
from .evaluation import ProbeConfig, RunRecord, evaluate, linear_probe
from .model import (ModelParams, backward, cross_entropy, forward, init_params, is_head_tensor,
                    loss_grad_logits, tensor_modality)
from .modulation import ModulationState, modulation_state
from .noise import estimate_covariance_diag, sample_ge_noise
from .numkit import ContractError, make_streams

log = logging.getLogger(__name__)

STRATEGIES = ("joint", "ogm", "ogm_ge", "modality_dropout")
OPTIMIZERS = ("sgd", "adam")


class TrainingAborted(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    strategy: str = "joint"
    fusion: str = "concatenation"
    alpha: float = 0.1
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 30
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_decay: float = 0.1
    lr_decay_every: int = 70
    optimizer: str = "sgd"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    dropout_p: float = 0.5
    dropout_modality: str = "a"
    # None: noise on for ogm_ge only
    ge: Optional[bool] = None
    # False restricts modulation and noise to encoder tensors
    modulate_head: bool = True
    # "av" for the multimodal model, "a"/"v" for a single-modality baseline
    modalities: str = "av"
    hidden_a: tuple = (32,)
    hidden_v: tuple = (32,)
    feature_dim: int = 8
    probe: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_a", tuple(int(h) for h in self.hidden_a))
        object.__setattr__(self, "hidden_v", tuple(int(h) for h in self.hidden_v))

    def validate(self) -> "TrainConfig":
        if self.strategy not in STRATEGIES:
            raise ContractError(f"strategy must be one of {STRATEGIES}")
        if self.optimizer not in OPTIMIZERS:
            raise ContractError(f"optimizer must be one of {OPTIMIZERS}")
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be positive")
        if self.batch_size < 2:
            raise ContractError("batch_size must be at least 2")
        if self.epochs < 0:
            raise ContractError("epochs must be non-negative")
        if self.alpha < 0:
            raise ContractError("alpha must be non-negative")
        if not 0.0 <= self.dropout_p <= 1.0:
            raise ContractError("dropout_p must lie in [0, 1]")
        if self.dropout_modality not in ("a", "v") or self.modalities not in ("av", "a", "v"):
            raise ContractError("bad modality selector")
        if self.lr_decay_every < 1 or self.lr_decay <= 0:
            raise ContractError("lr schedule needs a positive factor and period >= 1")
        if self.feature_dim < 1 or self.seed < 0:
            raise ContractError("feature_dim must be >= 1 and seed >= 0")
        return self

    @property
    def modulated(self) -> bool:
        return self.strategy in ("ogm", "ogm_ge")

    @property
    def noise_enabled(self) -> bool:
        return self.strategy == "ogm_ge" if self.ge is None else bool(self.ge)

    def lr_at(self, epoch: int) -> float:
        return self.learning_rate * self.lr_decay ** (epoch // self.lr_decay_every)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["hidden_a"] = list(self.hidden_a)
        d["hidden_v"] = list(self.hidden_v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ContractError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class OptimizerState:
    """Momentum buffers (SGD) or first/second moments with step counts (Adam)."""

    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)
    steps: dict[str, int] = field(default_factory=dict)


def sgd_update(param: np.ndarray, grad: np.ndarray, k: float, h: Optional[np.ndarray], lr: float,
               momentum: float, weight_decay: float, buf: Optional[np.ndarray]) -> Optional[np.ndarray]:
    """In-place SGD step on ``param``; returns the (updated) momentum buffer.

    Weight decay joins the raw gradient, the sum is scaled by ``k``, the noise
    ``h`` is added, and only then does momentum act.
    """
    if grad.shape != param.shape or (h is not None and h.shape != param.shape):
        raise ContractError(f"shape mismatch: param {param.shape}, grad {grad.shape}")
    d = grad + weight_decay * param if weight_decay else grad
    d = k * d
    if h is not None:
        d = d + h
    if momentum:
        if buf is None:
            buf = np.zeros_like(param)
        buf *= momentum
        buf += d
        d = buf
    param -= lr * d
    return buf


def adam_update(param: np.ndarray, grad: np.ndarray, k: float, h: Optional[np.ndarray], lr: float,
                betas: tuple[float, float], eps: float, state: OptimizerState, name: str,
                weight_decay: float = 0.0) -> None:
    """In-place Adam step where ``k * g + h`` plays the role of the gradient."""
    if grad.shape != param.shape or (h is not None and h.shape != param.shape):
        raise ContractError(f"shape mismatch: param {param.shape}, grad {grad.shape}")
    d = grad + weight_decay * param if weight_decay else grad
    d = k * d
    if h is not None:
        d = d + h
    b1, b2 = betas
    m = state.buffers.setdefault(name, np.zeros_like(param))
    v = state.second.setdefault(name, np.zeros_like(param))
    t = state.steps.get(name, 0) + 1
    state.steps[name] = t
    m *= b1
    m += (1 - b1) * d
    v *= b2
    v += (1 - b2) * d * d
    m_hat = m / (1 - b1 ** t)
    v_hat = v / (1 - b2 ** t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


def apply_modality_dropout(batch: MultimodalBatch, p: float, rng: np.random.Generator,
                           modality: str = "a") -> MultimodalBatch:
    """Zero one modality's features per sample with probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise ContractError("p must lie in [0, 1]")
    drop = rng.random(len(batch)) < p
    if modality == "a":
        return MultimodalBatch(np.where(drop[:, None], 0.0, batch.x_a), batch.x_v, batch.labels)
    return MultimodalBatch(batch.x_a, np.where(drop[:, None], 0.0, batch.x_v), batch.labels)


def _silence(batch: MultimodalBatch, modalities: str) -> MultimodalBatch:
    if modalities == "a":
        return MultimodalBatch(batch.x_a, np.zeros_like(batch.x_v), batch.labels)
    if modalities == "v":
        return MultimodalBatch(np.zeros_like(batch.x_a), batch.x_v, batch.labels)
    return batch


@dataclass
class StepResult:
    loss: float
    state: ModulationState
    grads: Optional[dict] = None
    noise: Optional[dict] = None
    coefficients: Optional[dict] = None


def train_step(params: ModelParams, batch: MultimodalBatch, cfg: TrainConfig, opt: OptimizerState,
               rngs: dict, lr: Optional[float] = None, details: bool = False) -> StepResult:
    """One iteration; ``params`` and ``opt`` are updated in place.

    With ``details=True`` the raw mean gradients, sampled noise and per-tensor
    coefficients are returned for replay.
    """
    lr = cfg.learning_rate if lr is None else lr
    if cfg.strategy == "modality_dropout":
        batch = apply_modality_dropout(batch, cfg.dropout_p, rngs["dropout"], cfg.dropout_modality)
    batch = _silence(batch, cfg.modalities)

    fwd = forward(params, batch.x_a, batch.x_v)
    loss = cross_entropy(fwd.logits, batch.labels)
    if not np.isfinite(loss):
        raise TrainingAborted(f"non-finite loss {loss}")
    state = modulation_state(params.head, fwd.f_a, fwd.f_v, batch.labels, cfg.alpha, enabled=cfg.modulated)

    use_noise = cfg.noise_enabled
    grads = backward(params, fwd, loss_grad_logits(fwd.logits, batch.labels), per_sample=use_noise)
    for name, g in grads.mean.items():
        if not np.all(np.isfinite(g)):
            raise TrainingAborted(f"non-finite gradient in tensor {name}")

    tensors = params.tensors()
    frozen = {"a": "v", "v": "a"}.get(cfg.modalities)
    scoped = [n for n in tensors
              if tensor_modality(n) in ("a", "v") and (cfg.modulate_head or not is_head_tensor(n))]
    noise = {}
    if use_noise:
        estimate = estimate_covariance_diag(
            {n: grads.per_sample[n] for n in scoped}, {n: grads.mean[n] for n in scoped}, grads.m)
        noise = sample_ge_noise(estimate, rngs["noise"])

    coeffs = {}
    for name, param in tensors.items():
        u = tensor_modality(name)
        if u == frozen:
            continue
        k = 1.0
        if name in scoped:
            k = state.k_a if u == "a" else state.k_v
        coeffs[name] = k
        h = noise.get(name)
        if cfg.optimizer == "sgd":
            opt.buffers[name] = sgd_update(param, grads.mean[name], k, h, lr, cfg.momentum,
                                           cfg.weight_decay, opt.buffers.get(name))
        else:
            adam_update(param, grads.mean[name], k, h, lr, (cfg.adam_beta1, cfg.adam_beta2), cfg.adam_eps,
                        opt, name, cfg.weight_decay)
        if not np.all(np.isfinite(param)):
            raise TrainingAborted(f"non-finite values in tensor {name} after update")

    if details:
        return StepResult(loss, state, grads.mean, noise, coeffs)
    return StepResult(loss, state)


def build_model(cfg: TrainConfig, d_a: int, d_v: int, n_classes: int, rng: np.random.Generator) -> ModelParams:
    dims_a = [d_a, *cfg.hidden_a, cfg.feature_dim]
    dims_v = [d_v, *cfg.hidden_v, cfg.feature_dim]
    return init_params(dims_a, dims_v, n_classes, cfg.fusion, rng)


def train(splits: Splits, cfg: TrainConfig, probe_cfg: ProbeConfig = ProbeConfig()) -> tuple[RunRecord, ModelParams]:
    """Run the full loop and return the run record and the trained parameters.

    Epoch 0 in ``record.epochs`` is the untrained model.
    """
    cfg.validate()
    if len(splits.train) < 2:
        raise ContractError("training split needs at least 2 samples")
    rngs = make_streams(cfg.seed)
    params = build_model(cfg, splits.train.d_a, splits.train.d_v, splits.n_classes, rngs["init"])
    opt = OptimizerState()
    record = RunRecord(config=cfg.as_dict(), seed=cfg.seed)
    train_eval = _silence(splits.train, cfg.modalities)
    val_eval = _silence(splits.val, cfg.modalities)

    def log_epoch(epoch: int) -> None:
        tr, va = evaluate(params, train_eval), evaluate(params, val_eval)
        record.epochs.append({"epoch": epoch, "train_loss": tr["loss"], "train_acc": tr["acc"],
                              "val_loss": va["loss"], "val_acc": va["acc"]})

    log_epoch(0)
    step = 0
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        for idx in minibatches(len(splits.train), cfg.batch_size, rngs["data"]):
            res = train_step(params, splits.train.take(idx), cfg, opt, rngs, lr)
            for key, val in zip(record.trace, (step, res.loss, res.state.rho_a, res.state.k_a, res.state.k_v)):
                record.trace[key].append(val)
            step += 1
        log_epoch(epoch + 1)
        log.debug("epoch %d loss %.4f val_acc %.4f", epoch + 1, record.epochs[-1]["train_loss"],
                  record.epochs[-1]["val_acc"])

    test = evaluate(params, _silence(splits.test, cfg.modalities))
    record.final = {"test_acc": test["acc"], "test_map": test["map"], "test_loss": test["loss"],
                    "val_acc": record.epochs[-1]["val_acc"]}
    if cfg.probe:
        for u in ("a", "v"):
            record.final[f"probe_{u}"] = linear_probe(params.encoder(u), splits, u, rngs["probe"], probe_cfg)
    return record, params
