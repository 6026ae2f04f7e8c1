"""Per-batch contribution monitoring and gradient modulation coefficients."""
from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass

import numpy as np

from .model import FusionHead, unimodal_logits
from .numkit import ContractError, softmax


@dataclass(frozen=True)
class ModulationState:
    s_sum_a: float
    s_sum_v: float
    rho_a: float
    rho_v: float
    k_a: float
    k_v: float
    alpha: float

    def as_dict(self) -> dict:
        return asdict(self)


def unimodal_scores(head: FusionHead, f_a, f_v, labels) -> tuple[float, float]:
    """Batch sums of the true-class probability under each single-modality prediction."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ContractError("empty batch")
    rows = np.arange(labels.size)
    s_a = softmax(unimodal_logits(head, f_a, "a"))[rows, labels].sum()
    s_v = softmax(unimodal_logits(head, f_v, "v"))[rows, labels].sum()
    return float(s_a), float(s_v)


def discrepancy_ratio(s_sum_a: float, s_sum_v: float) -> tuple[float, float]:
    """Return ``(rho_v, rho_a)`` with ``rho_v = s_v / s_a`` and ``rho_a = 1 / rho_v``."""
    if not (s_sum_a > 0 and s_sum_v > 0):
        raise ContractError(f"scores must be positive, got s_a={s_sum_a}, s_v={s_sum_v}")
    rho_v = s_sum_v / s_sum_a
    return rho_v, 1.0 / rho_v


def modulation_coefficient(rho: float, alpha: float) -> float:
    # strict inequality: a tie leaves the modality unmodulated
    if rho > 1.0:
        # 1 - tanh(x) written to stay positive where tanh(x) rounds to 1
        e = math.exp(-2.0 * alpha * rho)
        # past alpha * rho ~ 372 the exact value underflows; keep k strictly positive
        return max(2.0 * e / (1.0 + e), sys.float_info.min)
    return 1.0


def modulation_state(head: FusionHead, f_a, f_v, labels, alpha: float, enabled: bool = True) -> ModulationState:
    """Scores, ratios and coefficients for one batch.

    With ``enabled=False`` the ratios are still measured but both coefficients
    are pinned to 1.
    """
    s_a, s_v = unimodal_scores(head, f_a, f_v, labels)
    rho_v, rho_a = discrepancy_ratio(s_a, s_v)
    if enabled:
        k_a, k_v = modulation_coefficient(rho_a, alpha), modulation_coefficient(rho_v, alpha)
    else:
        k_a = k_v = 1.0
    return ModulationState(s_a, s_v, rho_a, rho_v, k_a, k_v, alpha)
