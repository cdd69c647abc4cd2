"""Contrastive losses, temperature handling, Adam, and the LR schedule.

The loss over a square similarity matrix is the symmetric cross entropy:
the average of the row-direction (query -> candidate) and column-direction
(candidate -> query) InfoNCE terms, each computed from temperature-scaled
logits with a max-subtracted log-sum-exp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import (InvalidConfig, NonPositiveTemperature, NonSquare,
                     ShapeMismatch)


@dataclass
class Temperature:
    """Softmax temperature; optionally learnable, clamped after each step."""
    value: float = 0.05
    learnable: bool = False
    t_min: float = 0.01
    t_max: float = 0.5

    def validate(self) -> None:
        if self.value <= 0:
            raise NonPositiveTemperature(f"temperature {self.value} must be > 0")
        if not self.t_min <= self.value <= self.t_max:
            raise InvalidConfig(
                f"temperature {self.value} outside clamp [{self.t_min}, {self.t_max}]")

    def make_param(self, dtype=np.float32) -> T.Tensor:
        self.validate()
        return T.Tensor(np.asarray(self.value, dtype=dtype),
                        requires_grad=self.learnable)

    def clamp_(self, tau: T.Tensor) -> None:
        tau.data = np.clip(tau.data, self.t_min, self.t_max)


def _as_tensor(x) -> T.Tensor:
    return x if isinstance(x, T.Tensor) else T.tensor(x)


def _ce_rows(logits: T.Tensor) -> T.Tensor:
    """-(1/B) sum_i log softmax_row(logits)[i, i], via stable log-sum-exp."""
    m = T.max_axis(logits, axis=1)
    z = T.exp(T.sub(logits, m))
    lse = T.add(T.log(T.sum_axis(z, axis=1)), m)
    return T.mean_all(T.sub(lse, T.take_diag(logits)))


def symmetric_ce(similarities, tau) -> T.Tensor:
    """Symmetric cross entropy over a square similarity matrix.

    ``similarities`` may be a Tensor (training) or ndarray (analysis); ``tau``
    a Tensor parameter or a float. Returns a scalar tensor.
    """
    s = _as_tensor(similarities)
    if s.data.ndim != 2 or s.shape[0] != s.shape[1]:
        raise NonSquare(f"similarity matrix must be square, got {s.shape}")
    tau_t = tau if isinstance(tau, T.Tensor) else T.tensor(
        np.asarray(tau, dtype=s.dtype))
    if float(tau_t.data) <= 0:
        raise NonPositiveTemperature(f"temperature {float(tau_t.data)} must be > 0")
    logits = T.div(s, tau_t)
    l_row = _ce_rows(logits)
    l_col = _ce_rows(T.transpose(logits))
    return T.scale(T.add(l_row, l_col), 0.5)


def total_loss(qv_sims, qc_sims, aug_sims, tau,
               lambda_aug: float = 1.0) -> tuple[T.Tensor, dict[str, float]]:
    """L = L_QV + L_QC + lambda_aug * L_AUG, with a per-term breakdown.

    ``qc_sims`` and ``aug_sims`` may be None when the corresponding branch is
    inactive (staged training); the missing terms contribute exactly zero.
    """
    if lambda_aug < 0:
        raise InvalidConfig("lambda_aug must be >= 0")
    terms: list[T.Tensor] = []
    breakdown: dict[str, float] = {"qv": 0.0, "qc": 0.0, "aug": 0.0}
    if qv_sims is not None:
        l_qv = symmetric_ce(qv_sims, tau)
        breakdown["qv"] = l_qv.item()
        terms.append(l_qv)
    if qc_sims is not None:
        l_qc = symmetric_ce(qc_sims, tau)
        breakdown["qc"] = l_qc.item()
        terms.append(l_qc)
    if aug_sims is not None and lambda_aug > 0:
        l_aug = symmetric_ce(aug_sims, tau)
        breakdown["aug"] = l_aug.item()
        terms.append(T.scale(l_aug, lambda_aug))
    if not terms:
        raise InvalidConfig("total_loss needs at least one similarity matrix")
    total = terms[0]
    for t in terms[1:]:
        total = T.add(total, t)
    breakdown["total"] = total.item()
    return total, breakdown


# --- optimizer -------------------------------------------------------------------

@dataclass
class AdamState:
    """First/second moment estimates keyed by parameter name."""
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, T.Tensor], grads: dict[str, np.ndarray],
              state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place on the parameter tensors.

    Parameters without a gradient entry are left untouched (their gradient
    is zero and so is their update at fresh moments; skipping keeps stale
    moments from drifting frozen parameters).
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ShapeMismatch(
                f"gradient shape {g.shape} vs parameter {name} shape {p.data.shape}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m[...] = beta1 * m + (1.0 - beta1) * g
        v[...] = beta2 * v + (1.0 - beta2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p.data = p.data - (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)


def lr_schedule(step: int, lr_max: float, warmup_steps: int,
                total_steps: int) -> float:
    """Linear warmup to lr_max, then cosine decay to zero.

    ``step`` is 1-indexed; at ``step == warmup_steps`` the rate is exactly
    ``lr_max``, and at ``step == total_steps`` it reaches zero.
    """
    if step < 1:
        raise InvalidConfig("schedule steps are 1-indexed")
    if warmup_steps > 0 and step <= warmup_steps:
        return lr_max * step / warmup_steps
    span = max(1, total_steps - warmup_steps)
    progress = min(1.0, (step - warmup_steps) / span)
    return 0.5 * lr_max * (1.0 + math.cos(math.pi * progress))
