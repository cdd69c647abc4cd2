"""Central finite-difference verification of the gradient engine.

Scenarios run end to end in float64: interaction -> matching -> both
contrastive branches -> total loss. Every learnable parameter group is
perturbed coordinate by coordinate (h = 1e-4) and compared against the
tape's analytic gradients.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as T
from .caption_branch import aggregate_captions_t, init_caption_branch
from .interaction import COATTN, CROSS, MLP, InteractionConfig, enhance
from .interaction import init_interaction_params
from .matching import (FINEGRAINED, GLOBAL, LEARNED, UNIFORM,
                       finegrained_similarity_t, init_pooling_params)
from .objective import total_loss

FD_H = 1e-4
REL_FLOOR = 1e-6


def finite_difference_grad(fn: Callable[[], float], param: T.Tensor,
                           h: float = FD_H, order: int = 2) -> np.ndarray:
    """Per-coordinate central differences of fn() w.r.t. one parameter.

    ``order=2`` is the plain two-point central quotient. ``order=4`` evaluates
    the five-point central stencil at the same spacing, which removes the
    O(h^2) truncation term; useful where the loss has enough curvature that
    truncation dominates the comparison.
    """
    flat = param.data.reshape(-1)
    out = np.zeros_like(flat)

    def at(i: int, delta: float) -> float:
        orig = flat[i]
        flat[i] = orig + delta
        val = fn()
        flat[i] = orig
        return val

    for i in range(flat.size):
        if order == 2:
            out[i] = (at(i, h) - at(i, -h)) / (2.0 * h)
        else:
            out[i] = (-at(i, 2 * h) + 8.0 * at(i, h)
                      - 8.0 * at(i, -h) + at(i, -2 * h)) / (12.0 * h)
    return out.reshape(param.data.shape)


def max_rel_error(analytic: np.ndarray, fd: np.ndarray,
                  floor: float = REL_FLOOR) -> float:
    """max |a - fd| / max(|a|, |fd|, floor) over all coordinates."""
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(fd, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def check_op_gradient(fn: Callable[[dict[str, T.Tensor]], T.Tensor],
                      params: dict[str, T.Tensor],
                      h: float = FD_H) -> float:
    """Gradcheck a scalar-valued op builder against all given f64 params."""
    with T.GradTape() as tape:
        loss = fn(params)
    grads = T.backward(loss, tape)

    def scalar() -> float:
        return fn(params).item()

    worst = 0.0
    for p in params.values():
        analytic = grads.get(p, np.zeros_like(p.data))
        fd = finite_difference_grad(scalar, p, h)
        worst = max(worst, max_rel_error(analytic, fd))
    return worst


# --- full-pipeline scenarios ------------------------------------------------------

def _unit_rows(rng, shape) -> np.ndarray:
    x = rng.standard_normal(shape)
    return x / np.sqrt((x * x).sum(axis=-1, keepdims=True))


def _randomize(params: dict[str, T.Tensor], rng, scale: float = 0.2) -> None:
    for p in params.values():
        p.data = p.data + scale * rng.standard_normal(p.data.shape)


class Scenario:
    """One differentiable training step in float64 with randomized weights."""

    def __init__(self, strategy: str, match_kind: str, pooling: str, seed: int,
                 dim: int = 8, heads: int = 2, batch: int = 3, frames: int = 2,
                 captions: int = 3, words: int = 3, ffn_mult: int = 2,
                 caption_layers: int = 1, lambda_aug: float = 0.7):
        rng = np.random.default_rng(seed)
        self.match_kind = match_kind
        self.pooling_kind = pooling
        self.lambda_aug = lambda_aug
        self.config = InteractionConfig(strategy=strategy, layers=1, heads=heads,
                                        dim=dim, ffn_mult=ffn_mult,
                                        max_frames=frames)
        self.inter = init_interaction_params(self.config, seed=seed,
                                             dtype=np.float64)
        _randomize(self.inter, rng)
        self.branch = init_caption_branch(caption_layers, dim, heads, ffn_mult,
                                          seed=seed + 1, dtype=np.float64)
        _randomize(self.branch.params, rng)
        self.pooling = init_pooling_params(dim, dtype=np.float64)
        if pooling == LEARNED:
            _randomize({"p_t": self.pooling.p_t, "p_v": self.pooling.p_v}, rng,
                       scale=0.5)
        self.tau = T.param(np.asarray(0.4 + 0.2 * rng.random()), dtype=np.float64)

        self.queries = _unit_rows(rng, (batch, dim))
        self.words = [_unit_rows(rng, (words, dim)) for _ in range(batch)]
        self.frames = [_unit_rows(rng, (frames, dim)) for _ in range(batch)]
        self.captions = [_unit_rows(rng, (captions, dim)) for _ in range(batch)]

    def groups(self) -> dict[str, dict[str, T.Tensor]]:
        out: dict[str, dict[str, T.Tensor]] = {}
        strategy = self.config.strategy
        if strategy == MLP:
            out["mlp"] = dict(self.inter)
        elif strategy == CROSS:
            out["cross"] = dict(self.inter)
        elif strategy == COATTN:
            out["coattn_co"] = {k: v for k, v in self.inter.items()
                                if k.startswith("coattn.co.")}
            out["coattn_temporal"] = {k: v for k, v in self.inter.items()
                                      if not k.startswith("coattn.co.")}
        if self.pooling_kind == LEARNED:
            out["pooling"] = {"pool.p_t": self.pooling.p_t,
                              "pool.p_v": self.pooling.p_v}
        if self.branch.layers > 0:
            out["caption_branch"] = dict(self.branch.params)
        out["temperature"] = {"tau": self.tau}
        return out

    def loss(self) -> T.Tensor:
        batch = len(self.frames)
        enhanced = [enhance(T.tensor(f, dtype=np.float64),
                            T.tensor(c, dtype=np.float64),
                            self.inter, self.config)
                    for f, c in zip(self.frames, self.captions)]
        vfeats = T.concat_rows([T.mean_rows(e) for e in enhanced])
        if self.match_kind == GLOBAL:
            q = T.tensor(self.queries, dtype=np.float64)
            qv = T.matmul(q, T.transpose(T.l2_normalize(vfeats)))
        else:
            normed = [T.l2_normalize(e) for e in enhanced]
            rows = []
            for i in range(batch):
                w = T.tensor(self.words[i], dtype=np.float64)
                cells = [T.reshape(
                    finegrained_similarity_t(w, nf, self.pooling_kind,
                                             self.pooling), (1, 1))
                         for nf in normed]
                rows.append(T.concat_cols(cells))
            qv = T.concat_rows(rows)

        aggs = [aggregate_captions_t(T.tensor(c, dtype=np.float64), self.branch)
                for c in self.captions]
        qc = T.matmul(T.tensor(self.queries, dtype=np.float64),
                      T.transpose(T.concat_rows(aggs)))

        caps0 = np.stack([c[0] for c in self.captions])
        aug = T.matmul(T.tensor(caps0, dtype=np.float64),
                       T.transpose(T.l2_normalize(vfeats)))
        loss, _ = total_loss(qv, qc, aug, self.tau, self.lambda_aug)
        return loss

    def analytic_grads(self) -> dict[T.Tensor, np.ndarray]:
        with T.GradTape() as tape:
            loss = self.loss()
        return T.backward(loss, tape)

    def check(self, h: float = FD_H, order: int = 4) -> dict[str, float]:
        """Max relative FD error per parameter group."""
        grads = self.analytic_grads()

        def scalar() -> float:
            return self.loss().item()

        out: dict[str, float] = {}
        for group, params in self.groups().items():
            worst = 0.0
            for p in params.values():
                analytic = grads.get(p, np.zeros_like(p.data))
                fd = finite_difference_grad(scalar, p, h, order=order)
                worst = max(worst, max_rel_error(analytic, fd))
            out[group] = worst
        return out


def standard_scenarios(seed: int) -> list[Scenario]:
    """The three configurations that together cover every parameter group."""
    small = dict(dim=6, batch=2, ffn_mult=1, captions=2, words=2)
    return [
        Scenario(MLP, FINEGRAINED, LEARNED, seed, **small),
        Scenario(CROSS, GLOBAL, UNIFORM, seed + 100, **small),
        Scenario(COATTN, GLOBAL, UNIFORM, seed + 200, **small),
    ]


def run_gradcheck(seeds: list[int], h: float = FD_H) -> dict[str, float]:
    """Worst FD error per parameter group over all scenarios and seeds."""
    worst: dict[str, float] = {}
    for seed in seeds:
        for sc in standard_scenarios(seed):
            for group, err in sc.check(h).items():
                worst[group] = max(worst.get(group, 0.0), err)
    return worst
