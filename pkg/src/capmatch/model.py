"""All learnable state of the retrieval engine, as one named-parameter map.

Groups:

* ``pool.*``      - fine-grained pooling vectors (text and video side)
* ``<strategy>.*``- interaction module weights (mlp./cross./coattn. prefixes)
* ``caption.*``   - caption-branch encoder blocks
* ``tau``         - softmax temperature, present only when learnable

The video branch (everything except ``caption.*``) trains in stage 1;
stage 2 trains only the caption branch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .caption_branch import CaptionBranchParams, init_caption_branch
from .interaction import InteractionConfig, init_interaction_params
from .matching import MatchMode, PoolingParams, init_pooling_params
from .objective import Temperature


@dataclass
class ModelParams:
    dim: int
    match_mode: MatchMode
    interaction: InteractionConfig
    pooling: PoolingParams
    interaction_params: dict[str, T.Tensor]
    caption_branch: CaptionBranchParams
    temperature: Temperature
    tau: T.Tensor

    def named_params(self) -> dict[str, T.Tensor]:
        out: dict[str, T.Tensor] = {
            "pool.p_t": self.pooling.p_t,
            "pool.p_v": self.pooling.p_v,
        }
        out.update(self.interaction_params)
        out.update(self.caption_branch.params)
        if self.temperature.learnable:
            out["tau"] = self.tau
        return out

    def video_branch_names(self) -> list[str]:
        return [n for n in self.named_params() if not n.startswith("caption.")]

    def caption_branch_names(self) -> list[str]:
        return [n for n in self.named_params() if n.startswith("caption.")]


def init_model_params(dim: int,
                      match_mode: MatchMode,
                      interaction: InteractionConfig,
                      caption_layers: int,
                      temperature: Temperature,
                      seed: int,
                      dtype=np.float32) -> ModelParams:
    """Deterministic initialization of every parameter group from one seed."""
    match_mode.validate()
    interaction.validate()
    pooling = init_pooling_params(dim, dtype=dtype)
    inter = init_interaction_params(interaction, seed=seed, dtype=dtype)
    branch = init_caption_branch(caption_layers, dim, interaction.heads,
                                 interaction.ffn_mult, seed=seed + 1, dtype=dtype)
    tau = temperature.make_param(dtype=dtype)
    return ModelParams(dim=dim, match_mode=match_mode, interaction=interaction,
                       pooling=pooling, interaction_params=inter,
                       caption_branch=branch, temperature=temperature, tau=tau)
