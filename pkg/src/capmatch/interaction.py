"""Video-caption feature interaction: enhanced frame embeddings.

Four strategies over a video's frame embeddings (F, D) and caption CLS
embeddings (C, D):

* sum: add the mean caption embedding to every frame (no parameters)
* mlp: concat each frame with the mean caption, two linear layers with GELU
* cross: one token sequence [frames; captions] through L encoder blocks,
  keep the first F outputs
* coattn: one co-attentional block (frames query captions and vice versa),
  then the video stream plus learned positions through L temporal encoder
  blocks

Transformer blocks are pre-norm with zero-initialized output projections,
so every transformer strategy is an exact identity on the frames at
initialization: an untrained interaction module scores identically to the
no-interaction baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import InvalidConfig, NoCaptions, SequenceTooLong

NONE = "none"
SUM = "sum"
MLP = "mlp"
CROSS = "cross"
COATTN = "coattn"

STRATEGIES = (NONE, SUM, MLP, CROSS, COATTN)
_TRANSFORMER_STRATEGIES = (CROSS, COATTN)


def default_heads(dim: int) -> int:
    return 8 if dim >= 256 else 4


@dataclass
class InteractionConfig:
    strategy: str = NONE
    layers: int = 1
    heads: int = 4
    dim: int = 32
    ffn_mult: int = 4
    max_frames: int = 64

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise InvalidConfig(f"unknown interaction strategy {self.strategy!r}")
        if self.dim % self.heads != 0:
            raise InvalidConfig(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.strategy in _TRANSFORMER_STRATEGIES and self.layers < 1:
            raise InvalidConfig("transformer strategies need layers >= 1")
        if self.ffn_mult < 1 or self.max_frames < 1:
            raise InvalidConfig("ffn_mult and max_frames must be positive")


# --- parameter construction ----------------------------------------------------

def _linear(rng, fan_in: int, fan_out: int, dtype, zero: bool = False):
    if zero:
        w = np.zeros((fan_in, fan_out), dtype=dtype)
    else:
        w = (rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in)).astype(dtype)
    return T.param(w), T.param(np.zeros(fan_out, dtype=dtype))


def _add_layer_norm(out: dict, prefix: str, d: int, dtype) -> None:
    out[prefix + ".gain"] = T.param(np.ones(d, dtype=dtype))
    out[prefix + ".bias"] = T.param(np.zeros(d, dtype=dtype))


def _add_attention(out: dict, prefix: str, rng, d: int, dtype) -> None:
    for name in ("wq", "wk", "wv"):
        w, b = _linear(rng, d, d, dtype)
        out[f"{prefix}.{name}"] = w
        out[f"{prefix}.b{name[1]}"] = b
    # Output projection starts at zero: the residual stream is untouched.
    w, b = _linear(rng, d, d, dtype, zero=True)
    out[prefix + ".wo"] = w
    out[prefix + ".bo"] = b


def _add_ffn(out: dict, prefix: str, rng, d: int, mult: int, dtype) -> None:
    w1, b1 = _linear(rng, d, mult * d, dtype)
    w2, b2 = _linear(rng, mult * d, d, dtype, zero=True)
    out[prefix + ".w1"] = w1
    out[prefix + ".b1"] = b1
    out[prefix + ".w2"] = w2
    out[prefix + ".b2"] = b2


def add_encoder_block_params(out: dict, prefix: str, rng, d: int, mult: int,
                             dtype) -> None:
    """Parameters of one pre-norm encoder block under ``prefix``."""
    _add_layer_norm(out, prefix + ".ln1", d, dtype)
    _add_attention(out, prefix + ".attn", rng, d, dtype)
    _add_layer_norm(out, prefix + ".ln2", d, dtype)
    _add_ffn(out, prefix + ".ffn", rng, d, mult, dtype)


def init_interaction_params(config: InteractionConfig, seed: int,
                            dtype=np.float32) -> dict[str, T.Tensor]:
    """Fresh parameter set for the configured strategy (may be empty)."""
    config.validate()
    rng = np.random.default_rng(seed)
    d, mult = config.dim, config.ffn_mult
    out: dict[str, T.Tensor] = {}
    if config.strategy == MLP:
        w1, b1 = _linear(rng, 2 * d, d, dtype)
        w2, b2 = _linear(rng, d, d, dtype)
        out.update({"mlp.w1": w1, "mlp.b1": b1, "mlp.w2": w2, "mlp.b2": b2})
    elif config.strategy == CROSS:
        out["cross.type_emb"] = T.param(np.zeros((2, d), dtype=dtype))
        for i in range(config.layers):
            add_encoder_block_params(out, f"cross.blk{i}", rng, d, mult, dtype)
    elif config.strategy == COATTN:
        for stream in ("vid", "cap"):
            _add_layer_norm(out, f"coattn.co.{stream}.ln1", d, dtype)
            _add_attention(out, f"coattn.co.{stream}.attn", rng, d, dtype)
            _add_layer_norm(out, f"coattn.co.{stream}.ln2", d, dtype)
            _add_ffn(out, f"coattn.co.{stream}.ffn", rng, d, mult, dtype)
        out["coattn.pos_emb"] = T.param(
            np.zeros((config.max_frames, d), dtype=dtype))
        for i in range(config.layers):
            add_encoder_block_params(out, f"coattn.tmp{i}", rng, d, mult, dtype)
    return out


# --- forward pieces -------------------------------------------------------------

def multi_head_attention(q_in: T.Tensor, kv_in: T.Tensor, params: dict,
                         prefix: str, heads: int) -> T.Tensor:
    """Standard scaled dot-product attention over already-normalized inputs."""
    d = q_in.shape[-1]
    dh = d // heads
    q = T.add(T.matmul(q_in, params[prefix + ".wq"]), params[prefix + ".bq"])
    k = T.add(T.matmul(kv_in, params[prefix + ".wk"]), params[prefix + ".bk"])
    v = T.add(T.matmul(kv_in, params[prefix + ".wv"]), params[prefix + ".bv"])
    outs = []
    for h in range(heads):
        lo, hi = h * dh, (h + 1) * dh
        qh, kh, vh = (T.slice_cols(t, lo, hi) for t in (q, k, v))
        scores = T.scale(T.matmul(qh, T.transpose(kh)), 1.0 / math.sqrt(dh))
        outs.append(T.matmul(T.softmax_rows(scores), vh))
    o = T.concat_cols(outs)
    return T.add(T.matmul(o, params[prefix + ".wo"]), params[prefix + ".bo"])


def _ffn(x: T.Tensor, params: dict, prefix: str) -> T.Tensor:
    h = T.gelu(T.add(T.matmul(x, params[prefix + ".w1"]), params[prefix + ".b1"]))
    return T.add(T.matmul(h, params[prefix + ".w2"]), params[prefix + ".b2"])


def encoder_block(x: T.Tensor, params: dict, prefix: str, heads: int) -> T.Tensor:
    h = T.layer_norm(x, params[prefix + ".ln1.gain"], params[prefix + ".ln1.bias"])
    x = T.add(x, multi_head_attention(h, h, params, prefix + ".attn", heads))
    h2 = T.layer_norm(x, params[prefix + ".ln2.gain"], params[prefix + ".ln2.bias"])
    return T.add(x, _ffn(h2, params, prefix + ".ffn"))


def _require_captions(caption_cls: T.Tensor) -> None:
    if caption_cls.shape[0] == 0:
        raise NoCaptions("interaction needs at least one caption")


def _mean_caption(caption_cls: T.Tensor) -> T.Tensor:
    return T.mean_rows(caption_cls)


# --- strategies ------------------------------------------------------------------

def interact_sum(frames: T.Tensor, caption_cls: T.Tensor) -> T.Tensor:
    """Each frame plus the mean caption embedding."""
    _require_captions(caption_cls)
    return T.add(frames, _mean_caption(caption_cls))


def interact_mlp(frames: T.Tensor, caption_cls: T.Tensor,
                 params: dict) -> T.Tensor:
    """Two-layer MLP over [frame, mean caption]; replaces the frame rows."""
    _require_captions(caption_cls)
    f, d = frames.shape
    cg = _mean_caption(caption_cls)
    cg_rows = T.add(T.zeros((f, d), dtype=frames.dtype), cg)
    x = T.concat_cols([frames, cg_rows])
    h = T.gelu(T.add(T.matmul(x, params["mlp.w1"]), params["mlp.b1"]))
    return T.add(T.matmul(h, params["mlp.w2"]), params["mlp.b2"])


def interact_cross(frames: T.Tensor, caption_cls: T.Tensor, params: dict,
                   config: InteractionConfig) -> T.Tensor:
    """Joint self-attention over the [frames; captions] sequence."""
    _require_captions(caption_cls)
    f = frames.shape[0]
    if f > config.max_frames:
        raise SequenceTooLong(f"{f} frames exceed max_frames={config.max_frames}")
    te = params["cross.type_emb"]
    seq = T.concat_rows([T.add(frames, T.slice_rows(te, 0, 1)),
                         T.add(caption_cls, T.slice_rows(te, 1, 2))])
    for i in range(config.layers):
        seq = encoder_block(seq, params, f"cross.blk{i}", config.heads)
    return T.slice_rows(seq, 0, f)


def interact_coattn(frames: T.Tensor, caption_cls: T.Tensor, params: dict,
                    config: InteractionConfig) -> T.Tensor:
    """Mutual attention between the two streams, then temporal encoding.

    The caption stream is computed symmetrically but only the video stream
    continues into the temporal blocks.
    """
    _require_captions(caption_cls)
    f = frames.shape[0]
    if f > config.max_frames:
        raise SequenceTooLong(f"{f} frames exceed max_frames={config.max_frames}")
    p = params
    hv = T.layer_norm(frames, p["coattn.co.vid.ln1.gain"], p["coattn.co.vid.ln1.bias"])
    hc = T.layer_norm(caption_cls, p["coattn.co.cap.ln1.gain"],
                      p["coattn.co.cap.ln1.bias"])
    v = T.add(frames, multi_head_attention(hv, hc, p, "coattn.co.vid.attn",
                                           config.heads))
    c = T.add(caption_cls, multi_head_attention(hc, hv, p, "coattn.co.cap.attn",
                                                config.heads))
    v = T.add(v, _ffn(T.layer_norm(v, p["coattn.co.vid.ln2.gain"],
                                   p["coattn.co.vid.ln2.bias"]),
                      p, "coattn.co.vid.ffn"))
    # Caption stream output is dropped; kept symmetric for completeness.
    c = T.add(c, _ffn(T.layer_norm(c, p["coattn.co.cap.ln2.gain"],
                                   p["coattn.co.cap.ln2.bias"]),
                      p, "coattn.co.cap.ffn"))
    v = T.add(v, T.slice_rows(p["coattn.pos_emb"], 0, f))
    for i in range(config.layers):
        v = encoder_block(v, p, f"coattn.tmp{i}", config.heads)
    return v


def enhance(frames: T.Tensor, caption_cls: T.Tensor, params: dict,
            config: InteractionConfig) -> T.Tensor:
    """Dispatch on strategy; 'none' returns the frames untouched."""
    if config.strategy == NONE:
        return frames
    if config.strategy == SUM:
        return interact_sum(frames, caption_cls)
    if config.strategy == MLP:
        return interact_mlp(frames, caption_cls, params)
    if config.strategy == CROSS:
        return interact_cross(frames, caption_cls, params, config)
    if config.strategy == COATTN:
        return interact_coattn(frames, caption_cls, params, config)
    raise InvalidConfig(f"unknown interaction strategy {config.strategy!r}")
