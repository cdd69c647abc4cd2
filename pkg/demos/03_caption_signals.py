"""The three ways auxiliary captions enter the engine.

1. Training data: each video's best-matching caption becomes an extra
   caption-video positive pair.
2. Feature interaction: caption embeddings reshape the frame embeddings
   (sum, MLP, cross-attention over one joint sequence, or co-attention).
3. Score fusion: an aggregated caption representation scores against the
   query and adds to the video score.
"""

import numpy as np

from capmatch import (SynthConfig, aggregate_captions, build_augmentation_pairs,
                      enhance, filter_captions, init_caption_branch,
                      init_interaction_params, synthesize)
from capmatch import tensor as T
from capmatch.interaction import InteractionConfig

archive = synthesize(SynthConfig(n=8, dim=16, frames=3, captions=6, words=4,
                                 sigma_c=0.6, distractor_fraction=0.3, seed=5))

# 1. Filtering keeps the captions closest to the annotated query. With
#    distractors in the pool, the chosen ones are much better than average.
filtered = filter_captions(archive, k=2)
pairs = build_augmentation_pairs(archive, filtered)
print(f"selected {[len(r) for r in filtered.ranked]} captions per video, "
      f"{len(pairs)} augmentation pairs")
chosen, everything = [], []
for q, v, picks in zip(archive.queries, archive.videos, filtered.ranked):
    sims = v.caption_cls_embeddings @ q.global_embedding
    chosen.extend(sims[picks])
    everything.extend(sims)
print(f"mean cosine: chosen={np.mean(chosen):.3f} "
      f"vs all={np.mean(everything):.3f}")

# 2. Interaction. All transformer strategies start as exact identities
#    (zero-initialized output projections), so an untrained model scores
#    exactly like the caption-free baseline.
frames = T.tensor(archive.videos[0].frame_embeddings)
caps = T.tensor(archive.videos[0].caption_cls_embeddings)
for strategy in ("sum", "mlp", "cross", "coattn"):
    cfg = InteractionConfig(strategy=strategy, layers=1, heads=4, dim=16)
    params = init_interaction_params(cfg, seed=1)
    out = enhance(frames, caps, params, cfg)
    delta = float(np.max(np.abs(out.numpy() - frames.numpy())))
    print(f"  {strategy:<7} output shape {out.shape}, "
          f"max |enhanced - raw| at init = {delta:g}")

# 3. The caption branch aggregates caption embeddings into one unit vector;
#    zero encoder blocks means plain normalized mean pooling.
branch = init_caption_branch(layers=2, dim=16, heads=4, ffn_mult=4, seed=2)
agg = aggregate_captions(archive.videos[0].caption_cls_embeddings, branch)
print("aggregated caption vector norm:", round(float(np.linalg.norm(agg)), 6))
