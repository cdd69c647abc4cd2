"""End-to-end: train both branches, fuse scores, resume from a checkpoint.

Stage 1 fits the video branch (interaction weights) with the query-video
loss plus caption-video augmentation; stage 2 freezes it and fits the
caption aggregator with the query-caption loss. Evaluation fuses both
branch scores.
"""

import tempfile

from capmatch import (FusionConfig, MatchMode, SynthConfig, Temperature,
                      TrainConfig, checkpoint_load, checkpoint_save,
                      evaluate_archive, synthesize, train)
from capmatch.interaction import InteractionConfig

syn = dict(n=32, dim=24, frames=3, captions=4, words=5,
           sigma_q=1.0, sigma_v=1.4, sigma_c=0.5, distractor_fraction=0.2)
train_arch = synthesize(SynthConfig(**syn, seed=1))
heldout = synthesize(SynthConfig(**syn, seed=2, latent_seed=1, split="val"))

config = TrainConfig(
    batch_size=16, epochs_stage1=15, epochs_stage2=8, lr=2e-4,
    warmup_steps=8, seed=1,
    match_mode=MatchMode("global"),
    interaction=InteractionConfig(strategy="coattn", layers=1, heads=4, dim=24),
    caption_layers=2, aug_enabled=True, aug_top_k=1,
    temperature=Temperature(value=0.05), alpha=1.0, eval_every=5)

trainer, epoch_reports = train(train_arch, heldout, config)
first = next(r for r in trainer.step_history if r.get("total") is not None)
last = [r for r in trainer.step_history if r.get("total") is not None][-1]
print(f"trained {trainer.step} steps; loss {first['total']:.4f} -> "
      f"{last['total']:.4f}")
for rep in epoch_reports:
    if "val_r1_t2v" in rep:
        print(f"  epoch {rep['epoch']:>2} (stage {rep['stage']}): "
              f"val R@1 = {rep['val_r1_t2v']:.1f}")

for alpha in (0.0, 1.0):
    r1 = evaluate_archive(heldout, trainer.params, FusionConfig(alpha=alpha),
                          directions=("t2v",))["t2v"].r1
    label = "video only" if alpha == 0 else "fused     "
    print(f"held-out R@1, {label}: {r1:.1f}")

# Checkpoints capture parameters, optimizer moments, and the shuffle state:
# resuming continues the exact run.
with tempfile.TemporaryDirectory() as tmp:
    checkpoint_save(trainer, tmp)
    resumed = checkpoint_load(tmp, train_arch, heldout)
    print("checkpoint reload: step", resumed.step, "of", resumed.total_steps)
