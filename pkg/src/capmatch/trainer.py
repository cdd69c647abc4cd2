"""Two-stage training loop over a train archive, with checkpoints.

Stage 1 fits the video branch (interaction weights, pooling vectors, and the
temperature when learnable) with the query-video contrastive loss, plus the
caption-video augmentation loss when enabled. Stage 2 freezes the video
branch and fits only the caption-branch aggregator with the query-caption
loss under a frozen temperature.

Everything is deterministic given the config and seed: batch order comes
from one seeded shuffle per epoch, and checkpoints capture enough state
(including the shuffle generator as of the start of the current epoch) that
resuming reproduces an uninterrupted run bit for bit.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import tensor as T
from .archive import EmbeddingArchive
from .caption_branch import aggregate_captions_t
from .captions import FilteredCaptions, build_augmentation_pairs, filter_captions
from .errors import ConfigInvalid, ShapeMismatch, VersionMismatch
from .evaluator import FusionConfig, evaluate_archive
from .interaction import NONE, InteractionConfig, enhance
from .matching import GLOBAL, MatchMode, finegrained_similarity_t
from .model import init_model_params
from .objective import AdamState, Temperature, adam_step, lr_schedule, total_loss

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs_stage1: int = 10
    epochs_stage2: int = 5
    lr: float = 1e-3
    warmup_steps: int = 20
    seed: int = 0
    match_mode: MatchMode = field(default_factory=MatchMode)
    interaction: InteractionConfig = field(default_factory=InteractionConfig)
    caption_layers: int = 2
    aug_enabled: bool = False
    aug_top_k: int = 1
    lambda_aug: float = 1.0
    temperature: Temperature = field(default_factory=Temperature)
    alpha: float = 1.0
    eval_every: int = 0

    def validate(self) -> None:
        if self.batch_size < 2:
            raise ConfigInvalid("batch_size must be >= 2 (contrastive loss "
                                "degenerates at B=1)")
        if self.epochs_stage1 < 0 or self.epochs_stage2 < 0:
            raise ConfigInvalid("epoch counts must be >= 0")
        if self.lr <= 0 or self.warmup_steps < 0:
            raise ConfigInvalid("need lr > 0 and warmup_steps >= 0")
        if self.aug_top_k < 1 or self.lambda_aug < 0:
            raise ConfigInvalid("need aug_top_k >= 1 and lambda_aug >= 0")
        if self.caption_layers < 0 or self.eval_every < 0 or self.alpha < 0:
            raise ConfigInvalid("caption_layers, eval_every, alpha must be >= 0")
        self.match_mode.validate()
        self.interaction.validate()
        self.temperature.validate()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["match_mode"] = MatchMode(**d.get("match_mode", {}))
        d["interaction"] = InteractionConfig(**d.get("interaction", {}))
        d["temperature"] = Temperature(**d.get("temperature", {}))
        return cls(**d)


class Trainer:
    """Owns the model parameters, optimizer state, and the batch cursor."""

    def __init__(self, train_archive: EmbeddingArchive,
                 val_archive: EmbeddingArchive | None,
                 config: TrainConfig):
        config.validate()
        if config.interaction.dim != train_archive.dim:
            raise ConfigInvalid(
                f"interaction dim {config.interaction.dim} does not match "
                f"archive dim {train_archive.dim}")
        self.config = config
        self.train_archive = train_archive
        self.val_archive = val_archive
        self.params = init_model_params(
            dim=train_archive.dim,
            match_mode=config.match_mode,
            interaction=config.interaction,
            caption_layers=config.caption_layers,
            temperature=config.temperature,
            seed=config.seed,
        )
        # One optimizer state per stage: stage 2 starts with fresh moments
        # and a fresh bias-correction counter.
        self.adam = {1: AdamState(), 2: AdamState()}
        self.step = 0
        self.epoch = 0
        self.batch_pos = 0
        self.step_history: list[dict] = []
        self.epoch_reports: list[dict] = []
        self._rng = np.random.default_rng(config.seed)
        self._rng_state_pre_epoch = self._rng.bit_generator.state
        self._epoch_order: np.ndarray | None = None

        self._filtered: FilteredCaptions | None = None
        self._aug_by_video: dict[int, list[np.ndarray]] = {}
        if config.aug_enabled:
            self._filtered = filter_captions(train_archive, config.aug_top_k)
            for cap, vidx in build_augmentation_pairs(train_archive, self._filtered):
                self._aug_by_video.setdefault(vidx, []).append(cap)

    # --- epoch / step bookkeeping -------------------------------------------

    @property
    def steps_per_epoch(self) -> int:
        n, b = self.train_archive.count, self.config.batch_size
        full, rem = divmod(n, b)
        return full + (1 if rem >= 2 else 0)

    @property
    def total_epochs(self) -> int:
        return self.config.epochs_stage1 + self.config.epochs_stage2

    @property
    def total_steps(self) -> int:
        return self.total_epochs * self.steps_per_epoch

    def _stage(self, epoch: int) -> int:
        return 1 if epoch < self.config.epochs_stage1 else 2

    def _stage_schedule(self, epoch: int) -> tuple[int, int]:
        """(1-indexed step within stage, total steps of that stage)."""
        spe = self.steps_per_epoch
        if self._stage(epoch) == 1:
            done = epoch * spe + self.batch_pos
            return done + 1, self.config.epochs_stage1 * spe
        done = (epoch - self.config.epochs_stage1) * spe + self.batch_pos
        return done + 1, self.config.epochs_stage2 * spe

    def _batches(self, order: np.ndarray) -> list[np.ndarray]:
        b = self.config.batch_size
        chunks = [order[i:i + b] for i in range(0, len(order), b)]
        return [c for c in chunks if len(c) >= 2]

    def _ensure_epoch_order(self) -> None:
        if self._epoch_order is None:
            self._rng_state_pre_epoch = self._rng.bit_generator.state
            self._epoch_order = self._rng.permutation(self.train_archive.count)

    # --- forward passes --------------------------------------------------------

    def _enhanced_frames(self, vidx: int) -> T.Tensor:
        v = self.train_archive.videos[vidx]
        frames = T.tensor(v.frame_embeddings)
        if self.config.interaction.strategy == NONE or v.num_captions == 0:
            return frames
        return enhance(frames, T.tensor(v.caption_cls_embeddings),
                       self.params.interaction_params, self.config.interaction)

    def _qv_matrix(self, batch: np.ndarray,
                   enhanced: list[T.Tensor]) -> tuple[T.Tensor, T.Tensor]:
        """(B, B) query-video similarities plus the global video features."""
        vfeats = T.concat_rows([T.mean_rows(e) for e in enhanced])
        if self.config.match_mode.kind == GLOBAL:
            q = np.stack([self.train_archive.queries[i].global_embedding
                          for i in batch])
            qn = q / np.sqrt((q * q).sum(axis=1, keepdims=True))
            sims = T.matmul(T.tensor(qn), T.transpose(T.l2_normalize(vfeats)))
            return sims, vfeats
        rows = []
        normed = [T.l2_normalize(e) for e in enhanced]
        for i in batch:
            words = T.tensor(self.train_archive.queries[i].word_embeddings)
            cells = [T.reshape(
                finegrained_similarity_t(words, nf,
                                         self.config.match_mode.pooling,
                                         self.params.pooling), (1, 1))
                     for nf in normed]
            rows.append(T.concat_cols(cells))
        return T.concat_rows(rows), vfeats

    def _aug_matrix(self, batch: np.ndarray,
                    vfeats: T.Tensor) -> T.Tensor | None:
        """Square caption-video grid over the batch's augmentation pairs."""
        caps: list[np.ndarray] = []
        owners: list[int] = []  # position within the batch
        for pos, vidx in enumerate(batch):
            for cap in self._aug_by_video.get(int(vidx), []):
                caps.append(cap)
                owners.append(pos)
        if len(caps) < 2:
            return None
        cmat = np.stack(caps)
        vn = T.l2_normalize(vfeats)
        vsel = T.concat_rows([T.slice_rows(vn, pos, pos + 1) for pos in owners])
        return T.matmul(T.tensor(cmat), T.transpose(vsel))

    def _qc_matrix(self, batch: np.ndarray) -> T.Tensor | None:
        keep = [i for i in batch if self.train_archive.videos[i].num_captions > 0]
        if len(keep) < 2:
            return None
        aggs = [aggregate_captions_t(
            T.tensor(self.train_archive.videos[i].caption_cls_embeddings),
            self.params.caption_branch) for i in keep]
        q = np.stack([self.train_archive.queries[i].global_embedding for i in keep])
        qn = q / np.sqrt((q * q).sum(axis=1, keepdims=True))
        return T.matmul(T.tensor(qn), T.transpose(T.concat_rows(aggs)))

    # --- stepping -------------------------------------------------------------

    def _run_one_step(self, batch: np.ndarray) -> dict:
        stage = self._stage(self.epoch)
        step_in_stage, stage_total = self._stage_schedule(self.epoch)
        lr = lr_schedule(step_in_stage, self.config.lr,
                         self.config.warmup_steps, stage_total)
        named = self.params.named_params()
        record = {"step": self.step + 1, "stage": stage, "lr": lr}

        with T.GradTape() as tape:
            if stage == 1:
                enhanced = [self._enhanced_frames(int(i)) for i in batch]
                qv, vfeats = self._qv_matrix(batch, enhanced)
                aug = self._aug_matrix(batch, vfeats) if self.config.aug_enabled \
                    else None
                loss, breakdown = total_loss(qv, None, aug, self.params.tau,
                                             self.config.lambda_aug)
                trainable = self.params.video_branch_names()
            else:
                qc = self._qc_matrix(batch)
                if qc is None:
                    record.update({"skipped": True, "loss": None})
                    return record
                tau_frozen = T.tensor(self.params.tau.data.copy())
                loss, breakdown = total_loss(None, qc, None, tau_frozen, 0.0)
                trainable = self.params.caption_branch_names()
            if loss.node is None:
                # No trainable parameter touched this loss (e.g. global
                # matching without interaction): nothing to update.
                record.update(breakdown)
                return record
            grads = T.backward(loss, tape)

        grad_by_name = {}
        for name in trainable:
            g = grads.get(named[name])
            if g is not None:
                grad_by_name[name] = g
        adam_step({n: named[n] for n in trainable}, grad_by_name,
                  self.adam[stage], lr)
        if stage == 1 and self.config.temperature.learnable:
            self.config.temperature.clamp_(self.params.tau)
        record.update(breakdown)
        return record

    def run_steps(self, max_steps: int) -> int:
        """Advance up to ``max_steps`` optimizer steps; returns how many ran."""
        done = 0
        while done < max_steps and self.epoch < self.total_epochs:
            self._ensure_epoch_order()
            batches = self._batches(self._epoch_order)
            if self.batch_pos >= len(batches):
                self._finish_epoch()
                continue
            record = self._run_one_step(batches[self.batch_pos])
            self.batch_pos += 1
            self.step += 1
            done += 1
            self.step_history.append(record)
            if self.batch_pos >= len(batches):
                self._finish_epoch()
        return done

    def _finish_epoch(self) -> None:
        spe = self.steps_per_epoch
        epoch_records = self.step_history[-spe:] if spe else []
        report = {"epoch": self.epoch,
                  "stage": self._stage(self.epoch),
                  "mean_loss": _mean_of(epoch_records, "total")}
        is_last = self.epoch == self.total_epochs - 1
        cadence = self.config.eval_every
        if self.val_archive is not None and (
                is_last or (cadence and (self.epoch + 1) % cadence == 0)):
            reports = evaluate_archive(self.val_archive, self.params,
                                       FusionConfig(alpha=self.config.alpha))
            report["val_r1_t2v"] = reports["t2v"].r1
        self.epoch_reports.append(report)
        self.epoch += 1
        self.batch_pos = 0
        self._epoch_order = None

    def train(self) -> list[dict]:
        """Run every remaining epoch; returns the per-epoch reports."""
        self.run_steps(self.total_steps)
        return self.epoch_reports

    # --- checkpointing -----------------------------------------------------------

    def save(self, path: str) -> None:
        checkpoint_save(self, path)


def _mean_of(records: list[dict], key: str) -> float | None:
    vals = [r[key] for r in records if r.get(key) is not None]
    return float(np.mean(vals)) if vals else None


def train(train_archive: EmbeddingArchive, val_archive: EmbeddingArchive | None,
          config: TrainConfig) -> tuple[Trainer, list[dict]]:
    """Convenience wrapper: build a Trainer and run it to completion."""
    trainer = Trainer(train_archive, val_archive, config)
    reports = trainer.train()
    return trainer, reports


# --- checkpoint files ----------------------------------------------------------

def checkpoint_save(trainer: Trainer, path: str) -> None:
    """Directory checkpoint: state.json plus one raw float32 tensor blob."""
    os.makedirs(path, exist_ok=True)
    named = trainer.params.named_params()
    entries = []
    payload = bytearray()

    def push(name: str, kind: str, arr: np.ndarray) -> None:
        raw = arr.astype("<f4", copy=False).tobytes()
        entries.append({"name": name, "kind": kind, "shape": list(arr.shape),
                        "offset": len(payload), "len_bytes": len(raw)})
        payload.extend(raw)

    for name, p in named.items():
        push(name, "param", p.data)
    for stage in (1, 2):
        for name, m in trainer.adam[stage].m.items():
            push(name, f"adam{stage}_m", m)
        for name, v in trainer.adam[stage].v.items():
            push(name, f"adam{stage}_v", v)

    state = {
        "format": "capmatch-checkpoint",
        "version": CHECKPOINT_VERSION,
        "dim": trainer.train_archive.dim,
        "step": trainer.step,
        "epoch": trainer.epoch,
        "batch_pos": trainer.batch_pos,
        "adam_steps": {"1": trainer.adam[1].step, "2": trainer.adam[2].step},
        "rng_state_pre_epoch": trainer._rng_state_pre_epoch,
        "rng_state": trainer._rng.bit_generator.state,
        "config": trainer.config.to_dict(),
        "step_history": trainer.step_history,
        "epoch_reports": trainer.epoch_reports,
        "tensors": entries,
    }
    with open(os.path.join(path, "tensors.bin"), "wb") as fh:
        fh.write(bytes(payload))
    with open(os.path.join(path, "state.json"), "w", encoding="utf-8") as fh:
        json.dump(state, fh, indent=1, sort_keys=True)


def checkpoint_load(path: str, train_archive: EmbeddingArchive,
                    val_archive: EmbeddingArchive | None = None) -> Trainer:
    """Rebuild a Trainer whose continuation matches the saved run bitwise."""
    with open(os.path.join(path, "state.json"), "r", encoding="utf-8") as fh:
        state = json.load(fh)
    if state.get("format") != "capmatch-checkpoint" or \
            state.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatch(f"unsupported checkpoint {state.get('format')!r} "
                              f"v{state.get('version')!r}")
    if state["dim"] != train_archive.dim:
        raise VersionMismatch(
            f"checkpoint dim {state['dim']} vs archive dim {train_archive.dim}")

    config = TrainConfig.from_dict(state["config"])
    trainer = Trainer(train_archive, val_archive, config)

    with open(os.path.join(path, "tensors.bin"), "rb") as fh:
        blob = fh.read()
    named = trainer.params.named_params()
    for e in state["tensors"]:
        raw = blob[e["offset"]:e["offset"] + e["len_bytes"]]
        if len(raw) != e["len_bytes"]:
            raise ShapeMismatch(f"checkpoint blob truncated at {e['name']}")
        arr = np.frombuffer(raw, dtype="<f4").reshape(e["shape"]).astype(np.float32)
        if e["kind"] == "param":
            if e["name"] not in named:
                raise VersionMismatch(f"unknown parameter {e['name']!r}")
            if tuple(arr.shape) != named[e["name"]].data.shape:
                raise VersionMismatch(f"parameter {e['name']!r} shape changed")
            named[e["name"]].data = arr
        elif e["kind"] in ("adam1_m", "adam2_m"):
            trainer.adam[int(e["kind"][4])].m[e["name"]] = arr.copy()
        elif e["kind"] in ("adam1_v", "adam2_v"):
            trainer.adam[int(e["kind"][4])].v[e["name"]] = arr.copy()

    trainer.adam[1].step = state["adam_steps"]["1"]
    trainer.adam[2].step = state["adam_steps"]["2"]
    trainer.step = state["step"]
    trainer.epoch = state["epoch"]
    trainer.batch_pos = state["batch_pos"]
    trainer.step_history = state["step_history"]
    trainer.epoch_reports = state["epoch_reports"]
    trainer._rng_state_pre_epoch = _rng_state_from_json(state["rng_state_pre_epoch"])
    if trainer.batch_pos > 0:
        # Mid-epoch: regenerate this epoch's shuffle from its pre-epoch state.
        trainer._rng.bit_generator.state = trainer._rng_state_pre_epoch
        trainer._epoch_order = trainer._rng.permutation(train_archive.count)
    else:
        trainer._rng.bit_generator.state = _rng_state_from_json(state["rng_state"])
        trainer._epoch_order = None
    return trainer


def _rng_state_from_json(d: dict) -> dict:
    # json turns the PCG64 state ints into ints already; pass through.
    return d


# --- ablation harness ------------------------------------------------------------

def run_ablation(train_config_grid: list[tuple[str, TrainConfig]],
                 train_archive: EmbeddingArchive,
                 val_archive: EmbeddingArchive,
                 seeds: list[int]) -> list[dict]:
    """Train/evaluate every (label, config) over every seed.

    Returns one row per label with per-seed and mean held-out text-to-video
    R@1 under that config's fusion weight.
    """
    rows = []
    for label, base in train_config_grid:
        r1s = []
        for seed in seeds:
            config = replace(base, seed=seed)
            trainer, _ = train(train_archive, val_archive, config)
            reports = evaluate_archive(val_archive, trainer.params,
                                       FusionConfig(alpha=config.alpha))
            r1s.append(reports["t2v"].r1)
        rows.append({"label": label, "seeds": list(seeds),
                     "r1_per_seed": r1s, "r1_mean": float(np.mean(r1s))})
    return rows


def standard_grid(base: TrainConfig,
                  interaction_strategy: str = "coattn") -> list[tuple[str, TrainConfig]]:
    """Component ladder: baseline, +aug, +interaction, +fusion, combined."""
    none_cfg = replace(base.interaction, strategy=NONE)
    inter_cfg = replace(base.interaction, strategy=interaction_strategy)
    return [
        ("baseline", replace(base, aug_enabled=False, alpha=0.0,
                             interaction=none_cfg)),
        ("+aug", replace(base, aug_enabled=True, alpha=0.0,
                         interaction=none_cfg)),
        ("+interaction", replace(base, aug_enabled=False, alpha=0.0,
                                 interaction=inter_cfg)),
        ("+fusion", replace(base, aug_enabled=False, alpha=1.0,
                            interaction=none_cfg)),
        ("combined", replace(base, aug_enabled=True, alpha=1.0,
                             interaction=inter_cfg)),
    ]
