"""Acceptance suite: one test per release criterion, one printed verdict each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the PASS/FAIL line
for every criterion.
"""

import filecmp
import json
import math
import os
import sys
import time

import numpy as np

import capmatch.cli as cli
from capmatch import tensor as T
from capmatch.archive import SynthConfig, read_archive, synthesize, write_archive
from capmatch.caption_branch import aggregate_captions, init_caption_branch
from capmatch.errors import (BadMagic, NonFiniteValue, ShapeMismatch,
                             VersionMismatch)
from capmatch.evaluator import (FusionConfig, evaluate_archive,
                                ranks_from_scores)
from capmatch.gradcheck import run_gradcheck
from capmatch.interaction import (COATTN, CROSS, InteractionConfig, enhance,
                                  init_interaction_params, interact_mlp,
                                  interact_sum)
from capmatch.matching import (MatchMode, finegrained_similarity,
                               global_similarity, similarity_matrix)
from capmatch.model import init_model_params
from capmatch.objective import Temperature, symmetric_ce
from capmatch.trainer import (TrainConfig, Trainer, checkpoint_load,
                              checkpoint_save, run_ablation, standard_grid,
                              train)

GRADCHECK_TOL = 1e-5
ORACLE_TOL = 1e-6
INVARIANCE_TOL = 1e-6


def verdict(name: str, ok: bool, detail: str = "") -> None:
    line = f"[ACCEPTANCE] {name}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  ({detail})"
    print(line, file=sys.stderr)
    assert ok, line


def unit_rows(rng, shape):
    x = rng.standard_normal(shape).astype(np.float32)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


# --- 1. gradient suite --------------------------------------------------------------

def test_gradient_suite():
    t0 = time.monotonic()
    worst = run_gradcheck([0, 1, 2])
    elapsed = time.monotonic() - t0
    groups = {"mlp", "cross", "coattn_co", "coattn_temporal", "pooling",
              "caption_branch", "temperature"}
    ok = groups <= set(worst) and \
        all(err < GRADCHECK_TOL for err in worst.values()) and elapsed < 60.0
    detail = ", ".join(f"{g}={worst[g]:.2e}" for g in sorted(worst))
    verdict("gradient-suite", ok, f"{detail}; {elapsed:.1f}s")


# --- 2. loss closed forms --------------------------------------------------------------

def test_loss_closed_forms():
    single = symmetric_ce(np.array([[0.42]], dtype=np.float32), 0.07).item()
    identity = symmetric_ce(np.eye(2, dtype=np.float64), 1.0).item()
    constant = symmetric_ce(np.full((5, 5), 1.3, dtype=np.float64), 0.4).item()
    ok = (single == 0.0
          and abs(identity - math.log(1 + math.exp(-1))) < 1e-6
          and abs(constant - math.log(5)) < 1e-6)
    verdict("loss-closed-forms", ok,
            f"B1={single}, id2={identity:.6f}, const={constant:.6f}")


# --- 3. oracle equivalences ---------------------------------------------------------

def _maxsim_bruteforce(words, frames):
    w, f = len(words), len(frames)
    sims = [[float(np.dot(words[i], frames[j])) for j in range(f)]
            for i in range(w)]
    t2v = sum(max(row) for row in sims) / w
    v2t = sum(max(sims[i][j] for i in range(w)) for j in range(f)) / f
    return 0.5 * (t2v + v2t)


def test_oracle_equivalences():
    rng = np.random.default_rng(0)
    worst_fg = 0.0
    for _ in range(100):
        w, f, d = (int(rng.integers(1, 8)), int(rng.integers(1, 8)),
                   int(rng.integers(2, 16)))
        words, frames = unit_rows(rng, (w, d)), unit_rows(rng, (f, d))
        got = finegrained_similarity(words, frames)
        worst_fg = max(worst_fg, abs(got - _maxsim_bruteforce(words, frames)))

    ranks_ok = True
    for _ in range(100):
        n = int(rng.integers(2, 33))
        scores = rng.standard_normal((n, n)).astype(np.float32)
        for direction in ("t2v", "v2t"):
            s = scores if direction == "t2v" else scores.T
            oracle = [1 + sum(1 for j in range(n) if j != i and s[i, j] >= s[i, i])
                      for i in range(n)]
            ranks_ok = ranks_ok and ranks_from_scores(scores, direction) == oracle

    arch = synthesize(SynthConfig(n=6, dim=8, frames=3, captions=1, seed=1,
                                  sigma_q=0.8, sigma_v=0.8))
    videos = [v.frame_embeddings for v in arch.videos]
    worst_mat = 0.0
    for mode in (MatchMode("global"), MatchMode("finegrained")):
        fast = similarity_matrix(arch.queries, videos, mode, batched=True)
        slow = similarity_matrix(arch.queries, videos, mode, batched=False)
        worst_mat = max(worst_mat, float(np.max(np.abs(fast - slow))))

    ok = worst_fg < ORACLE_TOL and ranks_ok and worst_mat < ORACLE_TOL
    verdict("oracle-equivalences", ok,
            f"maxsim={worst_fg:.1e}, ranks={'ok' if ranks_ok else 'BAD'}, "
            f"matrix={worst_mat:.1e}")


# --- 4. zero-init identity ------------------------------------------------------------

def test_zero_init_identity():
    rng = np.random.default_rng(2)
    frames, caps = unit_rows(rng, (4, 16)), unit_rows(rng, (3, 16))
    exact = True
    for strategy in (CROSS, COATTN):
        cfg = InteractionConfig(strategy=strategy, layers=2, heads=4, dim=16)
        params = init_interaction_params(cfg, seed=3)
        out = enhance(T.tensor(frames), T.tensor(caps), params, cfg).numpy()
        exact = exact and np.array_equal(out, frames)
    branch0 = init_caption_branch(0, 16, 4, 4, seed=4)
    branch2 = init_caption_branch(2, 16, 4, 4, seed=4)
    exact = exact and np.array_equal(aggregate_captions(caps, branch0),
                                     aggregate_captions(caps, branch2))

    arch = synthesize(SynthConfig(n=10, dim=16, frames=3, captions=2,
                                  sigma_q=0.8, seed=5))
    coattn = init_model_params(16, MatchMode(),
                               InteractionConfig(strategy=COATTN, dim=16,
                                                 heads=4), 2, Temperature(),
                               seed=6)
    none = init_model_params(16, MatchMode(),
                             InteractionConfig(strategy="none", dim=16,
                                               heads=4), 0, Temperature(),
                             seed=6)
    ra = evaluate_archive(arch, coattn, FusionConfig(alpha=0.0))
    rb = evaluate_archive(arch, none, FusionConfig(alpha=0.0))
    reports_equal = all(
        ra[d].per_query_ranks == rb[d].per_query_ranks
        and (ra[d].r1, ra[d].r5, ra[d].r10, ra[d].mdr, ra[d].mnr)
        == (rb[d].r1, rb[d].r5, rb[d].r10, rb[d].mdr, rb[d].mnr)
        for d in ("t2v", "v2t"))
    verdict("zero-init-identity", exact and reports_equal,
            f"exact={exact}, fused-step0-report-match={reports_equal}")


# --- 5. invariance suite ---------------------------------------------------------------

def test_invariance_suite():
    rng = np.random.default_rng(7)
    worst = 0.0

    frames, caps = unit_rows(rng, (4, 8)), unit_rows(rng, (5, 8))
    perm = rng.permutation(5)
    worst = max(worst, float(np.max(np.abs(
        interact_sum(T.tensor(frames), T.tensor(caps)).numpy()
        - interact_sum(T.tensor(frames), T.tensor(caps[perm])).numpy()))))
    mlp_cfg = InteractionConfig(strategy="mlp", dim=8, heads=2)
    mlp_params = init_interaction_params(mlp_cfg, seed=8)
    worst = max(worst, float(np.max(np.abs(
        interact_mlp(T.tensor(frames), T.tensor(caps), mlp_params).numpy()
        - interact_mlp(T.tensor(frames), T.tensor(caps[perm]),
                       mlp_params).numpy()))))
    branch = init_caption_branch(1, 8, 2, 2, seed=9)
    for p in branch.params.values():
        p.data = p.data + 0.2 * rng.standard_normal(p.data.shape).astype(np.float32)
    worst = max(worst, float(np.max(np.abs(
        aggregate_captions(caps, branch) - aggregate_captions(caps[perm], branch)))))

    q = unit_rows(rng, (8,))
    fperm = rng.permutation(4)
    worst = max(worst, abs(global_similarity(q, frames)
                           - global_similarity(q, frames[fperm])))

    s = rng.standard_normal((6, 6))
    bperm = rng.permutation(6)
    worst = max(worst, abs(symmetric_ce(s, 0.5).item()
                           - symmetric_ce(s[np.ix_(bperm, bperm)], 0.5).item()))

    from capmatch.objective import _ce_rows
    row_shift = rng.standard_normal((6, 1))
    worst = max(worst, abs(_ce_rows(T.tensor(s, dtype=np.float64)).item()
                           - _ce_rows(T.tensor(s + row_shift,
                                               dtype=np.float64)).item()))
    col_shift = rng.standard_normal((1, 6))
    worst = max(worst, abs(
        _ce_rows(T.transpose(T.tensor(s, dtype=np.float64))).item()
        - _ce_rows(T.transpose(T.tensor(s + col_shift,
                                        dtype=np.float64))).item()))

    scores = rng.standard_normal((8, 8))
    monotone_ok = all(
        ranks_from_scores(f(scores), "t2v") == ranks_from_scores(scores, "t2v")
        for f in (lambda x: 2.5 * x - 1, np.tanh, lambda x: x ** 3))

    ok = worst < INVARIANCE_TOL and monotone_ok
    verdict("invariance-suite", ok, f"worst={worst:.1e}, monotone={monotone_ok}")


# --- 6. overfit regression ----------------------------------------------------------

def test_overfit_regression():
    t0 = time.monotonic()
    syn = dict(n=64, dim=32, frames=4, captions=5,
               sigma_q=0.3, sigma_v=0.3, sigma_c=0.3)
    train_arch = synthesize(SynthConfig(**syn, seed=7))
    heldout = synthesize(SynthConfig(**syn, seed=8, latent_seed=7, split="val"))
    cfg = TrainConfig(
        batch_size=32, epochs_stage1=80, epochs_stage2=20, lr=1e-3,
        warmup_steps=20, seed=7, match_mode=MatchMode(),
        interaction=InteractionConfig(strategy=COATTN, layers=1, heads=4,
                                      dim=32),
        caption_layers=2, aug_enabled=True, aug_top_k=1, lambda_aug=1.0,
        temperature=Temperature(value=0.05), alpha=1.0)
    trainer, _ = train(train_arch, None, cfg)
    steps_ok = trainer.step == 200
    losses = [r["total"] for r in trainer.step_history if r.get("total") is not None]
    loss_ok = losses[-1] < losses[0]
    fusion = FusionConfig(alpha=1.0)
    train_r1 = evaluate_archive(train_arch, trainer.params, fusion,
                                directions=("t2v",))["t2v"].r1
    held_r1 = evaluate_archive(heldout, trainer.params, fusion,
                               directions=("t2v",))["t2v"].r1
    elapsed = time.monotonic() - t0
    ok = steps_ok and loss_ok and train_r1 == 100.0 and held_r1 >= 90.0 \
        and elapsed < 300.0
    verdict("overfit-regression", ok,
            f"train R@1={train_r1}, heldout R@1={held_r1}, "
            f"loss {losses[0]:.2e}->{losses[-1]:.2e}, {elapsed:.0f}s")


# --- 7. ablation direction -----------------------------------------------------------

def test_ablation_direction():
    syn = dict(n=48, dim=24, frames=4, captions=6, sigma_q=1.0, sigma_v=1.5,
               sigma_c=0.5, distractor_fraction=0.2)
    means: dict[str, list[float]] = {}
    for seed in range(5):
        train_arch = synthesize(SynthConfig(**syn, seed=seed))
        heldout = synthesize(SynthConfig(**syn, seed=1000 + seed,
                                         latent_seed=seed, split="val"))
        base = TrainConfig(
            batch_size=16, epochs_stage1=20, epochs_stage2=10, lr=1e-4,
            warmup_steps=10, seed=seed, match_mode=MatchMode(),
            interaction=InteractionConfig(strategy="none", layers=1, heads=4,
                                          dim=24),
            caption_layers=2, temperature=Temperature(value=0.05))
        for row in run_ablation(standard_grid(base, COATTN), train_arch,
                                heldout, seeds=[seed]):
            means.setdefault(row["label"], []).append(row["r1_mean"])
    avg = {label: float(np.mean(vals)) for label, vals in means.items()}
    baseline = avg["baseline"]
    ok = (avg["+aug"] >= baseline - 1.0
          and avg["+interaction"] >= baseline - 1.0
          and avg["+fusion"] >= baseline - 1.0
          and avg["combined"] >= baseline + 2.0)
    verdict("ablation-direction", ok,
            ", ".join(f"{k}={v:.2f}" for k, v in sorted(avg.items())))


# --- 8. determinism -------------------------------------------------------------------

def test_determinism(tmp_path, capsys):
    corpus = str(tmp_path / "corpus")
    assert cli.main(["synth", "--n", "12", "--dim", "8", "--frames", "2",
                     "--captions", "2", "--words", "3", "--seed", "3",
                     "--out", corpus]) == 0
    outs = []
    ckpts = []
    for tag in ("a", "b"):
        ckpt = str(tmp_path / f"ckpt_{tag}")
        assert cli.main(["train", "--train", corpus, "--out", ckpt,
                         "--epochs-stage1", "2", "--epochs-stage2", "1",
                         "--batch-size", "4", "--strategy", "coattn",
                         "--heads", "2", "--caption-layers", "1",
                         "--threads", "1", "--aug-enabled"]) == 0
        ckpts.append(ckpt)
        assert cli.main(["eval", "--archive", corpus, "--checkpoint", ckpt,
                         "--threads", "1"]) == 0
        outs.append(capsys.readouterr().out.splitlines()[-1])
    checkpoints_identical = all(
        filecmp.cmp(os.path.join(ckpts[0], f), os.path.join(ckpts[1], f),
                    shallow=False)
        for f in ("state.json", "tensors.bin"))
    reports_identical = outs[0] == outs[1]

    arch = read_archive(corpus)
    cfg = TrainConfig(batch_size=4, epochs_stage1=3, epochs_stage2=1,
                      lr=5e-4, warmup_steps=2, seed=5, match_mode=MatchMode(),
                      interaction=InteractionConfig(strategy=COATTN, layers=1,
                                                    heads=2, dim=8),
                      caption_layers=1, aug_enabled=True,
                      temperature=Temperature(value=0.05))
    straight = Trainer(arch, None, cfg)
    straight.train()
    part = Trainer(arch, None, cfg)
    part.run_steps(5)
    checkpoint_save(part, str(tmp_path / "mid"))
    resumed = checkpoint_load(str(tmp_path / "mid"), arch)
    resumed.train()
    resume_ok = all(
        np.array_equal(straight.params.named_params()[n].data,
                       resumed.params.named_params()[n].data)
        for n in straight.params.named_params())
    ok = checkpoints_identical and reports_identical and resume_ok
    verdict("determinism", ok,
            f"ckpt={checkpoints_identical}, report={reports_identical}, "
            f"resume={resume_ok}")


# --- 9. format ------------------------------------------------------------------------

def test_format_roundtrip_and_corruption(tmp_path):
    arch = synthesize(SynthConfig(n=5, dim=8, frames=2, captions=2, words=3,
                                  seed=9))
    arch.videos[0].caption_texts = ["a", "b"]
    path = str(tmp_path / "arch")
    write_archive(arch, path)
    loaded = read_archive(path)
    bitwise = all(
        np.array_equal(a.word_embeddings, b.word_embeddings)
        and np.array_equal(a.global_embedding, b.global_embedding)
        for a, b in zip(arch.queries, loaded.queries)) and all(
        np.array_equal(a.frame_embeddings, b.frame_embeddings)
        and np.array_equal(a.caption_cls_embeddings, b.caption_cls_embeddings)
        and a.caption_texts == b.caption_texts
        for a, b in zip(arch.videos, loaded.videos))

    def corrupted(mutate):
        p = str(tmp_path / f"bad_{mutate.__name__}")
        write_archive(arch, p)
        mutate(p)
        return p

    def bad_magic(p):
        m = json.load(open(os.path.join(p, "manifest.json")))
        m["magic"] = "NOPE"
        json.dump(m, open(os.path.join(p, "manifest.json"), "w"))

    def bad_version(p):
        m = json.load(open(os.path.join(p, "manifest.json")))
        m["version"] = 2
        json.dump(m, open(os.path.join(p, "manifest.json"), "w"))

    def bad_shape(p):
        m = json.load(open(os.path.join(p, "manifest.json")))
        m["items"][0]["frames"] += 1
        json.dump(m, open(os.path.join(p, "manifest.json"), "w"))

    def bad_float(p):
        f = os.path.join(p, "captions.f32")
        data = np.frombuffer(open(f, "rb").read(), dtype="<f4").copy()
        data[3] = np.inf
        open(f, "wb").write(data.tobytes())

    errors_ok = True
    for mutate, expected in ((bad_magic, BadMagic), (bad_version, VersionMismatch),
                             (bad_shape, ShapeMismatch), (bad_float, NonFiniteValue)):
        try:
            read_archive(corrupted(mutate))
            errors_ok = False
        except expected:
            pass
        except Exception:
            errors_ok = False
    verdict("format", bitwise and errors_ok,
            f"roundtrip-bitwise={bitwise}, corruption-errors={errors_ok}")
