"""Turn an input manifest of frames, queries, and captions into a CVRA v1
archive.

Input manifest: JSONL, one object per video::

    {"id": "...", "frames": ["f0.ppm", ...], "query": "...",
     "captions": ["...", ...]}
    {"id": "...", "video": "frames.npy", "query": "...", "captions": [...]}

Relative media paths resolve against the manifest's directory. Output is a
CVRA v1 directory: manifest.json, four raw little-endian float32 blobs, and
a captions.jsonl sidecar carrying the caption texts.

The exporter writes embeddings exactly as the encoder produced them; the
consuming engine owns normalization.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .encoders import load_encoder
from .errors import ManifestError
from .media import load_frame, load_video, sample_frames

CVRA_MAGIC = "CVRA"
CVRA_VERSION = 1

_BLOBS = (("word_embeddings", "words.f32"),
          ("query_globals", "qglobal.f32"),
          ("frame_embeddings", "frames.f32"),
          ("caption_cls", "captions.f32"))


@dataclass
class ExportJob:
    manifest_path: str
    output_path: str
    encoder: str = "hash:64"
    frames_per_video: int = 12
    max_words: int = 32
    split: str = "test"

    def validate(self) -> None:
        if self.frames_per_video < 1:
            raise ManifestError("frames_per_video must be >= 1")
        if self.max_words < 1:
            raise ManifestError("max_words must be >= 1")


@dataclass
class ExportReport:
    """What was written, plus the export-time sanity statistic."""
    count: int
    dim: int
    output_path: str
    top1_caption_cosine: float | None = None
    mean_caption_cosine: float | None = None
    per_video_frames: list[int] = field(default_factory=list)

    def caption_signal_ok(self) -> bool | None:
        if self.top1_caption_cosine is None:
            return None
        return self.top1_caption_cosine > self.mean_caption_cosine


def read_input_manifest(path: str) -> list[dict]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    entries = []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{lineno}: not valid JSON: {exc}") from exc
        if "id" not in obj or "query" not in obj:
            raise ManifestError(f"{path}:{lineno}: needs 'id' and 'query'")
        if ("frames" in obj) == ("video" in obj):
            raise ManifestError(
                f"{path}:{lineno}: exactly one of 'frames'/'video' required")
        obj.setdefault("captions", [])
        entries.append(obj)
    if not entries:
        raise ManifestError(f"{path}: manifest holds no entries")
    ids = [e["id"] for e in entries]
    if len(set(ids)) != len(ids):
        raise ManifestError(f"{path}: duplicate video ids")
    return entries


def _gather_frames(entry: dict, base_dir: str, target: int) -> list[np.ndarray]:
    if "frames" in entry:
        paths = [p if os.path.isabs(p) else os.path.join(base_dir, p)
                 for p in entry["frames"]]
        if not paths:
            raise ManifestError(f"video {entry['id']}: empty frame list")
        frames = [load_frame(p) for p in paths]
    else:
        path = entry["video"]
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        frames = load_video(path)
    return sample_frames(frames, target)


def export(job: ExportJob) -> ExportReport:
    """Encode every manifest entry and write one CVRA v1 archive."""
    job.validate()
    encoder = load_encoder(job.encoder)
    entries = read_input_manifest(job.manifest_path)
    base_dir = os.path.dirname(os.path.abspath(job.manifest_path))

    items = []
    words_rows, qglobal_rows, frame_rows, caption_rows = [], [], [], []
    caption_texts: list[tuple[str, list[str]]] = []
    per_video_frames = []
    top1_cosines: list[float] = []
    all_cosines: list[float] = []

    for entry in entries:
        frames = _gather_frames(entry, base_dir, job.frames_per_video)
        per_video_frames.append(len(frames))
        frame_vecs = np.stack([encoder.image.encode_image(f) for f in frames])
        words = encoder.text.encode_words(entry["query"], job.max_words)
        qglobal = encoder.text.encode_text(entry["query"])
        caps = [encoder.text.encode_text(c) for c in entry["captions"]]
        cap_mat = (np.stack(caps) if caps
                   else np.zeros((0, encoder.dim), dtype=np.float32))

        items.append({
            "id": entry["id"],
            "words": int(words.shape[0]),
            "frames": int(frame_vecs.shape[0]),
            "captions": int(cap_mat.shape[0]),
            "has_caption_text": bool(entry["captions"]),
        })
        words_rows.append(words)
        qglobal_rows.append(qglobal[None, :])
        frame_rows.append(frame_vecs)
        if cap_mat.shape[0]:
            caption_rows.append(cap_mat)
            caption_texts.append((entry["id"], list(entry["captions"])))
            qn = qglobal / np.linalg.norm(qglobal)
            cn = cap_mat / np.linalg.norm(cap_mat, axis=1, keepdims=True)
            sims = cn @ qn
            top1_cosines.append(float(sims.max()))
            all_cosines.extend(float(s) for s in sims)

    os.makedirs(job.output_path, exist_ok=True)
    groups = {"word_embeddings": words_rows, "query_globals": qglobal_rows,
              "frame_embeddings": frame_rows, "caption_cls": caption_rows}
    blobs = []
    for name, fname in _BLOBS:
        rows = groups[name]
        mat = (np.concatenate(rows, axis=0) if rows
               else np.zeros((0, encoder.dim), dtype=np.float32))
        raw = mat.astype("<f4", copy=False).tobytes()
        with open(os.path.join(job.output_path, fname), "wb") as fh:
            fh.write(raw)
        blobs.append({"name": name, "file": fname, "offset": 0,
                      "len_bytes": len(raw)})

    manifest = {
        "magic": CVRA_MAGIC,
        "version": CVRA_VERSION,
        "dim": encoder.dim,
        "count": len(items),
        "split": job.split,
        "items": items,
        "blobs": blobs,
    }
    with open(os.path.join(job.output_path, "manifest.json"), "w",
              encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
    if caption_texts:
        with open(os.path.join(job.output_path, "captions.jsonl"), "w",
                  encoding="utf-8") as fh:
            for vid, texts in caption_texts:
                fh.write(json.dumps({"id": vid, "texts": texts}) + "\n")

    return ExportReport(
        count=len(items), dim=encoder.dim, output_path=job.output_path,
        top1_caption_cosine=(float(np.mean(top1_cosines))
                             if top1_cosines else None),
        mean_caption_cosine=(float(np.mean(all_cosines))
                             if all_cosines else None),
        per_video_frames=per_video_frames)
