"""Independent CVRA v1 validator with per-field statistics.

This re-implements the format rules from the archive description (it shares
no code with any consumer): manifest magic/version, declared-vs-actual blob
byte counts, finite values, and per-group row-norm statistics. Zero-norm
rows are reported as warnings naming the item, since the consuming engine
will refuse to normalize them at load.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import BadMagic, NonFiniteValue, ShapeMismatch, VersionMismatch

_GROUPS = ("word_embeddings", "query_globals", "frame_embeddings", "caption_cls")


@dataclass
class SelfcheckReport:
    dim: int
    count: int
    split: str
    norm_stats: dict[str, dict[str, float]]
    caption_histogram: dict[int, int]
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.warnings

    def to_dict(self) -> dict:
        return {
            "dim": self.dim, "count": self.count, "split": self.split,
            "norm_stats": self.norm_stats,
            "caption_histogram": {str(k): v
                                  for k, v in sorted(self.caption_histogram.items())},
            "warnings": self.warnings,
        }


def _load_manifest(path: str) -> dict:
    mpath = os.path.join(path, "manifest.json")
    try:
        with open(mpath, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise BadMagic(f"unreadable manifest at {mpath}: {exc}") from exc
    if manifest.get("magic") != "CVRA":
        raise BadMagic(f"manifest magic is {manifest.get('magic')!r}, not 'CVRA'")
    if manifest.get("version") != 1:
        raise VersionMismatch(f"unsupported version {manifest.get('version')!r}")
    return manifest


def _expected_rows(manifest: dict) -> dict[str, int]:
    items = manifest["items"]
    return {
        "word_embeddings": sum(i["words"] for i in items),
        "query_globals": len(items),
        "frame_embeddings": sum(i["frames"] for i in items),
        "caption_cls": sum(i["captions"] for i in items),
    }


def _read_group(path: str, manifest: dict, name: str, rows: int) -> np.ndarray:
    dim = manifest["dim"]
    entry = next((b for b in manifest["blobs"] if b["name"] == name), None)
    if entry is None:
        raise ShapeMismatch(f"manifest lists no blob group {name!r}")
    expected = rows * dim * 4
    if entry["len_bytes"] != expected:
        raise ShapeMismatch(
            f"{name}: manifest says {entry['len_bytes']} bytes, items imply "
            f"{expected}")
    fpath = os.path.join(path, entry["file"])
    size = os.path.getsize(fpath)
    if size < entry["offset"] + expected:
        raise ShapeMismatch(f"{name}: {entry['file']} holds {size} bytes, "
                            f"needs {entry['offset'] + expected}")
    with open(fpath, "rb") as fh:
        fh.seek(entry["offset"])
        raw = fh.read(expected)
    return np.frombuffer(raw, dtype="<f4").reshape(rows, dim)


def selfcheck(archive_path: str) -> SelfcheckReport:
    """Validate an archive directory; raise on structural problems."""
    manifest = _load_manifest(archive_path)
    items = manifest["items"]
    if len(items) != manifest["count"]:
        raise ShapeMismatch(f"count {manifest['count']} vs {len(items)} items")
    rows = _expected_rows(manifest)
    mats = {name: _read_group(archive_path, manifest, name, rows[name])
            for name in _GROUPS}

    # item ownership of each row, for naming problems
    owners: dict[str, list[str]] = {g: [] for g in _GROUPS}
    for it in items:
        owners["word_embeddings"] += [it["id"]] * it["words"]
        owners["query_globals"].append(it["id"])
        owners["frame_embeddings"] += [it["id"]] * it["frames"]
        owners["caption_cls"] += [it["id"]] * it["captions"]

    warnings: list[str] = []
    norm_stats: dict[str, dict[str, float]] = {}
    for name, mat in mats.items():
        bad = ~np.isfinite(mat)
        if bad.any():
            row = int(np.argwhere(bad)[0][0])
            raise NonFiniteValue(
                f"{name}: non-finite value in item {owners[name][row]!r}")
        if mat.shape[0] == 0:
            norm_stats[name] = {"rows": 0}
            continue
        norms = np.linalg.norm(mat, axis=1)
        for row in np.nonzero(norms <= 1e-12)[0]:
            warnings.append(f"ZeroNormRow: {name} row of item "
                            f"{owners[name][int(row)]!r}")
        norm_stats[name] = {
            "rows": int(mat.shape[0]),
            "norm_min": float(norms.min()),
            "norm_mean": float(norms.mean()),
            "norm_max": float(norms.max()),
        }

    histogram: dict[int, int] = {}
    for it in items:
        histogram[it["captions"]] = histogram.get(it["captions"], 0) + 1

    return SelfcheckReport(dim=manifest["dim"], count=manifest["count"],
                           split=manifest.get("split", "?"),
                           norm_stats=norm_stats,
                           caption_histogram=histogram, warnings=warnings)
