"""Encoder registry: text and image featurizers addressed by identifier.

Two families:

* ``hash:<dim>`` - deterministic, checkpoint-free featurizers. Text becomes a
  bag of hashed token vectors (plus character trigrams for robustness to
  inflection); images become grid color statistics pushed through a fixed
  seeded projection. No external weights, stable across runs and machines.
* ``clip:<name>`` - placeholder for a real pretrained backbone. Loading
  requires the optional torch/open_clip stack; without it the registry
  raises EncoderLoadError, matching environments where no checkpoint is
  available.

Embeddings leave this module un-normalized; normalization is the consuming
engine's job.
"""

from __future__ import annotations

import hashlib
import re

import numpy as np

from .errors import EncoderLoadError

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def _seeded_vector(key: str, dim: int) -> np.ndarray:
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return rng.standard_normal(dim).astype(np.float32)


class HashTextEncoder:
    """Bag-of-hashed-tokens text featurizer."""

    def __init__(self, dim: int):
        self.dim = dim
        self._cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            vec = _seeded_vector("tok:" + token, self.dim)
            for i in range(len(token) - 2):
                vec = vec + 0.25 * _seeded_vector("tri:" + token[i:i + 3],
                                                  self.dim)
            self._cache[token] = vec
        return vec

    def tokenize(self, text: str) -> list[str]:
        return _TOKEN_RE.findall(text.lower())

    def encode_words(self, text: str, max_words: int) -> np.ndarray:
        """One row per real token, truncated; never padded."""
        tokens = self.tokenize(text)[:max_words]
        if not tokens:
            tokens = ["empty"]
        return np.stack([self._token_vector(t) for t in tokens])

    def encode_text(self, text: str) -> np.ndarray:
        """Global sentence embedding: mean of token vectors."""
        return self.encode_words(text, max_words=10 ** 9).mean(axis=0)


class PatchImageEncoder:
    """Grid color statistics through a fixed seeded projection."""

    GRID = 4

    def __init__(self, dim: int):
        self.dim = dim
        feat_len = self.GRID * self.GRID * 3 + 6
        rng = np.random.default_rng(
            int.from_bytes(hashlib.blake2b(f"img:{dim}".encode(),
                                           digest_size=8).digest(), "little"))
        self._proj = (rng.standard_normal((feat_len, dim))
                      / np.sqrt(feat_len)).astype(np.float32)

    def encode_image(self, pixels: np.ndarray) -> np.ndarray:
        """pixels: (H, W, 3) uint8 or float in [0, 255]."""
        img = np.asarray(pixels, dtype=np.float32) / 255.0
        if img.ndim == 2:
            img = np.repeat(img[:, :, None], 3, axis=2)
        h, w, _ = img.shape
        g = self.GRID
        cells = []
        for i in range(g):
            for j in range(g):
                cell = img[i * h // g:(i + 1) * h // g or None,
                           j * w // g:(j + 1) * w // g or None]
                cells.append(cell.reshape(-1, 3).mean(axis=0)
                             if cell.size else np.zeros(3, np.float32))
        feats = np.concatenate([
            np.concatenate(cells),
            img.reshape(-1, 3).mean(axis=0),
            img.reshape(-1, 3).std(axis=0),
        ]).astype(np.float32)
        return feats @ self._proj


class EncoderPair:
    def __init__(self, name: str, dim: int, text: HashTextEncoder,
                 image: PatchImageEncoder):
        self.name = name
        self.dim = dim
        self.text = text
        self.image = image


def load_encoder(identifier: str) -> EncoderPair:
    """Resolve an encoder identifier to a (text, image) featurizer pair."""
    if identifier.startswith("hash:"):
        try:
            dim = int(identifier.split(":", 1)[1])
        except ValueError as exc:
            raise EncoderLoadError(f"bad hash encoder id {identifier!r}") from exc
        if dim < 4:
            raise EncoderLoadError("hash encoder needs dim >= 4")
        return EncoderPair(identifier, dim, HashTextEncoder(dim),
                           PatchImageEncoder(dim))
    if identifier.startswith("clip:"):
        try:
            import open_clip  # noqa: F401
            import torch  # noqa: F401
        except ImportError as exc:
            raise EncoderLoadError(
                f"encoder {identifier!r} needs the optional torch/open_clip "
                f"stack, which is not installed") from exc
        raise EncoderLoadError(
            f"no checkpoint configured for {identifier!r} in this build")
    raise EncoderLoadError(f"unknown encoder identifier {identifier!r}")
