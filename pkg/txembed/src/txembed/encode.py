"""Tokenization, sentence segmentation, and deterministic encoders.

The encoder family here is hash-based: each token's vector is drawn
from a generator seeded by the encoder name and the token text, so a
corpus encodes to the same bytes on every machine with no model
download.  Real pretrained backbones are out of scope; the record
format does not care where the vectors came from.
"""

from __future__ import annotations

import hashlib
import re

import numpy as np

# A token is a run of word characters (apostrophes included) or one
# non-space symbol; sentences end at terminal punctuation followed by
# whitespace or end of text.
TOKEN_RE = re.compile(r"[A-Za-z0-9_']+|[^\sA-Za-z0-9_']")
SENTENCE_END_RE = re.compile(r"[.!?]+(?:\s+|$)")

POOLING_MODES = ("mean", "cls")


class EncoderError(Exception):
    """Encoder name is unknown or unusable."""


def segment_sentences(text: str) -> list[str]:
    """Split on terminal punctuation; never fewer than one sentence."""
    chunks = []
    start = 0
    for match in SENTENCE_END_RE.finditer(text):
        chunks.append(text[start : match.end()])
        start = match.end()
    if start < len(text):
        chunks.append(text[start:])
    chunks = [c.strip() for c in chunks if c.strip()]
    return chunks or [text]


def tokenize(text: str) -> list[str]:
    return TOKEN_RE.findall(text)


def tokenize_with_offsets(text: str, max_len: int) -> tuple[list[str], tuple[int, ...]]:
    """Tokens truncated at max_len plus the token index of each sentence
    start that survived truncation."""
    if max_len < 1:
        raise ValueError("max length must be at least 1")
    tokens: list[str] = []
    offsets: list[int] = []
    for chunk in segment_sentences(text):
        chunk_tokens = tokenize(chunk)
        if not chunk_tokens or len(tokens) >= max_len:
            continue
        offsets.append(len(tokens))
        tokens.extend(chunk_tokens[: max_len - len(tokens)])
    return tokens, tuple(offsets)


class HashEncoder:
    """Encoder named "hash-<d>"; one fixed unit-scale normal vector per
    distinct token, independent of position."""

    def __init__(self, name: str):
        match = re.fullmatch(r"hash-(\d+)", name)
        if not match:
            raise EncoderError(f"unknown encoder: {name}")
        d = int(match.group(1))
        if d < 1:
            raise EncoderError(f"encoder dimension must be positive: {name}")
        self.name = name
        self.d = d
        self._cache: dict[str, np.ndarray] = {}

    def _vector(self, token: str) -> np.ndarray:
        cached = self._cache.get(token)
        if cached is None:
            digest = hashlib.blake2b(
                f"{self.name}\x00{token}".encode("utf-8"), digest_size=8
            ).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            cached = rng.standard_normal(self.d).astype(np.float32)
            self._cache[token] = cached
        return cached

    def encode(self, tokens: list[str]) -> np.ndarray:
        if not tokens:
            raise ValueError("cannot encode an empty token list")
        return np.stack([self._vector(tok) for tok in tokens])


def load_encoder(name: str) -> HashEncoder:
    return HashEncoder(name)
