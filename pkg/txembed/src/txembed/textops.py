"""Word-level text perturbations: delete, insert, repeat, generate.

All four touch exactly `changed_count(rate, word_count)` positions.
Insert and generate need a language model; the one provided here is a
bigram chain built from the corpus being perturbed, which keeps runs
deterministic under a seed with nothing to download.
"""

from __future__ import annotations

import math

import numpy as np

DELETE = "delete"
INSERT = "insert"
REPEAT = "repeat"
GENERATE = "generate"
TEXT_KINDS = (DELETE, INSERT, REPEAT, GENERATE)
LM_KINDS = (INSERT, GENERATE)


def changed_count(rate: float, word_count: int) -> int:
    """Nearest integer to rate * word_count, halves rounding up."""
    if rate < 0:
        raise ValueError("rate must be nonnegative")
    return int(math.floor(rate * word_count + 0.5))


class MarkovModel:
    """Bigram chain over whitespace words."""

    def __init__(self, vocab: list[str], successors: dict[str, list[str]]):
        if not vocab:
            raise ValueError("empty corpus for the language model")
        self.vocab = vocab
        self.successors = successors

    @classmethod
    def from_texts(cls, texts) -> "MarkovModel":
        seen: set[str] = set()
        successors: dict[str, list[str]] = {}
        for text in texts:
            words = text.split()
            seen.update(words)
            for prev, nxt in zip(words, words[1:]):
                successors.setdefault(prev, []).append(nxt)
        return cls(sorted(seen), successors)

    def sample(self, context: str | None, rng: np.random.Generator) -> str:
        pool = self.successors.get(context) if context is not None else None
        if not pool:
            pool = self.vocab
        return pool[int(rng.integers(len(pool)))]

    def continuation(self, context: str | None, count: int, rng) -> list[str]:
        out = []
        for _ in range(count):
            word = self.sample(context, rng)
            out.append(word)
            context = word
        return out


def perturb_text(
    text: str,
    kind: str,
    rate: float = 0.15,
    seed: int = 0,
    lm: MarkovModel | None = None,
) -> str:
    if kind not in TEXT_KINDS:
        raise ValueError(f"unknown perturbation kind: {kind}")
    if kind in LM_KINDS and lm is None:
        raise ValueError(f"{kind} needs a language model")
    words = text.split()
    k = changed_count(rate, len(words))
    if k == 0:
        return text
    rng = np.random.default_rng(seed)

    if kind == DELETE:
        drop = set(rng.choice(len(words), size=min(k, len(words)), replace=False).tolist())
        return " ".join(w for i, w in enumerate(words) if i not in drop)

    if kind == REPEAT:
        dup = set(rng.choice(len(words), size=min(k, len(words)), replace=False).tolist())
        out = []
        for i, w in enumerate(words):
            out.append(w)
            if i in dup:
                out.append(w)
        return " ".join(out)

    if kind == INSERT:
        slots = sorted(
            rng.choice(len(words) + 1, size=min(k, len(words) + 1), replace=False).tolist(),
            reverse=True,
        )
        out = list(words)
        for pos in slots:
            context = out[pos - 1] if pos > 0 else None
            out.insert(pos, lm.sample(context, rng))
        return " ".join(out)

    boundary = int(rng.integers(1, len(words) + 1))
    context = words[boundary - 1]
    spliced = words[:boundary] + lm.continuation(context, k, rng) + words[boundary:]
    return " ".join(spliced)
