"""Embedding-level perturbations and the per-band spectral shift they cause.

Token-level kinds edit rows of the token matrix; the affected-position count
is exactly round-half-up(rate * t_num), at least 1 whenever rate > 0.
sentence_reorder permutes whole sentence spans and theme_shift adds one
constant vector to every row, so both ignore the rate (rate = 0 still means
identity for every kind).  theme_shift is the analytically clean case: a
constant offset moves only bin 0 of the pooled spectrum, which makes its
band-shift signature exactly (positive, 0, 0).

Sentence offsets are carried through edits: deletions and insertions shift
the starts, sentences that lose every token are dropped, and s_num follows.
"""

from __future__ import annotations

import numpy as np

from .data import EmbeddingRecord
from .numerics import dft, n_one_sided
from .spectral import PartitionPolicy

__all__ = [
    "TOKEN_DELETE",
    "TOKEN_REPEAT",
    "TOKEN_REPLACE",
    "TOKEN_INSERT",
    "SENTENCE_REORDER",
    "THEME_SHIFT",
    "PERTURBATION_KINDS",
    "affected_count",
    "perturb",
    "mae_shift",
]

TOKEN_DELETE = "token_delete"
TOKEN_REPEAT = "token_repeat"
TOKEN_REPLACE = "token_replace"
TOKEN_INSERT = "token_insert"
SENTENCE_REORDER = "sentence_reorder"
THEME_SHIFT = "theme_shift"

TOKEN_KINDS = (TOKEN_DELETE, TOKEN_REPEAT, TOKEN_REPLACE, TOKEN_INSERT)
PERTURBATION_KINDS = TOKEN_KINDS + (SENTENCE_REORDER, THEME_SHIFT)


def affected_count(rate: float, t_num: int) -> int:
    """Round-half-up count of affected token positions, minimum 1 for any
    positive rate."""
    if rate == 0.0:
        return 0
    return max(1, int(np.floor(rate * t_num + 0.5)))


def _donor_rows(donor_pool, d: int) -> np.ndarray:
    if donor_pool is None:
        raise ValueError("missing donor pool")
    rows = []
    for rec in donor_pool:
        payload = rec.payload
        if payload.ndim != 2:
            raise ValueError("donor records need token matrices")
        if payload.shape[1] != d:
            raise ValueError("donor dimension mismatch")
        rows.append(payload)
    if not rows:
        raise ValueError("missing donor pool")
    return np.concatenate(rows, axis=0)


def _spans(offsets, t_num: int) -> list[tuple[int, int]]:
    starts = list(offsets)
    ends = starts[1:] + [t_num]
    return list(zip(starts, ends))


def _shift_offsets(offsets, t_num, deleted=(), inserted=()):
    """Recompute sentence starts after row deletions/insertions.

    Each start moves by the number of edits before it; sentences emptied by
    deletion collapse into their successor and are dropped.
    """
    if offsets is None:
        return None, None
    deleted = np.asarray(sorted(deleted), dtype=np.int64)
    inserted = np.asarray(sorted(inserted), dtype=np.int64)
    new_t = t_num - deleted.size + inserted.size
    moved = []
    for start in offsets:
        # A deleted start row hands the sentence to its next surviving row,
        # so only deletions strictly before the start shift it.
        shift = int(np.searchsorted(deleted, start, side="left"))
        gain = int(np.searchsorted(inserted, start, side="right"))
        moved.append(start - shift + gain)
    kept = sorted({max(0, min(o, new_t - 1)) for o in moved})
    if kept[0] != 0:
        kept = [0] + kept
    return tuple(kept), len(kept)


def perturb(
    record: EmbeddingRecord,
    kind: str,
    rate: float = 0.15,
    seed: int = 0,
    donor_pool=None,
    offset: float = 1.0,
) -> EmbeddingRecord:
    """Return an edited copy of the record, tagged `+<kind>@<rate>`."""
    if kind not in PERTURBATION_KINDS:
        raise ValueError(f"unknown perturbation kind: {kind!r}")
    if not (0.0 <= rate <= 1.0):
        raise ValueError("rate must lie in [0, 1]")
    if record.payload.ndim != 2:
        raise ValueError("missing token matrix")
    if rate == 0.0:
        return record

    rng = np.random.default_rng(seed)
    tokens = record.payload
    t_num = record.t_num
    d = record.d
    offsets = record.sentence_offsets
    s_num = record.s_num
    k = affected_count(rate, t_num)

    if kind == TOKEN_DELETE:
        if k >= t_num:
            raise ValueError("cannot delete every row")
        doomed = np.sort(rng.choice(t_num, size=k, replace=False))
        tokens = np.delete(tokens, doomed, axis=0)
        offsets, s_new = _shift_offsets(offsets, t_num, deleted=doomed)
        t_num -= k
        s_num = s_new if s_new is not None else s_num
    elif kind == TOKEN_REPEAT:
        picked = np.sort(rng.choice(t_num, size=k, replace=False))
        tokens = np.insert(tokens, picked + 1, tokens[picked], axis=0)
        offsets, s_new = _shift_offsets(offsets, t_num, inserted=picked + 1)
        t_num += k
        s_num = s_new if s_new is not None else s_num
    elif kind == TOKEN_REPLACE:
        donors = _donor_rows(donor_pool, d)
        picked = rng.choice(t_num, size=k, replace=False)
        drawn = rng.integers(0, donors.shape[0], size=k)
        tokens = tokens.copy()
        tokens[picked] = donors[drawn]
    elif kind == TOKEN_INSERT:
        donors = _donor_rows(donor_pool, d)
        slots = np.sort(rng.integers(0, t_num + 1, size=k))
        drawn = rng.integers(0, donors.shape[0], size=k)
        tokens = np.insert(tokens, slots, donors[drawn], axis=0)
        offsets, s_new = _shift_offsets(offsets, t_num, inserted=slots)
        t_num += k
        s_num = s_new if s_new is not None else s_num
    elif kind == SENTENCE_REORDER:
        if offsets is None:
            raise ValueError("missing sentence offsets")
        spans = _spans(offsets, t_num)
        order = rng.permutation(len(spans))
        pieces = [tokens[a:b] for a, b in spans]
        tokens = np.concatenate([pieces[i] for i in order], axis=0)
        starts = np.cumsum([0] + [pieces[i].shape[0] for i in order[:-1]])
        offsets = tuple(int(s) for s in starts)
    else:  # THEME_SHIFT
        tokens = tokens + offset

    return EmbeddingRecord(
        id=record.id,
        label=record.label,
        domain=record.domain,
        generator=f"{record.generator}+{kind}@{rate:g}",
        t_num=t_num,
        s_num=s_num,
        payload=tokens,
        sentence_offsets=offsets,
    )


def mae_shift(
    original: EmbeddingRecord,
    perturbed: EmbeddingRecord,
    policy: PartitionPolicy,
) -> tuple[float, float, float]:
    """Per-band mean absolute difference between the pooled modulus spectra,
    measured on the original record's band partition."""
    if original.d != perturbed.d:
        raise ValueError("dimension mismatch")
    m = n_one_sided(original.d)
    part = policy.partition_for(m, original.t_num, original.s_num)
    mod_a = np.abs(dft(original.pooled())[:m])
    mod_b = np.abs(dft(perturbed.pooled())[:m])
    diff = np.abs(mod_a - mod_b)
    out = []
    for name in ("low", "mid", "high"):
        size = part.band_size(name)
        out.append(float(diff[part.band_slice(name)].mean()) if size else 0.0)
    return tuple(out)
