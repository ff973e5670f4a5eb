"""Text-to-embedding extraction for the binary record format the
detector package consumes, plus word-level text perturbations."""

from .encode import (
    EncoderError,
    HashEncoder,
    load_encoder,
    segment_sentences,
    tokenize,
    tokenize_with_offsets,
)
from .records import (
    DimensionMismatch,
    FormatError,
    TokenRecord,
    append_corpus,
    read_corpus,
    write_corpus,
)
from .textops import (
    TEXT_KINDS,
    MarkovModel,
    changed_count,
    perturb_text,
)

__version__ = "0.1.0"

__all__ = [
    "DimensionMismatch",
    "EncoderError",
    "FormatError",
    "HashEncoder",
    "MarkovModel",
    "TEXT_KINDS",
    "TokenRecord",
    "append_corpus",
    "changed_count",
    "load_encoder",
    "perturb_text",
    "read_corpus",
    "segment_sentences",
    "tokenize",
    "tokenize_with_offsets",
    "write_corpus",
]
