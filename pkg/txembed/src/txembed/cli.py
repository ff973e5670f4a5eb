"""Command-line surface: `extract` turns JSON-lines text corpora into
binary embedding-record files; `perturb-text` rewrites the texts with
word-level edits and emits JSON lines that feed straight back into
`extract`.

Exit codes: 0 success, 1 usage error, 2 unreadable or malformed input,
3 encoder failure, 4 feature-dimension mismatch against an existing
output file.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .encode import POOLING_MODES, EncoderError, load_encoder, tokenize_with_offsets
from .records import DimensionMismatch, FormatError, TokenRecord, append_corpus, read_corpus
from .textops import LM_KINDS, TEXT_KINDS, MarkovModel, perturb_text

OK, USAGE_ERROR, INPUT_ERROR, ENCODER_ERROR, DIMENSION_ERROR = 0, 1, 2, 3, 4

DOC_KEYS = ("text", "label", "domain", "generator", "scale")


class UsageError(Exception):
    """Malformed invocation; maps to exit status 1."""


class InputError(Exception):
    """Input file unreadable or a line violates the document schema."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 by default, which this tool reserves
    # for input errors; route parse failures through the usage path.
    def error(self, message):
        raise UsageError(message)


def read_documents(path) -> list[dict]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(str(exc)) from None
    docs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise InputError(f"line {lineno}: not JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise InputError(f"line {lineno}: expected an object")
        missing = [key for key in DOC_KEYS if key not in doc]
        if missing:
            raise InputError(f"line {lineno}: missing field {missing[0]}")
        if doc["label"] not in (0, 1):
            raise InputError(f"line {lineno}: label must be 0 or 1")
        if not isinstance(doc["text"], str):
            raise InputError(f"line {lineno}: text must be a string")
        docs.append(doc)
    return docs


def _echo(options: dict) -> None:
    for key in sorted(options):
        print(f"# {key}={options[key]}")


def _merge_field(docs, key) -> str:
    values = {str(doc[key]) for doc in docs}
    return values.pop() if len(values) == 1 else "mixed"


def _update_manifest(manifest_path, record_file, dataset, docs) -> None:
    path = Path(manifest_path)
    entries = []
    if path.exists():
        try:
            entries = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read manifest: {exc}") from None
        if not isinstance(entries, list):
            raise InputError("manifest must hold a JSON array")
    name = Path(record_file).name
    entries = [e for e in entries if e.get("file") != name]
    entries.append(
        {
            "file": name,
            "dataset": dataset,
            "domain": _merge_field(docs, "domain") if docs else "none",
            "generator": _merge_field(docs, "generator") if docs else "none",
            "scale": _merge_field(docs, "scale") if docs else "none",
        }
    )
    path.write_text(json.dumps(entries, indent=2) + "\n", encoding="utf-8")


def cmd_extract(args) -> int:
    try:
        encoder = load_encoder(args.encoder)
    except EncoderError as exc:
        print(f"txembed: encoder: {exc}", file=sys.stderr)
        return ENCODER_ERROR
    if args.max_len < 1:
        raise UsageError("max length must be at least 1")
    if args.pooling not in POOLING_MODES:
        raise UsageError(f"unknown pooling mode: {args.pooling}")

    docs = read_documents(args.infile)
    records = []
    for i, doc in enumerate(docs):
        tokens, offsets = tokenize_with_offsets(doc["text"], args.max_len)
        if not tokens:
            raise InputError(f"line {i + 1}: no tokens after tokenization")
        records.append(
            TokenRecord(
                id=f"{args.dataset}/{i}",
                label=int(doc["label"]),
                domain=str(doc["domain"]),
                generator=str(doc["generator"]),
                matrix=encoder.encode(tokens),
                offsets=offsets,
            )
        )
    append_corpus(args.out, encoder.d, records)
    if args.manifest:
        _update_manifest(args.manifest, args.out, args.dataset, docs)
    _echo(
        {
            "dataset": args.dataset,
            "encoder": args.encoder,
            "max-len": args.max_len,
            "pooling": args.pooling,
            "seed": args.seed,
        }
    )
    print(f"wrote {len(records)} records (d={encoder.d}) to {args.out}")
    return OK


def cmd_perturb_text(args) -> int:
    if not 0.0 <= args.rate <= 1.0:
        raise UsageError("rate must lie in [0, 1]")
    docs = read_documents(args.infile)
    lm = None
    if args.lm == "markov":
        texts = [doc["text"] for doc in docs if doc["text"].split()]
        if args.kind in LM_KINDS:
            if not texts:
                raise InputError("corpus has no words to build a language model from")
            lm = MarkovModel.from_texts(texts)
    elif args.kind in LM_KINDS:
        raise UsageError(f"{args.kind} needs a language model (--lm markov)")

    with open(args.out, "w", encoding="utf-8") as fh:
        for i, doc in enumerate(docs):
            out = dict(doc)
            out["text"] = perturb_text(
                doc["text"], args.kind, rate=args.rate, seed=args.seed + i, lm=lm
            )
            out["generator"] = f"{doc['generator']}+{args.kind}@{args.rate}"
            fh.write(json.dumps(out) + "\n")
    _echo({"kind": args.kind, "lm": args.lm, "rate": args.rate, "seed": args.seed})
    print(f"wrote {len(docs)} perturbed documents to {args.out}")
    return OK


def build_parser() -> _Parser:
    parser = _Parser(prog="txembed", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--encoder", default="hash-64")
    p.add_argument("--max-len", dest="max_len", type=int, default=512)
    p.add_argument("--pooling", default="mean")
    p.add_argument("--dataset", default="extracted")
    p.add_argument("--manifest", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("perturb-text")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", required=True, choices=TEXT_KINDS)
    p.add_argument("--rate", type=float, default=0.15)
    p.add_argument("--lm", default="markov", choices=("markov", "none"))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_perturb_text)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"txembed: error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except DimensionMismatch as exc:
        print(f"txembed: dimension mismatch: {exc}", file=sys.stderr)
        return DIMENSION_ERROR
    except (InputError, FormatError, OSError) as exc:
        print(f"txembed: input: {exc}", file=sys.stderr)
        return INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
