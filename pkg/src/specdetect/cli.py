"""Command-line surface binding the library into reproducible runs.

Every option can also come from a `key=value` config file (`--config`);
an explicit flag wins over its file counterpart, which wins over the
default.  The resolved configuration is echoed into each artifact the
command writes.  Exit codes: 0 success, 1 usage error, 2 data or format
error, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .data import (
    EmbeddingRecord,
    RecordFormatError,
    RecordHeader,
    SynthConfig,
    read_records,
    synth_generate,
    write_manifest,
    write_records,
)
from .model import (
    DetectorModel,
    DivergedError,
    forward_batch,
    load_checkpoint,
    save_checkpoint,
)
from .perturb import PERTURBATION_KINDS, mae_shift, perturb
from .report import (
    config_lines,
    save_band_shift_figure,
    save_f1_bar_figure,
    save_history_figure,
    save_tau_figure,
    write_csv,
    write_history_log,
    write_stats_json,
)
from .spectral import PartitionPolicy
from .trainer import (
    BAND_GRID,
    MODULE_GRID,
    TrainConfig,
    ablation_run,
    evaluate,
    tau_sweep,
    train,
    training_stats,
)

OK, USAGE_ERROR, DATA_ERROR, DIVERGED = 0, 1, 2, 3

BANDS = ("low", "mid", "high")


class UsageError(Exception):
    """Malformed invocation; maps to exit status 1."""


class _Parser(argparse.ArgumentParser):
    # argparse funnels every parse failure through error(); raising keeps
    # the exit-status contract in one place instead of argparse's exit(2).
    def error(self, message):
        raise UsageError(message)


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# Options shared by every training-shaped command.  Names are the long
# flags; booleans surface as bare switches.
TRAIN_OPTS: dict[str, tuple] = {
    "epochs": (int, 30),
    "batch-size": (int, 32),
    "lr": (float, 2e-5),
    "weight-decay": (float, 0.01),
    "tau": (float, 0.6),
    "xi": (float, 1.0),
    "fsa-weight": (float, 1.0),
    "eval-interval": (int, 1),
    "no-lff": (_bool, False),
    "no-fsr": (_bool, False),
    "no-fsa": (_bool, False),
    "band-keep": (str, ""),
    "fsr-inference": (str, "batch"),
    "band-source": (str, "per_sample"),
    "spectral-axis": (str, "feature"),
}

COMMON_OPTS: dict[str, tuple] = {
    "seed": (int, 0),
    "threads": (int, 1),
}


def _add_options(parser: argparse.ArgumentParser, spec: dict) -> None:
    for name, (kind, _default) in spec.items():
        flag = f"--{name}"
        if kind is _bool:
            parser.add_argument(flag, dest=name, action="store_const", const=True, default=None)
        else:
            parser.add_argument(flag, dest=name, type=kind, default=None)


def _load_config_file(path, known: dict) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, eq, value = line.partition("=")
        key = key.strip()
        if not eq:
            raise UsageError(f"config line {lineno} is not key=value: {raw!r}")
        if key not in known:
            raise UsageError(f"unknown config key: {key}")
        values[key] = value.strip()
    return values


def _resolve(args, file_values: dict, spec: dict) -> dict:
    """Flag beats file beats default, per option."""
    resolved = {}
    for name, (kind, default) in spec.items():
        given = getattr(args, name)
        if given is not None:
            resolved[name] = given
        elif name in file_values:
            try:
                resolved[name] = kind(file_values[name])
            except ValueError as exc:
                raise UsageError(f"bad config value for {name}: {exc}") from None
        else:
            resolved[name] = default
    return resolved


def _band_keep(text: str):
    if not text:
        return None
    parts = [part.strip() for part in text.split(",") if part.strip()]
    unknown = [part for part in parts if part not in BANDS]
    if unknown:
        raise UsageError(f"unknown band name: {unknown[0]}")
    return tuple(band in parts for band in BANDS)


def _train_config(opts: dict, seed: int) -> TrainConfig:
    try:
        return TrainConfig(
            epochs=opts["epochs"],
            batch_size=opts["batch-size"],
            lr=opts["lr"],
            weight_decay=opts["weight-decay"],
            tau=opts["tau"],
            xi=opts["xi"],
            fsa_weight=opts["fsa-weight"],
            eval_interval=opts["eval-interval"],
            seed=seed,
            lff_enabled=not opts["no-lff"],
            fsr_enabled=not opts["no-fsr"],
            fsa_enabled=not opts["no-fsa"],
            band_keep=_band_keep(opts["band-keep"]),
            band_source=opts["band-source"],
            fsr_inference=opts["fsr-inference"],
            spectral_axis=opts["spectral-axis"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _config_for_model(model: DetectorModel, threads: int) -> TrainConfig:
    """TrainConfig mirroring a checkpoint's pipeline, for stats and scoring."""
    c = model.config
    del threads
    return TrainConfig(
        tau=c.tau,
        xi=c.xi,
        lff_enabled=c.lff_enabled,
        fsr_enabled=c.fsr_enabled,
        fsa_enabled=c.fsa_enabled,
        band_keep=c.band_keep,
        band_source=c.band_source,
        fsr_inference=c.fsr_inference,
        spectral_axis=c.spectral_axis,
    )


def _read_corpus(path) -> list[EmbeddingRecord]:
    _, records = read_records(path)
    if not records:
        raise RecordFormatError(f"no records in {path}")
    return records


def _donors_for(record, pool):
    donors = [
        r
        for r in pool
        if r.domain == record.domain and r.label == record.label and r.id != record.id
    ]
    return donors or None


def _echo(config: dict) -> None:
    for line in config_lines(config):
        print(f"# {line}")


def _seeds(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise UsageError(f"bad seed list: {exc}") from None
    if not values:
        raise UsageError("empty seed list")
    return values


def cmd_synth(args, file_values) -> int:
    spec = {**COMMON_OPTS, "n-per-domain": (int, 256)}
    opts = _resolve(args, file_values, spec)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        cfg = SynthConfig(seed=opts["seed"], n_per_domain=opts["n-per-domain"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    corpus = synth_generate(cfg)
    header = RecordHeader(cfg.d, has_tokens=True, has_offsets=True)
    entries = []
    for domain in sorted(corpus):
        name = f"{domain}.rec"
        write_records(out_dir / name, header, corpus[domain])
        entries.append(
            {
                "file": name,
                "dataset": "synth",
                "domain": domain,
                "generator": "mixed",
                "scale": "base",
            }
        )
    write_manifest(out_dir / "manifest.json", entries)
    meta = out_dir / "synth.meta"
    meta.write_text("".join(f"{line}\n" for line in config_lines(opts)), encoding="utf-8")
    _echo(opts)
    total = sum(len(v) for v in corpus.values())
    print(f"wrote {total} records across {len(corpus)} domains to {out_dir}")
    return OK


def cmd_stats(args, file_values) -> int:
    spec = {
        **COMMON_OPTS,
        "tau": TRAIN_OPTS["tau"],
        "band-source": TRAIN_OPTS["band-source"],
        "spectral-axis": TRAIN_OPTS["spectral-axis"],
    }
    opts = _resolve(args, file_values, spec)
    records = _read_corpus(args.train)
    try:
        cfg = TrainConfig(
            tau=opts["tau"],
            band_source=opts["band-source"],
            spectral_axis=opts["spectral-axis"],
            seed=opts["seed"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    stats = training_stats(cfg, records)
    write_stats_json(args.out, stats, opts)
    _echo(opts)
    print(f"mu_bar_mid={stats.mu_bar_mid!r} mu_bar_high={stats.mu_bar_high!r}")
    return OK


def cmd_train(args, file_values) -> int:
    spec = {**COMMON_OPTS, **TRAIN_OPTS}
    opts = _resolve(args, file_values, spec)
    cfg = _train_config(opts, opts["seed"])
    train_set = _read_corpus(args.train)
    valid_set = _read_corpus(args.valid)
    model, history = train(cfg, train_set, valid_set)
    save_checkpoint(args.checkpoint, model)
    write_history_log(args.history, history, opts)
    if history:
        save_history_figure(Path(args.history).with_suffix(".png"), history)
    _echo(opts)
    if history:
        last = history[-1]
        print(f"epoch {last['epoch']}: loss {last['train_loss']:.6f} valid_f1 {last['valid_f1']}")
    else:
        print("epochs=0: checkpoint is the initialized model")
    return OK


def cmd_evaluate(args, file_values) -> int:
    opts = _resolve(args, file_values, COMMON_OPTS)
    model, _ = load_checkpoint(args.checkpoint)
    cfg = _config_for_model(model, opts["threads"])
    stats = training_stats(cfg, _read_corpus(args.train))
    report = evaluate(model, _read_corpus(args.test), stats)
    _echo(opts)
    print(f"accuracy={report.accuracy:.6f}")
    print(f"f1={report.f1:.6f}")
    print(
        f"tp={report.true_pos} fp={report.false_pos} "
        f"fn={report.false_neg} tn={report.true_neg}"
    )
    return OK


def cmd_perturb(args, file_values) -> int:
    spec = {**COMMON_OPTS, "rate": (float, 0.15), "offset": (float, 1.0)}
    opts = _resolve(args, file_values, spec)
    records = _read_corpus(args.infile)
    donor_source = _read_corpus(args.donor) if args.donor else records
    edited = []
    for i, record in enumerate(records):
        edited.append(
            perturb(
                record,
                args.kind,
                rate=opts["rate"],
                seed=opts["seed"] + i,
                donor_pool=_donors_for(record, donor_source),
                offset=opts["offset"],
            )
        )
    header = RecordHeader(
        edited[0].d,
        has_tokens=all(r.has_tokens for r in edited),
        has_offsets=all(r.sentence_offsets is not None for r in edited),
    )
    write_records(args.out, header, edited)
    _echo(opts)
    print(f"wrote {len(edited)} perturbed records to {args.out}")
    return OK


def cmd_mae_shift(args, file_values) -> int:
    spec = {
        **COMMON_OPTS,
        "rate": (float, 0.15),
        "offset": (float, 1.0),
        "tau": TRAIN_OPTS["tau"],
    }
    opts = _resolve(args, file_values, spec)
    records = _read_corpus(args.infile)
    policy = PartitionPolicy(tau=opts["tau"])
    kinds = PERTURBATION_KINDS if args.kind == "all" else (args.kind,)
    rows = []
    for kind in kinds:
        shifts = []
        for i, record in enumerate(records):
            out = perturb(
                record,
                kind,
                rate=opts["rate"],
                seed=opts["seed"] + i,
                donor_pool=_donors_for(record, records),
                offset=opts["offset"],
            )
            shifts.append(mae_shift(record, out, policy))
        low, mid, high = np.median(np.asarray(shifts), axis=0)
        rows.append(
            {
                "kind": kind,
                "rate": opts["rate"],
                "mae_low": float(low),
                "mae_mid": float(mid),
                "mae_high": float(high),
            }
        )
    write_csv(args.out, ("kind", "rate", "mae_low", "mae_mid", "mae_high"), rows, opts)
    save_band_shift_figure(Path(args.out).with_suffix(".png"), rows)
    _echo(opts)
    for row in rows:
        print(
            f"{row['kind']}: low {row['mae_low']:.4f} "
            f"mid {row['mae_mid']:.4f} high {row['mae_high']:.4f}"
        )
    return OK


def _runner_command(args, file_values, grid_rows, label_key):
    spec = {**COMMON_OPTS, **TRAIN_OPTS, "seeds": (str, "0,1,2,3,4,5,6,7,8,9")}
    opts = _resolve(args, file_values, spec)
    base = _train_config(opts, opts["seed"])
    seeds = _seeds(opts["seeds"])
    train_set = _read_corpus(args.train)
    valid_set = _read_corpus(args.valid)
    test_set = _read_corpus(args.test)
    rows = grid_rows(base, train_set, valid_set, test_set, seeds)
    flat = []
    for row in rows:
        record = {label_key: row[label_key], "f1_mean": row["f1_mean"]}
        for seed, f1 in zip(seeds, row["f1_runs"]):
            record[f"seed_{seed}"] = f1
        flat.append(record)
    fields = [label_key, "f1_mean"] + [f"seed_{s}" for s in seeds]
    write_csv(args.out, fields, flat, opts)
    return opts, flat


def cmd_ablate(args, file_values) -> int:
    grid = MODULE_GRID if args.grid == "modules" else BAND_GRID

    def runner(base, tr, va, te, seeds):
        return ablation_run(base, grid, tr, va, te, seeds=seeds)

    opts, rows = _runner_command(args, file_values, runner, "combo")
    save_f1_bar_figure(Path(args.out).with_suffix(".png"), rows, label_key="combo")
    _echo(opts)
    for row in rows:
        print(f"{row['combo']}: f1_mean {row['f1_mean']:.4f}")
    return OK


def cmd_sweep_tau(args, file_values) -> int:
    try:
        taus = [float(part) for part in args.taus.split(",") if part.strip()]
    except ValueError as exc:
        raise UsageError(f"bad tau list: {exc}") from None
    if not taus:
        raise UsageError("empty tau list")

    def runner(base, tr, va, te, seeds):
        return tau_sweep(base, taus, tr, va, te, seeds=seeds)

    opts, rows = _runner_command(args, file_values, runner, "tau")
    save_tau_figure(Path(args.out).with_suffix(".png"), rows)
    _echo(opts)
    for row in rows:
        print(f"tau {row['tau']}: f1_mean {row['f1_mean']:.4f}")
    return OK


def cmd_dump_features(args, file_values) -> int:
    spec = {**COMMON_OPTS, **TRAIN_OPTS}
    opts = _resolve(args, file_values, spec)
    records = _read_corpus(args.infile)
    train_set = _read_corpus(args.train)
    if args.checkpoint:
        model, _ = load_checkpoint(args.checkpoint)
        cfg = _config_for_model(model, opts["threads"])
    else:
        cfg = _train_config(opts, opts["seed"])
        model = DetectorModel.initialize(records[0].d, cfg.pipeline(), seed=opts["seed"])
    if cfg.spectral_axis != "feature":
        raise UsageError("dump-features supports only the feature axis")
    stats = training_stats(cfg, train_set)
    tape = forward_batch(model, records, stats)
    d = tape.features.shape[1]
    m = tape.moduli.shape[1]
    fields = ["id", "label", "domain", "generator"]
    fields += [f"f{j}" for j in range(d)] + [f"mod{j}" for j in range(m)]
    rows = []
    for record, features, moduli in zip(records, tape.features, tape.moduli):
        row = {
            "id": record.id,
            "label": record.label,
            "domain": record.domain,
            "generator": record.generator,
        }
        row.update({f"f{j}": repr(float(v)) for j, v in enumerate(features)})
        row.update({f"mod{j}": repr(float(v)) for j, v in enumerate(moduli)})
        rows.append(row)
    write_csv(args.out, fields, rows, opts)
    _echo(opts)
    print(f"wrote {len(rows)} feature rows to {args.out}")
    return OK


def cmd_validate(args, file_values) -> int:
    opts = _resolve(args, file_values, COMMON_OPTS)
    del opts
    status = OK
    for path in args.files:
        try:
            header, records = read_records(path)
        except (RecordFormatError, OSError) as exc:
            print(f"{path}: {exc}", file=sys.stderr)
            status = DATA_ERROR
            continue
        kind = "token matrices" if header.has_tokens else "vectors"
        print(f"{path}: OK ({len(records)} records, d={header.d}, {kind})")
    return status


def build_parser() -> _Parser:
    parser = _Parser(prog="specdetect", description=__doc__)
    common = _Parser(add_help=False)
    common.add_argument("--config", default=None)
    _add_options(common, COMMON_OPTS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common])
    p.add_argument("--out", required=True)
    p.add_argument("--n-per-domain", dest="n-per-domain", type=int, default=None)
    p.set_defaults(func=cmd_synth, spec={**COMMON_OPTS, "n-per-domain": (int, 256)})

    p = sub.add_parser("stats", parents=[common])
    p.add_argument("--train", required=True)
    p.add_argument("--out", required=True)
    for name in ("tau", "band-source", "spectral-axis"):
        kind, _ = TRAIN_OPTS[name]
        p.add_argument(f"--{name}", dest=name, type=kind, default=None)
    p.set_defaults(
        func=cmd_stats,
        spec={
            **COMMON_OPTS,
            "tau": TRAIN_OPTS["tau"],
            "band-source": TRAIN_OPTS["band-source"],
            "spectral-axis": TRAIN_OPTS["spectral-axis"],
        },
    )

    p = sub.add_parser("train", parents=[common])
    p.add_argument("--train", required=True)
    p.add_argument("--valid", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--history", required=True)
    _add_options(p, TRAIN_OPTS)
    p.set_defaults(func=cmd_train, spec={**COMMON_OPTS, **TRAIN_OPTS})

    p = sub.add_parser("evaluate", parents=[common])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.set_defaults(func=cmd_evaluate, spec=COMMON_OPTS)

    p = sub.add_parser("perturb", parents=[common])
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", required=True, choices=PERTURBATION_KINDS)
    p.add_argument("--donor", default=None)
    p.add_argument("--rate", dest="rate", type=float, default=None)
    p.add_argument("--offset", dest="offset", type=float, default=None)
    p.set_defaults(
        func=cmd_perturb,
        spec={**COMMON_OPTS, "rate": (float, 0.15), "offset": (float, 1.0)},
    )

    p = sub.add_parser("mae-shift", parents=[common])
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", default="all", choices=PERTURBATION_KINDS + ("all",))
    p.add_argument("--rate", dest="rate", type=float, default=None)
    p.add_argument("--offset", dest="offset", type=float, default=None)
    p.add_argument("--tau", dest="tau", type=float, default=None)
    p.set_defaults(
        func=cmd_mae_shift,
        spec={
            **COMMON_OPTS,
            "rate": (float, 0.15),
            "offset": (float, 1.0),
            "tau": TRAIN_OPTS["tau"],
        },
    )

    runner_spec = {**COMMON_OPTS, **TRAIN_OPTS, "seeds": (str, "0,1,2,3,4,5,6,7,8,9")}

    p = sub.add_parser("ablate", parents=[common])
    for flag in ("--train", "--valid", "--test", "--out"):
        p.add_argument(flag, required=True)
    p.add_argument("--grid", default="modules", choices=("modules", "bands"))
    p.add_argument("--seeds", dest="seeds", type=str, default=None)
    _add_options(p, TRAIN_OPTS)
    p.set_defaults(func=cmd_ablate, spec=runner_spec)

    p = sub.add_parser("sweep-tau", parents=[common])
    for flag in ("--train", "--valid", "--test", "--out"):
        p.add_argument(flag, required=True)
    p.add_argument("--taus", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")
    p.add_argument("--seeds", dest="seeds", type=str, default=None)
    _add_options(p, TRAIN_OPTS)
    p.set_defaults(func=cmd_sweep_tau, spec=runner_spec)

    p = sub.add_parser("dump-features", parents=[common])
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", default=None)
    _add_options(p, TRAIN_OPTS)
    p.set_defaults(func=cmd_dump_features, spec={**COMMON_OPTS, **TRAIN_OPTS})

    p = sub.add_parser("validate", parents=[common])
    p.add_argument("files", nargs="+")
    p.set_defaults(func=cmd_validate, spec=COMMON_OPTS)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        file_values = (
            _load_config_file(args.config, args.spec) if args.config else {}
        )
        threads = args.threads
        if threads is None and "threads" in file_values:
            try:
                threads = int(file_values["threads"])
            except ValueError:
                raise UsageError(
                    f"bad config value for threads: {file_values['threads']!r}"
                ) from None
        if threads is not None and threads < 1:
            raise UsageError("threads must be positive")
        return args.func(args, file_values)
    except UsageError as exc:
        print(f"specdetect: error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except DivergedError as exc:
        print(f"specdetect: diverged: {exc}", file=sys.stderr)
        return DIVERGED
    except (RecordFormatError, OSError, ValueError) as exc:
        print(f"specdetect: error: {exc}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
