"""Embedding record container, binary corpus format, split assembly, and the
synthetic generator behind the property-based experiments.

The binary format stores payloads in single precision (extractor outputs are
single precision anyway); everything is promoted to double precision on read.
Files are homogeneous: one header decides whether records carry token
matrices and whether they carry sentence offsets.

The synthetic corpus is built for exactness where the analysis demands it.
All payload values are quantized to a dyadic grid (multiples of 2**-12) and
every content component is projected to an exact zero entry-sum, so a
record's pooled bin-0 value equals its domain's DC parameter bit-for-bit and
constant-offset perturbations move bin 0 alone.  Class identity lives in
mid/high-band cosine amplitudes, domains differ in DC level and a low-band
cue whose label polarity is reliable only on source domains, and a zero-sum
token jitter plants high-band energy that only token-level edits can release.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "RECORD_MAGIC",
    "RECORD_VERSION",
    "GRID_STEP",
    "RecordFormatError",
    "EmbeddingRecord",
    "RecordHeader",
    "write_records",
    "read_records",
    "write_manifest",
    "read_manifest",
    "SplitPlan",
    "build_split",
    "SynthConfig",
    "synth_generate",
    "synth_dg_split",
    "CROSS_GENERATOR",
    "CROSS_DOMAIN",
    "CROSS_SCALE",
    "IN_DOMAIN",
]

RECORD_MAGIC = b"MGPR"
RECORD_VERSION = 1

FLAG_TOKENS = 1
FLAG_OFFSETS = 2

CROSS_GENERATOR = "cross_generator"
CROSS_DOMAIN = "cross_domain"
CROSS_SCALE = "cross_scale"
IN_DOMAIN = "in_domain"
SCENARIOS = (CROSS_GENERATOR, CROSS_DOMAIN, CROSS_SCALE, IN_DOMAIN)

GRID_STEP = 2.0**-12


class RecordFormatError(ValueError):
    """Corpus file does not match the binary record format."""


@dataclass
class EmbeddingRecord:
    id: str
    label: int
    domain: str
    generator: str
    t_num: int
    s_num: int
    payload: np.ndarray
    sentence_offsets: tuple[int, ...] | None = None

    def __post_init__(self):
        payload = np.ascontiguousarray(np.asarray(self.payload, dtype=np.float64))
        if payload.ndim not in (1, 2) or payload.size == 0:
            raise ValueError("payload must be a vector or a token matrix")
        self.payload = payload
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")
        if self.t_num < 1 or self.s_num < 1:
            raise ValueError("t_num and s_num must be positive")
        if payload.ndim == 2 and payload.shape[0] != self.t_num:
            raise ValueError("t_num must match the token matrix row count")
        if self.sentence_offsets is not None:
            offsets = tuple(int(o) for o in self.sentence_offsets)
            if len(offsets) != self.s_num:
                raise ValueError("sentence_offsets length must equal s_num")
            if offsets[0] != 0:
                raise ValueError("sentence_offsets must start at 0")
            if any(b <= a for a, b in zip(offsets, offsets[1:])):
                raise ValueError("sentence_offsets must be strictly increasing")
            if offsets[-1] >= self.t_num:
                raise ValueError("sentence_offsets must lie below t_num")
            self.sentence_offsets = offsets

    @property
    def d(self) -> int:
        return self.payload.shape[-1]

    @property
    def has_tokens(self) -> bool:
        return self.payload.ndim == 2

    def pooled(self) -> np.ndarray:
        if self.payload.ndim == 1:
            return self.payload
        return self.payload.mean(axis=0)


@dataclass(frozen=True)
class RecordHeader:
    d: int
    has_tokens: bool
    has_offsets: bool

    @property
    def flags(self) -> int:
        return (FLAG_TOKENS if self.has_tokens else 0) | (
            FLAG_OFFSETS if self.has_offsets else 0
        )


def _encode_str(value: str) -> bytes:
    blob = value.encode("utf-8")
    if len(blob) > 0xFFFF:
        raise ValueError("string field longer than 65535 bytes")
    return struct.pack("<H", len(blob)) + blob


def write_records(path, header: RecordHeader, records) -> None:
    """Serialize records under one shared header; every record must agree
    with the header on dimension, payload kind, and offset presence."""
    with open(path, "wb") as fh:
        fh.write(RECORD_MAGIC)
        fh.write(struct.pack("<III", RECORD_VERSION, header.d, header.flags))
        for rec in records:
            if rec.d != header.d:
                raise RecordFormatError("dimension mismatch")
            if rec.has_tokens != header.has_tokens:
                raise RecordFormatError("payload kind does not match the header")
            if header.has_offsets and rec.sentence_offsets is None:
                raise RecordFormatError("header promises sentence offsets")
            fh.write(_encode_str(rec.id))
            fh.write(struct.pack("<B", rec.label))
            fh.write(_encode_str(rec.domain))
            fh.write(_encode_str(rec.generator))
            fh.write(struct.pack("<II", rec.t_num, rec.s_num))
            if header.has_offsets:
                fh.write(np.asarray(rec.sentence_offsets, dtype="<u4").tobytes())
            fh.write(np.ascontiguousarray(rec.payload, dtype="<f4").tobytes())


def _read_exact(fh, count: int) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise RecordFormatError("truncated stream")
    return data


def _read_str(fh) -> str:
    (length,) = struct.unpack("<H", _read_exact(fh, 2))
    return _read_exact(fh, length).decode("utf-8")


def read_records(path) -> tuple[RecordHeader, list[EmbeddingRecord]]:
    with open(path, "rb") as fh:
        if fh.read(4) != RECORD_MAGIC:
            raise RecordFormatError("bad magic")
        version, d, flags = struct.unpack("<III", _read_exact(fh, 12))
        if version != RECORD_VERSION:
            raise RecordFormatError(f"unsupported version {version}")
        header = RecordHeader(
            d=d, has_tokens=bool(flags & FLAG_TOKENS), has_offsets=bool(flags & FLAG_OFFSETS)
        )
        records = []
        while True:
            probe = fh.read(2)
            if not probe:
                return header, records
            if len(probe) != 2:
                raise RecordFormatError("truncated stream")
            (id_len,) = struct.unpack("<H", probe)
            rec_id = _read_exact(fh, id_len).decode("utf-8")
            (label,) = struct.unpack("<B", _read_exact(fh, 1))
            domain = _read_str(fh)
            generator = _read_str(fh)
            t_num, s_num = struct.unpack("<II", _read_exact(fh, 8))
            offsets = None
            if header.has_offsets:
                raw = _read_exact(fh, 4 * s_num)
                offsets = tuple(int(v) for v in np.frombuffer(raw, dtype="<u4"))
            count = t_num * d if header.has_tokens else d
            payload = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4").astype(np.float64)
            if header.has_tokens:
                payload = payload.reshape(t_num, d)
            try:
                records.append(
                    EmbeddingRecord(
                        id=rec_id,
                        label=label,
                        domain=domain,
                        generator=generator,
                        t_num=t_num,
                        s_num=s_num,
                        payload=payload,
                        sentence_offsets=offsets,
                    )
                )
            except ValueError as exc:
                raise RecordFormatError(str(exc)) from None


def write_manifest(path, entries) -> None:
    """Manifest: JSON array of {file, dataset, domain, generator, scale}."""
    rows = []
    for entry in entries:
        rows.append(
            {key: str(entry[key]) for key in ("file", "dataset", "domain", "generator", "scale")}
        )
    Path(path).write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")


def read_manifest(path) -> list[dict]:
    try:
        rows = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise RecordFormatError(f"manifest is not valid JSON: {exc}") from None
    if not isinstance(rows, list):
        raise RecordFormatError("manifest must be a JSON array")
    for row in rows:
        missing = {"file", "dataset", "domain", "generator", "scale"} - set(row)
        if missing:
            raise RecordFormatError(f"manifest entry missing {sorted(missing)}")
    return rows


@dataclass(frozen=True)
class SplitPlan:
    """Where train/valid/test come from.

    Cross-* scenarios reserve the `held_out` values of one attribute
    (generator, domain, or scale) for the test split; train and valid are
    drawn from everything else.  in_domain ignores held_out and splits one
    pool by fractions.  Train is label-balanced up to train_cap, drawn
    round-robin across (domain, generator) groups in lexicographic order.
    """

    scenario: str
    held_out: tuple[str, ...] = ()
    train_cap: int = 1000
    valid_fraction: float = 0.2
    test_fraction: float = 0.2
    test_cap: int | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario: {self.scenario!r}")
        if self.scenario != IN_DOMAIN and not self.held_out:
            raise ValueError("cross_* scenarios need held_out values")
        if self.train_cap < 2:
            raise ValueError("train_cap must be at least 2")
        if not (0.0 < self.valid_fraction < 1.0):
            raise ValueError("valid_fraction must lie in (0, 1)")
        if not (0.0 < self.test_fraction < 1.0):
            raise ValueError("test_fraction must lie in (0, 1)")


def _scenario_key(scenario: str, record: EmbeddingRecord, scale: str) -> str:
    if scenario == CROSS_GENERATOR:
        return record.generator
    if scenario == CROSS_DOMAIN:
        return record.domain
    return scale


def _balanced_train(pool, cap: int, rng) -> list[EmbeddingRecord]:
    # Round-robin across lexicographically ordered (domain, generator)
    # groups within each label, so the cap lands evenly across strata.
    per_label = cap // 2
    chosen = []
    for label in (0, 1):
        groups: dict[tuple[str, str], list[EmbeddingRecord]] = {}
        for rec in pool:
            if rec.label == label:
                groups.setdefault((rec.domain, rec.generator), []).append(rec)
        queues = []
        for key in sorted(groups):
            block = groups[key]
            order = rng.permutation(len(block))
            queues.append([block[i] for i in order])
        picked = []
        while queues and len(picked) < per_label:
            next_round = []
            for queue in queues:
                if len(picked) >= per_label:
                    break
                picked.append(queue.pop())
                if queue:
                    next_round.append(queue)
            queues = next_round
        chosen.append(picked)
    take = min(len(chosen[0]), len(chosen[1]))
    merged = chosen[0][:take] + chosen[1][:take]
    order = rng.permutation(len(merged))
    return [merged[i] for i in order]


def _shuffled(pool, rng) -> list[EmbeddingRecord]:
    order = rng.permutation(len(pool))
    return [pool[i] for i in order]


def build_split(
    manifest_path, plan: SplitPlan, seed: int
) -> tuple[list[EmbeddingRecord], list[EmbeddingRecord], list[EmbeddingRecord]]:
    """Assemble (train, valid, test) from a manifest, deterministically.

    Held-out attribute values go to test and never to train or valid.
    """
    manifest_path = Path(manifest_path)
    rng = np.random.default_rng(seed)
    tagged: list[tuple[EmbeddingRecord, str]] = []
    for entry in read_manifest(manifest_path):
        _, records = read_records(manifest_path.parent / entry["file"])
        tagged.extend((rec, entry["scale"]) for rec in records)
    tagged.sort(key=lambda pair: (pair[0].id, pair[0].domain, pair[0].generator))

    if plan.scenario == IN_DOMAIN:
        pool = _shuffled([rec for rec, _ in tagged], rng)
        n_test = max(1, round(plan.test_fraction * len(pool))) if pool else 0
        test = pool[:n_test]
        rest = pool[n_test:]
        n_valid = max(1, round(plan.valid_fraction * len(rest))) if rest else 0
        valid = rest[:n_valid]
        source = rest[n_valid:]
    else:
        held = set(plan.held_out)
        test = [rec for rec, scale in tagged if _scenario_key(plan.scenario, rec, scale) in held]
        source = [
            rec for rec, scale in tagged if _scenario_key(plan.scenario, rec, scale) not in held
        ]
        test = _shuffled(test, rng)
        source = _shuffled(source, rng)
        n_valid = max(1, round(plan.valid_fraction * len(source))) if source else 0
        valid = source[:n_valid]
        source = source[n_valid:]

    if plan.test_cap is not None:
        test = test[: plan.test_cap]
    train = _balanced_train(source, plan.train_cap, rng)
    for name, split in (("train", train), ("valid", valid), ("test", test)):
        if not split:
            raise ValueError(f"empty split: {name}")
    return train, valid, test


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic domain-generalization corpus.

    Class signal: each class rides its own carrier bins, disjoint from the
    other class's, so the label lives in where spectral mass sits.  The
    carriers come in two kinds.  Read bins hold a small fixed-phase
    component that a linear head can pick up from the time-domain
    features.  Mass bins hold a large component whose phase is drawn per
    record: its modulus is exact regardless of phase, so it is invisible
    to phase-sensitive reads and to same-label modulus comparisons, while
    across labels it is a wide, amplifiable modulus gap.  Domain signal:
    an exact DC level (dc_base on source domains, dc_base + domain_shift
    on the target) plus a low-band cue at cue_bins whose sign tracks the
    label with probability cue_reliability on source domains and is a
    coin flip on the target.  Token matrices add a zero-sum high-band
    jitter that pooling cancels exactly, so only token-level edits expose
    it.
    """

    d: int = 64
    n_per_domain: int = 256
    source_domains: tuple[str, ...] = ("news", "reviews")
    target_domain: str = "essays"
    generators: tuple[str, ...] = ("alpha", "beta")
    # Fixed-phase, head-readable carriers.  Strong enough that a masked
    # model converges fast and stays put, yet still well below the cue, so
    # an unfiltered linear model locks onto the cue instead.
    mgt_read_bins: tuple[int, ...] = (5, 22)
    hwt_read_bins: tuple[int, ...] = (4, 21)
    read_amp_mgt: float = 1.0
    read_amp_hwt: float = 0.75
    # Random-phase, modulus-coded carriers.  These hold most of the class
    # energy: phase scatter keeps them out of any mean-based read, and a
    # fixed amplitude keeps their modulus identical across same-label
    # records, so only cross-label comparisons see them.
    mgt_mass_bins: tuple[int, ...] = (9, 12, 27)
    hwt_mass_bins: tuple[int, ...] = (10, 13, 28)
    mass_amp_mgt: float = 2.2
    mass_amp_hwt: float = 1.4
    cue_bins: tuple[int, ...] = (1,)
    cue_amp: float = 10.0
    # On source domains the cue tracks the label closely, and its energy
    # dwarfs the read carriers, so an unfiltered model locks onto it early
    # and the target's coin flip punishes that.  Reliability stays below
    # one so that at convergence the flipped-cue records make any residual
    # cue reliance a source-side cost too, rather than a free margin.
    cue_reliability: float = 0.9
    dc_base: float = 16.0
    domain_shift: float = 8.0
    # Tight within-domain spread, clear cross-domain shift: the scale gap is
    # a domain property for the rescaling stage to absorb, not record noise.
    source_gain: tuple[float, float] = (0.999, 1.001)
    target_gain: tuple[float, float] = (1.199, 1.201)
    jitter_bins: tuple[int, ...] = (20, 24, 29)
    # Large on purpose: pooling cancels it, so the only paths that see it
    # are token-level edits, which should dominate the high band.
    jitter_amp: float = 12.0
    # Label-free per-record styling: one fixed direction spanning mid and
    # high bins, scaled by a uniform coefficient.  It inflates within-class
    # modulus spread at the identity adapter, and since it is a single
    # direction a trained adapter can null it, which is what lets alignment
    # training pull same-label populations closer than the untrained start.
    style_bins: tuple[int, ...] = (7, 15, 25)
    style_amp: float = 6.0
    # A fixed spectral bed on the remaining bins, identical in every record
    # up to the domain gain.  Pair differences cancel it exactly, so it
    # never shows up in alignment or MAE numbers directly; its job is to
    # hold most of each band's mass so that per-population rescaling tracks
    # the bed rather than the class carriers, which keeps carrier growth
    # visible to the diagnostics instead of being normalized away.
    bed_mid_bins: tuple[int, ...] = (3, 6, 8, 11, 14, 16)
    bed_high_bins: tuple[int, ...] = (17, 18, 19, 23, 26, 30, 31, 32)
    bed_amp: float = 2.5
    noise: float = 0.05
    class_balance: float = 0.5
    token_counts: tuple[int, ...] = (16, 32)
    sentence_counts: tuple[int, ...] = (3, 4, 5, 6)
    seed: int = 0

    def __post_init__(self):
        if self.d < 8 or self.d % 2 != 0:
            raise ValueError("d must be an even integer of at least 8")
        half = self.d // 2
        bin_fields = (
            "mgt_read_bins",
            "hwt_read_bins",
            "mgt_mass_bins",
            "hwt_mass_bins",
            "cue_bins",
            "jitter_bins",
            "style_bins",
            "bed_mid_bins",
            "bed_high_bins",
        )
        for name in bin_fields:
            bins = getattr(self, name)
            if not bins or any(not (0 <= b <= half) for b in bins):
                raise ValueError(f"{name} must lie within [0, {half}]")
        if not (0.0 <= self.cue_reliability <= 1.0):
            raise ValueError("cue_reliability must lie in [0, 1]")
        if not (0.0 < self.class_balance < 1.0):
            raise ValueError("class_balance must lie in (0, 1)")
        if self.noise < 0:
            raise ValueError("noise must be nonnegative")
        if any(t < 2 or t % 2 != 0 for t in self.token_counts):
            raise ValueError("token_counts must be even and at least 2")


def _snap(values: np.ndarray) -> np.ndarray:
    """Quantize onto the dyadic grid; sums of grid values are float-exact."""
    return np.round(values / GRID_STEP) * GRID_STEP


def _zero_sum(values: np.ndarray) -> np.ndarray:
    # Exact for grid values with a power-of-two length: the mean is dyadic,
    # every difference is exact, and the residual entry-sum is exactly 0.
    return values - values.mean()


def _cosine(d: int, bin_index: int, amplitude: float, phase: float) -> np.ndarray:
    j = np.arange(d)
    return amplitude * np.cos(2.0 * np.pi * bin_index * j / d + phase)


def _base_phase(bin_index: int) -> float:
    # Fixed per-bin phase; golden-angle spacing keeps bins out of lockstep.
    return (bin_index * 2.399963229728653) % (2.0 * np.pi)


def _make_record(cfg: SynthConfig, rng, domain: str, is_target: bool, label: int, index: int) -> EmbeddingRecord:
    d = cfg.d
    # Disjoint carriers: each class occupies bins the other leaves empty, so
    # the label lives in where spectral mass sits.  A linear head reads the
    # gap from either side of zero, and the class separation in modulus
    # space cannot be normalized away by matching band means.
    if label == 1:
        read_bins, read_amp = cfg.mgt_read_bins, cfg.read_amp_mgt
        mass_bins, mass_amp = cfg.mgt_mass_bins, cfg.mass_amp_mgt
    else:
        read_bins, read_amp = cfg.hwt_read_bins, cfg.read_amp_hwt
        mass_bins, mass_amp = cfg.hwt_mass_bins, cfg.mass_amp_hwt
    gain = rng.uniform(*(cfg.target_gain if is_target else cfg.source_gain))

    # Read carriers keep a fixed phase so the class mean stays linearly
    # separable; mass carriers draw a fresh phase per record, which leaves
    # their modulus exact and their time-domain class mean near zero.
    content = np.zeros(d)
    for b in read_bins:
        content += _cosine(d, b, read_amp, _base_phase(b))
    for b in mass_bins:
        content += _cosine(d, b, mass_amp, rng.uniform(0.0, 2.0 * np.pi))

    if is_target:
        aligned = rng.random() < 0.5
    else:
        aligned = rng.random() < cfg.cue_reliability
    polarity = 1.0 if (label == 1) == aligned else -1.0
    for b in cfg.cue_bins:
        content += _cosine(d, b, polarity * cfg.cue_amp, _base_phase(b))

    style_coeff = rng.uniform(-cfg.style_amp, cfg.style_amp)
    for b in cfg.style_bins:
        content += _cosine(d, b, style_coeff, _base_phase(b))

    for b in cfg.bed_mid_bins + cfg.bed_high_bins:
        content += _cosine(d, b, cfg.bed_amp, _base_phase(b))

    # The gain scales the whole spectral content, so a domain's scale shift
    # is a uniform multiplier that the rescaling stage can absorb cleanly.
    content *= gain
    if cfg.noise > 0:
        content += cfg.noise * rng.standard_normal(d)
    content = _zero_sum(_snap(content))

    t_num = int(rng.choice(np.asarray(cfg.token_counts)))
    s_num = int(rng.choice(np.asarray(cfg.sentence_counts)))
    dc = (cfg.dc_base + cfg.domain_shift if is_target else cfg.dc_base) / d
    prototype = content + dc

    # Paired +J/-J rows cancel exactly under mean pooling; the jitter itself
    # is zero-sum per row so bin 0 is identical across rows.
    tokens = np.tile(prototype, (t_num, 1))
    for row in range(t_num // 2):
        jit = np.zeros(d)
        for b in cfg.jitter_bins:
            jit += _cosine(d, b, cfg.jitter_amp, rng.uniform(0.0, 2.0 * np.pi))
        jit = _zero_sum(_snap(jit))
        tokens[row] += jit
        tokens[row + t_num // 2] -= jit

    bounds = np.sort(rng.choice(np.arange(1, t_num), size=s_num - 1, replace=False))
    offsets = (0, *map(int, bounds))
    generator = cfg.generators[index % len(cfg.generators)] if label == 1 else "human"
    return EmbeddingRecord(
        id=f"{domain}-{label}-{index:04d}",
        label=label,
        domain=domain,
        generator=generator,
        t_num=t_num,
        s_num=s_num,
        payload=tokens,
        sentence_offsets=offsets,
    )


def synth_generate(cfg: SynthConfig) -> dict[str, list[EmbeddingRecord]]:
    """Seed-deterministic corpus, one record list per domain (the target
    domain listed last)."""
    out: dict[str, list[EmbeddingRecord]] = {}
    for domain in (*cfg.source_domains, cfg.target_domain):
        # crc32 instead of hash(): stable across processes, so a fixed seed
        # names the same corpus everywhere.
        rng = np.random.default_rng((cfg.seed, zlib.crc32(domain.encode("utf-8"))))
        is_target = domain == cfg.target_domain
        n_mgt = round(cfg.n_per_domain * cfg.class_balance)
        labels = [1] * n_mgt + [0] * (cfg.n_per_domain - n_mgt)
        out[domain] = [
            _make_record(cfg, rng, domain, is_target, label, i)
            for i, label in enumerate(labels)
        ]
    return out


def synth_dg_split(
    cfg: SynthConfig, valid_fraction: float = 0.2
) -> tuple[list[EmbeddingRecord], list[EmbeddingRecord], list[EmbeddingRecord]]:
    """Domain-shifted splits straight from the generator: source domains
    feed train/valid, the target domain is the test set."""
    corpus = synth_generate(cfg)
    rng = np.random.default_rng((cfg.seed, 0x5B117))
    source = [rec for dom in cfg.source_domains for rec in corpus[dom]]
    source = _shuffled(source, rng)
    n_valid = max(1, round(valid_fraction * len(source)))
    return source[n_valid:], source[:n_valid], corpus[cfg.target_domain]
