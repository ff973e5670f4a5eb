"""Record container, binary corpus IO, split assembly, and the synthetic
generator's frozen post-conditions (oracle values verified by brute force
before the pipeline consumed them)."""

import numpy as np
import pytest

from specdetect.data import (
    CROSS_DOMAIN,
    CROSS_GENERATOR,
    CROSS_SCALE,
    IN_DOMAIN,
    EmbeddingRecord,
    RecordFormatError,
    RecordHeader,
    SplitPlan,
    SynthConfig,
    build_split,
    read_manifest,
    read_records,
    synth_dg_split,
    synth_generate,
    write_manifest,
    write_records,
)
from specdetect.numerics import dft, n_one_sided
from specdetect.spectral import compute_band_partition


def token_record(i=0, d=6, t=4, label=0, domain="news", generator="human", offsets=(0, 2)):
    rng = np.random.default_rng(i)
    return EmbeddingRecord(
        id=f"rec-{i}",
        label=label,
        domain=domain,
        generator=generator,
        t_num=t,
        s_num=len(offsets),
        payload=rng.standard_normal((t, d)),
        sentence_offsets=offsets,
    )


def pooled_record(i=0, d=6, label=0):
    rng = np.random.default_rng(100 + i)
    return EmbeddingRecord(
        id=f"pooled-{i}",
        label=label,
        domain="news",
        generator="human",
        t_num=7,
        s_num=2,
        payload=rng.standard_normal(d),
    )


class TestEmbeddingRecord:
    def test_pooled_of_token_matrix(self):
        rec = EmbeddingRecord(
            id="a", label=1, domain="d", generator="g", t_num=2, s_num=1,
            payload=[[1.0, 3.0], [3.0, 5.0]],
        )
        assert np.array_equal(rec.pooled(), [2.0, 4.0])
        assert rec.has_tokens and rec.d == 2

    def test_pooled_passthrough(self):
        rec = pooled_record()
        assert rec.pooled() is rec.payload

    @pytest.mark.parametrize(
        "kw, msg",
        [
            ({"label": 2}, "label"),
            ({"t_num": 0}, "positive"),
            ({"s_num": 0}, "positive"),
            ({"t_num": 3}, "row count"),
            ({"sentence_offsets": (1, 2)}, "start at 0"),
            ({"sentence_offsets": (0, 0)}, "strictly increasing"),
            ({"sentence_offsets": (0,)}, "length"),
            ({"sentence_offsets": (0, 9)}, "below t_num"),
        ],
    )
    def test_invariants_rejected(self, kw, msg):
        base = dict(
            id="a", label=0, domain="d", generator="g", t_num=4, s_num=2,
            payload=np.zeros((4, 3)), sentence_offsets=(0, 2),
        )
        base.update(kw)
        with pytest.raises(ValueError, match=msg):
            EmbeddingRecord(**base)

    def test_empty_payload_rejected(self):
        with pytest.raises(ValueError, match="payload"):
            EmbeddingRecord(
                id="a", label=0, domain="d", generator="g", t_num=1, s_num=1,
                payload=np.zeros((0,)),
            )


class TestRecordIO:
    def test_token_round_trip(self, tmp_path):
        recs = [token_record(i, label=i % 2) for i in range(5)]
        path = tmp_path / "corpus.bin"
        write_records(path, RecordHeader(6, True, True), recs)
        header, back = read_records(path)
        assert header == RecordHeader(6, True, True)
        assert len(back) == 5
        for a, b in zip(recs, back):
            assert (a.id, a.label, a.domain, a.generator) == (b.id, b.label, b.domain, b.generator)
            assert (a.t_num, a.s_num, a.sentence_offsets) == (b.t_num, b.s_num, b.sentence_offsets)
            assert np.array_equal(b.payload, a.payload.astype("<f4").astype(np.float64))

    def test_pooled_round_trip(self, tmp_path):
        recs = [pooled_record(i) for i in range(3)]
        path = tmp_path / "pooled.bin"
        write_records(path, RecordHeader(6, False, False), recs)
        header, back = read_records(path)
        assert not header.has_tokens and not header.has_offsets
        assert all(b.sentence_offsets is None for b in back)
        assert all(not b.has_tokens for b in back)

    def test_grid_payloads_survive_exactly(self, tmp_path):
        # Values on the dyadic grid fit single precision, so the synthetic
        # corpus round-trips bit-for-bit.
        rec = token_record(0)
        rec.payload = np.round(rec.payload * 4096) / 4096
        path = tmp_path / "grid.bin"
        write_records(path, RecordHeader(6, True, True), [rec])
        _, (back,) = read_records(path)
        assert np.array_equal(back.payload, rec.payload)

    def test_empty_stream(self, tmp_path):
        path = tmp_path / "empty.bin"
        write_records(path, RecordHeader(4, True, False), [])
        header, back = read_records(path)
        assert header.d == 4 and back == []

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"XXXX" + b"\x00" * 12)
        with pytest.raises(RecordFormatError, match="bad magic"):
            read_records(path)

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "v9.bin"
        write_records(path, RecordHeader(4, False, False), [])
        data = bytearray(path.read_bytes())
        data[4] = 9
        path.write_bytes(bytes(data))
        with pytest.raises(RecordFormatError, match="unsupported version"):
            read_records(path)

    def test_truncated_stream(self, tmp_path):
        path = tmp_path / "trunc.bin"
        write_records(path, RecordHeader(6, True, True), [token_record(0)])
        data = path.read_bytes()
        path.write_bytes(data[:-7])
        with pytest.raises(RecordFormatError, match="truncated stream"):
            read_records(path)

    def test_dimension_mismatch_on_write(self, tmp_path):
        with pytest.raises(RecordFormatError, match="dimension mismatch"):
            write_records(tmp_path / "x.bin", RecordHeader(5, True, True), [token_record(0, d=6)])

    def test_payload_kind_mismatch_on_write(self, tmp_path):
        with pytest.raises(RecordFormatError, match="payload kind"):
            write_records(tmp_path / "x.bin", RecordHeader(6, False, False), [token_record(0)])

    def test_missing_offsets_on_write(self, tmp_path):
        rec = token_record(0)
        rec.sentence_offsets = None
        with pytest.raises(RecordFormatError, match="offsets"):
            write_records(tmp_path / "x.bin", RecordHeader(6, True, True), [rec])


class TestManifest:
    def test_round_trip(self, tmp_path):
        entries = [
            {"file": "a.bin", "dataset": "synth", "domain": "news", "generator": "alpha", "scale": "base"},
        ]
        path = tmp_path / "manifest.json"
        write_manifest(path, entries)
        assert read_manifest(path) == entries

    def test_missing_key(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text('[{"file": "a.bin"}]')
        with pytest.raises(RecordFormatError, match="missing"):
            read_manifest(path)

    def test_not_json(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text("not json at all")
        with pytest.raises(RecordFormatError, match="JSON"):
            read_manifest(path)


def write_corpus(tmp_path, records_by_file):
    entries = []
    for name, (records, tags) in records_by_file.items():
        write_records(tmp_path / name, RecordHeader(6, True, True), records)
        entries.append({"file": name, **tags})
    manifest = tmp_path / "manifest.json"
    write_manifest(manifest, entries)
    return manifest


def corpus_pool(i0, count, domain, generator, label_of=lambda i: i % 2):
    return [
        token_record(i0 + i, domain=domain, generator=generator, label=label_of(i))
        for i in range(count)
    ]


class TestBuildSplit:
    def make_manifest(self, tmp_path):
        tags = {"dataset": "toy", "scale": "base"}
        return write_corpus(
            tmp_path,
            {
                "a.bin": (corpus_pool(0, 20, "news", "alpha"), {**tags, "domain": "news", "generator": "alpha"}),
                "b.bin": (corpus_pool(100, 20, "news", "beta"), {**tags, "domain": "news", "generator": "beta"}),
                "c.bin": (corpus_pool(200, 20, "blog", "alpha"), {**tags, "domain": "blog", "generator": "alpha"}),
            },
        )

    def test_cross_generator_holdout(self, tmp_path):
        manifest = self.make_manifest(tmp_path)
        plan = SplitPlan(scenario=CROSS_GENERATOR, held_out=("beta",), train_cap=16)
        train, valid, test = build_split(manifest, plan, seed=0)
        assert all(r.generator != "beta" for r in train + valid)
        assert all(r.generator == "beta" for r in test)
        labels = [r.label for r in train]
        assert labels.count(0) == labels.count(1) == 8

    def test_cross_domain_holdout(self, tmp_path):
        manifest = self.make_manifest(tmp_path)
        plan = SplitPlan(scenario=CROSS_DOMAIN, held_out=("blog",))
        train, valid, test = build_split(manifest, plan, seed=3)
        assert all(r.domain != "blog" for r in train + valid)
        assert {r.domain for r in test} == {"blog"}

    def test_cross_scale_holdout(self, tmp_path):
        tags = {"dataset": "toy", "domain": "news", "generator": "alpha"}
        manifest = write_corpus(
            tmp_path,
            {
                "small.bin": (corpus_pool(0, 20, "news", "alpha"), {**tags, "scale": "7b"}),
                "large.bin": (corpus_pool(50, 20, "news", "alpha"), {**tags, "scale": "70b"}),
            },
        )
        plan = SplitPlan(scenario=CROSS_SCALE, held_out=("70b",))
        train, valid, test = build_split(manifest, plan, seed=1)
        test_ids = {r.id for r in test}
        assert all(r.id.startswith("rec-5") or r.id.startswith("rec-6") for r in test)
        assert all(r.id not in test_ids for r in train + valid)

    def test_in_domain_split_partitions_pool(self, tmp_path):
        manifest = self.make_manifest(tmp_path)
        plan = SplitPlan(scenario=IN_DOMAIN, train_cap=1000)
        train, valid, test = build_split(manifest, plan, seed=5)
        ids = [r.id for r in train + valid + test]
        assert len(ids) == len(set(ids))
        assert len(test) == round(0.2 * 60)

    def test_balanced_cap(self, tmp_path):
        tags = {"dataset": "toy", "scale": "base", "domain": "news", "generator": "alpha"}
        manifest = write_corpus(
            tmp_path, {"a.bin": (corpus_pool(0, 40, "news", "alpha"), tags)}
        )
        plan = SplitPlan(scenario=IN_DOMAIN, train_cap=10)
        train, _, _ = build_split(manifest, plan, seed=0)
        labels = [r.label for r in train]
        assert labels.count(0) == labels.count(1) == 5

    def test_determinism(self, tmp_path):
        manifest = self.make_manifest(tmp_path)
        plan = SplitPlan(scenario=CROSS_GENERATOR, held_out=("beta",))
        a = build_split(manifest, plan, seed=7)
        b = build_split(manifest, plan, seed=7)
        for sa, sb in zip(a, b):
            assert [r.id for r in sa] == [r.id for r in sb]
        c = build_split(manifest, plan, seed=8)
        assert any(
            [r.id for r in sa] != [r.id for r in sc] for sa, sc in zip(a, c)
        )

    def test_empty_split_error(self, tmp_path):
        manifest = self.make_manifest(tmp_path)
        plan = SplitPlan(scenario=CROSS_GENERATOR, held_out=("alpha", "beta"))
        with pytest.raises(ValueError, match="empty split"):
            build_split(manifest, plan, seed=0)

    def test_plan_validation(self):
        with pytest.raises(ValueError, match="scenario"):
            SplitPlan(scenario="sideways")
        with pytest.raises(ValueError, match="held_out"):
            SplitPlan(scenario=CROSS_DOMAIN)


class TestSynthGenerate:
    def small(self, **kw):
        return SynthConfig(n_per_domain=32, **kw)

    def test_seed_determinism(self):
        a = synth_generate(self.small())
        b = synth_generate(self.small())
        for dom in a:
            for ra, rb in zip(a[dom], b[dom]):
                assert ra.id == rb.id
                assert np.array_equal(ra.payload, rb.payload)
        c = synth_generate(self.small(seed=1))
        assert any(
            not np.array_equal(ra.payload, rc.payload)
            for ra, rc in zip(a["news"], c["news"])
        )

    def test_domain_structure(self):
        cfg = self.small()
        corpus = synth_generate(cfg)
        assert set(corpus) == {"news", "reviews", "essays"}
        for recs in corpus.values():
            labels = [r.label for r in recs]
            assert labels.count(1) == 16 and labels.count(0) == 16
            for r in recs:
                assert r.t_num in cfg.token_counts
                assert r.s_num in cfg.sentence_counts
                assert r.payload.shape == (r.t_num, cfg.d)
                assert len(r.sentence_offsets) == r.s_num

    def test_bin0_is_exactly_the_domain_dc(self):
        cfg = self.small()
        corpus = synth_generate(cfg)
        for dom, recs in corpus.items():
            want = cfg.dc_base + (cfg.domain_shift if dom == cfg.target_domain else 0.0)
            for r in recs:
                bin0 = dft(r.pooled())[0]
                assert bin0.real == want
                assert bin0.imag == 0.0

    def test_pooled_mean_bin0_gap_is_exactly_the_shift(self):
        cfg = self.small()
        train, valid, test = synth_dg_split(cfg)
        src = np.mean([dft(r.pooled())[0].real for r in train + valid])
        tgt = np.mean([dft(r.pooled())[0].real for r in test])
        assert tgt - src == cfg.domain_shift

    def test_pooling_cancels_token_jitter_exactly(self):
        # Rows differ, yet the mean equals the shared prototype bitwise, so
        # every row carries the same entry sum.
        corpus = synth_generate(self.small())
        for r in corpus["news"][:8]:
            assert not np.array_equal(r.payload[0], r.payload[1])
            sums = r.payload.sum(axis=1)
            assert np.all(sums == sums[0])

    def test_nearest_centroid_oracle(self):
        # Brute-force oracle frozen before the trainer existed: centroid
        # classification on variance-normalized mid/high moduli must reach
        # 0.99 on train data.  Normalizing per bin keeps the high-variance
        # label-free style direction from drowning the class signal.
        cfg = SynthConfig(n_per_domain=128)
        train, valid, test = synth_dg_split(cfg)
        m = n_one_sided(cfg.d)

        raw = np.stack([np.abs(dft(r.pooled())[4:m]) for r in train])
        scaled = raw / raw.std(axis=0)
        labels = np.array([r.label for r in train])
        x0 = scaled[labels == 0].mean(axis=0)
        x1 = scaled[labels == 1].mean(axis=0)
        hits = sum(
            (np.linalg.norm(f - x1) < np.linalg.norm(f - x0)) == bool(lab)
            for f, lab in zip(scaled, labels)
        )
        assert hits / len(train) >= 0.99

    def test_noise_free_single_bin_separability(self):
        cfg = self.small(noise=0.0, domain_shift=0.0)
        corpus = synth_generate(cfg)
        recs = [r for block in corpus.values() for r in block]
        for b in cfg.mgt_read_bins + cfg.mgt_mass_bins:
            v0 = max(abs(dft(r.pooled())[b]) for r in recs if r.label == 0)
            v1 = min(abs(dft(r.pooled())[b]) for r in recs if r.label == 1)
            assert v0 < v1
        for b in cfg.hwt_read_bins + cfg.hwt_mass_bins:
            v1 = max(abs(dft(r.pooled())[b]) for r in recs if r.label == 1)
            v0 = min(abs(dft(r.pooled())[b]) for r in recs if r.label == 0)
            assert v1 < v0

    def test_signature_bins_sit_in_their_bands(self):
        cfg = self.small()
        m = n_one_sided(cfg.d)
        for t in cfg.token_counts:
            for s in cfg.sentence_counts:
                part = compute_band_partition(m, t, s, 0.6)
                for b in cfg.cue_bins:
                    assert part.low[0] <= b <= part.low[1]
                # Each kept band carries read and mass carriers for both
                # classes, so keep-mid and keep-high each stay separable.
                for b in (4, 5, 9, 10, 12, 13):
                    assert part.mid[0] <= b <= part.mid[1]
                for b in (21, 22, 27, 28) + cfg.jitter_bins:
                    assert part.high[0] <= b <= part.high[1]

    def test_dg_split_domains(self):
        cfg = self.small()
        train, valid, test = synth_dg_split(cfg)
        assert {r.domain for r in test} == {cfg.target_domain}
        assert {r.domain for r in train + valid} == set(cfg.source_domains)
        again = synth_dg_split(cfg)
        assert [r.id for r in again[0]] == [r.id for r in train]

    def test_config_validation(self):
        with pytest.raises(ValueError, match="even"):
            SynthConfig(d=9)
        with pytest.raises(ValueError, match="within"):
            SynthConfig(mgt_mass_bins=(99,))
        with pytest.raises(ValueError, match="reliability"):
            SynthConfig(cue_reliability=1.5)
        with pytest.raises(ValueError, match="token_counts"):
            SynthConfig(token_counts=(7,))
