"""Byte-level contract of the record serializer: golden bytes, round
trips, append semantics, and writer-side validation."""

import struct

import numpy as np
import pytest

from txembed.records import (
    DimensionMismatch,
    FormatError,
    TokenRecord,
    append_corpus,
    header_bytes,
    read_corpus,
    read_file_dim,
    write_corpus,
)


def make_record(i=0, d=4, t=3, offsets=(0, 2), label=1):
    rng = np.random.default_rng(i)
    return TokenRecord(
        id=f"r{i}",
        label=label,
        domain="news",
        generator="gpt",
        matrix=rng.standard_normal((t, d)),
        offsets=offsets,
    )


class TestGoldenBytes:
    def test_header_layout(self):
        blob = header_bytes(7)
        assert blob[:4] == b"MGPR"
        assert struct.unpack("<III", blob[4:]) == (1, 7, 3)

    def test_record_layout_assembled_by_hand(self, tmp_path):
        matrix = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], dtype=np.float32)
        record = TokenRecord(
            id="a", label=1, domain="x", generator="y", matrix=matrix, offsets=(0, 2)
        )
        path = tmp_path / "one.rec"
        write_corpus(path, 2, [record])
        want = header_bytes(2)
        want += struct.pack("<H", 1) + b"a"
        want += struct.pack("<B", 1)
        want += struct.pack("<H", 1) + b"x"
        want += struct.pack("<H", 1) + b"y"
        want += struct.pack("<II", 3, 2)
        want += struct.pack("<II", 0, 2)
        want += struct.pack("<6f", 1, 2, 3, 4, 5, 6)
        assert path.read_bytes() == want


class TestRoundTrip:
    def test_write_then_read(self, tmp_path):
        records = [make_record(i, label=i % 2) for i in range(5)]
        path = tmp_path / "five.rec"
        write_corpus(path, 4, records)
        d, back = read_corpus(path)
        assert d == 4
        assert len(back) == 5
        for original, loaded in zip(records, back):
            assert loaded.id == original.id
            assert loaded.label == original.label
            assert loaded.domain == original.domain
            assert loaded.generator == original.generator
            assert loaded.offsets == original.offsets
            assert np.array_equal(loaded.matrix, original.matrix)

    def test_empty_corpus_is_header_only(self, tmp_path):
        path = tmp_path / "empty.rec"
        write_corpus(path, 9, [])
        assert path.read_bytes() == header_bytes(9)
        assert read_corpus(path) == (9, [])

    def test_unicode_fields_survive(self, tmp_path):
        record = make_record()
        record.id = "doc/Ünïcode"
        record.domain = "ニュース"
        path = tmp_path / "uni.rec"
        write_corpus(path, 4, [record])
        _, back = read_corpus(path)
        assert back[0].id == "doc/Ünïcode"
        assert back[0].domain == "ニュース"


class TestAppend:
    def test_append_extends(self, tmp_path):
        path = tmp_path / "grow.rec"
        write_corpus(path, 4, [make_record(0), make_record(1)])
        append_corpus(path, 4, [make_record(2)])
        _, back = read_corpus(path)
        assert [r.id for r in back] == ["r0", "r1", "r2"]

    def test_append_creates_when_absent(self, tmp_path):
        path = tmp_path / "new.rec"
        append_corpus(path, 4, [make_record(0)])
        assert read_file_dim(path) == 4

    def test_append_rejects_other_dimension(self, tmp_path):
        path = tmp_path / "fixed.rec"
        write_corpus(path, 4, [make_record(0)])
        with pytest.raises(DimensionMismatch):
            append_corpus(path, 8, [make_record(0, d=8)])

    def test_write_rejects_record_of_other_dimension(self, tmp_path):
        with pytest.raises(DimensionMismatch):
            write_corpus(tmp_path / "bad.rec", 4, [make_record(0, d=8)])


class TestValidation:
    def test_label_must_be_binary(self):
        with pytest.raises(FormatError):
            make_record(label=2)

    def test_offsets_must_start_at_zero(self):
        with pytest.raises(FormatError):
            make_record(offsets=(1, 2))

    def test_offsets_must_increase(self):
        with pytest.raises(FormatError):
            make_record(offsets=(0, 2, 2))

    def test_offsets_below_token_count(self):
        with pytest.raises(FormatError):
            make_record(t=3, offsets=(0, 3))

    def test_matrix_must_be_2d(self):
        with pytest.raises(FormatError):
            TokenRecord(
                id="v", label=0, domain="d", generator="g",
                matrix=np.zeros(4), offsets=(0,),
            )

    def test_garbage_file_rejected(self, tmp_path):
        path = tmp_path / "junk.rec"
        path.write_bytes(b"surely not a corpus")
        with pytest.raises(FormatError):
            read_corpus(path)

    def test_truncated_stream_rejected(self, tmp_path):
        path = tmp_path / "cut.rec"
        write_corpus(path, 4, [make_record(0)])
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 5])
        with pytest.raises(FormatError):
            read_corpus(path)
