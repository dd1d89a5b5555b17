"""Matrix container and record-file round trips."""

import struct

import numpy as np
import pytest

from vkdet import wire
from vkdet.evaluation import GroundTruthBox
from vkdet.geometry import BBox, Proposal
from vkdet.infer import Detection
from vkdet.pseudolabel import PseudoLabel
from vkdet.util import FormatVersionError, MissingInputError


class TestMatrix:
    def test_round_trip_lossless(self, tmp_path):
        rng = np.random.default_rng(45)
        values = rng.normal(size=(17, 9)).astype(np.float32)
        path = tmp_path / "m.vkm"
        wire.write_matrix(path, values, "region", keys=[f"k{i}" for i in range(17)])
        arr, header, keys = wire.read_matrix(path, expect_kind="region")
        np.testing.assert_array_equal(arr, values)
        assert header["dim"] == 9 and header["rows"] == 17
        assert keys == [f"k{i}" for i in range(17)]

    def test_no_keys(self, tmp_path):
        path = tmp_path / "m.vkm"
        wire.write_matrix(path, np.zeros((2, 3)), "rotation")
        _, header, keys = wire.read_matrix(path)
        assert keys is None and header["keys"] is False

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.vkm"
        path.write_bytes(b"NOTAMATRIXFILE!!" + b"\x00" * 16)
        with pytest.raises(wire.WireError):
            wire.read_matrix(path)

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "m.vkm"
        wire.write_matrix(path, np.zeros((1, 1)), "region")
        raw = bytearray(path.read_bytes())
        (hlen,) = struct.unpack("<I", raw[16:20])
        header = raw[20 : 20 + hlen].replace(b'"version":1', b'"version":9')
        path.write_bytes(bytes(raw[:16]) + struct.pack("<I", len(header)) + header + bytes(raw[20 + hlen :]))
        with pytest.raises(FormatVersionError):
            wire.read_matrix(path)

    def test_kind_mismatch(self, tmp_path):
        path = tmp_path / "m.vkm"
        wire.write_matrix(path, np.zeros((1, 1)), "region")
        with pytest.raises(wire.WireError):
            wire.read_matrix(path, expect_kind="prototype")

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "m.vkm"
        wire.write_matrix(path, np.ones((4, 4)), "region")
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(wire.WireError):
            wire.read_matrix(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingInputError):
            wire.read_matrix(tmp_path / "absent.vkm")

    def test_attention_header(self, tmp_path):
        grid = np.arange(12, dtype=np.float32).reshape(3, 4)
        path = tmp_path / "a.vkm"
        wire.write_attention(path, grid, 64, 48)
        got, w, h = wire.read_attention(path)
        np.testing.assert_allclose(got, grid)
        assert (w, h) == (64, 48)
        _, header, _ = wire.read_matrix(path)
        assert header["H_a"] == 3 and header["W_a"] == 4


class TestRecords:
    def test_proposals_round_trip(self, tmp_path):
        props = [
            Proposal("img0", BBox(0.5, 1.25, 10.125, 20.0625), 0.123456789, "img0#0", "raw"),
            Proposal("img1", BBox(3, 4, 5, 6), 1.0, "img1#0:jl", "augmented"),
        ]
        path = tmp_path / "p.tsv"
        wire.write_proposals(path, props)
        assert wire.read_proposals(path) == props

    def test_six_field_ingestion_derives_ids(self, tmp_path):
        path = tmp_path / "p.tsv"
        path.write_text(
            "img0\t0\t0\t10\t10\t0.5\n"
            "img1\t1\t1\t5\t5\t0.25\n"
            "img0\t2\t2\t8\t8\t0.75\n",
            encoding="utf-8",
        )
        props = wire.read_proposals(path)
        assert [p.proposal_id for p in props] == ["img0#0", "img1#0", "img0#1"]
        assert all(p.role == "raw" for p in props)

    def test_ground_truth_round_trip(self, tmp_path):
        gts = [GroundTruthBox("a", BBox(0, 0, 4.5, 9.75), "base-1")]
        path = tmp_path / "g.tsv"
        wire.write_ground_truth(path, gts)
        assert wire.read_ground_truth(path) == gts

    def test_detections_round_trip(self, tmp_path):
        dets = [
            Detection("a", "novel-1", BBox(1, 2, 3, 4), 0.875, 0.5, 0.25, 0.33251),
        ]
        path = tmp_path / "d.tsv"
        wire.write_detections(path, dets)
        got = wire.read_detections(path)
        assert len(got) == 1
        d = got[0]
        assert (d.image_id, d.class_name) == ("a", "novel-1")
        assert d.score == 0.875 and d.score_s == 0.875
        assert (d.score_d, d.score_p, d.score_l) == (0.5, 0.25, 0.33251)

    def test_pseudo_round_trip(self, tmp_path):
        recs = [PseudoLabel("img0#3", 7, 0.125), PseudoLabel("img1#0:js", 1, 2.5)]
        path = tmp_path / "ps.tsv"
        wire.write_pseudo_labels(path, recs)
        assert wire.read_pseudo_labels(path) == recs

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "p.tsv"
        path.write_text("img0\t1\t2\t3\n", encoding="utf-8")
        with pytest.raises(wire.WireError):
            wire.read_proposals(path)
