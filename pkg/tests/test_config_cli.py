"""Config file parsing, flag overrides, and CLI exit codes."""

import json
import struct
import subprocess
import sys

import pytest

from vkdet import config as cfgmod
from vkdet.util import ConfigValueError, MissingInputError


def run_cli(*args, env=None):
    return subprocess.run(
        [sys.executable, "-m", "vkdet.cli", *args],
        capture_output=True,
        text=True,
        env=env,
    )


class TestConfigFile:
    def test_defaults_present(self):
        cfg = cfgmod.build_config()
        assert cfg["k"] == 20 and cfg["top_n"] == 500 and cfg["tau"] == 0.01

    def test_file_and_overrides(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("k = 8\ntau = 0.5  # comment\n\n# whole line comment\n")
        cfg = cfgmod.build_config(path, {"tau": 0.25})
        assert cfg["k"] == 8
        assert cfg["tau"] == 0.25

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("mystery = 3\n")
        with pytest.raises(ConfigValueError):
            cfgmod.build_config(path)

    def test_bad_value(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("k = banana\n")
        with pytest.raises(ConfigValueError):
            cfgmod.build_config(path)

    def test_invalid_range(self):
        with pytest.raises(ConfigValueError):
            cfgmod.build_config(overrides={"tau": -1.0})

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingInputError):
            cfgmod.build_config(tmp_path / "none.cfg")

    def test_decay_list_parsing(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("distill_decay_epochs = 4, 7\nscore_neglog = true\n")
        cfg = cfgmod.build_config(path)
        assert cfg["distill_decay_epochs"] == (4, 7)
        assert cfg["score_neglog"] is True


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    r = run_cli(
        "synth", "--out", str(data), "--seed", "3", "--images", "8",
        "--dim", "16",
    )
    assert r.returncode == 0, r.stderr
    return data


class TestCliExitCodes:
    def test_missing_input_exits_2(self, tmp_path):
        r = run_cli("select", "--data", str(tmp_path / "absent"), "--out", str(tmp_path / "w"))
        assert r.returncode == 2
        assert "missing input file" in r.stderr
        assert "proposals.tsv" in r.stderr

    def test_invalid_config_exits_4(self, tmp_path):
        r = run_cli("synth", "--out", str(tmp_path / "d"), "--tau", "-2")
        assert r.returncode == 4
        assert "tau" in r.stderr

    def test_version_mismatch_exits_3(self, small_dataset, tmp_path):
        corrupt = tmp_path / "corrupt"
        import shutil

        shutil.copytree(small_dataset, corrupt)
        path = corrupt / "text_novel.vkm"
        raw = bytearray(path.read_bytes())
        (hlen,) = struct.unpack("<I", raw[16:20])
        header = json.loads(raw[20 : 20 + hlen].decode())
        header["version"] = 42
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        path.write_bytes(bytes(raw[:16]) + struct.pack("<I", len(blob)) + blob + bytes(raw[20 + hlen :]))

        work = tmp_path / "w"
        r = run_cli("select", "--data", str(corrupt), "--out", str(work))
        assert r.returncode == 0, r.stderr  # select never touches text embeddings
        r = run_cli("augment", "--data", str(corrupt), "--out", str(work))
        assert r.returncode == 3
        assert "version" in r.stderr

    def test_synth_deterministic_cli(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            r = run_cli("synth", "--out", str(out), "--seed", "11", "--images", "6", "--dim", "16")
            assert r.returncode == 0, r.stderr
        files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
        for rel in files:
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel

    def test_score_neglog_changes_report_only(self, small_dataset, tmp_path):
        work_a, work_b = tmp_path / "plain", tmp_path / "neglog"
        for work, extra in ((work_a, []), (work_b, ["--score-neglog"])):
            for cmd in ("select", "augment", "train-distill", "pseudolabel", "train-proto"):
                r = run_cli(cmd, "--data", str(small_dataset), "--out", str(work))
                assert r.returncode == 0, (cmd, r.stderr)
            r = run_cli("infer", "--data", str(small_dataset), "--out", str(work), *extra)
            assert r.returncode == 0, r.stderr
        import vkdet.wire as wire

        plain = wire.read_detections(work_a / "detections.tsv")
        neglog = wire.read_detections(work_b / "detections.tsv")
        # same boxes and classes in the same order; only reported values move
        assert [(d.image_id, d.class_name, d.box) for d in plain] == [
            (d.image_id, d.class_name, d.box) for d in neglog
        ]
        novel = [i for i, d in enumerate(plain) if d.class_name.startswith("novel")]
        assert any(neglog[i].score_d != plain[i].score_d for i in novel)

    def test_eval_on_perfect_detections(self, small_dataset, tmp_path):
        import vkdet.wire as wire
        from vkdet.infer import Detection

        gts = wire.read_ground_truth(small_dataset / "val" / "gt.tsv")
        dets = [
            Detection(
                image_id=g.image_id, class_name=g.class_name, box=g.box,
                score=0.9, score_d=0.9, score_p=0.9, score_l=0.9,
            )
            for g in gts
        ]
        dets_path = tmp_path / "dets.tsv"
        wire.write_detections(dets_path, dets)
        out = tmp_path / "report"
        r = run_cli(
            "eval", "--dets", str(dets_path), "--gt", str(small_dataset / "val" / "gt.tsv"),
            "--meta", str(small_dataset / "meta.json"), "--out", str(out),
        )
        assert r.returncode == 0, r.stderr
        assert "HM=100.0" in r.stdout
        payload = json.loads((out / "report.json").read_text())
        assert payload["hm"] == 1.0
        assert (out / "pr_curves.png").exists()
        assert (out / "ap_per_class.png").exists()
        assert (out / "report.txt").exists()
