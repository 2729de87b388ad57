import csv
import math

import numpy as np
import pytest

from genkt import clm, corpus
from genkt.checkpoint import load_checkpoint
from genkt.cli import EXIT_CONFIG, EXIT_DATA, EXIT_MISMATCH, EXIT_OK, main
from genkt.federation import wire
from genkt.manifest import RunManifest

TINY = ["--spec", "8x1", "--batch-streams", "4", "--bptt-window", "16", "--eval-every", "5"]


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert run("prepare", "--out", out, "--synthetic-chars", 60000, "--fractions", "0.9,0.05,0.05",
               "--shards", 2) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def model(data, tmp_path_factory):
    out = tmp_path_factory.mktemp("model")
    assert run("train", "--out", out, "--corpus", data / "train.txt", "--valid", data / "valid.txt",
               "--max-updates", 10, *TINY) == EXIT_OK
    return out / "model.ckpt"


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


class TestPrepare:
    def test_layout(self, data):
        for name in ("train", "valid", "test"):
            for suffix in ("", "_public", "_private"):
                assert (data / f"{name}{suffix}.txt").is_file()
        assert len(list((data / "shards").glob("shard_*.txt"))) == 2
        assert len((data / "words.txt").read_text().split()) == 23

    def test_idempotent(self, data, tmp_path):
        assert run("prepare", "--out", tmp_path, "--synthetic-chars", 60000, "--fractions", "0.9,0.05,0.05",
                   "--shards", 2) == EXIT_OK
        a = RunManifest.read(data).outputs
        b = RunManifest.read(tmp_path).outputs
        assert a == b

    def test_custom_word_list(self, tmp_path):
        words = tmp_path / "w.txt"
        words.write_text("# one word\nSHARES\n")
        out = tmp_path / "o"
        assert run("prepare", "--out", out, "--synthetic-chars", 20000, "--words", words, "--shards", 1) == EXIT_OK
        assert (out / "words.txt").read_text() == "SHARES\n"

    def test_bad_word_list(self, tmp_path, capsys):
        words = tmp_path / "w.txt"
        words.write_text("OK\nnot-ok\n")
        assert run("prepare", "--out", tmp_path / "o", "--synthetic-chars", 5000, "--words", words) == EXIT_DATA
        assert "w.txt:2" in capsys.readouterr().err

    def test_needs_input(self, tmp_path):
        assert run("prepare", "--out", tmp_path) == EXIT_CONFIG

    def test_empty_input(self, tmp_path):
        raw = tmp_path / "raw.txt"
        raw.write_text("1234 5678\n")
        assert run("prepare", "--out", tmp_path / "o", "--input", raw) == EXIT_DATA


class TestTrain:
    def test_outputs(self, model):
        ck = load_checkpoint(model)
        assert ck.params.spec == clm.ModelSpec(8, 1)
        assert ck.updates == 10 and ck.frames == 10 * 4 * 16
        rows = read_csv(model.parent / "train_log.csv")
        assert rows[0][:2] == ["updates", "frames"] and len(rows) == 3

    def test_zero_updates(self, data, tmp_path):
        assert run("train", "--out", tmp_path, "--corpus", data / "valid.txt", "--max-updates", 0, *TINY) == EXIT_OK
        ck = load_checkpoint(tmp_path / "model.ckpt")
        assert ck.updates == 0 and ck.params == clm.ModelParams.initialize(clm.ModelSpec(8, 1), 0)

    def test_resume_counts_frames(self, data, model, tmp_path):
        assert run("train", "--out", tmp_path, "--corpus", data / "train.txt", "--init", model,
                   "--max-updates", 5, *TINY) == EXIT_OK
        ck = load_checkpoint(tmp_path / "model.ckpt")
        assert ck.updates == 15 and ck.frames == 15 * 64

    def test_resume_wrong_spec(self, data, model, tmp_path):
        args = [a if a != "8x1" else "16x1" for a in TINY]
        assert run("train", "--out", tmp_path, "--corpus", data / "train.txt", "--init", model, *args) == EXIT_DATA

    def test_bad_config(self, data, tmp_path):
        assert run("train", "--out", tmp_path, "--corpus", data / "train.txt", "--bptt-window", 1) == EXIT_CONFIG
        assert run("train", "--out", tmp_path, "--corpus", data / "train.txt", "--spec", "big") == EXIT_CONFIG
        assert run("train", "--out", tmp_path, "--corpus", data / "train.txt", "--targets", "x") == EXIT_CONFIG

    def test_ini_file(self, data, tmp_path):
        ini = tmp_path / "c.ini"
        ini.write_text("[train]\nmax_updates = 3\nbatch_streams = 4\nbptt_window = 16\n")
        out = tmp_path / "o"
        assert run("train", "--out", out, "--config", ini, "--corpus", data / "valid.txt", "--spec", "8x1") == EXIT_OK
        assert load_checkpoint(out / "model.ckpt").updates == 3
        ini.write_text("[train]\nbogus = 1\n")
        assert run("train", "--out", out, "--config", ini, "--corpus", data / "valid.txt") == EXIT_CONFIG

    def test_soft_targets_from_generated_labels(self, model, tmp_path):
        gen = tmp_path / "gen"
        assert run("generate", "--out", gen, "--checkpoint", model, "--chars", 640, "--streams", 4,
                   "--with-labels", "true") == EXIT_OK
        out = tmp_path / "soft"
        assert run("train", "--out", out, "--corpus", gen / "generated.txt",
                   "--targets", f"soft:{gen / 'labels.gktw'}", "--max-updates", 4, *TINY) == EXIT_OK
        assert load_checkpoint(out / "model.ckpt").extra["targets"] == "soft"


class TestGenerate:
    def test_reproducible_and_labels_parse(self, model, tmp_path):
        for name in ("a", "b"):
            assert run("generate", "--out", tmp_path / name, "--checkpoint", model, "--chars", 400,
                       "--streams", 4, "--seed", 7, "--with-labels", "true") == EXIT_OK
        a = (tmp_path / "a" / "generated.txt").read_bytes()
        assert a == (tmp_path / "b" / "generated.txt").read_bytes()
        msgs = wire.read_file(tmp_path / "a" / "labels.gktw")
        assert len(msgs) == 4 and msgs[0].labels.shape == (100, 30)
        np.testing.assert_allclose(msgs[0].labels.sum(axis=1), 1.0, atol=1e-5)

    def test_too_few_chars(self, model, tmp_path):
        assert run("generate", "--out", tmp_path, "--checkpoint", model, "--chars", 2, "--streams", 4) == EXIT_CONFIG


class TestGkt:
    def test_teacher_driven_report(self, model, data, tmp_path):
        assert run("gkt", "--out", tmp_path, "--teacher", model, "--mode", "td", "--student-spec", "4x1",
                   "--lot-chars", 640, "--budget-chars", 640, "--max-updates", 10, "--eval-private",
                   data / "valid_private.txt", *TINY[2:]) == EXIT_OK
        rows = read_csv(tmp_path / "report.csv")
        assert rows[0] == ["cycle", "chars", "frames", "updates", "bpc_full", "bpc_private", "bpc_public",
                           "oov_log2p", "oov_count"]
        assert math.isfinite(float(rows[1][5]))

    def test_student_driven_refused_without_student(self, model, data, tmp_path):
        assert run("gkt", "--out", tmp_path, "--teacher", model, "--mode", "sd") == EXIT_CONFIG
        fresh = tmp_path / "fresh"
        assert run("train", "--out", fresh, "--corpus", data / "valid.txt", "--max-updates", 0, *TINY) == EXIT_OK
        assert run("gkt", "--out", tmp_path, "--teacher", model, "--mode", "sd",
                   "--student", fresh / "model.ckpt") == EXIT_CONFIG

    def test_unknown_mode(self, model, tmp_path):
        assert run("gkt", "--out", tmp_path, "--teacher", model, "--mode", "xd") == EXIT_CONFIG


class TestEval:
    def test_uniform_model(self, data, tmp_path):
        zero = tmp_path / "z"
        assert run("train", "--out", zero, "--corpus", data / "valid.txt", "--max-updates", 0, *TINY) == EXIT_OK
        from genkt.checkpoint import Checkpoint, save_checkpoint
        save_checkpoint(zero / "u.ckpt", Checkpoint(clm.ModelParams.zeros(clm.ModelSpec(8, 1))))
        assert run("eval", "--out", tmp_path / "e", "--checkpoint", zero / "u.ckpt", "--data", data) == EXIT_OK
        row = read_csv(tmp_path / "e" / "eval.csv")[1]
        for v in row:
            assert float(v) == pytest.approx(math.log2(30), abs=1e-12)

    def test_matches_library_bpc(self, model, data, tmp_path):
        assert run("eval", "--out", tmp_path, "--checkpoint", model, "--full", data / "test.txt") == EXIT_OK
        row = read_csv(tmp_path / "eval.csv")[1]
        want = clm.bpc(load_checkpoint(model).params, corpus.read_corpus(data / "test.txt"))
        assert float(row[0]) == want
        assert math.isnan(float(row[1]))

    def test_needs_a_set(self, model, tmp_path):
        assert run("eval", "--out", tmp_path, "--checkpoint", model) == EXIT_CONFIG

    def test_missing_checkpoint(self, tmp_path):
        assert run("eval", "--out", tmp_path, "--checkpoint", tmp_path / "none.ckpt", "--full", "x") == EXIT_DATA


class TestReplay:
    def test_reproduces(self, data, tmp_path):
        out = tmp_path / "run"
        assert run("train", "--out", out, "--corpus", data / "valid.txt", "--max-updates", 6, *TINY) == EXIT_OK
        assert run("replay", out / "manifest.json", "--out", tmp_path / "again") == EXIT_OK
        assert RunManifest.read(out).outputs == RunManifest.read(tmp_path / "again").outputs

    def test_detects_difference(self, data, tmp_path):
        out = tmp_path / "run"
        assert run("train", "--out", out, "--corpus", data / "valid.txt", "--max-updates", 2, *TINY) == EXIT_OK
        m = RunManifest.read(out)
        m.outputs["model.ckpt"] = "0" * 64
        m.write(out)
        assert run("replay", out / "manifest.json", "--out", tmp_path / "again") == EXIT_MISMATCH

    def test_changed_input(self, data, tmp_path):
        src = tmp_path / "c.txt"
        src.write_bytes((data / "valid.txt").read_bytes())
        out = tmp_path / "run"
        assert run("train", "--out", out, "--corpus", src, "--max-updates", 1, *TINY) == EXIT_OK
        src.write_text("CHANGED.\n" * 100)
        assert run("replay", out / "manifest.json", "--out", tmp_path / "again") == EXIT_DATA


class TestFederate:
    def test_single_device_equals_student_driven_gkt(self, data, model, tmp_path):
        fed = tmp_path / "fed"
        common = ["--lot-chars", 320, "--seed", 3, *TINY[2:]]
        assert run("federate", "--out", fed, "--data", data, "--server", model, "--spec", "8x1",
                   "--n-devices", 1, "--rounds", 2, "--finetune-updates", 5, "--server-lr", 0.1,
                   *common) == EXIT_OK
        assert run("gkt", "--out", tmp_path / "gkt", "--mode", "sd", "--teacher",
                   fed / "devices" / "device_000.ckpt", "--student", model, "--cycles", 2, "--lr", 0.1,
                   *common) == EXIT_OK
        a = load_checkpoint(fed / "server.ckpt").params
        b = load_checkpoint(tmp_path / "gkt" / "student.ckpt").params
        assert a.flat.tobytes() == b.flat.tobytes()
        m = RunManifest.read(fed)
        assert m.extra["routing_violations"] == 0
        assert (fed / "transcript.sha256").read_text().strip() == m.extra["transcript_hash"]

    def test_outputs_and_ensemble_rows(self, data, model, tmp_path):
        assert run("federate", "--out", tmp_path, "--data", data, "--server", model, "--spec", "8x1",
                   "--n-devices", 2, "--rounds", 1, "--lot-chars", 320, "--finetune-updates", 3,
                   "--jsonl", "true", *TINY[2:]) == EXIT_OK
        rows = read_csv(tmp_path / "devices.csv")
        labels = [r[0] for r in rows[1:]]
        assert labels[-2:] == ["A", "E"]
        assert float(rows[-1][1]) <= float(rows[-2][1]) + 1e-12
        assert [r[0] for r in read_csv(tmp_path / "server.csv")[1:]] == ["initial", "final"]
        assert (tmp_path / "transcript.jsonl").stat().st_size > 0

    def test_bad_regime(self, data, tmp_path):
        assert run("federate", "--out", tmp_path, "--data", data, "--device-init", "x") == EXIT_CONFIG
