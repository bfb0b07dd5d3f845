import struct

import numpy as np
import pytest

from ganforensics import cli, data, model, nncore


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def spec_of(out):
    return dict(line.split("=", 1) for line in out.splitlines() if "=" in line and not line.startswith("#"))


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert cli.main(["synth", "--families", "A,B", "--n", "12", "--seed", "7", "--size", "32", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def trained(tmp_path_factory, synth_dir):
    root = tmp_path_factory.mktemp("runs")
    common = ["--train-manifest", synth_dir / "manifest.tsv", "--sources", "real,A", "--train-count", "8",
              "--input-size", "32", "--widths", "2,4,4,4", "--batch-size", "4", "--epochs", "1"]
    paths = {}
    for mode in ("none", "blur", "noise"):
        out = root / mode
        assert cli.main(["train", "--mode", mode, "--out", str(out)] + [str(c) for c in common]) == 0
        paths[mode] = out
    return paths


class TestSynth:
    def test_counts_and_manifest(self, synth_dir):
        m = data.read_manifest(synth_dir / "manifest.tsv")
        assert m.sources() == ["real", "A", "B"]
        assert [len(m.by_source(s)) for s in m.sources()] == [12, 12, 12]
        assert m.image_size == 32

    def test_same_seed_same_files(self, synth_dir, tmp_path, capsys):
        code, out, _ = run(capsys, "synth", "--families", "A,B", "--n", 12, "--seed", 7, "--size", 32, "--out", tmp_path)
        assert code == 0
        ours = sorted(p.relative_to(tmp_path) for p in tmp_path.rglob("*.png"))
        theirs = sorted(p.relative_to(synth_dir) for p in synth_dir.rglob("*.png"))
        assert ours == theirs
        for rel in ours:
            assert (tmp_path / rel).read_bytes() == (synth_dir / rel).read_bytes()

    def test_diagnostics_report_separation_check(self, tmp_path, capsys):
        code, out, _ = run(capsys, "synth", "--families", "A", "--n", 4, "--size", 64, "--out", tmp_path)
        assert code == 0
        header, row = [l for l in out.splitlines() if l.startswith(("family", "A\t"))]
        fields = dict(zip(header.split("\t"), row.split("\t")))
        assert fields["ratio_ok(>=3)"] == "True"
        assert float(fields["ratio"]) >= 3.0

    def test_unknown_family(self, tmp_path, capsys):
        code, _, err = run(capsys, "synth", "--families", "A,Q", "--out", tmp_path)
        assert code == cli.EXIT_ERROR
        assert err.startswith("config.family: ")


class TestTrain:
    def test_outputs(self, trained):
        for mode, out in trained.items():
            assert {p.name for p in out.iterdir()} >= {"model.ckpt", "train_log.tsv", "spec.txt"}
        assert model.load_checkpoint(trained["blur"] / "model.ckpt").metadata["model_id"] == "M_GB"

    def test_spec_echo_is_complete(self, trained):
        spec = dict(l.split("=", 1) for l in (trained["none"] / "spec.txt").read_text().splitlines())
        assert spec["command"] == "train" and spec["mode"] == "none"
        assert spec["lr"] == "0.0002" and spec["beta1"] == "0.5" and spec["threads"] == "1"
        assert spec["widths"] == "2,4,4,4"

    def test_refeeding_spec_reproduces_run(self, trained, tmp_path, capsys):
        code, out, _ = run(capsys, "train", "--config", trained["noise"] / "spec.txt", "--out", tmp_path)
        assert code == 0
        assert (tmp_path / "model.ckpt").read_bytes() == (trained["noise"] / "model.ckpt").read_bytes()
        assert (tmp_path / "train_log.tsv").read_bytes() == (trained["noise"] / "train_log.tsv").read_bytes()
        ref = (trained["noise"] / "spec.txt").read_text().replace(f"out={trained['noise']}", f"out={tmp_path}")
        assert (tmp_path / "spec.txt").read_text() == ref

    def test_flags_override_config(self, trained, tmp_path, capsys):
        code, out, _ = run(capsys, "train", "--config", trained["none"] / "spec.txt", "--epochs", 2, "--out", tmp_path)
        assert code == 0
        assert spec_of(out)["epochs"] == "2"
        assert len((tmp_path / "train_log.tsv").read_text().splitlines()) == 2

    def test_echo_covers_user_flags(self, capsys, tmp_path):
        code, out, _ = run(capsys, "train", "--train-manifest", tmp_path / "x.tsv", "--out", tmp_path, "--batch-size", 8)
        spec = spec_of(out)
        assert spec["batch_size"] == "8" and spec["train_manifest"] == str(tmp_path / "x.tsv")

    def test_missing_manifest(self, capsys, tmp_path):
        code, _, err = run(capsys, "train", "--mode", "none", "--train-manifest", tmp_path / "m.tsv", "--out", tmp_path / "r")
        assert code != 0
        assert err.count("\n") == 1 and err.startswith("io.manifest_missing: ")

    def test_required_flag(self, capsys, tmp_path):
        code, _, err = run(capsys, "train", "--out", tmp_path)
        assert code != 0 and err.startswith("config.missing: ")

    def test_unknown_config_key(self, capsys, tmp_path):
        cfg = tmp_path / "c.txt"
        cfg.write_text("epochs=3\nlearning_speed=9\n")
        code, _, err = run(capsys, "train", "--config", cfg)
        assert code != 0 and "learning_speed" in err and err.startswith("config.invalid: ")

    def test_mixed_needs_opt_in(self, capsys, synth_dir, tmp_path):
        code, _, err = run(capsys, "train", "--mode", "mixed", "--train-manifest", synth_dir / "manifest.tsv", "--out", tmp_path)
        assert code != 0 and err.startswith("config.invalid: ")

    def test_bad_flag_value(self, capsys):
        code, _, err = run(capsys, "train", "--epochs", "many")
        assert code != 0 and err.startswith("config.usage: ")


class TestEval:
    def test_single(self, trained, synth_dir, capsys, tmp_path):
        code, out, _ = run(capsys, "eval", "--checkpoint", trained["none"] / "model.ckpt",
                           "--manifest", synth_dir / "manifest.tsv", "--test-count", 4, "--out", tmp_path)
        assert code == 0
        rows = (tmp_path / "report.tsv").read_text().splitlines()[1:]
        assert len(rows) == 1 and rows[0].split("\t")[1] == "M"

    def test_refeed_with_empty_values(self, trained, synth_dir, capsys, tmp_path):
        run(capsys, "eval", "--checkpoint", trained["blur"] / "model.ckpt", "--manifest", synth_dir / "manifest.tsv",
            "--test-count", 4, "--out", tmp_path / "a")
        assert "checkpoints=\n" in (tmp_path / "a" / "spec.txt").read_text()
        code, _, _ = run(capsys, "eval", "--config", tmp_path / "a" / "spec.txt", "--out", tmp_path / "b")
        assert code == 0
        assert (tmp_path / "a" / "report.tsv").read_bytes() == (tmp_path / "b" / "report.tsv").read_bytes()

    def test_table1_nine_rows(self, trained, synth_dir, capsys, tmp_path):
        m = data.read_manifest(synth_dir / "manifest.tsv")
        _, test = data.split_by_source(m, 8, 4)
        manifests = []
        for fam in ("A", "B", "A"):
            path = tmp_path / f"test_{len(manifests)}.tsv"
            part = test.by_source("real") + test.by_source(fam)
            data.write_manifest(part, path)
            manifests.append(str(path))
        ckpts = ",".join(str(trained[k] / "model.ckpt") for k in ("none", "blur", "noise"))
        code, out, _ = run(capsys, "eval", "--table1", "--checkpoints", ckpts, "--test-manifests", ",".join(manifests),
                           "--out", tmp_path / "rep")
        assert code == 0
        lines = (tmp_path / "rep" / "report.tsv").read_text().splitlines()
        rows = [l.split("\t") for l in lines[1:]]
        assert len(rows) == 9
        assert [r[1] for r in rows] == ["M", "M_GB", "M_GN"] * 3
        assert [r[0] for r in rows] == [str(i) for i in range(1, 10)]
        for name in ("M", "M_GB", "M_GN"):
            assert len({r[4] for r in rows if r[1] == name}) == 1
        assert "Detector model" in out

    def test_single_manifest_split_per_fake_source(self, trained, synth_dir, capsys, tmp_path):
        ckpts = ",".join(str(trained[k] / "model.ckpt") for k in ("none", "blur", "noise"))
        code, out, _ = run(capsys, "eval", "--table1", "--checkpoints", ckpts,
                           "--test-manifests", synth_dir / "manifest.tsv", "--test-count", 4, "--out", tmp_path)
        rows = (tmp_path / "report.tsv").read_text().splitlines()[1:]
        assert code == 0 and len(rows) == 6
        assert [r.split("\t")[2] for r in rows[::3]] == ["A+real", "B+real"]

    def test_missing_checkpoint_leaves_gap(self, trained, synth_dir, capsys, tmp_path):
        ckpts = ",".join([str(trained["none"] / "model.ckpt"), str(tmp_path / "gone.ckpt")])
        code, out, err = run(capsys, "eval", "--table1", "--checkpoints", ckpts,
                             "--test-manifests", synth_dir / "manifest.tsv", "--test-count", 4)
        assert code == 0
        assert "io.checkpoint_missing" in err
        assert "missing" in out

    def test_version_mismatch(self, trained, synth_dir, capsys, tmp_path):
        blob = bytearray((trained["none"] / "model.ckpt").read_bytes())
        struct.pack_into("<I", blob, 4, 99)
        bad = tmp_path / "v99.ckpt"
        bad.write_bytes(bytes(blob))
        code, _, err = run(capsys, "eval", "--checkpoint", bad, "--manifest", synth_dir / "manifest.tsv")
        assert code != 0 and err.startswith("checkpoint.version: ")


class TestGradcheck:
    def test_conv_only(self, capsys):
        code, out, _ = run(capsys, "gradcheck", "--layer", "conv")
        assert code == 0
        rows = [l for l in out.splitlines() if l.startswith("conv\t")]
        assert len(rows) == 1 and rows[0].endswith("PASS")
        assert not any(l.startswith("network\t") for l in out.splitlines())

    def test_sign_flip_fails(self, capsys, monkeypatch):
        original = nncore.conv2d_backward

        def flipped(*a, **k):
            gx, gw, gb = original(*a, **k)
            return gx, -gw, gb

        monkeypatch.setattr(nncore, "conv2d_backward", flipped)
        code, out, _ = run(capsys, "gradcheck", "--layer", "conv")
        assert code == cli.EXIT_CHECK_FAILED
        assert "FAIL" in out


class TestPreview:
    @pytest.fixture
    def image(self, tmp_path):
        px = np.random.default_rng(3).integers(0, 256, (20, 24, 3), dtype=np.uint8)
        path = tmp_path / "in.png"
        path.write_bytes(data.encode_png(px))
        return path, px

    def test_ten_images_and_identities(self, image, tmp_path, capsys):
        path, px = image
        code, _, _ = run(capsys, "preview", "--input", path, "--out", tmp_path / "p")
        assert code == 0
        names = sorted(p.name for p in (tmp_path / "p").glob("*_*.png"))
        assert len(names) == 10
        for name in ("blur_k1.png", "noise_s0.png"):
            np.testing.assert_array_equal(data.decode_image((tmp_path / "p" / name).read_bytes()), px)
        assert not np.array_equal(data.decode_image((tmp_path / "p" / "noise_s5.png").read_bytes()), px)

    def test_deterministic(self, image, tmp_path, capsys):
        path, _ = image
        for d in ("a", "b"):
            run(capsys, "preview", "--input", path, "--seed", 4, "--out", tmp_path / d)
        for f in (tmp_path / "a").iterdir():
            if f.suffix == ".png":
                assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()

    def test_corrupt_input(self, tmp_path, capsys):
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"\x89PNG garbage")
        code, _, err = run(capsys, "preview", "--input", bad, "--out", tmp_path / "p")
        assert code != 0 and err.startswith("io.decode: ")


class TestHelp:
    @pytest.mark.parametrize("command", ["train", "eval", "synth", "gradcheck", "preview"])
    def test_every_flag_documented_with_default(self, command):
        sub = cli._subparser(cli.build_parser(), command)
        text = sub.format_help()
        for action in sub._actions:
            if action.dest == "help":
                continue
            assert action.option_strings[0] in text
        assert text.count("(default:") == len([a for a in sub._actions if a.dest != "help"])

    def test_no_command(self, capsys):
        code, _, err = run(capsys)
        assert code != 0 and err.startswith("config.usage: ")
