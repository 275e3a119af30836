import shutil
import subprocess
import sys

import numpy as np
import pytest

from ocgan.cli import run
from ocgan.data import OcclusionConfig, SceneParams, generate_pairs, generate_scene, read_manifest
from ocgan.imageio import load_image, load_mask, save_image

SMALL_MODEL = ["--set", "model.depth=2", "--set", "model.base_width=4", "--set", "model.disc_widths=4,8"]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    o = ["--out", str(out)]
    assert run(["gen-corpus", *o, "--count", "10", "--image-size", "16", "--seed", "7"]) == 0
    assert run(["occlude", *o, "--seed", "7"]) == 0
    assert run(["split", *o, "--fraction", "0.8", "--seed", "7"]) == 0
    assert run(["train", *o, "--epochs", "2", "--checkpoint-every", "1", "--seed", "7", *SMALL_MODEL]) == 0
    assert run(["infer", *o, "--repetitions", "2"]) == 0
    assert run(["overlay", *o, "--alpha", "0.5"]) == 0
    assert run(["eval", *o]) == 0
    return out


class TestPipeline:
    def test_layout(self, pipeline):
        for rel in ("manifest.tsv", "losses.tsv", "latency.tsv", "eval/report.tsv", "eval/summary.tsv",
                    "checkpoints/epoch_1.ogck", "checkpoints/epoch_2.ogck", "resolved_config.txt"):
            assert (pipeline / rel).is_file(), rel
        assert len(list((pipeline / "recon").glob("*_recon.ppm"))) == 2
        assert len(list((pipeline / "overlays").glob("*_overlay.ppm"))) == 2
        assert len(list((pipeline / "eval" / "grids").glob("*_grid.ppm"))) == 2

    def test_corpus_matches_library(self, pipeline):
        manifest = read_manifest(pipeline / "manifest.tsv")
        pairs = generate_pairs(10, SceneParams(image_size=16), OcclusionConfig(), seed=7)
        for rec, pair in zip(manifest.records, pairs):
            loaded = manifest.load_pair(rec)
            assert loaded.x.tobytes() == pair.x.tobytes()
            assert loaded.mask.tobytes() == pair.mask.tobytes()

    def test_split_and_reports(self, pipeline):
        manifest = read_manifest(pipeline / "manifest.tsv")
        assert len(manifest.subset("train")) == 8 and len(manifest.subset("test")) == 2
        assert len((pipeline / "losses.tsv").read_text().splitlines()) == 3
        assert [ln.split("\t")[0] for ln in (pipeline / "latency.tsv").read_text().splitlines()] == [
            "forward", "composite", "total"]
        assert len((pipeline / "eval" / "report.tsv").read_text().splitlines()) == 3

    def test_overlay_alpha_zero_is_input(self, pipeline, tmp_path):
        assert run(["overlay", "--out", str(pipeline), "--alpha", "0"]) == 0
        manifest = read_manifest(pipeline / "manifest.tsv")
        for rec in manifest.subset("test"):
            comp = load_image(pipeline / "overlays" / f"{rec.pair_id}_overlay.ppm")
            assert comp.tobytes() == load_image(manifest.resolve(rec.x_path)).tobytes()

    def test_overlay_only_touches_mask(self, pipeline):
        assert run(["overlay", "--out", str(pipeline), "--alpha", "1"]) == 0
        manifest = read_manifest(pipeline / "manifest.tsv")
        rec = manifest.subset("test")[0]
        comp = load_image(pipeline / "overlays" / f"{rec.pair_id}_overlay.ppm")
        x = load_image(manifest.resolve(rec.x_path))
        mask = load_mask(manifest.resolve(rec.mask_path))
        np.testing.assert_array_equal(comp[~mask], x[~mask])

    def test_resume_extends_training(self, pipeline, tmp_path):
        copy = tmp_path / "copy"
        shutil.copytree(pipeline, copy)
        ckpt = copy / "checkpoints" / "epoch_1.ogck"
        assert run(["train", "--out", str(copy), "--epochs", "2", "--resume", str(ckpt)]) == 0
        assert (copy / "checkpoints" / "epoch_2.ogck").read_bytes() == (
            pipeline / "checkpoints" / "epoch_2.ogck").read_bytes()


def test_split_counts(tmp_path):
    o = ["--out", str(tmp_path)]
    assert run(["gen-corpus", *o, "--count", "100", "--image-size", "16", "--seed", "7"]) == 0
    assert run(["occlude", *o]) == 0
    assert run(["split", *o, "--fraction", "0.8", "--seed", "7"]) == 0
    manifest = read_manifest(tmp_path / "manifest.tsv")
    assert len(manifest.subset("train")) == 80 and len(manifest.subset("test")) == 20


def test_from_dir_import(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    for i in range(3):
        save_image(src / f"img{i}.ppm", generate_scene(SceneParams(image_size=16), i))
    out = ["--out", str(tmp_path / "run")]
    assert run(["gen-corpus", *out, "--from-dir", str(src)]) == 0
    assert run(["occlude", *out]) == 0
    assert len(read_manifest(tmp_path / "run" / "manifest.tsv").records) == 3


def test_resolved_config_layers(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nsplit.fraction = 0.5\ncorpus.count = 9\n")
    assert run(["gen-corpus", "--out", str(tmp_path), "--config", str(cfg), "--count", "4",
                "--image-size", "16"]) == 0
    text = (tmp_path / "resolved_config.txt").read_text()
    assert "corpus.count = 4\n" in text and "split.fraction = 0.5\n" in text


def test_gradcheck_passes(tmp_path):
    assert run(["gradcheck", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "gradcheck.tsv").read_text().splitlines()
    assert len(lines) > 10 and all(ln.endswith("ok") for ln in lines[1:])


@pytest.mark.parametrize("argv", [
    ["split", "--set", "no.such.key=1"],
    ["split", "--seed", "-3"],
    ["split", "--fraction", "abc"],
    ["bogus"],
    ["split", "--set", "novalue"],
])
def test_config_errors_exit_1(tmp_path, capsys, argv):
    assert run([*argv, "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error\tconfig\t")


def test_missing_inputs_exit_2(tmp_path, capsys):
    assert run(["split", "--out", str(tmp_path)]) == 2
    assert capsys.readouterr().err.startswith("error\tio\t")


def test_corrupt_checkpoint_exit_2(pipeline, tmp_path, capsys):
    bad = tmp_path / "bad.ogck"
    bad.write_bytes(b"XXXX" + bytes(40))
    assert run(["eval", "--out", str(pipeline), "--checkpoint", str(bad)]) == 2
    assert "error\tio\t" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ocgan", "split", "--out", str(tmp_path), "--set", "x=1"],
                          capture_output=True, text=True)
    assert proc.returncode == 1
    assert proc.stderr.startswith("error\tconfig\t")
