import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from assistive import assets
from assistive.cli import main
from assistive.config import ExperimentConfig
from assistive.core import load_png
from assistive.evaluation import MISS, Table
from assistive.meshio import save_obj
from assistive.renderer import Camera, Light
from assistive.runner import RunRecord, render_preview, run_experiment, sha256_file, write_report

CONFIGS = Path(__file__).parent.parent / "configs"


def write_cfg(path, data):
    path.write_text(yaml.safe_dump(data))
    return path


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out.strip(), err


def record_of(run_dir) -> dict:
    return json.loads((Path(run_dir) / "run_record.json").read_text())


PROBE = {
    "kind": "texture3d", "seed": 0,
    "classifier": {"kind": "red_probe", "input_shape": [16, 16], "target": 1},
    "scene": {"mesh": "panel", "texture": "gray-uv", "texture_res": 8, "image_size": [16, 16],
              "ranges": {"azimuth": [-20, 20], "elevation": [0, 10], "distance": [2.0, 2.5],
                         "ambient": [1.0, 1.0], "diffuse": [0.0, 0.0]}, "held_out_views": 3},
    "signal": {"true_label": 1, "optim": {"step_size": 0.05, "iterations": 30}, "views_per_step": 4},
}

TRAIN = {
    "kind": "train-ref", "seed": 3,
    "train": {"train": {"source": "blobs", "n": 64, "image_size": 8},
              "test": {"source": "blobs", "n": 16, "image_size": 8, "seed": 1},
              "epochs": 3, "batch_size": 8, "learning_rate": 0.05},
}


@pytest.fixture(scope="module")
def blob_checkpoint(tmp_path_factory):
    root = tmp_path_factory.mktemp("ckpt")
    cfg = ExperimentConfig.model_validate({**TRAIN, "output_dir": str(root)})
    rec = run_experiment(cfg, root)
    return Path(rec.run_dir) / "model.ckpt"


class TestRender:
    def test_obj_one_png_per_camera(self, tmp_path, capsys):
        save_obj(tmp_path / "car.obj", assets.car().mesh, np.full((16, 16, 3), 0.4))
        cfg = write_cfg(tmp_path / "r.yaml", {
            "kind": "render", "output_dir": "runs",
            "scene": {"mesh": "car.obj", "texture": "mesh", "held_out_views": 3, "image_size": [24, 24]}})
        code, out, err = run_cli(capsys, "render", "--config", cfg)
        assert code == 0, err
        pngs = sorted((Path(out) / "renders").glob("*.png"))
        assert [p.name for p in pngs] == ["view_000.png", "view_001.png", "view_002.png"]
        assert load_png(pngs[0]).shape == (24, 24, 3)
        assert Path(out).parent == tmp_path / "runs"

    def test_shipped_config_validates(self):
        for path in sorted(CONFIGS.glob("*.yaml")):
            ExperimentConfig.model_validate(yaml.safe_load(path.read_text()))


class TestDeterminism:
    def test_texture3d_twice(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path / "p.yaml", {**PROBE, "output_dir": "runs"})
        _, a, _ = run_cli(capsys, "texture3d", "--config", cfg)
        _, b, _ = run_cli(capsys, "texture3d", "--config", cfg)
        assert a != b
        ra, rb = record_of(a), record_of(b)
        assert ra["manifest"] == rb["manifest"] and ra["config_hash"] == rb["config_hash"]
        assert "tables/multiview.csv" in ra["manifest"] and "texture.png" in ra["manifest"]

    def test_record_reproduces(self, tmp_path):
        cfg = ExperimentConfig.model_validate({**TRAIN, "output_dir": str(tmp_path)})
        rec = run_experiment(cfg, tmp_path)
        assert rec.verify() == []
        again = run_experiment(ExperimentConfig.model_validate({**rec.config, "output_dir": str(tmp_path)}), tmp_path)
        assert again.manifest == rec.manifest

    def test_seed_override_changes_hash(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path / "p.yaml", {**TRAIN, "output_dir": "runs"})
        _, a, _ = run_cli(capsys, "train-ref", "--config", cfg)
        _, b, _ = run_cli(capsys, "train-ref", "--config", cfg, "--seed", "4")
        assert record_of(a)["config_hash"] != record_of(b)["config_hash"]
        assert record_of(b)["seed"] == 4

    def test_verify_detects_tampering(self, tmp_path):
        rec = run_experiment(ExperimentConfig.model_validate({**TRAIN, "output_dir": str(tmp_path)}), tmp_path)
        (Path(rec.run_dir) / "model.ckpt").write_bytes(b"x")
        assert rec.verify() == ["model.ckpt"]


class TestJobs:
    def test_probe_texture3d_end_to_end(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path / "p.yaml", {**PROBE, "output_dir": "runs"})
        code, out, err = run_cli(capsys, "texture3d", "--config", cfg)
        assert code == 0, err
        trace = (Path(out) / "trace.csv").read_text().splitlines()
        assert trace[0] == "iteration,loss,confidence" and len(trace) == 31
        assert float(trace[-1].split(",")[2]) >= 0.99
        rows = (Path(out) / "tables" / "multiview.csv").read_text().splitlines()
        assert rows[0] == ",view0,view1,view2"
        assert rows[2].startswith("optimized,1.00")

    def test_harden_and_attack(self, tmp_path, capsys, blob_checkpoint):
        cfg = write_cfg(tmp_path / "h.yaml", {
            "kind": "harden", "output_dir": "runs", "classifier": {"path": str(blob_checkpoint)},
            "harden": {"dataset": {"source": "blobs", "n": 20, "image_size": 8, "seed": 5},
                       "optim": {"step_size": 0.01, "iterations": 5},
                       "attacks": [{"kind": "fgsm", "epsilons": [0.0, 0.05]}]}})
        code, out, err = run_cli(capsys, "harden", "--config", cfg)
        assert code == 0, err
        rows = (Path(out) / "tables" / "robustness.csv").read_text().splitlines()
        assert rows[0] == ",clean,fgsm@0,fgsm@0.05"
        assert all("/" in cell for cell in rows[1].split(",")[1:])
        assert (Path(out) / "hardened" / "images.npy").exists()

        cfg2 = write_cfg(tmp_path / "a.yaml", {
            "kind": "attack-eval", "output_dir": "runs", "classifier": {"path": str(blob_checkpoint)},
            "attack": {"dataset": {"source": "npy", "path": str(Path(out) / "hardened")},
                       "attacks": [{"kind": "pgd", "epsilons": [0.05], "steps": 3}]}})
        code, out2, err = run_cli(capsys, "attack-eval", "--config", cfg2)
        assert code == 0, err
        assert (Path(out2) / "tables" / "robustness.csv").read_text().startswith(",clean,pgd@0.05")

    def test_patch2d_deceptive_flag(self, tmp_path, capsys, blob_checkpoint):
        base = {"kind": "patch2d", "output_dir": "runs", "classifier": {"path": str(blob_checkpoint)},
                "patch2d": {"dataset": {"source": "blobs", "n": 20, "image_size": 8}, "target_label": 1,
                            "patch_size": [3, 3], "iterations": 5, "step_size": 0.05}}
        cfg = write_cfg(tmp_path / "p.yaml", base)
        _, a, _ = run_cli(capsys, "patch2d", "--config", cfg)
        code, b, err = run_cli(capsys, "patch2d", "--config", cfg, "--deceptive")
        assert code == 0, err
        assert json.loads((Path(a) / "patch.json").read_text())["mode"] == "assistive"
        assert json.loads((Path(b) / "patch.json").read_text())["mode"] == "deceptive"
        assert record_of(a)["config_hash"] != record_of(b)["config_hash"]
        assert load_png(Path(b) / "patch.png").shape == (3, 3, 3)

    def test_patch3d_and_sweep(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path / "p3.yaml", {**PROBE, "kind": "patch3d", "output_dir": "runs",
                                                "signal": {**PROBE["signal"], "region": [0, 0, 8, 4]}})
        code, out, err = run_cli(capsys, "patch3d", "--config", cfg)
        assert code == 0, err
        assert load_png(Path(out) / "patch.png").shape == (8, 4, 3)
        sweep = {**PROBE, "kind": "sweep", "output_dir": "runs",
                 "sweep": {"azimuth": [-10, 10], "elevation": [0, 5], "distance": [2.2],
                           "lights": [{"ambient": 1.0, "diffuse": 0.0}]}}
        code, out, err = run_cli(capsys, "sweep", "--config", write_cfg(tmp_path / "s.yaml", sweep))
        assert code == 0, err
        summary = (Path(out) / "tables" / "sweep_summary.csv").read_text().splitlines()
        assert summary[1:] == ["original,4.00,4.00", "optimized,0.00,4.00"]

    def test_transfer(self, tmp_path, capsys):
        cfg = {**PROBE, "kind": "transfer", "output_dir": "runs", "classifier": None,
               "classifiers": [{"kind": "red_probe", "input_shape": [16, 16]}]}
        code, out, err = run_cli(capsys, "transfer", "--config", write_cfg(tmp_path / "t.yaml", cfg))
        assert code == 0, err
        rows = (Path(out) / "tables" / "transfer_summary.csv").read_text().splitlines()
        assert rows[2] == "off_diagonal,-"

    def test_inputs_not_mutated(self, tmp_path, capsys, blob_checkpoint):
        before = sha256_file(blob_checkpoint)
        cfg = write_cfg(tmp_path / "a.yaml", {
            "kind": "attack-eval", "output_dir": "runs", "classifier": {"path": str(blob_checkpoint)},
            "attack": {"dataset": {"source": "blobs", "n": 4, "image_size": 8}}})
        text = cfg.read_text()
        assert run_cli(capsys, "attack-eval", "--config", cfg)[0] == 0
        assert sha256_file(blob_checkpoint) == before and cfg.read_text() == text


class TestExitCodes:
    def test_unknown_key(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path / "c.yaml", {**PROBE, "scene": {**PROBE["scene"], "meshh": "car"}})
        code, _, err = run_cli(capsys, "texture3d", "--config", cfg)
        assert code == 2
        assert "usage error: scene.meshh" in err

    def test_kind_mismatch(self, tmp_path, capsys):
        code, _, err = run_cli(capsys, "render", "--config", write_cfg(tmp_path / "c.yaml", PROBE))
        assert code == 2 and "kind" in err

    def test_no_subcommand(self, capsys):
        assert run_cli(capsys)[0] == 2

    def test_missing_config_file(self, tmp_path, capsys):
        assert run_cli(capsys, "render", "--config", tmp_path / "nope.yaml")[0] == 2

    def test_bad_checkpoint(self, tmp_path, capsys):
        (tmp_path / "bad.ckpt").write_bytes(b"not a checkpoint")
        cfg = write_cfg(tmp_path / "c.yaml", {
            "kind": "attack-eval", "output_dir": "runs", "classifier": {"path": "bad.ckpt"},
            "attack": {"dataset": {"source": "blobs", "n": 4, "image_size": 8}}})
        code, _, err = run_cli(capsys, "attack-eval", "--config", cfg)
        assert code == 3
        assert err.startswith("[classifiers] input error")

    def test_runtime_error_tagged(self, tmp_path, capsys):
        cfg = {**PROBE, "kind": "patch3d", "scene": {**PROBE["scene"], "texture": "gray"},
               "signal": {**PROBE["signal"], "region": [0, 0, 2, 2]}}
        code, _, err = run_cli(capsys, "patch3d", "--config", write_cfg(tmp_path / "c.yaml", cfg))
        assert code == 4
        assert err.startswith("[signals3d] DimensionError")


class TestWriteReport:
    def _record(self, tmp_path):
        return RunRecord({}, "abc", 0, str(tmp_path))

    def test_empty(self, tmp_path):
        files = write_report(self._record(tmp_path), {})
        assert [f.name for f in files] == ["summary.json"]
        assert json.loads(files[0].read_text())["tables"] == {}

    def test_miss_cell(self, tmp_path):
        t = Table("mv", ["view0", "view1"])
        t.add_row("original", [0.5, MISS])
        write_report(self._record(tmp_path), {"mv": t})
        assert (tmp_path / "tables" / "mv.csv").read_text() == ",view0,view1\noriginal,0.50,x\n"

    def test_byte_identical(self, tmp_path):
        t = Table("mv", ["a"])
        t.add_row("r", [0.25])
        first = [f.read_bytes() for f in write_report(self._record(tmp_path), {"mv": t})]
        second = [f.read_bytes() for f in write_report(self._record(tmp_path), {"mv": t})]
        assert first == second

    def test_missing_dir(self, tmp_path):
        with pytest.raises(OSError):
            write_report(RunRecord({}, "abc", 0, str(tmp_path / "gone")), {})


class TestRenderPreview:
    def _views(self):
        v = (Camera(3.0, 30, 20), Light((0, 0, -1.0), 1.0, 0.0))
        return [v, v]

    def test_gray_vertex_and_duplicates(self, tmp_path):
        mesh = assets.crate().mesh
        from assistive.meshio import save_ply

        save_ply(tmp_path / "c.ply", mesh, np.full((len(mesh.vertices), 3), 0.5))
        files = render_preview(tmp_path / "c.ply", tmp_path / "c.ply", self._views(), tmp_path / "out",
                               (32, 32), (0, 0, 0))
        assert len(files) == 2 and files[0].read_bytes() == files[1].read_bytes()
        img = load_png(files[0])
        cov = img.sum(-1) > 0
        assert cov.any() and np.all(np.abs(img[cov] - 0.5) <= 1 / 255)

    def test_optimized_differs(self, tmp_path):
        save_obj(tmp_path / "q.obj", assets.quad().mesh)
        np.save(tmp_path / "a.npy", np.full((8, 8, 3), 0.5))
        np.save(tmp_path / "b.npy", np.tile([1.0, 0.0, 0.0], (8, 8, 1)))
        v = [(Camera(3.0, 0, 0), Light((0, 0, -1.0), 1.0, 0.0))]
        a = render_preview(tmp_path / "q.obj", tmp_path / "a.npy", v, tmp_path / "a", (16, 16))
        b = render_preview(tmp_path / "q.obj", tmp_path / "b.npy", v, tmp_path / "b", (16, 16))
        assert np.sum((load_png(a[0]) - load_png(b[0])) ** 2) > 0

    def test_mismatch(self, tmp_path):
        save_obj(tmp_path / "q.obj", assets.quad().mesh)
        np.save(tmp_path / "bad.npy", np.full((5, 3), 0.5))
        with pytest.raises(ValueError, match="does not fit"):
            render_preview(tmp_path / "q.obj", tmp_path / "bad.npy", self._views(), tmp_path / "o")
