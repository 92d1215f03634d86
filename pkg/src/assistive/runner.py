"""Experiment runner: resolves a config into inputs, runs one job and writes
its artifacts plus a run record into a fresh run directory."""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__, assets, datasets
from .classifiers import Classifier, RedProbe, load_checkpoint, save_checkpoint, train_reference
from .config import ExperimentConfig, RangesModel, SceneSpec
from .core import DimensionError, Direction, LabeledDataset, OptimConfig, load_png, make_rng, save_png
from .evaluation import (
    AttackSpec, EvalReport, LightSetting, SweepGrid, Table, multiview_confidence,
    robustness_table, scene_sweep, transfer_matrix,
)
from .meshio import load_obj, load_ply, save_ply
from .renderer import Camera, Light, Mesh, Scene, SceneRanges, check_texture, render_batch, sample_scene_params
from .signals2d import EraseParams, PatchTrainConfig, harden_dataset, mean_patch_confidence, resize_patch, train_patch_2d
from .signals3d import (
    PatchRegion, TextureMask, optimize_full_texture, optimize_masked_texture, optimize_patch_3d,
    signal_mode,
)

class InputError(ValueError):
    """An input file is missing or does not match what the job needs."""


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunRecord:
    config: dict
    config_hash: str
    seed: int
    run_dir: str
    tool_version: str = __version__
    started: str = ""
    finished: str = ""
    manifest: Dict[str, str] = field(default_factory=dict)  # relative path -> sha256

    def verify(self) -> List[str]:
        """Relative paths whose content no longer matches the manifest."""
        root = Path(self.run_dir)
        return [p for p, h in sorted(self.manifest.items())
                if not (root / p).exists() or sha256_file(root / p) != h]

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)


class Artifacts:
    """Collects files written for a run, relative to its directory."""

    def __init__(self, root: Path):
        self.root = root
        self.files: List[str] = []

    def path(self, rel: str) -> Path:
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(rel)
        return p

    def text(self, rel: str, content: str):
        self.path(rel).write_text(content)

    def png(self, rel: str, image):
        save_png(self.path(rel), image)


# ---------------------------------------------------------------------------
# reporting

def write_report(record: RunRecord, tables: Dict[str, Table], report: Optional[EvalReport] = None) -> List[Path]:
    """Write ``summary.json`` and one CSV per table into the run directory."""
    root = Path(record.run_dir)
    if not root.is_dir():
        raise OSError(f"run directory {root} does not exist")
    report = report or EvalReport(record.config_hash, record.seed)
    report.tables.update(tables)
    written = []
    for name, table in sorted(report.tables.items()):
        p = root / "tables" / f"{name}.csv"
        p.parent.mkdir(exist_ok=True)
        p.write_text(table.to_csv())
        written.append(p)
    summary = root / "summary.json"
    summary.write_text(json.dumps(report.summary(), indent=2, sort_keys=True) + "\n")
    return [summary] + written


# ---------------------------------------------------------------------------
# input resolution

def _resolve(base: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else base / q


def load_dataset(spec, base: Path) -> LabeledDataset:
    if spec.source == "patterns":
        return datasets.pattern_dataset(spec.n, spec.image_size, spec.seed)
    if spec.source == "renders":
        return datasets.render_dataset(spec.n, (spec.image_size, spec.image_size), spec.seed)
    if spec.source == "blobs":
        return datasets.blobs_dataset(spec.n, spec.image_size, spec.seed)
    if not spec.path:
        raise InputError("npy dataset needs 'path'")
    root = _resolve(base, spec.path)
    meta = json.loads((root / "meta.json").read_text())
    return LabeledDataset(np.load(root / "images.npy"), np.load(root / "labels.npy"), meta["num_classes"])


def save_dataset(art: Artifacts, rel: str, d: LabeledDataset):
    np.save(art.path(f"{rel}/images.npy"), d.images)
    np.save(art.path(f"{rel}/labels.npy"), d.labels)
    art.text(f"{rel}/meta.json", json.dumps({"num_classes": d.num_classes, "count": len(d)}, sort_keys=True))


def load_classifier(spec, base: Path) -> Classifier:
    if spec is None:
        raise InputError("this job needs a 'classifier' entry")
    if spec.kind == "red_probe":
        return RedProbe((*spec.input_shape, 3), spec.target)
    return load_checkpoint(_resolve(base, spec.path))


def label_index(label) -> int:
    if isinstance(label, str):
        if label not in datasets.CLASS_NAMES:
            raise InputError(f"unknown class name {label!r}")
        return datasets.class_index(label)
    return int(label)


def load_mesh(spec: SceneSpec, base: Path):
    """Returns ``(mesh, asset or None, file texture or None)``."""
    if spec.mesh in assets.BUILDERS:
        a = datasets.asset(spec.mesh) if spec.mesh in ("car", "airplane", "sign", "crate", "ball") else assets.build(spec.mesh)
        return a.mesh, a, None
    path = _resolve(base, spec.mesh)
    if path.suffix.lower() == ".obj":
        mesh, tex = load_obj(path)
        return mesh, None, tex
    if path.suffix.lower() == ".ply":
        mesh, colors = load_ply(path)
        return mesh, None, colors
    raise InputError(f"unsupported mesh file {path.name}")


def load_texture(spec: SceneSpec, mesh: Mesh, file_texture, base: Path) -> np.ndarray:
    t = spec.texture
    if t == "gray":
        tex = np.full((len(mesh.vertices), 3), 0.5)
    elif t == "gray-uv":
        tex = np.full((spec.texture_res, spec.texture_res, 3), 0.5)
    elif t.startswith("class:"):
        tex = datasets.class_texture(label_index(t[6:]), spec.texture_res)
    elif t == "mesh":
        if file_texture is None:
            raise InputError("mesh file carries no texture")
        tex = file_texture
    else:
        tex = read_texture(_resolve(base, t))
    try:
        check_texture(mesh, np.asarray(tex))
    except DimensionError as e:
        raise InputError(f"texture does not fit mesh: {e}") from None
    return np.asarray(tex, dtype=np.float64)


def read_texture(path: Path) -> np.ndarray:
    suffix = path.suffix.lower()
    if suffix == ".png":
        return load_png(path)
    if suffix == ".npy":
        return np.load(path)
    if suffix == ".ply":
        _, colors = load_ply(path)
        if colors is None:
            raise InputError(f"{path.name} has no vertex colors")
        return colors
    raise InputError(f"unsupported texture file {path.name}")


def to_ranges(r: RangesModel) -> SceneRanges:
    return SceneRanges(r.azimuth, r.elevation, r.distance, r.light_cone, r.ambient, r.diffuse, r.fov_y)


def held_out_views(spec: SceneSpec):
    if spec.views:
        out = []
        for v in spec.views:
            cam = Camera(v.distance, v.azimuth, v.elevation, v.fov_y)
            d = v.light_direction if v.light_direction is not None else cam.frame()[2]
            out.append((cam, Light.toward(d, v.ambient, v.diffuse)))
        return out
    return sample_scene_params(make_rng(spec.held_out_seed, 500), to_ranges(spec.ranges), spec.held_out_views)


def build_scene(spec: SceneSpec, base: Path):
    mesh, asset, file_tex = load_mesh(spec, base)
    tex = load_texture(spec, mesh, file_tex, base)
    scene = Scene(mesh, tex, [], [], tuple(spec.image_size), tuple(spec.background), to_ranges(spec.ranges))
    return scene, asset


def optim_config(m, seed: int) -> OptimConfig:
    return OptimConfig(m.step_size, m.iterations, m.epsilon, m.use_sign_gradient, seed)


def save_texture(art: Artifacts, rel: str, scene: Scene, texture):
    if texture.ndim == 3:
        art.png(f"{rel}.png", texture)
    else:
        save_ply(art.path(f"{rel}.ply"), scene.mesh, texture)


def trace_table(trace) -> str:
    lines = ["iteration,loss,confidence"]
    lines += [f"{r.iteration},{r.loss:.10g},{r.confidence:.10g}" for r in trace]
    return "\n".join(lines) + "\n"


def render_views(art: Artifacts, rel: str, images):
    for i, img in enumerate(images):
        art.png(f"{rel}/view_{i:03d}.png", img)


# ---------------------------------------------------------------------------
# jobs

def job_train_ref(cfg: ExperimentConfig, base: Path, art: Artifacts, tables):
    t = cfg.train
    train = load_dataset(t.train, base)
    test = load_dataset(t.test, base) if t.test else None
    model, stats = train_reference(train, t.epochs, t.batch_size, t.learning_rate, cfg.seed, test)
    save_checkpoint(model, art.path("model.ckpt"))
    table = Table("training", ["train_accuracy", "test_accuracy", "final_loss"])
    table.add_row(model.identity, [stats.train_accuracy, stats.test_accuracy if stats.test_accuracy is not None else "-",
                                   stats.epoch_losses[-1] if stats.epoch_losses else "-"])
    tables["training"] = table


def _attacks(models) -> List[AttackSpec]:
    return [AttackSpec(a.kind, tuple(a.epsilons), a.step_size, a.steps) for a in models]


def job_harden(cfg, base, art, tables):
    c = load_classifier(cfg.classifier, base)
    d = load_dataset(cfg.harden.dataset, base)
    hardened = harden_dataset(c, d, optim_config(cfg.harden.optim, cfg.seed))
    save_dataset(art, "hardened", hardened)
    tables["robustness"] = robustness_table(c, hardened, _attacks(cfg.harden.attacks), original=d)


def job_attack_eval(cfg, base, art, tables):
    c = load_classifier(cfg.classifier, base)
    d = load_dataset(cfg.attack.dataset, base)
    tables["robustness"] = robustness_table(c, d, _attacks(cfg.attack.attacks))


def job_patch2d(cfg, base, art, tables):
    p = cfg.patch2d
    c = load_classifier(cfg.classifier, base)
    d = load_dataset(p.dataset, base)
    target = label_index(p.target_label)
    positives = d.subset(np.flatnonzero(d.labels == target))
    erase = EraseParams(p.random_erase.probability, p.random_erase.area, p.random_erase.aspect,
                        p.random_erase.fill) if p.random_erase else None
    tcfg = PatchTrainConfig(p.patch_size, p.iterations, p.step_size, p.random_location, erase,
                            p.resize_for_eval, p.batch_size, p.init)
    direction = Direction(cfg.signal.mode)
    patch = train_patch_2d(c, positives, target, tcfg, OptimConfig(p.step_size, p.iterations, seed=cfg.seed),
                           direction)
    art.png("patch.png", patch.pixels)
    meta = {"target_label": target, "size": list(patch.size), "config_hash": cfg.hash(), "seed": cfg.seed,
            "mode": direction.value}
    art.text("patch.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    table = Table("patch2d", ["mean_target_confidence"])
    table.add_row("no_patch", [mean_patch_confidence(c, positives, None, target, cfg.seed)])
    table.add_row("patch", [mean_patch_confidence(c, positives, patch, target, cfg.seed)])
    if p.resize_for_eval:
        small = resize_patch(patch.pixels, p.resize_for_eval)
        table.add_row(f"patch_resized_{p.resize_for_eval[0]}x{p.resize_for_eval[1]}",
                      [mean_patch_confidence(c, positives, small, target, cfg.seed)])
    tables["patch2d"] = table


def _signal(cfg):
    s = cfg.signal
    mode = s.mode
    true = label_index(s.true_label)
    target = label_index(s.target_label) if s.target_label is not None else None
    return signal_mode(mode, true, target), true


def _multiview_table(name, c, scene, rows, views, true_label, art, render_rel=None):
    table = Table(name, [f"view{i}" for i in range(len(views))])
    for label, tex in rows:
        r = multiview_confidence(c, scene, tex, views, true_label)
        table.add_row(label, list(r.cells.values))
        if render_rel:
            render_views(art, f"{render_rel}/{label}", r.images)
    return table


def job_texture3d(cfg, base, art, tables):
    c = load_classifier(cfg.classifier, base)
    scene, asset = build_scene(cfg.scene, base)
    mode, true = _signal(cfg)
    s = cfg.signal
    oc = optim_config(s.optim, cfg.seed)
    if s.exclude_parts:
        if scene.uv_mode:
            if asset is None:
                raise InputError("exclude_parts needs a built-in asset with named parts")
            mask = ~asset.texel_mask(s.exclude_parts, scene.texture.shape[0])
        else:
            mask = np.ones(len(scene.mesh.vertices), dtype=bool)
            mask[scene.mesh.group_vertices(s.exclude_parts)] = False
        result = optimize_masked_texture(c, scene, TextureMask.from_texture(scene.texture, mask), mode, oc,
                                         s.views_per_step, s.fixed_views)
    else:
        result = optimize_full_texture(c, scene, mode, oc, s.views_per_step, s.fixed_views)
    save_texture(art, "texture", scene, result.texture)
    art.text("trace.csv", trace_table(result.trace))
    views = held_out_views(cfg.scene)
    tables["multiview"] = _multiview_table("multiview", c, scene, [("original", scene.texture),
                                                                   ("optimized", result.texture)],
                                           views, true, art, "renders")


def job_patch3d(cfg, base, art, tables):
    c = load_classifier(cfg.classifier, base)
    scene, _ = build_scene(cfg.scene, base)
    mode, true = _signal(cfg)
    s = cfg.signal
    if s.region is None:
        raise InputError("patch3d needs signal.region")
    region = PatchRegion(*s.region)
    result = optimize_patch_3d(c, scene, region, mode, optim_config(s.optim, cfg.seed), s.views_per_step,
                               s.fixed_views)
    art.png("patch.png", result.patch)
    meta = {"target_label": mode.target_label, "size": [region.height, region.width],
            "region": [region.row, region.col, region.height, region.width],
            "config_hash": cfg.hash(), "seed": cfg.seed, "mode": mode.direction.value}
    art.text("patch.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    art.png("texture.png", result.texture)
    art.text("trace.csv", trace_table(result.trace))
    views = held_out_views(cfg.scene)
    tables["multiview"] = _multiview_table("multiview", c, scene, [("unpatched", scene.texture),
                                                                   ("patched", result.texture)],
                                           views, true, art, "renders")


def job_sweep(cfg, base, art, tables):
    c = load_classifier(cfg.classifier, base)
    scene, _ = build_scene(cfg.scene, base)
    sw = cfg.sweep
    grid = SweepGrid(sw.azimuth, sw.elevation, sw.distance,
                     [LightSetting(l.ambient, l.diffuse, l.yaw, l.pitch) for l in sw.lights], cfg.scene.ranges.fov_y)
    mode, true = _signal(cfg)
    before = scene_sweep(c, scene, scene.texture, grid, true, sw.cell_cap)
    tables["sweep_original"] = before.table("sweep_original")
    summary = Table("sweep_summary", ["misclassified_cells", "total_cells"])
    summary.add_row("original", [float(len(before.misclassified())), float(np.prod(grid.shape))])
    if sw.optimize:
        result = optimize_full_texture(c, scene, mode, optim_config(cfg.signal.optim, cfg.seed),
                                       cfg.signal.views_per_step, cfg.signal.fixed_views)
        save_texture(art, "texture", scene, result.texture)
        after = scene_sweep(c, scene, result.texture, grid, true, sw.cell_cap)
        tables["sweep_optimized"] = after.table("sweep_optimized")
        summary.add_row("optimized", [float(len(after.misclassified())), float(np.prod(grid.shape))])
    tables["sweep_summary"] = summary


def job_transfer(cfg, base, art, tables):
    models = [load_classifier(s, base) for s in cfg.classifiers]
    if not models:
        raise InputError("transfer needs a non-empty 'classifiers' list")
    scene, _ = build_scene(cfg.scene, base)
    mode, true = _signal(cfg)
    s = cfg.signal
    textures = {}
    for i, m in enumerate(models):
        r = optimize_full_texture(m, scene, mode, optim_config(s.optim, cfg.seed), s.views_per_step, s.fixed_views)
        textures[m.identity] = r.texture
        save_texture(art, f"texture_{i}", scene, r.texture)
    tm = transfer_matrix(models, textures, scene, held_out_views(cfg.scene), true)
    tables["transfer"] = tm.table
    means = Table("transfer_summary", ["mean_confidence"])
    means.add_row("diagonal", [tm.diagonal_mean()])
    means.add_row("off_diagonal", [tm.off_diagonal_mean() if len(models) > 1 else "-"])
    tables["transfer_summary"] = means


def job_render(cfg, base, art, tables):
    scene, _ = build_scene(cfg.scene, base)
    views = held_out_views(cfg.scene)
    batch = render_batch(scene.with_views(views))
    render_views(art, "renders", batch.images)
    cams = Table("views", ["distance", "azimuth", "elevation", "ambient", "diffuse"])
    for i, (cam, light) in enumerate(views):
        cams.add_row(f"view_{i:03d}", [cam.distance, cam.azimuth, cam.elevation, light.ambient, light.diffuse])
    tables["views"] = cams


JOBS = {
    "train-ref": job_train_ref, "harden": job_harden, "attack-eval": job_attack_eval, "patch2d": job_patch2d,
    "texture3d": job_texture3d, "patch3d": job_patch3d, "sweep": job_sweep, "transfer": job_transfer,
    "render": job_render,
}


def _now():
    return _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")


def fresh_run_dir(out: Path, kind: str, config_hash: str) -> Path:
    stamp = _now()
    root = out / f"{stamp}-{kind}-{config_hash[:12]}"
    k = 1
    while root.exists():
        root = out / f"{stamp}-{kind}-{config_hash[:12]}-{k}"
        k += 1
    root.mkdir(parents=True)
    return root


def run_experiment(cfg: ExperimentConfig, base_dir=".", deceptive: bool = False) -> RunRecord:
    """Run one job into a new directory under ``cfg.output_dir``."""
    if cfg.kind is None:
        raise ValueError("config has no job kind")
    if deceptive:
        cfg = cfg.model_copy(update={"signal": cfg.signal.model_copy(update={"mode": "deceptive"})})
    base = Path(base_dir)
    chash = cfg.hash()
    root = fresh_run_dir(_resolve(base, cfg.output_dir).resolve(), cfg.kind, chash)
    record = RunRecord(cfg.canonical(), chash, cfg.seed, str(root), started=_dt.datetime.now(_dt.timezone.utc).isoformat())
    art = Artifacts(root)
    tables: Dict[str, Table] = {}
    JOBS[cfg.kind](cfg, base, art, tables)
    report = EvalReport(chash, cfg.seed, artifacts=list(art.files))
    for p in write_report(record, tables, report):
        art.files.append(str(p.relative_to(root)))
    record.manifest = {rel: sha256_file(root / rel) for rel in sorted(set(art.files))}
    record.finished = _dt.datetime.now(_dt.timezone.utc).isoformat()
    (root / "run_record.json").write_text(record.to_json() + "\n")
    return record


def render_preview(mesh_path, texture_path, views, out_dir, image_size=(128, 128),
                   background=(0.35, 0.35, 0.35)) -> List[Path]:
    """Render ``views`` of a textured mesh to PNGs for inspection."""
    mesh_path, out_dir = Path(mesh_path), Path(out_dir)
    spec = SceneSpec(mesh=str(mesh_path), texture=str(texture_path), image_size=tuple(image_size),
                     background=tuple(background))
    scene, _ = build_scene(spec, Path("."))
    batch = render_batch(scene.with_views(views))
    return [save_png(out_dir / f"view_{i:03d}.png", img) for i, img in enumerate(batch.images)]
