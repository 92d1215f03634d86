"""Metrics and tables.

Tables follow the layout of the classic robustness/transferability tables:
numeric cells print with two fraction digits, paired cells print as ``a/b``
(hardened/original), per-view cells join views with ``/``, and a wrong
top-1 prediction prints as a literal ``x`` whatever its confidence.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .classifiers import Classifier
from .core import LabeledDataset
from .renderer import Camera, Light, Scene, render_batch
from .signals2d import fgsm_attack, pgd_attack

MISS = "x"
SCHEMA_VERSION = 1


class ResourceError(RuntimeError):
    pass


@dataclass(frozen=True)
class Pair:
    first: float
    second: float


@dataclass(frozen=True)
class Views:
    """Per-view cell: confidences with misses already replaced by ``x``."""

    values: Tuple[Union[float, str], ...]


Cell = Union[float, str, Pair, Views]


def format_cell(cell: Cell) -> str:
    if isinstance(cell, str):
        return cell
    if isinstance(cell, Pair):
        return f"{format_cell(cell.first)}/{format_cell(cell.second)}"
    if isinstance(cell, Views):
        return "/".join(format_cell(v) for v in cell.values)
    return f"{float(cell):.2f}"


@dataclass
class Table:
    name: str
    columns: List[str]
    rows: List[str] = field(default_factory=list)
    cells: List[List[Cell]] = field(default_factory=list)

    def add_row(self, label: str, cells: Sequence[Cell]):
        if len(cells) != len(self.columns):
            raise ValueError(f"row {label!r} has {len(cells)} cells for {len(self.columns)} columns")
        self.rows.append(label)
        self.cells.append(list(cells))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([""] + self.columns)
        for label, row in zip(self.rows, self.cells):
            w.writerow([label] + [format_cell(c) for c in row])
        return buf.getvalue()


def evaluate_accuracy(c: Classifier, d: LabeledDataset, batch_size: int = 256):
    """``(accuracy, mean true-class confidence)``."""
    if len(d) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    hits, conf = 0, 0.0
    for s in range(0, len(d), batch_size):
        y = d.labels[s:s + batch_size]
        p = c.predict_probs(d.images[s:s + batch_size])
        hits += int((p.argmax(axis=1) == y).sum())
        conf += float(p[np.arange(len(y)), y].sum())
    return hits / len(d), conf / len(d)


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    epsilons: Tuple[float, ...]
    step_size: Optional[float] = None  # PGD only; defaults to epsilon / 10
    steps: int = 40

    def __post_init__(self):
        if self.kind not in ("fgsm", "pgd"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        eps = tuple(float(e) for e in self.epsilons)
        if any(e < 0 for e in eps) or list(eps) != sorted(eps):
            raise ValueError("epsilons must be non-negative and ascending")
        object.__setattr__(self, "epsilons", eps)

    def run(self, c, images, labels, eps):
        if self.kind == "fgsm":
            return fgsm_attack(c, images, labels, eps)
        alpha = self.step_size if self.step_size is not None else eps / 10
        return pgd_attack(c, images, labels, eps, alpha, self.steps)

    def columns(self):
        return [f"{self.kind}@{e:g}" for e in self.epsilons]


def attacked_accuracy(c: Classifier, d: LabeledDataset, attack: AttackSpec, eps: float, chunk: int = 250) -> float:
    hits = 0
    for s in range(0, len(d), chunk):
        x, y = d.images[s:s + chunk], d.labels[s:s + chunk]
        adv = attack.run(c, x, y, eps)
        hits += int((c.predict_probs(adv).argmax(axis=1) == y).sum())
    return hits / len(d)


def robustness_table(c, d: LabeledDataset, attacks: Sequence[AttackSpec],
                     original: Optional[LabeledDataset] = None, name: str = "robustness") -> Table:
    """Accuracy (%) on clean data and under each attack/epsilon.

    ``c`` may be one classifier or a list (one row each). With ``original``
    the cells pair ``d`` (hardened) with ``original`` as ``a/b``.
    """
    models = c if isinstance(c, (list, tuple)) else [c]
    columns = ["clean"] + [col for a in attacks for col in a.columns()]
    table = Table(name, columns)
    for m in models:
        row = []
        for col, spec in zip(columns, [None] + [(a, e) for a in attacks for e in a.epsilons]):
            try:
                vals = []
                for data in ([d] if original is None else [d, original]):
                    acc = evaluate_accuracy(m, data)[0] if spec is None else attacked_accuracy(m, data, *spec)
                    vals.append(100.0 * acc)
            except Exception as e:
                raise type(e)(f"cell ({m.identity}, {col}): {e}") from e
            row.append(vals[0] if original is None else Pair(*vals))
        table.add_row(m.identity, row)
    return table


@dataclass
class MultiviewResult:
    predicted: np.ndarray  # (V,)
    confidence: np.ndarray  # (V,) true-class probability
    images: np.ndarray
    true_label: int

    @property
    def cells(self) -> Views:
        return Views(tuple(float(c) if p == self.true_label else MISS
                           for p, c in zip(self.predicted, self.confidence)))


def multiview_confidence(c: Classifier, scene: Scene, texture, views: Sequence[Tuple[Camera, Light]],
                         true_label: int) -> MultiviewResult:
    views = list(views)
    if not views:
        raise ValueError("need at least one view")
    batch = render_batch(scene.with_texture(texture).with_views(views))
    p = c.predict_probs(batch.images)
    return MultiviewResult(p.argmax(axis=1), p[:, true_label], batch.images, true_label)


@dataclass
class TransferMatrix:
    table: Table
    confidence: np.ndarray  # (train, eval, views)

    def diagonal_mean(self) -> float:
        n = self.confidence.shape[0]
        return float(np.mean([self.confidence[i, i].mean() for i in range(n)]))

    def off_diagonal_mean(self) -> float:
        n = self.confidence.shape[0]
        vals = [self.confidence[i, j].mean() for i in range(n) for j in range(n) if i != j]
        return float(np.mean(vals)) if vals else float("nan")


class ConfigError(ValueError):
    pass


def transfer_matrix(classifiers: Sequence[Classifier], textures: Dict[str, np.ndarray], scene: Scene,
                    views, true_label: int) -> TransferMatrix:
    """Rows: model the texture was optimized on; columns: model evaluating it."""
    classifiers = list(classifiers)
    if not classifiers:
        raise ConfigError("need at least one classifier")
    missing = [m.identity for m in classifiers if m.identity not in textures]
    if missing:
        raise ConfigError(f"no texture for train model {missing[0]!r}")
    names = [m.identity for m in classifiers]
    table = Table("transfer", names)
    conf = np.zeros((len(classifiers), len(classifiers), len(list(views))))
    for i, train in enumerate(classifiers):
        row = []
        for j, ev in enumerate(classifiers):
            r = multiview_confidence(ev, scene, textures[train.identity], views, true_label)
            conf[i, j] = r.confidence
            row.append(r.cells)
        table.add_row(train.identity, row)
    return TransferMatrix(table, conf)


@dataclass(frozen=True)
class LightSetting:
    """Light relative to the camera: offsets (degrees) from the view direction."""

    ambient: float = 0.5
    diffuse: float = 0.5
    yaw: float = 0.0
    pitch: float = 0.0

    def light_for(self, camera: Camera) -> Light:
        r, u, f = camera.frame()
        d = f + np.tan(np.radians(self.yaw)) * r + np.tan(np.radians(self.pitch)) * u
        return Light.toward(d, self.ambient, self.diffuse)


@dataclass
class SweepGrid:
    """Cartesian grid azimuth x elevation x distance x light, row-major."""

    azimuth: Sequence[float]
    elevation: Sequence[float]
    distance: Sequence[float]
    lights: Sequence[LightSetting]
    fov_y: float = 40.0
    predicted: Optional[np.ndarray] = None
    confidence: Optional[np.ndarray] = None
    true_label: Optional[int] = None

    @property
    def shape(self):
        return (len(self.azimuth), len(self.elevation), len(self.distance), len(self.lights))

    def cells(self):
        for a in self.azimuth:
            for e in self.elevation:
                for d in self.distance:
                    for ls in self.lights:
                        cam = Camera(d, a, e, self.fov_y)
                        yield cam, ls.light_for(cam)

    def misclassified(self) -> List[Tuple[int, int, int, int]]:
        """Grid coordinates where the true class is lost."""
        if self.predicted is None:
            return []
        wrong = self.predicted.reshape(self.shape) != self.true_label
        return [tuple(int(i) for i in ix) for ix in np.argwhere(wrong)]

    def table(self, name="sweep") -> Table:
        t = Table(name, ["azimuth", "elevation", "distance", "light", "predicted", "confidence"])
        ix = 0
        for a in self.azimuth:
            for e in self.elevation:
                for d in self.distance:
                    for k in range(len(self.lights)):
                        conf = float(self.confidence[ix]) if self.predicted[ix] == self.true_label else MISS
                        t.add_row(str(ix), [float(a), float(e), float(d), str(k), str(int(self.predicted[ix])), conf])
                        ix += 1
        return t


def scene_sweep(c: Classifier, scene: Scene, texture, grid: SweepGrid, true_label: int,
                cell_cap: int = 20000, chunk: int = 64) -> SweepGrid:
    """Classify every grid cell; cells where the true class is lost are the
    camera/light configurations that defeat the model."""
    n = int(np.prod(grid.shape))
    if n == 0:
        raise ValueError("sweep grid is empty")
    if n > cell_cap:
        raise ResourceError(f"sweep grid has {n} cells, cap is {cell_cap}")
    views = list(grid.cells())
    pred, conf = [], []
    for s in range(0, n, chunk):
        r = multiview_confidence(c, scene, texture, views[s:s + chunk], true_label)
        pred.append(r.predicted)
        conf.append(r.confidence)
    return SweepGrid(grid.azimuth, grid.elevation, grid.distance, grid.lights, grid.fov_y,
                     np.concatenate(pred), np.concatenate(conf), true_label)


@dataclass
class EvalReport:
    config_hash: str
    seed: int
    tables: Dict[str, Table] = field(default_factory=dict)
    artifacts: List[str] = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION

    def summary(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "tables": {k: {"rows": t.rows, "columns": t.columns,
                           "cells": [[format_cell(c) for c in row] for row in t.cells]}
                       for k, t in sorted(self.tables.items())},
            "artifacts": sorted(self.artifacts),
        }
