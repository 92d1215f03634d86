"""Experiment configuration schema (YAML or JSON files).

Unknown keys are rejected everywhere so typos in sweep configs fail fast.
Bump ``CONFIG_SCHEMA_VERSION`` whenever a field changes meaning.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

CONFIG_SCHEMA_VERSION = 1

JobKind = Literal["train-ref", "harden", "attack-eval", "patch2d", "texture3d", "patch3d", "sweep", "transfer", "render"]


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DatasetSpec(Strict):
    """Synthetic generator (``patterns``, ``renders``, ``blobs``) or a saved ``npy`` directory."""

    source: Literal["patterns", "renders", "blobs", "npy"] = "patterns"
    n: int = Field(500, ge=1)  # renders: images per class
    image_size: int = Field(16, ge=4)
    seed: int = Field(0, ge=0)
    path: Optional[str] = None


class ClassifierSpec(Strict):
    kind: Literal["checkpoint", "red_probe"] = "checkpoint"
    path: Optional[str] = None
    input_shape: Tuple[int, int] = (32, 32)
    target: int = 1

    @model_validator(mode="after")
    def _need_path(self):
        if self.kind == "checkpoint" and not self.path:
            raise ValueError("checkpoint classifier needs 'path'")
        return self


class TrainSpec(Strict):
    train: DatasetSpec = DatasetSpec(n=4000)
    test: Optional[DatasetSpec] = DatasetSpec(n=500, seed=1)
    epochs: int = Field(10, ge=0)
    batch_size: int = Field(32, ge=1)
    learning_rate: float = Field(0.01, gt=0)


class AttackModel(Strict):
    kind: Literal["fgsm", "pgd"] = "fgsm"
    epsilons: List[float] = [0.01, 0.02, 0.04]
    step_size: Optional[float] = None
    steps: int = 40


class OptimModel(Strict):
    step_size: float = Field(0.005, gt=0)
    iterations: int = Field(40, ge=0)
    epsilon: Optional[float] = Field(None, ge=0)
    use_sign_gradient: bool = True


class HardenSpec(Strict):
    dataset: DatasetSpec = DatasetSpec(n=500, seed=1)
    optim: OptimModel = OptimModel()
    attacks: List[AttackModel] = [AttackModel()]


class EraseModel(Strict):
    probability: float = 0.5
    area: Tuple[float, float] = (0.02, 0.4)
    aspect: Tuple[float, float] = (0.3, 3.3)
    fill: Literal["random", "gray"] = "random"


class Patch2DSpec(Strict):
    dataset: DatasetSpec = DatasetSpec()
    target_label: Union[int, str] = 0
    patch_size: Tuple[int, int] = (6, 6)
    iterations: int = Field(100, ge=0)
    step_size: float = Field(0.01, gt=0)
    batch_size: int = Field(16, ge=1)
    random_location: bool = True
    random_erase: Optional[EraseModel] = EraseModel()
    resize_for_eval: Optional[Tuple[int, int]] = None
    init: Literal["random", "gray"] = "random"


class RangesModel(Strict):
    azimuth: Tuple[float, float] = (0.0, 360.0)
    elevation: Tuple[float, float] = (5.0, 35.0)
    distance: Tuple[float, float] = (2.6, 3.4)
    light_cone: Tuple[float, float] = (0.0, 50.0)
    ambient: Tuple[float, float] = (0.3, 0.6)
    diffuse: Tuple[float, float] = (0.3, 0.7)
    fov_y: float = 40.0


class ViewModel(Strict):
    distance: float = 3.0
    azimuth: float = 0.0
    elevation: float = 20.0
    fov_y: float = 40.0
    light_direction: Optional[Tuple[float, float, float]] = None  # default: along the view direction
    ambient: float = 0.5
    diffuse: float = 0.5


class SceneSpec(Strict):
    """``mesh``: built-in asset name or an .obj/.ply path. ``texture``: ``gray``
    (per-vertex 0.5), ``gray-uv``, ``class:<name>``, ``mesh`` (the file's own
    texture/colors) or a .png/.ply/.npy path."""

    mesh: str = "car"
    texture: str = "gray"
    texture_res: int = 64
    image_size: Tuple[int, int] = (32, 32)
    background: Tuple[float, float, float] = (0.35, 0.35, 0.35)
    ranges: RangesModel = RangesModel()
    held_out_views: int = Field(15, ge=1)
    held_out_seed: int = 999
    views: Optional[List[ViewModel]] = None  # explicit views replace the held-out sample


class SignalSpec(Strict):
    mode: Literal["assistive", "deceptive"] = "assistive"
    true_label: Union[int, str] = "car_red"
    target_label: Optional[Union[int, str]] = None
    optim: OptimModel = OptimModel(step_size=0.01, iterations=200)
    views_per_step: int = Field(15, ge=1)
    fixed_views: bool = False
    exclude_parts: List[str] = []  # masked texture: parts kept frozen
    region: Optional[Tuple[int, int, int, int]] = None  # patch3d: row, col, height, width


class LightModel(Strict):
    ambient: float = 0.5
    diffuse: float = 0.5
    yaw: float = 0.0
    pitch: float = 0.0


class SweepSpec(Strict):
    azimuth: List[float] = [0.0, 72.0, 144.0, 216.0, 288.0]
    elevation: List[float] = [5.0, 25.0, 45.0, 65.0, 80.0]
    distance: List[float] = [3.0]
    lights: List[LightModel] = [LightModel(ambient=0.1, diffuse=0.9, yaw=60, pitch=40),
                                LightModel(ambient=0.3, diffuse=0.7),
                                LightModel(ambient=0.05, diffuse=0.3, yaw=-50, pitch=30)]
    cell_cap: int = 20000
    optimize: bool = True  # also sweep an assistive texture optimized with `signal`


class ExperimentConfig(Strict):
    schema_version: Literal[1] = CONFIG_SCHEMA_VERSION
    kind: Optional[JobKind] = None
    seed: int = Field(0, ge=0, lt=2**64)
    output_dir: str = "runs"
    classifier: Optional[ClassifierSpec] = None
    classifiers: List[ClassifierSpec] = []  # transfer jobs
    train: TrainSpec = TrainSpec()
    harden: HardenSpec = HardenSpec()
    attack: HardenSpec = HardenSpec()  # attack-eval reuses dataset + attacks
    patch2d: Patch2DSpec = Patch2DSpec()
    scene: SceneSpec = SceneSpec()
    signal: SignalSpec = SignalSpec()
    sweep: SweepSpec = SweepSpec()

    def canonical(self) -> dict:
        d = self.model_dump(mode="json")
        d.pop("output_dir")
        return d

    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def load_config(path) -> ExperimentConfig:
    """Parse a YAML/JSON config file (raises pydantic ``ValidationError``)."""
    text = Path(path).read_text()
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ValueError("config root must be a mapping")
    return ExperimentConfig.model_validate(data)


def error_paths(exc) -> List[str]:
    """Human-readable ``field.path: message`` lines from a ValidationError."""
    return [".".join(str(p) for p in e["loc"]) + ": " + e["msg"] for e in exc.errors()]
