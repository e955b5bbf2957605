"""Pipeline configuration.

A config is a JSON document; every key except ``seed`` has a desk-scale
default.  There is no wall-clock fallback for the seed.
"""
import os
from dataclasses import asdict, dataclass, field

from . import textio
from .inference.training import Schedule
from .optimizer import EnergyWeights
from .synth import MOTION_KINDS, NoiseSpec

PATH_KEYS = ("skeleton", "rig", "calibration", "dataset", "weights")


@dataclass(frozen=True)
class RigParams:
    n_cameras: int = 4
    radius: float = 3.0
    height: float = 1.5
    target_height: float = 1.0
    focal: float = 1000.0
    size: int = 1000


@dataclass(frozen=True)
class DataParams:
    train_sequences: int = 20
    test_sequences: int = 4
    frames: int = 240
    fps: float = 30.0
    kinds: tuple = MOTION_KINDS
    noise: NoiseSpec = field(default_factory=NoiseSpec)


@dataclass(frozen=True)
class PipelineConfig:
    seed: int
    out: str = "run"
    paths: dict = field(default_factory=dict)  # optional inputs, see PATH_KEYS
    rig: RigParams = field(default_factory=RigParams)
    data: DataParams = field(default_factory=DataParams)
    hidden: int = 64
    schedule: Schedule = field(default_factory=Schedule.desk)
    energy_weights: EnergyWeights = field(default_factory=EnergyWeights)
    window: int = 0
    imu_bones: tuple = ()  # override of the input IMU placement, bone names
    optimize: bool = True

    def __post_init__(self):
        if self.seed is None or isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ValueError("config needs a non-negative integer seed")
        unknown = set(self.paths) - set(PATH_KEYS)
        if unknown:
            raise ValueError(f"unknown path keys: {sorted(unknown)}")
        for key, path in self.paths.items():
            if path is not None and not os.path.exists(path):
                raise FileNotFoundError(f"config path '{key}' does not exist: {path}")

    def path(self, key):
        return self.paths.get(key)

    def to_dict(self):
        d = asdict(self)
        d["schedule"] = self.schedule.to_dict()
        d["data"]["kinds"] = list(self.data.kinds)
        d["imu_bones"] = list(self.imu_bones)
        return d

    def replace(self, **changes):
        doc = {**self.__dict__, **changes}
        return PipelineConfig(**doc)


def config_from_dict(doc, seed=None, out=None, base_dir=None):
    """Build a config; ``seed``/``out`` override the document (CLI flags)."""
    doc = dict(doc)
    if seed is not None:
        doc["seed"] = seed
    if "seed" not in doc:
        raise ValueError("config needs a seed (set 'seed' or pass --seed)")
    if out is not None:
        doc["out"] = out
    paths = dict(doc.get("paths") or {})
    if base_dir:
        paths = {k: (v if v is None or os.path.isabs(v) else os.path.join(base_dir, v)) for k, v in paths.items()}
    data = dict(doc.get("data") or {})
    if "noise" in data:
        data["noise"] = NoiseSpec.from_dict(data["noise"])
    if "kinds" in data:
        data["kinds"] = tuple(data["kinds"])
    sched = Schedule.desk().to_dict()
    sched.update(doc.get("schedule") or {})
    return PipelineConfig(
        seed=doc["seed"],
        out=doc.get("out", "run"),
        paths=paths,
        rig=RigParams(**(doc.get("rig") or {})),
        data=DataParams(**data),
        hidden=int(doc.get("hidden", 64)),
        schedule=Schedule.from_dict(sched),
        energy_weights=EnergyWeights(**(doc.get("energy_weights") or {})),
        window=int(doc.get("window", 0)),
        imu_bones=tuple(doc.get("imu_bones") or ()),
        optimize=bool(doc.get("optimize", True)),
    )


def load_config(path, seed=None, out=None):
    return config_from_dict(textio.load(path), seed, out, os.path.dirname(os.path.abspath(path)))


def save_config(config, path):
    textio.dump(config.to_dict(), path)
