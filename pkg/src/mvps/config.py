"""Run configuration: one JSON-serialisable record for every pipeline stage."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields as dc_fields

from .fields import FieldConfig
from .loss import LossConfig

FORMAT_VERSION = 1


@dataclass
class SceneSpec:
    shape: str = "sphere"
    brdf: str = "lambertian"
    texture: str = "none"
    views: int = 8
    lights: int = 16
    resolution: int = 128
    noise_std: float = 0.0
    camera_radius: float = 4.0
    elevation: list[float] = field(default_factory=lambda: [30.0, -30.0])
    bounding_radius: float = 1.5


@dataclass
class OracleSpec:
    hypotheses: int = 32
    ensemble_size: int = 100
    tau_mvs: float = 0.9
    tau_ps: float = 0.03
    mvs_sharpness: float = 20.0
    mvs_cost_noise: float = 0.0
    ps_base_noise: float = 0.0
    ps_residual_gain: float = 10.0


@dataclass
class EvalSpec:
    grid_resolution: int = 128
    tau_f: float | None = None  # None: 1% of the bounding-sphere diameter
    samples: int = 100_000
    gt_resolution: int = 192
    profile_plane: list[float] = field(default_factory=lambda: [0.0, 0.0, 0.0, 0.0, 0.0, 1.0])

    def threshold(self, bounding_radius: float) -> float:
        return self.tau_f if self.tau_f is not None else 0.01 * 2.0 * bounding_radius


@dataclass
class RunConfig:
    scene: SceneSpec = field(default_factory=SceneSpec)
    oracle: OracleSpec = field(default_factory=OracleSpec)
    loss: LossConfig = field(default_factory=LossConfig)
    network: FieldConfig = field(default_factory=FieldConfig)
    eval: EvalSpec = field(default_factory=EvalSpec)
    seed: int = 0
    output: str = "runs/default"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["format_version"] = FORMAT_VERSION
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        d.pop("format_version", None)
        d.pop("derived_seeds", None)
        parts = {"scene": SceneSpec, "oracle": OracleSpec, "loss": LossConfig, "network": FieldConfig, "eval": EvalSpec}
        kw = {}
        for k, v in d.items():
            if k in parts:
                known = {f.name for f in dc_fields(parts[k])}
                unknown = set(v) - known
                if unknown:
                    raise ValueError(f"unknown {k} field(s): {sorted(unknown)}")
                kw[k] = parts[k](**v)
            elif k in ("seed", "output"):
                kw[k] = v
            else:
                raise ValueError(f"unknown configuration key '{k}'")
        return cls(**kw)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    def stage_seed(self, stage: str) -> int:
        return derive_seed(self.seed, stage)


def derive_seed(seed: int, stage: str) -> int:
    """Per-stage seed: the first 4 bytes of sha256("<seed>:<stage>")."""
    h = hashlib.sha256(f"{seed}:{stage}".encode()).digest()
    return int.from_bytes(h[:4], "little") & 0x7FFFFFFF


STAGES = ("simulate", "priors", "reconstruct", "evaluate")


def write_run_config(cfg: RunConfig, directory) -> str:
    os.makedirs(directory, exist_ok=True)
    d = cfg.to_dict()
    d["derived_seeds"] = {s: cfg.stage_seed(s) for s in STAGES}
    path = os.path.join(directory, "run_config.json")
    with open(path, "w") as f:
        json.dump(d, f, indent=1, sort_keys=True)
    return path


def read_run_config(path) -> RunConfig:
    with open(path) as f:
        return RunConfig.from_json(f.read())


def worker_count(default: int = 1) -> int:
    """Worker cap from MVPS_THREADS (at least 1)."""
    raw = os.environ.get("MVPS_THREADS")
    if raw is None:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"MVPS_THREADS must be an integer, got {raw!r}") from None
