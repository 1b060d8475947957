"""Run configuration: one JSON file with a section per module, all optional.

An empty JSON object runs the defaults (selected layers/kernels scaled to
the toy encoder depth, the standard replacement layers/ratio, the demo
taxonomy scenes).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .contextual_shift import CSConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .metrics import AssociationMatrix
from .pipeline import EnsembleConfig, NoiseConfig
from .scenes import SceneConfig
from .sim import SIMConfig


@dataclass
class MetricsConfig:
    gt_present_only: bool = False


@dataclass
class RunConfig:
    seed: int = 0
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    sim: SIMConfig = field(default_factory=SIMConfig)
    cs: CSConfig = field(default_factory=CSConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def association(self) -> AssociationMatrix:
        return AssociationMatrix.from_mapping(
            self.scene.hierarchy, self.scene.num_classes
        )


_SECTION_KEYS = {
    "encoder": {"num_layers", "embed_dim", "num_heads", "patch_size", "seed"},
    "sim": {
        "selected_layers",
        "sigmas",
        "gamma",
        "heads",
        "conv_weights",
        "seed",
        "proj_init_scale",
    },
    "cs": {"idx", "alpha", "bg_threshold", "sub_image_size", "fill_value", "seed"},
    "ensemble": {"lambda", "temperature"},
    "scene": {
        "image_count",
        "canvas",
        "num_classes",
        "shapes_min",
        "shapes_max",
        "hierarchy",
        "class_names",
        "seed",
        "texture_amplitude",
    },
    "noise": {"mask_flip_rate", "embed_noise", "parent_swap_rate"},
    "metrics": {"gt_present_only"},
}


def _check_keys(section: str, given: dict) -> dict:
    allowed = _SECTION_KEYS[section]
    unknown = set(given) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in '{section}' section: {sorted(unknown)}")
    return given


def run_config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(raw) - (set(_SECTION_KEYS) | {"seed"})
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    seed = int(raw.get("seed", 0))

    def section(name: str) -> dict:
        sec = raw.get(name, {})
        if not isinstance(sec, dict):
            raise ConfigError(f"'{name}' section must be a JSON object")
        return dict(_check_keys(name, sec))

    try:
        enc = section("encoder")
        enc.setdefault("seed", seed)
        encoder = EncoderConfig(**enc)

        sim = section("sim")
        sim.setdefault("seed", seed)
        if "conv_weights" in sim:
            sim["conv_weights"] = np.asarray(sim["conv_weights"], dtype=np.float64)
        sim_cfg = SIMConfig(**sim)

        cs = section("cs")
        cs.setdefault("seed", seed)
        cs_cfg = CSConfig(**cs)

        ens = section("ensemble")
        if "lambda" in ens:
            ens["lam"] = ens.pop("lambda")
        ens_cfg = EnsembleConfig(**ens)

        scn = section("scene")
        scn.setdefault("seed", seed)
        scene = SceneConfig(**scn)

        noise = NoiseConfig(**section("noise"))
        metrics_cfg = MetricsConfig(**section("metrics"))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc

    cfg = RunConfig(
        seed=seed,
        encoder=encoder,
        sim=sim_cfg,
        cs=cs_cfg,
        ensemble=ens_cfg,
        scene=scene,
        noise=noise,
        metrics=metrics_cfg,
    )
    _validate_cross_sections(cfg)
    return cfg


def _validate_cross_sections(cfg: RunConfig) -> None:
    p = cfg.encoder.patch_size
    if cfg.scene.canvas % p != 0:
        raise ConfigError(
            f"scene canvas {cfg.scene.canvas} not divisible by patch size {p}"
        )
    if cfg.cs.sub_image_size % p != 0:
        raise ConfigError(
            f"sub_image_size {cfg.cs.sub_image_size} not divisible by patch size {p}"
        )
    if any(i > cfg.encoder.num_layers for i in cfg.cs.idx):
        raise ConfigError("cs.idx contains a layer beyond the encoder depth")
    if any(i > cfg.encoder.num_layers for i in cfg.sim.selected_layers):
        raise ConfigError("sim.selected_layers contains a layer beyond the encoder depth")
    cfg.association()  # validates the hierarchy mapping


def load_run_config(path: str | Path) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return run_config_from_dict(raw)
