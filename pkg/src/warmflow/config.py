"""Run configuration: one JSON file drives every command, with dotted-path
overrides and a content hash recorded in all outputs."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import UsageError

SCHEMA_VERSION = 1


@dataclass
class WorldConfig:
    n_cols: int = 100
    obstacles: list = field(default_factory=lambda: [[0.25, 0.35], [0.65, 0.75]])
    block_lo: float = -0.3
    block_hi: float = 0.3
    bump_amp: float = 0.6
    bump_half_width: float = 0.13
    jitter_std: float = 0.05
    observe_height: bool = True
    obs_steps: int = 2
    mode_plan: str = "balanced"       # "balanced" | "unimodal"


@dataclass
class PriorConfig:
    variant: str = "preview"
    sigma: float | None = None        # None -> per-variant default
    chunk_len: int = 8


@dataclass
class NetConfig:
    hidden_width: int = 1024
    n_layers: int = 4
    time_embed_dim: int = 128
    activation: str = "gelu"


@dataclass
class TrainConfig:
    iters: int = 5000
    batch_size: int = 256
    lr: float = 1e-4
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class EvalConfig:
    episodes: int = 50
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    nfe_list: list = field(default_factory=lambda: [9, 3, 1])
    max_steps: int = 200
    stop_on_collision: bool = True


@dataclass
class DiagConfig:
    curvature_obs: int = 256
    curvature_steps: int = 100
    flow_paths: int = 8
    mc_samples: int = 100000
    n_t: int = 256
    t_max: float = 0.999
    mixture: dict = field(default_factory=lambda: {
        "components": [[-1.0], [1.0]], "probs": [0.5, 0.5]})
    bound_sigmas: list = field(default_factory=lambda: [0.1, 0.3, 0.5, 1.0])
    bound_offset: float = 0.7


@dataclass
class AblateConfig:
    sigmas: list = field(default_factory=lambda: [1.5, 1.0, 0.5, 0.3, 0.1, 0.05, 0.0])
    variants: list = field(default_factory=lambda: ["past", "preview"])
    episodes: int = 50
    nfe: int = 1


@dataclass
class RlConfig:
    delta_warm: float = 0.5
    delta_origin: float = 1.5
    nfe: int = 3
    generations: int = 10
    population: int = 24
    elite_frac: float = 0.25
    distill_steps: int = 200
    eval_episodes: int = 20
    eval_every: int = 1
    seeds: list = field(default_factory=lambda: [0, 1, 2])


@dataclass
class RunConfig:
    seed: int = 0
    data_dir: str = "data"
    world: WorldConfig = field(default_factory=WorldConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    diag: DiagConfig = field(default_factory=DiagConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)
    rl: RlConfig = field(default_factory=RlConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _from_dict(cls, data: dict):
    kwargs = {}
    names = {f.name: f for f in fields(cls)}
    for key, value in data.items():
        if key not in names:
            raise UsageError(f"unknown config key {key!r} for {cls.__name__}")
        if key in _SECTION_TYPES:
            kwargs[key] = _from_dict(_SECTION_TYPES[key], value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


_SECTION_TYPES = {
    "world": WorldConfig, "prior": PriorConfig, "net": NetConfig,
    "train": TrainConfig, "eval": EvalConfig, "diag": DiagConfig,
    "ablate": AblateConfig, "rl": RlConfig,
}


def config_from_dict(data: dict) -> RunConfig:
    return _from_dict(RunConfig, data)


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file is not valid JSON: {exc}") from exc
    data.pop("schema_version", None)
    return config_from_dict(data)


def apply_overrides(config: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply key=value pairs with dotted paths, JSON-decoding each value
    (falling back to a bare string)."""
    data = config.to_dict()
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"override {item!r} must look like key=value")
        key, _, raw = item.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise UsageError(f"unknown config section {part!r} in {key!r}")
            node = node[part]
        if parts[-1] not in node:
            raise UsageError(f"unknown config key {key!r}")
        node[parts[-1]] = value
    return config_from_dict(data)


def save_config(config: RunConfig, path) -> None:
    payload = {"schema_version": SCHEMA_VERSION}
    payload.update(config.to_dict())
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))
