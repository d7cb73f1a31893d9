"""Training configuration: defaults, JSON loading and itemized validation."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from .correspond import MapperConfig
from .reward import MODES, ROOT_SCALE, RewardWeights
from .rl import PPOConfig

RESET_MODES = ("clip_start", "random_frame")
TORQUE_SOURCES = ("action", "torque")


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid config:\n" + "\n".join(f"  - {e}" for e in self.errors))


@dataclass
class TrainConfig:
    dataset: str = ""
    mode: str = "full"
    weights: RewardWeights = field(default_factory=RewardWeights)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    mapper: MapperConfig = field(default_factory=MapperConfig)
    iterations: int = 200
    seed: int = 0
    checkpoint_every: int = 50
    output_dir: str = "runs/run"
    reset_mode: str = "random_frame"
    torque_penalty_source: str = "action"
    root_scale: float = ROOT_SCALE
    eval_sd: int = 256
    log_steps: bool = False

    def validate(self):
        errs = []
        if not isinstance(self.dataset, str) or not self.dataset:
            errs.append("dataset: required (path to a dataset directory with manifest.json)")
        if self.mode not in MODES:
            errs.append(f"mode: must be one of {', '.join(MODES)}, got {self.mode!r}")
        if self.reset_mode not in RESET_MODES:
            errs.append(f"reset_mode: must be one of {', '.join(RESET_MODES)}")
        if self.torque_penalty_source not in TORQUE_SOURCES:
            errs.append(f"torque_penalty_source: must be one of {', '.join(TORQUE_SOURCES)}")
        if not isinstance(self.iterations, int) or self.iterations < 0:
            errs.append("iterations: must be a non-negative integer")
        if not isinstance(self.seed, int):
            errs.append("seed: must be an integer")
        if not isinstance(self.checkpoint_every, int) or self.checkpoint_every < 1:
            errs.append("checkpoint_every: must be a positive integer")
        if not self.root_scale > 0:
            errs.append("root_scale: must be positive")
        if self.eval_sd < 1:
            errs.append("eval_sd: must be positive")
        errs += self.ppo.validate()
        if self.mapper.epochs < 1 or self.mapper.minibatch < 1 or not self.mapper.lr > 0:
            errs.append("mapper: epochs and minibatch must be >= 1 and lr positive")
        return errs

    def to_dict(self, include_output=True):
        d = asdict(self)
        d["ppo"]["hidden"] = list(self.ppo.hidden)
        d["mapper"]["hidden"] = list(self.mapper.hidden)
        if not include_output:
            d.pop("output_dir")
        return d

    def hash(self):
        blob = json.dumps(self.to_dict(include_output=False), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_NESTED = {"weights": RewardWeights, "ppo": PPOConfig, "mapper": MapperConfig}


def _build(cls, data, prefix, errs):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, val in data.items():
        if key not in known:
            errs.append(f"{prefix}{key}: unknown field")
            continue
        default = known[key].default
        if key == "hidden":
            if not isinstance(val, list) or not val or not all(isinstance(v, int) and v > 0 for v in val):
                errs.append(f"{prefix}{key}: must be a non-empty list of positive integers")
                continue
            val = tuple(val)
        elif isinstance(default, bool):
            if not isinstance(val, bool):
                errs.append(f"{prefix}{key}: must be true or false")
                continue
        elif isinstance(default, int) and not isinstance(default, bool):
            if not isinstance(val, int) or isinstance(val, bool):
                errs.append(f"{prefix}{key}: must be an integer")
                continue
        elif isinstance(default, float):
            if not isinstance(val, (int, float)) or isinstance(val, bool):
                errs.append(f"{prefix}{key}: must be a number")
                continue
            val = float(val)
        elif isinstance(default, str) and not isinstance(val, str):
            errs.append(f"{prefix}{key}: must be a string")
            continue
        kwargs[key] = val
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        errs.append(f"{prefix.rstrip('.') or cls.__name__}: {exc}")
        return cls()


def config_from_dict(data):
    if not isinstance(data, dict):
        raise ConfigError(["config must be a JSON object"])
    errs = []
    top = {}
    for key, val in data.items():
        if key in _NESTED:
            if not isinstance(val, dict):
                errs.append(f"{key}: must be an object")
                continue
            top[key] = _build(_NESTED[key], val, f"{key}.", errs)
        else:
            top[key] = val
    cfg = _build(TrainConfig, top, "", errs)
    if not errs:
        errs = cfg.validate()
    if errs:
        raise ConfigError(errs)
    return cfg


def load_config(path):
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config is not valid JSON: {exc}"]) from None
    return config_from_dict(data)
