"""Experiment configuration: JSON-backed settings for dataset generation,
training, evaluation, and reporting."""

import dataclasses
import json
from dataclasses import dataclass, field, fields

from ..controller import GfnFixedPref, GfnMulti, GfnSingle, PolicyKind, RuleBased
from ..media import QualityMap
from ..sim import SimConfig
from ..traces import BandwidthClass, ConfigError, GeneratorConfig

POLICY_NAMES = ("gfn_multi", "gfn_single", "gfn_fixed_pref", "rule_based")


@dataclass
class ExperimentConfig:
    dataset: str = "demo"  # "demo" or a manifest directory path
    policies: tuple[str, ...] = ("gfn_multi", "rule_based")
    scenarios_per_class: int = 20
    queue_length: int = 6
    seeds: tuple[int, ...] = (11, 22, 33)
    training_episodes: int = 60
    training_scenarios: int = 20
    quality_mapping: str = "linear"
    quality_b_min_kbps: float = 500.0
    candidates: int = 10
    tau_temp: float = 1.0
    learning_rate: float = 1e-3
    shared_reward: bool = True
    rebuffer_budget_s: float = 30.0
    hidden: tuple[int, ...] = (64, 64)
    checkpoint: str | None = None
    sim: SimConfig = field(default_factory=SimConfig)
    gen: GeneratorConfig = field(default_factory=GeneratorConfig)

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        unknown = [p for p in self.policies if p not in POLICY_NAMES]
        if unknown:
            raise ConfigError(f"unknown policies {unknown}; choose from {POLICY_NAMES}")
        if self.candidates < 2:
            raise ConfigError("candidates must be >= 2")
        if self.scenarios_per_class < 1 or self.training_scenarios < 1:
            raise ConfigError("scenario counts must be >= 1")
        if self.queue_length < 1:
            raise ConfigError("queue_length must be >= 1")
        if self.tau_temp <= 0:
            raise ConfigError("tau_temp must be > 0")

    def quality_map(self) -> QualityMap:
        return QualityMap(self.quality_mapping, self.quality_b_min_kbps)

    def policy_kind(self, name: str) -> PolicyKind:
        if name == "gfn_multi":
            return GfnMulti(self.candidates)
        if name == "gfn_single":
            return GfnSingle()
        if name == "gfn_fixed_pref":
            return GfnFixedPref(k=self.candidates)
        if name == "rule_based":
            return RuleBased()
        raise ConfigError(f"unknown policy {name!r}")


def _coerce(value, target_type):
    if target_type is tuple and isinstance(value, list):
        return tuple(value)
    return value


def _dataclass_from_dict(cls, data: dict):
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    sim = _dataclass_from_dict(SimConfig, data.pop("sim", {}))
    gen_data = dict(data.pop("gen", {}))
    ranges = gen_data.pop("class_mean_ranges", None)
    if ranges is not None:
        gen_data["class_mean_ranges"] = {
            BandwidthClass(k): tuple(v) for k, v in ranges.items()
        }
    classes = gen_data.pop("classes", None)
    if classes is not None:
        gen_data["classes"] = tuple(BandwidthClass(c) for c in classes)
    gen = _dataclass_from_dict(GeneratorConfig, gen_data)
    cfg = _dataclass_from_dict(ExperimentConfig, {**data, "sim": sim, "gen": gen})
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config root must be an object")
    return config_from_dict(data)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    data = dataclasses.asdict(cfg)
    data["gen"]["class_mean_ranges"] = {
        c.value: list(r) for c, r in cfg.gen.class_mean_ranges.items()
    }
    data["gen"]["classes"] = [c.value for c in cfg.gen.classes]
    return data
