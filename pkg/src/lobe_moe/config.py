"""Run configuration: INI-style file with [sections]; every key is also a CLI flag."""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, fields, replace

from .core_data import REGION_MODES
from .experts import KINDS
from .gating import ARCHITECTURES, STRATEGY_IDS

STAGES = ("synth", "extract", "experts", "gate", "ensemble", "stage4", "evaluate")


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # [run]
    out: str = "run"
    seed: int = 42
    region_mode: str = "seven_regions"
    jobs: int = 1
    manifest: str = ""
    kinds: str = "boosted_radiomics,mlp_pooled"
    strategies: str = "all"
    gate_architecture: str = "attention"
    n_folds: int = 5
    stop_after: str = ""
    dump_weights: bool = False
    # [synth]
    n_patients: int = 200
    scans_min: int = 1
    scans_max: int = 3
    dims: str = "32,48,48"
    prevalence: float = 0.6
    basal_bias: float = 0.8
    noise_sigma: float = 40.0
    # [radiomics]
    bin_width: float = 25.0
    # [experts]
    rounds: int = 100
    shrinkage: float = 0.1
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    max_epochs: int = 100
    early_stop_patience: int = 15
    batch_size: int = 16
    label_smoothing: float = 0.0
    scheduler: str = "none"
    # [gating]
    gate_learning_rate: float = 1e-3
    gate_max_epochs: int = 100
    # [stage4]
    global_dim: int = 32
    moe_max_epochs: int = 100
    lr_backbone: float = 1e-5
    lr_head: float = 1e-4
    lambda_gating: float = 0.005
    lambda_weight: float = 0.005
    lambda_diversity: float = 0.01

    def __post_init__(self):
        if self.region_mode not in REGION_MODES:
            raise UsageError(f"region_mode must be one of {REGION_MODES}")
        for k in self.kind_list:
            if k not in KINDS:
                raise UsageError(f"unknown expert kind {k!r}")
        for s in self.strategy_list:
            if s not in STRATEGY_IDS:
                raise UsageError(f"unknown gating strategy {s!r}")
        if self.gate_architecture not in ARCHITECTURES:
            raise UsageError(f"gate_architecture must be one of {ARCHITECTURES}")
        if self.stop_after and self.stop_after not in STAGES:
            raise UsageError(f"stop_after must be one of {STAGES}")
        if self.n_patients < 1:
            raise UsageError("n_patients must be positive")
        if self.n_folds < 2 or self.jobs < 1:
            raise UsageError("n_folds must be >= 2 and jobs >= 1")
        if len(self.dim_tuple) != 3:
            raise UsageError("dims must list three integers")

    @property
    def kind_list(self) -> tuple[str, ...]:
        return tuple(k.strip() for k in self.kinds.split(",") if k.strip())

    @property
    def strategy_list(self) -> tuple[str, ...]:
        if self.strategies.strip() == "all":
            return STRATEGY_IDS
        return tuple(s.strip() for s in self.strategies.split(",") if s.strip())

    @property
    def dim_tuple(self) -> tuple[int, ...]:
        try:
            return tuple(int(x) for x in self.dims.split(","))
        except ValueError:
            raise UsageError(f"dims must list integers, got {self.dims!r}") from None

    def with_(self, **kw) -> "RunConfig":
        return replace(self, **kw)

    def fingerprint(self) -> str:
        """Canonical text of every key that can change results."""
        skip = {"out", "jobs", "stop_after"}
        return "\n".join(f"{k}={v!r}" for k, v in sorted(asdict(self).items()) if k not in skip)


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def coerce(key: str, raw: str):
    if key not in FIELD_TYPES:
        raise UsageError(f"unknown config key {key!r}")
    kind = FIELD_TYPES[key]
    try:
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
        if kind in ("bool", bool):
            low = str(raw).strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("1", "true", "yes", "on")
    except ValueError:
        raise UsageError(f"bad value for {key}: {raw!r}") from None
    return str(raw)


def read_config_file(path) -> dict:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise UsageError(f"malformed config {path}: {exc}") from None
    out = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            out[key] = coerce(key, raw)
    return out


def build_config(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    values = dict(file_values or {})
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise UsageError(str(exc)) from None
