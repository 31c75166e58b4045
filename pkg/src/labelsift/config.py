"""Run configuration: a flat key-value schema, named profiles, and the
ablation variant matrix."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .data import DEFAULT_ASYM_MAPPING

DATA_DIR_ENV = "LABELSIFT_DATA_DIR"

# filter rate by symmetric noise ratio (asymmetric and external noise use 0.5)
FILTER_RATE_BY_SYM_NOISE = {0.2: 0.7, 0.5: 0.5, 0.8: 0.2, 0.9: 0.1}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data
    dataset: str = "cifar10-bin"      # cifar10-bin | synthetic | bundle
    data_dir: str = ""                # cifar dir, or prepared bundle root (train/, test/)
    num_classes: int = 10
    n_train: int = 0                  # 0 = use everything
    n_test: int = 0
    synthetic_modes: int = 3
    synthetic_pixel_noise: float = 25.0
    noise_kind: str = "sym"           # none | sym | asym | file
    noise_rate: float = 0.2
    noise_file: str = ""
    asym_map: str = ""                # "9:1,2:0,..."; empty = standard pairs
    imbalance_kappa: float = 1.0
    balanced_css: bool = True
    # model / optimization
    backbone: str = "resnet18"
    epochs: int = 600
    warmup_epochs: int = 10
    batch_size: int = 256
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    # selection and debiasing
    filter_rate: float = -1.0         # -1 = derive from the noise setting
    tau: float = 0.99
    rho: float = 0.9
    alpha: float = 0.8
    temperature: float = 0.5
    prior_momentum: float = 0.9999
    mixup_beta: float = 4.0
    lga_start: int = 250
    gamma_max: float = 1.0
    gamma_ramp: int = 50
    lambda_u_max: float = 0.1
    lambda_u_ramp: int = 50
    # ablation flags
    no_mhcs: bool = False
    no_css: bool = False
    no_lga: bool = False
    no_cbr: bool = False
    no_dbr: bool = False
    only_clean: bool = False
    plain_ce: bool = False
    # run plumbing
    seed: int = 1
    out_dir: str = "runs/run"
    checkpoint_every: int = 0         # 0 = final checkpoint only
    dump_selection: bool = False
    emit_plots: bool = True
    threads: int = 0                  # 0 = leave torch defaults alone
    strong_ops: str = ""              # comma-separated override of the strong-op list
    n_strong_ops: int = 2

    def resolved_filter_rate(self) -> float:
        if self.filter_rate > 0:
            return self.filter_rate
        if self.noise_kind == "sym":
            return FILTER_RATE_BY_SYM_NOISE.get(round(self.noise_rate, 2), 0.5)
        return 0.5

    def resolved_data_dir(self) -> str:
        return self.data_dir or os.environ.get(DATA_DIR_ENV, "")

    def asym_mapping(self) -> dict[int, int]:
        mapping = {c: DEFAULT_ASYM_MAPPING.get(c, c) for c in range(self.num_classes)}
        if self.asym_map:
            for pair in self.asym_map.split(","):
                src, dst = pair.split(":")
                mapping[int(src)] = int(dst)
        return mapping

    def validate(self) -> None:
        problems = []
        if self.dataset not in ("cifar10-bin", "synthetic", "bundle"):
            problems.append(f"dataset {self.dataset!r} unknown")
        if self.dataset in ("cifar10-bin", "bundle") and not self.resolved_data_dir():
            problems.append(f"dataset {self.dataset!r} needs data_dir or ${DATA_DIR_ENV}")
        if self.noise_kind not in ("none", "sym", "asym", "file"):
            problems.append(f"noise_kind {self.noise_kind!r} unknown")
        if not 0.0 <= self.noise_rate <= 1.0:
            problems.append("noise_rate outside [0, 1]")
        if self.noise_kind == "file" and not self.noise_file:
            problems.append("noise_kind 'file' needs noise_file")
        if self.imbalance_kappa < 1.0:
            problems.append("imbalance_kappa must be >= 1")
        if self.epochs < 1:
            problems.append("epochs must be >= 1")
        if not 0 < self.warmup_epochs < self.epochs:
            problems.append("need 0 < warmup_epochs < epochs")
        if not self.warmup_epochs < self.lga_start <= self.epochs:
            problems.append("need warmup_epochs < lga_start <= epochs")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        for name in ("tau", "rho"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                problems.append(f"{name} must lie in (0, 1]")
        rate = self.resolved_filter_rate()
        if not 0.0 < rate <= 1.0:
            problems.append("filter_rate must lie in (0, 1]")
        if self.alpha < 0:
            problems.append("alpha must be >= 0")
        if self.temperature <= 0:
            problems.append("temperature must be > 0")
        if not 0.0 <= self.prior_momentum < 1.0:
            problems.append("prior_momentum must lie in [0, 1)")
        if self.mixup_beta <= 0:
            problems.append("mixup_beta must be > 0")
        if self.n_train and self.n_train % self.num_classes:
            problems.append("n_train must be divisible by num_classes")
        if problems:
            raise ConfigError("invalid config: " + "; ".join(problems))

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=2) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(values) - set(fields)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        coerced = {}
        for key, raw in values.items():
            target = fields[key].type
            if isinstance(raw, str) and target in ("int", "float", "bool"):
                raw = _coerce(raw, target)
            coerced[key] = raw
        return cls(**coerced)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            values = json.loads(Path(path).read_text())
        except json.JSONDecodeError as err:
            raise ConfigError(f"config {path} is not valid JSON: {err}") from err
        if not isinstance(values, dict):
            raise ConfigError("config file must hold a flat JSON object")
        return cls.from_dict(values)


def _coerce(raw: str, target: str):
    if target == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse bool from {raw!r}")
    return int(raw) if target == "int" else float(raw)


# Desk profile: sized so a full run finishes quickly without a GPU while the
# selection/debias dynamics still have room to act. The prior momentum and
# ramp lengths are rescaled to the shorter horizon (0.99 over ~1k batch
# updates tracks like 0.9999 over ~100k).
PROFILES: dict[str, dict] = {
    "desk": dict(
        dataset="synthetic", num_classes=10, n_train=5000, n_test=2000,
        synthetic_modes=3, synthetic_pixel_noise=25.0,
        noise_kind="sym", noise_rate=0.2,
        backbone="cnn-small", epochs=60, warmup_epochs=5, batch_size=256, lr=0.05,
        lga_start=30, gamma_ramp=25, lambda_u_ramp=25,
        prior_momentum=0.99, tau=0.99, alpha=0.8,
    ),
    "paper-cifar10": dict(
        dataset="cifar10-bin", num_classes=10, backbone="resnet18",
        epochs=600, warmup_epochs=10, lga_start=250,
        tau=0.99, alpha=0.8, prior_momentum=0.9999,
        gamma_ramp=50, lambda_u_ramp=50,
    ),
    "paper-cifar100": dict(
        dataset="cifar10-bin", num_classes=100, backbone="resnet18",
        epochs=600, warmup_epochs=30, lga_start=250,
        tau=0.95, alpha=0.5, prior_momentum=0.9999,
        gamma_ramp=50, lambda_u_ramp=50,
    ),
}

# Ablation matrix. Apart from the full pipeline, variants disable agreement
# relabeling so the selection/debias toggles are measured in isolation;
# ce_baseline is plain cross-entropy training on all observed labels.
VARIANTS: dict[str, dict] = {
    "full": {},
    "no_lga": dict(no_lga=True),
    "no_mhcs": dict(no_mhcs=True, no_lga=True),
    "no_css": dict(no_css=True, no_lga=True),
    "no_cbr": dict(no_cbr=True, no_lga=True),
    "no_dbr": dict(no_dbr=True, no_lga=True),
    "only_clean": dict(only_clean=True, no_lga=True),
    "ce_baseline": dict(plain_ce=True),
}

DEFAULT_ABLATION_VARIANTS = ["full", "no_lga", "no_mhcs", "no_css",
                             "no_cbr", "no_dbr", "only_clean"]


def apply_profile(cfg: RunConfig, profile: str) -> RunConfig:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    return dataclasses.replace(cfg, **PROFILES[profile])


def apply_variant(cfg: RunConfig, variant: str) -> RunConfig:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown ablation {variant!r}; choose from {sorted(VARIANTS)}")
    return dataclasses.replace(cfg, **VARIANTS[variant])


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``key=value`` strings with dataclass-typed coercion."""
    values = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        values[key.strip()] = raw.strip()
    merged = dataclasses.asdict(cfg)
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    for key, raw in values.items():
        if key not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        kind = fields[key].type
        merged[key] = _coerce(raw, kind) if kind in ("int", "float", "bool") else raw
    return RunConfig(**merged)


def parse_noise_arg(arg: str) -> tuple[str, float, str]:
    """Parse CLI noise specs like 'sym:0.5', 'asym:0.4', 'file:labels.bin', 'none'."""
    if arg == "none":
        return "none", 0.0, ""
    if ":" not in arg:
        raise ConfigError(f"noise spec {arg!r} must look like kind:value")
    kind, value = arg.split(":", 1)
    if kind in ("sym", "asym"):
        return kind, float(value), ""
    if kind == "file":
        return kind, 0.0, value
    raise ConfigError(f"unknown noise kind {kind!r}")
