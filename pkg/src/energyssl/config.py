"""Training configuration: defaults, validation, serialization, fingerprinting."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .errors import ConfigError


@dataclass
class TrainConfig:
    # problem geometry
    num_classes: int = 5
    image_size: int = 32
    embed_dim: int = 128
    conv_widths: tuple = (32, 64, 128)
    batch_norm: bool = True

    # optimization
    lr: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 1e-3
    total_iters: int = 4000
    lr_schedule: str = "cosine"  # "cosine" | "constant"
    batch_size: int = 16
    unlabeled_ratio: int = 7

    # pseudo-label gate
    tau_e: float = -9.0
    temperature: float = 1.0
    baseline_mode: str = "off"  # "off" | "confidence"
    tau_c: float = 0.95

    # loss terms
    lambda_margin: float = 0.5
    prior_decay: float = 0.99
    triplet_margin: float = 0.3
    lambda_u: float = 1.0
    lambda_ahtl: float = 1.5
    normalize_embeddings: bool = True

    # evaluation model
    model_ema_decay: float = 0.99
    eval_interval: int = 200

    # augmentation
    weak_flip_prob: float = 0.5
    weak_max_shift: float = 0.125
    strong_n_ops: int = 2
    strong_max_rotate_deg: float = 15.0
    strong_max_shear: float = 0.2
    strong_contrast_range: tuple = (0.5, 1.5)
    strong_gamma_range: tuple = (0.7, 1.4)
    strong_max_noise_sigma: float = 0.1
    strong_cutout_frac: float = 0.25

    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0 (energy undefined at T=0)")
        if self.baseline_mode not in ("off", "confidence"):
            raise ConfigError(f"unknown baseline_mode {self.baseline_mode!r}")
        if self.baseline_mode == "confidence" and not (0.0 < self.tau_c < 1.0):
            raise ConfigError("tau_c must lie in (0, 1) when the confidence baseline is on")
        if self.triplet_margin <= 0:
            raise ConfigError("triplet_margin must be > 0")
        if self.triplet_margin > 0.5:
            raise ConfigError(
                "triplet_margin > 0.5 rejected: training typically fails to converge"
            )
        if not (0.0 < self.model_ema_decay <= 1.0):
            raise ConfigError("model_ema_decay must lie in (0, 1]")
        if not (0.0 <= self.prior_decay <= 1.0):
            raise ConfigError("prior_decay must lie in [0, 1]")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")
        for name in ("lr", "total_iters", "batch_size", "unlabeled_ratio", "eval_interval"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.lambda_margin < 0 or self.lambda_u < 0 or self.lambda_ahtl < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.strong_n_ops < 0 or self.strong_n_ops > 6:
            raise ConfigError("strong_n_ops must lie in [0, 6]")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["conv_widths"] = list(self.conv_widths)
        d["strong_contrast_range"] = list(self.strong_contrast_range)
        d["strong_gamma_range"] = list(self.strong_gamma_range)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("conv_widths", "strong_contrast_range", "strong_gamma_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def from_json_file(cls, path) -> "TrainConfig":
        with open(path) as f:
            try:
                d = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
        return cls.from_dict(d)

    def fingerprint(self) -> str:
        """Stable hash over the canonical JSON form."""
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def replace(self, **kwargs) -> "TrainConfig":
        return dataclasses.replace(self, **kwargs)
