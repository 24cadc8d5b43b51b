"""Training and architecture configuration."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .exceptions import ConfigError, UnknownVariant

VARIANTS = ("no-lstm", "no-dyn", "no-phi", "no-adj3")
METRIC_LOSS = {"rmse": "mse", "mae": "mae", "roc_auc": "bce"}

# Without the LSTM, atoms whose GCN features nearly match start a hair apart,
# and a 1e-6 floor lets s^-3 forces throw them to |q| ~ 1e12 on step one.
NO_LSTM_EPS_R = 1e-2


@dataclass
class TrainConfig:
    """Hyperparameters for both training stages.

    Values not given in the source method (learning rates, batch size,
    epochs, encoder widths) are defaults of this package.
    """

    stage: str = "engine"
    epochs: int = 100
    batch_size: int = 32
    learning_rate: Optional[float] = None
    lam: float = 1.0
    adj_k: int = 3
    eta: float = 0.04
    T_steps: int = 20
    d_f: int = 32
    eps_r: float = 1e-6
    L: int = 2
    M: int = 2
    hidden: int = 200
    gcn_widths: tuple = (64, 64, 64)
    bond_hidden: int = 64
    use_lstm: bool = True
    use_dissipation: bool = True
    weighted_kabsch: bool = True
    conf_mode: str = "engine"
    leaky_attention: bool = False
    finetune_engine: bool = False
    metric: str = "rmse"
    patience: int = 20
    clip_norm: float = 10.0
    seed: int = 0
    workers: int = 1
    normalization: dict = field(default_factory=dict)

    def __post_init__(self):
        self.gcn_widths = tuple(int(w) for w in self.gcn_widths)
        self.validate()

    def validate(self) -> None:
        if self.stage not in ("engine", "fingerprint"):
            raise ConfigError(f"stage must be 'engine' or 'fingerprint', got {self.stage!r}")
        for name in ("epochs", "batch_size", "d_f", "hidden", "adj_k", "workers"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("L", "M", "T_steps", "patience"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.eta <= 0 or self.eps_r <= 0:
            raise ConfigError("eta and eps_r must be positive")
        if self.lam < 0:
            raise ConfigError("lam must be non-negative")
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.conf_mode not in ("engine", "none", "real"):
            raise ConfigError(f"conf_mode must be engine/none/real, got {self.conf_mode!r}")
        if self.metric not in METRIC_LOSS:
            raise ConfigError(f"metric must be one of {sorted(METRIC_LOSS)}")
        if not self.gcn_widths:
            raise ConfigError("gcn_widths needs at least one layer")

    @property
    def lr(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return 1e-3 if self.stage == "engine" else 5e-4

    @property
    def loss(self) -> str:
        return METRIC_LOSS[self.metric]

    @property
    def task_type(self) -> str:
        return "classification" if self.metric == "roc_auc" else "regression"

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def with_variant(self, variant: str) -> "TrainConfig":
        if variant == "no-lstm":
            return self.replace(use_lstm=False, eps_r=max(self.eps_r, NO_LSTM_EPS_R))
        if variant == "no-dyn":
            return self.replace(T_steps=0)
        if variant == "no-phi":
            return self.replace(use_dissipation=False)
        if variant == "no-adj3":
            return self.replace(lam=0.0)
        raise UnknownVariant(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["gcn_widths"] = list(self.gcn_widths)
        return d

    def architecture(self) -> dict:
        """Fields that determine parameter shapes and forward behavior."""
        keys = ("d_f", "T_steps", "eta", "eps_r", "gcn_widths", "bond_hidden", "use_lstm",
                "use_dissipation", "L", "M", "hidden", "conf_mode", "leaky_attention", "metric")
        d = {k: getattr(self, k) for k in keys}
        d["gcn_widths"] = list(self.gcn_widths)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)
