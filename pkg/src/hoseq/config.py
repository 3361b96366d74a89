"""Flat ``key = value`` run configuration with validation against each module's rules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ConfigError
from .feature_pipeline import FeatureMode, FeatureSpec
from .handover_engine import A3Params
from .ho_control import ControlThresholds
from .seq_models import ModelKind, TrainConfig


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


MODE_ALIASES = {"RSRP": "RSRP_ONLY", "RSRP_ONLY": "RSRP_ONLY", "ALL": "ALL", "BOTH": "BOTH"}


def parse_modes(text: str) -> tuple[FeatureMode, ...]:
    """``BOTH``, ``ALL``, ``RSRP_ONLY`` or a comma list such as ``rsrp,all``."""
    out = []
    for part in text.split(","):
        key = MODE_ALIASES.get(part.strip().upper())
        if key is None:
            raise ValueError(f"unknown feature mode {part.strip()!r}")
        modes = (FeatureMode.RSRP_ONLY, FeatureMode.ALL) if key == "BOTH" else (FeatureMode(key),)
        out += [m for m in modes if m not in out]
    if not out:
        raise ValueError("no feature mode given")
    return tuple(out)


def parse_kinds(text: str) -> tuple[ModelKind, ...]:
    out = []
    for part in text.split(","):
        k = ModelKind(part.strip().upper())
        if k not in out:
            out.append(k)
    if not out:
        raise ValueError("no model kind given")
    return tuple(out)


# key -> (parser, default text)
KEYS: dict[str, tuple] = {
    "a3.hysteresis_db": (float, "3.0"),
    "a3.ttt_ms": (int, "320"),
    "a3.t_pp_s": (float, "5.0"),
    "ctrl.tos_th_s": (float, "5.0"),
    "ctrl.rsrp_slope_th": (float, "5.0"),
    "ctrl.snr_slope_th": (float, "3.0"),
    "ctrl.osc_th_s": (float, "2.0"),
    "ctrl.theta_rsrp_dbm": (float, "-110.0"),
    "ctrl.theta_tos_s": (float, "5.0"),
    "ctrl.use_head": (_bool, "true"),
    "feat.mode": (parse_modes, "BOTH"),
    "feat.seq_len": (int, "10"),
    "model.kind": (parse_kinds, "GRU"),
    "model.hidden_dim": (int, "32"),
    "train.lr": (float, "0.003"),
    "train.dropout": (float, "0.1"),
    "train.max_epochs": (int, "200"),
    "train.patience": (int, "20"),
    "train.batch_size": (int, "32"),
    "train.lambda_pp": (float, "1.0"),
    "split.ratios": (_floats, "0.7,0.15,0.15"),
    "grid.seq_len": (_ints, "5,10,20"),
    "grid.hidden_dim": (_ints, "16,32,64"),
    "grid.lr": (_floats, "0.001,0.0003"),
    "seed": (int, "0"),
}


@dataclass
class RunConfig:
    """Raw text values keyed by flat name; typed views are built on demand."""

    raw: dict[str, str] = field(default_factory=lambda: {k: d for k, (_, d) in KEYS.items()})

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        cfg = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
            key, value = (p.strip() for p in line.split("=", 1))
            cfg.set(key, value, where=f"{source}:{lineno}")
        return cfg

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as f:
                text = f.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text, path)

    def set(self, key: str, value, where: str = "") -> None:
        if key not in KEYS:
            raise ConfigError(f"{where + ': ' if where else ''}unknown key {key!r}")
        text = str(value).strip()
        try:
            KEYS[key][0](text)
        except ValueError as exc:
            raise ConfigError(f"{where + ': ' if where else ''}{key}: {exc}") from exc
        self.raw[key] = text

    def get(self, key: str):
        return KEYS[key][0](self.raw[key])

    def to_text(self) -> str:
        return "".join(f"{k} = {self.raw[k]}\n" for k in KEYS)

    # typed views ---------------------------------------------------------

    @property
    def seed(self) -> int:
        return self.get("seed")

    @property
    def a3(self) -> A3Params:
        return A3Params(self.get("a3.hysteresis_db"), self.get("a3.ttt_ms"), self.get("a3.t_pp_s"))

    @property
    def thresholds(self) -> ControlThresholds:
        return ControlThresholds(
            tos_th_s=self.get("ctrl.tos_th_s"),
            rsrp_slope_th_db_s=self.get("ctrl.rsrp_slope_th"),
            snr_slope_th_db_s=self.get("ctrl.snr_slope_th"),
            osc_th_s=self.get("ctrl.osc_th_s"),
            theta_rsrp_dbm=self.get("ctrl.theta_rsrp_dbm"),
            theta_tos_s=self.get("ctrl.theta_tos_s"),
        )

    @property
    def modes(self) -> tuple[FeatureMode, ...]:
        return self.get("feat.mode")

    @property
    def kinds(self) -> tuple[ModelKind, ...]:
        return self.get("model.kind")

    @property
    def ratios(self) -> tuple[float, ...]:
        return self.get("split.ratios")

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.get("train.lr"),
            dropout_prob=self.get("train.dropout"),
            max_epochs=self.get("train.max_epochs"),
            patience=self.get("train.patience"),
            batch_size=self.get("train.batch_size"),
            lambda_pp=self.get("train.lambda_pp"),
            hidden_dim=self.get("model.hidden_dim"),
            seed=self.seed,
        )

    def feature_spec(self, mode: FeatureMode) -> FeatureSpec:
        return FeatureSpec(mode, self.get("feat.seq_len"))

    def validate(self) -> "RunConfig":
        """Build every typed view so each owning module checks its own invariants."""
        try:
            self.a3
            self.thresholds
            self.train_config()
            for m in self.modes:
                self.feature_spec(m)
            self.kinds
            r = self.ratios
            if len(r) != 3 or any(x < 0 for x in r) or not math.isclose(sum(r), 1.0):
                raise ValueError("split.ratios must be three non-negative numbers summing to 1")
            for key in ("grid.seq_len", "grid.hidden_dim"):
                if not self.get(key) or min(self.get(key)) < 1:
                    raise ValueError(f"{key} must list positive integers")
            if not self.get("grid.lr") or min(self.get("grid.lr")) <= 0:
                raise ValueError("grid.lr must list positive rates")
            if self.seed < 0:
                raise ValueError("seed must be >= 0")
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self
