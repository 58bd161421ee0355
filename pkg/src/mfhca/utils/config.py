"""Configuration file support for mfhca."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Any

import yaml

from ..core.errors import ConfigError
from ..core.frontend import FrontendConfig
from ..core.hca import HcaConfig
from ..core.mf_grf import RATIO_GRID, MfConfig
from ..core.model import Ablation, ModelConfig
from ..core.training import TrainConfig

CONFIG_ENV = "MFHCA_CONFIG_PATH"
SNAPSHOT_NAME = "config.yaml"
KEY_VALUE_SUFFIXES = (".toml", ".ini", ".cfg", ".conf")

DEFAULTS: dict[str, Any] = {
    # audio frontend
    "sample_rate": 16000,
    "segment_seconds": 3.0,
    "frame_ms": 40.0,
    "hop_ms": 10.0,
    "dft_len": 800,
    "n_bins": 200,
    "log_floor": 1e-10,
    "mel_bins": 0,
    "feature_rate_hz": 50.0,
    # encoder
    "grf_channels": [16, 32, 48],
    "time_kernel": [10, 2],
    "freq_kernel": [2, 8],
    "ratio": 4,
    "reduction": 8,
    "min_reduced": 8,
    # attention and classifier
    "d_model": 128,
    "bilstm_hidden": 128,
    "hubert_dim": 768,
    "fc_hidden": [128, 64],
    "feature_frames": 149,
    "ablate": "none",
    # training
    "lr": 1e-5,
    "batch": 32,
    "patience": 10,
    "max_epochs": 100,
    "seed": 0,
    "workers": 1,
}


def parse_key_values(text: str, path: str | Path = "<config>") -> dict[str, Any]:
    """Read ``key = value`` lines; each value is parsed as a YAML scalar or flow list.

    Blank lines, ``#``/``;`` comments and ``[section]`` headers are skipped.
    """
    data: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;" or (line.startswith("[") and line.endswith("]")):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{path}: line {lineno}: expected key = value, got {raw!r}")
        if key in data:
            raise ConfigError(f"{path}: line {lineno}: duplicate key {key!r}")
        if not value.strip():
            raise ConfigError(f"{path}: line {lineno}: {key} has no value")
        try:
            data[key] = yaml.safe_load(value.strip())
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: line {lineno}: cannot parse value for {key}: {e}") from e
    return data


def parse_channels(text: str) -> list[int]:
    """Parse ``16,32,48`` into a list of widths."""
    try:
        channels = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise ConfigError(f"grf_channels must be comma-separated integers, got {text!r}") from e
    if not channels:
        raise ConfigError("grf_channels must name at least one width")
    return channels


class Config:
    """Flat key/value settings: built-in defaults, then a YAML file, then overrides."""

    def __init__(
        self, path: str | Path | None = None, overrides: dict[str, Any] | None = None
    ) -> None:
        self.config_path = self._get_config_path(path)
        self.config: dict[str, Any] = dict(DEFAULTS)
        self.load()
        if overrides:
            self.apply(overrides)

    def _get_config_path(self, path: str | Path | None) -> Path | None:
        if path is not None:
            return Path(path)
        env_path = os.environ.get(CONFIG_ENV)
        if env_path:
            return Path(env_path)
        return None

    def load(self) -> None:
        """Merge the configuration file over the defaults."""
        if self.config_path is None:
            return
        if not self.config_path.exists():
            raise ConfigError(f"config file {self.config_path} does not exist")
        text = self.config_path.read_text(encoding="utf-8")
        if self.config_path.suffix.lower() in KEY_VALUE_SUFFIXES:
            data: Any = parse_key_values(text, self.config_path)
        else:
            try:
                data = yaml.safe_load(text) or {}
            except yaml.YAMLError as e:
                raise ConfigError(f"failed to parse config file {self.config_path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"{self.config_path}: expected key: value pairs at the top level")
        self.apply(data)

    def apply(self, overrides: dict[str, Any]) -> None:
        """Set keys, ignoring None values (unset command-line flags)."""
        unknown = sorted(k for k in overrides if k not in DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")
        for key, value in overrides.items():
            if value is None:
                continue
            if key == "grf_channels" and isinstance(value, str):
                value = parse_channels(value)
            self.config[key] = value

    def get(self, key: str) -> Any:
        return self.config[key]

    def _int_pair(self, key: str) -> tuple[int, int]:
        value = self.config[key]
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            raise ConfigError(f"{key} must be a pair of integers, got {value!r}")
        return (int(value[0]), int(value[1]))

    def frontend(self) -> FrontendConfig:
        c = self.config
        try:
            return FrontendConfig(
                sample_rate=int(c["sample_rate"]),
                segment_seconds=float(c["segment_seconds"]),
                frame_ms=float(c["frame_ms"]),
                hop_ms=float(c["hop_ms"]),
                dft_len=int(c["dft_len"]),
                n_bins=int(c["n_bins"]),
                log_floor=float(c["log_floor"]),
                mel_bins=int(c["mel_bins"]),
                feature_rate_hz=float(c["feature_rate_hz"]),
            )
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid frontend setting: {e}") from e

    def ablation(self) -> Ablation:
        try:
            return Ablation(self.config["ablate"])
        except ValueError as e:
            choices = ", ".join(a.value for a in Ablation)
            raise ConfigError(f"ablate must be one of {choices}") from e

    def model(self) -> ModelConfig:
        c = self.config
        ratio = int(c["ratio"])
        if ratio not in RATIO_GRID:
            raise ConfigError(f"ratio must be one of {list(RATIO_GRID)}, got {ratio}")
        try:
            channels = c["grf_channels"]
            if isinstance(channels, str):
                channels = parse_channels(channels)
            mf = MfConfig(
                grf_channels=tuple(int(x) for x in channels),
                time_kernel=self._int_pair("time_kernel"),
                freq_kernel=self._int_pair("freq_kernel"),
                ratio=ratio,
                reduction=int(c["reduction"]),
                min_reduced=int(c["min_reduced"]),
            )
            fc_first, fc_second = self._int_pair("fc_hidden")
            hca = HcaConfig(
                d_model=int(c["d_model"]),
                bilstm_hidden=int(c["bilstm_hidden"]),
                hubert_dim=int(c["hubert_dim"]),
                fc_hidden=(fc_first, fc_second),
            )
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid model setting: {e}") from e
        return ModelConfig(
            mf=mf,
            hca=hca,
            variant=self.ablation().variant,
            spec_shape=self.frontend().spectrogram_shape,
            feature_frames=int(c["feature_frames"]),
            seed=int(c["seed"]),
        )

    def train(self) -> TrainConfig:
        c = self.config
        try:
            return TrainConfig(
                lr=float(c["lr"]),
                batch_size=int(c["batch"]),
                patience=int(c["patience"]),
                max_epochs=int(c["max_epochs"]),
                seed=int(c["seed"]),
                workers=int(c["workers"]),
            )
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid training setting: {e}") from e

    def snapshot(self) -> dict[str, Any]:
        return dict(self.config)

    def write_snapshot(self, out_dir: str | Path) -> Path:
        """Write every effective setting to ``config.yaml`` in ``out_dir``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / SNAPSHOT_NAME
        with open(path, "w") as f:
            yaml.safe_dump(self.snapshot(), f, sort_keys=True)
        return path
