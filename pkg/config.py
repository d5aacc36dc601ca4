#!/usr/bin/env python3
"""
Experiment Configuration
Flat `section.key = value` files, environment fallbacks and CLI overrides
"""

import logging
import os
from typing import Any, Dict, Mapping, Optional

from dotenv import load_dotenv

from errors import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_FILE = "bite.conf"

# Every accepted key with its default; the default's type is the key's type.
DEFAULTS: Dict[str, Any] = {
    "data.dir": "data/toy/bundle",
    "data.registry": "datasets.json",
    "corpus.max_n": 3,
    "corpus.min_freq": 2,
    "corpus.vocabulary": "",
    "embed.window": 5,
    "embed.dim": 32,
    "refine.t_high": 0.95,
    "refine.t_low": 0.5,
    "refine.max_added_per_node": -1,
    "refine.block_size": 2048,
    "model.hidden_dim": 16,
    "model.heads": 4,
    "model.dropout": 0.5,
    "model.attention_activation": "tanh",
    "train.lr": 0.01,
    "train.epochs": 300,
    "train.patience": 30,
    "train.weight_decay": 5e-4,
    "train.seed": 0,
    "train.workers": 1,
    "runtime.profile": "debug",
    "fetch.timeout": 30,
}

PROFILES = ("debug", "release")


def _coerce(key: str, raw: Any) -> Any:
    """Convert a raw value to the type of the key's default"""
    default = DEFAULTS[key]
    if not isinstance(raw, str):
        raw = str(raw)
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {raw!r} (expected {type(default).__name__})", key=key)
    return raw


def _format_value(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


class ConfigManager:
    """Layered experiment configuration: defaults < file < environment < flags"""

    def __init__(self, config_file: Optional[str] = None):
        self.config_file = config_file
        self.values: Dict[str, Any] = dict(DEFAULTS)
        self.sources: Dict[str, str] = {key: "default" for key in DEFAULTS}
        if config_file:
            self.load_config(config_file)
        self.load_from_environment()

    def load_config(self, path: str):
        """Load `section.key = value` lines from a config file"""
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")

        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, 1):
                stripped = line.strip()
                if not stripped or stripped.startswith("#"):
                    continue
                if "=" not in stripped:
                    raise ConfigError(f"{path}:{line_no}: expected 'section.key = value'")
                key, raw = (part.strip() for part in stripped.split("=", 1))
                if key not in DEFAULTS:
                    raise ConfigError(f"{path}:{line_no}: unknown config key '{key}'", key=key)
                self.values[key] = _coerce(key, raw)
                self.sources[key] = "file"

        self.config_file = path
        self._validate()
        logger.info(f"✅ Loaded config from {path}")

    def load_from_environment(self):
        """Apply BITE_DATA_DIR and BITE_<SECTION>_<KEY> overrides"""
        load_dotenv(override=False)

        data_dir = os.getenv("BITE_DATA_DIR")
        if data_dir:
            self.values["data.dir"] = data_dir
            self.sources["data.dir"] = "env"
            logger.debug(f"📁 data.dir from BITE_DATA_DIR: {data_dir}")

        for key in DEFAULTS:
            env_key = "BITE_" + key.replace(".", "_").upper()
            if env_key == "BITE_DATA_DIR":
                continue
            raw = os.getenv(env_key)
            if raw is not None:
                self.values[key] = _coerce(key, raw)
                self.sources[key] = "env"
                logger.debug(f"🔧 {key} from {env_key}")
        self._validate()

    def apply_overrides(self, overrides: Mapping[str, Any]):
        """Apply command-line overrides; None values are skipped"""
        for key, raw in overrides.items():
            if raw is None:
                continue
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key '{key}'", key=key)
            self.values[key] = _coerce(key, raw)
            self.sources[key] = "flag"
        self._validate()

    def get(self, key: str) -> Any:
        if key not in self.values:
            raise ConfigError(f"unknown config key '{key}'", key=key)
        return self.values[key]

    def __getitem__(self, key: str) -> Any:
        return self.get(key)

    def section(self, name: str) -> Dict[str, Any]:
        """All keys of one section with the section prefix stripped"""
        prefix = name + "."
        return {key[len(prefix):]: value for key, value in self.values.items() if key.startswith(prefix)}

    @property
    def check_finite(self) -> bool:
        return self.values["runtime.profile"] == "debug"

    def _validate(self):
        if self.values["runtime.profile"] not in PROFILES:
            raise ConfigError(
                f"runtime.profile must be one of {', '.join(PROFILES)}", key="runtime.profile"
            )
        if not self.values["refine.t_low"] < self.values["refine.t_high"]:
            raise ConfigError("refine.t_low must be smaller than refine.t_high", key="refine.t_low")
        if self.values["refine.max_added_per_node"] < -1:
            raise ConfigError(
                "refine.max_added_per_node must be -1 (unbounded) or a count", key="refine.max_added_per_node"
            )

    def to_text(self) -> str:
        lines = [f"{key} = {_format_value(self.values[key])}" for key in sorted(self.values)]
        return "\n".join(lines) + "\n"

    def save_config(self, path: Optional[str] = None):
        """Save the effective configuration as a canonical sorted file"""
        target = path or self.config_file or DEFAULT_CONFIG_FILE
        with open(target, "w", encoding="utf-8") as f:
            f.write(self.to_text())
        logger.info(f"✅ Configuration saved to {target}")

    def describe(self) -> str:
        """Human-readable listing with the source of every value"""
        lines = ["📋 Effective configuration:", "=" * 50]
        for key in sorted(self.values):
            lines.append(f"  {key} = {_format_value(self.values[key])}  [{self.sources[key]}]")
        return "\n".join(lines)
