"""Flat ``key = value`` experiment configuration.

Blank lines and ``#`` comments are ignored. Unknown keys are rejected.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional, Tuple

from .filters import BayesParams, ReverseMode
from .netsim import CostModel, cost_profile
from .pipeline import PipelineConfig

ENV_VAR = "SPAMSIM_CONFIG"


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        text = text.strip()
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text
    return parse


def _nonneg(conv):
    def parse(text: str):
        value = conv(text)
        if value < 0:
            raise ValueError(f"must be non-negative: {text!r}")
        return value
    return parse


_str = str.strip

SCHEMA: Dict[str, Tuple[Callable[[str], Any], Any]] = {
    # cost model
    "profile": (_str, "dspam"),
    "session_setup_s": (_nonneg(float), None),
    "per_command_s": (_nonneg(float), None),
    "per_byte_s": (_nonneg(float), None),
    "filter_cost_s": (_nonneg(float), None),
    # pipeline switches
    "counter": (_bool, False),
    "whitelist": (_bool, True),
    "blacklist": (_bool, True),
    "greylist": (_bool, False),
    "content": (_bool, True),
    "rules": (_bool, True),
    "reverse_lookup": (_bool, False),
    "reverse_mode": (_choice("strict", "lenient"), "strict"),
    "dedup": (_choice("auto", "on", "off"), "auto"),
    "whitelist_skips_content": (_bool, False),
    # filter parameters
    "bayes_threshold": (float, 0.9),
    "bayes_p_unknown": (float, 0.4),
    "bayes_floor": (float, 0.01),
    "bayes_ceil": (float, 0.99),
    "bayes_max_tokens": (int, 15),
    "greylist_min_delay_s": (_nonneg(float), 120.0),
    "greylist_max_lifetime_s": (_nonneg(float), 86400.0),
    "counter_limit": (_nonneg(int), 100),
    "counter_window_s": (_nonneg(float), 3600.0),
    "receiver_policy": (_choice("drop", "spam_folder"), "drop"),
    # run
    "seed": (int, 0),
    "n": (_nonneg(int), None),
    # paths
    "corpus": (_str, None),
    "lists": (_str, None),
    "world": (_str, None),
    "output": (_str, None),
    "plot": (_str, None),
}

COST_KEYS = ("session_setup_s", "per_command_s", "per_byte_s", "filter_cost_s")


class Config:
    """Typed view of the settings; every schema key is an attribute."""

    def __init__(self, values: Optional[Mapping[str, Any]] = None):
        self._values = {k: default for k, (_, default) in SCHEMA.items()}
        for key, value in (values or {}).items():
            self.set(key, value)

    def __getattr__(self, name):
        try:
            return self.__dict__["_values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def set(self, key: str, value: Any) -> None:
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(value, str):
            try:
                value = SCHEMA[key][0](value)
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
        self._values[key] = value

    def update(self, overrides: Mapping[str, Any]) -> Config:
        for key, value in overrides.items():
            if value is not None:
                self.set(key, value)
        return self

    def as_dict(self) -> Dict[str, Any]:
        return dict(self._values)

    def cost_model(self, profile: Optional[str] = None) -> CostModel:
        overrides = {k: self._values[k] for k in COST_KEYS if self._values[k] is not None}
        try:
            return cost_profile(profile or self.profile, **overrides)
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None

    def pipeline_config(self) -> PipelineConfig:
        bayes = BayesParams(self.bayes_p_unknown, self.bayes_floor, self.bayes_ceil,
                            self.bayes_max_tokens, self.bayes_threshold)
        return PipelineConfig(
            counter=self.counter, whitelist=self.whitelist, blacklist=self.blacklist,
            greylist=self.greylist, content=self.content, rules=self.rules,
            reverse_lookup=self.reverse_lookup, reverse_mode=ReverseMode(self.reverse_mode),
            dedup=self.dedup == "on", whitelist_skips_content=self.whitelist_skips_content,
            bayes=bayes)

    def dedup_override(self) -> Optional[bool]:
        return None if self.dedup == "auto" else self.dedup == "on"


def parse_config(text: str) -> Dict[str, str]:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        values[key] = value.strip()
    return values


def load_config(path: Optional[os.PathLike] = None) -> Config:
    """Read ``path``, or the file named by $SPAMSIM_CONFIG, or use defaults."""
    if path is None:
        path = os.environ.get(ENV_VAR) or None
    if path is None:
        return Config()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return Config(parse_config(text))
