"""Flat ``section.key = value`` run configuration.

Every key has a default. Values from a config file are overridden by
command-line flags. :meth:`RunConfig.dump` writes the same format back,
so an echoed config can be replayed with ``--config``.
"""

from __future__ import annotations

import hashlib
from dataclasses import fields
from pathlib import Path
from typing import Any, Mapping

from .labeling import LabelConfigError, LabelWeights
from .nextvlad import NeXtVLADConfig
from .ranker import RankerConfig
from .synthgen import SynthConfig, SynthConfigError

TRANSFORMS = {
    "none": lambda s: s,
    "cube": lambda s: s ** 3,
}


class ConfigError(ValueError):
    pass


def _defaults() -> dict[str, Any]:
    d: dict[str, Any] = {"seed": 7}
    for f in fields(SynthConfig):
        if f.name != "seed":
            d[f"synth.{f.name}"] = f.default
    d.update({
        "labels.likes": 1.0,
        "labels.retweets": 1.5,
        "labels.comments": 1.2,
        "labels.delta": 0.1,
        "labels.include_ties": False,
        "labels.use_human_score": False,
        "labels.n_pairs": 0,
        "labels.transform": "none",
        "split.train": 0.8,
        "split.val": 0.1,
        "split.test": 0.1,
        "vlad.expansion": 2,
        "vlad.groups": 4,
        "vlad.clusters": 8,
        "vlad.normalize": True,
    })
    for f in fields(RankerConfig):
        if f.name != "seed":
            d[f"ranker.{f.name}"] = f.default
    d.update({
        "eval.n_pairs": 2000,
        "eval.delta": 0.1,
        "eval.use_human_score": True,
        "paths.corpus": "corpus.jsonl",
        "paths.checkpoint": "model.ckpt",
        "paths.log": "train_log.csv",
        "paths.report": "report.json",
        "paths.input": "",
        "paths.output": "",
    })
    return d


DEFAULTS = _defaults()


def _parse_value(key: str, text: str) -> Any:
    default = DEFAULTS[key]
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(p) for p in text.replace(" ", "").split(",") if p)
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {type(default).__name__}") from None


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


class RunConfig:
    def __init__(self, values: Mapping[str, Any] | None = None):
        self.values = dict(DEFAULTS)
        for key, value in (values or {}).items():
            self.set(key, value)

    def set(self, key: str, value: Any) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(value, str) and not isinstance(DEFAULTS[key], str):
            value = _parse_value(key, value)
        elif isinstance(DEFAULTS[key], float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        self.values[key] = value

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
            key, value = (p.strip() for p in line.split("=", 1))
            cfg.set(key, value)
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), str(path))

    def dump(self) -> str:
        return "".join(f"{k} = {_format_value(v)}\n" for k, v in self.values.items())

    def as_dict(self) -> dict[str, Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.values.items()}

    def fingerprint(self) -> str:
        """Short hash of every setting except ``paths.*``, so the same
        experiment written to different locations shares a fingerprint."""
        body = "".join(line for line in self.dump().splitlines(keepends=True) if not line.startswith("paths."))
        return hashlib.sha256(body.encode("utf-8")).hexdigest()[:16]

    def section(self, name: str) -> dict[str, Any]:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}

    # -- typed views --------------------------------------------------------

    def synth(self) -> SynthConfig:
        try:
            return SynthConfig(seed=self["seed"], **self.section("synth"))
        except SynthConfigError as exc:
            raise ConfigError(str(exc)) from None

    def ranker(self) -> RankerConfig:
        try:
            return RankerConfig(seed=self["seed"], **self.section("ranker"))
        except ValueError as exc:
            raise ConfigError(f"ranker: {exc}") from None

    def vlad(self, input_dim: int) -> NeXtVLADConfig:
        try:
            return NeXtVLADConfig(input_dim, **self.section("vlad"))
        except ValueError as exc:
            raise ConfigError(f"vlad: {exc}") from None

    def label_weights(self) -> LabelWeights:
        try:
            return LabelWeights(self["labels.likes"], self["labels.retweets"], self["labels.comments"])
        except LabelConfigError as exc:
            raise ConfigError(f"labels: {exc}") from None

    def split_ratios(self) -> tuple[float, float, float]:
        ratios = (self["split.train"], self["split.val"], self["split.test"])
        if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split.train/val/test must be non-negative and sum to 1, got {ratios}")
        return ratios

    def transform(self):
        name = self["labels.transform"]
        if name not in TRANSFORMS:
            raise ConfigError(f"labels.transform: unknown transform {name!r} (choose from {sorted(TRANSFORMS)})")
        return TRANSFORMS[name]

    def validate(self) -> None:
        """Build every typed view once so bad values fail before any work starts."""
        self.synth()
        self.ranker()
        self.vlad(max(self["vlad.groups"], 1) * 8)
        self.label_weights()
        self.split_ratios()
        self.transform()
        if not 0.0 <= self["labels.delta"] < 1.0:
            raise ConfigError("labels.delta must lie in [0, 1)")
        if not 0.0 <= self["eval.delta"] < 1.0:
            raise ConfigError("eval.delta must lie in [0, 1)")
        if self["labels.n_pairs"] < 0:
            raise ConfigError("labels.n_pairs must be >= 0")
        if self["eval.n_pairs"] < 1:
            raise ConfigError("eval.n_pairs must be >= 1")
