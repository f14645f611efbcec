"""Line-oriented ``key = value`` pipeline configuration.

Keys use dotted section prefixes::

    paths.train = data/train.txt
    train.epochs = 30
    model.NOTE.lr = 0.5
    ensemble.sources = TransE,NOTE,F_HT

Relative paths resolve against the config file's directory. Per-model
sections accept both geometry keys and any ``train.*`` key as an override.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .context import WalkConfig
from .ensemble import DEFAULT_GRID
from .features import FEATURE_KINDS, FeatureSource
from .models import MODEL_KINDS, GeometryConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Unknown key or unparsable value."""


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text):
    return None if text.strip().lower() in ("", "none") else int(text)


def _list(text):
    return [part.strip() for part in text.split(",") if part.strip()]


def _floats(text):
    return [float(x) for x in _list(text)]


_TRAIN_KEYS = {
    "batch_size": int, "lr": float, "lrd_step": int, "neg_sample_size": int,
    "adversarial_temperature": float, "epochs": int, "max_steps": _opt_int,
    "dtype": str, "row_normalize": _bool,
}
_GEOMETRY_KEYS = {"hidden_size": int, "gamma": float, "norm_p": _opt_int, "ote_size": int}
_WALK_KEYS = {f.name: (float if f.name == "lr" else int) for f in fields(WalkConfig)}

_SCALAR_KEYS = {
    "seed": int,
    "threads": int,
    "models": _list,
    "paths.train": str,
    "paths.valid": str,
    "paths.test": str,
    "paths.artifacts": str,
    "smooth.alpha": float,
    "smooth.alphas": _floats,
    "smooth.models": _list,
    "features.kinds": _list,
    "features.include_training": _bool,
    "features.include_candidates": _bool,
    "features.max_support": _opt_int,
    "features.rebuild_kinds": _list,
    "filter.threshold": int,
    "grid.values": _floats,
    "grid.max_rounds": _opt_int,
    "ensemble.sources": _list,
    "predict.top_k": int,
}


@dataclass
class PipelineConfig:
    base_dir: Path = field(default_factory=Path.cwd)
    seed: int = 0
    threads: int = 1
    models: list = field(default_factory=lambda: list(MODEL_KINDS))
    paths: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    smooth_alpha: Optional[float] = None
    smooth_alphas: list = field(default_factory=lambda: [0.7, 0.8, 0.9, 1.0])
    smooth_models: list = field(default_factory=lambda: ["TransE", "RotatE"])
    walk: dict = field(default_factory=dict)
    feature_kinds: list = field(default_factory=lambda: list(FEATURE_KINDS))
    include_training: bool = True
    include_candidates: bool = False
    max_support: Optional[int] = None
    rebuild_kinds: Optional[list] = None
    filter_threshold: int = 0
    grid_values: list = field(default_factory=lambda: list(DEFAULT_GRID))
    grid_max_rounds: Optional[int] = None
    ensemble_sources: Optional[list] = None
    top_k: int = 10

    def set(self, key: str, raw: str):
        """Apply one ``key=value`` assignment."""
        key = key.strip()
        try:
            self._set(key, raw.strip())
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{key}: {exc}") from None

    def _set(self, key, raw):
        parts = key.split(".")
        if parts[0] == "train" and len(parts) == 2 and parts[1] in _TRAIN_KEYS:
            self.train[parts[1]] = _TRAIN_KEYS[parts[1]](raw)
            return
        if parts[0] == "model" and len(parts) == 3:
            kind, name = parts[1], parts[2]
            if kind not in MODEL_KINDS:
                raise ConfigError(f"{key}: unknown model kind {kind!r}")
            conv = _GEOMETRY_KEYS.get(name) or _TRAIN_KEYS.get(name)
            if conv is None:
                raise ConfigError(f"unknown key {key!r}")
            self.model.setdefault(kind, {})[name] = conv(raw)
            return
        if parts[0] == "walk" and len(parts) == 2 and parts[1] in _WALK_KEYS:
            self.walk[parts[1]] = _WALK_KEYS[parts[1]](raw)
            return
        if key not in _SCALAR_KEYS:
            raise ConfigError(f"unknown key {key!r}")
        value = _SCALAR_KEYS[key](raw)
        if key.startswith("paths."):
            self.paths[parts[1]] = value
            return
        if key == "models":
            bad = [m for m in value if m not in MODEL_KINDS]
            if bad:
                raise ConfigError(f"unknown model kinds: {', '.join(bad)}")
        if key == "features.kinds":
            if value == ["all"]:
                value = list(FEATURE_KINDS)
            bad = [k for k in value if k not in FEATURE_KINDS]
            if bad:
                raise ConfigError(f"unknown feature kinds: {', '.join(bad)}")
        attr = {
            "smooth.alpha": "smooth_alpha", "smooth.alphas": "smooth_alphas",
            "smooth.models": "smooth_models", "features.kinds": "feature_kinds",
            "features.include_training": "include_training",
            "features.include_candidates": "include_candidates",
            "features.max_support": "max_support", "features.rebuild_kinds": "rebuild_kinds",
            "filter.threshold": "filter_threshold", "grid.values": "grid_values",
            "grid.max_rounds": "grid_max_rounds", "ensemble.sources": "ensemble_sources",
            "predict.top_k": "top_k",
        }.get(key, key)
        setattr(self, attr, value)

    # -- derived settings --

    def path(self, name: str) -> Optional[Path]:
        raw = self.paths.get(name)
        if raw is None:
            return None
        p = Path(raw)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def artifacts(self) -> Path:
        return self.path("artifacts") or self.base_dir / "artifacts"

    def geometry(self, kind: str) -> GeometryConfig:
        over = self.model.get(kind, {})
        kw = {k: v for k, v in over.items() if k in _GEOMETRY_KEYS}
        return GeometryConfig(kind, **kw)

    def train_config(self, kind: str) -> TrainConfig:
        kw = dict(self.train)
        kw.update({k: v for k, v in self.model.get(kind, {}).items() if k in _TRAIN_KEYS})
        return TrainConfig(self.geometry(kind), seed=self.seed, **kw)

    def walk_config(self) -> WalkConfig:
        kw = dict(self.walk)
        kw.setdefault("seed", self.seed)
        return WalkConfig(**kw)

    def feature_source(self) -> FeatureSource:
        return FeatureSource(self.include_training, self.include_candidates)

    def sources(self) -> list:
        if self.ensemble_sources is not None:
            return list(self.ensemble_sources)
        return list(self.models) + list(self.feature_kinds)

    def with_overrides(self, assignments) -> "PipelineConfig":
        out = replace(self, paths=dict(self.paths), train=dict(self.train),
                      model={k: dict(v) for k, v in self.model.items()}, walk=dict(self.walk))
        for item in assignments:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"override {item!r} is not key=value")
            out.set(key, value)
        return out


def parse_config(text: str, base_dir=None) -> PipelineConfig:
    cfg = PipelineConfig(base_dir=Path(base_dir) if base_dir is not None else Path.cwd())
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value")
        try:
            cfg.set(key, value)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    return cfg


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such config file: {path}")
    return parse_config(path.read_text(encoding="utf-8"), base_dir=path.parent)


def dump_config(cfg: PipelineConfig) -> str:
    """Render the effective configuration, for experiment records."""
    lines = [f"seed = {cfg.seed}", f"threads = {cfg.threads}", f"models = {','.join(cfg.models)}"]
    for k in sorted(cfg.paths):
        lines.append(f"paths.{k} = {cfg.paths[k]}")
    for k in sorted(cfg.train):
        lines.append(f"train.{k} = {cfg.train[k]}")
    for kind in sorted(cfg.model):
        for k in sorted(cfg.model[kind]):
            lines.append(f"model.{kind}.{k} = {cfg.model[kind][k]}")
    for k in sorted(cfg.walk):
        lines.append(f"walk.{k} = {cfg.walk[k]}")
    if cfg.smooth_alpha is not None:
        lines.append(f"smooth.alpha = {cfg.smooth_alpha}")
    lines.append(f"smooth.alphas = {','.join(map(str, cfg.smooth_alphas))}")
    lines.append(f"features.kinds = {','.join(cfg.feature_kinds)}")
    lines.append(f"features.include_training = {cfg.include_training}")
    lines.append(f"features.include_candidates = {cfg.include_candidates}")
    lines.append(f"filter.threshold = {cfg.filter_threshold}")
    lines.append(f"grid.values = {','.join(map(str, cfg.grid_values))}")
    lines.append(f"ensemble.sources = {','.join(cfg.sources())}")
    lines.append(f"predict.top_k = {cfg.top_k}")
    return "\n".join(lines) + "\n"
