"""
Pipeline configuration and its flat ``key = value`` text form.

Example::

    coarse_patch = 128 128 128
    coarse_stride = 96
    fine_patch = 64
    coarse_threshold = 0.5
    coarse_predictor = window:150:600:0
    source_tag = K

A single number for a triple key means the same value on every axis.
``d_min = auto`` uses half the smallest fine patch edge.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Dict, Mapping, Optional, Tuple, Union

from .centerline import default_d_min
from .nifti import NiftiError
from .predictor import Oracle, ProbFile, Window, parse_predictor
from .volume import SourceTag, Triple

PredictorLike = Union[str, Window, ProbFile, Oracle]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    coarse_patch: Triple = (128, 128, 128)
    coarse_stride: Triple = (96, 96, 96)
    fine_patch: Triple = (64, 64, 64)
    coarse_threshold: float = 0.5
    fine_threshold: float = 0.5
    d_min: Optional[float] = None
    min_component_size: int = 0
    coarse_predictor: PredictorLike = Window(150.0, 600.0, 0.0)
    fine_predictor: PredictorLike = Window(150.0, 600.0, 0.0)
    source_tag: SourceTag = SourceTag.UNKNOWN

    def __post_init__(self):
        for name in ("coarse_patch", "coarse_stride", "fine_patch"):
            value = getattr(self, name)
            if isinstance(value, int):
                value = (value,) * 3
            value = tuple(int(v) for v in value)
            if len(value) != 3 or min(value) < 1:
                raise ConfigError(f"{name} must be three positive integers, got {value}")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "source_tag", SourceTag(self.source_tag))
        if any(f > c for f, c in zip(self.fine_patch, self.coarse_patch)):
            raise ConfigError(f"fine_patch {self.fine_patch} must not exceed coarse_patch {self.coarse_patch}")
        if any(t > p for t, p in zip(self.coarse_stride, self.coarse_patch)):
            raise ConfigError(f"coarse_stride {self.coarse_stride} exceeds coarse_patch {self.coarse_patch}")
        for name in ("coarse_threshold", "fine_threshold"):
            t = getattr(self, name)
            if not 0 < t < 1:
                raise ConfigError(f"{name} must lie in (0, 1), got {t}")
        if self.d_min is not None and self.d_min < 0:
            raise ConfigError("d_min must be >= 0")
        if self.min_component_size < 0:
            raise ConfigError("min_component_size must be >= 0")

    @property
    def effective_d_min(self) -> float:
        return default_d_min(self.fine_patch) if self.d_min is None else self.d_min

    def predictor(self, which: str):
        spec = getattr(self, f"{which}_predictor")
        if isinstance(spec, str):
            try:
                return parse_predictor(spec)
            except (OSError, NiftiError):
                raise
            except ValueError as exc:
                raise ConfigError(f"{which}_predictor: {exc}") from exc
        return spec

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in to_mapping(self).items())


def _format(value) -> str:
    if isinstance(value, tuple):
        return " ".join(str(v) for v in value)
    if isinstance(value, SourceTag):
        return value.value
    if isinstance(value, (Window, ProbFile, Oracle)):
        return value.describe()
    if value is None:
        return "auto"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_mapping(cfg: PipelineConfig) -> Dict[str, str]:
    return {f.name: _format(getattr(cfg, f.name)) for f in fields(cfg)}


def _triple(text: str) -> Tuple[int, int, int]:
    parts = text.replace(",", " ").split()
    if len(parts) == 1:
        parts = parts * 3
    if len(parts) != 3:
        raise ValueError(f"expected 1 or 3 integers, got {text!r}")
    return tuple(int(p) for p in parts)


def _optional_float(text: str) -> Optional[float]:
    return None if text.strip().lower() in ("auto", "none", "") else float(text)


def _predictor_spec(text: str) -> PredictorLike:
    """Window specs are built eagerly; file-backed ones stay strings until run time."""
    text = text.strip()
    if text.lower().startswith("window:"):
        return parse_predictor(text)
    if not text.lower().startswith(("probfile:", "oracle:")):
        raise ValueError(f"unknown predictor {text!r}")
    return text


_PARSERS = {
    "coarse_patch": _triple,
    "coarse_stride": _triple,
    "fine_patch": _triple,
    "coarse_threshold": float,
    "fine_threshold": float,
    "d_min": _optional_float,
    "min_component_size": int,
    "coarse_predictor": _predictor_spec,
    "fine_predictor": _predictor_spec,
    "source_tag": SourceTag.parse,
}

KEYS = tuple(_PARSERS)


def parse_text(text: str) -> Dict[str, str]:
    """Raw key/value pairs from config text; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = value.strip()
    return out


def build(file_values: Mapping[str, str] = (), flag_values: Mapping[str, str] = ()) -> Tuple[PipelineConfig, Dict[str, str]]:
    """Merge defaults < config file < flags.

    Returns:
        (config, source of each key: "default", "file" or "flag").
    """
    file_values = dict(file_values)
    flag_values = {k: v for k, v in dict(flag_values).items() if v is not None}
    kwargs, sources = {}, {}
    for key, parse in _PARSERS.items():
        if key in flag_values:
            raw, src = str(flag_values[key]), "flag"
        elif key in file_values:
            raw, src = file_values[key], "file"
        else:
            sources[key] = "default"
            continue
        try:
            kwargs[key] = parse(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from exc
        sources[key] = src
    try:
        cfg = PipelineConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg, sources


def from_text(text: str) -> PipelineConfig:
    return build(parse_text(text))[0]


def resolved(cfg: PipelineConfig) -> PipelineConfig:
    """Copy with predictor strings turned into predictor objects."""
    return replace(cfg, coarse_predictor=cfg.predictor("coarse"), fine_predictor=cfg.predictor("fine"))
