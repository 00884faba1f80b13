"""
Voxel classifiers that stand in for trained segmentation networks.

Every predictor maps an HU patch plus its location in the parent volume
to a probability patch of the same shape. Real network outputs are
plugged in through :class:`ProbFile`.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from .volume import Kind, PatchSpec, Volume


@dataclass(frozen=True)
class Window:
    """Intensity band classifier: 1 inside [lo, hi], linear fall-off of width ``softness`` outside."""

    lo: float
    hi: float
    softness: float = 0.0

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"window needs lo < hi, got ({self.lo}, {self.hi})")
        if self.softness < 0:
            raise ValueError("window softness must be >= 0")

    def check_target(self, dims) -> None:
        pass

    def response(self, hu: np.ndarray) -> np.ndarray:
        hu = np.asarray(hu, dtype=np.float64)
        inside = (hu >= self.lo) & (hu <= self.hi)
        if self.softness == 0:
            return inside.astype(np.float64)
        with np.errstate(over="ignore"):  # denormal softness: ramp collapses to a step
            below = 1.0 - (self.lo - hu) / self.softness
            above = 1.0 - (hu - self.hi) / self.softness
        out = np.where(hu < self.lo, below, np.where(hu > self.hi, above, 1.0))
        return np.clip(out, 0.0, 1.0)

    def predict(self, patch: Volume, loc: PatchSpec) -> Volume:
        _check_patch(patch, loc)
        return patch.with_data(self.response(patch.data), kind=Kind.PROBABILITY)

    def describe(self) -> str:
        return f"window:{self.lo:g}:{self.hi:g}:{self.softness:g}"


@dataclass(frozen=True, eq=False)
class ProbFile:
    """Precomputed probability map, typically exported from an external model."""

    volume: Volume
    path: Optional[str] = None

    def __post_init__(self):
        if self.volume.kind is not Kind.PROBABILITY:
            raise ValueError(f"ProbFile needs a probability volume, got {self.volume.kind.value}")

    @classmethod
    def from_path(cls, path: Union[str, Path]) -> "ProbFile":
        from .nifti import read_volume

        vol, _ = read_volume(path, kind_hint=Kind.PROBABILITY)
        if vol.kind is Kind.LABEL:
            vol = vol.with_data(vol.data.astype(np.float64), kind=Kind.PROBABILITY)
        return cls(vol, str(path))

    def check_target(self, dims) -> None:
        if tuple(dims) != self.volume.dims:
            raise ValueError(f"probability map dims {self.volume.dims} do not match target {tuple(dims)}")

    def predict(self, patch: Volume, loc: PatchSpec) -> Volume:
        _check_patch(patch, loc)
        if not loc.fits(self.volume.dims):
            raise ValueError(f"patch {loc} outside probability map dims {self.volume.dims}")
        return patch.with_data(self.volume.data[loc.slices], kind=Kind.PROBABILITY)

    def describe(self) -> str:
        return f"probfile:{self.path or '<memory>'}"


@dataclass(frozen=True, eq=False)
class Oracle:
    """Ground-truth labels plus clamped Gaussian noise.

    Noise is drawn per patch from a generator seeded with ``seed`` and the
    patch start, so results do not depend on the order patches are visited.
    """

    reference: Volume
    noise_sd: float = 0.0
    seed: int = 0
    path: Optional[str] = None

    def __post_init__(self):
        if self.reference.kind is not Kind.LABEL:
            raise ValueError("oracle reference must be a label volume")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")

    @classmethod
    def from_path(cls, path: Union[str, Path], noise_sd: float = 0.0, seed: int = 0) -> "Oracle":
        from .nifti import read_volume

        vol, _ = read_volume(path)
        if vol.kind is not Kind.LABEL:
            raise ValueError(f"{path} is not a 0/1 uint8 mask")
        return cls(vol, noise_sd, seed, str(path))

    def check_target(self, dims) -> None:
        if tuple(dims) != self.reference.dims:
            raise ValueError(f"oracle reference dims {self.reference.dims} do not match target {tuple(dims)}")

    def predict(self, patch: Volume, loc: PatchSpec) -> Volume:
        _check_patch(patch, loc)
        if not loc.fits(self.reference.dims):
            raise ValueError(f"patch {loc} outside reference dims {self.reference.dims}")
        labels = self.reference.data[loc.slices].astype(np.float64)
        if self.noise_sd > 0:
            rng = np.random.default_rng([int(self.seed), *loc.start])
            labels = np.clip(labels + rng.normal(0.0, self.noise_sd, labels.shape), 0.0, 1.0)
        return patch.with_data(labels, kind=Kind.PROBABILITY)

    def describe(self) -> str:
        return f"oracle:{self.path or '<memory>'}:{self.noise_sd:g}:{self.seed}"


Predictor = Union[Window, ProbFile, Oracle]


def _check_patch(patch: Volume, loc: PatchSpec) -> None:
    if patch.kind is not Kind.HU:
        raise ValueError(f"predictors take HU patches, got {patch.kind.value}")
    if patch.dims != loc.size:
        raise ValueError(f"patch dims {patch.dims} do not match location size {loc.size}")


def predict(spec: Predictor, patch: Volume, loc: PatchSpec) -> Volume:
    return spec.predict(patch, loc)


def parse_predictor(text: str) -> Predictor:
    """Build a predictor from its config string.

    Forms: ``window:LO:HI[:SOFTNESS]``, ``probfile:PATH``,
    ``oracle:PATH[:NOISE_SD[:SEED]]``.
    """
    kind, _, rest = text.strip().partition(":")
    kind = kind.lower()
    if kind == "window":
        parts = rest.split(":")
        if len(parts) not in (2, 3):
            raise ValueError(f"bad window predictor {text!r}")
        return Window(*(float(p) for p in parts))
    if kind == "probfile":
        if not rest:
            raise ValueError("probfile predictor needs a path")
        return ProbFile.from_path(rest)
    if kind == "oracle":
        path, noise, seed = rest, 0.0, 0
        parts = rest.rsplit(":", 2)
        if len(parts) == 3 and _is_number(parts[1]) and _is_int(parts[2]):
            path, noise, seed = parts[0], float(parts[1]), int(parts[2])
        elif len(parts) >= 2 and _is_number(parts[-1]):
            path, noise = rest.rsplit(":", 1)[0], float(parts[-1])
        if not path:
            raise ValueError("oracle predictor needs a reference path")
        return Oracle.from_path(path, noise, seed)
    raise ValueError(f"unknown predictor kind {kind!r}")


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def _is_int(s: str) -> bool:
    try:
        int(s)
    except ValueError:
        return False
    return True


def suggest_window(v: Volume, half_width: float = 150.0) -> Tuple[float, float]:
    """Advisory lumen band: the most frequent (integer-binned) intensity above
    the 95th percentile, plus or minus ``half_width``."""
    if v.kind is not Kind.HU:
        raise ValueError("suggest_window expects an HU volume")
    values = np.asarray(v.data, dtype=np.float64).ravel()
    if values.min() == values.max():
        raise ValueError("constant volume has no contrast band")
    p95 = np.percentile(values, 95)
    bright = values[values > p95]
    if bright.size == 0:
        bright = values[values >= p95]
    binned, counts = np.unique(np.floor(bright + 0.5), return_counts=True)
    mode = float(binned[np.argmax(counts)])
    return mode - half_width, mode + half_width

