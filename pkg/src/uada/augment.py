"""Discretized augmentation operations and composed pipelines.

Every operation parameter lives on an integer lattice. Magnitudes span
levels 0..9; signed operations carry a separate two-valued direction
parameter that is fixed at sampling time and never adapted. Cutout carries
three adaptable parameters: patch size and the two center coordinates.

A pipeline applies one set of parameters to a whole batch, ``ops[0]``
first and ``ops[-1]`` last.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import _kernels

MAX_LEVEL = 9


class AugmentError(ValueError):
    """Invalid augmentation parameters or configuration."""


@dataclass(frozen=True)
class ImageBatch:
    data: np.ndarray  # (batch, channels, height, width), values in [0, 1]
    labels: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 4:
            raise AugmentError(f"image batch must be 4-D, got shape {self.data.shape}")
        if self.data.shape[0] < 1:
            raise AugmentError("image batch is empty")
        if len(self.labels) != self.data.shape[0]:
            raise AugmentError(
                f"{len(self.labels)} labels for {self.data.shape[0]} images"
            )

    def __len__(self):
        return self.data.shape[0]

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.data.shape[2], self.data.shape[3]


class OpKind(str, enum.Enum):
    ROTATE = "Rotate"
    TRANSLATE_X = "TranslateX"
    TRANSLATE_Y = "TranslateY"
    SHEAR_X = "ShearX"
    SHEAR_Y = "ShearY"
    BRIGHTNESS = "Brightness"
    CONTRAST = "Contrast"
    SOLARIZE = "Solarize"
    POSTERIZE = "Posterize"
    CUTOUT = "Cutout"

    @classmethod
    def parse(cls, name: str) -> "OpKind":
        key = name.strip().lower()
        for kind in cls:
            if kind.value.lower() == key:
                return kind
        raise AugmentError(f"unknown augmentation kind {name!r}")


ALL_KINDS: tuple[OpKind, ...] = tuple(OpKind)
SIGNED_KINDS = frozenset({
    OpKind.ROTATE, OpKind.TRANSLATE_X, OpKind.TRANSLATE_Y, OpKind.SHEAR_X,
    OpKind.SHEAR_Y, OpKind.BRIGHTNESS, OpKind.CONTRAST,
})


@dataclass(frozen=True)
class ParamSpec:
    name: str
    min_level: int
    max_level: int
    identity_level: int | None = None
    adaptable: bool = True

    def __post_init__(self):
        if self.min_level > self.max_level:
            raise AugmentError(f"{self.name}: empty lattice {self.min_level}..{self.max_level}")
        if self.identity_level is not None and not (
            self.min_level <= self.identity_level <= self.max_level
        ):
            raise AugmentError(f"{self.name}: identity level outside lattice")

    def contains(self, level: int) -> bool:
        return self.min_level <= level <= self.max_level

    def clamp(self, level: int) -> int:
        return min(max(level, self.min_level), self.max_level)

    @property
    def n_levels(self) -> int:
        return self.max_level - self.min_level + 1


_MAGNITUDE = ParamSpec("magnitude", 0, MAX_LEVEL, identity_level=0)
_MAGNITUDE_NO_IDENTITY = ParamSpec("magnitude", 0, MAX_LEVEL)
_DIRECTION = ParamSpec("direction", 0, 1, adaptable=False)


def param_specs(kind: OpKind, height: int, width: int) -> tuple[ParamSpec, ...]:
    """Parameter lattices of ``kind`` for images of the given size."""
    if kind in SIGNED_KINDS:
        return (_MAGNITUDE, _DIRECTION)
    if kind is OpKind.SOLARIZE:
        # threshold 1.0 still flips pixels equal to 1, so no level is the identity
        return (_MAGNITUDE_NO_IDENTITY,)
    if kind is OpKind.POSTERIZE:
        return (_MAGNITUDE,)
    if kind is OpKind.CUTOUT:
        return (
            ParamSpec("size", 0, MAX_LEVEL, identity_level=0),
            ParamSpec("center_x", 0, width - 1),
            ParamSpec("center_y", 0, height - 1),
        )
    raise AugmentError(f"no parameter table for {kind!r}")


@dataclass(frozen=True)
class Registry:
    """The set of operation kinds available to the sampler, bound to an image size."""

    kinds: tuple[OpKind, ...]
    height: int
    width: int

    def __post_init__(self):
        if not self.kinds:
            raise AugmentError("augmentation registry is empty")
        if self.height < 1 or self.width < 1:
            raise AugmentError("registry image size must be positive")

    @classmethod
    def default(cls, height: int, width: int) -> "Registry":
        return cls(ALL_KINDS, height, width)

    def specs(self, kind: OpKind) -> tuple[ParamSpec, ...]:
        return param_specs(kind, self.height, self.width)

    def __len__(self):
        return len(self.kinds)


@dataclass(frozen=True, order=True)
class ParamLocator:
    op_index: int
    param_index: int


@dataclass(frozen=True)
class OpInstance:
    kind: OpKind
    levels: tuple[int, ...]
    specs: tuple[ParamSpec, ...] = field(compare=False, repr=False)

    def __post_init__(self):
        if len(self.levels) != len(self.specs):
            raise AugmentError(
                f"{self.kind.value}: {len(self.levels)} levels for {len(self.specs)} parameters"
            )
        for level, spec in zip(self.levels, self.specs):
            if not spec.contains(level):
                raise AugmentError(
                    f"{self.kind.value}.{spec.name}: level {level} outside "
                    f"{spec.min_level}..{spec.max_level}"
                )

    @classmethod
    def make(cls, kind: OpKind, levels: Sequence[int], height: int, width: int) -> "OpInstance":
        return cls(kind, tuple(int(v) for v in levels), param_specs(kind, height, width))

    def with_level(self, param_index: int, level: int) -> "OpInstance":
        levels = list(self.levels)
        levels[param_index] = int(level)
        return replace(self, levels=tuple(levels))

    def is_identity(self) -> bool:
        spec = self.specs[0]
        return spec.identity_level is not None and self.levels[0] == spec.identity_level

    def describe(self) -> str:
        inner = ",".join(f"{s.name}={v}" for s, v in zip(self.specs, self.levels))
        return f"{self.kind.value}({inner})"


@dataclass(frozen=True)
class Pipeline:
    ops: tuple[OpInstance, ...]

    def __post_init__(self):
        if len(self.ops) < 1:
            raise AugmentError("pipeline needs at least one operation")

    def __len__(self):
        return len(self.ops)

    def level(self, loc: ParamLocator) -> int:
        return self.ops[loc.op_index].levels[loc.param_index]

    def spec(self, loc: ParamLocator) -> ParamSpec:
        return self.ops[loc.op_index].specs[loc.param_index]

    def with_level(self, loc: ParamLocator, level: int) -> "Pipeline":
        ops = list(self.ops)
        ops[loc.op_index] = ops[loc.op_index].with_level(loc.param_index, level)
        return Pipeline(tuple(ops))

    def describe(self) -> str:
        return " -> ".join(op.describe() for op in self.ops)


def sample_pipeline(rng: np.random.Generator, registry: Registry, n_ops: int) -> Pipeline:
    """Draw ``n_ops`` operation kinds and a uniform level for every parameter."""
    if not registry.kinds:
        raise AugmentError("augmentation registry is empty")
    if n_ops < 1:
        raise AugmentError(f"n_ops must be >= 1, got {n_ops}")
    n = len(registry.kinds)
    picks = rng.choice(n, size=n_ops, replace=n_ops > n)
    ops = []
    for idx in picks:
        kind = registry.kinds[int(idx)]
        specs = registry.specs(kind)
        levels = tuple(int(rng.integers(s.min_level, s.max_level + 1)) for s in specs)
        ops.append(OpInstance(kind, levels, specs))
    return Pipeline(tuple(ops))


def adaptable_params(p: Pipeline) -> list[ParamLocator]:
    return [
        ParamLocator(i, j)
        for i, op in enumerate(p.ops)
        for j, spec in enumerate(op.specs)
        if spec.adaptable
    ]


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def level_to_physical(
    kind: OpKind, param_index: int, level: int, image_shape: tuple[int, int] | None = None
) -> float:
    """Physical value of a lattice level.

    Units: degrees (Rotate), pixels (Translate, Cutout), shear factor,
    intensity factor (Brightness, Contrast), intensity threshold (Solarize),
    retained bits (Posterize). Direction parameters map to -1.0 / +1.0.
    Translate and Cutout size depend on the image extent and need
    ``image_shape=(height, width)``.
    """
    height, width = image_shape if image_shape is not None else (MAX_LEVEL + 1, MAX_LEVEL + 1)
    specs = param_specs(kind, height, width)
    if not 0 <= param_index < len(specs):
        raise AugmentError(f"{kind.value} has no parameter {param_index}")
    spec = specs[param_index]
    if not spec.contains(level):
        raise AugmentError(
            f"{kind.value}.{spec.name}: level {level} outside {spec.min_level}..{spec.max_level}"
        )
    if spec.name == "direction":
        return -1.0 if level == 0 else 1.0
    if kind is OpKind.ROTATE:
        return level * 30.0 / 9.0
    if kind in (OpKind.TRANSLATE_X, OpKind.TRANSLATE_Y):
        if image_shape is None:
            raise AugmentError("translate magnitudes need image_shape")
        extent = width if kind is OpKind.TRANSLATE_X else height
        return float(_round_half_up(level * 0.3 * extent / 9.0))
    if kind in (OpKind.SHEAR_X, OpKind.SHEAR_Y):
        return level * 0.3 / 9.0
    if kind in (OpKind.BRIGHTNESS, OpKind.CONTRAST):
        return 1.0 + level * 0.9 / 9.0
    if kind is OpKind.SOLARIZE:
        return 1.0 - level * 1.0 / 9.0
    if kind is OpKind.POSTERIZE:
        return float(8 - (level * 4) // 9)
    if kind is OpKind.CUTOUT:
        if param_index == 0:
            if image_shape is None:
                raise AugmentError("cutout size needs image_shape")
            return float(_round_half_up(level * 0.5 * min(height, width) / 9.0))
        return float(level)
    raise AugmentError(f"no magnitude table for {kind!r}")  # pragma: no cover


# ---------------------------------------------------------------------------
# geometry: inverse maps from output pixel to nearest source pixel (-1 = outside)
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=512)
def _affine_map(h: int, w: int, a: float, b: float, c: float, d: float):
    """Source indices for src = M @ (dst - center) + center, M = [[a, b], [c, d]] on (x, y)."""
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    sx = np.floor(a * dx + b * dy + cx + 0.5).astype(np.int64)
    sy = np.floor(c * dx + d * dy + cy + 0.5).astype(np.int64)
    outside = (sx < 0) | (sx >= w) | (sy < 0) | (sy >= h)
    sx[outside] = -1
    sy[outside] = -1
    sx.setflags(write=False)
    sy.setflags(write=False)
    return sy, sx


@functools.lru_cache(maxsize=512)
def _shift_map(h: int, w: int, shift_y: int, shift_x: int):
    yy, xx = np.mgrid[0:h, 0:w]
    sy = yy - shift_y
    sx = xx - shift_x
    outside = (sx < 0) | (sx >= w) | (sy < 0) | (sy >= h)
    sx[outside] = -1
    sy[outside] = -1
    sy = sy.astype(np.int64)
    sx = sx.astype(np.int64)
    sx.setflags(write=False)
    sy.setflags(write=False)
    return sy, sx


def _warp(data: np.ndarray, maps) -> np.ndarray:
    src_y, src_x = maps
    return _kernels.gather(np.ascontiguousarray(data), src_y, src_x)


def apply_op(op: OpInstance, batch: ImageBatch) -> ImageBatch:
    """Apply one operation to every image of the batch; the input is never modified."""
    out = _apply_data(op, batch.data)
    return ImageBatch(out, batch.labels)


def _apply_data(op: OpInstance, data: np.ndarray) -> np.ndarray:
    if op.is_identity():
        return data.copy()
    kind = op.kind
    h, w = data.shape[2], data.shape[3]
    level = op.levels[0]
    sign = 1.0 if kind in SIGNED_KINDS and op.levels[1] == 1 else -1.0
    dtype = data.dtype.type

    if kind is OpKind.ROTATE:
        theta = math.radians(sign * level_to_physical(kind, 0, level))
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        # inverse rotation takes each output pixel back to its source
        return _warp(data, _affine_map(h, w, cos_t, sin_t, -sin_t, cos_t))
    if kind is OpKind.SHEAR_X:
        s = sign * level_to_physical(kind, 0, level)
        return _warp(data, _affine_map(h, w, 1.0, -s, 0.0, 1.0))
    if kind is OpKind.SHEAR_Y:
        s = sign * level_to_physical(kind, 0, level)
        return _warp(data, _affine_map(h, w, 1.0, 0.0, -s, 1.0))
    if kind is OpKind.TRANSLATE_X:
        px = int(sign * level_to_physical(kind, 0, level, (h, w)))
        return _warp(data, _shift_map(h, w, 0, px))
    if kind is OpKind.TRANSLATE_Y:
        px = int(sign * level_to_physical(kind, 0, level, (h, w)))
        return _warp(data, _shift_map(h, w, px, 0))
    if kind is OpKind.BRIGHTNESS:
        factor = dtype(1.0 + sign * (level_to_physical(kind, 0, level) - 1.0))
        return np.clip(data * factor, 0, 1)
    if kind is OpKind.CONTRAST:
        factor = dtype(1.0 + sign * (level_to_physical(kind, 0, level) - 1.0))
        mean = data.mean(axis=(1, 2, 3), keepdims=True, dtype=np.float64).astype(data.dtype)
        return np.clip(mean + factor * (data - mean), 0, 1)
    if kind is OpKind.SOLARIZE:
        threshold = dtype(level_to_physical(kind, 0, level))
        return np.where(data >= threshold, dtype(1) - data, data)
    if kind is OpKind.POSTERIZE:
        bits = int(level_to_physical(kind, 0, level))
        q = np.floor(data * 255 + 0.5).astype(np.uint8)
        mask = np.uint8((0xFF << (8 - bits)) & 0xFF)
        return ((q & mask) / dtype(255)).astype(data.dtype)
    if kind is OpKind.CUTOUT:
        side = int(level_to_physical(kind, 0, level, (h, w)))
        out = data.copy()
        cx, cy = op.levels[1], op.levels[2]
        y0 = max(cy - side // 2, 0)
        x0 = max(cx - side // 2, 0)
        y1 = min(cy - side // 2 + side, h)
        x1 = min(cx - side // 2 + side, w)
        out[:, :, y0:y1, x0:x1] = 0
        return out
    raise AugmentError(f"cannot apply {kind!r}")  # pragma: no cover


def apply_pipeline(p: Pipeline, batch: ImageBatch) -> ImageBatch:
    """Compose the pipeline's operations, first op innermost."""
    data = batch.data
    for op in p.ops:
        data = _apply_data(op, data)
    return ImageBatch(data, batch.labels)
