"""Weather degradation simulators and replayable degradation stacks.

Each simulator is a pure function of ``(image, params, seed)``. A
:class:`DegradationStack` records the ordered entries used to synthesize a
sample so the degraded image can be replayed bit-exactly from its clean
source, and :func:`trace_layers` exposes the intermediate states that the
oracle-guided restoration tools invert.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from enum import IntEnum
from typing import Union

import numpy as np
from scipy import fft as sfft
from scipy import ndimage

from .errors import ValidationError
from .imaging import ImageGrid
from .seeding import SeedSpec

GAMMA = 2.2
FLARE_SIGMA = 5.0
FLARE_PEAK = 0.6
MAX_STACK = 4
# pixels of image area per streak / flake at density 1
STREAK_AREA = 150.0
FLAKE_AREA = 100.0


class DegradationKind(IntEnum):
    night = 0
    fog = 1
    rain = 2
    snow = 3
    noise = 4
    blur = 5
    jpeg_proxy = 6


def _check_range(name, value, lo, hi):
    if not (isinstance(value, (int, float, np.floating, np.integer)) and math.isfinite(value)):
        raise ValidationError(f"{name} must be a finite number, got {value!r}")
    if not lo <= value <= hi:
        raise ValidationError(f"{name}={value} outside [{lo}, {hi}]")


def _check_int(name, value, allowed):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value not in allowed:
        raise ValidationError(f"{name}={value!r} not in {sorted(allowed)}")


@dataclass(frozen=True)
class NightParams:
    k: float = 0.2
    shot_noise_gain: float = 0.02
    read_noise_sigma: float = 0.01
    flare_count: int = 0

    def check(self):
        _check_range("k", self.k, 0.02, 0.5)
        _check_range("shot_noise_gain", self.shot_noise_gain, 0.0, 0.1)
        _check_range("read_noise_sigma", self.read_noise_sigma, 0.0, 0.05)
        _check_int("flare_count", self.flare_count, range(0, 4))


@dataclass(frozen=True)
class FogParams:
    beta: float = 1.0
    airlight: float = 0.85
    delta_airlight: float = 0.0
    gamma: float = 2.0
    noise_sigma: float = 0.01
    jpeg: bool = False
    jpeg_block: int = 8
    jpeg_step: float = 0.05
    depth_mode: str = "ramp"

    def check(self):
        _check_range("beta", self.beta, 0.3, 1.5)
        _check_range("airlight", self.airlight, 0.7, 1.0)
        _check_range("delta_airlight", self.delta_airlight, -0.025, 0.025)
        _check_range("gamma", self.gamma, 1.5, 3.0)
        _check_range("noise_sigma", self.noise_sigma, 0.0, 0.1)
        _check_int("jpeg_block", self.jpeg_block, {4, 8})
        _check_range("jpeg_step", self.jpeg_step, 0.02, 0.25)
        if self.depth_mode not in ("ramp", "radial"):
            raise ValidationError(f"depth_mode={self.depth_mode!r} not in ('ramp', 'radial')")


@dataclass(frozen=True)
class RainParams:
    streak_density: float = 0.5
    streak_angle: float = 0.0
    drop_count: int = 0
    drop_radius: float = 2.0

    def check(self):
        _check_range("streak_density", self.streak_density, 0.0, 1.0)
        _check_range("streak_angle", self.streak_angle, -30.0, 30.0)
        _check_int("drop_count", self.drop_count, range(0, 41))
        _check_range("drop_radius", self.drop_radius, 1.0, 6.0)


@dataclass(frozen=True)
class SnowParams:
    flake_density: float = 0.5
    flake_radius: float = 1.5

    def check(self):
        _check_range("flake_density", self.flake_density, 0.0, 1.0)
        _check_range("flake_radius", self.flake_radius, 1.0, 4.0)


@dataclass(frozen=True)
class NoiseParams:
    sigma: float = 0.05

    def check(self):
        _check_range("sigma", self.sigma, 0.0, 0.1)


@dataclass(frozen=True)
class BlurParams:
    kernel_radius: int = 1

    def check(self):
        _check_int("kernel_radius", self.kernel_radius, range(1, 5))


@dataclass(frozen=True)
class JpegParams:
    block: int = 8
    quant_step: float = 0.1

    def check(self):
        _check_int("block", self.block, {4, 8})
        _check_range("quant_step", self.quant_step, 0.02, 0.25)


DegradationParams = Union[
    NightParams, FogParams, RainParams, SnowParams, NoiseParams, BlurParams, JpegParams
]

PARAMS_FOR_KIND = {
    DegradationKind.night: NightParams,
    DegradationKind.fog: FogParams,
    DegradationKind.rain: RainParams,
    DegradationKind.snow: SnowParams,
    DegradationKind.noise: NoiseParams,
    DegradationKind.blur: BlurParams,
    DegradationKind.jpeg_proxy: JpegParams,
}


@dataclass(frozen=True)
class DepthMap:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValidationError("depth map must be 2-D")
        if not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0:
            raise ValidationError("depth values must lie in [0, 1]")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape


def synth_depth(height: int, width: int, mode: str, seed: SeedSpec, center=None) -> DepthMap:
    """Synthetic scene depth: a top-to-bottom ramp or distance from a centre."""
    if height < 1 or width < 1:
        raise ValidationError("depth map dimensions must be positive")
    if mode == "ramp":
        rows = np.arange(height) / (height - 1) if height > 1 else np.zeros(1)
        return DepthMap(np.repeat(rows[:, None], width, axis=1))
    if mode != "radial":
        raise ValidationError(f"unknown depth mode {mode!r}")
    if center is None:
        u = seed.generator().random(2)
        center = (u[0] * (height - 1), u[1] * (width - 1))
    cy, cx = center
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    dist = np.hypot(yy - cy, xx - cx)
    corners = [np.hypot(y - cy, x - cx) for y in (0, height - 1) for x in (0, width - 1)]
    far = max(corners)
    return DepthMap(dist / far if far > 0 else np.zeros_like(dist))


# -- simulators -------------------------------------------------------------


def _checked(p, validate):
    if validate:
        p.check()
    return p


def box_blur(x: np.ndarray, radius: int) -> np.ndarray:
    """Normalized (2r+1)^2 box filter over the two spatial axes of (..., H, W, C)."""
    size = [1] * x.ndim
    size[-3] = size[-2] = 2 * radius + 1
    return ndimage.uniform_filter(x, size=size, mode="reflect")


def _night(x: np.ndarray, p: NightParams, seed: SeedSpec) -> np.ndarray:
    g = seed.generator()
    z = g.standard_normal((2,) + x.shape)
    lin = np.power(x, GAMMA)
    s = p.k * lin
    v = s + p.shot_noise_gain * np.sqrt(np.maximum(s, 0.0)) * z[0] + p.read_noise_sigma * z[1]
    y = np.power(np.clip(v, 0.0, 1.0), 1.0 / GAMMA)
    if p.flare_count:
        h, w = x.shape[:2]
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        centers = g.random((p.flare_count, 2)) * [h - 1, w - 1]
        flare = np.zeros((h, w))
        for cy, cx in centers:
            flare += FLARE_PEAK * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * FLARE_SIGMA**2))
        y = y + flare[:, :, None]
    return y


def apply_night(img: ImageGrid, p: NightParams, seed: SeedSpec, *, validate: bool = True) -> ImageGrid:
    """Low-light synthesis: linearize, attenuate, shot+read noise, re-gamma, flares."""
    _checked(p, validate)
    return ImageGrid.from_array(_night(img.as_float64(), p, seed))


def jpeg_proxy_array(x: np.ndarray, block: int, quant_step: float) -> np.ndarray:
    h, w, c = x.shape
    ph, pw = -h % block, -w % block
    xp = np.pad(x, ((0, ph), (0, pw), (0, 0)), mode="edge")
    H, W = xp.shape[:2]
    tiles = xp.reshape(H // block, block, W // block, block, c)
    coef = sfft.dctn(tiles, type=2, axes=(1, 3), norm="ortho")
    coef = np.round(coef / quant_step) * quant_step
    rec = sfft.idctn(coef, type=2, axes=(1, 3), norm="ortho")
    return rec.reshape(H, W, c)[:h, :w]


def _fog(x: np.ndarray, depth: DepthMap, p: FogParams, seed: SeedSpec) -> np.ndarray:
    if depth.shape != x.shape[:2]:
        raise ValidationError(f"depth shape {depth.shape} does not match image {x.shape[:2]}")
    noise = p.noise_sigma * seed.generator().standard_normal(x.shape)
    t = np.exp(-p.beta * depth.values)[:, :, None]
    a = p.airlight + p.delta_airlight
    y = np.clip((np.power(x, p.gamma) + noise) * t + a * (1.0 - t), 0.0, 1.0)
    if p.jpeg:
        y = jpeg_proxy_array(y, p.jpeg_block, p.jpeg_step)
    return y


def apply_fog(img: ImageGrid, depth: DepthMap, p: FogParams, seed: SeedSpec, *, validate: bool = True) -> ImageGrid:
    """Haze formation with transmission ``exp(-beta * depth)``."""
    _checked(p, validate)
    return ImageGrid.from_array(_fog(img.as_float64(), depth, p, seed))


def _rain_streaks(x: np.ndarray, p: RainParams, seed: SeedSpec) -> np.ndarray:
    h, w = x.shape[:2]
    count = int(round(p.streak_density * h * w / STREAK_AREA))
    if count == 0:
        return x
    g = seed.generator()
    layer = np.zeros((h, w))
    lo, hi = max(3.0, 0.2 * h), max(4.0, 0.5 * h)
    for _ in range(count):
        cy, cx = g.random(2) * [h - 1, w - 1]
        length = g.uniform(lo, hi)
        theta = math.radians(p.streak_angle + g.uniform(-3.0, 3.0))
        bright = g.uniform(0.15, 0.35)
        t = np.arange(-length / 2.0, length / 2.0 + 1e-9, 0.5)
        ys = np.rint(cy + t * math.cos(theta)).astype(int)
        xs = np.rint(cx + t * math.sin(theta)).astype(int)
        ok = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
        pix = np.unique(ys[ok] * w + xs[ok])
        layer.flat[pix] += bright
    return x + layer[:, :, None]


def _rain_drops(x: np.ndarray, p: RainParams, seed: SeedSpec) -> np.ndarray:
    if p.drop_count == 0:
        return x
    h, w = x.shape[:2]
    g = seed.generator()
    blurred = box_blur(x, int(math.ceil(p.drop_radius)))
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    mask = np.zeros((h, w), dtype=bool)
    for cy, cx in g.random((p.drop_count, 2)) * [h - 1, w - 1]:
        mask |= (yy - cy) ** 2 + (xx - cx) ** 2 <= p.drop_radius**2
    return np.where(mask[:, :, None], blurred + 0.05, x)


def apply_rain(img: ImageGrid, p: RainParams, seed: SeedSpec, *, validate: bool = True) -> ImageGrid:
    """Bright oriented streaks, then raindrop disks (local blur, +0.05)."""
    _checked(p, validate)
    streaked = ImageGrid.from_array(_rain_streaks(img.as_float64(), p, seed.child("streaks")))
    return ImageGrid.from_array(_rain_drops(streaked.as_float64(), p, seed.child("drops")))


def _snow(x: np.ndarray, p: SnowParams, seed: SeedSpec) -> np.ndarray:
    h, w = x.shape[:2]
    count = int(round(p.flake_density * h * w / FLAKE_AREA))
    if count == 0:
        return x
    g = seed.generator()
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    out = x.copy()
    for cy, cx, op in g.random((count, 3)):
        cy, cx = cy * (h - 1), cx * (w - 1)
        opacity = 0.5 + 0.4 * op
        dist = np.hypot(yy - cy, xx - cx)
        alpha = opacity * np.clip(p.flake_radius + 0.5 - dist, 0.0, 1.0)
        out = out * (1.0 - alpha[:, :, None]) + alpha[:, :, None]
    return out


def apply_snow(img: ImageGrid, p: SnowParams, seed: SeedSpec, *, validate: bool = True) -> ImageGrid:
    _checked(p, validate)
    return ImageGrid.from_array(_snow(img.as_float64(), p, seed))


def apply_noise(img: ImageGrid, p: NoiseParams, seed: SeedSpec, *, validate: bool = True) -> ImageGrid:
    _checked(p, validate)
    x = img.as_float64()
    return ImageGrid.from_array(x + p.sigma * seed.generator().standard_normal(x.shape))


def apply_blur(img: ImageGrid, p: BlurParams, seed: SeedSpec = None, *, validate: bool = True) -> ImageGrid:
    _checked(p, validate)
    return ImageGrid.from_array(box_blur(img.as_float64(), p.kernel_radius))


def apply_jpeg_proxy(img: ImageGrid, p: JpegParams, seed: SeedSpec = None, *, validate: bool = True) -> ImageGrid:
    """Blockwise DCT-II with uniform coefficient quantization (no entropy coding)."""
    _checked(p, validate)
    return ImageGrid.from_array(jpeg_proxy_array(img.as_float64(), p.block, p.quant_step))


# -- stacks -----------------------------------------------------------------


@dataclass(frozen=True)
class DegradationEntry:
    kind: DegradationKind
    params: DegradationParams
    seed: SeedSpec

    def __post_init__(self):
        kind = DegradationKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if not isinstance(self.params, PARAMS_FOR_KIND[kind]):
            raise ValidationError(f"{kind.name} entry needs {PARAMS_FOR_KIND[kind].__name__}")
        self.params.check()

    def to_dict(self) -> dict:
        return {"kind": self.kind.name, "params": asdict(self.params), "seed": self.seed.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationEntry":
        try:
            kind = DegradationKind[d["kind"]]
        except KeyError:
            raise ValidationError(f"unknown degradation kind {d.get('kind')!r}") from None
        ptype = PARAMS_FOR_KIND[kind]
        names = {f.name for f in fields(ptype)}
        extra = set(d["params"]) - names
        if extra:
            raise ValidationError(f"unknown {kind.name} parameters: {sorted(extra)}")
        return cls(kind, ptype(**d["params"]), SeedSpec.from_dict(d["seed"]))


@dataclass(frozen=True)
class DegradationStack:
    """Ordered degradations applied to one clean image.

    Kinds are unique within a stack so each restoration task maps to at most
    one recorded layer.
    """

    entries: tuple
    source_id: str = ""

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        if not 1 <= len(entries) <= MAX_STACK:
            raise ValidationError(f"stack length must be in [1, {MAX_STACK}], got {len(entries)}")
        kinds = [e.kind for e in entries]
        if len(set(kinds)) != len(kinds):
            raise ValidationError(f"duplicate degradation kinds in stack: {[k.name for k in kinds]}")

    @property
    def kinds(self) -> tuple:
        return tuple(e.kind for e in self.entries)

    def to_dict(self) -> dict:
        return {"source_id": self.source_id, "entries": [e.to_dict() for e in self.entries]}

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationStack":
        return cls(tuple(DegradationEntry.from_dict(e) for e in d["entries"]), d.get("source_id", ""))


def fog_depth(shape, p: FogParams, seed: SeedSpec) -> DepthMap:
    return synth_depth(shape[0], shape[1], p.depth_mode, seed.child("depth"))


def apply_entry(img: ImageGrid, entry: DegradationEntry) -> ImageGrid:
    p, s = entry.params, entry.seed
    kind = entry.kind
    if kind is DegradationKind.night:
        return apply_night(img, p, s)
    if kind is DegradationKind.fog:
        return apply_fog(img, fog_depth(img.shape, p, s), p, s)
    if kind is DegradationKind.rain:
        return apply_rain(img, p, s)
    if kind is DegradationKind.snow:
        return apply_snow(img, p, s)
    if kind is DegradationKind.noise:
        return apply_noise(img, p, s)
    if kind is DegradationKind.blur:
        return apply_blur(img, p, s)
    return apply_jpeg_proxy(img, p, s)


def compose(img: ImageGrid, stack: DegradationStack) -> ImageGrid:
    for entry in stack.entries:
        img = apply_entry(img, entry)
    return img


# -- layer trace for oracle-guided restoration ------------------------------


@dataclass(frozen=True)
class Layer:
    """One invertible step of a stack.

    ``before``/``after`` are the float32 states around the step; ``gain``
    is the local error gain of its physical inverse (1/t for haze, the
    attenuation gain for low light, >1 for deconvolution, 1 for additive
    overlays), broadcastable to the image shape.
    """

    tag: str
    before: np.ndarray
    after: np.ndarray
    gain: Union[float, np.ndarray] = field(default=1.0)


def trace_layers(clean: ImageGrid, stack: DegradationStack) -> list:
    layers = []
    img = clean
    for entry in stack.entries:
        p, s = entry.params, entry.seed
        kind = entry.kind
        if kind is DegradationKind.rain:
            mid = ImageGrid.from_array(_rain_streaks(img.as_float64(), p, s.child("streaks")))
            out = apply_entry(img, entry)
            layers.append(Layer("rain_streak", img.data, mid.data, 1.0))
            layers.append(Layer("rain_drop", mid.data, out.data, 1.0))
            img = out
            continue
        out = apply_entry(img, entry)
        if kind is DegradationKind.fog:
            t = np.exp(-p.beta * fog_depth(img.shape, p, s).values)
            gain = (1.0 / t)[:, :, None]
        elif kind is DegradationKind.night:
            gain = p.k ** (-1.0 / GAMMA)
        elif kind is DegradationKind.blur:
            gain = 1.0 + 0.5 * p.kernel_radius
        else:
            gain = 1.0
        layers.append(Layer(kind.name if kind is not DegradationKind.jpeg_proxy else "jpeg", img.data, out.data, gain))
        img = out
    return layers
