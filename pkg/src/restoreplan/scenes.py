"""Procedural clean scenes and scenario degradation recipes."""

from __future__ import annotations

import numpy as np

from .degrade import (
    BlurParams,
    DegradationEntry,
    DegradationKind,
    DegradationStack,
    FogParams,
    JpegParams,
    NightParams,
    NoiseParams,
    RainParams,
    SnowParams,
)
from .imaging import ImageGrid
from .seeding import SeedSpec

SCENARIOS = ("night", "fog", "rain", "snow")

# scenario -> (main kind, optional extra kinds)
RECIPES = {
    "night": (DegradationKind.night, (DegradationKind.noise, DegradationKind.blur)),
    "fog": (DegradationKind.fog, (DegradationKind.noise, DegradationKind.jpeg_proxy)),
    "rain": (DegradationKind.rain, (DegradationKind.blur, DegradationKind.noise)),
    "snow": (DegradationKind.snow, (DegradationKind.noise, DegradationKind.blur)),
}


def procedural_scene(height: int, width: int, seed: SeedSpec) -> ImageGrid:
    """Gradient background with a few flat shapes and a faint texture."""
    g = seed.generator()
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    yy /= max(height - 1, 1)
    xx /= max(width - 1, 1)
    c0, c1 = g.uniform(0.2, 0.85, size=(2, 3))
    ang = g.uniform(0, 2 * np.pi)
    ramp = np.clip(0.5 + 0.7 * ((xx - 0.5) * np.cos(ang) + (yy - 0.5) * np.sin(ang)), 0, 1)
    img = c0 + (c1 - c0) * ramp[:, :, None]
    for _ in range(int(g.integers(2, 5))):
        color = g.uniform(0.1, 0.9, size=3)
        cy, cx = g.uniform(0.1, 0.9, size=2)
        ry, rx = g.uniform(0.08, 0.3, size=2)
        if g.random() < 0.5:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        else:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        img = np.where(mask[:, :, None], color, img)
    freq = g.uniform(2, 6)
    phase = g.uniform(0, 2 * np.pi)
    img = img + 0.03 * np.sin(2 * np.pi * freq * (xx + 0.5 * yy) + phase)[:, :, None]
    return ImageGrid.from_array(np.clip(img, 0.08, 0.92))


def _params(kind: DegradationKind, g: np.random.Generator):
    if kind is DegradationKind.night:
        return NightParams(k=float(g.uniform(0.05, 0.4)), shot_noise_gain=float(g.uniform(0.0, 0.04)),
                           read_noise_sigma=float(g.uniform(0.0, 0.015)), flare_count=int(g.random() < 0.3))
    if kind is DegradationKind.fog:
        return FogParams(beta=float(g.uniform(0.3, 1.5)), airlight=float(g.uniform(0.7, 1.0)),
                         delta_airlight=float(g.uniform(-0.025, 0.025)), gamma=float(g.uniform(1.5, 3.0)),
                         depth_mode="ramp" if g.random() < 0.5 else "radial")
    if kind is DegradationKind.rain:
        return RainParams(streak_density=float(g.uniform(0.3, 1.0)), streak_angle=float(g.uniform(-30, 30)),
                          drop_count=int(g.integers(0, 6)), drop_radius=float(g.uniform(1.0, 3.0)))
    if kind is DegradationKind.snow:
        return SnowParams(flake_density=float(g.uniform(0.3, 1.0)), flake_radius=float(g.uniform(1.0, 2.5)))
    if kind is DegradationKind.noise:
        return NoiseParams(sigma=float(g.uniform(0.02, 0.08)))
    if kind is DegradationKind.blur:
        return BlurParams(kernel_radius=int(g.integers(1, 3)))
    return JpegParams(block=int(g.choice([4, 8])), quant_step=float(g.uniform(0.05, 0.2)))


def scenario_stack(scenario: str, seed: SeedSpec, source_id: str = "") -> DegradationStack:
    """Main degradation first, then 0-2 of the scenario's extras in random order."""
    main, extras = RECIPES[scenario]
    g = seed.generator()
    n_extra = int(g.integers(0, len(extras) + 1))
    chosen = list(g.permutation(len(extras))[:n_extra])
    kinds = [main] + [extras[i] for i in chosen]
    entries = [DegradationEntry(k, _params(k, g), seed.child("entry", i)) for i, k in enumerate(kinds)]
    return DegradationStack(tuple(entries), source_id)


def noise_fog_suite(n: int = 20, seed: SeedSpec = SeedSpec(7), size: int = 24) -> list:
    """Fixed order-sensitivity suite: ``(clean, stack)`` pairs with noise applied, then fog."""
    out = []
    for i in range(n):
        clean = procedural_scene(size, size, seed.child("clean", i))
        stack = DegradationStack((
            DegradationEntry(DegradationKind.noise, NoiseParams(0.05), seed.child("noise", i)),
            DegradationEntry(DegradationKind.fog, FogParams(beta=1.0, gamma=1.5), seed.child("fog", i)),
        ), f"nf{i:03d}")
        out.append((clean, stack))
    return out
