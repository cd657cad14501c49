"""Quality scorers and the unified z-score reward.

Each scorer maps an image to a real where larger is better. Scores are
standardized per scorer against a calibration batch and summed::

    S = sum_i (s_i - mu_i) / sigma_i        (z_i = 0 when sigma_i == 0)
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import features as F
from .errors import CalibrationError, ValidationError
from .imaging import ImageGrid


# scorers take (batch, luminance) so one luminance pass serves all of them


def _sharpness(batch, y):
    return F.laplacian_energy(batch, y)


def _contrast(batch, y):
    return F.luminance_std(batch, y)


def _noise_inverse(batch, y):
    return -F.flat_region_hf_energy(batch, y)


def _dark_channel_inverse(batch, y):
    return -F.dark_channel_mean(batch)


SCORERS = {
    "sharpness": _sharpness,
    "contrast": _contrast,
    "noise_inverse": _noise_inverse,
    "dark_channel_inverse": _dark_channel_inverse,
}
DEFAULT_SCORERS = tuple(SCORERS)


def raw_score_batch(batch: np.ndarray, scorer_ids: Sequence[str] = DEFAULT_SCORERS) -> np.ndarray:
    """(N, k) raw scores for an (N, H, W, C) batch."""
    batch = F.as_batch(batch)
    y = F.luminance(batch)
    return np.stack([SCORERS[s](batch, y) for s in scorer_ids], axis=1)


def score_raw(img: ImageGrid, scorer_id: str) -> float:
    if scorer_id not in SCORERS:
        raise ValidationError(f"unknown scorer {scorer_id!r}; expected one of {list(SCORERS)}")
    batch = F.as_batch(img)
    return float(SCORERS[scorer_id](batch, F.luminance(batch))[0])


@dataclass(frozen=True)
class Calibration:
    scorer_ids: tuple
    mu: tuple
    sigma: tuple
    batch_size: int

    def __post_init__(self):
        if not (len(self.scorer_ids) == len(self.mu) == len(self.sigma)):
            raise ValidationError("calibration vectors differ in length")
        if any(s < 0 for s in self.sigma):
            raise ValidationError("sigma must be non-negative")
        if self.batch_size < 2:
            raise ValidationError("calibration batch size must be >= 2")

    @property
    def k(self) -> int:
        return len(self.scorer_ids)

    def zscores(self, raw: np.ndarray) -> np.ndarray:
        mu = np.asarray(self.mu)
        sigma = np.asarray(self.sigma)
        safe = np.where(sigma > 0, sigma, 1.0)
        return np.where(sigma > 0, (np.asarray(raw) - mu) / safe, 0.0)

    def to_dict(self) -> dict:
        return {
            "scorers": [
                {"id": i, "mu": float(m), "sigma": float(s)}
                for i, m, s in zip(self.scorer_ids, self.mu, self.sigma)
            ],
            "batch_size": self.batch_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Calibration":
        rows = d["scorers"]
        for r in rows:
            if r["id"] not in SCORERS:
                raise ValidationError(f"unknown scorer {r['id']!r}")
        return cls(
            tuple(r["id"] for r in rows),
            tuple(float(r["mu"]) for r in rows),
            tuple(float(r["sigma"]) for r in rows),
            int(d["batch_size"]),
        )

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Calibration":
        return cls.from_dict(json.loads(Path(path).read_text()))


def calibrate(batch, scorer_ids: Sequence[str] = DEFAULT_SCORERS) -> Calibration:
    """Population mean and std of each scorer column over a batch of raw-score vectors."""
    arr = np.asarray(batch, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[0] < 2:
        raise CalibrationError(f"need at least 2 raw-score vectors, got {arr.shape[0]}")
    if arr.shape[1] != len(scorer_ids):
        raise CalibrationError(f"{arr.shape[1]} score columns for {len(scorer_ids)} scorers")
    mu = arr.mean(axis=0)
    # a constant column can still get a rounding-level std; pin it to exactly 0
    sigma = np.where(np.ptp(arr, axis=0) == 0, 0.0, arr.std(axis=0))
    return Calibration(tuple(scorer_ids), tuple(float(m) for m in mu),
                       tuple(float(s) for s in sigma), int(arr.shape[0]))


def calibrate_images(images, scorer_ids: Sequence[str] = DEFAULT_SCORERS) -> Calibration:
    batch = np.stack([im.as_float64() for im in images])
    return calibrate(raw_score_batch(batch, scorer_ids), scorer_ids)


@dataclass(frozen=True)
class UnifiedReward:
    raw: tuple
    z: tuple
    total: float

    @property
    def k(self) -> int:
        return len(self.z)


def unified_from_raw(raw: np.ndarray, cal: Calibration) -> UnifiedReward:
    z = cal.zscores(raw)
    return UnifiedReward(tuple(float(v) for v in raw), tuple(float(v) for v in z), float(np.sum(z)))


def unified_score(img: ImageGrid, cal: Calibration) -> UnifiedReward:
    raw = raw_score_batch(F.as_batch(img), cal.scorer_ids)[0]
    return unified_from_raw(raw, cal)


def unified_total_batch(batch: np.ndarray, cal: Calibration) -> np.ndarray:
    """S for every image of an (N, H, W, C) batch."""
    z = cal.zscores(raw_score_batch(batch, cal.scorer_ids))
    return z.sum(axis=1)


def reported_reward(candidates: Sequence[UnifiedReward]) -> float:
    """Mean of tanh(S_j / k): a monotone squashing of unified rewards into (-1, 1)."""
    if not candidates:
        raise ValidationError("reported_reward needs at least one candidate")
    return float(np.mean([math.tanh(c.total / c.k) for c in candidates]))


def reported_reward_from_totals(totals: Sequence[float], k: int) -> float:
    if len(totals) == 0:
        raise ValidationError("reported_reward needs at least one candidate")
    return float(np.mean(np.tanh(np.asarray(totals, dtype=np.float64) / k)))
