"""Desk-scale experiment drivers: policy ranking comparison and MRRHF mode ablation.

Both drivers synthesize their own data under a work directory, train from
scratch and return plain result objects; the acceptance suite and the CLI
call them with small presets that finish in a few minutes on one core.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

from .evalharness import (
    EvalReport,
    SpaceCache,
    Strategy,
    default_space,
    load_samples,
    run_strategy,
    synth_dataset,
)
from .policy import ActionVocab, PolicyModel
from .train import (
    MODES,
    MrrhfSample,
    SampleContext,
    SftExample,
    TrainConfig,
    final_reward,
    mean_diversity,
    train_mrrhf,
    train_sft,
)
from .tools import default_registry

EVEN_MIX = {"night": 0.25, "fog": 0.25, "rain": 0.25, "snow": 0.25}


@dataclass(frozen=True)
class DeskPreset:
    """Training settings small enough for a laptop core."""

    sft_epochs: int = 50
    sft_lr: float = 0.03
    sft_batch: int = 4
    mrrhf_epochs: int = 3
    mrrhf_lr: float = 0.003

    def sft_config(self, seed: int) -> TrainConfig:
        return TrainConfig(learning_rate=self.sft_lr, epochs=self.sft_epochs, sft_batch=self.sft_batch, seed=seed)

    def mrrhf_config(self, seed: int) -> TrainConfig:
        return TrainConfig(learning_rate=self.mrrhf_lr, epochs=self.mrrhf_epochs, seed=seed)


def sft_examples(samples):
    return [SftExample(s.features, s.record.optimal_plan, s.sample_id) for s in samples]


def mrrhf_samples(samples, reg, cal):
    return [MrrhfSample(s.sample_id, s.features, SampleContext(s.degraded, s.hint, reg, cal)) for s in samples]


@dataclass
class RankingResult:
    report: EvalReport
    percentiles: dict = field(default_factory=dict)

    def ordered(self) -> bool:
        """oracle <= mrrhf < sft < random on mean percentile (lower is better)."""
        p = self.percentiles
        return (p["oracle"] <= p["policy_mrrhf"] < p["policy_sft"] < p["random_order_and_model"])


def ranking_experiment(work_dir: str | os.PathLike, *, n_train: int = 256, n_test: int = 256, seed: int = 1,
                       mix: Optional[Mapping[str, float]] = None, preset: DeskPreset = DeskPreset(),
                       threads: int = 1) -> RankingResult:
    """Train SFT then MRRHF on a fresh suite and rank them against oracle and random plans."""
    reg = default_registry()
    mix = dict(mix or EVEN_MIX)
    work = Path(work_dir)
    train_man, cal = synth_dataset(n_train, mix, seed, work / "train", reg, threads=threads)
    cache = SpaceCache(default_space(reg), reg, cal)
    test_man, _ = synth_dataset(n_test, mix, seed + 1, work / "test", reg, cal=cal, threads=threads, cache=cache)
    train = load_samples(train_man)
    test = load_samples(test_man)

    vocab = ActionVocab.from_registry(reg)
    sft = train_sft(sft_examples(train), preset.sft_config(seed), PolicyModel(vocab))
    mrrhf, _ = train_mrrhf(sft, mrrhf_samples(train, reg, cal), preset.mrrhf_config(seed), "hybrid")

    models = {"sft": sft, "mrrhf": mrrhf}
    report = EvalReport([])
    for strat in (Strategy.oracle, Strategy.policy_mrrhf, Strategy.policy_sft, Strategy.predefined,
                  Strategy.random_order_and_model):
        report.extend(run_strategy(strat, test, models, reg, cal, seed, cache=cache, threads=threads))
    pct = {s: report.mean_percentile(s) for s in report.strategies()}
    return RankingResult(report, pct)


@dataclass(frozen=True)
class ModeOutcome:
    seed: int
    mode: str
    final_reward: float
    diversity: float


@dataclass
class AblationResult:
    outcomes: list

    def table(self) -> dict:
        """``{seed: {mode: ModeOutcome}}``."""
        out: dict = {}
        for o in self.outcomes:
            out.setdefault(o.seed, {})[o.mode] = o
        return out

    def reward_order_wins(self) -> int:
        """Seeds where final reward orders hybrid > offline_only > online_only."""
        return sum(
            t["hybrid"].final_reward > t["offline_only"].final_reward > t["online_only"].final_reward
            for t in self.table().values()
        )

    def entropy_diversity_wins(self) -> int:
        """Seeds where diversity with the entropy term exceeds diversity without it."""
        return sum(t["hybrid"].diversity > t["no_entropy"].diversity for t in self.table().values())

    def format(self) -> str:
        modes = list(dict.fromkeys(o.mode for o in self.outcomes))
        lines = ["seed  " + "  ".join(f"{m + ' reward/div':>26s}" for m in modes)]
        for seed, row in self.table().items():
            cells = [f"{row[m].final_reward:17.4f}/{row[m].diversity:8.3f}" for m in modes]
            lines.append(f"{seed:4d}  " + "  ".join(cells))
        return "\n".join(lines)


def mode_ablation(work_dir: str | os.PathLike, *, seeds=tuple(range(8)), n_train: int = 48,
                  mix: Optional[Mapping[str, float]] = None, preset: DeskPreset = DeskPreset(),
                  modes=MODES, threads: int = 1) -> AblationResult:
    """For each seed: synthesize, SFT, then MRRHF under every candidate-generation mode."""
    reg = default_registry()
    mix = dict(mix or EVEN_MIX)
    vocab = ActionVocab.from_registry(reg)
    outcomes = []
    for seed in seeds:
        man, cal = synth_dataset(n_train, mix, 100 + seed, Path(work_dir) / f"seed{seed}", reg, threads=threads)
        samples = load_samples(man)
        sft = train_sft(sft_examples(samples), preset.sft_config(seed), PolicyModel(vocab))
        data = mrrhf_samples(samples, reg, cal)
        for mode in modes:
            _, metrics = train_mrrhf(sft, data, preset.mrrhf_config(seed), mode)
            outcomes.append(ModeOutcome(seed, mode, final_reward(metrics, len(data)), mean_diversity(metrics)))
    return AblationResult(outcomes)


__all__ = [
    "DeskPreset", "EVEN_MIX", "sft_examples", "mrrhf_samples", "RankingResult", "ranking_experiment",
    "ModeOutcome", "AblationResult", "mode_ablation",
]
