"""Synthetic datasets, decision strategies and percentile-ranking reports."""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .degrade import DegradationStack, compose
from .errors import ConfigError, ValidationError
from .features import extract_features
from .imaging import ImageGrid, read_image, write_image
from .policy import PolicyModel, greedy_decode
from .reward import Calibration, calibrate_images
from .scenes import SCENARIOS, procedural_scene, scenario_stack
from .search import DecisionSpace, SpaceEvaluation, evaluate_space, rank_index
from .seeding import SeedSpec, root_seed
from .tools import Plan, Registry, StackHint, execute_plan, inverse_plan

MANIFEST_NAME = "manifest.jsonl"
CALIBRATION_NAME = "calibration.json"
REPORT_HEADER = ("strategy", "sample_id", "plan", "score", "percentile")
SUMMARY_HEADER = ("strategy", "n", "mean_score", "mean_percentile")


def parallel_map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """Ordered map; results never depend on ``threads``."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


# -- manifests ----------------------------------------------------------------


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    scenario: str
    clean_path: str
    degraded_path: str
    degradation_stack: DegradationStack
    optimal_plan: Plan
    optimal_S: float

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "scenario": self.scenario,
            "clean_path": self.clean_path,
            "degraded_path": self.degraded_path,
            "degradation_stack": self.degradation_stack.to_dict(),
            "optimal_plan": self.optimal_plan.to_list(),
            "optimal_S": self.optimal_S,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SampleRecord":
        return cls(d["sample_id"], d["scenario"], d["clean_path"], d["degraded_path"],
                   DegradationStack.from_dict(d["degradation_stack"]), Plan.from_list(d["optimal_plan"]),
                   float(d["optimal_S"]))


@dataclass
class DatasetManifest:
    records: list
    root: Path = Path(".")

    def __len__(self):
        return len(self.records)

    def dumps(self) -> str:
        return "".join(json.dumps(r.to_dict()) + "\n" for r in self.records)

    def write(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str, root: Path = Path(".")) -> "DatasetManifest":
        return cls([SampleRecord.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()], root)

    @classmethod
    def read(cls, path: str | os.PathLike) -> "DatasetManifest":
        path = Path(path)
        return cls.loads(path.read_text(), path.parent)


@dataclass
class LoadedSample:
    record: SampleRecord
    clean: ImageGrid
    degraded: ImageGrid
    hint: StackHint
    features: np.ndarray

    @property
    def sample_id(self) -> str:
        return self.record.sample_id


def load_sample(manifest: DatasetManifest, record: SampleRecord) -> LoadedSample:
    clean = read_image(manifest.root / record.clean_path)
    degraded = read_image(manifest.root / record.degraded_path)
    return LoadedSample(record, clean, degraded, StackHint.from_stack(clean, record.degradation_stack),
                        extract_features(degraded))


def load_samples(manifest: DatasetManifest, threads: int = 1) -> list:
    return parallel_map(lambda r: load_sample(manifest, r), manifest.records, threads)


def check_mix(mix: Mapping[str, float]) -> dict:
    """Validate scenario weights (known names, non-negative, summing to 1)."""
    out = {}
    for k, v in mix.items():
        if k not in SCENARIOS:
            raise ConfigError(f"mix: unknown scenario {k!r}; expected one of {list(SCENARIOS)}")
        v = float(v)
        if not np.isfinite(v) or v < 0:
            raise ConfigError(f"mix: weight for {k!r} must be non-negative, got {v}")
        out[k] = v
    total = sum(out.values())
    if abs(total - 1.0) > 1e-6:
        raise ConfigError(f"mix: weights must sum to 1, got {total}")
    return out


def _pick_scenario(mix: dict, seed: SeedSpec) -> str:
    u = seed.generator().random()
    acc = 0.0
    last = None
    for name in SCENARIOS:
        w = mix.get(name, 0.0)
        if w <= 0:
            continue
        acc += w
        last = name
        if u < acc:
            return name
    return last


def default_space(reg: Registry, max_len: int = 3) -> DecisionSpace:
    return DecisionSpace.from_registry(reg, max_len=max_len)


def calibration_from_pairs(degraded: Sequence[ImageGrid], hints: Sequence[StackHint], reg: Registry,
                           max_len: int = 3) -> Calibration:
    """Calibrate on degraded images plus their inverse-order restorations."""
    restored = [execute_plan(img, inverse_plan(h, reg, max_len), reg, h)[0] for img, h in zip(degraded, hints)]
    return calibrate_images(list(degraded) + restored)


def synth_dataset(n: int, mix: Mapping[str, float], seed: int, out_dir: str | os.PathLike, reg: Registry,
                  *, size: int = 24, max_len: int = 3, cal: Optional[Calibration] = None,
                  threads: int = 1, cache: Optional["SpaceCache"] = None) -> tuple:
    """Generate ``n`` degraded samples with oracle plans under ``out_dir``.

    Writes ``images/``, ``calibration.json`` and ``manifest.jsonl``; returns
    ``(manifest, calibration)``. Without ``cal`` the calibration is fitted
    on this dataset's degraded images and their inverse-order restorations.
    A ``cache`` built on the same calibration and space is filled with the
    space evaluations computed along the way.
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    mix = check_mix(mix)
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    root = root_seed(seed)
    space = default_space(reg, max_len)

    def make(i):
        sid = f"s{i:05d}"
        s = root.child("sample", i)
        scenario = _pick_scenario(mix, s.child("scenario"))
        clean = procedural_scene(size, size, s.child("clean"))
        stack = scenario_stack(scenario, s.child("stack"), sid)
        degraded = compose(clean, stack)
        write_image(clean, out / "images" / f"{sid}_clean.jir")
        write_image(degraded, out / "images" / f"{sid}_degraded.jir")
        return sid, scenario, clean, stack, degraded, StackHint.from_stack(clean, stack)

    made = parallel_map(make, range(n), threads)
    if cal is None:
        cal = calibration_from_pairs([m[4] for m in made], [m[5] for m in made], reg, max_len)
    cal.save(out / CALIBRATION_NAME)

    def solve(m):
        ev = evaluate_space(m[4], space, reg, cal, m[5])
        i = int(np.argmax(ev.scores))
        return ev.plans[i], float(ev.scores[i]), ev

    solved = parallel_map(solve, made, threads)
    if cache is not None and cache.cal == cal and cache.space == space:
        for m, (_, _, ev) in zip(made, solved):
            cache.put(m[0], ev)
    records = [SampleRecord(sid, scenario, f"images/{sid}_clean.jir", f"images/{sid}_degraded.jir", stack, plan, s)
               for (sid, scenario, _, stack, _, _), (plan, s, _) in zip(made, solved)]
    manifest = DatasetManifest(records, out)
    manifest.write(out / MANIFEST_NAME)
    return manifest, cal


# -- strategies ---------------------------------------------------------------


class Strategy(Enum):
    random_order_and_model = "random_order_and_model"
    random_order_predicted_model = "random_order_predicted_model"
    random_model_predicted_order = "random_model_predicted_order"
    predefined = "predefined"
    oracle = "oracle"
    policy_sft = "policy_sft"
    policy_mrrhf = "policy_mrrhf"


STRATEGY_ALIASES = {
    "random": Strategy.random_order_and_model,
    "random_order": Strategy.random_order_predicted_model,
    "random_model": Strategy.random_model_predicted_order,
    "sft": Strategy.policy_sft,
    "mrrhf": Strategy.policy_mrrhf,
}


def parse_strategy(name: str) -> Strategy:
    key = name.strip().lower().replace("-", "_")
    if key in STRATEGY_ALIASES:
        return STRATEGY_ALIASES[key]
    try:
        return Strategy(key)
    except ValueError:
        valid = [s.value for s in Strategy] + sorted(STRATEGY_ALIASES)
        raise ConfigError(f"unknown strategy {name!r}; valid: {', '.join(valid)}") from None


def load_predefined_table(path: Optional[str | os.PathLike] = None) -> dict:
    if path is None:
        text = resources.files("restoreplan").joinpath("data/predefined_plans.json").read_text()
    else:
        text = Path(path).read_text()
    table = json.loads(text)
    missing = [s for s in SCENARIOS if s not in table]
    if missing:
        raise ConfigError(f"predefined table lacks scenarios {missing}")
    return table


class SpaceCache:
    """Memoized per-sample evaluation of the whole decision space."""

    def __init__(self, space: DecisionSpace, reg: Registry, cal: Calibration):
        self.space, self.reg, self.cal = space, reg, cal
        self._evals: dict = {}

    def get(self, sample: LoadedSample) -> SpaceEvaluation:
        ev = self._evals.get(sample.sample_id)
        if ev is None:
            ev = evaluate_space(sample.degraded, self.space, self.reg, self.cal, sample.hint)
            self._evals[sample.sample_id] = ev
        return ev

    def put(self, sample_id: str, ev: SpaceEvaluation) -> None:
        self._evals[sample_id] = ev

    def prepare(self, samples: Sequence[LoadedSample], threads: int = 1) -> None:
        todo = [s for s in samples if s.sample_id not in self._evals]
        for s, ev in zip(todo, parallel_map(
                lambda s: evaluate_space(s.degraded, self.space, self.reg, self.cal, s.hint), todo, threads)):
            self._evals[s.sample_id] = ev


@dataclass(frozen=True)
class EvalRow:
    strategy: str
    sample_id: str
    plan: str
    score: float
    percentile: float


@dataclass(frozen=True)
class SummaryRow:
    strategy: str
    n: int
    mean_score: float
    mean_percentile: float


@dataclass
class EvalReport:
    rows: list

    def strategies(self) -> list:
        return list(dict.fromkeys(r.strategy for r in self.rows))

    def summary(self) -> list:
        out = []
        for name in self.strategies():
            rs = [r for r in self.rows if r.strategy == name]
            out.append(SummaryRow(name, len(rs), float(np.mean([r.score for r in rs])),
                                  float(np.mean([r.percentile for r in rs]))))
        return out

    def mean_percentile(self, strategy: Strategy | str) -> float:
        name = strategy.value if isinstance(strategy, Strategy) else strategy
        return float(np.mean([r.percentile for r in self.rows if r.strategy == name]))

    def mean_score(self, strategy: Strategy | str) -> float:
        name = strategy.value if isinstance(strategy, Strategy) else strategy
        return float(np.mean([r.score for r in self.rows if r.strategy == name]))

    def extend(self, other: "EvalReport") -> None:
        self.rows.extend(other.rows)


def _policy_for(strategy: Strategy, models: Mapping[str, PolicyModel]) -> PolicyModel:
    if strategy is Strategy.policy_sft:
        key = "sft"
    elif strategy is Strategy.policy_mrrhf:
        key = "mrrhf"
    else:
        # the predicted-order/model baselines use the best available policy
        key = "mrrhf" if models.get("mrrhf") is not None else "sft"
    model = models.get(key)
    if model is None:
        raise ConfigError(f"strategy {strategy.value} needs a {key} policy checkpoint")
    return model


def choose_plan(strategy: Strategy, sample: LoadedSample, ev: SpaceEvaluation, space: DecisionSpace,
                models: Mapping[str, PolicyModel], predefined: Mapping[str, str], reg: Registry,
                seed: SeedSpec, known_tasks: bool = False) -> Plan:
    g = seed.child(strategy.value, sample.sample_id).generator()
    if strategy is Strategy.oracle:
        return ev.plans[int(np.argmax(ev.scores))]
    if strategy is Strategy.random_order_and_model:
        pool = ev.plans
        if known_tasks:
            truth = set(t for t in sample.hint.tasks if t in space.tasks)
            k = min(len(truth), space.max_len)
            pool = [p for p in ev.plans if len(p) == k and set(p.tasks) <= truth] or ev.plans
        return pool[int(g.integers(len(pool)))]
    if strategy is Strategy.predefined:
        return Plan.from_text(predefined[sample.record.scenario], reg)
    base = greedy_decode(_policy_for(strategy, models), sample.features)
    if strategy is Strategy.random_order_predicted_model:
        perm = g.permutation(len(base)) if len(base) else []
        return Plan(tuple(base.steps[i] for i in perm))
    if strategy is Strategy.random_model_predicted_order:
        return Plan(tuple((t, space.tools_per_task[t][int(g.integers(len(space.tools_per_task[t])))])
                          for t in base.tasks))
    return base


def run_strategy(strategy: Strategy, samples: Sequence[LoadedSample], models: Mapping[str, PolicyModel],
                 reg: Registry, cal: Calibration, seed: int, *, space: Optional[DecisionSpace] = None,
                 predefined: Optional[Mapping[str, str]] = None, known_tasks: bool = False,
                 cache: Optional[SpaceCache] = None, threads: int = 1) -> EvalReport:
    """Pick a plan per sample with ``strategy``, then score and percentile-rank it."""
    strategy = parse_strategy(strategy) if isinstance(strategy, str) else strategy
    if space is None:
        space = default_space(reg)
    if cache is None:
        cache = SpaceCache(space, reg, cal)
    if predefined is None:
        predefined = load_predefined_table()
    if strategy in (Strategy.policy_sft, Strategy.policy_mrrhf, Strategy.random_order_predicted_model,
                    Strategy.random_model_predicted_order):
        _policy_for(strategy, models)
    cache.prepare(samples, threads)
    root = root_seed(seed).child("eval")

    def one(sample):
        ev = cache.get(sample)
        plan = choose_plan(strategy, sample, ev, space, models, predefined, reg, root, known_tasks)
        if not space.contains(plan):
            raise ValidationError(f"{strategy.value} chose {plan.to_text()} outside the decision space")
        r = rank_index(ev, ev.index[plan.steps])
        return EvalRow(strategy.value, sample.sample_id, plan.to_text(), r.score, r.percentile)

    return EvalReport(parallel_map(one, samples, threads))


# -- reports ------------------------------------------------------------------


def report_text(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for r in report.rows:
        w.writerow([r.strategy, r.sample_id, r.plan, repr(r.score), repr(r.percentile)])
    buf.write("\n# summary\n")
    w.writerow(SUMMARY_HEADER)
    for s in report.summary():
        w.writerow([s.strategy, s.n, repr(s.mean_score), repr(s.mean_percentile)])
    return buf.getvalue()


def write_report(report: EvalReport, path: str | os.PathLike) -> None:
    Path(path).write_text(report_text(report))


def parse_report(text: str) -> tuple:
    """Inverse of :func:`report_text`; returns ``(EvalReport, [SummaryRow])``."""
    head, sep, tail = text.partition("\n# summary\n")
    if not sep:
        raise ValidationError("report has no summary block")
    rows_in = list(csv.reader(io.StringIO(head)))
    if not rows_in or tuple(rows_in[0]) != REPORT_HEADER:
        raise ValidationError("bad report header")
    rows = [EvalRow(r[0], r[1], r[2], float(r[3]), float(r[4])) for r in rows_in[1:] if r]
    sum_in = list(csv.reader(io.StringIO(tail)))
    if not sum_in or tuple(sum_in[0]) != SUMMARY_HEADER:
        raise ValidationError("bad summary header")
    summary = [SummaryRow(r[0], int(r[1]), float(r[2]), float(r[3])) for r in sum_in[1:] if r]
    return EvalReport(rows), summary


def read_report(path: str | os.PathLike) -> tuple:
    return parse_report(Path(path).read_text())
