"""Exhaustive plan search and percentile ranking over a decision space.

The space is every ordered sequence of 0..max_len distinct tasks with one
tool per chosen task. Evaluation walks the space breadth-first so plans that
share a prefix share its execution; each depth is executed as a batch per
(task, tool) action and scored in chunks.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError
from .imaging import ImageGrid
from .reward import Calibration, unified_total_batch
from .tools import MAX_PLAN_LEN, Plan, Registry, StackHint, TaskType, apply_tool_batch

SCORE_CHUNK = 512


@dataclass(frozen=True)
class DecisionSpace:
    tasks: tuple
    tools_per_task: dict
    max_len: int

    def __post_init__(self):
        tasks = tuple(sorted(TaskType(t) for t in self.tasks))
        object.__setattr__(self, "tasks", tasks)
        object.__setattr__(self, "tools_per_task", {TaskType(t): tuple(v) for t, v in self.tools_per_task.items()})
        if len(set(tasks)) != len(tasks):
            raise ValidationError("duplicate task in decision space")
        if not 1 <= self.max_len <= MAX_PLAN_LEN:
            raise ValidationError(f"max_len must be in [1, {MAX_PLAN_LEN}]")
        for t in tasks:
            if not self.tools_per_task.get(t):
                raise ValidationError(f"no tools listed for task {t.name}")

    @classmethod
    def from_registry(cls, reg: Registry, tasks: Optional[Sequence[TaskType]] = None, max_len: int = 3) -> "DecisionSpace":
        tasks = reg.tasks() if tasks is None else [TaskType(t) for t in tasks]
        return cls(tuple(tasks), {t: tuple(s.tool_id for s in reg.lookup(t)) for t in tasks}, max_len)

    def check(self, reg: Registry) -> None:
        for t in self.tasks:
            for tool in self.tools_per_task[t]:
                if reg.get(tool).task != t:
                    raise ValidationError(f"tool {tool!r} does not perform {t.name}")

    def count(self) -> int:
        """Closed-form size: sum_k sum over ordered k-subsets of the product of tool counts."""
        n = len(self.tasks)
        counts = [len(self.tools_per_task[t]) for t in self.tasks]
        total = 0
        for k in range(0, min(self.max_len, n) + 1):
            # e_k(counts) * k! = sum over ordered k-tuples of distinct tasks of the tool product
            e = sum(np.prod([counts[i] for i in combo], dtype=np.int64)
                    for combo in itertools.combinations(range(n), k))
            total += int(e) * int(np.prod(range(1, k + 1), dtype=np.int64))
        return total

    def contains(self, plan: Plan) -> bool:
        if len(plan) > self.max_len:
            return False
        return all(t in self.tools_per_task and tool in self.tools_per_task[t] for t, tool in plan.steps)


_PLAN_CACHE: dict = {}


def _space_key(space: DecisionSpace) -> tuple:
    return (space.tasks, tuple(space.tools_per_task[t] for t in space.tasks), space.max_len)


def enumerate_plans(space: DecisionSpace) -> list:
    """All plans in canonical order: length, then task codes, then tool indices."""
    key = _space_key(space)
    if key not in _PLAN_CACHE:
        _PLAN_CACHE[key] = tuple(_enumerate(space))
    return list(_PLAN_CACHE[key])


def _enumerate(space: DecisionSpace) -> list:
    plans = []
    for k in range(0, min(space.max_len, len(space.tasks)) + 1):
        for perm in itertools.permutations(space.tasks, k):
            tool_lists = [space.tools_per_task[t] for t in perm]
            for choice in itertools.product(*[range(len(tl)) for tl in tool_lists]):
                plans.append(Plan(tuple((t, tool_lists[i][c]) for i, (t, c) in enumerate(zip(perm, choice)))))
    return plans


@dataclass
class SpaceEvaluation:
    """Scores of every plan in a space for one sample (canonical order)."""

    plans: list
    scores: np.ndarray

    def __post_init__(self):
        self.index = {p.steps: i for i, p in enumerate(self.plans)}

    @property
    def total(self) -> int:
        return len(self.plans)

    def score_of(self, plan: Plan) -> float:
        try:
            return float(self.scores[self.index[plan.steps]])
        except KeyError:
            raise ValidationError(f"plan {plan.to_text()} is outside the decision space") from None


def evaluate_space(img: ImageGrid, space: DecisionSpace, reg: Registry, cal: Calibration,
                   stack_hint: Optional[StackHint] = None) -> SpaceEvaluation:
    space.check(reg)
    finals: dict = {}
    root = img.data[None].astype(np.float32)
    finals[()] = root[0]
    level_steps = [()]
    level_imgs = root
    depth_limit = min(space.max_len, len(space.tasks))
    for _ in range(depth_limit):
        used = [frozenset(t for t, _ in steps) for steps in level_steps]
        next_steps, next_imgs = [], []
        for task in space.tasks:
            idx = [i for i, u in enumerate(used) if task not in u]
            if not idx:
                continue
            parents = level_imgs[idx].astype(np.float64)
            layer = stack_hint.layer_for(task) if stack_hint is not None else None
            for tool_id in space.tools_per_task[task]:
                out = apply_tool_batch(parents, reg.get(tool_id), layer)
                next_imgs.append(out)
                next_steps.extend(level_steps[i] + ((task, tool_id),) for i in idx)
        level_steps = next_steps
        level_imgs = np.concatenate(next_imgs, axis=0)
        for s, im in zip(level_steps, level_imgs):
            finals[s] = im
    plans = enumerate_plans(space)
    stacked = np.stack([finals[p.steps] for p in plans])
    scores = np.empty(len(plans))
    for lo in range(0, len(plans), SCORE_CHUNK):
        scores[lo:lo + SCORE_CHUNK] = unified_total_batch(stacked[lo:lo + SCORE_CHUNK].astype(np.float64), cal)
    return SpaceEvaluation(plans, scores)


@dataclass(frozen=True)
class RankedDecision:
    plan: Plan
    score: float
    rank: int
    total: int

    @property
    def percentile(self) -> float:
        return self.rank / self.total


def rank_index(evaluation: SpaceEvaluation, i: int) -> RankedDecision:
    s = evaluation.scores[i]
    rank = 1 + int(np.count_nonzero(evaluation.scores > s))
    return RankedDecision(evaluation.plans[i], float(s), rank, evaluation.total)


def optimal_plan(img: ImageGrid, space: DecisionSpace, reg: Registry, cal: Calibration,
                 stack_hint: Optional[StackHint] = None, *, evaluation: Optional[SpaceEvaluation] = None) -> RankedDecision:
    """Highest-S plan; ties go to the shorter plan, then canonical order."""
    ev = evaluation if evaluation is not None else evaluate_space(img, space, reg, cal, stack_hint)
    # canonical order is length-major, so the first maximum satisfies the tie rule
    return rank_index(ev, int(np.argmax(ev.scores)))


def percentile_rank(plan: Plan, img: ImageGrid, space: DecisionSpace, reg: Registry, cal: Calibration,
                    stack_hint: Optional[StackHint] = None, *, evaluation: Optional[SpaceEvaluation] = None) -> RankedDecision:
    """Rank of ``plan`` among all plans by descending S; tied plans share the best rank."""
    if not space.contains(plan):
        raise ValidationError(f"plan {plan.to_text()} is outside the decision space")
    ev = evaluation if evaluation is not None else evaluate_space(img, space, reg, cal, stack_hint)
    return rank_index(ev, ev.index[plan.steps])
