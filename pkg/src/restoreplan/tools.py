"""Restoration tool registry and plan execution.

Desk-scale tools do not learn an inverse. During data generation and reward
evaluation they receive a :class:`StackHint` (the replayed layers of the
sample's degradation stack) and reconstruct toward the pre-degradation state
of the layer matching their task::

    undo(x) = before + gain * (x - after)
    out     = q * undo(x) + (1 - q) * x

followed by side-effect smoothing ``(1 - b) * out + b * box3(out)``. When the
input is exactly the layer's degraded state the undo is perfect; any residue
left by restoring in the wrong order is propagated through the inverse's
local gain, which is what makes plans order-sensitive. The policy never sees
the hint.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .degrade import DegradationStack, Layer, box_blur, trace_layers
from .errors import PlanError, RegistrationError, ValidationError
from .imaging import ImageGrid

MAX_PLAN_LEN = 4


class TaskType(IntEnum):
    denoise = 0
    dehaze = 1
    derain = 2
    deraindrop = 3
    desnow = 4
    lowlight = 5
    deblur = 6
    dejpeg = 7


LAYER_TASK = {
    "noise": TaskType.denoise,
    "fog": TaskType.dehaze,
    "rain_streak": TaskType.derain,
    "rain_drop": TaskType.deraindrop,
    "snow": TaskType.desnow,
    "night": TaskType.lowlight,
    "blur": TaskType.deblur,
    "jpeg": TaskType.dejpeg,
}


@dataclass(frozen=True)
class ToolSpec:
    tool_id: str
    task: TaskType
    quality: float
    side_effect_blur: float
    cost: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "task", TaskType(self.task))
        if not self.tool_id:
            raise ValidationError("tool_id must be non-empty")
        for name in ("quality", "side_effect_blur"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name}={v} outside [0, 1]")
        if not (self.cost > 0 and math.isfinite(self.cost)):
            raise ValidationError(f"cost must be positive, got {self.cost}")

    def to_dict(self) -> dict:
        return {
            "tool_id": self.tool_id,
            "task": self.task.name,
            "q": self.quality,
            "side_effect_blur": self.side_effect_blur,
            "cost": self.cost,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ToolSpec":
        try:
            task = TaskType[d["task"]]
        except KeyError:
            raise ValidationError(f"unknown task {d.get('task')!r}") from None
        return cls(d["tool_id"], task, float(d["q"]), float(d["side_effect_blur"]), float(d["cost"]))


class Registry:
    """Immutable collection of tools; lookups preserve registration order."""

    def __init__(self, specs: Iterable[ToolSpec] = ()):
        self._specs: tuple = ()
        self._by_id: dict = {}
        for spec in specs:
            self._add(spec)

    def _add(self, spec: ToolSpec):
        if spec.tool_id in self._by_id:
            raise RegistrationError(f"duplicate tool_id {spec.tool_id!r}")
        self._specs = self._specs + (spec,)
        self._by_id[spec.tool_id] = spec

    @property
    def specs(self) -> tuple:
        return self._specs

    def __len__(self):
        return len(self._specs)

    def __contains__(self, tool_id):
        return tool_id in self._by_id

    def get(self, tool_id: str) -> ToolSpec:
        try:
            return self._by_id[tool_id]
        except KeyError:
            raise PlanError(f"unknown tool_id {tool_id!r}") from None

    def lookup(self, task: TaskType) -> list:
        return [s for s in self._specs if s.task == task]

    def tasks(self) -> list:
        seen = []
        for s in self._specs:
            if s.task not in seen:
                seen.append(s.task)
        return sorted(seen)


def register_tool(reg: Registry, spec: ToolSpec) -> Registry:
    return Registry(reg.specs + (spec,))


def default_registry() -> Registry:
    """Two tools per task: a strong one with more collateral smoothing and a light one."""
    specs = []
    for task in TaskType:
        specs.append(ToolSpec(f"{task.name}.hq", task, 0.95, 0.10, 2.0))
        specs.append(ToolSpec(f"{task.name}.lite", task, 0.70, 0.02, 1.0))
    return Registry(specs)


def load_registry(path: str | os.PathLike) -> Registry:
    specs = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            specs.append(ToolSpec.from_dict(json.loads(line)))
    return Registry(specs)


def save_registry(reg: Registry, path: str | os.PathLike) -> None:
    lines = [json.dumps(s.to_dict(), sort_keys=False) for s in reg.specs]
    Path(path).write_text("\n".join(lines) + "\n")


# -- plans ------------------------------------------------------------------


@dataclass(frozen=True)
class Plan:
    steps: tuple = ()

    def __post_init__(self):
        steps = tuple((TaskType(t), str(tool)) for t, tool in self.steps)
        object.__setattr__(self, "steps", steps)
        if len(steps) > MAX_PLAN_LEN:
            raise ValidationError(f"plan longer than {MAX_PLAN_LEN} steps")
        tasks = [t for t, _ in steps]
        if len(set(tasks)) != len(tasks):
            raise ValidationError(f"task repeated in plan: {[t.name for t in tasks]}")

    def __len__(self):
        return len(self.steps)

    @property
    def tasks(self) -> tuple:
        return tuple(t for t, _ in self.steps)

    @property
    def tool_ids(self) -> tuple:
        return tuple(tool for _, tool in self.steps)

    def to_text(self) -> str:
        return " > ".join(tool for _, tool in self.steps) if self.steps else "-"

    @classmethod
    def from_text(cls, text: str, reg: Registry) -> "Plan":
        text = text.strip()
        if text in ("", "-"):
            return cls(())
        ids = [t.strip() for t in text.split(">")]
        return cls(tuple((reg.get(i).task, i) for i in ids))

    def to_list(self) -> list:
        return [[t.name, tool] for t, tool in self.steps]

    @classmethod
    def from_list(cls, items: list) -> "Plan":
        return cls(tuple((TaskType[t], tool) for t, tool in items))


def validate_plan(plan: Plan, reg: Registry) -> None:
    for task, tool_id in plan.steps:
        spec = reg.get(tool_id)
        if spec.task != task:
            raise PlanError(f"tool {tool_id!r} performs {spec.task.name}, not {task.name}")


# -- execution --------------------------------------------------------------


class StackHint:
    """Replayed degradation layers of one sample, keyed by restoration task."""

    def __init__(self, layers: list, consumed: frozenset = frozenset()):
        self.layers = list(layers)
        self._by_task = {}
        for layer in self.layers:
            self._by_task[LAYER_TASK[layer.tag]] = layer
        self.consumed = frozenset(consumed)

    @classmethod
    def from_stack(cls, clean: ImageGrid, stack: DegradationStack) -> "StackHint":
        return cls(trace_layers(clean, stack))

    @property
    def tasks(self) -> tuple:
        """Restoration tasks in stack order (first-applied first)."""
        return tuple(LAYER_TASK[layer.tag] for layer in self.layers)

    def layer_for(self, task: TaskType) -> Optional[Layer]:
        if task in self.consumed:
            return None
        return self._by_task.get(task)

    def consume(self, task: TaskType) -> "StackHint":
        return StackHint(self.layers, self.consumed | {task})


def apply_tool_batch(batch: np.ndarray, spec: ToolSpec, layer: Optional[Layer]) -> np.ndarray:
    """Run one tool over an (N, H, W, C) float64 batch; returns float32 (clamped)."""
    out = batch
    if layer is not None and spec.quality > 0.0:
        before = layer.before.astype(np.float64)
        after = layer.after.astype(np.float64)
        undo = before + layer.gain * (batch - after)
        out = spec.quality * undo + (1.0 - spec.quality) * batch
    b = spec.side_effect_blur
    if b > 0.0:
        out = (1.0 - b) * out + b * box_blur(out, 1)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def execute_tool(img: ImageGrid, spec: ToolSpec, stack_hint: Optional[StackHint] = None) -> ImageGrid:
    layer = stack_hint.layer_for(spec.task) if stack_hint is not None else None
    out = apply_tool_batch(img.as_float64()[None], spec, layer)[0]
    return ImageGrid(out)


@dataclass(frozen=True)
class StepRecord:
    tool_id: str
    input_mean: float
    output_mean: float
    change_rmse: float
    cost: float


@dataclass(frozen=True)
class ExecutionTrace:
    steps: tuple
    total_cost: float


def execute_plan(img: ImageGrid, plan: Plan, reg: Registry, stack_hint: Optional[StackHint] = None):
    """Run ``plan`` step by step; returns ``(image, ExecutionTrace)``."""
    validate_plan(plan, reg)
    records = []
    hint = stack_hint
    cur = img
    for task, tool_id in plan.steps:
        spec = reg.get(tool_id)
        nxt = execute_tool(cur, spec, hint)
        a, b = cur.as_float64(), nxt.as_float64()
        records.append(StepRecord(tool_id, float(a.mean()), float(b.mean()),
                                  float(np.sqrt(np.mean((a - b) ** 2))), spec.cost))
        if hint is not None:
            hint = hint.consume(task)
        cur = nxt
    return cur, ExecutionTrace(tuple(records), float(sum(r.cost for r in records)))


def inverse_plan(hint: StackHint, reg: Registry, max_len: int = MAX_PLAN_LEN) -> Plan:
    """Undo layers last-applied first with each task's highest-quality tool."""
    steps = []
    for task in reversed(hint.tasks):
        tools = reg.lookup(task)
        if not tools:
            continue
        best = max(tools, key=lambda s: s.quality)
        steps.append((task, best.tool_id))
    return Plan(tuple(steps[:max_len]))
