"""Linear autoregressive plan policy.

At each decode step the policy sees ``x = [features | bag of previous
actions | 1]`` and emits ``softmax(W x / T)`` over the action vocabulary
(every registered ``(task, tool)`` pair, then STOP). Actions whose task is
already in the history are masked to exactly zero; once ``max_len`` actions
have been taken only STOP remains.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import PlanError, ValidationError
from .features import N_FEATURES
from .seeding import SeedSpec
from .tools import Plan, Registry, TaskType

STOP = "STOP"


class ActionVocab:
    """Registered ``(task, tool_id)`` actions in registration order, STOP last."""

    def __init__(self, actions: Sequence):
        self.actions = tuple((TaskType(t), str(tool)) for t, tool in actions)
        if len(set(self.actions)) != len(self.actions):
            raise ValidationError("duplicate action in vocabulary")
        self._index = {a: i for i, a in enumerate(self.actions)}
        self.stop = len(self.actions)
        self.task_of = np.array([t for t, _ in self.actions] + [-1])

    @classmethod
    def from_registry(cls, reg: Registry) -> "ActionVocab":
        return cls([(s.task, s.tool_id) for s in reg.specs])

    @property
    def size(self) -> int:
        return len(self.actions) + 1

    def __len__(self):
        return self.size

    def __eq__(self, other):
        return isinstance(other, ActionVocab) and self.actions == other.actions

    def index(self, step) -> int:
        try:
            return self._index[(TaskType(step[0]), str(step[1]))]
        except KeyError:
            raise PlanError(f"action {step!r} is not in the vocabulary") from None

    def encode(self, plan: Plan) -> list:
        """Action indices of ``plan`` followed by STOP."""
        return [self.index(s) for s in plan.steps] + [self.stop]

    def decode(self, indices: Sequence[int]) -> Plan:
        return Plan(tuple(self.actions[i] for i in indices if i != self.stop))

    def to_list(self) -> list:
        return [[t.name, tool] for t, tool in self.actions] + [STOP]

    @classmethod
    def from_list(cls, items: list) -> "ActionVocab":
        if not items or items[-1] != STOP:
            raise ValidationError("vocabulary must end with STOP")
        return cls([(TaskType[t], tool) for t, tool in items[:-1]])


@dataclass(frozen=True)
class DecodeState:
    features: np.ndarray
    history: tuple = ()


class PolicyModel:
    """Weight matrix ``W`` of shape ``(V, 8 + V + 1)`` plus decode settings."""

    def __init__(self, vocab: ActionVocab, weights: Optional[np.ndarray] = None,
                 temperature: float = 1.0, max_len: int = 3):
        self.vocab = vocab
        shape = (vocab.size, input_dim(vocab))
        if weights is None:
            weights = np.zeros(shape)
        weights = np.array(weights, dtype=np.float64)
        if weights.shape != shape:
            raise ValidationError(f"weights shape {weights.shape} != {shape}")
        if not np.all(np.isfinite(weights)):
            raise ValidationError("weights must be finite")
        if not temperature > 0:
            raise ValidationError("temperature must be positive")
        if not 1 <= max_len <= 4:
            raise ValidationError("max_len must be in [1, 4]")
        self.weights = weights
        self.temperature = float(temperature)
        self.max_len = int(max_len)

    @property
    def shape(self) -> tuple:
        return self.weights.shape

    def copy(self, weights: Optional[np.ndarray] = None) -> "PolicyModel":
        w = self.weights if weights is None else weights
        return PolicyModel(self.vocab, w.copy(), self.temperature, self.max_len)

    def with_temperature(self, temperature: float) -> "PolicyModel":
        return PolicyModel(self.vocab, self.weights, temperature, self.max_len)

    def to_dict(self) -> dict:
        return {
            "vocab": self.vocab.to_list(),
            "shape": list(self.weights.shape),
            "weights": [float(v) for v in self.weights.ravel()],
            "temperature": self.temperature,
            "max_len": self.max_len,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyModel":
        vocab = ActionVocab.from_list(d["vocab"])
        w = np.asarray(d["weights"], dtype=np.float64).reshape(d["shape"])
        return cls(vocab, w, float(d.get("temperature", 1.0)), int(d.get("max_len", 3)))

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "PolicyModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def input_dim(vocab: ActionVocab) -> int:
    return N_FEATURES + vocab.size + 1


def encode_input(vocab: ActionVocab, features: np.ndarray, history: Sequence[int]) -> np.ndarray:
    x = np.zeros(input_dim(vocab))
    x[:N_FEATURES] = features
    for a in history:
        x[N_FEATURES + a] = 1.0
    x[-1] = 1.0
    return x


def action_mask(model: PolicyModel, history: Sequence[int]) -> np.ndarray:
    """Boolean vector of actions still allowed after ``history``."""
    vocab = model.vocab
    allowed = np.ones(vocab.size, dtype=bool)
    if len(history) >= model.max_len:
        allowed[:] = False
    else:
        used = [vocab.task_of[a] for a in history]
        allowed[:-1] = ~np.isin(vocab.task_of[:-1], used)
    allowed[vocab.stop] = True
    return allowed


def log_probs(model: PolicyModel, x: np.ndarray, allowed: np.ndarray, temperature: Optional[float] = None) -> np.ndarray:
    """Masked log-softmax; disallowed entries are ``-inf``."""
    t = model.temperature if temperature is None else temperature
    # elementwise product + row sums keep results independent of BLAS threading
    z = (model.weights * x).sum(axis=1) / t
    z = np.where(allowed, z, -np.inf)
    m = z[allowed].max()
    lse = m + math.log(np.exp(z[allowed] - m).sum())
    return z - lse


def step_probs(model: PolicyModel, x: np.ndarray, allowed: np.ndarray, temperature: Optional[float] = None) -> np.ndarray:
    lp = log_probs(model, x, allowed, temperature)
    p = np.where(allowed, np.exp(lp), 0.0)
    return p / p.sum()


def action_distribution(model: PolicyModel, state: DecodeState) -> np.ndarray:
    history = tuple(state.history)
    tasks = [model.vocab.task_of[a] for a in history]
    if len(set(tasks)) != len(tasks) or len(history) > model.max_len:
        raise ValidationError("decode state repeats a task or exceeds max_len")
    x = encode_input(model.vocab, state.features, history)
    return step_probs(model, x, action_mask(model, history))


def greedy_decode(model: PolicyModel, features: np.ndarray) -> Plan:
    """Stepwise argmax (lowest index on ties) until STOP."""
    history: list = []
    while True:
        x = encode_input(model.vocab, features, history)
        a = int(np.argmax(log_probs(model, x, action_mask(model, history))))
        if a == model.vocab.stop:
            return model.vocab.decode(history)
        history.append(a)


def sample_sequence(model: PolicyModel, features: np.ndarray, seed: SeedSpec,
                    temperature: Optional[float] = None) -> Plan:
    """Ancestral sampling with one uniform draw per step from ``seed``."""
    g = seed.generator()
    history: list = []
    while True:
        x = encode_input(model.vocab, features, history)
        p = step_probs(model, x, action_mask(model, history), temperature)
        c = np.cumsum(p)
        a = int(np.searchsorted(c, g.random() * c[-1], side="right"))
        a = min(a, model.vocab.stop)
        if a == model.vocab.stop:
            return model.vocab.decode(history)
        history.append(a)


def _expand(model, features, actions, raw):
    x = encode_input(model.vocab, features, actions)
    lp = log_probs(model, x, action_mask(model, actions))
    return [(a, raw + float(lp[a])) for a in np.flatnonzero(np.isfinite(lp))]


def _finished(model, actions) -> bool:
    return bool(actions) and actions[-1] == model.vocab.stop


def _select(cands, width):
    # cands: (key, actions, raw); best key first, then lexicographic sequence
    cands.sort(key=lambda c: (-c[0], c[1]))
    return cands[:width]


def beam_search(model: PolicyModel, features: np.ndarray, width: int) -> list:
    """Plain beam search on summed log-probability; returns ``[(plan, logp)]`` best first."""
    if width < 1:
        raise ValidationError("beam width must be >= 1")
    beams = [((), 0.0)]
    while not all(_finished(model, a) for a, _ in beams):
        cands = []
        for actions, raw in beams:
            if _finished(model, actions):
                cands.append((raw, actions, raw))
                continue
            for a, r in _expand(model, features, actions, raw):
                cands.append((r, actions + (a,), r))
        beams = [(a, r) for _, a, r in _select(cands, width)]
    return [(model.vocab.decode(a), r) for a, r in beams]


def diverse_beam_search_scored(model: PolicyModel, features: np.ndarray, beams_per_group: int = 3,
                               groups: int = 5, diversity_penalty: float = 2.0) -> list:
    """Group-wise beam search with a Hamming diversity penalty.

    At step ``t`` group ``g`` ranks extensions by raw cumulative log-prob
    minus ``diversity_penalty`` times the number of times the same action was
    committed at step ``t`` by groups ``< g``. Finished beams carry over
    unpenalized. Returns unique ``(plan, raw logp)`` pairs, best first.
    """
    if beams_per_group < 1 or groups < 1:
        raise ValidationError("beams_per_group and groups must be >= 1")
    if diversity_penalty < 0:
        raise ValidationError("diversity_penalty must be >= 0")
    group_beams = [[((), 0.0)] for _ in range(groups)]
    while not all(_finished(model, a) for beams in group_beams for a, _ in beams):
        counts = np.zeros(model.vocab.size)
        for g in range(groups):
            cands = []
            for actions, raw in group_beams[g]:
                if _finished(model, actions):
                    cands.append((raw, actions, raw))
                    continue
                for a, r in _expand(model, features, actions, raw):
                    cands.append((r - diversity_penalty * counts[a], actions + (a,), r))
            chosen = _select(cands, beams_per_group)
            prev = {a for a, _ in group_beams[g]}
            for _, actions, _ in chosen:
                if actions not in prev:
                    counts[actions[-1]] += 1
            group_beams[g] = [(a, r) for _, a, r in chosen]
    best: dict = {}
    for beams in group_beams:
        for actions, raw in beams:
            if actions not in best or raw > best[actions]:
                best[actions] = raw
    ordered = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))
    return [(model.vocab.decode(a), r) for a, r in ordered]


def diverse_beam_search(model: PolicyModel, features: np.ndarray, beams_per_group: int = 3,
                        groups: int = 5, diversity_penalty: float = 2.0) -> list:
    return [p for p, _ in diverse_beam_search_scored(model, features, beams_per_group, groups, diversity_penalty)]


def plan_actions(model: PolicyModel, plan: Plan) -> list:
    return model.vocab.encode(plan)


def sequence_logprob(model: PolicyModel, features: np.ndarray, plan: Plan) -> float:
    """Summed log-probability of ``plan`` + STOP; ``-inf`` if any step is masked."""
    actions = plan_actions(model, plan)
    total = 0.0
    for t, a in enumerate(actions):
        hist = actions[:t]
        lp = log_probs(model, encode_input(model.vocab, features, hist), action_mask(model, hist))
        if not np.isfinite(lp[a]):
            return -math.inf
        total += float(lp[a])
    return total


def sequence_logprob_norm(model: PolicyModel, features: np.ndarray, plan: Plan) -> float:
    """Length-normalized log-probability; the length counts STOP."""
    lp = sequence_logprob(model, features, plan)
    return lp / (len(plan) + 1) if np.isfinite(lp) else -math.inf
