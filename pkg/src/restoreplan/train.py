"""Two-stage policy training: SFT on oracle plans, then MRRHF alignment.

MRRHF loss for one sample with candidates ``(plan_i, p_i, s_i)``::

    L_rank = sum_{s_i < s_j} w_ij * max(0, p_i - p_j)     w_ij = s_j - s_i
    L_ft   = -log rho(best plan)                           (unnormalized)
    H      = -sum_a rho(a | y0) log rho(a | y0)            (initial state)
    L      = l_rank * L_rank + l_ft * L_ft - l_er * H

``p_i`` is the length-normalized log-probability under the live policy.
Entropy is subtracted so the regularizer widens the first-step
distribution; ``entropy_sign="literal"`` adds it instead.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NumericalError, ValidationError
from .imaging import ImageGrid
from .policy import (
    PolicyModel,
    action_mask,
    diverse_beam_search,
    encode_input,
    greedy_decode,
    log_probs,
    sample_sequence,
    sequence_logprob_norm,
)
from .reward import Calibration, reported_reward_from_totals, unified_total_batch
from .seeding import SeedSpec
from .tools import Plan, Registry, StackHint, execute_plan

MODES = ("hybrid", "offline_only", "online_only", "no_entropy")
SENTINEL_MARGIN = 10.0
SENTINEL_GRAD_CAP = 10.0


@dataclass(frozen=True)
class SftExample:
    features: np.ndarray
    target: Plan
    sample_id: str = ""


@dataclass
class Candidate:
    plan: Plan
    origin: str
    p: float = float("nan")
    s: float = float("nan")


@dataclass(frozen=True)
class TrainConfig:
    lambda_rank: float = 0.5
    lambda_ft: float = 0.5
    lambda_er: float = 0.1
    m1: int = 15
    m2: int = 6
    beams_per_group: int = 3
    groups: int = 5
    diversity_penalty: float = 2.0
    sample_temperature: float = 0.8
    learning_rate: float = 1e-5
    epochs: int = 3
    sft_batch: int = 128
    mrrhf_batch: int = 1
    optimizer: str = "adam"
    grad_clip: float = 10.0
    entropy_sign: str = "maximize"
    contrast_weights: bool = True
    seed: int = 42

    def __post_init__(self):
        if min(self.lambda_rank, self.lambda_ft, self.lambda_er) < 0:
            raise ValidationError("loss weights must be non-negative")
        if self.m1 < 0 or self.m2 < 0 or self.m1 + self.m2 < 2:
            raise ValidationError("need m1, m2 >= 0 and m1 + m2 >= 2")
        if self.epochs < 0 or self.sft_batch < 1 or self.mrrhf_batch < 1:
            raise ValidationError("epochs must be >= 0 and batch sizes >= 1")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")
        if self.entropy_sign not in ("maximize", "literal"):
            raise ValidationError("entropy_sign must be 'maximize' or 'literal'")
        if not self.sample_temperature > 0 or self.grad_clip <= 0:
            raise ValidationError("sample_temperature and grad_clip must be positive")

    def for_mode(self, mode: str) -> "TrainConfig":
        if mode not in MODES:
            raise ValidationError(f"unknown mode {mode!r}; expected one of {MODES}")
        if mode == "offline_only":
            return replace(self, m2=0)
        if mode == "online_only":
            return replace(self, m1=0)
        if mode == "no_entropy":
            return replace(self, lambda_er=0.0)
        return self


@dataclass(frozen=True)
class TrainMetrics:
    iteration: int
    sample_id: str
    reward: float
    diversity: int
    l_rank: float
    l_ft: float
    l_er: float
    l_total: float


METRIC_FIELDS = ("iteration", "sample_id", "reward", "diversity", "l_rank", "l_ft", "l_er", "l_total")


# -- optimizers ---------------------------------------------------------------


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, w: np.ndarray, g: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(w)
            self.v = np.zeros_like(w)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return w - self.lr * mhat / (np.sqrt(vhat) + self.eps)


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, w: np.ndarray, g: np.ndarray) -> np.ndarray:
        return w - self.lr * g


def make_optimizer(cfg: TrainConfig):
    return Adam(cfg.learning_rate) if cfg.optimizer == "adam" else SGD(cfg.learning_rate)


def clip_global_norm(g: np.ndarray, max_norm: float) -> np.ndarray:
    n = float(np.sqrt((g * g).sum()))
    return g * (max_norm / n) if n > max_norm else g


# -- log-likelihood and its gradient -------------------------------------------


def sequence_loglik_and_grad(model: PolicyModel, features: np.ndarray, plan: Plan):
    """``(sum log rho, d/dW, token count)`` for ``plan`` + STOP; ``-inf`` and zero grad if masked."""
    actions = model.vocab.encode(plan)
    grad = np.zeros_like(model.weights)
    total = 0.0
    for t, a in enumerate(actions):
        hist = actions[:t]
        x = encode_input(model.vocab, features, hist)
        lp = log_probs(model, x, action_mask(model, hist))
        if not np.isfinite(lp[a]):
            return -math.inf, np.zeros_like(model.weights), len(actions)
        total += float(lp[a])
        p = np.exp(lp)
        p[a] -= 1.0
        # d log p_a / dz = e_a - p;  z = W x / T
        grad -= np.outer(p, x) / model.temperature
    return total, grad, len(actions)


def sft_loss_and_grad(model: PolicyModel, example: SftExample):
    """Unnormalized negative log-likelihood of the target plan and its gradient."""
    ll, g, _ = sequence_loglik_and_grad(model, example.features, example.target)
    if not np.isfinite(ll):
        raise ValidationError(f"target plan {example.target.to_text()} is masked under the policy")
    return -ll, -g


def sft_dataset_loss(model: PolicyModel, dataset: Sequence[SftExample]) -> float:
    return float(np.mean([sft_loss_and_grad(model, ex)[0] for ex in dataset]))


def train_sft(dataset: Sequence[SftExample], cfg: TrainConfig, init: PolicyModel,
              history: Optional[list] = None,
              on_epoch: Optional[Callable[[int, PolicyModel], None]] = None) -> PolicyModel:
    """Minibatch descent on the mean per-example NLL; shuffling drawn from ``cfg.seed``."""
    if not dataset:
        raise ValidationError("SFT dataset is empty")
    model = init.copy()
    opt = make_optimizer(cfg)
    root = SeedSpec(cfg.seed).child("sft")
    n = len(dataset)
    for epoch in range(cfg.epochs):
        order = root.child("epoch", epoch).generator().permutation(n)
        losses = []
        for lo in range(0, n, cfg.sft_batch):
            batch = [dataset[i] for i in order[lo:lo + cfg.sft_batch]]
            g = np.zeros_like(model.weights)
            for ex in batch:
                loss, gi = sft_loss_and_grad(model, ex)
                losses.append(loss)
                g += gi
            w = opt.step(model.weights, g / len(batch))
            if not np.all(np.isfinite(w)):
                raise NumericalError(f"non-finite weights after SFT epoch {epoch}")
            model.weights = w
        if history is not None:
            history.append(float(np.mean(losses)))
        if on_epoch is not None:
            on_epoch(epoch, model)
    return model


def greedy_exact_match(model: PolicyModel, dataset: Sequence[SftExample]) -> float:
    hits = sum(greedy_decode(model, ex.features) == ex.target for ex in dataset)
    return hits / len(dataset)


# -- candidates ---------------------------------------------------------------


class SampleContext:
    """One training sample's degraded image and oracle hint; memoizes plan rewards."""

    def __init__(self, image: ImageGrid, hint: Optional[StackHint], reg: Registry, cal: Calibration):
        self.image = image
        self.hint = hint
        self.reg = reg
        self.cal = cal
        self._cache: dict = {}

    def scores(self, plans: Sequence[Plan]) -> np.ndarray:
        todo = [p for p in dict.fromkeys(p.steps for p in plans) if p not in self._cache]
        if todo:
            outs = [execute_plan(self.image, Plan(steps), self.reg, self.hint)[0].as_float64() for steps in todo]
            vals = unified_total_batch(np.stack(outs), self.cal)
            for steps, v in zip(todo, vals):
                self._cache[steps] = float(v)
        return np.array([self._cache[p.steps] for p in plans])


@dataclass
class MrrhfSample:
    sample_id: str
    features: np.ndarray
    context: SampleContext


def offline_plans(pi: PolicyModel, features: np.ndarray, cfg: TrainConfig) -> list:
    if cfg.m1 == 0:
        return []
    return diverse_beam_search(pi, features, cfg.beams_per_group, cfg.groups, cfg.diversity_penalty)[:cfg.m1]


def online_plans(rho: PolicyModel, features: np.ndarray, cfg: TrainConfig, seed: SeedSpec) -> list:
    return [sample_sequence(rho, features, seed.child("online", j), cfg.sample_temperature)
            for j in range(cfg.m2)]


def merge_candidates(offline: Sequence[Plan], online: Sequence[Plan]) -> list:
    """Union with duplicates collapsed; first occurrence (offline before online) wins."""
    seen, out = set(), []
    for origin, plans in (("offline", offline), ("online", online)):
        for p in plans:
            if p.steps not in seen:
                seen.add(p.steps)
                out.append(Candidate(p, origin))
    return out


def generate_candidates(pi: PolicyModel, rho: PolicyModel, features: np.ndarray, cfg: TrainConfig,
                        seed: SeedSpec, context: SampleContext, offline: Optional[Sequence[Plan]] = None) -> list:
    """Offline diverse-beam plans from ``pi`` plus online samples from ``rho``, scored.

    ``p`` is evaluated under ``rho`` for every candidate, including the
    offline ones. Pass ``offline`` to reuse a cached decode.
    """
    if pi.vocab != rho.vocab:
        raise ValidationError("pi and rho must share a vocabulary")
    off = offline_plans(pi, features, cfg) if offline is None else list(offline)
    cands = merge_candidates(off, online_plans(rho, features, cfg, seed))
    s = context.scores([c.plan for c in cands])
    for c, v in zip(cands, s):
        c.s = float(v)
    for c in cands:
        c.p = sequence_logprob_norm(rho, features, c.plan)
    return cands


# -- MRRHF losses -------------------------------------------------------------


@dataclass
class MrrhfLosses:
    l_rank: float
    l_ft: float
    l_er: float
    total: float
    grad: np.ndarray
    grads: dict = field(default_factory=dict)


def initial_entropy_and_grad(model: PolicyModel, features: np.ndarray):
    """Entropy of the first-step distribution and its gradient w.r.t. ``W``."""
    x = encode_input(model.vocab, features, ())
    lp = log_probs(model, x, action_mask(model, ()))
    ok = np.isfinite(lp)
    p = np.where(ok, np.exp(lp), 0.0)
    plogp = np.where(ok, p * np.where(ok, lp, 0.0), 0.0)
    h = float(-plogp.sum())
    # dH/dz_k = -p_k (log p_k + H)
    dz = np.where(ok, -p * (np.where(ok, lp, 0.0) + h), 0.0)
    return h, np.outer(dz, x) / model.temperature


def best_candidate(cands: Sequence[Candidate]) -> Candidate:
    """Highest reward; the first one wins ties."""
    return cands[int(np.argmax([c.s for c in cands]))]


def rank_loss(p: Sequence[float], s: Sequence[float], contrast_weights: bool = True) -> float:
    """Ranking hinge for given scores ``p`` and rewards ``s`` (no gradient)."""
    loss = 0.0
    for i in range(len(p)):
        for j in range(len(p)):
            if not s[i] < s[j] or not np.isfinite(p[i]):
                continue
            w = (s[j] - s[i]) if contrast_weights else 1.0
            loss += w * (SENTINEL_MARGIN if not np.isfinite(p[j]) else max(0.0, p[i] - p[j]))
    return float(loss)


def rank_loss_and_grad(model: PolicyModel, features: np.ndarray, cands: Sequence[Candidate],
                       contrast_weights: bool = True):
    """Weighted hinge over reward-ordered pairs; refreshes each candidate's ``p``."""
    ps, gs = [], []
    for c in cands:
        ll, g, n = sequence_loglik_and_grad(model, features, c.plan)
        c.p = ll / n if np.isfinite(ll) else -math.inf
        ps.append(c.p)
        gs.append(g / n)
    loss = 0.0
    grad = np.zeros_like(model.weights)
    for i, ci in enumerate(cands):
        for j, cj in enumerate(cands):
            if not ci.s < cj.s:
                continue
            w = (cj.s - ci.s) if contrast_weights else 1.0
            if not np.isfinite(ps[i]):
                continue
            if not np.isfinite(ps[j]):
                # unreachable preferred candidate: fixed max-margin penalty, capped push on p_i
                loss += w * SENTINEL_MARGIN
                grad += clip_global_norm(w * gs[i], SENTINEL_GRAD_CAP)
                continue
            d = ps[i] - ps[j]
            if d > 0:
                loss += w * d
                grad += w * (gs[i] - gs[j])
    return loss, grad


def _mrrhf_terms(model: PolicyModel, features: np.ndarray, cands: Sequence[Candidate], cfg: TrainConfig,
                 best_target: Optional[Plan] = None) -> MrrhfLosses:
    if len(cands) >= 2:
        l_rank, g_rank = rank_loss_and_grad(model, features, cands, cfg.contrast_weights)
    else:
        l_rank, g_rank = 0.0, np.zeros_like(model.weights)
        for c in cands:
            ll, _, n = sequence_loglik_and_grad(model, features, c.plan)
            c.p = ll / n if np.isfinite(ll) else -math.inf
    target = best_target if best_target is not None else best_candidate(cands).plan
    ll, g_ll, _ = sequence_loglik_and_grad(model, features, target)
    if not np.isfinite(ll):
        raise ValidationError(f"best response {target.to_text()} is masked under the policy")
    l_ft, g_ft = -ll, -g_ll
    h, g_h = initial_entropy_and_grad(model, features)
    sign = -1.0 if cfg.entropy_sign == "maximize" else 1.0
    total = cfg.lambda_rank * l_rank + cfg.lambda_ft * l_ft + sign * cfg.lambda_er * h
    grad = cfg.lambda_rank * g_rank + cfg.lambda_ft * g_ft + sign * cfg.lambda_er * g_h
    return MrrhfLosses(l_rank, l_ft, h, total, grad, {"rank": g_rank, "ft": g_ft, "er": g_h})


def mrrhf_losses(model: PolicyModel, features: np.ndarray, cands: Sequence[Candidate], cfg: TrainConfig,
                 best_target: Optional[Plan] = None) -> MrrhfLosses:
    """Ranking, best-response and entropy terms with analytic gradients.

    ``l_er`` reports the entropy ``H`` itself; its sign in ``total`` follows
    ``cfg.entropy_sign``. ``grads`` holds the unweighted per-term gradients.
    """
    if len(cands) < 2:
        raise ValidationError(f"need at least 2 candidates, got {len(cands)}")
    return _mrrhf_terms(model, features, cands, cfg, best_target)


def train_mrrhf(pi: PolicyModel, dataset: Sequence[MrrhfSample], cfg: TrainConfig, mode: str = "hybrid",
                on_epoch: Optional[Callable[[int, PolicyModel], None]] = None):
    """Align ``rho`` (initialized from ``pi``) on candidate rankings; returns ``(rho, metrics)``.

    Offline candidates are decoded once per sample from the frozen ``pi``.
    One optimizer step per ``mrrhf_batch`` samples; gradients are clipped to
    global norm ``grad_clip``.
    """
    if not dataset:
        raise ValidationError("MRRHF dataset is empty")
    cfg = cfg.for_mode(mode)
    rho = pi.copy()
    opt = make_optimizer(cfg)
    # shared across modes so ablations differ only in the mode itself
    root = SeedSpec(cfg.seed).child("mrrhf")
    cached = [offline_plans(pi, s.features, cfg) for s in dataset]
    metrics = []
    it = 0
    for epoch in range(cfg.epochs):
        order = root.child("epoch", epoch).generator().permutation(len(dataset))
        acc = np.zeros_like(rho.weights)
        pending = 0
        for idx in order:
            sample = dataset[int(idx)]
            cands = generate_candidates(pi, rho, sample.features, cfg, root.child("iter", it),
                                        sample.context, offline=cached[int(idx)])
            res = _mrrhf_terms(rho, sample.features, cands, cfg)
            reward = reported_reward_from_totals([c.s for c in cands], sample.context.cal.k)
            row = TrainMetrics(it, sample.sample_id, reward, len(cands), res.l_rank, res.l_ft, res.l_er, res.total)
            if not (np.isfinite(res.total) and np.all(np.isfinite(res.grad))):
                raise NumericalError(f"non-finite MRRHF loss at iteration {it} (sample {sample.sample_id})")
            metrics.append(row)
            acc += res.grad
            pending += 1
            it += 1
            if pending == cfg.mrrhf_batch:
                rho.weights = opt.step(rho.weights, clip_global_norm(acc / pending, cfg.grad_clip))
                acc[:] = 0.0
                pending = 0
        if pending:
            rho.weights = opt.step(rho.weights, clip_global_norm(acc / pending, cfg.grad_clip))
        if not np.all(np.isfinite(rho.weights)):
            raise NumericalError(f"non-finite weights after MRRHF epoch {epoch}")
        if on_epoch is not None:
            on_epoch(epoch, rho)
    return rho, metrics


def final_reward(metrics: Sequence[TrainMetrics], n_samples: int) -> float:
    """Mean reported reward over the last ``n_samples`` iterations (the final epoch)."""
    tail = metrics[-n_samples:]
    return float(np.mean([m.reward for m in tail]))


def mean_diversity(metrics: Sequence[TrainMetrics]) -> float:
    return float(np.mean([m.diversity for m in metrics]))


def write_metrics(metrics: Sequence[TrainMetrics], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for m in metrics:
            w.writerow([m.iteration, m.sample_id, repr(m.reward), m.diversity, repr(m.l_rank),
                        repr(m.l_ft), repr(m.l_er), repr(m.l_total)])


def read_metrics(path: str | os.PathLike) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [TrainMetrics(int(r["iteration"]), r["sample_id"], float(r["reward"]), int(r["diversity"]),
                         float(r["l_rank"]), float(r["l_ft"]), float(r["l_er"]), float(r["l_total"]))
            for r in rows]

