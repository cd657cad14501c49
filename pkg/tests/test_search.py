import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from restoreplan.degrade import compose
from restoreplan.errors import ValidationError
from restoreplan.imaging import ImageGrid
from restoreplan.reward import calibrate, calibrate_images, raw_score_batch
from restoreplan.scenes import noise_fog_suite
from restoreplan.seeding import root_seed
from restoreplan.search import (
    DecisionSpace,
    enumerate_plans,
    evaluate_space,
    optimal_plan,
    percentile_rank,
)
from restoreplan.tools import Plan, Registry, StackHint, TaskType, ToolSpec, default_registry

from naive import canonical_key, naive_optimal, naive_plans, random_instance

T = TaskType


def space_of(n_tasks, tools_each, max_len):
    tasks = tuple(TaskType(i) for i in range(n_tasks))
    return DecisionSpace(tasks, {t: tuple(f"{t.name}.{j}" for j in range(tools_each)) for t in tasks}, max_len)


def test_enumeration_examples():
    assert len(enumerate_plans(space_of(2, 2, 2))) == 13
    assert len(enumerate_plans(space_of(1, 1, 1))) == 2
    assert len(enumerate_plans(space_of(3, 1, 3))) == 16


def test_default_space_size():
    space = DecisionSpace.from_registry(default_registry(), max_len=3)
    # 1 + 8*2 + 56*4 + 336*8
    assert space.count() == len(enumerate_plans(space)) == 2929


@given(st.integers(1, 4), st.lists(st.integers(1, 3), min_size=4, max_size=4), st.integers(1, 4))
def test_count_formula_matches_enumeration(n, tool_counts, max_len):
    tasks = tuple(TaskType(i) for i in range(n))
    space = DecisionSpace(tasks, {t: tuple(f"x{j}" for j in range(tool_counts[i])) for i, t in enumerate(tasks)},
                          max_len)
    plans = enumerate_plans(space)
    brute = sum(math.prod(tool_counts[i] for i in c)
                for k in range(min(n, max_len) + 1)
                for c in itertools.permutations(range(n), k))
    assert space.count() == len(plans) == brute
    assert len({p.steps for p in plans}) == len(plans)
    naive = naive_plans(space.tasks, space.tools_per_task, max_len)
    assert sorted(p.steps for p in plans) == sorted(p.steps for p in naive)
    keys = [canonical_key(p, space.tools_per_task) for p in plans]
    assert keys == sorted(keys)


def test_space_validation():
    with pytest.raises(ValidationError):
        DecisionSpace((T.denoise,), {T.denoise: ()}, 2)
    with pytest.raises(ValidationError):
        DecisionSpace((T.denoise,), {T.denoise: ("a",)}, 5)
    with pytest.raises(ValidationError):
        DecisionSpace((T.denoise,), {T.denoise: ("dehaze.hq",)}, 1).check(default_registry())


def _noise_fog_setup():
    reg = Registry([
        ToolSpec("denoise.a", T.denoise, 1.0, 0.0), ToolSpec("denoise.b", T.denoise, 0.6, 0.05),
        ToolSpec("dehaze.a", T.dehaze, 1.0, 0.0), ToolSpec("dehaze.b", T.dehaze, 0.6, 0.05),
    ])
    suite = noise_fog_suite(20)
    degraded = [compose(c, s) for c, s in suite]
    cal = calibrate_images(degraded + [c for c, _ in suite])
    return reg, suite, degraded, cal


def test_noise_fog_oracle_uses_both_tasks():
    reg, suite, degraded, cal = _noise_fog_setup()
    space = DecisionSpace.from_registry(reg, max_len=2)
    assert space.count() == 13
    for (clean, stack), deg in list(zip(suite, degraded))[:6]:
        hint = StackHint.from_stack(clean, stack)
        ev = evaluate_space(deg, space, reg, cal, hint)
        best = optimal_plan(deg, space, reg, cal, hint, evaluation=ev)
        singles = max(s for p, s in zip(ev.plans, ev.scores) if len(p) == 1)
        assert set(best.plan.tasks) == {T.denoise, T.dehaze}
        assert best.score > singles
        assert best.score >= ev.score_of(Plan())
        assert best.rank == 1 and best.percentile == 1 / 13


@pytest.mark.parametrize("i", range(25))
def test_optimal_matches_naive(i):
    g = np.random.default_rng(i)
    img, tasks, tools, max_len, reg, cal, hint = random_instance(g, root_seed(77).child("inst", i))
    space = DecisionSpace(tuple(tasks), tools, max_len)
    best = optimal_plan(img, space, reg, cal, hint)
    plan, s = naive_optimal(img, tasks, tools, max_len, reg, cal, hint)
    assert best.plan == plan
    assert abs(best.score - s) <= 1e-9


def test_ties_share_best_rank():
    reg = Registry([ToolSpec("a", T.denoise, 0.5, 0.0), ToolSpec("b", T.dehaze, 0.5, 0.0)])
    space = DecisionSpace.from_registry(reg, max_len=2)
    img = ImageGrid.full(6, 6, 3, 0.5)
    cal = calibrate(raw_score_batch(np.stack([img.as_float64()] * 3)))
    ev = evaluate_space(img, space, reg, cal)
    assert np.all(ev.scores == 0)
    for p in ev.plans:
        r = percentile_rank(p, img, space, reg, cal, evaluation=ev)
        assert r.rank == 1 and r.percentile == 1 / ev.total
    # the tie rule picks the empty plan
    assert optimal_plan(img, space, reg, cal, evaluation=ev).plan == Plan()


def test_percentile_outside_space():
    reg = default_registry()
    space = DecisionSpace.from_registry(reg, tasks=[T.denoise], max_len=1)
    img = ImageGrid.full(4, 4, 3, 0.5)
    cal = calibrate(np.random.default_rng(0).random((4, 4)))
    with pytest.raises(ValidationError):
        percentile_rank(Plan(((T.dehaze, "dehaze.hq"),)), img, space, reg, cal)


def test_random_plan_percentile_near_half():
    reg, suite, degraded, cal = _noise_fog_setup()
    space = DecisionSpace.from_registry(reg, max_len=2)
    g = root_seed(5).generator()
    pct = []
    evs = [evaluate_space(d, space, reg, cal, StackHint.from_stack(c, s)) for (c, s), d in zip(suite, degraded)]
    for _ in range(2000):
        ev = evs[int(g.integers(len(evs)))]
        j = int(g.integers(ev.total))
        pct.append((1 + np.count_nonzero(ev.scores > ev.scores[j])) / ev.total)
    # ranks 1..13 uniformly give mean 7/13
    assert abs(np.mean(pct) - 7 / 13) < 0.05
