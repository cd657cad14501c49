import numpy as np
import pytest

from restoreplan.degrade import (
    DegradationEntry,
    DegradationKind,
    DegradationStack,
    NoiseParams,
    apply_blur,
    BlurParams,
    compose,
)
from restoreplan.errors import PlanError, RegistrationError, ValidationError
from restoreplan.imaging import ImageGrid, residual_rmse
from restoreplan.scenes import SCENARIOS, noise_fog_suite, procedural_scene, scenario_stack
from restoreplan.seeding import root_seed
from restoreplan.tools import (
    Plan,
    Registry,
    StackHint,
    TaskType,
    ToolSpec,
    default_registry,
    execute_plan,
    execute_tool,
    inverse_plan,
    load_registry,
    register_tool,
    save_registry,
)

S = root_seed(21)
PERFECT = Registry([
    ToolSpec("denoise.a", TaskType.denoise, 1.0, 0.0),
    ToolSpec("dehaze.a", TaskType.dehaze, 1.0, 0.0),
])


def noisy_sample():
    clean = procedural_scene(24, 24, S.child("c"))
    stack = DegradationStack((DegradationEntry(DegradationKind.noise, NoiseParams(0.05), S.child("n")),))
    return clean, compose(clean, stack), StackHint.from_stack(clean, stack)


def test_task_codes_stable():
    assert [t.name for t in TaskType] == [
        "denoise", "dehaze", "derain", "deraindrop", "desnow", "lowlight", "deblur", "dejpeg"]
    assert [int(t) for t in TaskType] == list(range(8))


def test_register_and_lookup():
    reg = Registry()
    reg = register_tool(reg, ToolSpec("d1", TaskType.denoise, 0.9, 0.0))
    reg = register_tool(reg, ToolSpec("d2", TaskType.denoise, 0.6, 0.0))
    assert [s.tool_id for s in reg.lookup(TaskType.denoise)] == ["d1", "d2"]
    assert reg.lookup(TaskType.dehaze) == []
    with pytest.raises(RegistrationError):
        register_tool(reg, ToolSpec("d1", TaskType.dehaze, 0.5, 0.0))


def test_toolspec_ranges():
    with pytest.raises(ValidationError):
        ToolSpec("x", TaskType.denoise, 1.5, 0.0)
    with pytest.raises(ValidationError):
        ToolSpec("x", TaskType.denoise, 0.5, 0.0, cost=0.0)


def test_registry_file_roundtrip(tmp_path):
    reg = default_registry()
    save_registry(reg, tmp_path / "tools.jsonl")
    back = load_registry(tmp_path / "tools.jsonl")
    assert back.specs == reg.specs
    assert len(reg) == 16 and len(reg.lookup(TaskType.derain)) == 2


def test_perfect_tool_removes_noise():
    clean, deg, hint = noisy_sample()
    out = execute_tool(deg, PERFECT.get("denoise.a"), hint)
    assert residual_rmse(out, clean) < 0.01


def test_zero_quality_is_side_effect_only():
    _, deg, hint = noisy_sample()
    assert execute_tool(deg, ToolSpec("z", TaskType.denoise, 0.0, 0.0), hint) == deg
    smoothing = ToolSpec("z", TaskType.denoise, 0.0, 0.5)
    expected = 0.5 * deg.as_float64() + 0.5 * apply_blur(deg, BlurParams(1)).as_float64()
    assert np.allclose(execute_tool(deg, smoothing, hint).as_float64(), expected, atol=1e-6)


def test_tool_without_matching_layer_only_smooths():
    _, deg, hint = noisy_sample()
    spec = ToolSpec("h", TaskType.dehaze, 0.95, 0.1)
    side = ToolSpec("s", TaskType.dehaze, 0.0, 0.1)
    out = execute_tool(deg, spec, hint)
    assert out == execute_tool(deg, side, None)
    assert residual_rmse(out, deg) <= residual_rmse(apply_blur(deg, BlurParams(1)), deg) * 0.1 + 1e-6


def test_empty_plan():
    _, deg, hint = noisy_sample()
    out, trace = execute_plan(deg, Plan(), PERFECT, hint)
    assert out == deg and trace.total_cost == 0 and trace.steps == ()


def test_plan_errors():
    with pytest.raises(ValidationError):
        Plan(((TaskType.denoise, "denoise.a"), (TaskType.denoise, "denoise.a")))
    _, deg, _ = noisy_sample()
    with pytest.raises(PlanError):
        execute_plan(deg, Plan(((TaskType.derain, "denoise.a"),)), PERFECT)
    with pytest.raises(PlanError):
        execute_plan(deg, Plan(((TaskType.denoise, "nope"),)), PERFECT)


def test_plan_text_roundtrip():
    reg = default_registry()
    p = Plan.from_text("dehaze.hq > denoise.lite", reg)
    assert p.tasks == (TaskType.dehaze, TaskType.denoise)
    assert Plan.from_text(p.to_text(), reg) == p
    assert Plan.from_list(p.to_list()) == p
    assert Plan().to_text() == "-"


def test_trace_cost_additive():
    reg = default_registry()
    clean, deg, hint = noisy_sample()
    plan = Plan.from_text("denoise.hq > dehaze.lite > deblur.hq", reg)
    out, trace = execute_plan(deg, plan, reg, hint)
    assert len(trace.steps) == 3
    assert trace.total_cost == sum(reg.get(t).cost for t in plan.tool_ids)
    again, _ = execute_plan(deg, plan, reg, hint)
    assert again == out


def test_order_sensitivity_on_noise_fog_suite():
    good = Plan(((TaskType.dehaze, "dehaze.a"), (TaskType.denoise, "denoise.a")))
    bad = Plan(((TaskType.denoise, "denoise.a"), (TaskType.dehaze, "dehaze.a")))
    for clean, stack in noise_fog_suite(8):
        deg = compose(clean, stack)
        hint = StackHint.from_stack(clean, stack)
        r_good = residual_rmse(execute_plan(deg, good, PERFECT, hint)[0], clean)
        r_bad = residual_rmse(execute_plan(deg, bad, PERFECT, hint)[0], clean)
        assert r_good < 0.02
        assert r_bad >= 2 * r_good and r_bad > r_good


def test_exact_inverse_on_scenarios():
    reg = Registry([ToolSpec(f"{t.name}.p", t, 1.0, 0.0) for t in TaskType])
    for i in range(24):
        seed = S.child("scen", i)
        clean = procedural_scene(24, 24, seed.child("c"))
        stack = scenario_stack(SCENARIOS[i % 4], seed.child("s"))
        hint = StackHint.from_stack(clean, stack)
        out, _ = execute_plan(compose(clean, stack), inverse_plan(hint, reg), reg, hint)
        assert residual_rmse(out, clean) < 0.01


def test_inverse_plan_picks_best_tool_last_first():
    reg = default_registry()
    clean = procedural_scene(16, 16, S)
    stack = DegradationStack((
        DegradationEntry(DegradationKind.noise, NoiseParams(0.02), S.child("a")),
        DegradationEntry(DegradationKind.blur, BlurParams(1), S.child("b")),
    ))
    plan = inverse_plan(StackHint.from_stack(clean, stack), reg)
    assert plan.tool_ids == ("deblur.hq", "denoise.hq")


def test_from_array_grid_unchanged_by_tool():
    img = ImageGrid.full(4, 4, 3, 0.5)
    assert execute_tool(img, ToolSpec("x", TaskType.dejpeg, 0.9, 0.3)) == img
