import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from restoreplan.errors import PlanError, ValidationError
from restoreplan.features import N_FEATURES
from restoreplan.policy import (
    ActionVocab,
    DecodeState,
    PolicyModel,
    action_distribution,
    action_mask,
    beam_search,
    diverse_beam_search,
    diverse_beam_search_scored,
    encode_input,
    greedy_decode,
    sample_sequence,
    sequence_logprob,
    sequence_logprob_norm,
)
from restoreplan.seeding import root_seed
from restoreplan.tools import Plan, TaskType, default_registry

REG = default_registry()
VOCAB = ActionVocab.from_registry(REG)


def small_vocab(n_tasks=3):
    return ActionVocab([(TaskType(i), f"t{i}") for i in range(n_tasks)])


def random_model(g, vocab=VOCAB, scale=1.0, max_len=3):
    w = g.normal(scale=scale, size=(vocab.size, N_FEATURES + vocab.size + 1))
    return PolicyModel(vocab, w, max_len=max_len)


def test_vocab_layout():
    assert VOCAB.size == 17 and VOCAB.stop == 16
    assert VOCAB.actions[0] == (TaskType.denoise, "denoise.hq")
    plan = Plan.from_text("dehaze.hq > denoise.lite", REG)
    assert VOCAB.decode(VOCAB.encode(plan)) == plan
    assert VOCAB.encode(plan)[-1] == VOCAB.stop
    assert ActionVocab.from_list(VOCAB.to_list()) == VOCAB
    with pytest.raises(PlanError):
        VOCAB.index((TaskType.denoise, "nope"))


def test_input_encoding():
    f = np.arange(N_FEATURES) / 10
    x = encode_input(VOCAB, f, [3, 5])
    assert x.shape == (N_FEATURES + VOCAB.size + 1,)
    assert np.array_equal(x[:N_FEATURES], f)
    assert x[N_FEATURES + 3] == 1 and x[N_FEATURES + 5] == 1 and x[-1] == 1
    assert x[N_FEATURES:-1].sum() == 2


def test_mask_blocks_used_task_and_length():
    model = PolicyModel(VOCAB)
    m = action_mask(model, [VOCAB.index((TaskType.denoise, "denoise.hq"))])
    assert not m[0] and not m[1] and m[2] and m[VOCAB.stop]
    full = action_mask(model, [0, 2, 4])
    assert full.sum() == 1 and full[VOCAB.stop]


@given(st.integers(0, 2**31), st.lists(st.integers(0, 7), max_size=3, unique=True))
def test_distribution_normalized_and_masked(s, tasks):
    g = np.random.default_rng(s)
    model = random_model(g, scale=3.0)
    history = tuple(2 * t + int(g.integers(2)) for t in tasks)
    p = action_distribution(model, DecodeState(g.random(N_FEATURES), history))
    assert abs(p.sum() - 1) < 1e-12
    assert np.all(p >= 0)
    for a in history:
        assert p[VOCAB.task_of == VOCAB.task_of[a]].sum() == 0.0
    if len(history) == model.max_len:
        assert p[VOCAB.stop] == 1.0


def test_invalid_state_rejected():
    model = PolicyModel(VOCAB)
    with pytest.raises(ValidationError):
        action_distribution(model, DecodeState(np.zeros(N_FEATURES), (0, 1)))


def test_model_validation():
    with pytest.raises(ValidationError):
        PolicyModel(VOCAB, np.zeros((3, 3)))
    with pytest.raises(ValidationError):
        PolicyModel(VOCAB, temperature=0.0)
    bad = np.zeros((VOCAB.size, N_FEATURES + VOCAB.size + 1))
    bad[0, 0] = np.nan
    with pytest.raises(ValidationError):
        PolicyModel(VOCAB, bad)


def test_stop_favouring_model_returns_empty_plan():
    w = np.zeros((VOCAB.size, N_FEATURES + VOCAB.size + 1))
    w[VOCAB.stop, -1] = 10.0
    model = PolicyModel(VOCAB, w)
    f = np.zeros(N_FEATURES)
    assert greedy_decode(model, f) == Plan()
    draws = [sample_sequence(model, f, root_seed(1).child("d", i)) for i in range(2000)]
    assert sum(p == Plan() for p in draws) / 2000 > 0.99


def test_uniform_sequence_logprob():
    vocab = small_vocab(3)  # 3 actions + STOP = 4 at the first step
    model = PolicyModel(vocab, max_len=1)
    f = np.zeros(N_FEATURES)
    assert sequence_logprob(model, f, Plan()) == pytest.approx(math.log(1 / 4))
    # after one action only STOP remains
    one = Plan(((TaskType(0), "t0"),))
    assert sequence_logprob(model, f, one) == pytest.approx(math.log(1 / 4))
    assert sequence_logprob_norm(model, f, one) == pytest.approx(math.log(1 / 4) / 2)


def test_masked_plan_has_minus_inf():
    model = PolicyModel(small_vocab(3), max_len=1)
    two = Plan(((TaskType(0), "t0"), (TaskType(1), "t1")))
    assert sequence_logprob(model, np.zeros(N_FEATURES), two) == -math.inf
    assert sequence_logprob_norm(model, np.zeros(N_FEATURES), two) == -math.inf


def test_checkpoint_roundtrip(tmp_path):
    model = random_model(np.random.default_rng(3)).with_temperature(0.7)
    model.save(tmp_path / "m.json")
    back = PolicyModel.load(tmp_path / "m.json")
    assert back.vocab == model.vocab
    assert np.array_equal(back.weights, model.weights)
    assert back.temperature == 0.7 and back.max_len == 3


def test_sampling_deterministic_and_matches_distribution():
    g = np.random.default_rng(0)
    vocab = small_vocab(3)
    model = random_model(g, vocab, scale=0.7, max_len=1)
    f = g.random(N_FEATURES)
    p = action_distribution(model, DecodeState(f))
    counts = np.zeros(vocab.size)
    for i in range(4000):
        plan = sample_sequence(model, f, root_seed(4).child("s", i))
        counts[vocab.encode(plan)[0]] += 1
    assert sample_sequence(model, f, root_seed(4).child("s", 9)) == sample_sequence(model, f, root_seed(4).child("s", 9))
    assert np.all(np.abs(counts / 4000 - p) < 0.03)


def test_temperature_flattens():
    g = np.random.default_rng(1)
    model = random_model(g, scale=2.0)
    f = g.random(N_FEATURES)
    sharp = action_distribution(model.with_temperature(0.5), DecodeState(f))
    flat = action_distribution(model.with_temperature(5.0), DecodeState(f))
    ent = lambda p: -np.sum(p[p > 0] * np.log(p[p > 0]))
    assert ent(flat) > ent(sharp)


def brute_force_best(model, f):
    # every plan up to max_len scored by summed log-prob
    from itertools import permutations
    vocab = model.vocab
    plans = [Plan()]
    for k in range(1, model.max_len + 1):
        for seq in permutations(range(vocab.size - 1), k):
            if len({vocab.task_of[a] for a in seq}) == k:
                plans.append(vocab.decode(seq))
    scored = sorted(((sequence_logprob(model, f, p), p) for p in plans), key=lambda t: -t[0])
    return scored


def test_beam_search_full_width_is_exact():
    g = np.random.default_rng(5)
    vocab = small_vocab(3)
    model = random_model(g, vocab, scale=1.5)
    f = g.random(N_FEATURES)
    exact = brute_force_best(model, f)
    beams = beam_search(model, f, len(exact))
    assert beams[0][0] == exact[0][1]
    assert beams[0][1] == pytest.approx(exact[0][0])
    assert sorted(round(s, 9) for _, s in beams) == sorted(round(s, 9) for s, _ in exact)


@pytest.mark.parametrize("i", range(20))
def test_diverse_beam_reduces_to_beam(i):
    g = np.random.default_rng(100 + i)
    model = random_model(g, scale=float(g.uniform(0.1, 3)))
    f = g.random(N_FEATURES)
    width = int(g.integers(1, 6))
    plain = beam_search(model, f, width)
    dbs = diverse_beam_search_scored(model, f, beams_per_group=width, groups=1, diversity_penalty=0.0)
    assert [p for p, _ in dbs] == [p for p, _ in plain]
    assert np.allclose([s for _, s in dbs], [s for _, s in plain])


def test_diverse_beam_uniform_defaults():
    model = PolicyModel(VOCAB)
    plans = diverse_beam_search(model, np.zeros(N_FEATURES))
    assert len(set(plans)) >= 10


def test_diversity_penalty_separates_groups():
    model = PolicyModel(small_vocab(3))
    f = np.zeros(N_FEATURES)
    one = diverse_beam_search(model, f, beams_per_group=1, groups=1, diversity_penalty=2.0)
    two = diverse_beam_search_scored(model, f, beams_per_group=1, groups=2, diversity_penalty=2.0)
    assert len(two) == 2
    first_actions = {model.vocab.encode(p)[0] for p, _ in two}
    assert len(first_actions) == 2
    assert one[0] in [p for p, _ in two]


@given(st.integers(0, 2**31))
def test_greedy_is_stepwise_argmax(s):
    g = np.random.default_rng(s)
    vocab = small_vocab(int(g.integers(1, 5)))
    model = random_model(g, vocab, scale=2.0, max_len=int(g.integers(1, 3)))
    f = g.random(N_FEATURES)
    actions = vocab.encode(greedy_decode(model, f))
    for i, a in enumerate(actions):
        p = action_distribution(model, DecodeState(f, tuple(actions[:i])))
        assert p[a] == p.max()
    # no other plan of the same length beats it on the normalized score
    best = sequence_logprob_norm(model, f, greedy_decode(model, f))
    for _, plan in brute_force_best(model, f):
        if len(plan) == len(actions) - 1 and plan.steps[:1] == greedy_decode(model, f).steps[:1]:
            assert sequence_logprob_norm(model, f, plan) <= best + 1e-12
