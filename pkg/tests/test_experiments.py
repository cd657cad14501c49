import pytest

from restoreplan.experiments import AblationResult, DeskPreset, ModeOutcome, mode_ablation, ranking_experiment
from restoreplan.train import MODES

TINY = DeskPreset(sft_epochs=3, mrrhf_epochs=1)


def test_ranking_experiment_smoke(tmp_path):
    res = ranking_experiment(tmp_path, n_train=4, n_test=4, seed=2, preset=TINY)
    assert set(res.percentiles) == {"oracle", "policy_mrrhf", "policy_sft", "predefined", "random_order_and_model"}
    assert res.percentiles["oracle"] == min(res.percentiles.values())
    assert len(res.report.rows) == 5 * 4
    assert isinstance(res.ordered(), bool)


def test_mode_ablation_smoke(tmp_path):
    res = mode_ablation(tmp_path, seeds=[0], n_train=3, preset=TINY)
    assert [o.mode for o in res.outcomes] == list(MODES)
    assert all(-1 < o.final_reward < 1 and 1 <= o.diversity <= 21 for o in res.outcomes)
    # offline-only pools are at most m1, online-only at most m2
    table = res.table()[0]
    assert table["offline_only"].diversity <= 15 and table["online_only"].diversity <= 6
    assert "hybrid" in res.format()


def _outcome(seed, rewards, divs):
    return [ModeOutcome(seed, m, r, d) for m, r, d in zip(MODES, rewards, divs)]


def test_ablation_win_counts():
    res = AblationResult(
        _outcome(0, [0.3, 0.2, 0.1, 0.0], [10, 9, 3, 8])      # both orderings hold
        + _outcome(1, [0.3, 0.1, 0.2, 0.0], [8, 9, 3, 8])     # neither
        + _outcome(2, [0.2, 0.2, 0.1, 0.0], [9, 9, 3, 8.5]))  # reward tie fails; diversity holds
    assert res.reward_order_wins() == 1
    assert res.entropy_diversity_wins() == 2
