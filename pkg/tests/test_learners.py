import numpy as np
import pytest
from sklearn.base import clone

from eqlab import FunctionStrategy, SelfPlayLearner, SequentialAuction, StackelbergBertrand, rollout
from eqlab import learners as learners_mod
from eqlab.exceptions import ConfigurationError, DomainError, NumericFaultError
from eqlab.learners import PolicyGroup, gae, reinforce_gradient, standardize_returns
from eqlab.policies import GaussianPolicy


def test_standardize_returns():
    r = standardize_returns([1.0, 2.0, 3.0])
    assert r.mean() == pytest.approx(0.0) and r.std() == pytest.approx(1.0)
    assert np.array_equal(standardize_returns([2.0, 2.0]), [0.0, 0.0])


def test_gae_skips_inactive_steps():
    values = np.array([[0.5, 0.9, 0.2], [0.1, 0.0, 0.4]])
    active = np.array([[True, False, True], [True, True, False]])
    rewards = np.array([[0.0, 0.0, 1.0], [0.0, 2.0, 0.0]])
    adv, ret = gae(values, rewards, active, lam=1.0, gamma=1.0)
    # with lam = gamma = 1 the target is the final reward at every active step
    assert np.allclose(ret[active], [1.0, 1.0, 2.0, 2.0])
    assert np.all(adv[~active] == 0)
    adv0, _ = gae(values, rewards, active, lam=0.0, gamma=1.0)
    assert adv0[0, 0] == pytest.approx(0.2 - 0.5)  # one-step TD across the gap


def test_reinforce_gradient_is_an_ascent_direction():
    # bandit: the lone bidder faces a fixed 0.3 bid and gains from winning cheaply
    game = SequentialAuction("first_price", 2, 1)
    rng = np.random.default_rng(0)
    pol = GaussianPolicy(game, 0, hidden=(8,), init_log_std=-1.5, rng=rng, dtype=np.float64)
    opp = FunctionStrategy(lambda s, t: np.full(len(s), 0.3), "const")
    group = PolicyGroup(pol, [0])

    def utility():
        # same seed, so the policy noise is shared between the two evaluations
        return rollout(game, [pol, opp], 2**15, 11).utilities[:, 0].mean()

    before = utility()
    batch = rollout(game, [pol, opp], 2**14, 5)
    grads = reinforce_gradient(group, game, batch)
    params = [p + 0.05 * g / (np.linalg.norm(g) + 1e-12) for p, g in zip(pol.params, grads)]
    pol.set_params(params)
    assert utility() > before


def _small(**kw):
    base = dict(batch_size=256, iterations=3, hidden=(8,), seed=3)
    base.update(kw)
    return SelfPlayLearner(**base)


def test_fit_is_deterministic():
    game = SequentialAuction("first_price", 3, 2)
    a = _small().fit(game).state_dict()
    b = _small().fit(game).state_dict()
    assert a == b
    c = _small(seed=4).fit(game).state_dict()
    assert a != c


def test_sharing_modes():
    game = SequentialAuction("first_price", 3, 2)
    assert len(_small(iterations=0).fit(game).groups_) == 1
    assert len(_small(iterations=0, sharing="independent").fit(game).groups_) == 3
    with pytest.raises(ConfigurationError):
        _small(sharing="shared").fit(StackelbergBertrand())
    assert len(_small(iterations=0).fit(StackelbergBertrand()).groups_) == 2


def test_ppo_runs_and_records_curve():
    game = SequentialAuction("first_price", 3, 2)
    rows = []
    est = _small(algo="ppo", eval_every=2, eval_batch=512, callback=rows.append, normalize_reward=True)
    est.fit(game)
    assert [r["iteration"] for r in est.curve_] == [2, 3]
    assert rows == est.curve_
    assert {"util_0", "loss_equ_2", "l2_1"} <= set(est.curve_[0])
    assert est.skipped_minibatches_ == 0


def test_invalid_parameters():
    game = SequentialAuction()
    for kw in [dict(algo="sarsa"), dict(sharing="some"), dict(learning_rate=0.0), dict(batch_size=1),
               dict(lr_schedule="cosine"), dict(dtype="float16"), dict(algo="ppo", epochs=0)]:
        with pytest.raises((ConfigurationError, DomainError)):
            _small(**kw).fit(game)


def test_linear_schedule_decays_to_zero():
    est = _small(lr_schedule="linear", iterations=4, learning_rate=0.1)
    assert [est._lr_at(i) for i in range(4)] == pytest.approx([0.1, 0.075, 0.05, 0.025])


def test_divergence_restores_last_good_parameters(monkeypatch):
    game = SequentialAuction("first_price", 2, 1)
    real = learners_mod.reinforce_gradient
    calls = []

    def poisoned(group, g, batch):
        grads = real(group, g, batch)
        calls.append(1)
        if len(calls) == 2:
            grads[0] = grads[0] * np.nan
        return grads

    monkeypatch.setattr(learners_mod, "reinforce_gradient", poisoned)
    est = _small(iterations=5)
    with pytest.raises(NumericFaultError) as err:
        est.fit(game)
    assert est.failed_iteration_ == 1 and err.value.index == 1
    for g in est.groups_:
        g.policy.check_finite()


def test_predict_and_clone():
    game = SequentialAuction("first_price", 3, 2)
    est = _small().fit(game)
    out = est.predict(np.array([[0.5, 0.1, 0.2]]), player=1, stage=2)
    assert out.shape == (1, 1)
    fresh = clone(est)
    assert fresh.get_params()["batch_size"] == 256 and not hasattr(fresh, "profile_")
