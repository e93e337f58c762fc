import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from eqlab import (
    EliminationContest,
    FunctionStrategy,
    PriorModel,
    RiskTransform,
    SequentialAuction,
    StackelbergBertrand,
    equilibrium_profile,
    rollout,
)
from eqlab.environments import bertrand_payoffs, contest_payoffs, seq_auction_step, tullock_weight
from eqlab.exceptions import ConfigurationError, DomainError


def test_seq_auction_step_prices():
    assert seq_auction_step("first_price", [0.2, 0.7, 0.5]) == (1, 0.7)
    assert seq_auction_step("second_price", [0.2, 0.7, 0.5]) == (1, 0.5)
    with pytest.raises(ConfigurationError):
        seq_auction_step("first_price", [0.3])


def test_seq_auction_ties_are_uniform():
    rng = np.random.default_rng(0)
    wins = [seq_auction_step("first_price", [0.5, 0.5, 0.1], rng)[0] for _ in range(4000)]
    share = np.mean(np.array(wins) == 0)
    assert 0.46 < share < 0.54
    assert 2 not in wins


@given(st.lists(st.floats(0, 2), min_size=2, max_size=6))
def test_seq_auction_winner_bids_highest(bids):
    w, price = seq_auction_step("second_price", bids)
    assert bids[w] == max(bids)
    assert price <= bids[w]


def test_winners_leave_and_pay():
    game = SequentialAuction("second_price", 4, 3)
    batch = rollout(game, equilibrium_profile(game), 3000, 4)
    won = batch.state["won"]
    assert np.all(won.sum(axis=1) == 3)
    paid = batch.state["price_paid"]
    assert np.all(paid[~won] == 0)
    # second price never exceeds the winner's own bid
    for t in range(3):
        bids = batch.actions[:, t, :, 0]
        assert np.all(batch.state["prices"][:, t] <= bids.max(axis=1) + 1e-15)


def test_signal_hides_prices_when_not_revealed():
    game = SequentialAuction("first_price", 3, 2, reveal_prices=False)
    assert game.signal_layout(0, 2) == (("obs",), ("action", 1, 0))
    assert game.signal_space(0, 2).dim == 2


def test_risk_averse_utilities():
    risk = RiskTransform(1.0)
    game = SequentialAuction("first_price", 2, 1, risk=risk)
    neutral = SequentialAuction("first_price", 2, 1)
    eq = equilibrium_profile(neutral)
    a = rollout(game, eq, 1000, 0).utilities
    b = rollout(neutral, eq, 1000, 0).utilities
    assert np.allclose(a, -np.expm1(-b))
    assert game.utility_bound >= np.abs(a).max()


def test_tullock_weight():
    assert tullock_weight(0.0, 0.0) == 0.5
    assert tullock_weight(1.0, 3.0) == 0.25
    assert tullock_weight(3.0, 1.0) + tullock_weight(1.0, 3.0) == 1.0


def test_contest_payoffs_by_hand():
    # groups (0,1) and (2,3); finalists 1 and 2
    u = contest_payoffs([0.1, 0.2, 0.3, 0.0], [0.1, 0.3], [1.0, 1.2, 1.4, 1.1])
    assert u[0] == pytest.approx(-0.1)
    assert u[3] == pytest.approx(0.0)
    assert u[1] == pytest.approx(0.25 * 1.2 - 0.1 - 0.2)
    assert u[2] == pytest.approx(0.75 * 1.4 - 0.3 - 0.3)
    with pytest.raises(DomainError):
        contest_payoffs([-0.1, 0, 0, 0], [0, 0], [1, 1, 1, 1])


@pytest.mark.parametrize("reveal", ["valuations", "bids"])
def test_contest_reveals_other_group_winner(reveal):
    game = EliminationContest(reveal=reveal)
    batch = rollout(game, equilibrium_profile(game), 2000, 5)
    fin = batch.state["finalist"]
    assert np.all(fin[:, :2].sum(1) == 1) and np.all(fin[:, 2:].sum(1) == 1)
    assert np.array_equal(batch.active[:, 1], fin)
    src = batch.state["obs"] if reveal == "valuations" else batch.actions[:, 0, :, 0]
    winner_b = np.argmax(fin[:, 2:], axis=1) + 2
    rows = np.arange(2000)
    assert np.allclose(batch.signals[1][:, 0, 2], src[rows, winner_b])
    assert np.allclose(batch.signals[1][:, 1, 2], src[rows, winner_b])


def test_contest_equilibrium_bids_stay_in_box():
    game = EliminationContest()
    batch = rollout(game, equilibrium_profile(game), 2000, 6)
    assert np.array_equal(batch.raw_actions, batch.actions)


def test_bertrand_payoffs_rules():
    u = bertrand_payoffs([0.6, 0.6, 0.6], [0.6, 0.8, 0.5], [0.2] * 3, [0.1] * 3)
    # a tie goes to the follower
    assert np.allclose(u[0], [0.0, 0.5 * 9.4])
    assert np.allclose(u[1], [0.4 * 9.4, 0.0])
    assert np.allclose(u[2], [0.0, 0.4 * 9.5])


def test_bertrand_follower_sees_leader_price():
    game = StackelbergBertrand()
    batch = rollout(game, equilibrium_profile(game), 500, 0)
    assert np.array_equal(batch.signals[1][:, 1, 1], batch.actions[:, 0, 0, 0])
    assert not batch.active[:, 0, 1].any() and not batch.active[:, 1, 0].any()
    assert game.acts(0, 1) and not game.acts(0, 2)


def test_bertrand_common_value_prior():
    game = StackelbergBertrand(prior=PriorModel("affiliated", 2))
    batch = rollout(game, [FunctionStrategy(lambda s, t: np.full(len(s), 3.0))] * 2, 200, 1)
    assert np.all(np.isfinite(batch.utilities))


def test_game_constructor_errors():
    with pytest.raises(ConfigurationError):
        SequentialAuction("first_price", 2, 2)
    with pytest.raises(ConfigurationError):
        SequentialAuction("english", 3, 2)
    with pytest.raises(ConfigurationError):
        EliminationContest(reveal="nothing")
    with pytest.raises(ConfigurationError):
        StackelbergBertrand(demand_intercept=-1)
