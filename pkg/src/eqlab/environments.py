"""Game families: sequential sales, elimination contest, Stackelberg-Bertrand."""

import numpy as np

from .core import Box, MultiStageGame
from .exceptions import ConfigurationError, DomainError
from .priors import PriorModel, RiskTransform, apply_risk

MECHANISMS = ("first_price", "second_price")


def _risk_bound(risk, lo, hi):
    """max |h(x)| for payoffs x in [lo, hi]."""
    return float(max(abs(apply_risk(risk, lo)), abs(apply_risk(risk, hi))))


def _pick_max(bids, eligible, keys):
    """Index of the highest eligible bid per row; ties go to the largest key."""
    masked = np.where(eligible, bids, -np.inf)
    best = masked.max(axis=1, keepdims=True)
    cand = eligible & (masked == best)
    return np.argmax(np.where(cand, keys, -1.0), axis=1)


def auction_round(bids, eligible, mechanism, keys):
    """Vectorized sealed-bid round: returns (winner, price) per row."""
    rows = np.arange(bids.shape[0])
    winner = _pick_max(bids, eligible, keys)
    if mechanism == "first_price":
        price = bids[rows, winner]
    else:
        others = eligible.copy()
        others[rows, winner] = False
        price = np.where(others, bids, -np.inf).max(axis=1)
    return winner, price


def seq_auction_step(mechanism, bids, rng=None):
    """Allocate one unit among the given bids.

    Returns ``(winner, price)``; the price is the winner's bid under first
    price and the highest losing bid under second price. Ties are broken
    uniformly at random with ``rng``.
    """
    if mechanism not in MECHANISMS:
        raise ConfigurationError(f"mechanism must be one of {MECHANISMS}, got {mechanism!r}")
    bids = np.asarray(bids, dtype=np.float64).ravel()
    if bids.size < 2:
        raise ConfigurationError("an auction round needs at least 2 active bidders")
    rng = np.random.default_rng(0) if rng is None else rng
    keys = rng.random(bids.size)[None]
    winner, price = auction_round(bids[None], np.ones((1, bids.size), bool), mechanism, keys)
    return int(winner[0]), float(price[0])


class SequentialAuction(MultiStageGame):
    """T identical units sold one per stage to N unit-demand bidders.

    Stage-t signal of bidder i: ``[x_i, a_i1..a_i(t-1), p_1..p_(t-1)]``
    (prices only when ``reveal_prices``). Winners stay in the game as
    inactive players with the sentinel bid 0.
    """

    def __init__(self, mechanism="first_price", n_bidders=3, n_stages=2, prior=None,
                 risk=None, reveal_prices=True):
        if mechanism not in MECHANISMS:
            raise ConfigurationError(f"mechanism must be one of {MECHANISMS}, got {mechanism!r}")
        if n_bidders <= n_stages:
            raise ConfigurationError(f"need n_bidders > n_stages, got N={n_bidders}, T={n_stages}")
        if n_stages < 1:
            raise ConfigurationError("n_stages must be >= 1")
        self.mechanism = mechanism
        self.n_players = int(n_bidders)
        self.n_stages = int(n_stages)
        self.prior = prior or PriorModel("independent_uniform", self.n_players)
        if self.prior.n_agents != self.n_players:
            raise ConfigurationError("prior.n_agents must equal n_bidders")
        self.risk = risk or RiskTransform(0.0)
        self.reveal_prices = bool(reveal_prices)
        self.nature_keys = ("values", "obs")
        self.bid_cap = 2.0 * max(self.prior.high)
        self.symmetric = self.prior.common_value or len(set(zip(self.prior.low, self.prior.high))) == 1

    def signal_layout(self, player, stage):
        layout = [("obs",)] + [("action", r, 0) for r in range(1, stage)]
        if self.reveal_prices:
            layout += [("price", r) for r in range(1, stage)]
        return tuple(layout)

    def signal_space(self, player, stage):
        lo, hi = self.prior.observation_bounds(player)
        k = len(self.signal_layout(player, stage)) - 1
        return Box.of((lo, hi), *[(0.0, self.bid_cap)] * k)

    def action_space(self, player, stage):
        return Box.of((0.0, self.bid_cap))

    @property
    def utility_bound(self):
        vmax = max(self.prior.value_bounds(i)[1] for i in range(self.n_players))
        return _risk_bound(self.risk, -self.bid_cap, vmax)

    def initial_state(self, n, rng):
        values, obs = self.prior.sample(n, rng)
        return {
            "values": values,
            "obs": obs,
            "won": np.zeros((n, self.n_players), bool),
            "price_paid": np.zeros((n, self.n_players)),
            "bids": np.zeros((n, self.n_stages, self.n_players)),
            "prices": np.zeros((n, self.n_stages)),
        }

    def signals(self, state, stage):
        n = state["obs"].shape[0]
        parts = [state["obs"][:, :, None], state["bids"][:, : stage - 1, :].transpose(0, 2, 1)]
        if self.reveal_prices:
            prices = state["prices"][:, None, : stage - 1]
            parts.append(np.broadcast_to(prices, (n, self.n_players, stage - 1)))
        return np.concatenate(parts, axis=2)

    def active(self, state, stage):
        return ~state["won"]

    def transition(self, state, stage, actions, rng):
        n = actions.shape[0]
        keys = rng.random((n, self.n_players))
        bids = actions[:, :, 0]
        eligible = ~state["won"]
        winner, price = auction_round(bids, eligible, self.mechanism, keys)
        rows = np.arange(n)
        new = dict(state)
        new["won"] = state["won"].copy()
        new["won"][rows, winner] = True
        new["price_paid"] = state["price_paid"].copy()
        new["price_paid"][rows, winner] = price
        new["bids"] = state["bids"].copy()
        new["bids"][:, stage - 1] = bids
        new["prices"] = state["prices"].copy()
        new["prices"][:, stage - 1] = price
        return new

    def utilities(self, state):
        payoff = np.where(state["won"], state["values"] - state["price_paid"], 0.0)
        return apply_risk(self.risk, payoff)

    def describe(self):
        return {
            "game": "sequential_auction",
            "mechanism": self.mechanism,
            "n_bidders": self.n_players,
            "n_stages": self.n_stages,
            "prior": self.prior.to_dict(),
            "rho": self.risk.rho,
            "reveal_prices": self.reveal_prices,
        }


GROUPS = ((0, 1), (2, 3))
OPPONENT_GROUP = np.array([1, 1, 0, 0])


def tullock_weight(a_i, a_j):
    """Winning probability a_i / (a_i + a_j), 1/2 when both are zero."""
    a_i = np.asarray(a_i, dtype=np.float64)
    a_j = np.asarray(a_j, dtype=np.float64)
    total = a_i + a_j
    safe = np.where(total > 0, total, 1.0)
    return np.where(total > 0, a_i / safe, 0.5)


def contest_payoffs(round1_bids, round2_bids, values, risk=None, rng=None):
    """Utilities of the 4-player elimination contest.

    ``round2_bids`` are the final bids of the two group winners, in group
    order. Ties in round 1 are broken uniformly at random with ``rng``.
    """
    a1 = np.asarray(round1_bids, dtype=np.float64).reshape(4)
    a2 = np.asarray(round2_bids, dtype=np.float64).reshape(2)
    v = np.asarray(values, dtype=np.float64).reshape(4)
    if np.any(a1 < 0) or np.any(a2 < 0):
        raise DomainError("contest bids must be non-negative")
    rng = np.random.default_rng(0) if rng is None else rng
    keys = rng.random(4)
    winners = _contest_winners(a1[None], keys[None])[0]
    full_a2 = np.zeros(4)
    full_a2[winners] = a2
    final = np.zeros(4, bool)
    final[winners] = True
    out = _contest_utilities(v[None], a1[None], full_a2[None], final[None], risk or RiskTransform())
    return out[0]


def _contest_winners(a1, keys):
    """Round-1 winner index of each group, shape (n, 2)."""
    out = []
    for g in GROUPS:
        pair = a1[:, list(g)]
        out.append(np.array(g)[_pick_max(pair, np.ones_like(pair, bool), keys[:, list(g)])])
    return np.stack(out, axis=1)


def _contest_utilities(values, a1, a2, finalist, risk):
    # opponent in round 2 is the finalist of the other group
    fin_a2 = np.where(finalist, a2, 0.0)
    group_a2 = np.stack([fin_a2[:, :2].sum(1), fin_a2[:, 2:].sum(1)], axis=1)
    opp_a2 = group_a2[:, OPPONENT_GROUP]
    w = tullock_weight(a2, opp_a2)
    payoff = np.where(finalist, w * values - a2 - a1, -a1)
    return apply_risk(risk, payoff)


class EliminationContest(MultiStageGame):
    """Two-round contest: all-pay auctions in groups (0,1), (2,3), then a
    Tullock final between the group winners.

    Stage-2 signal of player i: ``[x_i, a_i1, r]`` where ``r`` is the
    observation (``reveal="valuations"``) or round-1 bid (``reveal="bids"``)
    of the other group's winner. Round-1 losers are inactive in stage 2.
    """

    n_players = 4
    n_stages = 2

    def __init__(self, prior=None, risk=None, reveal="valuations"):
        if reveal not in ("valuations", "bids"):
            raise ConfigurationError(f"reveal must be 'valuations' or 'bids', got {reveal!r}")
        self.prior = prior or PriorModel("independent_uniform", 4, low=1.0, high=1.5)
        if self.prior.n_agents != 4:
            raise ConfigurationError("the elimination contest has exactly 4 players")
        self.risk = risk or RiskTransform(0.0)
        self.reveal = reveal
        self.bid_cap = 2.0
        self.nature_keys = ("values", "obs")
        self.symmetric = self.prior.common_value or len(set(zip(self.prior.low, self.prior.high))) == 1

    def signal_layout(self, player, stage):
        if stage == 1:
            return (("obs",),)
        return (("obs",), ("action", 1, 0), ("revealed",))

    def signal_space(self, player, stage):
        lo, hi = self.prior.observation_bounds(player)
        if stage == 1:
            return Box.of((lo, hi))
        if self.reveal == "bids":
            rev = (0.0, self.bid_cap)
        else:
            others = GROUPS[OPPONENT_GROUP[player]]
            rev = (min(self.prior.low[j] for j in others), max(self.prior.high[j] for j in others))
        return Box.of((lo, hi), (0.0, self.bid_cap), rev)

    def action_space(self, player, stage):
        return Box.of((0.0, self.bid_cap))

    @property
    def utility_bound(self):
        vmax = max(self.prior.value_bounds(i)[1] for i in range(4))
        return _risk_bound(self.risk, -2 * self.bid_cap, vmax)

    def initial_state(self, n, rng):
        values, obs = self.prior.sample(n, rng)
        return {
            "values": values,
            "obs": obs,
            "a1": np.zeros((n, 4)),
            "a2": np.zeros((n, 4)),
            "finalist": np.zeros((n, 4), bool),
            "revealed": np.zeros((n, 4)),
        }

    def signals(self, state, stage):
        if stage == 1:
            return state["obs"][:, :, None].copy()
        return np.stack([state["obs"], state["a1"], state["revealed"]], axis=2)

    def active(self, state, stage):
        if stage == 1:
            return np.ones_like(state["finalist"])
        return state["finalist"]

    def transition(self, state, stage, actions, rng):
        n = actions.shape[0]
        keys = rng.random((n, 4))
        new = dict(state)
        if stage == 1:
            a1 = actions[:, :, 0]
            winners = _contest_winners(a1, keys)
            rows = np.arange(n)[:, None]
            finalist = np.zeros((n, 4), bool)
            finalist[rows, winners] = True
            source = state["obs"] if self.reveal == "valuations" else a1
            info = source[rows, winners]  # (n, 2) per group
            new["a1"] = a1.copy()
            new["finalist"] = finalist
            new["revealed"] = info[:, OPPONENT_GROUP]
        else:
            new["a2"] = actions[:, :, 0].copy()
        return new

    def utilities(self, state):
        return _contest_utilities(state["values"], state["a1"], state["a2"], state["finalist"], self.risk)

    def describe(self):
        return {
            "game": "elimination_contest",
            "prior": self.prior.to_dict(),
            "rho": self.risk.rho,
            "reveal": self.reveal,
        }


def bertrand_profit(price, cost, intercept=10.0):
    return (price - cost) * (intercept - price)


def bertrand_payoffs(p1, p2, c1, c2, risk=None, intercept=10.0):
    """Utilities (leader, follower); the leader wins only if ``p1 < p2``."""
    p1, p2, c1, c2 = (np.asarray(x, dtype=np.float64) for x in (p1, p2, c1, c2))
    leader_wins = p1 < p2
    u1 = np.where(leader_wins, bertrand_profit(p1, c1, intercept), 0.0)
    u2 = np.where(leader_wins, 0.0, bertrand_profit(p2, c2, intercept))
    risk = risk or RiskTransform()
    out = np.stack([apply_risk(risk, u1), apply_risk(risk, u2)], axis=-1)
    return out


class StackelbergBertrand(MultiStageGame):
    """Price competition: the leader (player 0) posts ``p1`` at stage 1, the
    follower (player 1) observes it and posts ``p2`` at stage 2.

    With a common-value prior the observations are cost signals and the
    realized common cost enters the winner's profit.
    """

    n_players = 2
    n_stages = 2

    def __init__(self, prior=None, risk=None, demand_intercept=10.0):
        self.prior = prior or PriorModel("bertrand_cost", 2)
        if self.prior.n_agents != 2:
            raise ConfigurationError("Stackelberg-Bertrand has exactly 2 firms")
        self.risk = risk or RiskTransform(0.0)
        self.intercept = float(demand_intercept)
        if self.intercept <= 0:
            raise ConfigurationError("demand_intercept must be positive")
        self.price_cap = self.intercept
        self.nature_keys = ("values", "obs")

    def acts(self, player, stage):
        return player == stage - 1

    def signal_layout(self, player, stage):
        if stage == 1:
            return (("obs",),)
        return (("obs",), ("action", 1, 0)) if player == 0 else (("obs",), ("price", 1))

    def signal_space(self, player, stage):
        lo, hi = self.prior.observation_bounds(player)
        if stage == 1:
            return Box.of((lo, hi))
        return Box.of((lo, hi), (0.0, self.price_cap))

    def action_space(self, player, stage):
        return Box.of((0.0, self.price_cap))

    @property
    def utility_bound(self):
        cmax = max(self.prior.high)
        top = (self.intercept / 2) ** 2
        return _risk_bound(self.risk, -cmax * self.intercept, top)

    def initial_state(self, n, rng):
        values, obs = self.prior.sample(n, rng)
        return {"values": values, "obs": obs, "prices": np.zeros((n, 2))}

    def signals(self, state, stage):
        obs = state["obs"]
        if stage == 1:
            return obs[:, :, None].copy()
        p1 = state["prices"][:, 0]
        return np.stack([obs, np.stack([p1, p1], axis=1)], axis=2)

    def active(self, state, stage):
        act = np.zeros((state["obs"].shape[0], 2), bool)
        act[:, stage - 1] = True
        return act

    def transition(self, state, stage, actions, rng):
        new = dict(state)
        new["prices"] = state["prices"].copy()
        new["prices"][:, stage - 1] = actions[:, stage - 1, 0]
        return new

    def utilities(self, state):
        cost = state["values"]
        p = state["prices"]
        return bertrand_payoffs(p[:, 0], p[:, 1], cost[:, 0], cost[:, 1], self.risk, self.intercept)

    def describe(self):
        return {
            "game": "stackelberg_bertrand",
            "prior": self.prior.to_dict(),
            "rho": self.risk.rho,
            "demand_intercept": self.intercept,
        }
