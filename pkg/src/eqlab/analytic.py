"""Closed-form equilibrium strategies for the three game families."""

import numpy as np

from .core import Strategy
from .environments import EliminationContest, SequentialAuction, StackelbergBertrand
from .exceptions import ConfigurationError, ConvergenceError, DomainError

LOG_1_25 = np.log(1.25)
CONTEST_LOW, CONTEST_HIGH = 1.0, 1.5


def bisect_increasing(fn, target, lo, hi, tol=1e-13, max_iter=200):
    """Vectorized bisection for ``fn(x) = target`` with ``fn`` nondecreasing on ``[lo, hi]``.

    Assumes ``fn(lo) <= target <= fn(hi)``; raises :class:`ConvergenceError`
    if the bracket is still wider than ``tol`` after ``max_iter`` halvings.
    """
    target = np.asarray(target, dtype=np.float64)
    lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), target.shape).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), target.shape).copy()
    for _ in range(max_iter):
        if np.all(hi - lo <= tol):
            break
        mid = 0.5 * (lo + hi)
        below = fn(mid) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    else:
        if np.any(hi - lo > tol):
            raise ConvergenceError(f"bisection did not reach tol={tol} in {max_iter} iterations")
    return 0.5 * (lo + hi)


# sequential auctions


def seq_auction_factor(mechanism, n_bidders, n_stages, stage):
    n, t_max, t = n_bidders, n_stages, stage
    if not 1 <= t_max < n:
        raise DomainError(f"need 1 <= T < N, got N={n}, T={t_max}")
    if not 1 <= t <= t_max:
        raise DomainError(f"stage must be in 1..{t_max}, got {t}")
    if mechanism == "first_price":
        return (n - t_max) / (n - t + 1)
    if mechanism == "second_price":
        return (n - t_max) / (n - t)
    raise ConfigurationError(f"unknown mechanism {mechanism!r}")


def seq_auction_eq(mechanism, n_bidders, n_stages, stage, v):
    """Symmetric equilibrium bid of the t-th sale for value ``v``."""
    factor = seq_auction_factor(mechanism, n_bidders, n_stages, stage)
    out = np.asarray(v, dtype=np.float64) * factor
    return float(out) if out.ndim == 0 else out


# elimination contest, values uniform on [1, 1.5]


def contest_we(v):
    """Round-1 effort when valuations are revealed (log1p form, exact zero at v = 1)."""
    v = np.asarray(v, dtype=np.float64)
    l1 = np.log1p((v - 1.0) / 2.0)
    l2 = np.log1p((v - 1.0) / 2.5)
    v4m1 = (v * v - 1.0) * (v * v + 1.0)
    poly = -8.5 * v + 3.5 * v**2 - 2.0 * v**3 + 7.0
    out = 4.0 * v4m1 * (LOG_1_25 - l1) + (4.0 * v**4 + 6.75) * l2 + poly
    return float(out) if out.ndim == 0 else out


def contest_se(v):
    """Signalling premium added to round-1 effort when bids are revealed."""
    v = np.asarray(v, dtype=np.float64)
    l1 = np.log1p((v - 1.0) / 2.0)
    l2 = np.log1p((v - 1.0) / 2.5)
    k1 = -8.0 + 8.0 * v**2 + 16.0 * v**3 - 16.0 * v**4
    k2 = -9.0 - 8.0 * v**2 - 16.0 * v**3 + 16.0 * v**4
    poly = -16.0 * v - 135.0 / (2.0 * v + 3.0) + 18.0 * v**2 - 8.0 * v**3 + 33.0
    out = k1 * (l1 - LOG_1_25) + k2 * l2 + poly
    out = np.where(v == 1.0, 0.0, out)
    return float(out) if out.ndim == 0 else out


def contest_eq_round1(info, v):
    if info == "valuations":
        return contest_we(v)
    if info == "bids":
        out = np.asarray(contest_we(v)) + np.asarray(contest_se(v))
        return float(out) if out.ndim == 0 else out
    raise ConfigurationError(f"info must be 'valuations' or 'bids', got {info!r}")


def invert_round1_bid(bid, info="bids"):
    """Valuation whose round-1 equilibrium bid is ``bid``.

    Bids outside the range of the round-1 strategy are clamped to its
    endpoints first.
    """
    bid = np.asarray(bid, dtype=np.float64)
    lo_b = contest_eq_round1(info, CONTEST_LOW)
    hi_b = contest_eq_round1(info, CONTEST_HIGH)
    target = np.clip(bid, lo_b, hi_b)
    out = bisect_increasing(lambda x: contest_eq_round1(info, x), target, CONTEST_LOW, CONTEST_HIGH)
    return float(out) if out.ndim == 0 else out


def contest_eq_round2(v_i, revealed, info="valuations"):
    """Final-round effort ``v_i^2 v_j / (v_i + v_j)^2``.

    ``revealed`` is the opponent's valuation or, for ``info="bids"``, its
    round-1 bid, which is inverted through the round-1 strategy.
    """
    v_i = np.asarray(v_i, dtype=np.float64)
    v_j = np.asarray(revealed, dtype=np.float64)
    if info == "bids":
        v_j = np.asarray(invert_round1_bid(v_j, "bids"))
    elif info != "valuations":
        raise ConfigurationError(f"info must be 'valuations' or 'bids', got {info!r}")
    out = v_i**2 * v_j / (v_i + v_j) ** 2
    return float(out) if out.ndim == 0 else out


# Stackelberg-Bertrand, costs with CDF c/2 + c^2/2, demand 10 - p


def bertrand_leader_inverse(p):
    """Cost type whose equilibrium leader price is ``p``."""
    p = np.asarray(p, dtype=np.float64)
    out = (4 * p**3 - 27 * p**2 - 24 * p + 20) / (3 * p**2 - 18 * p - 12)
    return float(out) if out.ndim == 0 else out


def bertrand_leader_eq(c1):
    """Leader price, by bisection of the inverse on ``[c, 1]``."""
    c = np.asarray(c1, dtype=np.float64)
    if np.any((c < 0) | (c > 1)):
        raise DomainError("leader cost must lie in [0, 1]")
    out = bisect_increasing(bertrand_leader_inverse, c, c, 1.0, tol=1e-14)
    return float(out) if out.ndim == 0 else out


def monopoly_price(c, intercept=10.0):
    """argmax_p (p - c)(intercept - p)."""
    out = 0.5 * (intercept + np.asarray(c, dtype=np.float64))
    return float(out) if out.ndim == 0 else out


def bertrand_follower_eq(c2, p1, intercept=10.0):
    """Undercut-or-match follower response; out-bids with ``p1 + 1`` when ``p1 < c2``."""
    c2 = np.asarray(c2, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    out = np.where(p1 >= c2, np.minimum(p1, monopoly_price(c2, intercept)), p1 + 1.0)
    return float(out) if out.ndim == 0 else out


# strategies


class AnalyticStrategy(Strategy):
    """Pure strategy from per-stage closed forms ``stage -> fn(signals)``."""

    def __init__(self, tag, stage_fns, action_boxes):
        self.tag = tag
        self.stage_fns = dict(stage_fns)
        self.action_boxes = dict(action_boxes)

    def mean_action(self, signals, stage):
        if stage not in self.stage_fns:
            raise DomainError(f"{self.tag} has no action at stage {stage}")
        signals = np.asarray(signals, dtype=np.float64)
        out = np.asarray(self.stage_fns[stage](signals), dtype=np.float64).reshape(-1, 1)
        return self.action_boxes[stage].clip(out)

    def fingerprint(self):
        return f"analytic:{self.tag}"


def _uniform_from_zero(prior):
    return prior.kind == "independent_uniform" and set(prior.low) == {0.0} and len(set(prior.high)) == 1


def has_equilibrium(game):
    try:
        equilibrium_profile(game)
    except ConfigurationError:
        return False
    return True


def equilibrium_profile(game):
    """Known equilibrium profile of ``game``; ConfigurationError if none is known."""
    if getattr(game, "risk", None) is not None and game.risk.rho != 0.0:
        raise ConfigurationError("no closed-form equilibrium for risk-averse bidders")
    if isinstance(game, SequentialAuction):
        if not _uniform_from_zero(game.prior):
            raise ConfigurationError("closed form needs i.i.d. uniform values on [0, h]")
        fns = {}
        for t in range(1, game.n_stages + 1):
            k = seq_auction_factor(game.mechanism, game.n_players, game.n_stages, t)
            fns[t] = lambda s, k=k: k * s[:, 0]
        boxes = {t: game.action_space(0, t) for t in fns}
        tag = f"seq_{game.mechanism}_N{game.n_players}_T{game.n_stages}"
        strat = AnalyticStrategy(tag, fns, boxes)
        return [strat] * game.n_players
    if isinstance(game, EliminationContest):
        p = game.prior
        if not (p.kind == "independent_uniform" and set(p.low) == {CONTEST_LOW} and set(p.high) == {CONTEST_HIGH}):
            raise ConfigurationError("closed form needs i.i.d. uniform values on [1, 1.5]")
        info = game.reveal
        fns = {
            1: lambda s: contest_eq_round1(info, s[:, 0]),
            2: lambda s: contest_eq_round2(s[:, 0], s[:, 2], info),
        }
        boxes = {t: game.action_space(0, t) for t in fns}
        return [AnalyticStrategy(f"contest_{info}", fns, boxes)] * 4
    if isinstance(game, StackelbergBertrand):
        if game.prior.kind != "bertrand_cost" or game.intercept != 10.0:
            raise ConfigurationError("closed form needs the standard cost prior and demand 10 - p")
        leader = AnalyticStrategy(
            "bertrand_leader", {1: lambda s: bertrand_leader_eq(np.clip(s[:, 0], 0, 1))}, {1: game.action_space(0, 1)}
        )
        follower = AnalyticStrategy(
            "bertrand_follower",
            {2: lambda s: bertrand_follower_eq(s[:, 0], s[:, 1], game.intercept)},
            {2: game.action_space(1, 2)},
        )
        return [leader, follower]
    raise ConfigurationError(f"no closed-form equilibrium for {type(game).__name__}")
