from fractions import Fraction

import mpmath as mp
import numpy as np
import pytest
from scipy.optimize import brentq, minimize_scalar

from eqlab import EliminationContest, SequentialAuction, StackelbergBertrand, equilibrium_profile
from eqlab.analytic import (
    bertrand_follower_eq,
    bertrand_leader_eq,
    bertrand_leader_inverse,
    bisect_increasing,
    contest_eq_round1,
    contest_eq_round2,
    contest_se,
    contest_we,
    has_equilibrium,
    invert_round1_bid,
    monopoly_price,
    seq_auction_eq,
    seq_auction_factor,
)
from eqlab.exceptions import ConfigurationError, ConvergenceError, DomainError
from eqlab.priors import PriorModel, RiskTransform

mp.mp.dps = 50


def we_oracle(v):
    # expanded form, evaluated at 50 digits
    v = mp.mpf(v)
    return (27 * mp.log(v + mp.mpf(3) / 2) - 17 * v / 2 - 43 * mp.log(mp.mpf(5) / 2) / 4 + 7 * v**2 / 2
            - 2 * v**3 - 4 * mp.log(v + 1) * (v**4 - 1) + 4 * mp.log(v + mp.mpf(3) / 2) * (v**4 - mp.mpf(81) / 16) + 7)


def se_oracle(v):
    v = mp.mpf(v)
    l1, l2 = mp.log(v + 1), mp.log(v + mp.mpf(3) / 2)
    return (17 * mp.log(5) - 8 * l1 - 9 * l2 - 17 * mp.log(2) - 16 * v + 8 * v**2 * l1 + 16 * v**3 * l1
            - 16 * v**4 * l1 - 8 * v**2 * l2 - 16 * v**3 * l2 + 16 * v**4 * l2 - mp.mpf(135) / (2 * v + 3)
            + 18 * v**2 - 8 * v**3 + 33)


GRID = np.linspace(0.0, 1.0, 1000)


@pytest.mark.parametrize("mechanism", ["first_price", "second_price"])
@pytest.mark.parametrize("n,T", [(2, 1), (3, 1), (3, 2), (4, 2), (5, 3), (10, 4)])
def test_sequential_bids_match_exact_rationals(mechanism, n, T):
    for t in range(1, T + 1):
        denom = n - t + 1 if mechanism == "first_price" else n - t
        exact = Fraction(n - T, denom)
        assert seq_auction_factor(mechanism, n, T, t) == float(exact)
        bids = seq_auction_eq(mechanism, n, T, t, GRID)
        want = np.array([float(exact * Fraction(v)) for v in GRID])
        assert np.all(np.abs(bids - want) <= np.spacing(want) + 1e-300)


def test_second_price_last_unit_is_truthful():
    assert seq_auction_eq("second_price", 3, 2, 2, 0.7) == 0.7
    assert seq_auction_eq("first_price", 2, 1, 1, 0.5) == 0.25


def test_sequential_domain_errors():
    with pytest.raises(DomainError):
        seq_auction_factor("first_price", 2, 2, 1)
    with pytest.raises(DomainError):
        seq_auction_factor("first_price", 3, 2, 3)
    with pytest.raises(ConfigurationError):
        seq_auction_factor("dutch", 3, 2, 1)


def test_contest_efforts_vanish_at_lowest_type():
    assert abs(contest_we(1.0) - float(we_oracle(1))) <= 1e-9
    assert abs(contest_se(1.0) - float(se_oracle(1))) <= 1e-9
    assert abs(contest_we(1.0)) <= 1e-12
    assert contest_se(1.0) == 0.0


@pytest.mark.parametrize("v", ["1.0001", "1.0625", "1.125", "1.2", "1.25", "1.3125", "1.4", "1.5"])
def test_contest_efforts_match_high_precision(v):
    assert contest_we(float(v)) == pytest.approx(float(we_oracle(v)), abs=1e-12)
    assert contest_se(float(v)) == pytest.approx(float(se_oracle(v)), abs=1e-11)


def test_contest_round1_increasing_and_invertible():
    v = np.linspace(1.0, 1.5, 501)
    for info in ("valuations", "bids"):
        b = contest_eq_round1(info, v)
        assert np.all(np.diff(b) > 0)
    back = invert_round1_bid(contest_eq_round1("bids", v), "bids")
    assert np.max(np.abs(back - v)) <= 1e-9


def test_contest_round2_best_response():
    # effort maximizing v_i x/(x+y) - x against y = v_i v_j^2/(v_i+v_j)^2
    vi, vj = 1.3, 1.1
    y = vj**2 * vi / (vi + vj) ** 2
    res = minimize_scalar(lambda x: -(vi * x / (x + y) - x), bounds=(1e-9, 1.5), method="bounded",
                          options={"xatol": 1e-12})
    assert contest_eq_round2(vi, vj) == pytest.approx(res.x, abs=1e-6)
    b = contest_eq_round1("bids", vj)
    assert contest_eq_round2(vi, b, "bids") == pytest.approx(contest_eq_round2(vi, vj), abs=1e-12)


def test_bertrand_leader_price_at_zero_cost():
    root = brentq(lambda p: 4 * p**3 - 27 * p**2 - 24 * p + 20, 0.5, 0.6, xtol=1e-15)
    assert bertrand_leader_eq(0.0) == pytest.approx(root, abs=1e-13)
    assert bertrand_leader_eq(0.0) == pytest.approx(0.5358983848622456, abs=1e-13)
    assert bertrand_leader_eq(1.0) == pytest.approx(1.0, abs=1e-13)


def test_bertrand_round_trip():
    c = np.linspace(0.0, 1.0, 1001)
    assert np.max(np.abs(bertrand_leader_inverse(bertrand_leader_eq(c)) - c)) <= 1e-8
    assert np.all(np.diff(bertrand_leader_eq(c)) > 0)
    with pytest.raises(DomainError):
        bertrand_leader_eq(1.2)


@pytest.mark.parametrize("c", [0.0, 0.3, 0.75, 1.0])
def test_monopoly_price_by_golden_section(c):
    res = minimize_scalar(lambda p: -(p - c) * (10 - p), bracket=(0.0, 5.0, 10.0), method="golden",
                          tol=1e-10)
    assert monopoly_price(c) == 5 + c / 2
    assert abs(monopoly_price(c) - res.x) <= 1e-6


def test_bertrand_follower_cases():
    assert bertrand_follower_eq(0.2, 0.6) == 0.6
    assert bertrand_follower_eq(0.7, 0.6) == 1.6
    assert bertrand_follower_eq(0.0, 9.0) == 5.0


def test_bisection_reports_non_convergence():
    with pytest.raises(ConvergenceError):
        bisect_increasing(lambda x: x, 0.5, 0.0, 1.0, tol=1e-30, max_iter=10)


def test_equilibrium_profile_availability():
    assert has_equilibrium(SequentialAuction("second_price", 4, 2))
    assert has_equilibrium(EliminationContest(reveal="bids"))
    assert has_equilibrium(StackelbergBertrand())
    assert not has_equilibrium(SequentialAuction(risk=RiskTransform(0.5)))
    shifted = PriorModel("independent_uniform", 3, low=0.5, high=1.0)
    assert not has_equilibrium(SequentialAuction(prior=shifted))
    with pytest.raises(ConfigurationError):
        equilibrium_profile(SequentialAuction(prior=PriorModel("mineral_rights", 3)))


def test_equilibrium_profile_acts_on_signals():
    game = SequentialAuction("first_price", 3, 2)
    eq = equilibrium_profile(game)
    sig = np.array([[0.9, 0.1, 0.2]])
    assert eq[0].mean_action(sig[:, :1], 1)[0, 0] == pytest.approx(0.9 / 3)
    assert eq[0].mean_action(sig, 2)[0, 0] == pytest.approx(0.9 / 2)
