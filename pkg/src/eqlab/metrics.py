"""Utility loss in equilibrium and probability-weighted L2 distance."""

from dataclasses import asdict, dataclass, field

import numpy as np

from ._validation import check_player, check_stage
from .analytic import equilibrium_profile
from .core import MeanActionStrategy, rollout


def _deterministic(strategy, deterministic):
    if deterministic and getattr(strategy, "stochastic", False):
        return MeanActionStrategy(strategy)
    return strategy


def loss_in_equilibrium(game, learned, player, n, seed, *, analytic_profile=None,
                        deterministic=True, return_details=False):
    """``u_i(beta*) - u_i(learned_i, beta*_-i)`` with common random numbers.

    Both rollouts use the same seed, hence identical types and tie-breaking
    draws. By default the learned policy is evaluated at its mean action.
    """
    player = check_player(player, game.n_players)
    eq = list(analytic_profile) if analytic_profile is not None else equilibrium_profile(game)
    deviated = list(eq)
    deviated[player] = _deterministic(learned, deterministic)
    u_eq = rollout(game, eq, n, seed).utilities[:, player]
    u_dev = rollout(game, deviated, n, seed).utilities[:, player]
    loss = float(np.mean(u_eq) - np.mean(u_dev))
    if not return_details:
        return loss
    diff = u_eq - u_dev
    return {
        "loss": loss,
        "util_eq": float(np.mean(u_eq)),
        "util_learned": float(np.mean(u_dev)),
        "stderr": float(np.std(diff, ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
    }


def l2_distance(game, learned, player, stage, n, seed, *, analytic_profile=None, batch=None):
    """Root mean squared gap between learned and equilibrium actions.

    Signals are drawn under the full equilibrium profile, restricted to
    games where the player is active at ``stage``; the learned strategy is
    evaluated at its mean action. Returns ``None`` when the player never
    acts at that stage.
    """
    player = check_player(player, game.n_players)
    stage = check_stage(stage, game.n_stages)
    if not game.acts(player, stage):
        return None
    eq = list(analytic_profile) if analytic_profile is not None else equilibrium_profile(game)
    if batch is None:
        batch = rollout(game, eq, n, seed)
    mask = batch.active[:, stage - 1, player]
    if not mask.any():
        return None
    sig = batch.signals[stage - 1][mask, player, :]
    box = game.action_space(player, stage)
    mine = box.clip(learned.mean_action(sig, stage))
    ref = box.clip(eq[player].mean_action(sig, stage))
    return float(np.sqrt(np.mean(np.sum((mine - ref) ** 2, axis=1))))


def l2_per_stage(game, learned, player, n, seed, *, analytic_profile=None):
    """``({stage: L2}, mean over stages)`` reusing one equilibrium rollout."""
    eq = list(analytic_profile) if analytic_profile is not None else equilibrium_profile(game)
    batch = rollout(game, eq, n, seed)
    per_stage = {}
    for t in range(1, game.n_stages + 1):
        val = l2_distance(game, learned, player, t, n, seed, analytic_profile=eq, batch=batch)
        if val is not None:
            per_stage[t] = val
    avg = float(np.mean(list(per_stage.values()))) if per_stage else None
    return per_stage, avg


@dataclass
class PlayerMetrics:
    util_hat: float = None
    loss_equ: float = None
    loss_ver: float = None
    l2_per_stage: dict = field(default_factory=dict)
    l2_avg: float = None


@dataclass
class MetricsReport:
    """Per-player metrics plus the metadata needed to reproduce them."""

    players: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    sample_counts: dict = field(default_factory=dict)
    config_hash: str = None

    def player(self, i):
        return self.players.setdefault(int(i), PlayerMetrics())

    def to_dict(self):
        return {
            "config_hash": self.config_hash,
            "seeds": dict(self.seeds),
            "sample_counts": dict(self.sample_counts),
            "players": {
                str(i): {**asdict(m), "l2_per_stage": {str(t): v for t, v in m.l2_per_stage.items()}}
                for i, m in sorted(self.players.items())
            },
        }

    @classmethod
    def from_dict(cls, d):
        rep = cls(seeds=dict(d.get("seeds", {})), sample_counts=dict(d.get("sample_counts", {})),
                  config_hash=d.get("config_hash"))
        for key, m in d.get("players", {}).items():
            pm = PlayerMetrics(**{k: v for k, v in m.items() if k != "l2_per_stage"})
            pm.l2_per_stage = {int(t): v for t, v in m.get("l2_per_stage", {}).items()}
            rep.players[int(key)] = pm
        return rep


def evaluate_profile(game, profile, n, seed, *, analytic_profile=None):
    """MetricsReport with utilities and, when an equilibrium is known, ℓ^equ and L2."""
    report = MetricsReport(seeds={"eval": seed}, sample_counts={"eval": n})
    utils = rollout(game, list(profile), n, seed).utilities.mean(axis=0)
    for i in range(game.n_players):
        report.player(i).util_hat = float(utils[i])
    if analytic_profile is None:
        return report
    for i in range(game.n_players):
        pm = report.player(i)
        pm.loss_equ = loss_in_equilibrium(game, profile[i], i, n, seed, analytic_profile=analytic_profile)
        pm.l2_per_stage, pm.l2_avg = l2_per_stage(game, profile[i], i, n, seed, analytic_profile=analytic_profile)
    return report
