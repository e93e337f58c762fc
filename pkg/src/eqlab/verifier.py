"""Best-response verification over finite-precision step-function strategies.

The certified player's signal spaces are cut into a regular grid of cells
and its action spaces into a regular lattice of ``D`` points per dimension.
For ``M_IS`` initial draws of nature the game tree is simulated densely:
at every stage the player branches into all lattice actions while opponents
sample fresh actions on each branch. Backward induction over the tree picks
the best lattice action per cell, which yields the estimated best-response
utility; subtracting the profile's own Monte-Carlo utility gives ℓ^ver.

Coordinates of a signal that record the player's own earlier actions are
mapped to the nearest lattice index rather than to a uniform cell. Since
the player only plays lattice actions inside the tree, every cell thereby
pins down the player's own action history exactly.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_count, check_player, check_seed, check_signals, check_stage
from .core import (
    MeanActionStrategy,
    Strategy,
    block_streams,
    clamp_actions,
    derive_seed,
    map_ordered,
    play_stage,
    repeat_state,
    rollout,
)
from .exceptions import ConfigurationError, MemoryBudgetError, NumericFaultError

DEFAULT_MEMORY_BUDGET = 3 * 2**30
# leaves simulated per block; fixed so results never depend on worker count
LEAVES_PER_BLOCK = 2**19
_KEY_TREE, _KEY_PLAIN = 0, 1


class Discretization:
    """Signal cells and action lattices of one player.

    ``n_cells[t] = D ** dim(S_t)`` and ``n_actions[t] = D ** dim(A_t)`` for
    stages where the player acts (1 otherwise).
    """

    def __init__(self, game, player, D):
        if int(D) != D or D < 2:
            raise ConfigurationError(f"D must be an integer >= 2, got {D!r}")
        self.D = int(D)
        self.player = int(player)
        self.n_stages = game.n_stages
        self.acts, self.n_cells, self.n_actions = {}, {}, {}
        self.sig_lows, self.sig_widths, self.own_dims = {}, {}, {}
        self.action_grid = {}
        for t in range(1, game.n_stages + 1):
            self.acts[t] = bool(game.acts(player, t))
            box = game.signal_space(player, t)
            layout = game.signal_layout(player, t)
            lows, widths, own = box.lows.copy(), box.highs - box.lows, np.zeros(box.dim, bool)
            for k, label in enumerate(layout):
                if label[0] == "action":
                    _, r, d = label
                    abox = game.action_space(player, r)
                    lows[k], widths[k], own[k] = abox.lows[d], abox.highs[d] - abox.lows[d], True
            self.sig_lows[t], self.sig_widths[t], self.own_dims[t] = lows, widths, own
            cells = self.D ** box.dim
            if cells >= 2**62:
                raise ConfigurationError(f"stage {t}: {self.D}^{box.dim} cells overflow the cell index")
            self.n_cells[t] = cells
            abox = game.action_space(player, t)
            if self.acts[t]:
                axes = [np.linspace(lo, hi, self.D) for lo, hi in zip(abox.lows, abox.highs)]
                mesh = np.meshgrid(*axes, indexing="ij")
                self.action_grid[t] = np.stack([m.ravel() for m in mesh], axis=1)
            else:
                self.action_grid[t] = np.zeros((1, abox.dim))
            self.n_actions[t] = self.action_grid[t].shape[0]

    def cell_coords(self, signals, stage):
        """Per-dimension cell coordinates (n, dim)."""
        s = np.asarray(signals, dtype=np.float64)
        lows, widths, own = self.sig_lows[stage], self.sig_widths[stage], self.own_dims[stage]
        safe = np.where(widths > 0, widths, 1.0)
        u = (s - lows) / safe
        uniform = np.floor(u * self.D)
        nearest = np.rint(u * (self.D - 1))
        coords = np.where(own, nearest, uniform)
        coords = np.where(widths > 0, coords, 0.0)
        return np.clip(coords, 0, self.D - 1).astype(np.int64)

    def cell_index(self, signals, stage):
        """Mixed-radix cell id in ``[0, D**dim)``; 0 for an empty signal."""
        coords = self.cell_coords(signals, stage)
        out = np.zeros(coords.shape[0], dtype=np.int64)
        for k in range(coords.shape[1]):
            out = out * self.D + coords[:, k]
        return out

    def to_dict(self):
        return {
            "D": self.D,
            "player": self.player,
            "n_cells": {str(t): int(v) for t, v in self.n_cells.items()},
            "action_grid": {str(t): g.tolist() for t, g in self.action_grid.items()},
        }


def build_grid(game, player, D):
    return Discretization(game, check_player(player, game.n_players), D)


@dataclass
class VerifierTree:
    """Dense simulation tree split into blocks of initial samples.

    ``utilities[b]`` has shape (B_b, K_1, ..., K_T); ``cells[t][b]`` has
    shape (B_b, K_1, ..., K_(t-1)) with compressed cell indices into
    ``cell_ids[t]`` and ``-1`` where the player is inactive.
    """

    disc: Discretization
    n_initial: int
    branching: tuple
    utilities: list
    cells: dict
    cell_ids: dict

    def visitation(self, stage):
        """Visitation count per visited cell (aligned with ``cell_ids[stage]``)."""
        counts = np.zeros(self.cell_ids[stage].size, dtype=np.int64)
        for c in self.cells[stage]:
            c = c.ravel()
            counts += np.bincount(c[c >= 0], minlength=counts.size)
        return counts

    @property
    def n_leaves(self):
        return int(sum(u.size for u in self.utilities))


@dataclass
class StepStrategy(Strategy):
    """Step-function strategy: lattice index per visited cell, index 0 elsewhere."""

    disc: Discretization
    cell_ids: dict
    action_index: dict

    def index_for(self, signals, stage):
        ids = self.disc.cell_index(signals, stage)
        known = self.cell_ids[stage]
        if known.size == 0:
            return np.zeros(ids.size, dtype=np.int64)
        pos = np.minimum(np.searchsorted(known, ids), known.size - 1)
        return np.where(known[pos] == ids, self.action_index[stage][pos], 0)

    def mean_action(self, signals, stage):
        idx = self.index_for(signals, stage)
        return self.disc.action_grid[stage][idx]

    def fingerprint(self):
        h = hashlib.sha1()
        for t in sorted(self.cell_ids):
            h.update(self.cell_ids[t].tobytes())
            h.update(self.action_index[t].tobytes())
        return "step:" + h.hexdigest()

    def to_dict(self):
        return {
            "discretization": self.disc.to_dict(),
            "stages": {
                str(t): {"cells": self.cell_ids[t].tolist(), "actions": self.action_index[t].tolist()}
                for t in sorted(self.cell_ids)
            },
        }


@dataclass
class VerifierResult:
    player: int
    best_response_utility: float
    actual_utility: float
    loss_ver: float
    best_step_strategy: StepStrategy
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "player": self.player,
            "best_response_utility": self.best_response_utility,
            "actual_utility": self.actual_utility,
            "loss_ver": self.loss_ver,
            "diagnostics": self.diagnostics,
            "best_step_strategy": self.best_step_strategy.to_dict(),
        }


def _block_plan(disc, n_initial):
    leaves_per_init = int(np.prod([disc.n_actions[t] for t in range(1, disc.n_stages + 1)]))
    per_block = max(1, LEAVES_PER_BLOCK // leaves_per_init)
    starts = list(range(0, n_initial, per_block))
    return [(b, s, min(per_block, n_initial - s)) for b, s in enumerate(starts)], leaves_per_init


def estimate_tree_bytes(game, disc, n_initial):
    """Rough peak memory of :func:`simulate_tree` (stored leaves plus one live block)."""
    plan, per_init = _block_plan(disc, n_initial)
    stored = 8 * n_initial * per_init
    prefix = 1
    for t in range(1, disc.n_stages + 1):
        stored += 8 * n_initial * prefix
        prefix *= disc.n_actions[t]
    probe = game.initial_state(1, np.random.default_rng(0))
    row_bytes = sum(v.itemsize * max(1, v.size) for v in probe.values())
    row_bytes += 8 * game.n_players * (4 * game.action_dim + 4)
    live_rows = max(size for _, _, size in plan) * per_init
    return int(stored + 4 * live_rows * row_bytes)


def _simulate_block(game, profile, disc, player, seed, block, size, opponents):
    nature_rng, noise_rng = block_streams(seed, block)
    state = game.initial_state(size, nature_rng)
    n_nodes = size
    cells = {}
    adim = game.action_dim
    for t in range(1, game.n_stages + 1):
        k = disc.n_actions[t]
        sig = game.signals(state, t)
        active = game.active(state, t)
        if disc.acts[t]:
            c = disc.cell_index(sig[:, player, :], t)
            cells[t] = np.where(active[:, player], c, -1)
        state = repeat_state(state, k)
        sig = np.repeat(sig, k, axis=0)
        active = np.repeat(active, k, axis=0)
        n_nodes *= k
        noise = noise_rng.standard_normal((n_nodes, game.n_players, adim))
        raw, _ = play_stage(game, profile, sig, t, noise, players=opponents)
        if not np.all(np.isfinite(raw)):
            raise NumericFaultError(f"non-finite opponent action at stage {t} in verifier block {block}")
        raw[:, player, :] = np.tile(disc.action_grid[t], (n_nodes // k, 1))
        actions = clamp_actions(game, raw, t, active)
        state = game.transition(state, t, actions, nature_rng)
    utils = np.asarray(game.utilities(state)[:, player], dtype=np.float64)
    if not np.all(np.isfinite(utils)):
        raise NumericFaultError(f"non-finite utility in verifier block {block}")
    shape = (size,) + tuple(disc.n_actions[t] for t in range(1, game.n_stages + 1))
    return utils.reshape(shape), cells


def simulate_tree(game, profile, player, disc, n_initial, seed, *, opponent_mode="sample",
                  memory_budget=DEFAULT_MEMORY_BUDGET, workers=None):
    """Simulate the branching tree of ``player`` against ``profile``'s opponents."""
    player = check_player(player, game.n_players)
    n_initial = check_count(n_initial, "n_initial")
    seed = check_seed(seed)
    if opponent_mode not in ("sample", "mean"):
        raise ConfigurationError(f"opponent_mode must be 'sample' or 'mean', got {opponent_mode!r}")
    need = estimate_tree_bytes(game, disc, n_initial)
    if need > memory_budget:
        raise MemoryBudgetError(need, memory_budget)
    if opponent_mode == "mean":
        profile = [MeanActionStrategy(s) if getattr(s, "stochastic", False) else s for s in profile]
    opponents = [j for j in range(game.n_players) if j != player]
    plan, _ = _block_plan(disc, n_initial)
    parts = map_ordered(
        lambda p: _simulate_block(game, profile, disc, player, seed, p[0], p[2], opponents), plan, workers
    )
    utilities = [p[0] for p in parts]
    cells, cell_ids = {}, {}
    branching = tuple(disc.n_actions[t] for t in range(1, game.n_stages + 1))
    for t in range(1, game.n_stages + 1):
        if not disc.acts[t]:
            continue
        raw = [p[1][t] for p in parts]
        flat = np.concatenate([r.ravel() for r in raw])
        ids, inverse = np.unique(flat[flat >= 0], return_inverse=True)
        comp = np.full(flat.shape, -1, dtype=np.int64)
        comp[flat >= 0] = inverse
        out, pos = [], 0
        for b, r in enumerate(raw):
            prefix = utilities[b].shape[: t]
            out.append(comp[pos:pos + r.size].reshape(prefix))
            pos += r.size
        cells[t], cell_ids[t] = out, ids
    return VerifierTree(disc, n_initial, branching, utilities, cells, cell_ids)


def _neumaier_add(total, comp, x):
    t = total + x
    big = np.abs(total) >= np.abs(x)
    comp += np.where(big, (total - t) + x, (x - t) + total)
    return t, comp


def backward_induction(tree):
    """Best lattice action per visited cell and the estimated best-response utility."""
    disc = tree.disc
    values = list(tree.utilities)
    action_index = {}
    for t in range(disc.n_stages, 0, -1):
        k = disc.n_actions[t]
        if not disc.acts[t]:
            values = [v.reshape(v.shape[:-1]) for v in values]
            continue
        n_cells = tree.cell_ids[t].size
        total = np.zeros((n_cells, k))
        comp = np.zeros((n_cells, k))
        for v, c in zip(values, tree.cells[t]):
            q = v.reshape(-1, k)
            cf = c.ravel()
            sel = cf >= 0
            slot = (cf[sel, None] * k + np.arange(k)).ravel()
            part = np.bincount(slot, weights=q[sel].ravel(), minlength=n_cells * k).reshape(n_cells, k)
            total, comp = _neumaier_add(total, comp, part)
        score = total + comp
        best = np.argmax(score, axis=1) if n_cells else np.zeros(0, dtype=np.int64)
        action_index[t] = best.astype(np.int64)
        new_values = []
        for v, c in zip(values, tree.cells[t]):
            q = v.reshape(-1, k)
            cf = c.ravel()
            choice = np.where(cf >= 0, best[np.maximum(cf, 0)] if n_cells else 0, 0)
            new_values.append(np.take_along_axis(q, choice[:, None], axis=1)[:, 0].reshape(v.shape[:-1]))
        values = new_values
    grand, comp = 0.0, 0.0
    for v in values:
        grand, comp = _neumaier_add(np.float64(grand), np.float64(comp), np.float64(np.sum(v)))
    best_utility = float(grand + comp) / tree.n_initial
    strategy = StepStrategy(disc, {t: tree.cell_ids[t] for t in action_index}, action_index)
    return strategy, best_utility


def evaluate_step_strategy(tree, strategy):
    """Utility of a step strategy evaluated on the simulated tree."""
    disc = tree.disc
    total = 0.0
    for b, u in enumerate(tree.utilities):
        v = u
        for t in range(disc.n_stages, 0, -1):
            k = disc.n_actions[t]
            if not disc.acts[t]:
                v = v.reshape(v.shape[:-1])
                continue
            q = v.reshape(-1, k)
            cf = tree.cells[t][b].ravel()
            lookup = strategy.action_index[t]
            choice = np.where(cf >= 0, lookup[np.maximum(cf, 0)] if lookup.size else 0, 0)
            v = np.take_along_axis(q, choice[:, None], axis=1)[:, 0].reshape(v.shape[:-1])
        total += float(np.sum(v))
    return total / tree.n_initial


def verify(game, profile, player, D, n_initial, seed, *, opponent_mode="sample",
           memory_budget=DEFAULT_MEMORY_BUDGET, workers=None, return_tree=False):
    """Estimated verifier loss ``u_ver - u(beta)`` of ``player`` under ``profile``."""
    player = check_player(player, game.n_players)
    seed = check_seed(seed)
    disc = build_grid(game, player, D)
    tree = simulate_tree(game, profile, player, disc, n_initial, derive_seed(seed, _KEY_TREE),
                         opponent_mode=opponent_mode, memory_budget=memory_budget, workers=workers)
    strategy, best = backward_induction(tree)
    plain = rollout(game, profile, n_initial, derive_seed(seed, _KEY_PLAIN), workers=workers)
    actual = float(np.mean(plain.utilities[:, player]))
    diagnostics = {"D": disc.D, "M_IS": int(n_initial), "n_leaves": tree.n_leaves,
                   "opponent_mode": opponent_mode, "stages": {}}
    for t in tree.cell_ids:
        visits = tree.visitation(t)
        diagnostics["stages"][str(t)] = {
            "grid_cells": int(disc.n_cells[t]),
            "visited_cells": int(visits.size),
            "empty_cells": int(disc.n_cells[t] - visits.size),
            "coverage": float(visits.size / disc.n_cells[t]),
            "visits": int(visits.sum()),
        }
    result = VerifierResult(player, best, actual, best - actual, strategy, diagnostics)
    return (result, tree) if return_tree else result


class StepFunctionVerifier(BaseEstimator):
    """Estimator wrapper around :func:`verify`.

    ``fit(game, profile, player)`` stores the :class:`VerifierResult` in
    ``result_``; ``predict(signals, stage)`` evaluates the certified best
    step-function response.
    """

    def __init__(self, D=16, n_initial=2**15, seed=0, opponent_mode="sample",
                 memory_budget=DEFAULT_MEMORY_BUDGET):
        self.D = D
        self.n_initial = n_initial
        self.seed = seed
        self.opponent_mode = opponent_mode
        self.memory_budget = memory_budget

    def fit(self, game, profile, player=0):
        self.game_ = game
        self.result_ = verify(game, profile, player, self.D, self.n_initial, self.seed,
                              opponent_mode=self.opponent_mode, memory_budget=self.memory_budget)
        self.best_response_ = self.result_.best_step_strategy
        self.loss_ver_ = self.result_.loss_ver
        return self

    def predict(self, signals, stage=1):
        check_is_fitted(self, "result_")
        stage = check_stage(stage, self.game_.n_stages)
        dim = self.game_.signal_space(self.result_.player, stage).dim
        return self.best_response_.mean_action(check_signals(signals, dim), stage)
