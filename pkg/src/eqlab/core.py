"""Sampling engine for continuous multi-stage games.

A game is described by a :class:`MultiStageGame`: nature draws types once
(stage-0 metadata), then players act in stages ``1..T``. Every stage each
player receives a signal computed from the history and picks an action from
a box. Utilities are evaluated once, on the complete outcome.

Rollouts are generated in fixed-size blocks. Each block owns two random
streams (nature/tie-breaking and policy noise) derived from ``(seed, block)``,
so the output does not depend on how many workers process the blocks.
"""

import hashlib
import os
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_count, check_player, check_seed
from .exceptions import ConfigurationError, DomainError, NumericFaultError

BLOCK_SIZE = 8192
WORKERS_ENV = "EQLAB_WORKERS"
LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class Box:
    """Product of closed intervals ``[lows[d], highs[d]]``."""

    lows: np.ndarray
    highs: np.ndarray

    def __post_init__(self):
        lows = np.atleast_1d(np.asarray(self.lows, dtype=np.float64)).copy()
        highs = np.atleast_1d(np.asarray(self.highs, dtype=np.float64)).copy()
        if lows.shape != highs.shape or lows.ndim != 1:
            raise ConfigurationError(f"box bounds differ in shape: {lows.shape} vs {highs.shape}")
        if not (np.all(np.isfinite(lows)) and np.all(np.isfinite(highs))):
            raise ConfigurationError("box bounds must be finite")
        if np.any(lows > highs):
            raise ConfigurationError(f"box has lows > highs: {lows} > {highs}")
        lows.flags.writeable = False
        highs.flags.writeable = False
        object.__setattr__(self, "lows", lows)
        object.__setattr__(self, "highs", highs)

    @classmethod
    def empty(cls):
        return cls(np.zeros(0), np.zeros(0))

    @classmethod
    def of(cls, *intervals):
        """``Box.of((0, 1), (0, 2))`` builds a two-dimensional box."""
        if not intervals:
            return cls.empty()
        lo, hi = zip(*intervals)
        return cls(np.array(lo, float), np.array(hi, float))

    @property
    def dim(self):
        return self.lows.shape[0]

    def clip(self, x):
        return np.clip(x, self.lows, self.highs)

    def contains(self, x):
        x = np.asarray(x)
        return np.all((x >= self.lows) & (x <= self.highs), axis=-1)

    def __eq__(self, other):
        return (
            isinstance(other, Box)
            and np.array_equal(self.lows, other.lows)
            and np.array_equal(self.highs, other.highs)
        )

    def __hash__(self):
        return hash((self.lows.tobytes(), self.highs.tobytes()))

    def __repr__(self):
        pairs = ", ".join(f"[{lo:g}, {hi:g}]" for lo, hi in zip(self.lows, self.highs))
        return f"Box({pairs})"

    def to_dict(self):
        return {"lows": self.lows.tolist(), "highs": self.highs.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["lows"], float), np.array(d["highs"], float))


class Strategy:
    """A behavioural strategy: per stage, a map from signals to actions.

    ``act`` receives standard-normal ``noise`` of the action's shape; pure
    strategies ignore it. It returns the (pre-clamp) action and, for
    strategies with a density, the log-density of that action.
    """

    stochastic = False

    def mean_action(self, signals, stage):
        raise NotImplementedError

    def act(self, signals, stage, noise):
        return self.mean_action(signals, stage), None

    def fingerprint(self):
        return type(self).__name__


class FunctionStrategy(Strategy):
    """Pure strategy from a callable ``fn(signals, stage) -> actions``."""

    def __init__(self, fn, name=None):
        self.fn = fn
        self.name = name or getattr(fn, "__name__", "fn")

    def mean_action(self, signals, stage):
        out = np.asarray(self.fn(signals, stage), dtype=np.float64)
        return out.reshape(signals.shape[0], -1)

    def fingerprint(self):
        return f"FunctionStrategy:{self.name}"


class MeanActionStrategy(Strategy):
    """Evaluates another strategy at its mean action (deterministic head)."""

    def __init__(self, base):
        self.base = base

    def mean_action(self, signals, stage):
        return self.base.mean_action(signals, stage)

    def fingerprint(self):
        return "mean:" + self.base.fingerprint()


class MultiStageGame(ABC):
    """Abstract multi-stage game.

    Subclasses keep all per-trajectory information in a ``state`` dict of
    arrays whose leading axis indexes trajectories; the engine copies,
    repeats and slices these dicts freely.

    ``signal_layout(player, stage)`` labels every signal coordinate. Labels
    of the form ``("action", r, d)`` mark the player's own stage-``r``
    action; all other labels are shared verbatim between stages, which is
    how perfect recall is decoded.
    """

    n_players: int
    n_stages: int
    action_dim: int = 1
    nature_keys: tuple = ()
    symmetric: bool = False

    @abstractmethod
    def signal_layout(self, player, stage):
        """Tuple of coordinate labels of the stage signal."""

    @abstractmethod
    def signal_space(self, player, stage):
        """:class:`Box` of the player's stage signal."""

    @abstractmethod
    def action_space(self, player, stage):
        """:class:`Box` of the player's stage action."""

    def acts(self, player, stage):
        """Whether the player ever takes a non-dummy action in ``stage``."""
        return True

    @property
    @abstractmethod
    def utility_bound(self):
        """Upper bound on ``|u_i|`` over all outcomes."""

    @abstractmethod
    def initial_state(self, n, rng):
        """Nature's draws for ``n`` games."""

    @abstractmethod
    def signals(self, state, stage):
        """Array (n, N, sdim) of stage signals."""

    @abstractmethod
    def active(self, state, stage):
        """Boolean (n, N): who takes a real action in ``stage``."""

    @abstractmethod
    def transition(self, state, stage, actions, rng):
        """Apply stage actions (n, N, action_dim); return the new state."""

    @abstractmethod
    def utilities(self, state):
        """Array (n, N) of terminal utilities."""

    def signal_dim(self, stage):
        return len(self.signal_layout(0, stage))

    def recall(self, signal, player, stage, earlier):
        """Decode the stage-``earlier`` signal and own action from a later signal.

        Returns ``(signal_earlier, action_earlier)``; the action is the dummy
        sentinel 0 when the player does not act in ``earlier``.
        """
        if not 1 <= earlier < stage <= self.n_stages:
            raise DomainError(f"need 1 <= earlier < stage, got {earlier}, {stage}")
        layout = self.signal_layout(player, stage)
        pos = {label: k for k, label in enumerate(layout)}
        sig_idx = [pos[label] for label in self.signal_layout(player, earlier)]
        signal = np.asarray(signal)
        past_signal = signal[..., sig_idx]
        if not self.acts(player, earlier):
            return past_signal, np.zeros(signal.shape[:-1] + (self.action_dim,))
        act_idx = [pos[("action", earlier, d)] for d in range(self.action_dim)]
        return past_signal, signal[..., act_idx]

    def describe(self):
        return {"game": type(self).__name__}


def repeat_state(state, k):
    """Repeat every trajectory ``k`` times (children of a node stay contiguous)."""
    return {key: np.repeat(val, k, axis=0) for key, val in state.items()}


def derive_seed(seed, *keys):
    """Deterministic 64-bit child seed of ``seed`` for the given integer keys."""
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


def block_streams(seed, block, n_streams=2):
    """Independent generators for one block of trajectories."""
    ss = np.random.SeedSequence(seed, spawn_key=(int(block),))
    return [np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(n_streams)]


def worker_count():
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def map_ordered(fn, items, workers=None):
    """``list(map(fn, items))`` optionally spread over threads, in input order."""
    workers = worker_count() if workers is None else max(1, int(workers))
    items = list(items)
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def profile_fingerprint(profile):
    h = hashlib.sha1()
    for strat in profile:
        h.update(strat.fingerprint().encode())
        h.update(b"|")
    return h.hexdigest()[:16]


def group_players(profile):
    """Group player indices that share one strategy object (batched evaluation)."""
    groups = {}
    for i, strat in enumerate(profile):
        groups.setdefault(id(strat), (strat, []))[1].append(i)
    return list(groups.values())


def play_stage(game, profile, signals, stage, noise, players=None):
    """Evaluate strategies of ``players`` on stage signals.

    Returns raw actions (n, N, A) and log-probs (n, N) (zero for pure
    strategies); players outside ``players`` get zeros.
    """
    n = signals.shape[0]
    n_players = game.n_players
    raw = np.zeros((n, n_players, game.action_dim))
    logp = np.zeros((n, n_players))
    wanted = set(range(n_players)) if players is None else set(players)
    for strat, idx in group_players(profile):
        idx = [i for i in idx if i in wanted and game.acts(i, stage)]
        if not idx:
            continue
        sig = signals[:, idx, :].transpose(1, 0, 2).reshape(len(idx) * n, -1)
        z = noise[:, idx, :].transpose(1, 0, 2).reshape(len(idx) * n, -1)
        act, lp = strat.act(sig, stage, z)
        act = np.asarray(act, dtype=np.float64)
        if act.ndim == 1:
            act = act[:, None]
        if act.shape != (len(idx) * n, game.action_dim):
            raise ConfigurationError(
                f"strategy for players {idx} returned actions of shape {act.shape}, "
                f"expected {(len(idx) * n, game.action_dim)}"
            )
        raw[:, idx, :] = act.reshape(len(idx), n, -1).transpose(1, 0, 2)
        if lp is not None:
            logp[:, idx] = np.asarray(lp, dtype=np.float64).reshape(len(idx), n).T
    return raw, logp


def clamp_actions(game, raw, stage, active):
    """Clamp into each player's action box; inactive players get the sentinel 0."""
    out = np.zeros_like(raw)
    for i in range(game.n_players):
        box = game.action_space(i, stage)
        out[:, i, :] = np.where(active[:, i, None], box.clip(raw[:, i, :]), 0.0)
    return out


@dataclass
class Trajectory:
    """One complete rollout, as seen by an external reader."""

    nature_draws: dict
    signals: list
    actions: np.ndarray
    raw_actions: np.ndarray
    active: np.ndarray
    utilities: np.ndarray


@dataclass
class RolloutBatch:
    """Struct-of-arrays batch of trajectories.

    ``signals[t-1]`` has shape (n, N, sdim_t); actions (n, T, N, A);
    ``active`` (n, T, N); ``log_probs`` (n, T, N) at collection-time
    parameters; ``utilities`` (n, N).
    """

    seed: int
    profile_id: str
    state: dict
    signals: list
    raw_actions: np.ndarray
    actions: np.ndarray
    active: np.ndarray
    log_probs: np.ndarray
    utilities: np.ndarray
    nature_keys: tuple = field(default=())

    @property
    def n(self):
        return self.utilities.shape[0]

    def __len__(self):
        return self.n

    def trajectory(self, k):
        return Trajectory(
            nature_draws={key: self.state[key][k] for key in self.nature_keys},
            signals=[s[k] for s in self.signals],
            actions=self.actions[k],
            raw_actions=self.raw_actions[k],
            active=self.active[k],
            utilities=self.utilities[k],
        )


def _rollout_block(game, profile, n, seed, block, offset):
    nature_rng, noise_rng = block_streams(seed, block)
    n_players, n_stages, adim = game.n_players, game.n_stages, game.action_dim
    state = game.initial_state(n, nature_rng)
    signals = []
    raw_all = np.zeros((n, n_stages, n_players, adim))
    act_all = np.zeros_like(raw_all)
    active_all = np.zeros((n, n_stages, n_players), dtype=bool)
    logp_all = np.zeros((n, n_stages, n_players))
    for t in range(1, n_stages + 1):
        sig = game.signals(state, t)
        active = game.active(state, t)
        noise = noise_rng.standard_normal((n, n_players, adim))
        raw, logp = play_stage(game, profile, sig, t, noise)
        bad = ~np.all(np.isfinite(raw), axis=(1, 2))
        if bad.any():
            raise NumericFaultError(f"non-finite action at stage {t}", offset + int(np.argmax(bad)))
        actions = clamp_actions(game, raw, t, active)
        state = game.transition(state, t, actions, nature_rng)
        signals.append(sig)
        raw_all[:, t - 1] = np.where(active[..., None], raw, 0.0)
        act_all[:, t - 1] = actions
        active_all[:, t - 1] = active
        logp_all[:, t - 1] = np.where(active, logp, 0.0)
    utils = game.utilities(state)
    bad = ~np.all(np.isfinite(utils), axis=1)
    if bad.any():
        raise NumericFaultError("non-finite utility", offset + int(np.argmax(bad)))
    return state, signals, raw_all, act_all, active_all, logp_all, utils


def rollout(game, profile, n, seed, *, workers=None):
    """Sample ``n`` complete games under ``profile``.

    Nature draws a_0, players receive signals and act, actions are clamped
    into their boxes, and terminal utilities are evaluated. Identical
    ``(game, profile parameters, n, seed)`` give bit-identical batches for
    any number of workers.
    """
    n = check_count(n)
    seed = check_seed(seed)
    if len(profile) != game.n_players:
        raise ConfigurationError(
            f"profile has {len(profile)} strategies for {game.n_players} players"
        )
    starts = list(range(0, n, BLOCK_SIZE))

    def run(b):
        start = starts[b]
        size = min(BLOCK_SIZE, n - start)
        return _rollout_block(game, profile, size, seed, b, start)

    parts = map_ordered(run, range(len(starts)), workers)
    state = {k: np.concatenate([p[0][k] for p in parts]) for k in parts[0][0]}
    signals = [np.concatenate([p[1][t] for p in parts]) for t in range(game.n_stages)]
    cat = [np.concatenate([p[j] for p in parts]) for j in range(2, 7)]
    return RolloutBatch(
        seed=seed,
        profile_id=profile_fingerprint(profile),
        state=state,
        signals=signals,
        raw_actions=cat[0],
        actions=cat[1],
        active=cat[2],
        log_probs=cat[3],
        utilities=cat[4],
        nature_keys=tuple(game.nature_keys),
    )


def estimate_utility(batch, player):
    """Monte-Carlo estimate of a player's ex-ante utility (batch mean)."""
    utils = batch.utilities if isinstance(batch, RolloutBatch) else np.asarray(batch, float)
    if utils.ndim == 1:
        utils = utils[:, None]
    if utils.shape[0] == 0:
        raise DomainError("cannot estimate utility from an empty batch")
    player = check_player(player, utils.shape[1])
    return float(np.mean(utils[:, player]))
