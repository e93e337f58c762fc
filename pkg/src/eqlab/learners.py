"""Self-play policy-gradient learners (REINFORCE and PPO)."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_count, check_player, check_seed, check_signals, check_stage
from .analytic import equilibrium_profile, has_equilibrium
from .core import derive_seed, rollout
from .exceptions import ConfigurationError, NumericFaultError
from .metrics import l2_per_stage, loss_in_equilibrium
from .nn import Adam, clip_grad_norm
from .policies import GaussianPolicy, ValueNetwork, gaussian_log_prob

ALGOS = ("reinforce", "ppo")
SHARING = ("auto", "shared", "independent")
DTYPES = {"float32": np.float32, "float64": np.float64}

# seed-derivation keys, kept fixed so curves are reproducible across versions
_KEY_INIT, _KEY_ROLLOUT, _KEY_EVAL, _KEY_MINIBATCH = 0, 1, 2, 3


class PolicyGroup:
    """One policy (plus optimizer, optional value net) controlling ``players``."""

    def __init__(self, policy, players, value=None):
        self.policy = policy
        self.players = list(players)
        self.value = value
        self.optimizer = None
        self.reward_count = 0
        self.reward_mean = 0.0
        self.reward_m2 = 0.0

    @property
    def params(self):
        extra = self.value.mlp.params if self.value is not None else []
        return self.policy.params + extra

    def set_params(self, arrays):
        k = len(self.policy.params)
        self.policy.set_params(arrays[:k])
        if self.value is not None:
            self.value.mlp.params = list(arrays[k:])

    def update_reward_stats(self, x):
        """Chan et al. parallel merge of running mean / variance."""
        n_b = x.size
        mean_b = float(np.mean(x))
        m2_b = float(np.sum((x - mean_b) ** 2))
        n_a = self.reward_count
        delta = mean_b - self.reward_mean
        total = n_a + n_b
        self.reward_mean += delta * n_b / total
        self.reward_m2 += m2_b + delta**2 * n_a * n_b / total
        self.reward_count = total

    @property
    def reward_std(self):
        return float(np.sqrt(self.reward_m2 / max(self.reward_count, 1) + 1e-8))


def standardize_returns(returns):
    """Zero mean, unit std; only centered when the batch has zero variance."""
    r = np.asarray(returns, dtype=np.float64)
    centered = r - r.mean()
    std = r.std()
    return centered / std if std > 0 else centered


def group_samples(game, group, batch):
    """Flatten every active decision of the group's players.

    Returns a dict of per-sample arrays: encoded input ``x``, ``stage``,
    pre-clamp ``action``, collection-time ``old_logp``, trajectory index
    ``traj`` and position ``slot`` in ``group.players``.
    """
    policy = group.policy
    parts = {k: [] for k in ("x", "stage", "action", "old_logp", "traj", "slot")}
    for slot, i in enumerate(group.players):
        for t in range(1, game.n_stages + 1):
            if not game.acts(i, t):
                continue
            idx = np.nonzero(batch.active[:, t - 1, i])[0]
            parts["x"].append(policy.encoder(batch.signals[t - 1][idx, i, :], t, policy.dtype))
            parts["stage"].append(np.full(idx.size, t))
            parts["action"].append(batch.raw_actions[idx, t - 1, i, :])
            parts["old_logp"].append(batch.log_probs[idx, t - 1, i])
            parts["traj"].append(idx)
            parts["slot"].append(np.full(idx.size, slot))
    return {k: np.concatenate(v) for k, v in parts.items()}


def reinforce_gradient(group, game, batch):
    """Ascent direction: mean over trajectories of R_hat * sum_t grad log pi.

    Returns are standardized per player within the batch; shared policies
    average over their players.
    """
    s = group_samples(game, group, batch)
    n = batch.n
    weights = np.zeros(s["traj"].size)
    for slot, i in enumerate(group.players):
        r_hat = standardize_returns(batch.utilities[:, i])
        sel = s["slot"] == slot
        weights[sel] = r_hat[s["traj"][sel]]
    weights /= n * len(group.players)
    _, grads = group.policy.log_prob_and_backward(s["x"], s["stage"], s["action"], weights)
    return grads


def gae(values, rewards, active, lam, gamma=1.0):
    """Generalized advantage estimates over the active steps of each row.

    ``values``, ``rewards``, ``active`` have shape (n, T); inactive steps are
    skipped (the next active step's value bootstraps across them) and get
    zero advantage.
    """
    n, n_steps = values.shape
    adv = np.zeros((n, n_steps))
    next_value = np.zeros(n)
    next_adv = np.zeros(n)
    for t in reversed(range(n_steps)):
        a = active[:, t]
        delta = rewards[:, t] + gamma * next_value - values[:, t]
        cur = delta + gamma * lam * next_adv
        adv[:, t] = np.where(a, cur, 0.0)
        next_value = np.where(a, values[:, t], next_value)
        next_adv = np.where(a, cur, next_adv)
    return adv, adv + values


def ppo_targets(game, group, batch, samples, *, lam, gamma, reward_scale):
    """Per-sample advantages and value targets; utility is the terminal reward."""
    n, n_stages = batch.n, game.n_stages
    v_all = group.value(samples["x"]) if samples["x"].shape[0] else np.zeros(0)
    adv_s = np.zeros(samples["traj"].size)
    ret_s = np.zeros(samples["traj"].size)
    for slot, i in enumerate(group.players):
        sel = np.nonzero(samples["slot"] == slot)[0]
        tr, st = samples["traj"][sel], samples["stage"][sel] - 1
        values = np.zeros((n, n_stages))
        active = np.zeros((n, n_stages), bool)
        values[tr, st] = v_all[sel]
        active[tr, st] = True
        # reward sits on each trajectory's last active step
        later = np.flip(np.cumsum(np.flip(active, 1), 1), 1) - active
        rewards = np.where(active & (later == 0), batch.utilities[:, i:i + 1] / reward_scale, 0.0)
        adv, ret = gae(values, rewards, active, lam, gamma)
        adv_s[sel] = adv[tr, st]
        ret_s[sel] = ret[tr, st]
    return adv_s, ret_s


def ppo_update(game, group, batch, *, clip, epochs, minibatches, lam, gamma, vf_coef,
               max_grad_norm, normalize_reward, rng):
    """Clipped-surrogate PPO epochs on one on-policy batch; returns minibatches skipped."""
    samples = group_samples(game, group, batch)
    scale = 1.0
    if normalize_reward:
        group.update_reward_stats(batch.utilities[:, group.players].ravel())
        scale = group.reward_std
    adv, ret = ppo_targets(game, group, batch, samples, lam=lam, gamma=gamma, reward_scale=scale)
    m = samples["traj"].size
    skipped = 0
    for _ in range(epochs):
        perm = rng.permutation(m)
        for idx in np.array_split(perm, minibatches):
            if idx.size == 0:
                continue
            a = adv[idx]
            if idx.size > 1:
                a = (a - a.mean()) / (a.std() + 1e-8)
            x, stages, acts = samples["x"][idx], samples["stage"][idx], samples["action"][idx]
            mean, cache = group.policy.forward(x, stages)
            logp = gaussian_log_prob(acts, mean, group.policy.log_std.astype(np.float64))
            ratio = np.exp(logp - samples["old_logp"][idx])
            if not np.all(np.isfinite(ratio)):
                skipped += 1
                continue
            clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip)
            use_unclipped = ratio * a <= clipped * a
            g_logp = -np.where(use_unclipped, a, 0.0) * ratio / idx.size
            pol_grads = group.policy.backward(mean, cache, acts, g_logp)
            v_pred, v_cache = group.value.mlp.forward(x)
            g_v = vf_coef * 2.0 * (v_pred[:, 0].astype(np.float64) - ret[idx]) / idx.size
            val_grads, _ = group.value.mlp.backward(v_cache, g_v[:, None])
            grads = pol_grads + val_grads
            clip_grad_norm(grads, max_grad_norm)
            params = group.params
            group.optimizer.step(params, grads)
            group.set_params(params)
    return skipped


class SelfPlayLearner(BaseEstimator):
    """Gradient-based self-play on a :class:`~eqlab.core.MultiStageGame`.

    ``fit(game)`` trains one Gaussian policy per player (``independent``) or
    one shared policy (``shared``; ``auto`` shares iff the game is
    symmetric). After fitting, ``profile_`` is the learned strategy profile
    and ``curve_`` the learning curve rows.
    """

    def __init__(self, algo="reinforce", learning_rate=1e-3, init_log_std=-3.0, batch_size=2**14,
                 iterations=2000, sharing="auto", hidden=(64, 64), clip=0.2, epochs=10, minibatches=4,
                 gae_lambda=0.95, discount=1.0, vf_coef=0.5, max_grad_norm=0.5, normalize_reward=False,
                 lr_schedule="constant", eval_every=0, eval_batch=2**14, dtype="float32", seed=0,
                 callback=None):
        self.algo = algo
        self.learning_rate = learning_rate
        self.init_log_std = init_log_std
        self.batch_size = batch_size
        self.iterations = iterations
        self.sharing = sharing
        self.hidden = hidden
        self.clip = clip
        self.epochs = epochs
        self.minibatches = minibatches
        self.gae_lambda = gae_lambda
        self.discount = discount
        self.vf_coef = vf_coef
        self.max_grad_norm = max_grad_norm
        self.normalize_reward = normalize_reward
        self.lr_schedule = lr_schedule
        self.eval_every = eval_every
        self.eval_batch = eval_batch
        self.dtype = dtype
        self.seed = seed
        self.callback = callback

    def _validate(self, game):
        if self.algo not in ALGOS:
            raise ConfigurationError(f"algo must be one of {ALGOS}, got {self.algo!r}")
        if self.sharing not in SHARING:
            raise ConfigurationError(f"sharing must be one of {SHARING}, got {self.sharing!r}")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be > 0")
        check_count(self.batch_size, "batch_size", minimum=2)
        check_count(self.iterations, "iterations", minimum=0)
        check_seed(self.seed)
        if self.lr_schedule not in ("constant", "linear"):
            raise ConfigurationError("lr_schedule must be 'constant' or 'linear'")
        if self.dtype not in DTYPES:
            raise ConfigurationError(f"dtype must be one of {tuple(DTYPES)}")
        if self.algo == "ppo":
            if not 0 <= self.clip:
                raise ConfigurationError("clip must be >= 0")
            check_count(self.epochs, "epochs")
            check_count(self.minibatches, "minibatches")
        shared = self.sharing == "shared" or (self.sharing == "auto" and getattr(game, "symmetric", False))
        if self.sharing == "shared" and not getattr(game, "symmetric", False):
            raise ConfigurationError("sharing='shared' requires a symmetric game")
        return shared

    def _build(self, game, shared):
        rng = np.random.default_rng(derive_seed(self.seed, _KEY_INIT))
        dtype = DTYPES[self.dtype]
        owners = [list(range(game.n_players))] if shared else [[i] for i in range(game.n_players)]
        groups = []
        for players in owners:
            pol = GaussianPolicy(game, players[0], hidden=tuple(self.hidden), init_log_std=self.init_log_std,
                                 rng=rng, dtype=dtype)
            value = ValueNetwork(pol.encoder, rng, tuple(self.hidden), dtype) if self.algo == "ppo" else None
            group = PolicyGroup(pol, players, value)
            group.optimizer = Adam(group.params, self.learning_rate)
            groups.append(group)
        return groups

    def _profile(self, groups, n_players):
        profile = [None] * n_players
        for g in groups:
            for i in g.players:
                profile[i] = g.policy
        return profile

    def fit(self, game, y=None):
        shared = self._validate(game)
        self.game_ = game
        self.groups_ = self._build(game, shared)
        self.profile_ = self._profile(self.groups_, game.n_players)
        self.analytic_ = equilibrium_profile(game) if has_equilibrium(game) else None
        self.curve_ = []
        self.skipped_minibatches_ = 0
        mb_rng = np.random.default_rng(derive_seed(self.seed, _KEY_MINIBATCH))
        for it in range(self.iterations):
            batch = rollout(game, self.profile_, self.batch_size, derive_seed(self.seed, _KEY_ROLLOUT, it))
            snapshot = [[p.copy() for p in g.params] for g in self.groups_]
            for g in self.groups_:
                g.optimizer.lr = self._lr_at(it)
                if self.algo == "reinforce":
                    grads = reinforce_gradient(g, game, batch)
                    params = g.policy.params
                    g.optimizer.step(params, [-gr for gr in grads])
                    g.policy.set_params(params)
                else:
                    self.skipped_minibatches_ += ppo_update(
                        game, g, batch, clip=self.clip, epochs=self.epochs, minibatches=self.minibatches,
                        lam=self.gae_lambda, gamma=self.discount, vf_coef=self.vf_coef,
                        max_grad_norm=self.max_grad_norm, normalize_reward=self.normalize_reward, rng=mb_rng)
            try:
                for g in self.groups_:
                    g.policy.check_finite()
            except NumericFaultError as err:
                for g, snap in zip(self.groups_, snapshot):
                    g.set_params(snap)
                self.failed_iteration_ = it
                raise NumericFaultError(f"training diverged at iteration {it}: {err}", it) from err
            if self.eval_every and ((it + 1) % self.eval_every == 0 or it + 1 == self.iterations):
                row = self._curve_row(game, it + 1, batch)
                self.curve_.append(row)
                if self.callback is not None:
                    self.callback(row)
        self.n_iter_ = self.iterations
        return self

    def _lr_at(self, it):
        if self.lr_schedule == "linear":
            return self.learning_rate * (1.0 - it / max(self.iterations, 1))
        return self.learning_rate

    def _curve_row(self, game, iteration, batch):
        row = {"iteration": iteration}
        utils = batch.utilities.mean(axis=0)
        for i in range(game.n_players):
            row[f"util_{i}"] = float(utils[i])
        if self.analytic_ is not None:
            eval_seed = derive_seed(self.seed, _KEY_EVAL)
            for i in range(game.n_players):
                row[f"loss_equ_{i}"] = loss_in_equilibrium(
                    game, self.profile_[i], i, self.eval_batch, eval_seed, analytic_profile=self.analytic_)
                _, avg = l2_per_stage(game, self.profile_[i], i, self.eval_batch, eval_seed,
                                      analytic_profile=self.analytic_)
                row[f"l2_{i}"] = avg
        return row

    def predict(self, signals, player=0, stage=1):
        """Mean actions of ``player`` at ``stage`` for an (n, sdim) signal array."""
        check_is_fitted(self, "profile_")
        player = check_player(player, self.game_.n_players)
        stage = check_stage(stage, self.game_.n_stages)
        sig = check_signals(signals, self.game_.signal_space(player, stage).dim)
        return self.profile_[player].mean_action(sig, stage)

    def state_dict(self):
        check_is_fitted(self, "groups_")
        return [{"players": list(g.players), "policy": g.policy.state_dict()} for g in self.groups_]
