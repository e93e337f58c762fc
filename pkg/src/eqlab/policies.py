"""Gaussian policies over box-normalized signals."""

import hashlib

import numpy as np

from .core import LOG_SQRT_2PI, Strategy
from .exceptions import ConfigurationError, NumericFaultError
from .nn import MLP


def gaussian_log_prob(actions, mean, log_std):
    """Sum over action dims of the diagonal Gaussian log-density."""
    z = (actions - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - actions.shape[-1] * LOG_SQRT_2PI


class SignalEncoder:
    """Maps stage signals to network inputs.

    Each signal coordinate is scaled from its box to ``[-1, 1]``, padded to
    the longest signal of the game and followed by a one-hot stage code, so
    one network can serve every stage.
    """

    def __init__(self, game, player):
        self.n_stages = game.n_stages
        self.max_dim = max(game.signal_space(player, t).dim for t in range(1, game.n_stages + 1))
        self.input_dim = self.max_dim + self.n_stages
        self.centers, self.inv_half = {}, {}
        for t in range(1, game.n_stages + 1):
            box = game.signal_space(player, t)
            half = 0.5 * (box.highs - box.lows)
            self.centers[t] = 0.5 * (box.highs + box.lows)
            self.inv_half[t] = np.where(half > 0, 1.0 / np.where(half > 0, half, 1.0), 0.0)

    def __call__(self, signals, stage, dtype=np.float64):
        signals = np.asarray(signals, dtype=np.float64)
        n, d = signals.shape
        x = np.zeros((n, self.input_dim), dtype=dtype)
        x[:, :d] = (signals - self.centers[stage]) * self.inv_half[stage]
        x[:, self.max_dim + stage - 1] = 1.0
        return x


class GaussianPolicy(Strategy):
    """Stochastic strategy: MLP mean, state-independent learnable log-std.

    The network output is mapped affinely onto the action box of the stage
    (``low + half_width * out``), so a near-zero initial output means bids
    near the lower bound. ``log_std`` lives in action units.
    """

    stochastic = True

    def __init__(self, game, player=0, *, hidden=(64, 64), init_log_std=-3.0, rng=None, dtype=np.float32):
        rng = np.random.default_rng(0) if rng is None else rng
        self.encoder = SignalEncoder(game, player)
        self.action_dim = game.action_dim
        self.dtype = np.dtype(dtype)
        self.mlp = MLP((self.encoder.input_dim, *hidden, self.action_dim), rng, dtype=self.dtype)
        self.log_std = np.full(self.action_dim, float(init_log_std), dtype=self.dtype)
        self.offset, self.scale = {}, {}
        for t in range(1, game.n_stages + 1):
            box = game.action_space(player, t)
            if box.dim != self.action_dim:
                raise ConfigurationError("action boxes must share the game's action_dim")
            self.offset[t] = box.lows.copy()
            self.scale[t] = np.maximum(0.5 * (box.highs - box.lows), 1e-12)

    # parameters

    @property
    def params(self):
        return self.mlp.params + [self.log_std]

    @property
    def param_names(self):
        return self.mlp.names + ["log_std"]

    def set_params(self, arrays):
        *net, log_std = arrays
        self.mlp.params = [np.asarray(a, dtype=self.dtype) for a in net]
        self.log_std = np.asarray(log_std, dtype=self.dtype)

    def state_dict(self):
        d = self.mlp.state_dict()
        d["log_std"] = self.log_std.astype(np.float64).tolist()
        return d

    def load_state_dict(self, state):
        self.mlp.load_state_dict(state)
        self.log_std = np.asarray(state["log_std"], dtype=self.dtype).reshape(self.action_dim)

    def fingerprint(self):
        h = hashlib.sha1()
        for p in self.params:
            h.update(np.ascontiguousarray(p).tobytes())
        return "gauss:" + h.hexdigest()

    def check_finite(self):
        for name, p in zip(self.param_names, self.params):
            if not np.all(np.isfinite(p)):
                raise NumericFaultError(f"non-finite parameter {name}")

    # evaluation

    def _stage_affine(self, stages):
        stages = np.asarray(stages)
        if stages.ndim == 0:
            return self.offset[int(stages)], self.scale[int(stages)]
        keys = sorted(self.offset)
        off = np.stack([self.offset[t] for t in keys])
        sc = np.stack([self.scale[t] for t in keys])
        return off[stages - 1], sc[stages - 1]

    def forward(self, x, stages):
        """Means for encoded inputs; ``stages`` is a scalar or per-row array."""
        out, cache = self.mlp.forward(x)
        off, sc = self._stage_affine(stages)
        return off + sc * out.astype(np.float64), (cache, sc)

    def mean_action(self, signals, stage):
        x = self.encoder(signals, stage, self.dtype)
        return self.forward(x, stage)[0]

    def act(self, signals, stage, noise):
        mean = self.mean_action(signals, stage)
        log_std = self.log_std.astype(np.float64)
        raw = mean + np.exp(log_std) * noise
        return raw, gaussian_log_prob(raw, mean, log_std)

    def log_prob(self, signals, stage, actions):
        """Log-density of pre-clamp ``actions`` given stage signals."""
        mean = self.mean_action(signals, stage)
        out = gaussian_log_prob(np.asarray(actions, dtype=np.float64), mean, self.log_std.astype(np.float64))
        if not np.all(np.isfinite(out)):
            raise NumericFaultError("non-finite log-probability", int(np.argmax(~np.isfinite(out))))
        return out

    def log_prob_and_backward(self, x, stages, actions, weights):
        """Log-probs and gradient of ``sum(weights * log_prob)``.

        ``x`` are encoded inputs with per-row ``stages``. Returns
        ``(log_probs, grads)`` where grads align with :attr:`params`.
        """
        mean, cache = self.forward(x, stages)
        logp = gaussian_log_prob(actions, mean, self.log_std.astype(np.float64))
        return logp, self.backward(mean, cache, actions, weights)

    def backward(self, mean, cache, actions, weights):
        """Gradient of ``sum(weights * log_prob)`` from a :meth:`forward` result."""
        mlp_cache, sc = cache
        log_std = self.log_std.astype(np.float64)
        inv_var = np.exp(-2.0 * log_std)
        diff = actions - mean
        w = np.asarray(weights, dtype=np.float64)[:, None]
        g_mean = w * diff * inv_var
        grads, _ = self.mlp.backward(mlp_cache, g_mean * sc)
        g_log_std = np.sum(w * (diff * diff * inv_var - 1.0), axis=0)
        return grads + [g_log_std.astype(self.dtype)]

    def copy(self):
        new = object.__new__(GaussianPolicy)
        new.__dict__.update(self.__dict__)
        new.mlp = object.__new__(type(self.mlp))
        new.mlp.__dict__.update(self.mlp.__dict__)
        new.mlp.params = [p.copy() for p in self.mlp.params]
        new.log_std = self.log_std.copy()
        return new


def policy_log_prob(policy, signal, action, stage=1):
    """Log-density of a single (signal, pre-clamp action) pair."""
    sig = np.atleast_2d(np.asarray(signal, dtype=np.float64))
    act = np.atleast_2d(np.asarray(action, dtype=np.float64))
    return float(policy.log_prob(sig, stage, act)[0])


class ValueNetwork:
    """State-value baseline over the same encoded inputs as the policy."""

    def __init__(self, encoder, rng, hidden=(64, 64), dtype=np.float32):
        self.encoder = encoder
        self.mlp = MLP((encoder.input_dim, *hidden, 1), rng, out_gain=1.0, dtype=dtype)

    def __call__(self, x):
        return self.mlp(x)[:, 0].astype(np.float64)
