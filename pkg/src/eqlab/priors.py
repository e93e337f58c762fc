"""Type distributions and the CARA utility transform."""

from dataclasses import dataclass

import numpy as np

from ._validation import check_count, check_seed
from .exceptions import ConfigurationError

PRIOR_KINDS = ("independent_uniform", "mineral_rights", "affiliated", "bertrand_cost")

# exp(700) is close to the largest finite double exponent; beyond it h saturates.
CARA_EXP_LIMIT = 700.0


def bertrand_cost_cdf(c):
    """F(c) = c/2 + c^2/2 on [0, 1]."""
    c = np.asarray(c, dtype=np.float64)
    return 0.5 * c + 0.5 * c * c


def bertrand_cost_ppf(u):
    """Inverse of :func:`bertrand_cost_cdf`: positive root of c^2 + c - 2u = 0."""
    u = np.asarray(u, dtype=np.float64)
    # 2u / (1/2 + sqrt(1/4 + 2u)) is the same root without cancellation near u = 0
    return 2.0 * u / (0.5 + np.sqrt(0.25 + 2.0 * u))


@dataclass(frozen=True)
class PriorModel:
    """Joint distribution of values and observations for ``n_agents`` players.

    ``independent_uniform`` draws private values on ``[low[i], high[i]]``;
    ``mineral_rights`` draws a common ``v ~ U[0, 1]`` and ``x_i ~ U[0, 2v]``;
    ``affiliated`` draws ``s, z_i ~ U[0, 1]``, ``x_i = z_i + s`` and values
    ``v = mean(x)``; ``bertrand_cost`` draws private costs i.i.d. from
    :func:`bertrand_cost_cdf`.
    """

    kind: str
    n_agents: int
    low: tuple = None
    high: tuple = None

    def __post_init__(self):
        if self.kind not in PRIOR_KINDS:
            raise ConfigurationError(f"unknown prior kind {self.kind!r}; expected one of {PRIOR_KINDS}")
        check_count(self.n_agents, "n_agents")
        if self.kind == "independent_uniform":
            low = self._broadcast(0.0 if self.low is None else self.low, "low")
            high = self._broadcast(1.0 if self.high is None else self.high, "high")
            if any(lo >= hi for lo, hi in zip(low, high)):
                raise ConfigurationError(f"independent_uniform needs low < high, got {low}, {high}")
        elif self.low is not None or self.high is not None:
            raise ConfigurationError(f"prior {self.kind!r} has fixed support; drop low/high")
        else:
            low, high = (0.0,) * self.n_agents, self._fixed_high()
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    def _broadcast(self, val, name):
        arr = np.broadcast_to(np.asarray(val, dtype=np.float64), (self.n_agents,))
        if not np.all(np.isfinite(arr)):
            raise ConfigurationError(f"prior {name} must be finite")
        return tuple(float(x) for x in arr)

    def _fixed_high(self):
        top = {"mineral_rights": 2.0, "affiliated": 2.0, "bertrand_cost": 1.0}[self.kind]
        return (top,) * self.n_agents

    @property
    def common_value(self):
        return self.kind in ("mineral_rights", "affiliated")

    def observation_bounds(self, agent):
        return self.low[agent], self.high[agent]

    def value_bounds(self, agent):
        if self.kind == "mineral_rights":
            return 0.0, 1.0
        return self.low[agent], self.high[agent]

    def sample(self, n, rng):
        """Draw ``(values, observations)``, each of shape (n, n_agents)."""
        m = self.n_agents
        if self.kind == "independent_uniform":
            lo, hi = np.asarray(self.low), np.asarray(self.high)
            obs = lo + (hi - lo) * rng.random((n, m))
            return obs.copy(), obs
        if self.kind == "bertrand_cost":
            obs = bertrand_cost_ppf(rng.random((n, m)))
            return obs.copy(), obs
        if self.kind == "mineral_rights":
            v = rng.random(n)
            obs = 2.0 * v[:, None] * rng.random((n, m))
            return np.repeat(v[:, None], m, axis=1), obs
        s = rng.random(n)
        obs = rng.random((n, m)) + s[:, None]
        v = obs.mean(axis=1)
        return np.repeat(v[:, None], m, axis=1), obs

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "independent_uniform":
            d.update(low=list(self.low), high=list(self.high))
        return d


def sample_types(prior, n, seed):
    """Seeded convenience wrapper around :meth:`PriorModel.sample`."""
    n = check_count(n)
    rng = np.random.default_rng(check_seed(seed))
    return prior.sample(n, rng)


@dataclass(frozen=True)
class RiskTransform:
    """CARA transform ``h(x) = (1 - exp(-rho x)) / rho``; identity at ``rho = 0``."""

    rho: float = 0.0

    def __post_init__(self):
        rho = float(self.rho)
        if not np.isfinite(rho) or rho < 0:
            raise ConfigurationError(f"rho must be a finite non-negative number, got {self.rho!r}")
        object.__setattr__(self, "rho", rho)

    def __call__(self, payoff):
        return apply_risk(self, payoff)


def apply_risk(rt, payoff):
    """Apply the CARA transform.

    Payoffs with ``rho * x < -700`` saturate at ``(1 - e^700) / rho`` (about
    ``-1e304 / rho``) instead of overflowing.
    """
    rho = rt.rho if isinstance(rt, RiskTransform) else float(rt)
    x = np.asarray(payoff, dtype=np.float64)
    if rho == 0.0:
        out = x.copy()
    else:
        x = np.maximum(x, -CARA_EXP_LIMIT / rho)
        out = -np.expm1(-rho * x) / rho
    return float(out) if out.ndim == 0 else out
