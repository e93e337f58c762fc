import numpy as np
import pytest

from eqlab.core import Box, FunctionStrategy, MultiStageGame

# Lines collected by the acceptance suite, echoed after the run.
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


class TinyGame(MultiStageGame):
    """Two-player, two-stage game with integer payoffs for brute-force checks.

    Each player observes ``x_i ~ U[0, 1]`` and bids in ``[0, 1]`` twice. The
    stage-2 signal is ``(x_i, own stage-1 action)``. Player 0 sits out stage
    2 when ``x_0 < skip``. Payoffs are integer table lookups on quartile bins
    so every sum in the verifier is exact.
    """

    n_players = 2
    n_stages = 2
    nature_keys = ("x",)

    def __init__(self, table1, table2, skip=0.0):
        self.table1 = np.asarray(table1, dtype=np.int64)
        self.table2 = np.asarray(table2, dtype=np.int64)
        self.skip = float(skip)

    def signal_layout(self, player, stage):
        return (("obs",),) if stage == 1 else (("obs",), ("action", 1, 0))

    def signal_space(self, player, stage):
        return Box.of((0, 1)) if stage == 1 else Box.of((0, 1), (0, 1))

    def action_space(self, player, stage):
        return Box.of((0, 1))

    @property
    def utility_bound(self):
        return float(np.abs(self.table1).max() + np.abs(self.table2).max())

    def initial_state(self, n, rng):
        x = rng.random((n, 2))
        return {"x": x, "a1": np.zeros((n, 2)), "a2": np.zeros((n, 2))}

    def signals(self, state, stage):
        if stage == 1:
            return state["x"][:, :, None]
        return np.stack([state["x"], state["a1"]], axis=2)

    def active(self, state, stage):
        act = np.ones(state["x"].shape, dtype=bool)
        if stage == 2:
            act[:, 0] = state["x"][:, 0] >= self.skip
        return act

    def transition(self, state, stage, actions, rng):
        out = dict(state)
        out[f"a{stage}"] = actions[:, :, 0].copy()
        return out

    def utilities(self, state):
        return self.payoff(state["x"][:, 0], state["x"][:, 1], state["a1"], state["a2"])

    def payoff(self, x0, x1, a1, a2):
        b = lambda y: np.minimum((np.asarray(y) * 4).astype(np.int64), 3)  # noqa: E731
        u0 = self.table1[b(a1[:, 0]), b(x0), b(a1[:, 1])] + self.table2[b(a2[:, 0]), b(a1[:, 0]), b(a2[:, 1])]
        u1 = -u0
        return np.stack([u0, u1], axis=1).astype(np.float64)


def tiny_game(seed):
    rng = np.random.default_rng(seed)
    skip = float(rng.choice([0.0, 0.3]))
    return TinyGame(rng.integers(-5, 6, (4, 4, 4)), rng.integers(-5, 6, (4, 4, 4)), skip=skip)


def tiny_opponent(seed):
    """A pure opponent whose bids depend on its observation (and own history)."""
    w = np.random.default_rng(seed + 1000).random(3)

    def fn(s, t):
        if t == 1:
            return np.mod(w[0] * s[:, 0] + w[1], 1.0)
        return np.mod(s[:, 0] * w[2] + s[:, 1], 1.0)

    return FunctionStrategy(fn, f"tiny{seed}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
