"""Experiment configuration: validation, hashing, game/learner construction."""

import hashlib
import json
from pathlib import Path
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .environments import EliminationContest, SequentialAuction, StackelbergBertrand
from .exceptions import ConfigurationError
from .priors import PriorModel, RiskTransform


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PriorConfig(_Strict):
    kind: Optional[Literal["independent_uniform", "mineral_rights", "affiliated", "bertrand_cost"]] = Field(
        None, description="type distribution; default depends on the game family")
    low: Optional[Union[float, List[float]]] = Field(None, description="independent_uniform lower bound(s)")
    high: Optional[Union[float, List[float]]] = Field(None, description="independent_uniform upper bound(s)")


class GameConfig(_Strict):
    family: Literal["sequential_auction", "elimination_contest", "stackelberg_bertrand"] = Field(
        description="game family")
    mechanism: Literal["first_price", "second_price"] = Field("first_price", description="auction payment rule")
    n_players: Optional[int] = Field(None, description="bidders N (sequential auction only)")
    n_stages: Optional[int] = Field(None, description="units T (sequential auction only)")
    prior: PriorConfig = Field(default_factory=PriorConfig, description="type distribution")
    rho: float = Field(0.0, ge=0, description="CARA risk aversion; 0 = risk neutral")
    reveal_prices: bool = Field(True, description="sequential auction: publish past prices")
    reveal: Literal["valuations", "bids"] = Field("valuations", description="contest: what finalists learn")
    demand_intercept: float = Field(10.0, gt=0, description="Bertrand demand Q(p) = intercept - p")


class PPOConfig(_Strict):
    clip: float = Field(0.2, ge=0, description="ratio clip range")
    epochs: int = Field(10, ge=1, description="passes over each batch")
    minibatches: int = Field(4, ge=1, description="minibatches per epoch")
    gae_lambda: float = Field(0.95, ge=0, le=1, description="GAE lambda")
    discount: float = Field(1.0, ge=0, le=1, description="discount gamma")
    vf_coef: float = Field(0.5, ge=0, description="value loss weight")
    max_grad_norm: Optional[float] = Field(0.5, description="global gradient norm clip (null = off)")
    normalize_reward: bool = Field(False, description="scale rewards by a running std")


class LearnerConfig(_Strict):
    algo: Literal["reinforce", "ppo"] = Field(description="policy-gradient algorithm")
    learning_rate: float = Field(1e-3, gt=0, description="Adam step size")
    lr_schedule: Literal["constant", "linear"] = Field("constant", description="step-size schedule (linear decays to 0)")
    init_log_std: float = Field(-3.0, description="initial log standard deviation")
    batch_size: int = Field(2**14, ge=2, description="games per iteration")
    iterations: int = Field(2000, ge=0, description="training iterations")
    sharing: Literal["auto", "shared", "independent"] = Field("auto", description="parameter sharing")
    hidden: List[int] = Field([64, 64], description="hidden layer widths")
    dtype: Literal["float32", "float64"] = Field("float32", description="network compute precision")
    ppo: PPOConfig = Field(default_factory=PPOConfig, description="PPO settings")


class VerifierConfig(_Strict):
    D: int = Field(16, ge=2, description="grid points per dimension")
    M_IS: int = Field(2**15, ge=1, description="initial simulations")
    opponent_mode: Literal["sample", "mean"] = Field("sample", description="opponent actions in the tree")
    memory_budget_mb: int = Field(3072, ge=1, description="fail fast above this tree size")
    players: Union[Literal["all"], List[int]] = Field("all", description="players to certify")


class RunConfig(_Strict):
    seeds: List[int] = Field([0], description="one training run per seed")
    eval_every: int = Field(0, ge=0, description="learning-curve cadence in iterations (0 = end only)")
    eval_batch: int = Field(2**16, ge=1, description="games per metric estimate")
    output_dir: str = Field("runs", description="root directory for run outputs")
    name: Optional[str] = Field(None, description="run group name (default: config hash)")
    verify: bool = Field(False, description="run the verifier after training")


class ExperimentConfig(_Strict):
    game: GameConfig
    learner: LearnerConfig
    verifier: VerifierConfig = Field(default_factory=VerifierConfig)
    run: RunConfig = Field(default_factory=RunConfig)

    @model_validator(mode="after")
    def _check_game(self):
        build_game(self.game)
        return self


def _error_text(err):
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"])
        msg = e["msg"].removeprefix("Value error, ")
        lines.append(f"{path}: {msg}" if path else msg)
    return "; ".join(lines)


def build_prior(cfg, n_agents, default_kind, default_low=None, default_high=None):
    kind = cfg.kind or default_kind
    low, high = cfg.low, cfg.high
    if kind == "independent_uniform":
        low = default_low if low is None else low
        high = default_high if high is None else high
    return PriorModel(kind, n_agents, low=low, high=high)


def build_game(cfg):
    """Instantiate the game of a :class:`GameConfig`; errors name the offending field."""
    try:
        risk = RiskTransform(cfg.rho)
        if cfg.family == "sequential_auction":
            n = cfg.n_players if cfg.n_players is not None else 3
            t = cfg.n_stages if cfg.n_stages is not None else 2
            if n <= t:
                raise ConfigurationError(f"game.n_players must exceed game.n_stages (N={n}, T={t})")
            prior = build_prior(cfg.prior, n, "independent_uniform", 0.0, 1.0)
            return SequentialAuction(cfg.mechanism, n, t, prior, risk, cfg.reveal_prices)
        if cfg.family == "elimination_contest":
            if cfg.n_players not in (None, 4) or cfg.n_stages not in (None, 2):
                raise ConfigurationError("game.n_players/n_stages are fixed to 4/2 for the contest")
            prior = build_prior(cfg.prior, 4, "independent_uniform", 1.0, 1.5)
            return EliminationContest(prior, risk, cfg.reveal)
        if cfg.n_players not in (None, 2) or cfg.n_stages not in (None, 2):
            raise ConfigurationError("game.n_players/n_stages are fixed to 2/2 for Bertrand")
        prior = build_prior(cfg.prior, 2, "bertrand_cost")
        return StackelbergBertrand(prior, risk, cfg.demand_intercept)
    except ConfigurationError as err:
        msg = str(err)
        raise ConfigurationError(msg if msg.startswith("game.") else f"game: {msg}") from None


def learner_kwargs(cfg, seed):
    lc = cfg.learner
    return dict(
        algo=lc.algo, learning_rate=lc.learning_rate, lr_schedule=lc.lr_schedule, init_log_std=lc.init_log_std,
        batch_size=lc.batch_size, iterations=lc.iterations, sharing=lc.sharing, hidden=tuple(lc.hidden),
        clip=lc.ppo.clip, epochs=lc.ppo.epochs, minibatches=lc.ppo.minibatches,
        gae_lambda=lc.ppo.gae_lambda, discount=lc.ppo.discount, vf_coef=lc.ppo.vf_coef,
        max_grad_norm=lc.ppo.max_grad_norm, normalize_reward=lc.ppo.normalize_reward,
        eval_every=cfg.run.eval_every, eval_batch=cfg.run.eval_batch, dtype=lc.dtype, seed=seed,
    )


def _parse_value(raw):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(data, overrides):
    """Apply ``key.path=value`` overrides (values parsed as JSON when possible)."""
    data = json.loads(json.dumps(data))
    for item in overrides or ():
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        node = data
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"override {key}: {p} is not an object")
        node[parts[-1]] = _parse_value(raw)
    return data


def parse_config(data):
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigurationError(_error_text(err)) from None


def load_config(path, overrides=None):
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigurationError(f"cannot read config {path}: {err}") from None
    return parse_config(apply_overrides(data, overrides))


def config_dict(cfg):
    return cfg.model_dump(mode="json")


def config_hash(cfg):
    """Hash of everything that defines the experiment except seeds and output location."""
    d = config_dict(cfg)
    d["run"] = {k: v for k, v in d["run"].items() if k not in ("seeds", "output_dir", "name")}
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def content_version():
    """Git-style hash over the package sources (blob hashes folded in path order)."""
    root = Path(__file__).resolve().parent
    outer = hashlib.sha1()
    for path in sorted(root.rglob("*.py")):
        data = path.read_bytes()
        blob = hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()
        outer.update(f"{path.relative_to(root).as_posix()} {blob}\n".encode())
    return outer.hexdigest()


def describe_fields(model=ExperimentConfig, prefix=""):
    """Lines ``path (default): description`` for every config field."""
    lines = []
    for name, info in model.model_fields.items():
        path = f"{prefix}{name}"
        ann = info.annotation
        if isinstance(ann, type) and issubclass(ann, BaseModel):
            lines.extend(describe_fields(ann, path + "."))
            continue
        default = "required" if info.is_required() else (
            "auto" if info.default is None and info.default_factory is None else
            repr(info.default_factory() if info.default_factory else info.default))
        lines.append(f"  {path} [{default}]: {info.description or ''}")
    return lines
