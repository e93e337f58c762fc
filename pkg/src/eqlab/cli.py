"""Command line interface: train, eval, verify, sweep, table."""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import artifacts
from .analytic import equilibrium_profile, has_equilibrium
from .config import (
    build_game,
    config_dict,
    config_hash,
    content_version,
    describe_fields,
    learner_kwargs,
    load_config,
    parse_config,
)
from .core import derive_seed
from .exceptions import ConfigurationError, MemoryBudgetError, NumericFaultError
from .learners import SelfPlayLearner
from .metrics import MetricsReport, evaluate_profile
from .verifier import verify

EXIT_CONFIG, EXIT_NUMERIC, EXIT_MEMORY = 2, 3, 4
# seed-derivation keys for evaluation and verification of a run
_KEY_EVAL, _KEY_VERIFY = 7, 11


def parse_seeds(text):
    """``"0..9"`` (inclusive) or ``"0,3,5"``."""
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            seeds = list(range(int(lo), int(hi) + 1))
        else:
            seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigurationError(f"--seeds: cannot parse {text!r}") from None
    if not seeds or min(seeds) < 0:
        raise ConfigurationError(f"--seeds: need non-negative seeds, got {text!r}")
    return seeds


def _int_list(text, flag):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigurationError(f"{flag}: expected comma-separated integers, got {text!r}") from None


def _stamp(cfg, seed):
    return {"config_hash": config_hash(cfg), "version": content_version(), "seed": seed}


def _run_dir(cfg, seed):
    name = cfg.run.name or config_hash(cfg)
    return Path(cfg.run.output_dir) / name / f"seed_{seed}"


def _load_run(run_dir):
    run_dir = Path(run_dir)
    meta = artifacts.read_json(run_dir / "config.json")
    cfg = parse_config(meta["config"])
    return cfg, int(meta["seed"]), build_game(cfg.game)


def _report_dict(report, cfg, seed):
    d = report.to_dict()
    d.update(_stamp(cfg, seed))
    return d


def train_one(cfg, seed, log=print):
    game = build_game(cfg.game)
    out = _run_dir(cfg, seed)
    out.mkdir(parents=True, exist_ok=True)
    stamp = _stamp(cfg, seed)
    artifacts.write_json(out / "config.json", {**stamp, "config": config_dict(cfg)})
    learner = SelfPlayLearner(**learner_kwargs(cfg, seed))
    try:
        learner.fit(game)
    except NumericFaultError:
        meta = {**stamp, "game": game.describe(), "algo": cfg.learner.algo,
                "iteration": getattr(learner, "failed_iteration_", None), "status": "diverged"}
        path = artifacts.write_json(out / "checkpoint_failed.json", artifacts.checkpoint_dict(learner, meta))
        raise NumericFaultError(f"training diverged; diagnostic checkpoint at {path}") from None
    meta = {**stamp, "game": game.describe(), "algo": cfg.learner.algo, "iteration": learner.n_iter_}
    artifacts.write_json(out / "checkpoint.json", artifacts.checkpoint_dict(learner, meta))
    columns = ["iteration"] + [f"util_{i}" for i in range(game.n_players)]
    if has_equilibrium(game):
        columns += [f"loss_equ_{i}" for i in range(game.n_players)] + [f"l2_{i}" for i in range(game.n_players)]
    comment = f"config_hash={stamp['config_hash']} version={stamp['version']} seed={seed}"
    artifacts.write_csv(out / "curve.csv", learner.curve_, columns, comment=comment)
    analytic = equilibrium_profile(game) if has_equilibrium(game) else None
    report = evaluate_profile(game, learner.profile_, cfg.run.eval_batch, derive_seed(seed, _KEY_EVAL),
                              analytic_profile=analytic)
    report.config_hash = stamp["config_hash"]
    report.seeds["train"] = seed
    report.sample_counts["train_batch"] = cfg.learner.batch_size
    artifacts.write_json(out / "metrics.json", _report_dict(report, cfg, seed))
    if cfg.run.verify:
        verify_run(out, None, None, cfg.verifier.players, log=log)
    log(str(out))
    return out


def verify_run(run_dir, D=None, mis=None, players="all", seed=None, log=print):
    cfg, run_seed, game = _load_run(run_dir)
    run_dir = Path(run_dir)
    ckpt = artifacts.read_json(run_dir / "checkpoint.json")
    profile = artifacts.profile_from_checkpoint(game, ckpt)
    D = D or cfg.verifier.D
    mis = mis or cfg.verifier.M_IS
    which = list(range(game.n_players)) if players in ("all", None) else list(players)
    seed = derive_seed(run_seed, _KEY_VERIFY) if seed is None else seed
    metrics_path = run_dir / "metrics.json"
    report = MetricsReport.from_dict(artifacts.read_json(metrics_path)) if metrics_path.exists() else MetricsReport()
    report.config_hash = config_hash(cfg)
    for i in which:
        res = verify(game, profile, i, D, mis, seed, opponent_mode=cfg.verifier.opponent_mode,
                     memory_budget=cfg.verifier.memory_budget_mb * 2**20)
        artifacts.write_json(run_dir / f"verifier_player_{i}.json", {**_stamp(cfg, run_seed), **res.to_dict()})
        report.player(i).loss_ver = res.loss_ver
        report.seeds["verify"] = seed
        report.sample_counts["verify_M_IS"] = mis
        report.sample_counts["verify_D"] = D
        log(f"player {i}: loss_ver={res.loss_ver:.6f}")
    artifacts.write_json(metrics_path, _report_dict(report, cfg, run_seed))


def eval_run(run_dir, log=print):
    cfg, seed, game = _load_run(run_dir)
    run_dir = Path(run_dir)
    profile = artifacts.profile_from_checkpoint(game, artifacts.read_json(run_dir / "checkpoint.json"))
    analytic = equilibrium_profile(game) if has_equilibrium(game) else None
    report = evaluate_profile(game, profile, cfg.run.eval_batch, derive_seed(seed, _KEY_EVAL),
                              analytic_profile=analytic)
    old = run_dir / "metrics.json"
    if old.exists():
        prev = MetricsReport.from_dict(artifacts.read_json(old))
        for i, pm in prev.players.items():
            report.player(i).loss_ver = pm.loss_ver
    report.config_hash = config_hash(cfg)
    report.seeds["train"] = seed
    artifacts.write_json(old, _report_dict(report, cfg, seed))
    for i, pm in sorted(report.players.items()):
        log(f"player {i}: util={pm.util_hat:.6f} loss_equ={pm.loss_equ} l2_avg={pm.l2_avg}")


def sweep(cfg, profile, game, Ds, mis_list, players, seeds, out, log=print):
    rows = []
    for D in Ds:
        for mis in mis_list:
            for seed in seeds:
                for i in players:
                    res = verify(game, profile, i, D, mis, seed, opponent_mode=cfg.verifier.opponent_mode,
                                 memory_budget=cfg.verifier.memory_budget_mb * 2**20)
                    rows.append({"D": D, "M_IS": mis, "seed": seed, "player": i, "loss_ver": res.loss_ver,
                                 "best_response_utility": res.best_response_utility,
                                 "actual_utility": res.actual_utility})
                    log(f"D={D} M_IS={mis} seed={seed} player={i} loss_ver={res.loss_ver:.6f}")
    comment = f"config_hash={config_hash(cfg)} version={content_version()}"
    artifacts.write_csv(out, rows, comment=comment)
    return rows


METRICS = ("util_hat", "loss_equ", "l2_avg", "loss_ver")


def format_cell(values):
    """``"mean (std)"`` with the population standard deviation."""
    arr = np.asarray(values, dtype=np.float64)
    return f"{arr.mean():.4f} ({arr.std(ddof=0):.4f})"


def _setting_name(game_cfg):
    g = game_cfg
    if g.family == "sequential_auction":
        base = f"{g.mechanism} N={g.n_players or 3} T={g.n_stages or 2}"
    elif g.family == "elimination_contest":
        base = f"contest reveal={g.reveal}"
    else:
        base = "bertrand"
    extra = []
    if g.prior.kind:
        extra.append(g.prior.kind)
    if g.rho:
        extra.append(f"rho={g.rho}")
    return base + (f" [{', '.join(extra)}]" if extra else "")


def _first_difference(a, b, prefix=""):
    for key in sorted(set(a) | set(b)):
        va, vb = a.get(key), b.get(key)
        path = f"{prefix}{key}"
        if isinstance(va, dict) and isinstance(vb, dict):
            found = _first_difference(va, vb, path + ".")
            if found:
                return found
        elif va != vb:
            return path
    return None


def build_table(run_dirs):
    """Rows (setting, metric) x columns (algorithm); cells "mean (std)" over seeds."""
    runs = []
    for d in run_dirs:
        d = Path(d)
        found = [d] if (d / "metrics.json").exists() else sorted(p.parent for p in d.rglob("metrics.json"))
        runs.extend(found)
    if not runs:
        raise ConfigurationError("no completed runs (metrics.json) found")
    groups = {}
    for r in runs:
        meta = artifacts.read_json(r / "config.json")
        cfg = parse_config(meta["config"])
        key = (_setting_name(cfg.game), cfg.learner.algo)
        groups.setdefault(key, []).append((r, cfg, artifacts.read_json(r / "metrics.json")))
    for (setting, algo), items in groups.items():
        ref = items[0][1]
        for _, cfg, _ in items[1:]:
            if config_hash(cfg) != config_hash(ref):
                field = _first_difference(config_dict(ref), config_dict(cfg)) or "unknown"
                raise ConfigurationError(f"runs of '{setting}' / {algo} differ in field {field}")
    algos = sorted({a for _, a in groups})
    settings = sorted({s for s, _ in groups})
    rows = []
    for setting in settings:
        for metric in METRICS:
            row = {"setting": setting, "metric": metric}
            any_value = False
            for algo in algos:
                vals = []
                for _, _, m in groups.get((setting, algo), []):
                    per = [p.get(metric) for p in m["players"].values() if p.get(metric) is not None]
                    if per:
                        vals.append(float(np.mean(per)))
                row[algo] = format_cell(vals) if vals else ""
                any_value |= bool(vals)
            if any_value:
                rows.append(row)
    return rows, ["setting", "metric"] + algos


def _add_common(p):
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field, e.g. --set learner.iterations=500")


def make_parser():
    fields = "\n".join(describe_fields())
    parser = argparse.ArgumentParser(
        prog="eqlab",
        description="Equilibrium learning and best-response verification for multi-stage games.",
        epilog="config fields (JSON path [default]: meaning):\n" + fields
        + "\n\nworker threads for rollouts and the verifier: EQLAB_WORKERS (default 1)",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one run per seed", epilog="config fields:\n" + fields,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", required=True, help="experiment JSON")
    p.add_argument("--seeds", help="e.g. 0..9 or 0,2,4 (overrides run.seeds)")
    p.add_argument("--out", help="output root (overrides run.output_dir)")
    _add_common(p)

    p = sub.add_parser("verify", help="run the verifier on trained runs")
    p.add_argument("runs", nargs="+", help="run directories (seed_*)")
    p.add_argument("--D", type=int, help="grid points per dimension")
    p.add_argument("--mis", type=int, help="initial simulations M_IS")
    p.add_argument("--player", default="all", help="'all' or a player index")
    p.add_argument("--seed", type=int, help="verifier seed (default derived from the run seed)")

    p = sub.add_parser("eval", help="recompute metrics of trained runs")
    p.add_argument("runs", nargs="+", help="run directories (seed_*)")

    p = sub.add_parser("sweep", help="D x M_IS grid of verifier runs (tidy CSV)")
    p.add_argument("run", nargs="?", help="run directory with a checkpoint")
    p.add_argument("--config", help="experiment JSON (use with --analytic)")
    p.add_argument("--analytic", action="store_true", help="certify the closed-form equilibrium profile")
    p.add_argument("--D", default="4,8,16,32", help="comma-separated grid sizes")
    p.add_argument("--mis", default="1024,8192,65536", help="comma-separated M_IS values")
    p.add_argument("--player", default="0", help="'all' or a player index")
    p.add_argument("--seeds", default="0", help="verifier seeds, e.g. 0..4")
    p.add_argument("--out", required=True, help="output CSV")
    _add_common(p)

    p = sub.add_parser("table", help="aggregate runs into a mean (std) table")
    p.add_argument("runs", nargs="+", help="run directories or roots")
    p.add_argument("--out", help="output CSV (default: stdout)")
    return parser


def _players(text, n):
    if text == "all":
        return list(range(n))
    idx = _int_list(text, "--player")
    if any(not 0 <= i < n for i in idx):
        raise ConfigurationError(f"--player: indices must be in 0..{n - 1}")
    return idx


def run(argv=None, log=print):
    args = make_parser().parse_args(argv)
    if args.command == "train":
        cfg = load_config(args.config, args.overrides)
        if args.seeds:
            cfg.run.seeds = parse_seeds(args.seeds)
        if args.out:
            cfg.run.output_dir = args.out
        for seed in cfg.run.seeds:
            train_one(cfg, seed, log)
    elif args.command == "verify":
        for r in args.runs:
            _, _, game = _load_run(r)
            verify_run(r, args.D, args.mis, _players(args.player, game.n_players), args.seed, log)
    elif args.command == "eval":
        for r in args.runs:
            eval_run(r, log)
    elif args.command == "sweep":
        if args.run:
            cfg, _, game = _load_run(args.run)
            profile = artifacts.profile_from_checkpoint(game, artifacts.read_json(Path(args.run) / "checkpoint.json"))
        elif args.config and args.analytic:
            cfg = load_config(args.config, args.overrides)
            game = build_game(cfg.game)
            profile = equilibrium_profile(game)
        else:
            raise ConfigurationError("sweep needs a run directory or --config with --analytic")
        sweep(cfg, profile, game, _int_list(args.D, "--D"), _int_list(args.mis, "--mis"),
              _players(args.player, game.n_players), parse_seeds(args.seeds), args.out, log)
    elif args.command == "table":
        rows, cols = build_table(args.runs)
        if args.out:
            artifacts.write_csv(args.out, rows, cols)
        else:
            log(",".join(cols))
            for r in rows:
                log(",".join(f'"{r[c]}"' if "," in str(r[c]) else str(r[c]) for c in cols))
    return 0


def main(argv=None):
    try:
        return run(argv)
    except ConfigurationError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFaultError as err:
        print(f"numeric fault: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except MemoryBudgetError as err:
        print(f"memory: {err} (required {err.required_bytes} bytes, available {err.available_bytes})",
              file=sys.stderr)
        return EXIT_MEMORY


if __name__ == "__main__":
    sys.exit(main())
