"""JSON / CSV artifacts: checkpoints, learning curves, reports."""

import csv
import io as _io
import json
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError
from .policies import GaussianPolicy

CHECKPOINT_FORMAT = "eqlab-checkpoint/1"


def _default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def dumps(obj):
    return json.dumps(obj, sort_keys=True, indent=2, default=_default) + "\n"


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj))
    return path


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigurationError(f"cannot read {path}: {err}") from None


def write_csv(path, rows, columns=None, comment=None):
    """Rows of dicts to CSV with a fixed column order and ``\\n`` line ends.

    ``comment`` becomes a leading ``# ...`` metadata line.
    """
    columns = list(columns or (rows[0].keys() if rows else []))
    buf = _io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if row.get(k) is None else repr(row[k]) if isinstance(row.get(k), float)
                             else row[k]) for k in columns})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())
    return path


def read_csv(path):
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def checkpoint_dict(learner, metadata):
    """Serializable snapshot: metadata plus named flat tensors per policy group."""
    groups = []
    for g in learner.groups_:
        tensors = {}
        for name, p in zip(g.policy.param_names, g.policy.params):
            tensors[name] = {"shape": list(p.shape), "data": np.asarray(p, dtype=np.float64).ravel().tolist()}
        groups.append({"players": list(g.players), "tensors": tensors})
    return {"format": CHECKPOINT_FORMAT, "metadata": dict(metadata), "groups": groups,
            "hidden": list(learner.hidden), "dtype": learner.dtype}


def profile_from_checkpoint(game, ckpt):
    """Rebuild the learned profile (one :class:`GaussianPolicy` per group)."""
    if ckpt.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"unknown checkpoint format {ckpt.get('format')!r}")
    dtype = {"float32": np.float32, "float64": np.float64}[ckpt.get("dtype", "float32")]
    profile = [None] * game.n_players
    for g in ckpt["groups"]:
        players = g["players"]
        pol = GaussianPolicy(game, players[0], hidden=tuple(ckpt["hidden"]), dtype=dtype)
        state = {name: np.asarray(t["data"], dtype=np.float64).reshape(t["shape"]) for name, t in g["tensors"].items()}
        pol.load_state_dict(state)
        for i in players:
            profile[i] = pol
    if any(p is None for p in profile):
        raise ConfigurationError("checkpoint does not cover every player")
    return profile
