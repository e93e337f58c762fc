"""Input validation helpers shared by the estimators and the engine."""

import numbers

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ConfigurationError, DomainError


def check_signals(signals, dim, *, name="signals"):
    """Return ``signals`` as a float array of shape (n, dim).

    A 1-d input is read as n one-dimensional signals when ``dim == 1``.
    Zero-dimensional signal spaces accept any (n, 0) array.
    """
    arr = np.asarray(signals, dtype=np.float64)
    if arr.ndim == 1 and dim == 1:
        arr = arr[:, None]
    if dim == 0:
        if arr.ndim != 2 or arr.shape[1] != 0:
            raise ConfigurationError(f"{name} must have shape (n, 0), got {arr.shape}")
        return arr
    arr = check_array(arr, dtype=np.float64, ensure_min_samples=0, input_name=name)
    if arr.shape[1] != dim:
        raise ConfigurationError(f"{name} has {arr.shape[1]} columns, expected {dim}")
    return arr


def check_stage(stage, n_stages):
    if not isinstance(stage, numbers.Integral) or not 1 <= stage <= n_stages:
        raise DomainError(f"stage must be an integer in 1..{n_stages}, got {stage!r}")
    return int(stage)


def check_player(player, n_players):
    if not isinstance(player, numbers.Integral) or not 0 <= player < n_players:
        raise DomainError(f"player must be an integer in 0..{n_players - 1}, got {player!r}")
    return int(player)


def check_count(n, name="n", minimum=1):
    if not isinstance(n, numbers.Integral) or n < minimum:
        raise DomainError(f"{name} must be an integer >= {minimum}, got {n!r}")
    return int(n)


def check_seed(seed):
    if not isinstance(seed, numbers.Integral) or seed < 0 or seed >= 2**64:
        raise DomainError(f"seed must be a non-negative 64-bit integer, got {seed!r}")
    return int(seed)
