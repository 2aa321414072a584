"""Hyperparameter schedules on normalized training time t in [0, 1]."""

import math
import re

import numpy as np


def coslog(k: int, t):
    """Multi-cycle schedule with k cycles; zero at t = (2^m - 1)/(2^k - 1), m = 0..k."""
    t = np.asarray(t, dtype=np.float64)
    return 0.5 * (1.0 - np.cos(2.0 * math.pi * np.log2(1.0 + (2.0 ** k - 1.0) * t)))


def flat_cos(t):
    """1 on [0, 1/2], then a half cosine down to 0 at t = 1."""
    t = np.asarray(t, dtype=np.float64)
    return 0.5 * (1.0 + np.cos(math.pi * (np.maximum(1.0, 2.0 * t) - 1.0)))


def cosine_decay(t):
    t = np.asarray(t, dtype=np.float64)
    return 0.5 * (1.0 + np.cos(math.pi * t))


def constant(t):
    return np.ones_like(np.asarray(t, dtype=np.float64))


def get(name: str):
    """Look up a schedule by name: ``constant``, ``cosine_decay``, ``flat_cos`` or ``coslog<k>``."""
    fixed = {"constant": constant, "cosine_decay": cosine_decay, "flat_cos": flat_cos}
    if name in fixed:
        return fixed[name]
    m = re.fullmatch(r"coslog(\d+)", name)
    if m:
        k = int(m.group(1))
        return lambda t: coslog(k, t)
    raise KeyError(f"unknown schedule {name!r}")


def scheduled_value(base: float, factor: float, schedule, iteration: int, total_iterations: int) -> float:
    if isinstance(schedule, str):
        schedule = get(schedule)
    return float(base * factor * schedule(iteration / total_iterations))
