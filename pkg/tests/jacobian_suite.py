"""Finite-difference oracle for every analytic Jacobian in ``colloc.models``.

Shared by the model tests and the acceptance suite.
"""
from __future__ import annotations

import numpy as np

from colloc.models import (control_jacobian, gps_model, landmark_range_model, motion_jacobian,
                           motion_step, odom_model, range_model)
from conftest import central_diff, jacobian_close, random_state


def _cases(rng):
    x = random_state(rng)
    u = (rng.normal(0, 2.0), rng.normal(0, 0.5))
    dt = rng.uniform(1e-3, 0.2)
    xj = random_state(rng)
    lm = (0, rng.uniform(-250, 250), rng.uniform(-250, 250))
    return {
        "motion": (motion_jacobian(x, u, dt),
                   central_diff(lambda s: motion_step(s, u, dt), x, angular_out=(2,))),
        "control": (control_jacobian(x, dt),
                    central_diff(lambda v: motion_step(x, v, dt), np.array(u), angular_out=(2,))),
        "gps": (gps_model(x)[1], central_diff(lambda s: gps_model(s)[0], x)),
        "odom": (odom_model(x)[1], central_diff(lambda s: odom_model(s)[0], x)),
        "range_i": (range_model(x, xj)[1], central_diff(lambda s: range_model(s, xj)[0], x)),
        "range_j": (range_model(x, xj)[2], central_diff(lambda s: range_model(x, s)[0], xj)),
        "landmark": (landmark_range_model(x, lm)[1],
                     central_diff(lambda s: landmark_range_model(s, lm)[0], x)),
    }


def run_suite(n_states: int = 1000, seed: int = 2024, rtol: float = 1e-5) -> dict:
    """Return ``{model: number of states whose Jacobian disagreed}``."""
    rng = np.random.default_rng(seed)
    failures = {}
    for _ in range(n_states):
        for name, (analytic, numeric) in _cases(rng).items():
            failures.setdefault(name, 0)
            if not jacobian_close(analytic, numeric, rtol=rtol):
                failures[name] += 1
    return failures
