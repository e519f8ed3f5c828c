import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # netsim helper module


def central_diff(f, x, h=1e-6, angular_out=()):
    """Central finite-difference Jacobian of ``f`` at ``x``.

    Output components listed in ``angular_out`` are differenced modulo 2*pi.
    """
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(f(x))
    J = np.zeros((f0.size, x.size))
    for k in range(x.size):
        step = h * max(1.0, abs(x[k]))
        xp, xm = x.copy(), x.copy()
        xp[k] += step
        xm[k] -= step
        d = np.atleast_1d(f(xp)) - np.atleast_1d(f(xm))
        for a in angular_out:
            d[a] = (d[a] + np.pi) % (2 * np.pi) - np.pi
        J[:, k] = d / (2 * step)
    return J


def jacobian_close(analytic, numeric, rtol=1e-5, floor=1e-3):
    """Entrywise ``|A - N| <= rtol * (|A| + floor)``: relative, with a small
    absolute floor for entries that are exactly zero."""
    return bool(np.all(np.abs(analytic - numeric) <= rtol * (np.abs(analytic) + floor)))


def random_state(rng, min_speed=0.5):
    th = rng.uniform(-np.pi, np.pi)
    s = rng.uniform(min_speed, 30.0)
    # velocity direction need not equal the heading in an estimate
    phi = th + rng.normal(0, 0.3)
    return np.array([rng.uniform(-200, 200), rng.uniform(-200, 200), th,
                     s * np.cos(phi), s * np.sin(phi), rng.normal(0, 0.5)])


def random_spd(rng, n=6, scale=1.0):
    A = rng.normal(size=(n, n))
    return scale * (A @ A.T + n * np.eye(n)) / n


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance verdict lines -----------------------------------------------------------

_VERDICTS = {}


@pytest.fixture
def verdict():
    """Record ``(criterion number, passed, detail)`` for the end-of-run summary."""
    def record(number, passed, detail):
        _VERDICTS[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        ok, detail = _VERDICTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
