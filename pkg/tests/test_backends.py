import os
import subprocess
import sys

import numpy as np
import pytest

from colloc import backend, engine
from colloc.scenarios import KINDS, default_scenario

needs_cython = pytest.mark.skipif("cython" not in backend.BACKENDS,
                                  reason="compiled kernel not built")


@needs_cython
@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("n", [1, 2, 3])
def test_compiled_matches_pure_python(kind, n):
    cfg = default_scenario(kind, n_vehicles=n, run_length=60.0)
    for seed in (0, 1):
        a = engine.simulate(cfg, seed, backend="cython")
        b = engine.simulate(cfg, seed, backend="python")
        for algo in engine.ALGORITHMS:
            oa, ob = a.outputs[algo], b.outputs[algo]
            np.testing.assert_allclose(oa.est, ob.est, atol=1e-9, rtol=0)
            np.testing.assert_allclose(oa.trace, ob.trace, atol=1e-9, rtol=1e-9)
            np.testing.assert_allclose(oa.nees, ob.nees, rtol=1e-7, atol=1e-9)
            assert (oa.status, oa.psd_failures, oa.skipped) == (ob.status, ob.psd_failures, ob.skipped)


@needs_cython
def test_compiled_reports_numerical_failure_like_python():
    from colloc.core_types import NoiseSpec
    zero = NoiseSpec(process_r=np.zeros((6, 6)), gps_sigma=0, odom_sigma=0, uwb_sigma=0,
                     imu_accel_sigma=0, imu_gyro_sigma=0)
    cfg = default_scenario("parallel", noise=zero, initial_cov=1e-16 * np.eye(6), run_length=20.0)
    a = engine.run_single(cfg, 0, backend="cython")
    b = engine.run_single(cfg, 0, backend="python")
    assert a.failed == b.failed == {x: "numerical" for x in engine.ALGORITHMS}


def test_unknown_backend():
    with pytest.raises(ValueError, match="unavailable"):
        backend.get_replay("fortran")


def test_env_forces_pure_python():
    code = "from colloc import backend; print(backend.DEFAULT)"
    env = dict(os.environ, COLLOC_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
