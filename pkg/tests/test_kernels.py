"""Backend selection and pure/compiled parity for the numeric kernels."""

import importlib
import os
import subprocess
import sys

import numpy as np
import pytest

from aspectsim import _fallback, kernels
from conftest import random_instance


def test_backend_reports_name():
    assert kernels.BACKEND in ("pure", "compiled")


def test_forced_pure_backend_runs_in_subprocess():
    code = (
        "import os; os.environ['ASPECTSIM_BACKEND']='pure';"
        "from aspectsim import kernels; print(kernels.BACKEND)"
    )
    out = subprocess.run(
        [sys.executable, "-c", code], capture_output=True, text=True, check=True
    )
    assert out.stdout.strip() == "pure"


def test_forcing_missing_compiled_backend_raises():
    code = (
        "import os, sys; os.environ['ASPECTSIM_BACKEND']='compiled';"
        "sys.modules['aspectsim._core'] = None;"
        "import importlib\n"
        "try:\n"
        "    from aspectsim import kernels\n"
        "except ImportError:\n"
        "    print('raised')\n"
    )
    out = subprocess.run(
        [sys.executable, "-c", code], capture_output=True, text=True, check=True
    )
    assert out.stdout.strip() == "raised"


def test_pairwise_sqdist_matches_direct_computation(rng):
    a = rng.normal(size=(7, 5))
    b = rng.normal(size=(4, 5))
    got = kernels.pairwise_sqdist(a, b)
    want = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_pairwise_sqdist_identical_rows_are_exactly_zero(rng):
    a = rng.normal(size=(6, 8))
    d = kernels.pairwise_sqdist(a, a.copy())
    assert np.all(np.diag(d) == 0.0)


def test_pairwise_accepts_readonly_input(rng):
    a = rng.normal(size=(3, 4))
    a.setflags(write=False)
    b = rng.normal(size=(2, 4))
    b.setflags(write=False)
    out = kernels.pairwise_sqdist(a, b)
    assert out.shape == (3, 2)


@pytest.mark.skipif(kernels.BACKEND != "compiled", reason="compiled core not built")
def test_backends_agree_bitwise_on_sinkhorn(rng):
    for _ in range(20):
        n, m = rng.integers(1, 9, size=2)
        dist, x_p, x_q = random_instance(rng, n, m)
        plan_c, it_c, viol_c, conv_c = kernels.sinkhorn_log(
            dist, x_p, x_q, 20.0, 1000, 1e-9
        )
        plan_p, it_p, viol_p, conv_p = _fallback.sinkhorn_log(
            dist, x_p, x_q, 20.0, 1000, 1e-9
        )
        assert it_c == it_p
        assert conv_c == conv_p
        np.testing.assert_allclose(plan_c, plan_p, rtol=0, atol=1e-15)
        assert abs(viol_c - viol_p) <= 1e-15


@pytest.mark.skipif(kernels.BACKEND != "compiled", reason="compiled core not built")
def test_backends_agree_on_pairwise(rng):
    a = rng.normal(size=(9, 6))
    b = rng.normal(size=(5, 6))
    np.testing.assert_allclose(
        kernels.pairwise_sqdist(a, b),
        _fallback.pairwise_sqdist(a, b),
        rtol=1e-13,
        atol=1e-15,
    )


def test_sinkhorn_log_marginals_within_tolerance(rng):
    for _ in range(10):
        dist, x_p, x_q = random_instance(rng, 6, 4)
        plan, _, violation, converged = kernels.sinkhorn_log(
            dist, x_p, x_q, 20.0, 1000, 1e-8
        )
        assert converged
        assert violation <= 1e-8
        assert np.max(np.abs(plan.sum(axis=1) - x_p)) <= 1e-8
        assert np.max(np.abs(plan.sum(axis=0) - x_q)) <= 1e-8


def test_sinkhorn_log_handles_large_distances():
    dist = np.array([[0.0, 1e5], [1e5, 0.0]])
    x = np.array([0.5, 0.5])
    plan, _, violation, converged = kernels.sinkhorn_log(dist, x, x, 20.0, 1000, 1e-9)
    assert converged
    assert np.all(np.isfinite(plan))
    np.testing.assert_allclose(np.diag(plan), [0.5, 0.5], atol=1e-9)
