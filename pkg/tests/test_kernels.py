import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from droopsafe import kernels
from droopsafe.kernels import _pykernels
from droopsafe.poly import MonomialBasis, Polynomial
from droopsafe.sim import Scenario, monte_carlo

BACKENDS = kernels.backends()
needs_cython = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled backend not built")


def random_poly(seed, nvars=3, degree=4):
    rng = np.random.default_rng(seed)
    names = tuple(f"x{k}" for k in range(nvars))
    basis = MonomialBasis(names, degree).polynomials()
    return sum(rng.normal() * b for b in basis if rng.random() < 0.6) + Polynomial.constant(
        rng.normal(), names)


class TestPolyEval:
    def test_matches_pointwise_evaluate(self, rng):
        p = random_poly(1)
        pts = rng.uniform(-2, 2, size=(50, 3))
        ref = np.array([p.evaluate(tuple(x)) for x in pts])
        for name, impl in BACKENDS.items():
            exps, coefs = p.arrays()
            got = impl.poly_eval_arrays(np.ascontiguousarray(exps, dtype=np.int64), coefs, pts)
            assert np.allclose(got, ref, rtol=1e-12, atol=1e-12), name

    def test_column_count_checked(self):
        with pytest.raises(ValueError, match="columns"):
            kernels.poly_eval(random_poly(2), np.zeros((4, 2)))

    def test_zero_polynomial(self):
        p = Polynomial.constant(0.0, ("x0", "x1"))
        assert np.all(kernels.poly_eval(p, np.ones((3, 2))) == 0.0)

    @needs_cython
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10 ** 6))
    def test_backends_agree(self, seed):
        p = random_poly(seed)
        pts = np.random.default_rng(seed).uniform(-1.5, 1.5, size=(100, 3))
        exps, coefs = p.arrays()
        exps = np.ascontiguousarray(exps, dtype=np.int64)
        a = BACKENDS["python"].poly_eval_arrays(exps, coefs, pts)
        b = BACKENDS["cython"].poly_eval_arrays(exps, coefs, pts)
        assert np.allclose(a, b, rtol=1e-13, atol=1e-13)


class TestFilterInterval:
    def test_backends_agree(self, rng):
        a, b = rng.normal(size=1000), rng.normal(size=1000)
        R = rng.exponential(size=1000)
        ref = _pykernels.filter_interval(a, b, R)
        for impl in BACKENDS.values():
            lo, hi = impl.filter_interval(a, b, R)
            assert np.allclose(lo, ref[0], atol=1e-15) and np.allclose(hi, ref[1], atol=1e-15)

    def test_broadcast_shapes(self, rng):
        a, b = rng.normal(size=(50, 2)), rng.normal(size=(50, 2))
        R = rng.exponential(size=(50, 1))
        ref = _pykernels.filter_interval(a, b, R)
        for impl in BACKENDS.values():
            lo, hi = impl.filter_interval(a, b, R)
            assert lo.shape == (50, 2)
            assert np.allclose(lo, ref[0], atol=1e-15) and np.allclose(hi, ref[1], atol=1e-15)

    def test_zero_slack_gives_endpoints(self):
        lo, hi = _pykernels.filter_interval(np.array([2.0]), np.array([-1.0]), np.array([0.0]))
        assert lo[0] == -1.0 and hi[0] == 2.0


class TestSimulate:
    @needs_cython
    @pytest.mark.parametrize("filter_on", [True, False])
    def test_monte_carlo_backends_agree(self, example, filter_on):
        sc = Scenario(horizon=1.0, filter_on=filter_on)
        out = [monte_carlo(example.dec, example.certs, example.filters, sc, 4, seed=9, backend=b)
               for b in ("python", "cython")]
        assert np.allclose(out[0].min_B, out[1].min_B, atol=1e-12, rtol=0)
        assert np.array_equal(out[0].violations, out[1].violations)
        assert np.array_equal(out[0].blown, out[1].blown)

    @needs_cython
    def test_coupled_mode_agrees(self, example):
        u = [[0.0, 0.0]] * example.dec.n
        u[1] = [0.2, -0.1]
        sc = Scenario(horizon=0.5, disturbance="none", dispatch=[(0.1, u)])
        out = [monte_carlo(example.dec, example.certs, example.filters, sc, 1, backend=b)
               for b in ("python", "cython")]
        assert np.allclose(out[0].min_B, out[1].min_B, atol=1e-12, rtol=0)


class TestFallback:
    def test_environment_forces_python(self):
        env = dict(os.environ, DROOPSAFE_PURE_PYTHON="1")
        res = subprocess.run([sys.executable, "-c",
                              "from droopsafe import kernels; print(kernels.BACKEND)"],
                             env=env, capture_output=True, text=True, check=True)
        assert res.stdout.strip() == "python"

    def test_same_interface(self):
        for impl in BACKENDS.values():
            for name in ("poly_eval_arrays", "filter_interval", "simulate", "BACKEND"):
                assert hasattr(impl, name)
