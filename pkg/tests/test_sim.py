import csv
import io

import numpy as np
import pytest

from droopsafe import kernels
from droopsafe.barrier import sample_level_set
from droopsafe.sim import Scenario, integrate, monte_carlo


def run(example, **kw):
    return integrate(example.dec, example.certs, example.filters, Scenario(**kw))


def endpoint(example, h, horizon, dispatch):
    steps = int(round(horizon / h))
    tr = run(example, horizon=horizon, step=h, dispatch=dispatch, disturbance="none",
             filter_on=False, record_stride=steps)
    return tr.states[-1]


class TestIntegrator:
    def test_equilibrium_is_fixed(self, example):
        tr = run(example, horizon=1.0, step=1e-3, disturbance="none")
        assert np.max(np.abs(tr.states)) < 1e-10
        assert not tr.violated and tr.blown_step == -1

    def test_rk4_fourth_order(self, example):
        dispatch = [(0.0, [[0.0, 0.0], [0.2, 0.05], [0.0, -0.05], [0.0, 0.0]])]
        horizon = 0.48
        ref = endpoint(example, 0.01 / 64, horizon, dispatch)
        e1 = np.max(np.abs(endpoint(example, 0.02, horizon, dispatch) - ref))
        e2 = np.max(np.abs(endpoint(example, 0.01, horizon, dispatch) - ref))
        assert e1 > 0
        assert 12.0 <= e1 / e2 <= 20.0

    def test_dispatch_schedule_inserts_zero_segment(self):
        sc = Scenario(step=0.01, horizon=1.0, dispatch=[(0.5, [0.1, 0.0])])
        steps, vals = sc.schedule(3)
        assert list(steps) == [0, 50]
        assert np.all(vals[0] == 0) and np.all(vals[1][:, 0] == 0.1)

    def test_active_power_step_raises_frequency(self, example):
        u = [[0.0, 0.0]] * example.dec.n
        u[2] = [0.1, 0.0]
        tr = run(example, horizon=0.2, step=1e-3, disturbance="none", filter_on=False,
                 dispatch=[(0.0, u)])
        assert tr.states[-1, 2, 1] > 0

    def test_blowup_flag(self, example):
        tr = run(example, horizon=1.0, step=1e-3, blowup=1e-6, filter_on=False)
        assert tr.blown_step > 0
        # the halted run records zeros afterwards
        assert np.all(tr.states[tr.blown_step + 1:] == 0.0)


class TestDeterminism:
    def test_same_seed_same_digest(self, example):
        a = run(example, horizon=1.0, seed=3)
        b = run(example, horizon=1.0, seed=3)
        c = run(example, horizon=1.0, seed=4)
        assert a.digest() == b.digest()
        assert a.digest() != c.digest()

    def test_single_run_monte_carlo_matches_integrate(self, example):
        sc = Scenario(horizon=1.0, seed=11, filter_on=False)
        tr = integrate(example.dec, example.certs, example.filters, sc)
        mc = monte_carlo(example.dec, example.certs, example.filters, sc, 1)
        assert np.array_equal(mc.min_B[0], tr.min_B)
        assert np.array_equal(mc.violations[0], tr.violations)

    def test_backends_agree(self, example):
        names = kernels.backends()
        if "cython" not in names:
            pytest.skip("compiled backend not built")
        sc = Scenario(horizon=0.5, seed=2)
        a = integrate(example.dec, example.certs, example.filters, sc, backend="python")
        b = integrate(example.dec, example.certs, example.filters, sc, backend="cython")
        assert np.allclose(a.states, b.states, atol=1e-12, rtol=0)
        assert np.allclose(a.B, b.B, atol=1e-12, rtol=0)


class TestFilterInLoop:
    def test_filter_keeps_barrier_nonnegative(self, example):
        sc = Scenario(horizon=3.0, step=1e-3, filter_on=True)
        mc = monte_carlo(example.dec, example.certs, example.filters, sc, 8, seed=5)
        assert mc.violation_runs == 0
        assert np.all(mc.min_B >= 0.0)

    def test_filter_idle_at_equilibrium(self, example):
        tr = run(example, horizon=0.5, disturbance="none")
        assert np.all(tr.active_steps == 0)
        assert np.all(tr.u == 0.0)


class TestLevelSets:
    def test_higher_level_is_smaller(self, example, rng):
        cert = example.certs[1]
        low, _ = sample_level_set(cert, cert.c, rng, 5000)
        high, _ = sample_level_set(cert, 0.99, rng, 5000)
        scale = np.array([cert.box.hi[0], cert.box.hi[1]])
        assert np.mean(np.abs(high / scale)) < np.mean(np.abs(low / scale))

    def test_samples_satisfy_level(self, example, rng):
        for cert in example.certs:
            pts, rate = sample_level_set(cert, cert.c, rng, 10000)
            assert len(pts) == 10000 and 0 < rate <= 1
            assert np.all(cert.value(pts) >= cert.c)


class TestScenario:
    @pytest.mark.parametrize("kw", [
        {"step": 0.0}, {"horizon": 1e-4, "step": 1e-3}, {"disturbance": "wind"},
        {"angle_coupling": "free"}, {"resample_period": 0.0},
    ])
    def test_invalid_rejected(self, kw):
        with pytest.raises(ValueError):
            Scenario(**kw)

    def test_trace_csv(self, example):
        tr = run(example, horizon=0.01, step=1e-3)
        rows = list(csv.reader(io.StringIO(tr.to_csv("# seed=0\n"))))
        assert rows[0] == ["# seed=0"]
        assert rows[1][0] == "t"
        assert len(rows) == 2 + len(tr.t) * example.dec.n

    def test_monte_carlo_csv(self, example):
        mc = monte_carlo(example.dec, example.certs, example.filters,
                         Scenario(horizon=0.05), 3, seed=1)
        rows = list(csv.reader(io.StringIO(mc.to_csv())))
        assert len(rows) == 1 + 3 * example.dec.n

    def test_monte_carlo_needs_runs(self, example):
        with pytest.raises(ValueError):
            monte_carlo(example.dec, example.certs, example.filters, Scenario(), 0)
