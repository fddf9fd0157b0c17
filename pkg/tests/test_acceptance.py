"""End-to-end acceptance checks; a summary line per criterion is printed after the run."""

import dataclasses
import filecmp
import time

import numpy as np
import pytest

from droopsafe import cli, pipeline, sdp
from droopsafe.barrier import check_unsafe, sample_level_set, verify_distributed
from droopsafe.poly import MonomialBasis, Polynomial
from droopsafe.safety_filter import interval, sector_value
from droopsafe.sim import Scenario, integrate, monte_carlo
from droopsafe.sos import prove_nonneg

x, y = Polynomial.vars("x", "y")


@dataclasses.dataclass
class Shipped:
    cfg: object
    out: object
    dec: object
    certs: list
    policies: list
    filters: list


@pytest.fixture(scope="module")
def shipped(tmp_path_factory, example_cfg):
    """Certificates and policies produced by the CLI from the shipped config."""
    out = tmp_path_factory.mktemp("run_a")
    assert cli.main(["synth", "--out", str(out)]) == cli.EXIT_OK
    dec = pipeline.decomposition(example_cfg, out)
    certs, pols = pipeline.load_synthesis(example_cfg, out, dec.n)
    filters = pipeline.build_filters(example_cfg, dec, certs, pols)
    return Shipped(example_cfg, out, dec, certs, pols, filters)


@pytest.mark.criterion(1, "filter-bound algebra on 1e5 random triples")
def test_bound_algebra(record_property):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    a = rng.uniform(-10, 10, 100000)
    b = rng.uniform(-10, 10, 100000)
    R = rng.exponential(5.0, 100000)
    R[:1000] = 0.0
    lo, hi = interval(a, b, R)
    root_err = max(np.max(np.abs(sector_value(a, b, lo) - R)),
                   np.max(np.abs(sector_value(a, b, hi) - R)))
    width_err = np.max(np.abs((hi - lo) - np.sqrt((a - b) ** 2 + 4 * R)))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"root err {root_err:.1e}, width err {width_err:.1e}, "
                              f"{elapsed:.2f} s")
    assert root_err <= 1e-9
    assert width_err <= 1e-10
    assert elapsed < 5.0


@pytest.mark.criterion(2, "membership boundary of the admissible input set, 1e4 trials")
def test_membership_boundary(shipped, record_property):
    rng = np.random.default_rng(2)
    failures = 0
    trials = 0
    per = 10000 // len(shipped.filters)
    for filt in shipped.filters:
        pts, _ = sample_level_set(filt.cert, filt.cert.c, rng, per)
        bd = filt.bounds(pts)
        ua, ut = bd.u_alpha, bd.u_theta
        inside = ua + rng.uniform(0, 1, ua.shape) * (ut - ua)
        failures += int(np.sum(filt.admissible_value(pts, inside) > 1e-9))
        failures += int(np.sum(filt.admissible_value(pts, ua - 1e-6) <= 0))
        failures += int(np.sum(filt.admissible_value(pts, ut + 1e-6) <= 0))
        trials += len(pts)
    record_property("detail", f"{trials} states x 2 channels, {failures} exceptions")
    assert trials == 10000
    assert failures == 0


@pytest.mark.criterion(3, "barrier verification on exact dynamics, 1e5 samples")
def test_barrier_verification(shipped, record_property):
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    reports = verify_distributed(shipped.certs, shipped.dec, shipped.policies,
                                 shipped.cfg.synthesis.angle_box, rng, n=100000, tol=1e-6)
    unsafe = [check_unsafe(c, rng, 100000) for c in shipped.certs]
    per_inverter = (time.perf_counter() - t0) / len(shipped.certs)
    margins = [r.margin for r in reports]
    record_property("detail", f"min level-set margin {min(margins):.3g}, max B on unsafe "
                              f"{max(m for _, m in unsafe):.3g}, {per_inverter:.1f} s/inverter")
    assert all(r.n_boundary == 100000 for r in reports)
    assert all(m >= -1e-6 for m in margins)
    assert all(ok and m < 0 for ok, m in unsafe)
    assert per_inverter < 60.0


@pytest.mark.criterion(4, "closed-loop invariance, 100 seeded disturbance runs, filter on/off")
def test_closed_loop(shipped, record_property):
    cfg = shipped.cfg
    assert [(p.lambda_p, p.lambda_q, p.tau) for p in shipped.dec.params] == \
        [(2.43, 0.2, 0.5)] * shipped.dec.n
    assert (cfg.filter.beta_max, cfg.filter.gamma) == (1.0, 100.0)
    base = cfg.scenarios[cfg.sweep.scenario]
    assert (base.horizon, base.step) == (10.0, 1e-3)
    assert all(np.all(np.asarray(u)[..., 1] == 0) for _, u in base.dispatch)
    t0 = time.perf_counter()
    on = monte_carlo(shipped.dec, shipped.certs, shipped.filters,
                     dataclasses.replace(base, filter_on=True), 100, seed=cfg.seed)
    off = monte_carlo(shipped.dec, shipped.certs, shipped.filters,
                      dataclasses.replace(base, filter_on=False), 100, seed=cfg.seed)
    elapsed = time.perf_counter() - t0
    c = np.array([cert.c for cert in shipped.certs])
    record_property("detail", f"on: {on.violation_runs}/100 violation runs, min B "
                              f"{on.min_B.min():.3g}; off: {off.violation_runs}/100; "
                              f"{elapsed:.0f} s")
    assert on.violation_runs == 0
    assert np.all(on.blown < 0)
    assert np.all(on.min_B >= c - 1e-4)
    assert off.violation_runs >= 1
    assert elapsed < 600.0


@pytest.mark.criterion(5, "bound widths monotone in beta and gamma; safe-zero sets nested")
def test_monotonicity(shipped):
    b = shipped.cfg.bounds
    W, V = np.meshgrid(np.linspace(*b.w_range, b.points[0]), np.linspace(*b.v_range, b.points[1]),
                       indexing="ij")
    grid = np.column_stack([W.ravel(), V.ravel()])
    for filt in shipped.filters:
        def bounds(beta, gamma):
            return dataclasses.replace(filt, beta_max=beta, gamma=gamma).bounds(grid)

        widths = [(lambda bd: bd.u_theta - bd.u_alpha)(bounds(bt, 0.0))
                  for bt in sorted(b.betas)]
        for w0, w1 in zip(widths, widths[1:]):
            assert np.all(w1 >= w0 - 1e-12)
        gam = [bounds(1.0, g) for g in (0.0, 10.0, 100.0)]
        for g0, g1 in zip(gam, gam[1:]):
            assert np.all((g1.u_theta - g1.u_alpha) >= (g0.u_theta - g0.u_alpha) - 1e-12)
            z0 = (g0.u_alpha[:, 1] <= 0) & (g0.u_theta[:, 1] >= 0)
            z1 = (g1.u_alpha[:, 1] <= 0) & (g1.u_theta[:, 1] >= 0)
            assert np.all(z1[z0])


def random_sos_quartic(rng):
    basis = MonomialBasis(("x", "y"), 2).polynomials()
    return sum((sum(rng.normal() * m for m in basis)) ** 2 for _ in range(int(rng.integers(1, 5))))


@pytest.mark.criterion(6, "SDP examples, 50 SOS quartics, Motzkin not found")
def test_sdp_examples():
    sol = sdp.solve(sdp.SdpProblem.from_dense([[[0.0]]], [[[[1.0]]]], objective=[1.0]))
    assert sol.status == sdp.OPTIMAL and abs(sol.y[0]) <= 1e-8
    off = np.array([[0.0, 1.0], [1.0, 0.0]])
    sol = sdp.solve(sdp.SdpProblem.from_dense([np.eye(2)], [[off]], objective=[-1.0]))
    assert sol.status == sdp.OPTIMAL and abs(sol.y[0] - 1.0) <= 1e-8
    cert = prove_nonneg(2 * x ** 4 + 5 * y ** 4 - x ** 2 * y ** 2)
    assert cert is not None and cert.min_eig() >= -1e-8
    assert cert.reconstruction_error() <= 1e-8


@pytest.mark.criterion(6, "SDP examples, 50 SOS quartics, Motzkin not found")
def test_sos_soundness(record_property):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(50):
        cert = prove_nonneg(random_sos_quartic(rng))
        assert cert is not None
        assert cert.min_eig() >= -1e-8
        worst = max(worst, cert.reconstruction_error())
    motzkin = x ** 4 * y ** 2 + x ** 2 * y ** 4 - 3 * x ** 2 * y ** 2 + 1
    assert prove_nonneg(motzkin, deg=0) is None
    record_property("detail", f"worst reconstruction error {worst:.1e}")
    assert worst <= 1e-7


@pytest.mark.criterion(7, "RK4 endpoint error ratio h vs h/2 in [12, 20]")
def test_integrator_order(shipped, record_property):
    n = shipped.dec.n
    u = np.zeros((n, 2))
    u[1], u[2] = (0.2, 0.05), (0.0, -0.05)
    horizon = 0.48

    def endpoint(h):
        steps = int(round(horizon / h))
        sc = Scenario(horizon=horizon, step=h, dispatch=[(0.0, u)], disturbance="none",
                      filter_on=False, record_stride=steps)
        return integrate(shipped.dec, shipped.certs, shipped.filters, sc).states[-1]

    ref = endpoint(0.01 / 64)
    ratio = np.max(np.abs(endpoint(0.02) - ref)) / np.max(np.abs(endpoint(0.01) - ref))
    record_property("detail", f"ratio {ratio:.2f}")
    assert 12.0 <= ratio <= 20.0


@pytest.mark.criterion(8, "repeated synth and simulate produce byte-identical artifacts")
def test_determinism(shipped, tmp_path, record_property):
    other = tmp_path / "run_b"
    assert cli.main(["synth", "--out", str(other)]) == cli.EXIT_OK
    for out in (shipped.out, other):
        assert cli.main(["simulate", "disturbed", "--out", str(out)]) == cli.EXIT_OK
    # a rerun in place must not change the file either
    first = (other / "sim" / "disturbed_on.csv").read_bytes()
    assert cli.main(["simulate", "disturbed", "--out", str(other)]) == cli.EXIT_OK
    assert (other / "sim" / "disturbed_on.csv").read_bytes() == first
    files = sorted(p.relative_to(shipped.out) for p in shipped.out.rglob("*") if p.is_file())
    files = [f for f in files if f.parts[0] in ("certificates", "policies", "sim")
             or f.name in ("equilibrium.json", "verification.json")]
    match, mismatch, errors = filecmp.cmpfiles(shipped.out, other, [str(f) for f in files],
                                               shallow=False)
    record_property("detail", f"{len(match)} files compared")
    assert len(files) >= 11
    assert not mismatch and not errors
