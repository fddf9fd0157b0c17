import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from droopsafe import kernels
from droopsafe.barrier import BarrierCertificate, Box, Policy, UnsafeSet, sample_level_set
from droopsafe.poly import Polynomial
from droopsafe.safety_filter import (SafetyFilter, compute_beta_max, decisions_csv, interval,
                                     sector_value)

G_DROOP = np.array([4.86, 0.4])
W, V = Polynomial.vars("w1", "v1")

reals = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
radii = st.floats(0, 100, allow_nan=False, allow_infinity=False)


def ellipse_filter(beta=1.0, gamma=100.0, policy=None, ulim=(np.inf, np.inf), c=0.0):
    """B = 1 - (w/4)^2 - (v/0.2)^2 over the (w, v) box, gradient pointing inward."""
    box = Box(("w1", "v1"), [-8.0, -0.4], [8.0, 0.2])
    B = 1 - (W / 4) ** 2 - (V / 0.2) ** 2
    cert = BarrierCertificate(1, B, box, UnsafeSet.voltage("v1"), c=c)
    pol = policy or Policy.zero(box.variables)
    return SafetyFilter(cert, pol, G_DROOP, beta, gamma, None, np.array(ulim, dtype=float))


def affine_policy(kp, kq):
    one = Polynomial.constant(1.0, ("w1", "v1"))
    return Policy([one * kp[0] + W * kp[1], one * kq[0] + V * kq[1]], ("w1", "v1"), 0.0)


def boundary_point(angle, B_level=0.0):
    r = np.sqrt(1.0 - B_level)
    return np.array([4.0 * r * np.cos(angle), 0.2 * r * np.sin(angle)])


def bisect_roots(a, b, R):
    """Roots of (a - u)(b - u) - R by bracketing on either side of the vertex."""
    f = lambda u: (a - u) * (b - u) - R  # noqa: E731
    mid = 0.5 * (a + b)
    span = abs(a - b) + 2 * np.sqrt(R) + 1.0
    return (brentq(f, mid - span, mid, xtol=1e-14, rtol=1e-15),
            brentq(f, mid, mid + span, xtol=1e-14, rtol=1e-15))


class TestInterval:
    def test_boundary_is_sector(self):
        lo, hi = interval(np.array([2.0]), np.array([-1.0]), np.array([0.0]))
        assert (lo[0], hi[0]) == (-1.0, 2.0)

    def test_unit_disc(self):
        lo, hi = interval(0.0, 0.0, 1.0)
        assert (float(lo), float(hi)) == (-1.0, 1.0)

    @settings(max_examples=200, deadline=None)
    @given(reals, reals, st.floats(1e-6, 100))
    def test_matches_root_finder(self, a, b, R):
        lo, hi = interval(a, b, R)
        rlo, rhi = bisect_roots(a, b, R)
        scale = max(1.0, abs(a), abs(b))
        assert float(lo) == pytest.approx(rlo, abs=1e-10 * scale)
        assert float(hi) == pytest.approx(rhi, abs=1e-10 * scale)

    @settings(max_examples=200, deadline=None)
    @given(reals, reals, radii)
    def test_width_identity(self, a, b, R):
        lo, hi = interval(a, b, R)
        assert float(hi - lo) == pytest.approx(np.sqrt((a - b) ** 2 + 4 * R), rel=1e-12, abs=1e-10)

    def test_backends_agree(self, rng):
        a, b, R = rng.normal(size=1000), rng.normal(size=1000), rng.uniform(0, 5, 1000)
        outs = [impl.filter_interval(a, b, R) for impl in kernels.backends().values()]
        for lo, hi in outs[1:]:
            assert np.array_equal(lo, outs[0][0]) and np.array_equal(hi, outs[0][1])


class TestBounds:
    @pytest.mark.parametrize("angle", np.linspace(0.1, 6.0, 7))
    def test_boundary_width(self, angle):
        filt = ellipse_filter(beta=0.7, policy=affine_policy((0.3, 0.1), (-0.2, 2.0)))
        x = boundary_point(angle)
        bd = filt.bounds(x)
        a = filt.policy(x)[0]
        b = a + 0.7 * filt.gB(x)[0]
        assert bd.R[0] == pytest.approx(0.0, abs=1e-10)
        assert np.allclose(bd.u_alpha[0], np.minimum(a, b), atol=1e-7)
        assert np.allclose(bd.u_theta[0], np.maximum(a, b), atol=1e-7)
        assert np.allclose(bd.u_theta[0] - bd.u_alpha[0], np.abs(0.7 * filt.gB(x)[0]), atol=1e-7)

    def test_zero_gamma_is_depth_independent(self):
        filt = ellipse_filter(gamma=0.0)
        for depth in (0.0, 0.4, 0.9):
            x = boundary_point(1.0, depth)
            bd = filt.bounds(x)
            a = filt.policy(x)[0]
            b = a + filt.gB(x)[0]
            assert np.allclose(bd.u_alpha[0], np.minimum(a, b))
            assert np.allclose(bd.u_theta[0], np.maximum(a, b))

    def test_relaxation_formula(self):
        filt = ellipse_filter(gamma=10.0, c=0.2)
        x = boundary_point(2.0, 0.6)
        assert filt.bounds(x).R[0] == pytest.approx(10.0 * np.log(0.8 / 0.4))

    def test_outside_domain_flags_no_guarantee(self):
        filt = ellipse_filter()
        bd = filt.bounds(np.array([7.0, 0.0]))
        assert bd.no_guarantee[0] and bd.R[0] == 0.0

    def test_origin_is_capped(self):
        filt = ellipse_filter(gamma=2.0)
        bd = filt.bounds(np.zeros(2))
        assert bd.capped[0] and bd.R[0] == pytest.approx(2e3)

    def test_actuator_limits_applied(self):
        filt = ellipse_filter(ulim=(1.0, 1.0))
        bd = filt.bounds(boundary_point(0.5, 0.5))
        assert np.all(bd.lo >= -1.0) and np.all(bd.hi <= 1.0)

    def test_negative_parameters_rejected(self):
        with pytest.raises(ValueError):
            ellipse_filter(gamma=-1.0)


class TestAdmit:
    def test_inside_request_passes(self):
        filt = ellipse_filter()
        d = filt.admit(boundary_point(1.0, 0.5), np.zeros(2))
        assert not d.active and np.array_equal(d.admitted, d.requested)

    def test_zero_request_clamped_when_unsafe(self):
        # on the boundary with both endpoints positive, u = 0 is outside the sector
        filt = ellipse_filter(gamma=100.0, policy=affine_policy((0.0, 0.0), (1.0, 0.0)))
        x = boundary_point(-np.pi / 2)  # bottom of the ellipse: grad v > 0
        d = filt.admit(x, np.zeros(2))
        assert d.active
        assert d.admitted[1] == pytest.approx(min(d.u_alpha[1], d.u_theta[1]))
        assert d.u_alpha[1] > 0

    def test_infeasible_actuator_box(self):
        filt = ellipse_filter(policy=affine_policy((0.0, 0.0), (5.0, 0.0)), ulim=(10.0, 1.0))
        d = filt.admit(boundary_point(-np.pi / 2), np.zeros(2))
        assert d.infeasible
        assert d.admitted[1] == pytest.approx(d.u_alpha[1])

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0, 2 * np.pi), st.floats(0, 0.99), reals, reals)
    def test_decision_invariants(self, ang, depth, up, uq):
        filt = ellipse_filter(policy=affine_policy((0.3, 0.1), (-0.2, 2.0)))
        d = filt.admit(boundary_point(ang, depth), np.array([up, uq]))
        assert np.all(d.admitted >= d.u_alpha) and np.all(d.admitted <= d.u_theta)
        assert d.active == (not np.array_equal(d.admitted, d.requested))

    def test_decisions_csv(self):
        filt = ellipse_filter()
        x = boundary_point(1.0, 0.5)
        text = decisions_csv([0.0], [x], [filt.admit(x, np.zeros(2))])
        assert text.splitlines()[0].startswith("t,w,v,req_p")
        assert len(text.splitlines()) == 2


class TestProperties:
    @settings(max_examples=100, deadline=None)
    @given(st.floats(0, 2 * np.pi), st.floats(0.0, 0.999), st.floats(0, 1))
    def test_membership_boundary(self, ang, depth, frac):
        filt = ellipse_filter(policy=affine_policy((0.3, -0.4), (0.1, 1.5)))
        x = boundary_point(ang, depth)
        bd = filt.bounds(x)
        lo, hi = bd.u_alpha[0], bd.u_theta[0]
        inside = lo + frac * (hi - lo)
        assert np.all(filt.admissible_value(x, inside) <= 1e-9)
        for u in (lo - 1e-6, hi + 1e-6):
            assert np.all(filt.admissible_value(x, u) > 0)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0, 2 * np.pi), st.floats(1e-3, 0.999))
    def test_positive_width_in_interior(self, ang, depth):
        filt = ellipse_filter(gamma=1e-3)
        bd = filt.bounds(boundary_point(ang, depth))
        assert np.all(bd.u_theta > bd.u_alpha)

    def test_width_monotone_in_gamma_and_beta(self, rng):
        pts = np.array([boundary_point(a, d) for a, d in
                        zip(rng.uniform(0, 2 * np.pi, 300), rng.uniform(0, 0.99, 300))])
        prev = None
        for gamma in (0.0, 1.0, 10.0, 100.0):
            bd = ellipse_filter(gamma=gamma).bounds(pts)
            width = bd.u_theta - bd.u_alpha
            if prev is not None:
                assert np.all(width >= prev - 1e-12)
            prev = width
        prev = None
        for beta in (0.0, 0.25, 0.5, 1.0):
            bd = ellipse_filter(beta=beta, gamma=10.0).bounds(pts)
            width = bd.u_theta - bd.u_alpha
            if prev is not None:
                assert np.all(width >= prev - 1e-12)
            prev = width

    def test_safe_zero_region_grows_with_gamma(self):
        pol = affine_policy((0.0, 0.0), (0.2, 3.0))
        ws, vs = np.meshgrid(np.linspace(-4, 4, 41), np.linspace(-0.2, 0.2, 31))
        grid = np.column_stack([ws.ravel(), vs.ravel()])
        inside = ellipse_filter().cert.value(grid) >= 0
        prev = None
        for gamma in (0.0, 10.0, 100.0):
            region = ellipse_filter(gamma=gamma, policy=pol).safe_zero_region(1, grid[inside])
            if prev is not None:
                assert np.all(region >= prev)
            prev = region
        assert prev.sum() > 0

    def test_safe_zero_at_origin_and_boundary(self):
        filt = ellipse_filter(policy=affine_policy((0.0, 0.0), (0.5, 0.0)))
        assert filt.safe_zero_region(1, np.zeros((1, 2)))[0]
        assert not filt.safe_zero_region(1, boundary_point(-np.pi / 2)[None, :])[0]


class TestBetaMax:
    def test_matches_linear_scan(self, rng):
        filt = ellipse_filter(policy=affine_policy((0.5, 0.0), (0.0, 1.0)))
        lim = np.array([15.0, 1.0])
        beta = compute_beta_max(filt.cert, filt.policy, G_DROOP, lim,
                                np.random.default_rng(3), n=5000)
        pts, _ = sample_level_set(filt.cert, 0.0, np.random.default_rng(3), 5000)
        a, gb = filt.policy(pts), filt.gB(pts)
        scan = np.linspace(0, 10, 100001)
        ok = [b for b in scan[::100] if np.all(np.abs(a + b * gb) <= lim)]
        assert beta >= ok[-1] - 1e-2
        assert not np.all(np.abs(a + (beta + 1e-3) * gb) <= lim)

    def test_zero_when_policy_exceeds_limits(self):
        filt = ellipse_filter(policy=affine_policy((20.0, 0.0), (0.0, 0.0)))
        beta = compute_beta_max(filt.cert, filt.policy, G_DROOP, [15.0, 15.0],
                                np.random.default_rng(0), n=1000)
        assert beta == 0.0


class TestExampleFilters:
    def test_example_parameters(self, example):
        for f in example.filters:
            assert f.beta_max == 1.0 and f.gamma == 100.0
            assert np.allclose(f.g, G_DROOP)

    def test_sector_value_signs(self, example, rng):
        f = example.filters[1]
        pts, _ = sample_level_set(f.cert, 0.0, rng, 500)
        bd = f.bounds(pts)
        mid = 0.5 * (bd.u_alpha + bd.u_theta)
        a = f.policy(pts)
        b = a + f.beta_max * f.gB(pts)
        assert np.all(sector_value(a, b, mid) <= bd.R[:, None] + 1e-9)
