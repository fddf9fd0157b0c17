import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from droopsafe import sdp
from droopsafe.sdp import SdpOptions, SdpProblem, min_eig, solve


def gram_problem():
    """Gram matrix of 2x^4 + 5y^4 - x^2y^2 in the basis (x^2, xy, y^2).

    Matching coefficients leaves one free entry t = G13 with G22 = -1 - 2t.
    """
    F0 = np.diag([2.0, -1.0, 5.0])
    F1 = np.array([[0.0, 0.0, 1.0], [0.0, -2.0, 0.0], [1.0, 0.0, 0.0]])
    return SdpProblem.from_dense([F0], [[F1]], objective=[0.0])


def random_lmi(seed, n=6, k=5):
    rng = np.random.default_rng(seed)
    F = [(lambda M: M + M.T)(rng.normal(size=(k, k))) for _ in range(n)]
    F0 = 5.0 * np.eye(k)
    c = rng.normal(size=n)
    prob = SdpProblem([k, 2 * n], n)
    prob.set_offset(0, F0)
    prob.set_offset(1, np.eye(2 * n))
    for i in range(n):
        prob.add(i, 0, F[i])
        box = np.zeros((2 * n, 2 * n))
        box[i, i], box[n + i, n + i] = 1.0, -1.0
        prob.add(i, 1, box)
    prob.objective = c
    return prob, F0, F, c


class TestExamples:
    def test_scalar_lmi(self):
        sol = solve(SdpProblem.from_dense([[[0.0]]], [[[[1.0]]]], objective=[1.0]))
        assert sol.status == sdp.OPTIMAL
        assert abs(sol.y[0]) < 1e-8

    def test_correlation_boundary(self):
        off = np.array([[0.0, 1.0], [1.0, 0.0]])
        sol = solve(SdpProblem.from_dense([np.eye(2)], [[off]], objective=[-1.0]))
        assert sol.status == sdp.OPTIMAL
        assert sol.y[0] == pytest.approx(1.0, abs=1e-8)

    def test_sos_gram_feasible(self):
        prob = gram_problem()
        sol = solve(prob)
        assert sol.status == sdp.OPTIMAL
        G = prob.lmi_value(sol.y)[0]
        assert min_eig(G) >= -1e-8
        # m(x)^T G m(x) reconstructs 2, 0, -1, 0, 5 on x^4, x^3y, x^2y^2, xy^3, y^4
        coeffs = [G[0, 0], 2 * G[0, 1], 2 * G[0, 2] + G[1, 1], 2 * G[1, 2], G[2, 2]]
        assert np.allclose(coeffs, [2.0, 0.0, -1.0, 0.0, 5.0], atol=1e-8)

    def test_infeasible_detected(self):
        # y >= 1 and y <= -1
        sol = solve(SdpProblem.from_dense([np.diag([-1.0, -1.0])], [[np.diag([1.0, -1.0])]]))
        assert sol.status == sdp.INFEASIBLE

    def test_unbounded_detected(self):
        sol = solve(SdpProblem.from_dense([[[0.0]]], [[[[1.0]]]], objective=[-1.0]))
        assert sol.status == sdp.UNBOUNDED

    def test_equality_constraints(self):
        off = np.array([[0.0, 1.0], [1.0, 0.0]])
        prob = SdpProblem.from_dense([np.eye(2)], [[off], [np.eye(2)]], objective=[-1.0, 0.0],
                                     eq_matrix=[[0.0, 1.0]], eq_rhs=[1.0])
        sol = solve(prob)
        assert sol.status == sdp.OPTIMAL
        assert sol.y == pytest.approx([2.0, 1.0], abs=1e-7)


class TestMinEig:
    def test_identity(self):
        assert min_eig(np.eye(3)) == pytest.approx(1.0)

    def test_indefinite_diagonal(self):
        assert min_eig(np.diag([2.0, -1.0])) == pytest.approx(-1.0)

    def test_two_by_two(self):
        assert min_eig([[2.0, 1.0], [1.0, 2.0]]) == pytest.approx(1.0)

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            min_eig([[1.0, 2.0], [0.0, 1.0]])


class TestValidation:
    def test_asymmetric_coefficient_rejected(self):
        prob = SdpProblem([2], 1)
        with pytest.raises(ValueError):
            prob.add(0, 0, [[0.0, 1.0], [0.0, 0.0]])
            prob.validate()

    def test_nonpositive_block_rejected(self):
        with pytest.raises(ValueError):
            SdpProblem([0], 1)


class TestProperties:
    def test_deterministic(self):
        prob = random_lmi(3)[0]
        a, b = solve(prob), solve(prob)
        assert np.array_equal(a.y, b.y)

    @settings(max_examples=8, deadline=None)
    @given(st.integers(0, 10 ** 6))
    def test_claimed_margin_and_weak_duality(self, seed):
        prob = random_lmi(seed)[0]
        sol = solve(prob)
        assert sol.status == sdp.OPTIMAL
        recomputed = [min_eig(M) for M in prob.lmi_value(sol.y)]
        assert np.allclose(recomputed, sol.min_eig, atol=1e-10)
        assert min(recomputed) >= -1e-8
        assert sol.dual_objective <= sol.primal_objective + 1e-7

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_independent_solver(self, seed):
        cp = pytest.importorskip("cvxpy")
        prob, F0, F, c = random_lmi(seed)
        sol = solve(prob)
        y = cp.Variable(len(c))
        cons = [F0 + sum(y[i] * F[i] for i in range(len(c))) >> 0, cp.abs(y) <= 1]
        ref = cp.Problem(cp.Minimize(c @ y), cons)
        ref.solve(solver=cp.CLARABEL)
        assert sol.primal_objective == pytest.approx(ref.value, abs=1e-6)


class TestSerialization:
    def test_dump_load_round_trip(self, tmp_path):
        prob = random_lmi(5)[0]
        sdp.dump_problem(prob, tmp_path / "p.json")
        back = sdp.load_problem(tmp_path / "p.json")
        assert np.array_equal(solve(prob).y, solve(back).y)
