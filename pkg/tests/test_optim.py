import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermobench.errors import ConfigurationError, EvaluationError, InfeasibleError, UnboundedError
from thermobench.optim import NlsProblem, Qp, solve_nls, solve_qp


def enumerate_box_qp(H, g, lo, hi):
    """Exhaustive oracle: every variable at its lower bound, upper bound, or free."""
    n = g.size
    best = np.inf
    for pattern in itertools.product((0, 1, 2), repeat=n):
        fixed = np.array([s != 2 for s in pattern])
        x = np.where(np.array(pattern) == 0, lo, hi).astype(float)
        free = ~fixed
        if free.any():
            Hff = H[np.ix_(free, free)]
            rhs = -(g[free] + H[np.ix_(free, fixed)] @ x[fixed])
            sol, *_ = np.linalg.lstsq(Hff, rhs, rcond=None)
            if not np.allclose(Hff @ sol, rhs, atol=1e-9):
                continue
            x[free] = sol
        if np.all(x >= lo - 1e-12) and np.all(x <= hi + 1e-12):
            best = min(best, 0.5 * x @ H @ x + g @ x)
    return best


def random_box_qp(rng, n):
    M = rng.normal(size=(n, n))
    rank = rng.integers(1, n + 1)
    H = M[:, :rank] @ M[:, :rank].T + (1e-3 * np.eye(n) if rank < n and rng.random() < 0.5 else 0)
    g = rng.normal(size=n) * 3
    lo = -rng.random(n) * 2
    hi = rng.random(n) * 2
    return H, g, lo, hi


class TestQp:
    def test_interior(self):
        res = solve_qp(Qp(H=[[2.0]], g=[-6.0], lo=[0.0], hi=[10.0]))
        assert res.x[0] == pytest.approx(3.0, abs=1e-12)
        assert res.active_set == ()

    def test_active_upper(self):
        res = solve_qp(Qp(H=[[2.0]], g=[-6.0], lo=[0.0], hi=[2.0]))
        assert res.x[0] == pytest.approx(2.0, abs=1e-12)
        assert res.active_set == (("upper", 0),)
        assert res.multipliers[("upper", 0)] == pytest.approx(2.0)

    def test_matches_enumeration(self):
        rng = np.random.default_rng(2024)
        for _ in range(20):
            n = int(rng.integers(1, 6))
            H, g, lo, hi = random_box_qp(rng, n)
            res = solve_qp(Qp(H=H, g=g, lo=lo, hi=hi))
            assert res.objective == pytest.approx(enumerate_box_qp(H, g, lo, hi), abs=1e-8)

    def test_general_constraints_kkt(self):
        rng = np.random.default_rng(7)
        n = 6
        M = rng.normal(size=(n, n))
        H = M @ M.T
        g = rng.normal(size=n)
        A = rng.normal(size=(4, n))
        b = rng.random(4)
        Aeq = rng.normal(size=(1, n))
        res = solve_qp(Qp(H=H, g=g, A_ineq=A, b_ineq=b, A_eq=Aeq, b_eq=[0.3], lo=-np.ones(n), hi=np.ones(n)))
        for value in res.kkt.values():
            assert value <= 1e-8
        # no sampled feasible point does better
        pts = rng.uniform(-1, 1, size=(20000, n))
        pts -= np.outer((pts @ Aeq[0] - 0.3) / (Aeq[0] @ Aeq[0]), Aeq[0])
        ok = np.all(pts @ A.T <= b, axis=1) & np.all(np.abs(pts) <= 1, axis=1)
        vals = 0.5 * np.einsum("ij,jk,ik->i", pts[ok], H, pts[ok]) + pts[ok] @ g
        assert ok.sum() > 0
        assert res.objective <= vals.min() + 1e-9

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_random_sampler_never_beats_solution(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 5))
        H, g, lo, hi = random_box_qp(rng, n)
        A = rng.normal(size=(2, n))
        b = A @ ((lo + hi) / 2) + rng.random(2)
        p = Qp(H=H, g=g, A_ineq=A, b_ineq=b, lo=lo, hi=hi)
        res = solve_qp(p)
        pts = rng.uniform(lo, hi, size=(1000, n))
        pts = pts[np.all(pts @ A.T <= b, axis=1)]
        if len(pts):
            vals = 0.5 * np.einsum("ij,jk,ik->i", pts, H, pts) + pts @ g
            assert res.objective <= vals.min() + 1e-9
        assert max(res.kkt.values()) <= 1e-8 * max(1.0, np.abs(H).max(), np.abs(g).max())

    def test_infeasible_certificate(self):
        p = Qp(H=np.eye(2), g=np.zeros(2), A_ineq=[[1.0, 1.0], [-1.0, -1.0]], b_ineq=[-1.0, -1.0])
        with pytest.raises(InfeasibleError) as info:
            solve_qp(p)
        assert info.value.certificate == pytest.approx(2.0)

    def test_unbounded(self):
        with pytest.raises(UnboundedError):
            solve_qp(Qp(H=np.diag([1.0, 0.0]), g=[0.0, -1.0], lo=[-1.0, 0.0]))

    def test_singular_but_bounded(self):
        res = solve_qp(Qp(H=np.diag([1.0, 0.0]), g=[0.0, -1.0], lo=[-1.0, 0.0], hi=[1.0, 4.0]))
        np.testing.assert_allclose(res.x, [0.0, 4.0], atol=1e-12)

    def test_deterministic_and_warm_start(self):
        rng = np.random.default_rng(3)
        H, g, lo, hi = random_box_qp(rng, 5)
        p = Qp(H=H, g=g, lo=lo, hi=hi)
        a, b = solve_qp(p), solve_qp(p)
        np.testing.assert_array_equal(a.x, b.x)
        warm = solve_qp(p, x0=a.x, working_set=a.active_set)
        assert warm.iterations <= 2
        assert warm.objective == pytest.approx(a.objective, abs=1e-12)

    def test_rejects_indefinite(self):
        with pytest.raises(ConfigurationError):
            solve_qp(Qp(H=np.diag([1.0, -1.0]), g=np.zeros(2)))


class TestNls:
    def test_shift(self):
        res = solve_nls(NlsProblem(lambda th: th - 5.0, 1, starts=[[1.0]]), budget=500)
        assert res.theta[0] == pytest.approx(5.0, abs=1e-6)
        assert res.sse < 1e-12

    def test_rosenbrock(self):
        def r(th):
            return np.array([10 * (th[1] - th[0] ** 2), 1 - th[0]])

        res = solve_nls(NlsProblem(r, 2, starts=[[-1.2, 1.0]]), budget=5000)
        assert res.sse < 1e-6
        np.testing.assert_allclose(res.theta, [1.0, 1.0], atol=1e-3)
        assert res.evaluations <= 5000

    def test_positive_component(self):
        res = solve_nls(NlsProblem(lambda th: th - 0.3, 1, starts=[[1.0]], positive=[True]), budget=500)
        assert res.theta[0] > 0
        assert abs(res.theta[0] - 0.3) < 1e-3

    def test_positive_floor_reached(self):
        res = solve_nls(NlsProblem(lambda th: th, 1, starts=[[1.0]], positive=[True], floor=1e-6),
                        budget=2000)
        assert 1e-6 <= res.theta[0] < 2e-6

    def test_trace_monotone_and_permutation_invariant(self):
        def r(th):
            return np.array([th[0] ** 2 - 2, th[1] - th[0], 0.1 * th[1] ** 3])

        starts = [[1.0, 1.0], [-1.0, 0.5], [2.0, -1.0]]
        a = solve_nls(NlsProblem(r, 2, starts=starts), budget=3000)
        b = solve_nls(NlsProblem(r, 2, starts=starts[::-1]), budget=3000)
        assert np.all(np.diff(a.trace) <= 0)
        np.testing.assert_array_equal(a.theta, b.theta)
        assert a.sse == b.sse

    def test_all_starts_nonfinite(self):
        with pytest.raises(EvaluationError):
            solve_nls(NlsProblem(lambda th: np.array([np.nan]), 1, starts=[[1.0], [2.0]]), budget=100)

    def test_budget_floor(self):
        with pytest.raises(ConfigurationError):
            solve_nls(NlsProblem(lambda th: th, 2, starts=[[1.0, 1.0]]), budget=99)
